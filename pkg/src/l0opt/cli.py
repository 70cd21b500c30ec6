"""Command-line front end: ``python -m l0opt <command> [problem.json] [flags]``.

Commands
--------
solve       minimize, hansen_richard, vi and project problems
certify     certify_compact and james problems
decompose   decompose problems
extract     bw_extract problems
selftest    seeded invariant checks, no input file

Exit codes: 0 success (certificates pass), 2 a valid negative verdict
(infeasible constraints or a set that is not compact), 1 any error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .convex_sets import (RandomInterval, StableConvexSet, certify_order_bounded,
                          default_duals, extract_forward_combinations, james_certify,
                          project)
from .errors import InfeasibleError, L0OptError
from .functions import function_from_json
from .optimize import hansen_richard, minimize
from .parallel import resolve_threads, threads
from .prob_core import ProbSpace, RandomVariable, SigmaAlgebra, decode_reals
from .rn_module import DualFunctional, ModuleElement, cond_norm, fin_gen_decompose
from .vi import operator_from_json, solve_vi, solve_vi_over_set

VERSION = "l0opt/1"
COMMANDS = {
    "solve": ("minimize", "hansen_richard", "vi", "project"),
    "certify": ("certify_compact", "james"),
    "decompose": ("decompose",),
    "extract": ("bw_extract",),
}
EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2


class CLIError(Exception):
    pass


def load_schema(name: str = "problem") -> dict:
    text = resources.files("l0opt").joinpath(f"schema/{name}.schema.json").read_text()
    return json.loads(text)


def validate(obj: dict, name: str = "problem") -> None:
    """Raise :class:`CLIError` naming the offending field on a schema violation."""
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise CLIError(f"schema violation at {pointer}: {err.message}")


# --------------------------------------------------------------- output


def _fmt_float(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    return "%.17g" % v


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON with 17 significant digits and ``"inf"`` sentinels."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(x, (list, tuple, dict, np.ndarray)) for x in obj):
            return "[" + ", ".join(dumps(x, indent) for x in obj) + "]"
        body = (",\n").join(inner + dumps(x, indent, _level + 1) for x in obj)
        return "[\n" + body + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        body = (",\n").join(f"{inner}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}"
                            for k, v in obj.items())
        return "{\n" + body + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt_float(float(v)).strip('"') if isinstance(v, (float, np.floating))
                         else v for v in row])
    return buf.getvalue()


# ------------------------------------------------------------ dispatch


def _context(obj):
    space = ProbSpace.from_json(obj["space"])
    alg = SigmaAlgebra.from_json(space, obj["algebra"])
    return space, alg


def _element(alg, data):
    return ModuleElement(alg, np.asarray(data, dtype=float))


def _atom_rows(alg, *columns):
    rows = []
    for k, atom in enumerate(alg.atoms):
        rows.append([k, " ".join(str(i) for i in atom), alg.atom_probs[k]]
                    + [c[k] for c in columns])
    return rows


def _set_or_interval(alg, payload):
    if "set" in payload:
        return StableConvexSet.from_json(alg, payload["set"])
    iv = payload["interval"]
    return RandomInterval(RandomVariable(alg, decode_reals(iv["a"])),
                          RandomVariable(alg, decode_reals(iv["b"])))


def run_problem(command: str, obj: dict, tol: float, seed: int):
    """Returns ``(status, result dict, csv header, csv rows)``."""
    payload_key = next(k for k in COMMANDS[command] if k in obj) if any(
        k in obj for k in COMMANDS[command]) else None
    if payload_key is None:
        present = next(k for k in obj if k not in ("version", "space", "algebra"))
        raise CLIError(f"command {command!r} cannot run a {present!r} problem")
    _, alg = _context(obj)
    p = obj[payload_key]
    if payload_key == "minimize":
        f = function_from_json(alg, p["objective"])
        G = StableConvexSet.from_json(alg, p["set"]) if "set" in p else None
        res = minimize(f, G, seed=seed, tol=tol)
        ok = res.certificate.is_min
        return ("ok" if ok else "failed", res.to_json(),
                ["atom", "scenarios", "probability", "value", "direct", "minty", "iterations"],
                _atom_rows(alg, res.value.values, res.certificate.direct.values,
                           res.certificate.minty.values, res.iterations))
    if payload_key == "hansen_richard":
        r = _element(alg, p["r"])
        w = RandomVariable(alg, decode_reals(p["w"]))
        M = StableConvexSet.from_json(alg, p["M"]) if "M" in p else None
        res = hansen_richard(r, w, M)
        degen = [k in res.degenerate_atoms for k in range(alg.n_atoms)]
        return ("ok", res.to_json(), ["atom", "scenarios", "probability", "variance", "degenerate"],
                _atom_rows(alg, res.value.values, degen))
    if payload_key == "vi":
        M = operator_from_json(alg, p["operator"])
        f = DualFunctional(alg, np.asarray(p["f"], dtype=float))
        v0 = _element(alg, p["v0"]) if "v0" in p else None
        if "set" in p:
            if "phi" in p:
                raise CLIError("vi problem: give either 'phi' or 'set', not both")
            sol = solve_vi_over_set(M, f, StableConvexSet.from_json(alg, p["set"]),
                                    v0=v0, seed=seed)
        else:
            phi = function_from_json(alg, p["phi"]) if "phi" in p else None
            sol = solve_vi(M, f, phi, v0=v0, seed=seed)
        return ("ok" if sol.certified(tol) else "failed", sol.to_json(),
                ["atom", "scenarios", "probability", "direct", "minty", "iterations"],
                _atom_rows(alg, sol.direct_residual.values, sol.minty_residual.values,
                           sol.iterations))
    if payload_key == "project":
        G = StableConvexSet.from_json(alg, p["set"])
        x = _element(alg, p["x"])
        u = project(G, x)
        dist = cond_norm(x - u, 2.0)
        return ("ok", {"projection": u.to_json(), "distance": dist.to_json()},
                ["atom", "scenarios", "probability", "distance"], _atom_rows(alg, dist.values))
    if payload_key == "certify_compact":
        cert = certify_order_bounded(_set_or_interval(alg, p))
        return ("ok" if cert.compact else "not_compact", cert.to_json(),
                ["atom", "scenarios", "probability", "radius"],
                _atom_rows(alg, cert.radius.values))
    if payload_key == "james":
        G = _set_or_interval(alg, p)
        d = 1 if isinstance(G, RandomInterval) else G.d
        duals = default_duals(alg, d, count=p.get("n_duals", 20), seed=seed)
        cert = james_certify(G, duals)
        worst = np.max(np.stack([v.values for v in cert.values]), axis=0)
        return ("ok" if cert.compact else "not_compact", cert.to_json(),
                ["atom", "scenarios", "probability", "max_support"], _atom_rows(alg, worst))
    if payload_key == "decompose":
        dec = fin_gen_decompose([_element(alg, g) for g in p["generators"]])
        out = {"ranks": list(dec.ranks), "parts": [part.sorted() for part in dec.parts],
               "bases": [list(b) for b in dec.bases]}
        return ("ok", out, ["atom", "scenarios", "probability", "rank"],
                _atom_rows(alg, dec.ranks))
    if payload_key == "bw_extract":
        xs = [_element(alg, x) for x in p["sequence"]]
        bound = RandomVariable(alg, decode_reals(p["bound"]))
        fc = extract_forward_combinations(xs, bound, depth=p.get("depth", 40),
                                          tail_fraction=p.get("tail_fraction", 0.5))
        out = {"limit": fc.limit.to_json(), "indices": [list(r) for r in fc.indices],
               "gauge": fc.gauge, "cell_diameters": list(fc.cell_diameters),
               "receipts": [[{"index": l, "atoms": A.sorted()} for l, A in rec.items()]
                            for rec in fc.receipts]}
        status = "ok" if fc.gauge <= max(tol, 1e-6) else "failed"
        last = fc.indices[-1]
        return (status, out, ["atom", "scenarios", "probability", "final_index"],
                _atom_rows(alg, last))
    raise CLIError(f"unsupported problem {payload_key!r}")


def _emit(args, stem, envelope, header, rows, stdout):
    text = dumps(envelope) + "\n"
    validate(json.loads(text), "result")
    table = _csv_text(header, rows) if header else ""
    if args.out is None:
        if args.format in ("json", "both"):
            stdout.write(text)
        if args.format in ("csv", "both") and table:
            stdout.write(table)
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format in ("json", "both"):
        (out / f"{stem}.result.json").write_text(text)
    if args.format in ("csv", "both") and table:
        (out / f"{stem}.atoms.csv").write_text(table)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="l0opt", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=sorted(list(COMMANDS) + ["selftest"]))
    ap.add_argument("input", nargs="?", help="problem file (JSON)")
    ap.add_argument("--tol", type=float, default=1e-7, help="certificate tolerance")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--threads", default=None, help="worker count or 'auto'")
    ap.add_argument("--out", default=None, help="output directory (default: stdout)")
    ap.add_argument("--format", choices=("json", "csv", "both"), default="json")
    return ap


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        if args.seed < 0:
            raise CLIError("--seed must be nonnegative")
        nthreads = resolve_threads(args.threads)
        with threads(nthreads):
            if args.command == "selftest":
                from ._selftest import run_selftest
                checks = run_selftest(seed=args.seed, tol=args.tol)
                ok = all(c["passed"] for c in checks)
                env = {"version": VERSION, "command": "selftest", "problem": "selftest",
                       "status": "ok" if ok else "failed", "seed": args.seed,
                       "tol": args.tol, "result": {"checks": checks}}
                rows = [[c["name"], c["passed"]] for c in checks]
                _emit(args, "selftest", env, ["check", "passed"], rows, stdout)
                return EXIT_OK if ok else EXIT_ERROR
            if args.input is None:
                raise CLIError(f"command {args.command!r} needs an input file")
            path = Path(args.input)
            try:
                obj = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise CLIError(f"cannot read {path}: {exc}") from exc
            validate(obj)
            problem = next(k for k in obj if k not in ("version", "space", "algebra"))
            try:
                status, result, header, rows = run_problem(args.command, obj, args.tol,
                                                           args.seed)
            except InfeasibleError as exc:
                status, header, rows = "infeasible", None, []
                result = {"message": str(exc), "atom": exc.atom}
            env = {"version": VERSION, "command": args.command, "problem": problem,
                   "status": status, "seed": args.seed, "tol": args.tol, "result": result}
            _emit(args, path.stem, env, header, rows, stdout)
            if status == "failed":
                stderr.write("error: certificate check failed\n")
                return EXIT_ERROR
            return EXIT_VERDICT if status in ("infeasible", "not_compact") else EXIT_OK
    except (CLIError, L0OptError, ValueError, TypeError, NotImplementedError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
