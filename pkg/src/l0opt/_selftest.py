"""Seeded invariant checks run by ``l0opt selftest``.

Each check builds small random instances and compares library output with
an oracle written directly in numpy.
"""

from __future__ import annotations

import numpy as np

from .convex_sets import (RandomInterval, StableConvexSet, certify_order_bounded,
                          extract_forward_combinations, james_certify, sample_family)
from .functions import CondNormPower, Indicator, Quadratic, prox_residuals
from .optimize import hansen_richard, minimize
from .prob_core import ProbSpace, RandomVariable, SigmaAlgebra, as_sup_distance
from .rn_module import DualFunctional, ModuleElement, cond_expectation, cond_norm, fin_gen_decompose
from .vi import LinearOperator, solve_vi


def random_algebra(rng, n_max=8, atoms_max=4):
    n = int(rng.integers(2, n_max + 1))
    p = rng.uniform(0.2, 1.0, n)
    space = ProbSpace(p / p.sum())
    n_atoms = int(rng.integers(1, min(atoms_max, n) + 1))
    labels = np.concatenate([np.arange(n_atoms), rng.integers(0, n_atoms, n - n_atoms)])
    rng.shuffle(labels)
    return SigmaAlgebra(space, [np.flatnonzero(labels == a).tolist() for a in range(n_atoms)])


def _norm_axioms(rng, tol):
    worst = 0.0
    for _ in range(50):
        alg = random_algebra(rng)
        n, d = alg.space.n, int(rng.integers(1, 4))
        x = ModuleElement(alg, rng.standard_normal((n, d)))
        y = ModuleElement(alg, rng.standard_normal((n, d)))
        xi = RandomVariable(alg, rng.standard_normal(alg.n_atoms))
        for p in (1.0, 2.0, np.inf):
            nx, ny = cond_norm(x, p).values, cond_norm(y, p).values
            worst = max(worst, np.max(np.abs(cond_norm(x.scale(xi), p).values
                                              - np.abs(xi.values) * nx)),
                        np.max(cond_norm(x + y, p).values - nx - ny))
    return worst <= 1e-12


def _tower(rng, tol):
    for _ in range(50):
        alg = random_algebra(rng)
        x = ModuleElement(alg, rng.standard_normal((alg.space.n, 1)))
        ce = cond_expectation(x)
        total = float(np.sum(alg.atom_probs * ce[:, 0]))
        if abs(total - float(alg.space.p @ x.data[:, 0])) > 1e-12:
            return False
    return True


def _prox(rng, tol):
    for _ in range(20):
        alg = random_algebra(rng)
        n = alg.space.n
        x = ModuleElement(alg, 3 * rng.standard_normal((n, 1)))
        phi = CondNormPower(alg, 1, p=1.0, lam=float(rng.uniform(0.1, 2)))
        u = phi.prox(x)
        G = StableConvexSet.whole(alg, 1)
        fam = sample_family(G, n_random=20, seed=int(rng.integers(1 << 31)), anchor=u, step=0.1)
        r1, r2 = prox_residuals(phi, x, u, fam)
        if np.any(r1.values < -tol) or np.any(r2.values < -tol):
            return False
    return True


def _attainment(rng, tol):
    alg = SigmaAlgebra.full(ProbSpace.uniform(3))
    for _ in range(10):
        c = ModuleElement(alg, rng.uniform(-2, 2, (3, 1)))
        G = StableConvexSet.box(alg, 1, -1.0, 1.0)
        res = minimize(Quadratic.half_distance(c), G, certify=False)
        if as_sup_distance(res.minimizer, ModuleElement(alg, np.clip(c.data, -1, 1))) > 1e-8:
            return False
    return True


def _hansen_richard(rng, tol):
    alg = SigmaAlgebra.trivial(ProbSpace.uniform(3))
    q = np.full(3, 1 / 3)
    for _ in range(10):
        r = rng.uniform(0.5, 1.5, 3)
        w = float(rng.uniform(0.5, 1.5))
        res = hansen_richard(ModuleElement(alg, r[:, None]), RandomVariable(alg, [w]))
        C = np.vstack([q * r, q])
        K = np.block([[2 * np.diag(q), C.T], [C, np.zeros((2, 2))]])
        sol = np.linalg.solve(K, np.concatenate([np.zeros(3), [1.0, w]]))
        if np.max(np.abs(sol[:3] - res.minimizer.data[:, 0])) > 1e-8:
            return False
    return True


def _vi(rng, tol):
    for _ in range(5):
        alg = random_algebra(rng, n_max=5)
        n = alg.space.n
        mats = []
        for atom in alg.atoms:
            B = rng.standard_normal((len(atom),) * 2)
            mats.append(B @ B.T + np.eye(len(atom)))
        M = LinearOperator(alg, 1, mats)
        f = DualFunctional(alg, rng.standard_normal((n, 1)))
        sol = solve_vi(M, f, Indicator(StableConvexSet.box(alg, 1, -0.5, 0.5)), n_random=20)
        if not sol.certified(tol) or sol.gauge > 1e-8:
            return False
    return True


def _compactness(rng, tol):
    for _ in range(20):
        alg = random_algebra(rng)
        a = rng.uniform(-2, 0, alg.n_atoms)
        b = rng.uniform(0, 2, alg.n_atoms)
        if rng.uniform() < 0.5:
            b[rng.integers(alg.n_atoms)] = np.inf
        iv = RandomInterval(RandomVariable(alg, a), RandomVariable(alg, b))
        expect = bool(np.all(np.isfinite(b)))
        if certify_order_bounded(iv).compact != expect or james_certify(iv).compact != expect:
            return False
    return True


def _decompose(rng, tol):
    for _ in range(20):
        alg = random_algebra(rng)
        d, n_gen = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        gens, mats = [], []
        for _ in range(n_gen):
            vals = rng.integers(-2, 3, (alg.n_atoms, d)).astype(float)
            data = np.zeros((alg.space.n, d))
            for k, atom in enumerate(alg.atoms):
                data[list(atom)] = vals[k]
            gens.append(ModuleElement(alg, data))
            mats.append(vals)
        dec = fin_gen_decompose(gens)
        for k in range(alg.n_atoms):
            if dec.ranks[k] != np.linalg.matrix_rank(np.stack([m[k] for m in mats], axis=1)):
                return False
    return True


def _extract(rng, tol):
    alg = random_algebra(rng)
    n = alg.space.n
    centers = rng.uniform(-0.5, 0.5, (3, n, 1))
    xs = [ModuleElement(alg, centers[j % 3] + 0.4 * 0.7 ** j * rng.uniform(-1, 1, (n, 1)))
          for j in range(300)]
    bound = RandomVariable(alg, np.ones(alg.n_atoms))
    fc = extract_forward_combinations(xs, bound, depth=40)
    return fc.gauge <= 1e-6


CHECKS = [
    ("conditional-norm axioms", _norm_axioms),
    ("tower property", _tower),
    ("prox variational residuals", _prox),
    ("attainment versus clamp oracle", _attainment),
    ("mean-variance versus KKT oracle", _hansen_richard),
    ("variational inequality certificates", _vi),
    ("compactness verdicts", _compactness),
    ("rank decomposition", _decompose),
    ("forward-combination extraction", _extract),
]


def run_selftest(seed: int = 42, tol: float = 1e-7) -> list[dict]:
    out = []
    for i, (name, fn) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        try:
            passed = bool(fn(rng, tol))
            detail = ""
        except Exception as exc:  # a crash is a failed check, reported by name
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        entry = {"name": name, "passed": passed}
        if detail:
            entry["detail"] = detail
        out.append(entry)
    return out
