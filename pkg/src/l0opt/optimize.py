"""Attainment of essential infima over stable sets, and optimality certificates.

A stable objective and a stable set split into independent atom problems.
The essential infimum of ``f`` over ``G`` is therefore attained by gluing the
per-atom minimizers together.  Each atom is solved by an exact KKT solve when
the problem is a quadratic over an affine set.  Otherwise it uses
accelerated proximal gradient or three-operator splitting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _solvers
from .convex_sets import (Affine, AtomSet, Box, Intersection, StableConvexSet,
                          certify_order_bounded, sample_family)
from .errors import ConvergenceError, HypothesisError, InfeasibleError
from .functions import (AtomParts, CondVariance, Quadratic, StableFunction, Sum, gateaux)
from .parallel import atom_map
from .prob_core import RandomVariable, _same_algebra, ext_add, ext_sub
from .rn_module import DualFunctional, ModuleElement, atom_weights

__all__ = ["MinimizationResult", "MintyCertificate", "minimize", "hansen_richard",
           "minimize_quadratic", "minty_certificate", "split_composite"]

SOLVER_TOL = 1e-11
KKT_TOL = 1e-9
UNIQUE_TOL = 1e-7
RESIDUAL_TOL = 1e-7


@dataclass(frozen=True)
class MintyCertificate:
    """Worst values over a test family of the two first-order optimality conditions.

    ``direct`` is ``min_v f1'(u)(v - u) + f2(v) - f2(u)`` and ``minty`` the same
    with the derivative taken at ``v``.  Both are random variables on the
    base algebra.
    """

    is_min: bool
    direct: RandomVariable
    minty: RandomVariable
    family_size: int
    tol: float
    verified: bool = True

    @property
    def agree(self) -> bool:
        a = bool(np.all(self.direct.values >= -self.tol))
        b = bool(np.all(self.minty.values >= -self.tol))
        return a == b

    def to_json(self):
        return {"is_min": self.is_min, "direct": self.direct.to_json(),
                "minty": self.minty.to_json(), "family_size": self.family_size,
                "tol": self.tol, "verified_hypotheses": self.verified}


@dataclass(frozen=True)
class MinimizationResult:
    minimizer: ModuleElement
    value: RandomVariable
    certificate: MintyCertificate | None
    iterations: tuple
    degenerate_atoms: tuple = ()
    method: str = ""

    def to_json(self):
        out = {"minimizer": self.minimizer.to_json(), "value": self.value.to_json(),
               "iterations": list(self.iterations), "method": self.method}
        if self.certificate is not None:
            out["certificate"] = self.certificate.to_json()
        if self.degenerate_atoms:
            out["degenerate_atoms"] = list(self.degenerate_atoms)
        return out


# ----------------------------------------------------------- per-atom solve


def _is_whole(desc: AtomSet) -> bool:
    return isinstance(desc, Box) and np.all(desc.lo == -np.inf) and np.all(desc.hi == np.inf)


def _flat_sets(sets):
    out = []
    for s in sets:
        if isinstance(s, Intersection):
            out.extend(_flat_sets(s.parts))
        elif not _is_whole(s):
            out.append(s)
    return out


def _kkt_quadratic(parts: AtomParts, affines: Sequence[Affine]):
    """Minimize ``u.H.u - 2 c.u`` subject to the affine rows, by one linear solve."""
    m = parts.c.size
    if affines:
        A = np.vstack([a.A for a in affines])
        b = np.concatenate([a.b for a in affines])
    else:
        A, b = np.zeros((0, m)), np.zeros(0)
    K = np.block([[2.0 * parts.H, A.T], [A, np.zeros((A.shape[0],) * 2)]])
    rhs = np.concatenate([2.0 * parts.c, b])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    scale = 1.0 + np.max(np.abs(rhs), initial=0.0)
    if np.max(np.abs(K @ sol - rhs), initial=0.0) > KKT_TOL * scale:
        raise HypothesisError("quadratic objective is unbounded below on the feasible set")
    return sol[:m]


def _solve_atom(parts: AtomParts, x0: np.ndarray):
    """Returns ``(u, iterations, method)``."""
    sets = _flat_sets(parts.sets)
    w = parts.w
    if parts.opaque:
        raise NotImplementedError("callback objectives are not supported by minimize")
    if not (parts.smooth or parts.proxes) and all(isinstance(s, Affine) for s in sets):
        return _kkt_quadratic(parts, sets), 1, "kkt"
    if len(parts.proxes) > 1:
        raise NotImplementedError("objective with several nonsmooth terms")
    C = None if not sets else (sets[0] if len(sets) == 1 else Intersection(sets))
    L = parts.smooth_lipschitz()
    L = L if L > 0 else 1.0
    grad = parts.smooth_grad
    if C is not None:
        x0 = C.project(x0, w)
    if C is not None and parts.proxes:
        u, it, _ = _solvers.davis_yin(grad, L, parts.proxes[0], lambda v: C.project(v, w),
                                      x0, w, tol=SOLVER_TOL)
        return u, it, "three-operator"
    if C is not None:
        prox = lambda v, step: C.project(v, w)
    elif parts.proxes:
        prox = parts.proxes[0]
    else:
        prox = lambda v, step: v
    u, it, _ = _solvers.fista(grad, L, prox, x0, w, tol=SOLVER_TOL)
    return u, it, "proximal-gradient"


def _all_kkt(f: StableFunction, G: StableConvexSet) -> bool:
    """Quadratic objective over affine constraints on every atom.

    Attainment is then decided exactly by the KKT system, which reports an
    objective unbounded below, so neither compactness nor coercivity is needed.
    """
    for k in range(f.algebra.n_atoms):
        parts = f.atom_parts(k)
        sets = _flat_sets(parts.sets + [G.descriptors[k]])
        if parts.opaque or parts.improper or parts.smooth or parts.proxes:
            return False
        if not all(isinstance(s, Affine) for s in sets):
            return False
    return True


def minimize(f: StableFunction, G: StableConvexSet | None = None, *, seed: int = 0,
             n_random: int = 100, certify: bool = True, tol: float = RESIDUAL_TOL
             ) -> MinimizationResult:
    """Minimizer ``y0`` in ``G`` with ``f(y0)`` equal to the essential infimum of ``f(G)``.

    Requires ``G`` bounded in order (hence L0-convexly compact) or ``f``
    coercive, unless every atom is a quadratic over affine constraints, where
    the KKT system settles attainment exactly.  When ``f`` is strictly convex, a second start must reproduce
    the minimizer, which is unique in that case.

    Raises
    ------
    HypothesisError
        Neither compactness nor coercivity is available.
    InfeasibleError
        ``f`` is identically ``+inf`` on ``G`` on some atom.
    DivergenceError
        Iterates explode, typically under a false coercivity flag.
    """
    alg, d = f.algebra, f.d
    if G is None:
        G = StableConvexSet.whole(alg, d)
    _same_algebra(f, G)
    if G.d != d:
        raise ValueError("dimension mismatch between objective and set")
    if not (certify_order_bounded(G).compact or f.coercive or _all_kkt(f, G)):
        raise HypothesisError("minimize needs a set bounded in order or a coercive objective")
    rng_seeds = np.random.SeedSequence(seed).spawn(alg.n_atoms)

    def solve(k):
        parts = f.atom_parts(k)
        if parts.improper:
            raise InfeasibleError(f"objective is identically +inf on atom {k}", atom=k)
        parts.sets.append(G.descriptors[k])
        w = parts.w
        sets = _flat_sets(parts.sets)
        x0 = G.feasible_point().block(k)
        if sets:
            C = sets[0] if len(sets) == 1 else Intersection(sets)
            x0 = C.feasible_point(w)
        u, it, method = _solve_atom(parts, x0)
        if f.strictly_convex and method != "kkt":
            rng = np.random.default_rng(rng_seeds[k])
            u2, _, _ = _solve_atom(parts, x0 + rng.standard_normal(x0.size))
            gap = float(np.max(np.abs(u - u2), initial=0.0))
            if gap > UNIQUE_TOL:
                raise ConvergenceError(
                    f"atom {k}: two starts disagree by {gap:.3g} under strict convexity",
                    gauge=gap)
        return u, it, method

    out = atom_map(solve, range(alg.n_atoms))
    y0 = ModuleElement.from_blocks(alg, d, [o[0] for o in out])
    value = f.evaluate(y0)
    cert = None
    if certify:
        f1, f2 = split_composite(f)
        cert = minty_certificate(f1, G, y0, f2, seed=seed, n_random=n_random, tol=tol)
    methods = sorted({o[2] for o in out})
    return MinimizationResult(y0, value, cert, tuple(int(o[1]) for o in out),
                              method="+".join(methods))


# ---------------------------------------------------------- certificates


def _flatten(f: StableFunction, weight: np.ndarray):
    if isinstance(f, Sum):
        for w, t in zip(f.weights_, f.terms):
            yield from _flatten(t, weight * w.values)
    else:
        yield weight, f


def split_composite(f: StableFunction):
    """Split ``f`` into a differentiable part and the rest; either may be ``None``."""
    smooth, rest = [], []
    for w, t in _flatten(f, np.ones(f.algebra.n_atoms)):
        (smooth if t.differentiable else rest).append((w, t))

    def build(items):
        if not items:
            return None
        return Sum([t for _, t in items], [RandomVariable(f.algebra, w) for w, _ in items])
    return build(smooth), build(rest)


def _effective_set(G: StableConvexSet, *fs) -> StableConvexSet:
    for f in fs:
        if f is not None and f.domain() is not None:
            G = G.intersect(f.domain())
    return G


def minty_certificate(f1: StableFunction | None, G: StableConvexSet, u: ModuleElement,
                      f2: StableFunction | None = None,
                      family: Sequence[ModuleElement] | None = None, *,
                      seed: int = 0, n_random: int = 100, tol: float = RESIDUAL_TOL
                      ) -> MintyCertificate:
    """Check both first-order characterizations of a minimizer of ``f1 + f2`` over ``G``.

    ``f1`` must be differentiable; ``f2`` is any proper convex catalog member.
    The default test family has support points and feasible samples of
    ``G`` (intersected with the domains).  It also has projected coordinate
    moves around ``u`` and projected gradient steps from ``u``.
    """
    ref = f1 if f1 is not None else f2
    if ref is None:
        raise ValueError("need at least one of f1, f2")
    if f1 is not None and not f1.differentiable:
        raise TypeError("f1 must be differentiable")
    Geff = _effective_set(G, f1, f2)
    if family is None:
        scale = max(1.0, float(np.max(np.abs(u.data), initial=0.0)))
        family = sample_family(Geff, n_random=n_random, seed=seed, anchor=u,
                               step=1e-3 * scale)
        family += sample_family(Geff, n_random=0, seed=seed, anchor=u, step=scale)
        if f1 is not None:
            g = f1.gradient(u)
            for s in (1e-4, 1e-2, 1.0):
                family.append(Geff.project(u - s * g))
    n = ref.algebra.n_atoms
    direct = np.full(n, np.inf)
    minty = direct.copy()
    f2u = f2.evaluate(u).values if f2 is not None else np.zeros(n)
    for v in family:
        gap = ext_sub(f2.evaluate(v).values, f2u) if f2 is not None else np.zeros(n)
        dv = v - u
        if f1 is not None:
            a = ext_add(gateaux(f1, u, dv).values, gap)
            b = ext_add(gateaux(f1, v, dv).values, gap)
        else:
            a = b = gap
        direct, minty = np.minimum(direct, a), np.minimum(minty, b)
    verified = all(t is None or t.verified for t in (f1, f2))
    ok = bool(np.all(direct >= -tol) and np.all(minty >= -tol))
    return MintyCertificate(ok, RandomVariable(ref.algebra, direct),
                            RandomVariable(ref.algebra, minty), len(family), tol, verified)


# ------------------------------------------------------- special problems


def hansen_richard(r: ModuleElement, w: RandomVariable,
                   M: StableConvexSet | None = None) -> MinimizationResult:
    """Minimum conditional variance subject to ``E[r x | F] = 1`` and ``E[x | F] = w``.

    ``M`` optionally adds affine constraints atom by atom.  On each atom the
    problem is an equality-constrained least-norm problem in the
    probability-weighted metric; it is solved through the weighted
    pseudo-inverse.  Atoms whose constraint rows are linearly dependent but
    consistent (for instance ``r`` constant) are reported in
    ``degenerate_atoms``.

    Raises
    ------
    InfeasibleError
        The constraints are inconsistent on some atom.
    """
    alg = r.algebra
    _same_algebra(r, w)
    if r.d != 1:
        raise ValueError("hansen_richard works with scalar payoffs (d = 1)")
    if M is not None:
        _same_algebra(r, M)
    blocks, degenerate = [], []
    for k in range(alg.n_atoms):
        q = alg.cond_weights(k)
        rows = [q * r.block(k), q]
        rhs = [1.0, float(w.values[k])]
        if M is not None:
            for desc in _flat_sets([M.descriptors[k]]):
                if not isinstance(desc, Affine):
                    raise TypeError("M must be an affine subspace on every atom")
                rows.extend(desc.A)
                rhs.extend(desc.b)
        C, h = np.vstack(rows), np.array(rhs)
        s = 1.0 / np.sqrt(q)
        Cs = C * s[None, :]
        sv = np.linalg.svd(Cs, compute_uv=False)
        rank = int(np.sum(sv > 1e-10 * sv[0]))
        y = np.linalg.pinv(Cs, rcond=1e-10) @ h
        x = s * y
        if np.max(np.abs(C @ x - h)) > KKT_TOL * (1.0 + np.max(np.abs(h))):
            raise InfeasibleError(f"pricing and mean constraints are inconsistent on atom {k}",
                                  atom=k)
        if rank < C.shape[0]:
            degenerate.append(k)
        blocks.append(x)
    x = ModuleElement.from_blocks(alg, 1, blocks)
    value = CondVariance(alg, 1).evaluate(x)
    return MinimizationResult(x, value, None, tuple([1] * alg.n_atoms),
                              tuple(degenerate), "weighted-pseudo-inverse")


def minimize_quadratic(forms: Sequence[np.ndarray], l: DualFunctional | None,
                       G: StableConvexSet, alpha, *, seed: int = 0,
                       n_checks: int = 50, certify: bool = True) -> MinimizationResult:
    """Unique minimizer of ``a(x, x) - 2 l(x)`` over ``G`` for a coercive form.

    ``alpha`` (scalar or one value per atom) is the claimed constant in
    ``a(x, x) >= alpha ||x||^2``; it is spot-checked on seeded random
    directions before solving.
    """
    alg, d = G.algebra, G.d
    f = Quadratic(alg, d, forms, l)
    alpha = np.broadcast_to(np.asarray(
        alpha.values if isinstance(alpha, RandomVariable) else alpha, dtype=float),
        (alg.n_atoms,))
    if np.any(alpha <= 0):
        raise HypothesisError("coercivity constant must be strictly positive")
    rng = np.random.default_rng(seed)
    for k, H in enumerate(f.forms):
        wk = atom_weights(alg, k, d)
        for _ in range(n_checks):
            v = rng.standard_normal(wk.size)
            if v @ H @ v < alpha[k] * np.sum(wk * v * v) * (1 - 1e-9):
                raise HypothesisError(f"atom {k}: form fails the coercivity spot check")
    return minimize(f, G, seed=seed, certify=certify)
