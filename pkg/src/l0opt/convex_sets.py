"""Stable L0-convex sets as products of per-atom closed convex descriptors.

A :class:`StableConvexSet` holds one descriptor per atom of the base algebra;
the represented set is ``{x : x|_A in G_A for every atom A}``.  Such products
are automatically L0-convex, stable and closed under countable concatenation.

Descriptors live in the stacked coordinates of their atom (see
:mod:`l0opt.rn_module`).  Distances and projections use the conditional
``L^2`` metric, i.e. the diagonal weights ``w`` of the atom; a ball is a ball
for the conditional norm.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, linprog, minimize as sp_minimize

from .errors import ConvergenceError, InfeasibleError
from .prob_core import (IndicatorSet, RandomVariable, SigmaAlgebra,
                        _same_algebra, as_sup_distance, decode_reals, encode_reals)
from .rn_module import (DualFunctional, ModuleElement, atom_weights,
                        cond_norm, concatenate)

__all__ = [
    "Box", "Ball", "Affine", "Halfspaces", "Intersection",
    "StableConvexSet", "RandomInterval",
    "MembershipReport", "membership", "essential_membership", "project",
    "OrderBoundCertificate", "certify_order_bounded",
    "JamesCertificate", "james_certify", "default_duals",
    "ForwardCombinations", "extract_forward_combinations",
    "sample_family", "descriptor_from_json",
    "DYKSTRA_TOL", "DYKSTRA_MAXITER",
]

DYKSTRA_TOL = 1e-9
DYKSTRA_MAXITER = 10_000
_FEAS_TOL = 1e-9


def _wnorm(v, w):
    return float(np.sqrt(np.sum(w * v * v)))


# ---------------------------------------------------------------- descriptors


class AtomSet:
    """Closed convex subset of ``R^m`` for one atom."""

    kind = "abstract"
    polyhedral = False

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def violation(self, u, w) -> float:
        raise NotImplementedError

    def project(self, x, w) -> np.ndarray:
        raise NotImplementedError

    def support(self, g, w):
        """Maximize ``g . u``; returns ``(value, point, None)`` or ``(inf, None, ray)``."""
        return _support_generic(self, g, w)

    def feasible_point(self, w) -> np.ndarray:
        raise NotImplementedError

    def translate(self, c) -> "AtomSet":
        """The set ``self - c``."""
        raise NotImplementedError

    def linear_form(self):
        """``(lo, hi, Aeq, beq, Ain, bin)`` for polyhedral sets."""
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Box(AtomSet):
    """Coordinate bounds ``lo <= u <= hi`` (infinite bounds allowed)."""

    lo: np.ndarray
    hi: np.ndarray
    kind = "box"
    polyhedral = True

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).ravel()
        hi = np.array(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("box bounds have different lengths")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lo > hi) or np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise InfeasibleError("empty box: some lower bound exceeds its upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    def violation(self, u, w):
        return float(max(np.max(self.lo - u, initial=0.0), np.max(u - self.hi, initial=0.0)))

    def project(self, x, w):
        return np.clip(x, self.lo, self.hi)

    def support(self, g, w):
        g = np.asarray(g, dtype=float)
        up = (g > 0) & (self.hi == np.inf)
        down = (g < 0) & (self.lo == -np.inf)
        if np.any(up | down):
            ray = np.zeros_like(g)
            i = int(np.flatnonzero(up | down)[0])
            ray[i] = 1.0 if up[i] else -1.0
            return np.inf, None, ray
        pt = np.where(g > 0, self.hi, np.where(g < 0, self.lo, self.feasible_point(w)))
        return float(g @ pt), pt, None

    def feasible_point(self, w=None):
        return np.clip(np.zeros_like(self.lo), self.lo, self.hi)

    def translate(self, c):
        return Box(self.lo - c, self.hi - c)

    def linear_form(self):
        m = self.dim
        return self.lo, self.hi, np.zeros((0, m)), np.zeros(0), np.zeros((0, m)), np.zeros(0)

    def to_json(self):
        return {"kind": "box", "lo": encode_reals(self.lo), "hi": encode_reals(self.hi)}


@dataclass(frozen=True, eq=False)
class Ball(AtomSet):
    """``{u : ||u - center||_w <= radius}`` in the conditional norm of the atom."""

    center: np.ndarray
    radius: float
    kind = "ball"

    def __post_init__(self):
        c = np.array(self.center, dtype=float).ravel()
        r = float(self.radius)
        if not np.all(np.isfinite(c)) or not np.isfinite(r) or r < 0:
            raise ValueError("ball needs a finite center and a finite radius >= 0")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @property
    def dim(self):
        return self.center.size

    def violation(self, u, w):
        return max(0.0, _wnorm(u - self.center, w) - self.radius)

    def project(self, x, w):
        diff = x - self.center
        dist = _wnorm(diff, w)
        if dist <= self.radius:
            return np.array(x, dtype=float)
        return self.center + (self.radius / dist) * diff

    def support(self, g, w):
        g = np.asarray(g, dtype=float)
        dual = float(np.sqrt(np.sum(g * g / w)))
        if dual == 0:
            return float(g @ self.center), self.center.copy(), None
        pt = self.center + self.radius * (g / w) / dual
        return float(g @ self.center + self.radius * dual), pt, None

    def feasible_point(self, w=None):
        return self.center.copy()

    def translate(self, c):
        return Ball(self.center - c, self.radius)

    def to_json(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Affine(AtomSet):
    """``{u : A u = b}``; must be consistent."""

    A: np.ndarray
    b: np.ndarray
    kind = "affine"
    polyhedral = True
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        b = np.array(self.b, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise ValueError("affine system has mismatched shapes")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("affine data must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        sol = np.linalg.lstsq(A, b, rcond=None)[0] if A.size else np.zeros(A.shape[1])
        scale = 1.0 + np.max(np.abs(b), initial=0.0)
        if A.size and np.max(np.abs(A @ sol - b)) > 1e-9 * scale:
            raise InfeasibleError("inconsistent affine constraints")
        object.__setattr__(self, "_witness", sol)

    @property
    def dim(self):
        return self.A.shape[1]

    def violation(self, u, w):
        if self.A.shape[0] == 0:
            return 0.0
        return float(np.max(np.abs(self.A @ u - self.b)))

    def _solver(self, w):
        key = w.tobytes()
        if key not in self._cache:
            AW = self.A / w
            self._cache[key] = (AW, np.linalg.pinv(AW @ self.A.T, rcond=1e-12))
        return self._cache[key]

    def project(self, x, w):
        if self.A.shape[0] == 0:
            return np.array(x, dtype=float)
        AW, gram_inv = self._solver(w)
        lam = gram_inv @ (self.A @ x - self.b)
        return x - AW.T @ lam

    def feasible_point(self, w=None):
        return self._witness.copy()

    def translate(self, c):
        return Affine(self.A, self.b - self.A @ c)

    def linear_form(self):
        m = self.dim
        inf = np.full(m, np.inf)
        return -inf, inf, self.A, self.b, np.zeros((0, m)), np.zeros(0)

    def to_json(self):
        return {"kind": "affine", "A": self.A.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True, eq=False)
class Halfspaces(AtomSet):
    """``{u : A u <= b}``; nonemptiness is checked by a feasibility LP."""

    A: np.ndarray
    b: np.ndarray
    kind = "halfspaces"
    polyhedral = True

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        b = np.array(self.b, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise ValueError("halfspace system has mismatched shapes")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("halfspace data must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "_witness", _lp_feasible_point(self))

    @property
    def dim(self):
        return self.A.shape[1]

    def violation(self, u, w):
        if self.A.shape[0] == 0:
            return 0.0
        return float(max(0.0, np.max(self.A @ u - self.b)))

    def project(self, x, w):
        if self.A.shape[0] == 1:
            return _project_halfspace(x, self.A[0], self.b[0], w)
        return _qp_project(self, x, w, self._witness)

    def feasible_point(self, w=None):
        return self._witness.copy()

    def translate(self, c):
        return Halfspaces(self.A, self.b - self.A @ c)

    def linear_form(self):
        m = self.dim
        inf = np.full(m, np.inf)
        return -inf, inf, np.zeros((0, m)), np.zeros(0), self.A, self.b

    def to_json(self):
        return {"kind": "halfspaces", "A": self.A.tolist(), "b": self.b.tolist()}


class Intersection(AtomSet):
    """Finite intersection of descriptors.

    Polyhedral intersections are projected onto exactly by an active-set
    method; one ball cut by polyhedral parts by a search over the ball's
    multiplier.  Anything else falls back to Dykstra's method.
    """

    kind = "intersection"

    def __init__(self, parts: Sequence[AtomSet]):
        parts = tuple(parts)
        if not parts:
            raise ValueError("intersection of nothing")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise ValueError("intersected descriptors have different dimensions")
        self.parts = parts
        self.polyhedral = all(p.polyhedral for p in parts)
        self._witness_cache: dict = {}
        balls = [p for p in parts if p.kind == "ball"]
        rest = [p for p in parts if p.kind != "ball"]
        self._ball, self._poly = None, None
        if len(balls) == 1 and rest and all(p.polyhedral for p in rest):
            self._ball = balls[0]
            self._poly = rest[0] if len(rest) == 1 else Intersection(rest)

    @property
    def dim(self):
        return self.parts[0].dim

    def violation(self, u, w):
        return max(p.violation(u, w) for p in self.parts)

    def project(self, x, w):
        if len(self.parts) == 1:
            return self.parts[0].project(x, w)
        if self.polyhedral:
            return _qp_project(self, x, w, self.feasible_point(w))
        if self._ball is not None:
            return _ball_poly_project(self._ball, self._poly, np.asarray(x, dtype=float), w)
        return _dykstra(self.parts, x, w)

    def support(self, g, w):
        if self._ball is not None:
            return _ball_poly_support(self._ball, self._poly, np.asarray(g, dtype=float), w)
        return _support_generic(self, g, w)

    def feasible_point(self, w):
        key = w.tobytes()
        if key not in self._witness_cache:
            if self.polyhedral:
                pt = _lp_feasible_point(self)
            else:
                start = next((p.feasible_point(w) for p in self.parts if p.kind == "ball"),
                             self.parts[0].feasible_point(w))
                pt = self.project(start, w)
                if self.violation(pt, w) > 1e-7:
                    raise InfeasibleError("intersection appears to be empty")
            self._witness_cache[key] = pt
        return self._witness_cache[key].copy()

    def translate(self, c):
        return Intersection([p.translate(c) for p in self.parts])

    def linear_form(self):
        if not self.polyhedral:
            raise TypeError("intersection contains a non-polyhedral part")
        m = self.dim
        lo, hi = np.full(m, -np.inf), np.full(m, np.inf)
        eqA, eqb, inA, inb = [], [], [], []
        for p in self.parts:
            plo, phi, a1, b1, a2, b2 = p.linear_form()
            lo, hi = np.maximum(lo, plo), np.minimum(hi, phi)
            eqA.append(a1); eqb.append(b1); inA.append(a2); inb.append(b2)
        return (lo, hi, np.vstack(eqA), np.concatenate(eqb),
                np.vstack(inA), np.concatenate(inb))

    def to_json(self):
        return {"kind": "intersection", "parts": [p.to_json() for p in self.parts]}


def descriptor_from_json(obj: dict) -> AtomSet:
    kind = obj["kind"]
    if kind == "box":
        return Box(decode_reals(obj["lo"]), decode_reals(obj["hi"]))
    if kind == "ball":
        return Ball(obj["center"], obj["radius"])
    if kind == "affine":
        return Affine(obj["A"], obj["b"])
    if kind == "halfspaces":
        return Halfspaces(obj["A"], obj["b"])
    if kind == "intersection":
        return Intersection([descriptor_from_json(p) for p in obj["parts"]])
    raise ValueError(f"unknown descriptor kind {kind!r}")


# ------------------------------------------------------------ projection core


def _project_halfspace(x, a, b, w):
    excess = float(a @ x - b)
    if excess <= 0:
        return np.array(x, dtype=float)
    aw = a / w
    denom = float(a @ aw)
    if denom == 0:
        raise InfeasibleError("degenerate halfspace 0 . u <= b with b < 0")
    return x - (excess / denom) * aw


def _dykstra(parts, x, w, tol=DYKSTRA_TOL, maxiter=DYKSTRA_MAXITER):
    x = np.array(x, dtype=float)
    cur = x.copy()
    incr = [np.zeros_like(x) for _ in parts]
    gauge = np.inf
    for it in range(1, maxiter + 1):
        prev = cur
        moved = 0.0
        for i, part in enumerate(parts):
            y = part.project(cur + incr[i], w)
            new_incr = cur + incr[i] - y
            moved = max(moved, _wnorm(new_incr - incr[i], w))
            incr[i] = new_incr
            cur = y
        # the iterate can stall for a cycle while the increments still move
        gauge = max(_wnorm(cur - prev, w), moved)
        if gauge < tol:
            viol = max(p.violation(cur, w) for p in parts)
            if viol < 10 * tol * (1.0 + np.max(np.abs(cur), initial=0.0)):
                return cur
    raise ConvergenceError(
        f"Dykstra projection did not converge in {maxiter} cycles (gauge {gauge:.3g})",
        gauge=gauge, iterations=maxiter)


def _qp_project(G, x, w, start, maxiter=None):
    """Weighted projection onto a polyhedron by a primal active-set method.

    ``start`` must be feasible.  Each step solves the equality-constrained
    subproblem on the working set; blocking constraints enter it and the
    constraint with the most negative multiplier leaves it at a stationary
    point.  A blocking row is never in the span of the working set, so the
    inequality multipliers are unique even when the equalities are redundant.
    """
    lo, hi, Aeq, beq, Ain, bin_ = G.linear_form()
    x = np.asarray(x, dtype=float)
    m = x.size
    eye = np.eye(m)
    fl, fh = np.isfinite(lo), np.isfinite(hi)
    C_in = np.vstack([Ain, -eye[fl], eye[fh]])
    h = np.concatenate([bin_, -lo[fl], hi[fh]])
    n_eq = Aeq.shape[0]
    u = np.array(start, dtype=float)
    scale = 1.0 + max(np.max(np.abs(x), initial=0.0), np.max(np.abs(u), initial=0.0))
    step_tol = 1e-13 * scale
    work: list[int] = []
    maxiter = maxiter or 50 * (m + h.size + 1)
    W = np.diag(w)
    for _ in range(maxiter):
        C = np.vstack([Aeq, C_in[work]]) if work else Aeq
        r = C.shape[0]
        K = np.block([[W, C.T], [C, np.zeros((r, r))]])
        sol = np.linalg.lstsq(K, np.concatenate([w * (x - u), np.zeros(r)]), rcond=None)[0]
        p, lam = sol[:m], sol[m:]
        if np.max(np.abs(p), initial=0.0) <= step_tol:
            mult = lam[n_eq:]
            if not work or mult.min() >= -1e-12 * scale:
                return u
            work.pop(int(np.argmin(mult)))
            continue
        Cp = C_in @ p
        slack = h - C_in @ u
        alpha, block = 1.0, None
        for i in np.flatnonzero(Cp > 1e-15 * scale):
            if i in work:
                continue
            a = max(0.0, slack[i] / Cp[i])
            if a < alpha:
                alpha, block = a, int(i)
        u = u + alpha * p
        if block is not None:
            work.append(block)
    raise ConvergenceError(f"active-set projection did not settle in {maxiter} steps",
                           iterations=maxiter)


def _ball_poly_project(ball, poly, x, w):
    """Project onto ``ball & poly`` via the ball multiplier ``mu >= 0``.

    For fixed ``mu`` the Lagrangian is minimized over ``poly`` by projecting
    ``(x + mu c) / (1 + mu)``; the distance to the center decreases in ``mu``.
    """
    start = poly.feasible_point(w)
    c, rad = ball.center, ball.radius

    at = lambda mu: _qp_project(poly, (x + mu * c) / (1.0 + mu), w, start)
    u = at(0.0)
    if _wnorm(u - c, w) <= rad:
        return u
    inner = _qp_project(poly, c, w, start)
    if _wnorm(inner - c, w) > rad * (1 + 1e-9) + 1e-12:
        raise InfeasibleError("ball and polyhedral part do not meet")
    gap = lambda mu: _wnorm(at(mu) - c, w) - rad
    top = 1.0
    while gap(top) > 0:
        top *= 4.0
        if top > 1e16:
            return inner
    mu = brentq(gap, 0.0, top, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    u = at(mu)
    if gap(mu) > 0:
        u = at(mu * (1 + 1e-12) + 1e-300)
    return u


def _ball_poly_support(ball, poly, g, w):
    """Maximize ``g . u`` over ``ball & poly`` via the ball multiplier ``nu > 0``.

    For fixed ``nu`` the maximizer over ``poly`` is the projection of
    ``c + g / (nu w)``; its distance to the center decreases in ``nu``.
    """
    c, rad = ball.center, ball.radius
    start = poly.feasible_point(w)
    inner = _qp_project(poly, c, w, start)
    if _wnorm(inner - c, w) > rad * (1 + 1e-9) + 1e-12:
        raise InfeasibleError("ball and polyhedral part do not meet")
    if not np.any(g):
        return 0.0, inner, None
    at = lambda nu: _qp_project(poly, c + g / (nu * w), w, start)
    gap = lambda nu: _wnorm(at(nu) - c, w) - rad
    gw = float(np.sqrt(np.sum(g * g / w)))
    lo_nu = 1e-12 * gw / max(rad, 1e-300)
    if gap(lo_nu) <= 0:
        # the ball constraint is inactive; the polyhedral optimum lies inside
        pt = at(lo_nu)
        return float(g @ pt), pt, None
    hi_nu = max(gw / max(rad, 1e-300), lo_nu)
    while gap(hi_nu) > 0:
        hi_nu *= 4.0
    nu = brentq(gap, lo_nu, hi_nu, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=300)
    pt = at(nu)
    if gap(nu) > 0:
        pt = at(nu * (1 + 1e-12))
    return float(g @ pt), pt, None


def _lp_feasible_point(G) -> np.ndarray:
    lo, hi, Aeq, beq, Ain, bin_ = G.linear_form()
    m = lo.size
    res = linprog(np.zeros(m), A_ub=Ain if Ain.size else None, b_ub=bin_ if Ain.size else None,
                  A_eq=Aeq if Aeq.size else None, b_eq=beq if Aeq.size else None,
                  bounds=list(zip(_none_inf(lo), _none_inf(hi))), method="highs")
    if res.status == 2:
        raise InfeasibleError("polyhedral descriptor is empty")
    if res.status != 0:
        raise InfeasibleError(f"feasibility LP failed: {res.message}")
    return np.asarray(res.x, dtype=float)


def _none_inf(v):
    return [None if not np.isfinite(t) else float(t) for t in v]


def _support_generic(G, g, w):
    g = np.asarray(g, dtype=float)
    if G.polyhedral:
        lo, hi, Aeq, beq, Ain, bin_ = G.linear_form()
        bounds = list(zip(_none_inf(lo), _none_inf(hi)))
        kw = dict(A_ub=Ain if Ain.size else None, b_ub=bin_ if Ain.size else None,
                  A_eq=Aeq if Aeq.size else None, b_eq=beq if Aeq.size else None)
        res = linprog(-g, bounds=bounds, method="highs", **kw)
        if res.status == 0:
            return float(g @ res.x), np.asarray(res.x, dtype=float), None
        if res.status != 3:
            raise InfeasibleError(f"support LP failed: {res.message}")
        # recession direction with g . d > 0
        rb = [(0.0 if np.isfinite(l) else -1.0, 0.0 if np.isfinite(h) else 1.0)
              for l, h in zip(lo, hi)]
        rkw = dict(A_ub=Ain if Ain.size else None,
                   b_ub=np.zeros(Ain.shape[0]) if Ain.size else None,
                   A_eq=Aeq if Aeq.size else None,
                   b_eq=np.zeros(Aeq.shape[0]) if Aeq.size else None)
        ray = linprog(-g, bounds=rb, method="highs", **rkw)
        return np.inf, None, np.asarray(ray.x, dtype=float)
    # bounded: the intersection holds a ball
    x0 = G.feasible_point(w)
    cons = []
    for p in getattr(G, "parts", [G]):
        if p.kind == "ball":
            cons.append({"type": "ineq",
                         "fun": lambda u, p=p: p.radius ** 2 - np.sum(w * (u - p.center) ** 2),
                         "jac": lambda u, p=p: -2 * w * (u - p.center)})
        else:
            lo, hi, Aeq, beq, Ain, bin_ = p.linear_form()
            if Aeq.size:
                cons.append({"type": "eq", "fun": lambda u, A=Aeq, b=beq: A @ u - b,
                             "jac": lambda u, A=Aeq: A})
            if Ain.size:
                cons.append({"type": "ineq", "fun": lambda u, A=Ain, b=bin_: b - A @ u,
                             "jac": lambda u, A=Ain: -A})
            fin = np.isfinite(lo) | np.isfinite(hi)
            if np.any(fin):
                cons.append({"type": "ineq",
                             "fun": lambda u, lo=lo, hi=hi: np.concatenate(
                                 [(u - lo)[np.isfinite(lo)], (hi - u)[np.isfinite(hi)]]),
                             "jac": lambda u, lo=lo, hi=hi: np.vstack(
                                 [np.eye(lo.size)[np.isfinite(lo)],
                                  -np.eye(hi.size)[np.isfinite(hi)]])})
    res = sp_minimize(lambda u: -g @ u, x0, jac=lambda u: -g, constraints=cons,
                      method="SLSQP", options={"ftol": 1e-12, "maxiter": 500})
    pt = G.project(res.x, w)
    return float(g @ pt), pt, None


# ------------------------------------------------------------ the stable set


class StableConvexSet:
    """Product over atoms of closed convex descriptors."""

    def __init__(self, algebra: SigmaAlgebra, d: int, descriptors: Sequence[AtomSet]):
        descriptors = list(descriptors)
        if len(descriptors) != algebra.n_atoms:
            raise ValueError(f"need {algebra.n_atoms} descriptors, got {len(descriptors)}")
        for k, (atom, desc) in enumerate(zip(algebra.atoms, descriptors)):
            if desc.dim != len(atom) * d:
                raise ValueError(f"atom {k}: descriptor dimension {desc.dim} != {len(atom) * d}")
        self.algebra = algebra
        self.d = int(d)
        self.descriptors = tuple(descriptors)
        # nonemptiness witnesses
        self._witness = ModuleElement.from_blocks(
            algebra, d, [desc.feasible_point(self.weights(k))
                         for k, desc in enumerate(self.descriptors)])

    @classmethod
    def whole(cls, algebra: SigmaAlgebra, d: int) -> "StableConvexSet":
        return cls.box(algebra, d, -np.inf, np.inf)

    @classmethod
    def box(cls, algebra: SigmaAlgebra, d: int, lo, hi) -> "StableConvexSet":
        """Scenario-wise box; ``lo``/``hi`` broadcast to shape ``(n, d)``."""
        n = algebra.space.n
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n, d))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n, d))
        descs = [Box(lo[list(a)].ravel(), hi[list(a)].ravel()) for a in algebra.atoms]
        return cls(algebra, d, descs)

    @classmethod
    def ball(cls, algebra: SigmaAlgebra, d: int, center=0.0, radius=1.0) -> "StableConvexSet":
        """Conditional-norm ball; ``radius`` is a scalar or one value per atom."""
        n = algebra.space.n
        c = np.broadcast_to(np.asarray(center.data if isinstance(center, ModuleElement)
                                       else center, dtype=float), (n, d))
        r = radius.values if isinstance(radius, RandomVariable) else np.broadcast_to(
            np.asarray(radius, dtype=float), (algebra.n_atoms,))
        return cls(algebra, d, [Ball(c[list(a)].ravel(), r[k])
                                for k, a in enumerate(algebra.atoms)])

    @property
    def n_atoms(self) -> int:
        return self.algebra.n_atoms

    def weights(self, k: int) -> np.ndarray:
        return atom_weights(self.algebra, k, self.d)

    def feasible_point(self) -> ModuleElement:
        return self._witness

    def contains(self, x: ModuleElement, tol: float = _FEAS_TOL) -> bool:
        return bool(membership(self, x, tol))

    def project(self, x: ModuleElement) -> ModuleElement:
        return project(self, x)

    def translate(self, c: ModuleElement) -> "StableConvexSet":
        """``self - c``."""
        return StableConvexSet(self.algebra, self.d,
                               [desc.translate(c.block(k))
                                for k, desc in enumerate(self.descriptors)])

    def intersect(self, other: "StableConvexSet") -> "StableConvexSet":
        _same_algebra(self, other)
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        descs = []
        for a, b in zip(self.descriptors, other.descriptors):
            pa = a.parts if isinstance(a, Intersection) else (a,)
            pb = b.parts if isinstance(b, Intersection) else (b,)
            descs.append(Intersection(pa + pb))
        return StableConvexSet(self.algebra, self.d, descs)

    def restrict_atoms(self, A: IndicatorSet, other: "StableConvexSet") -> "StableConvexSet":
        """Descriptors of ``self`` on ``A`` and of ``other`` elsewhere."""
        return StableConvexSet(self.algebra, self.d,
                               [self.descriptors[k] if k in A else other.descriptors[k]
                                for k in range(self.n_atoms)])

    def to_json(self) -> dict:
        return {"d": self.d,
                "atoms": [dict(atom=k, **desc.to_json())
                          for k, desc in enumerate(self.descriptors)]}

    @classmethod
    def from_json(cls, algebra: SigmaAlgebra, obj: dict) -> "StableConvexSet":
        d = int(obj["d"])
        descs: list = [None] * algebra.n_atoms
        for entry in obj["atoms"]:
            entry = dict(entry)
            k = int(entry.pop("atom"))
            if descs[k] is not None:
                raise ValueError(f"atom {k} described twice")
            descs[k] = descriptor_from_json(entry)
        if any(dsc is None for dsc in descs):
            raise ValueError("every atom needs a descriptor")
        return cls(algebra, d, descs)


@dataclass(frozen=True)
class RandomInterval:
    """``[a, b]`` inside ``L0(F)`` with extended-real endpoints."""

    a: RandomVariable
    b: RandomVariable

    def __post_init__(self):
        _same_algebra(self.a, self.b)
        if not np.all(self.a.values <= self.b.values):
            raise InfeasibleError("random interval with a > b on some atom")
        if np.any(self.a.values == np.inf) or np.any(self.b.values == -np.inf):
            raise InfeasibleError("random interval is empty on some atom")

    @property
    def algebra(self):
        return self.a.algebra

    def to_set(self) -> StableConvexSet:
        """The interval as a set of F-measurable scalars (``d = 1``)."""
        alg = self.algebra
        descs = []
        for k, atom in enumerate(alg.atoms):
            m = len(atom)
            box = Box(np.full(m, self.a.values[k]), np.full(m, self.b.values[k]))
            if m == 1:
                descs.append(box)
            else:
                eq = np.zeros((m - 1, m))
                eq[np.arange(m - 1), 0] = 1.0
                eq[np.arange(m - 1), np.arange(1, m)] = -1.0
                descs.append(Intersection([box, Affine(eq, np.zeros(m - 1))]))
        return StableConvexSet(alg, 1, descs)


# ------------------------------------------------------------------ operations


@dataclass(frozen=True)
class MembershipReport:
    member: bool
    violations: np.ndarray

    def __bool__(self):
        return self.member

    @property
    def violating_atoms(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.violations > 0)]


def _check_element(G: StableConvexSet, x: ModuleElement):
    if x.algebra != G.algebra:
        raise ValueError("element and set live on different algebras")
    if x.d != G.d:
        raise ValueError(f"dimension mismatch: element d={x.d}, set d={G.d}")


def membership(G: StableConvexSet, x: ModuleElement, tol: float = _FEAS_TOL) -> MembershipReport:
    """Atomwise feasibility; violations within ``tol`` are reported as zero."""
    _check_element(G, x)
    viol = np.array([desc.violation(x.block(k), G.weights(k))
                     for k, desc in enumerate(G.descriptors)])
    viol = np.where(viol <= tol, 0.0, viol)
    return MembershipReport(bool(np.all(viol == 0.0)), viol)


def essential_membership(G: StableConvexSet, x: ModuleElement,
                         tol: float = _FEAS_TOL) -> IndicatorSet:
    """The largest event ``S`` with ``I_S x`` in ``G``; requires the null element in ``G``."""
    _check_element(G, x)
    zero = ModuleElement.zeros(G.algebra, G.d)
    if not membership(G, zero, tol):
        raise ValueError("essential membership needs the null element inside the set")
    report = membership(G, x, tol)
    return IndicatorSet(G.algebra, frozenset(np.flatnonzero(report.violations == 0.0)))


def project(G: StableConvexSet, x: ModuleElement) -> ModuleElement:
    """Conditional ``L^2`` projection, computed independently on every atom."""
    from .parallel import atom_map
    _check_element(G, x)
    blocks = atom_map(lambda k: G.descriptors[k].project(x.block(k), G.weights(k)),
                      range(G.n_atoms))
    return ModuleElement.from_blocks(G.algebra, G.d, blocks)


@dataclass(frozen=True)
class OrderBoundCertificate:
    """Outcome of the order-boundedness test.

    ``coordinate_bounds[k]`` bounds ``|u_i|`` over the atom's descriptor;
    ``radius`` bounds the conditional norm.  ``witness`` is
    ``(atom, scenario, coordinate, sign)`` of an unbounded direction.
    """

    compact: bool
    coordinate_bounds: tuple
    radius: RandomVariable
    witness: tuple | None

    def to_json(self):
        return {"compact": self.compact,
                "radius": self.radius.to_json(),
                "witness": None if self.witness is None else list(self.witness)}


def certify_order_bounded(G) -> OrderBoundCertificate:
    """Decide whether a stable set (or random interval) is bounded in order.

    For closed L0-convex sets of this module, boundedness in order is the
    same as L0-convex compactness.
    """
    if isinstance(G, RandomInterval):
        alg = G.algebra
        bounds = np.maximum(np.abs(G.a.values), np.abs(G.b.values))
        witness = None
        bad = np.flatnonzero(~np.isfinite(bounds))
        if bad.size:
            k = int(bad[0])
            sign = 1 if G.b.values[k] == np.inf else -1
            witness = (k, alg.atoms[k][0], 0, sign)
        return OrderBoundCertificate(witness is None, tuple(np.atleast_1d(b) for b in bounds),
                                     RandomVariable(alg, bounds), witness)
    witness = None
    per_atom, radius = [], []
    for k, desc in enumerate(G.descriptors):
        w = G.weights(k)
        m = desc.dim
        b = np.zeros(m)
        for i in range(m):
            for sign in (1.0, -1.0):
                g = np.zeros(m)
                g[i] = sign
                val, _, _ = desc.support(g, w)
                b[i] = max(b[i], val)
                if val == np.inf and witness is None:
                    witness = (k, G.algebra.atoms[k][i // G.d], i % G.d, int(sign))
        per_atom.append(b)
        radius.append(float(np.sqrt(np.sum(w * b * b))))
    return OrderBoundCertificate(witness is None, tuple(per_atom),
                                 RandomVariable(G.algebra, radius), witness)


@dataclass(frozen=True)
class JamesCertificate:
    """Attainment of ``sup f(G)`` for each supplied functional.

    A ``False`` verdict is a disproof of compactness (the offending functional
    and atom are named).  A ``True`` verdict only says every supplied
    functional attains its supremum; finitely many functionals are evidence,
    not proof.
    """

    compact: bool
    values: tuple
    attainers: tuple
    offending: tuple | None

    def to_json(self):
        return {"compact": self.compact,
                "values": [v.to_json() for v in self.values],
                "offending": None if self.offending is None else list(self.offending)}


def default_duals(algebra: SigmaAlgebra, d: int, count: int = 20,
                  seed: int = 0) -> list[DualFunctional]:
    """Plus/minus coordinate functionals, then seeded Gaussian representers."""
    n = algebra.space.n
    out = []
    for j in range(d):
        for sign in (1.0, -1.0):
            rep = np.zeros((n, d))
            rep[:, j] = sign
            out.append(DualFunctional(algebra, rep))
    rng = np.random.default_rng(seed)
    while len(out) < count:
        out.append(DualFunctional(algebra, rng.standard_normal((n, d))))
    return out


def james_certify(G, duals: Sequence[DualFunctional] | None = None,
                  seed: int = 0) -> JamesCertificate:
    """Check that each functional attains its supremum over ``G`` on every atom."""
    if isinstance(G, RandomInterval):
        G = G.to_set()
    if duals is None:
        duals = default_duals(G.algebra, G.d, seed=seed)
    values, attainers = [], []
    offending = None
    for j, f in enumerate(duals):
        _check_element(G, f)
        vals, pts = [], []
        for k, desc in enumerate(G.descriptors):
            w = G.weights(k)
            val, pt, _ = desc.support(w * f.block(k), w)
            vals.append(val)
            pts.append(pt if pt is not None else np.full(desc.dim, np.nan))
            if val == np.inf and offending is None:
                offending = (j, k)
        values.append(RandomVariable(G.algebra, vals))
        attainers.append(None if not np.all(np.isfinite(vals))
                         else ModuleElement.from_blocks(G.algebra, G.d, pts))
    return JamesCertificate(offending is None, tuple(values), tuple(attainers), offending)


# ------------------------------------------------ randomized Bolzano-Weierstrass


@dataclass(frozen=True)
class ForwardCombinations:
    """Result of :func:`extract_forward_combinations`.

    ``indices[k][a]`` is the random index ``n_k`` on atom ``a``; ``receipts[k]``
    maps each used index ``l`` to the event ``(n_k = l)``, so that
    ``ys[k] = sum_l I_{(n_k = l)} xs[l]`` with every ``l >= k``.
    ``cell_diameters[k]`` bounds the sup-distance between ``ys[j]`` and
    ``ys[k]`` for ``j >= k``.
    """

    ys: tuple
    limit: ModuleElement
    indices: tuple
    receipts: tuple
    gauge: float
    cell_diameters: tuple


def extract_forward_combinations(xs: Sequence[ModuleElement], bound: RandomVariable,
                                 depth: int = 40, tail: int = 10,
                                 tail_fraction: float = 0.5) -> ForwardCombinations:
    """Randomized Bolzano-Weierstrass by nested bisection on each atom.

    On atom ``A`` the stacked vectors lie in the box ``|u_i| <= bound / sqrt(w_i)``.
    At every level each coordinate of the current cell is halved; among the
    sub-cells still holding indices from the last ``tail_fraction`` of the
    sequence (the finite stand-in for "infinitely many") the lexicographically
    lowest one is kept, lower halves first.  ``n_k`` is the first index after
    ``n_{k-1}`` inside the kept cell.

    ``gauge`` is the largest sup-distance between ``ys[k]`` and the limit over
    the last ``tail`` levels.
    """
    if not xs:
        raise ValueError("empty sequence")
    alg, d = xs[0].algebra, xs[0].d
    for x in xs[1:]:
        xs[0]._check(x)
    _same_algebra(xs[0], bound)
    N = len(xs)
    if N < depth:
        raise ValueError(f"sequence of length {N} is shorter than depth {depth}")
    for j, x in enumerate(xs):
        if not cond_norm(x, 2.0) <= bound.values * (1 + 1e-12):
            raise ValueError(f"element {j} violates the conditional-norm bound")
    late = int(np.floor(N * (1.0 - tail_fraction)))
    n_atoms = alg.n_atoms
    idx = np.zeros((depth, n_atoms), dtype=int)
    achieved = depth
    diam = np.zeros((depth, n_atoms))
    for k in range(n_atoms):
        w = atom_weights(alg, k, d)
        half = bound.values[k] / np.sqrt(w)
        lo, hi = -half.copy(), half.copy()
        pts = np.stack([x.block(k) for x in xs])
        prev = -1
        for level in range(depth):
            mid = 0.5 * (lo + hi)
            inside = np.all((pts >= lo) & (pts <= hi), axis=1)
            upper = pts > mid
            cand = np.flatnonzero(inside)
            late_c = cand[cand >= late]
            if late_c.size == 0:
                achieved = min(achieved, level)
                break
            codes = upper[late_c]
            best = min(range(late_c.size), key=lambda r: tuple(codes[r]))
            code = codes[best]
            new_lo = np.where(code, mid, lo)
            new_hi = np.where(code, hi, mid)
            in_cell = np.flatnonzero(inside & np.all(upper == code, axis=1))
            after = in_cell[in_cell > prev]
            if after.size == 0:
                achieved = min(achieved, level)
                break
            prev = int(after[0])
            idx[level, k] = prev
            lo, hi = new_lo, new_hi
            diam[level, k] = float(np.max(hi - lo))
    if achieved < depth:
        raise ValueError(f"sequence too short to reach depth {depth} (stopped at {achieved})")
    ys, receipts = [], []
    for level in range(depth):
        events = {}
        for k in range(n_atoms):
            events.setdefault(int(idx[level, k]), set()).add(k)
        receipt = {l: IndicatorSet(alg, frozenset(atoms)) for l, atoms in sorted(events.items())}
        receipts.append(receipt)
        ys.append(concatenate(list(receipt.values()), [xs[l] for l in receipt]))
    limit = ys[-1]
    start = max(0, depth - tail)
    gauge = max(as_sup_distance(y, limit) for y in ys[start:])
    return ForwardCombinations(tuple(ys), limit, tuple(tuple(int(v) for v in row) for row in idx),
                               tuple(receipts), float(gauge),
                               tuple(float(v) for v in diam.max(axis=1)))


# ------------------------------------------------------------- test families


def _atom_samples(desc: AtomSet, w, rng, n_random, anchor=None, step=1.0):
    m = desc.dim
    pts = [desc.feasible_point(w)]
    for i in range(m):
        for sign in (1.0, -1.0):
            g = np.zeros(m)
            g[i] = sign
            val, pt, _ = desc.support(g, w)
            if pt is not None and np.isfinite(val):
                pts.append(pt)
    if isinstance(desc, Box) and m <= 6 and np.all(np.isfinite(desc.lo)) \
            and np.all(np.isfinite(desc.hi)):
        for corner in itertools.product(*zip(desc.lo, desc.hi)):
            pts.append(np.array(corner))
    if anchor is not None:
        pts.append(desc.project(anchor, w))
        for i in range(m):
            for sign in (1.0, -1.0):
                v = anchor.copy()
                v[i] += sign * step
                pts.append(desc.project(v, w))
    center = pts[0] if anchor is None else desc.project(anchor, w)
    spread = max(1.0, float(np.max(np.abs(np.stack(pts)), initial=1.0)))
    for _ in range(n_random):
        raw = center + spread * rng.standard_normal(m)
        proj = desc.project(raw, w)
        t = rng.uniform()
        pts.append(t * proj + (1 - t) * center)
    return pts


def sample_family(G: StableConvexSet, n_random: int = 100, seed: int = 0,
                  anchor: ModuleElement | None = None, step: float = 1.0) -> list[ModuleElement]:
    """Feasible test points: support points, box corners, moves around ``anchor``, samples.

    Per-atom lists are aligned by position (shorter ones cycle), giving a list
    of elements of ``G``.
    """
    rng = np.random.default_rng(seed)
    per_atom = [_atom_samples(desc, G.weights(k), rng, n_random,
                              None if anchor is None else anchor.block(k), step)
                for k, desc in enumerate(G.descriptors)]
    length = max(len(p) for p in per_atom)
    return [ModuleElement.from_blocks(G.algebra, G.d, [p[j % len(p)] for p in per_atom])
            for j in range(length)]
