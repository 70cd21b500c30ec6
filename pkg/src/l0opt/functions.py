"""Stable L0-convex functions: a closed catalog with evaluation, derivatives and prox.

Every catalog member acts atom by atom, which makes it stable (it commutes
with gluing along events of the base algebra) and L0-convex by construction.
Values are :class:`~l0opt.prob_core.RandomVariable` objects and may be
``+inf`` on atoms outside the domain.

Each member can also break itself down on one atom into an :class:`AtomParts`
record (a quadratic form, other smooth terms, prox-friendly terms,
constraint descriptors).  The prox and the minimizers in
:mod:`l0opt.optimize` are built on that breakdown.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize as sp_minimize

from . import _solvers
from .convex_sets import (AtomSet, Intersection, StableConvexSet,
                          certify_order_bounded, essential_membership, membership)
from .errors import InfeasibleError
from .parallel import atom_map
from .prob_core import (RandomVariable, SigmaAlgebra, _same_algebra, decode_reals,
                        encode_reals, ext_add, ext_mul, ext_sub)
from .rn_module import DualFunctional, ModuleElement, atom_weights, pairing

__all__ = [
    "StableFunction", "Quadratic", "CondVariance", "CondNormPower", "Indicator",
    "SeparablePLQ", "Sum", "Constant", "Extended", "CallbackFunction",
    "AtomParts", "evaluate", "extend", "gateaux", "quotient_limit",
    "subgradient_margin", "subgradient_check", "monotone_check",
    "prox", "prox_residuals", "function_from_json",
]

PROX_TOL = 1e-11
MEMBER_TOL = 1e-9


@dataclass
class AtomParts:
    """Breakdown of a function on one atom.

    The function equals ``u.H.u - 2 c.u + sum(smooth) + sum(proxes)`` plus
    the indicator of every descriptor in ``sets``, up to a constant.
    ``smooth`` holds ``(grad, L)`` pairs; ``proxes`` holds maps
    ``prox(v, step)`` of ``step`` times the term.
    """

    w: np.ndarray
    H: np.ndarray
    c: np.ndarray
    smooth: list = field(default_factory=list)
    proxes: list = field(default_factory=list)
    sets: list = field(default_factory=list)
    improper: bool = False
    opaque: bool = False

    @classmethod
    def empty(cls, w):
        m = w.size
        return cls(w, np.zeros((m, m)), np.zeros(m))

    @property
    def is_quadratic(self) -> bool:
        return not (self.smooth or self.proxes or self.sets or self.opaque)

    def smooth_grad(self, u):
        g = (2.0 * (self.H @ u) - 2.0 * self.c) / self.w
        for grad, _ in self.smooth:
            g = g + grad(u)
        return g

    def smooth_lipschitz(self) -> float:
        return 2.0 * _solvers.weighted_lmax(self.H, self.w) + sum(L for _, L in self.smooth)

    def constraint(self) -> AtomSet | None:
        if not self.sets:
            return None
        return self.sets[0] if len(self.sets) == 1 else Intersection(self.sets)


class StableFunction:
    """Base class: an extended-real, stable, L0-convex function on the module."""

    kind = "abstract"
    verified = True
    smooth = False          # gradient exists everywhere and is Lipschitz
    differentiable = False  # gradient exists on the domain

    def __init__(self, algebra: SigmaAlgebra, d: int):
        self.algebra = algebra
        self.d = int(d)

    # per-atom interface
    def weights(self, k: int) -> np.ndarray:
        return atom_weights(self.algebra, k, self.d)

    def atom_value(self, k: int, u: np.ndarray) -> float:
        raise NotImplementedError

    def atom_grad(self, k: int, u: np.ndarray) -> np.ndarray:
        raise TypeError(f"{self.kind} function is not differentiable")

    def atom_directional(self, k: int, u: np.ndarray, y: np.ndarray) -> float:
        """Analytic one-sided directional derivative, if known."""
        if self.differentiable:
            return float(np.sum(self.weights(k) * self.atom_grad(k, u) * y))
        raise NotImplementedError

    def collect(self, k: int, scale: float, parts: AtomParts) -> None:
        raise NotImplementedError

    def atom_parts(self, k: int) -> AtomParts:
        parts = AtomParts.empty(self.weights(k))
        self.collect(k, 1.0, parts)
        return parts

    def atom_prox(self, k: int, x: np.ndarray, tau: float) -> np.ndarray:
        return _prox_from_parts(self, k, x, tau)

    # flags
    @property
    def strictly_convex(self) -> bool:
        return False

    @property
    def coercive(self) -> bool:
        return False

    @property
    def proper(self) -> bool:
        return not any(self.atom_parts(k).improper for k in range(self.algebra.n_atoms))

    def domain(self) -> StableConvexSet | None:
        """Closed stable domain when it is not the whole module."""
        return None

    # module-level API
    def _check(self, x: ModuleElement):
        _same_algebra(self, x)
        if x.d != self.d:
            raise ValueError(f"dimension mismatch: element d={x.d}, function d={self.d}")

    def evaluate(self, x: ModuleElement) -> RandomVariable:
        self._check(x)
        return RandomVariable(self.algebra, [self.atom_value(k, x.block(k))
                                             for k in range(self.algebra.n_atoms)])

    __call__ = evaluate

    def gradient(self, x: ModuleElement) -> DualFunctional:
        self._check(x)
        blocks = [self.atom_grad(k, x.block(k)) for k in range(self.algebra.n_atoms)]
        return DualFunctional.of(ModuleElement.from_blocks(self.algebra, self.d, blocks))

    def prox(self, x: ModuleElement, tau: float = 1.0) -> ModuleElement:
        """``argmin_u  1/2 ||u - x||^2 + tau * f(u)`` in the conditional L2 norm."""
        self._check(x)
        blocks = atom_map(lambda k: self.atom_prox(k, x.block(k), tau),
                          range(self.algebra.n_atoms))
        return ModuleElement.from_blocks(self.algebra, self.d, blocks)

    def __add__(self, other: "StableFunction") -> "Sum":
        return Sum([self, other])

    def __rmul__(self, c) -> "Sum":
        return Sum([self], [c])

    def to_json(self) -> dict:
        raise NotImplementedError


def _as_rv(algebra, value) -> RandomVariable:
    if isinstance(value, RandomVariable):
        _same_algebra(value, RandomVariable.constant(algebra, 0.0))
        return value
    return RandomVariable(algebra, np.broadcast_to(np.asarray(value, dtype=float),
                                                   (algebra.n_atoms,)))


# ------------------------------------------------------------------- catalog


class Quadratic(StableFunction):
    """``a(x, x) - 2 l(x) + const`` with ``a(x, x) = x_A . H_A . x_A`` on each atom.

    ``forms[k]`` is the symmetric positive-semidefinite matrix of the form on
    atom ``k`` in stacked coordinates; ``linear`` is the representer of ``l``.
    """

    kind = "quadratic"
    smooth = True
    differentiable = True

    def __init__(self, algebra, d, forms, linear: ModuleElement | None = None,
                 constant=None):
        super().__init__(algebra, d)
        forms = [np.array(H, dtype=float) for H in forms]
        if len(forms) != algebra.n_atoms:
            raise ValueError("need one form per atom")
        self._lmin = []
        for k, H in enumerate(forms):
            m = len(algebra.atoms[k]) * self.d
            if H.shape != (m, m):
                raise ValueError(f"atom {k}: form must be {m}x{m}")
            if not np.allclose(H, H.T, atol=1e-12 * (1 + np.abs(H).max(initial=0))):
                raise ValueError(f"atom {k}: form is not symmetric")
            H = 0.5 * (H + H.T)
            lmin = _solvers.weighted_lmin(H, self.weights(k))
            if lmin < -1e-10 * (1 + np.abs(H).max(initial=0)):
                raise ValueError(f"atom {k}: form is not positive semidefinite")
            forms[k] = H
            self._lmin.append(lmin)
        self.forms = tuple(forms)
        self.linear = None if linear is None else DualFunctional.of(linear)
        self.constant = None if constant is None else _as_rv(algebra, constant)

    @classmethod
    def identity_pairing(cls, algebra, d, scale=1.0) -> "Quadratic":
        """``scale * E[|x|^2 | F]``, the form ``a(x, y) = (x, y)``."""
        return cls(algebra, d, [scale * np.diag(atom_weights(algebra, k, d))
                                for k in range(algebra.n_atoms)])

    @classmethod
    def linear_functional(cls, l: DualFunctional, sign: float = 1.0) -> "Quadratic":
        """``sign * l(x)``."""
        alg, d = l.algebra, l.d
        zero = [np.zeros((len(a) * d,) * 2) for a in alg.atoms]
        return cls(alg, d, zero, ModuleElement(alg, -0.5 * sign * l.data))

    @classmethod
    def half_distance(cls, x: ModuleElement) -> "Quadratic":
        """``1/2 ||u - x||^2`` in the conditional L2 norm."""
        from .rn_module import cond_norm
        alg, d = x.algebra, x.d
        forms = [0.5 * np.diag(atom_weights(alg, k, d)) for k in range(alg.n_atoms)]
        const = 0.5 * cond_norm(x, 2.0).values ** 2
        return cls(alg, d, forms, ModuleElement(alg, 0.5 * x.data), const)

    def _lin(self, k):
        if self.linear is None:
            return np.zeros(len(self.algebra.atoms[k]) * self.d)
        return self.linear.block(k)

    def atom_value(self, k, u):
        w = self.weights(k)
        val = float(u @ self.forms[k] @ u - 2.0 * np.sum(w * self._lin(k) * u))
        if self.constant is not None:
            val += float(self.constant.values[k])
        return val

    def atom_grad(self, k, u):
        return 2.0 * (self.forms[k] @ u) / self.weights(k) - 2.0 * self._lin(k)

    def collect(self, k, scale, parts):
        if scale == 0:
            return
        parts.H += scale * self.forms[k]
        parts.c += scale * self.weights(k) * self._lin(k)

    @property
    def strictly_convex(self):
        return all(l > 1e-12 for l in self._lmin)

    coercive = strictly_convex

    def to_json(self):
        out = {"kind": self.kind, "d": self.d, "forms": [H.tolist() for H in self.forms]}
        if self.linear is not None:
            out["linear"] = self.linear.data.tolist()
        if self.constant is not None:
            out["constant"] = encode_reals(self.constant.values)
        return out


class CondVariance(Quadratic):
    """Conditional variance ``E[|x|^2 | F] - |E[x | F]|^2``."""

    kind = "cond_variance"

    def __init__(self, algebra, d=1):
        forms = []
        for k, atom in enumerate(algebra.atoms):
            w = atom_weights(algebra, k, d)
            H = np.diag(w)
            for j in range(d):
                v = np.where(np.arange(w.size) % d == j, w, 0.0)
                H = H - np.outer(v, v)
            forms.append(H)
        super().__init__(algebra, d, forms)

    def to_json(self):
        return {"kind": self.kind, "d": self.d}


class CondNormPower(StableFunction):
    """``lam * E[|x|^p | F]`` (the p-th power of the conditional p-norm), ``p >= 1``."""

    kind = "cond_norm_p"

    def __init__(self, algebra, d, p=2.0, lam=1.0):
        super().__init__(algebra, d)
        self.p = float(p)
        if not self.p >= 1.0 or not np.isfinite(self.p):
            raise ValueError("exponent must be a finite p >= 1")
        self.lam = _as_rv(algebra, lam)
        if not self.lam.is_finite or np.any(self.lam.values < 0):
            raise ValueError("lam must be finite and nonnegative")

    @property
    def smooth(self):
        return self.p == 2.0

    @property
    def differentiable(self):
        return self.p > 1.0

    def _rows(self, k, u):
        return np.asarray(u, dtype=float).reshape(-1, self.d)

    def atom_value(self, k, u):
        q = self.algebra.cond_weights(k)
        mag = np.linalg.norm(self._rows(k, u), axis=1)
        return float(self.lam.values[k] * np.sum(q * mag ** self.p))

    def atom_grad(self, k, u):
        if self.p == 1.0:
            raise TypeError("conditional 1-norm is not differentiable")
        rows = self._rows(k, u)
        mag = np.linalg.norm(rows, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(mag > 0, mag ** (self.p - 2.0), 0.0)
        return (self.lam.values[k] * self.p * fac[:, None] * rows).ravel()

    def atom_directional(self, k, u, y):
        if self.p > 1.0:
            return super().atom_directional(k, u, y)
        q = self.algebra.cond_weights(k)
        rows, dirs = self._rows(k, u), self._rows(k, y)
        mag = np.linalg.norm(rows, axis=1)
        safe = np.where(mag > 0, mag, 1.0)
        term = np.where(mag > 0, np.einsum("ij,ij->i", rows, dirs) / safe,
                        np.linalg.norm(dirs, axis=1))
        return float(self.lam.values[k] * np.sum(q * term))

    def atom_prox(self, k, x, tau):
        s = tau * self.lam.values[k]
        rows = self._rows(k, x)
        r = np.linalg.norm(rows, axis=1)
        if s == 0:
            return np.array(x, dtype=float)
        if self.p == 1.0:
            t = np.maximum(r - s, 0.0)
        elif self.p == 2.0:
            t = r / (1.0 + 2.0 * s)
        else:
            # root of t + s p t^{p-1} = r on [0, r]
            lo, hi = np.zeros_like(r), r.copy()
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                big = mid + s * self.p * mid ** (self.p - 1.0) > r
                hi = np.where(big, mid, hi)
                lo = np.where(big, lo, mid)
            t = 0.5 * (lo + hi)
        safe = np.where(r > 0, r, 1.0)
        return (rows * (t / safe)[:, None]).ravel()

    def collect(self, k, scale, parts):
        lam = scale * self.lam.values[k]
        if lam == 0:
            return
        if self.p == 2.0:
            parts.H += lam * np.diag(parts.w)
        else:
            base = self.lam.values[k]
            parts.proxes.append(lambda v, step, k=k, f=lam / base: self.atom_prox(k, v, step * f))

    @property
    def strictly_convex(self):
        return self.p > 1.0 and bool(np.all(self.lam.values > 0))

    @property
    def coercive(self):
        return bool(np.all(self.lam.values > 0))

    def to_json(self):
        return {"kind": self.kind, "d": self.d, "p": self.p,
                "lam": encode_reals(self.lam.values)}


class Indicator(StableFunction):
    """Indicator of a stable set: 0 on atoms where ``x`` belongs, ``+inf`` elsewhere."""

    kind = "indicator"

    def __init__(self, G: StableConvexSet):
        super().__init__(G.algebra, G.d)
        self.G = G
        self._coercive = None

    def atom_value(self, k, u):
        viol = self.G.descriptors[k].violation(u, self.weights(k))
        return 0.0 if viol <= MEMBER_TOL else np.inf

    def atom_directional(self, k, u, y):
        raise NotImplementedError

    def atom_prox(self, k, x, tau):
        return self.G.descriptors[k].project(x, self.weights(k))

    def collect(self, k, scale, parts):
        if scale > 0:
            parts.sets.append(self.G.descriptors[k])

    def domain(self):
        return self.G

    @property
    def coercive(self):
        if self._coercive is None:
            self._coercive = certify_order_bounded(self.G).compact
        return self._coercive

    def to_json(self):
        return {"kind": self.kind, "set": self.G.to_json()}


class SeparablePLQ(StableFunction):
    """``lam * E[sum_j h(x_j) | F]`` for a convex piecewise linear-quadratic ``h``.

    ``h(t) = a_i t^2 / 2 + b_i t + c_i`` on the ``i``-th interval cut out by the
    sorted ``breakpoints``; continuity and convexity are checked.
    """

    kind = "separable"

    def __init__(self, algebra, d, breakpoints, pieces, lam=1.0):
        super().__init__(algebra, d)
        bp = np.array(breakpoints, dtype=float).ravel()
        pcs = np.atleast_2d(np.array(pieces, dtype=float))
        if pcs.shape != (bp.size + 1, 3):
            raise ValueError("need len(breakpoints) + 1 pieces of (a, b, c)")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(pcs[:, 0] < 0):
            raise ValueError("quadratic coefficients must be nonnegative")
        for j, t in enumerate(bp):
            left = _plq_piece(pcs[j], t)
            right = _plq_piece(pcs[j + 1], t)
            if abs(left - right) > 1e-10 * (1 + abs(left)):
                raise ValueError(f"h is discontinuous at breakpoint {t}")
            if pcs[j, 0] * t + pcs[j, 1] > pcs[j + 1, 0] * t + pcs[j + 1, 1] + 1e-12:
                raise ValueError(f"h is not convex at breakpoint {t}")
        self.breakpoints, self.pieces = bp, pcs
        self.lam = _as_rv(algebra, lam)
        if not self.lam.is_finite or np.any(self.lam.values < 0):
            raise ValueError("lam must be finite and nonnegative")
        self.edges = np.concatenate([[-np.inf], bp, [np.inf]])

    def h(self, t):
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.breakpoints, t, side="right")
        a, b, c = self.pieces[i].T
        return 0.5 * a * t * t + b * t + c

    def _slopes(self, t):
        t = np.asarray(t, dtype=float)
        ir = np.searchsorted(self.breakpoints, t, side="right")
        il = np.searchsorted(self.breakpoints, t, side="left")
        right = self.pieces[ir, 0] * t + self.pieces[ir, 1]
        left = self.pieces[il, 0] * t + self.pieces[il, 1]
        return left, right

    def atom_value(self, k, u):
        w = self.weights(k)
        return float(self.lam.values[k] * np.sum(w * self.h(u)))

    def atom_directional(self, k, u, y):
        left, right = self._slopes(u)
        w = self.weights(k)
        return float(self.lam.values[k] * np.sum(w * np.where(y > 0, right * y, left * y)))

    def scalar_prox(self, x, s):
        """``argmin_u (u - x)^2 / 2 + s h(u)`` elementwise."""
        x = np.asarray(x, dtype=float)
        if s == 0:
            return x.copy()
        out = np.full_like(x, np.nan)
        for i, (a, b, _) in enumerate(self.pieces):
            cand = (x - s * b) / (1.0 + s * a)
            ok = (cand >= self.edges[i]) & (cand <= self.edges[i + 1]) & np.isnan(out)
            out = np.where(ok, cand, out)
        for t in self.breakpoints:
            left, right = self._slopes(np.full_like(x, t))
            ok = np.isnan(out) & (x - t >= s * left) & (x - t <= s * right)
            out = np.where(ok, t, out)
        if np.any(np.isnan(out)):
            raise RuntimeError("piecewise prox found no stationary point")
        return out

    def atom_prox(self, k, x, tau):
        return self.scalar_prox(x, tau * self.lam.values[k])

    def collect(self, k, scale, parts):
        s = scale * self.lam.values[k]
        if s == 0:
            return
        parts.proxes.append(lambda v, step, s=s: self.scalar_prox(v, step * s))

    @property
    def strictly_convex(self):
        return bool(np.all(self.pieces[:, 0] > 0) and np.all(self.lam.values > 0))

    @property
    def coercive(self):
        a0, b0, _ = self.pieces[0]
        a1, b1, _ = self.pieces[-1]
        return bool((a0 > 0 or b0 < 0) and (a1 > 0 or b1 > 0)
                    and np.all(self.lam.values > 0))

    def to_json(self):
        return {"kind": self.kind, "d": self.d, "breakpoints": self.breakpoints.tolist(),
                "pieces": self.pieces.tolist(), "lam": encode_reals(self.lam.values)}


def _plq_piece(piece, t):
    a, b, c = piece
    return 0.5 * a * t * t + b * t + c


class Sum(StableFunction):
    """Nonnegative ``L0(F)``-combination ``sum_i xi_i f_i`` (``0 * inf = 0``)."""

    kind = "sum"

    def __init__(self, terms: Sequence[StableFunction], weights=None):
        terms = list(terms)
        if not terms:
            raise ValueError("empty sum")
        alg, d = terms[0].algebra, terms[0].d
        for t in terms[1:]:
            _same_algebra(terms[0], t)
            if t.d != d:
                raise ValueError("summands have different dimensions")
        super().__init__(alg, d)
        weights = [1.0] * len(terms) if weights is None else list(weights)
        if len(weights) != len(terms):
            raise ValueError("one weight per term")
        self.weights_ = [_as_rv(alg, w) for w in weights]
        for w in self.weights_:
            if not w.is_finite or np.any(w.values < 0):
                raise ValueError("sum weights must be finite and nonnegative")
        self.terms = terms

    @property
    def smooth(self):
        return all(t.smooth for t in self.terms)

    @property
    def differentiable(self):
        return all(t.differentiable for t in self.terms)

    def atom_value(self, k, u):
        total = 0.0
        for w, t in zip(self.weights_, self.terms):
            total = float(ext_add(total, ext_mul(w.values[k], t.atom_value(k, u))))
        return total

    def atom_grad(self, k, u):
        return sum(w.values[k] * t.atom_grad(k, u) for w, t in zip(self.weights_, self.terms))

    def atom_directional(self, k, u, y):
        total = 0.0
        for w, t in zip(self.weights_, self.terms):
            if w.values[k] == 0:
                continue
            total = float(ext_add(total, w.values[k] * t.atom_directional(k, u, y)))
        return total

    def collect(self, k, scale, parts):
        for w, t in zip(self.weights_, self.terms):
            t.collect(k, scale * w.values[k], parts)

    @property
    def strictly_convex(self):
        return any(t.strictly_convex and np.all(w.values > 0)
                   for w, t in zip(self.weights_, self.terms))

    @property
    def coercive(self):
        return any(t.coercive and np.all(w.values > 0)
                   for w, t in zip(self.weights_, self.terms))

    def domain(self):
        dom = None
        for w, t in zip(self.weights_, self.terms):
            td = t.domain()
            if td is None:
                continue
            if np.any(w.values == 0):
                whole = StableConvexSet.whole(self.algebra, self.d)
                td = td.restrict_atoms(w.where_gt(0.0), whole)
            dom = td if dom is None else dom.intersect(td)
        return dom

    def to_json(self):
        return {"kind": self.kind, "terms": [t.to_json() for t in self.terms],
                "weights": [encode_reals(w.values) for w in self.weights_]}


class Constant(StableFunction):
    """A constant random variable, possibly ``+inf`` (improper) on some atoms."""

    kind = "constant"

    def __init__(self, algebra, d, value):
        super().__init__(algebra, d)
        self.value = _as_rv(algebra, value)
        if np.any(self.value.values == -np.inf):
            raise ValueError("constant functions must not take the value -inf")

    @property
    def smooth(self):
        return self.value.is_finite

    differentiable = smooth

    def atom_value(self, k, u):
        return float(self.value.values[k])

    def atom_grad(self, k, u):
        return np.zeros_like(u, dtype=float)

    def collect(self, k, scale, parts):
        if scale > 0 and self.value.values[k] == np.inf:
            parts.improper = True

    def to_json(self):
        return {"kind": self.kind, "d": self.d, "value": encode_reals(self.value.values)}


class Extended(StableFunction):
    """Extension of ``f`` (given on ``G``, with the null element in ``G``) to the whole module.

    ``f_bar(x) = I_S f(I_S x) + I_{S^c} (+inf)`` with ``S`` the essential
    membership event of ``x`` in ``G``.
    """

    kind = "extended"

    def __init__(self, f: StableFunction, G: StableConvexSet):
        _same_algebra(f, G)
        super().__init__(f.algebra, f.d)
        if not membership(G, ModuleElement.zeros(G.algebra, G.d)):
            raise ValueError("extension needs the null element inside G")
        self.f, self.G = f, G

    @property
    def differentiable(self):
        return False

    def evaluate(self, x):
        self._check(x)
        S = essential_membership(self.G, x, MEMBER_TOL)
        inside = self.f.evaluate(x.restrict(S))
        return RandomVariable(self.algebra, np.where(S.mask(), inside.values, np.inf))

    __call__ = evaluate

    def atom_value(self, k, u):
        if self.G.descriptors[k].violation(u, self.weights(k)) > MEMBER_TOL:
            return np.inf
        return self.f.atom_value(k, u)

    def atom_directional(self, k, u, y):
        raise NotImplementedError

    def collect(self, k, scale, parts):
        self.f.collect(k, scale, parts)
        if scale > 0:
            parts.sets.append(self.G.descriptors[k])

    @property
    def strictly_convex(self):
        return self.f.strictly_convex

    @property
    def coercive(self):
        return self.f.coercive or Indicator(self.G).coercive

    def domain(self):
        fd = self.f.domain()
        return self.G if fd is None else self.G.intersect(fd)

    def to_json(self):
        return {"kind": self.kind, "f": self.f.to_json(), "set": self.G.to_json()}


class CallbackFunction(StableFunction):
    """Escape hatch around a user callback ``fn(k, u) -> float`` applied atom by atom.

    Convexity and stability are the caller's responsibility; results that
    depend on such a function are marked as resting on unverified hypotheses.
    """

    kind = "callback"
    verified = False

    def __init__(self, algebra, d, fn: Callable, grad: Callable | None = None):
        super().__init__(algebra, d)
        self.fn, self.grad = fn, grad
        self.differentiable = grad is not None

    def atom_value(self, k, u):
        return float(self.fn(k, u))

    def atom_grad(self, k, u):
        if self.grad is None:
            raise TypeError("callback function has no gradient")
        return np.asarray(self.grad(k, u), dtype=float)

    def atom_directional(self, k, u, y):
        if self.grad is None:
            raise NotImplementedError
        return super().atom_directional(k, u, y)

    def collect(self, k, scale, parts):
        parts.opaque = True

    def atom_prox(self, k, x, tau):
        w = self.weights(k)
        obj = lambda u: 0.5 * np.sum(w * (u - x) ** 2) + tau * self.fn(k, u)
        jac = None
        if self.grad is not None:
            jac = lambda u: w * (u - x) + tau * w * self.atom_grad(k, u)
        res = sp_minimize(obj, np.array(x, dtype=float), jac=jac, method="L-BFGS-B",
                          options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
        return res.x

    def to_json(self):
        raise TypeError("callback functions cannot be serialized")


# -------------------------------------------------------------- prox machinery


def _prox_from_parts(f: StableFunction, k: int, x: np.ndarray, tau: float) -> np.ndarray:
    parts = f.atom_parts(k)
    if parts.improper:
        raise InfeasibleError(f"function is improper (identically +inf) on atom {k}", atom=k)
    if parts.opaque:
        raise NotImplementedError("prox of a sum containing a callback term")
    w = parts.w
    x = np.asarray(x, dtype=float)
    has_quad = np.any(parts.H) or np.any(parts.c)
    if parts.is_quadratic:
        return np.linalg.solve(np.diag(w) + 2.0 * tau * parts.H, w * x + 2.0 * tau * parts.c)
    if len(parts.proxes) > 1:
        raise NotImplementedError("prox of a sum with several nonsmooth terms")
    if not has_quad and not parts.smooth and not parts.sets:
        return parts.proxes[0](x, tau)
    C = parts.constraint()
    if not has_quad and not parts.smooth and not parts.proxes:
        return C.project(x, w)

    def grad(u):
        return (u - x) + tau * parts.smooth_grad(u)

    L = 1.0 + tau * parts.smooth_lipschitz()
    if parts.proxes:
        g = lambda v, step: parts.proxes[0](v, step * tau)
    else:
        g = lambda v, step: v
    if C is None:
        u, _, _ = _solvers.fista(grad, L, g, x, w, tol=PROX_TOL)
    elif parts.proxes:
        u, _, _ = _solvers.davis_yin(grad, L, g, lambda v: C.project(v, w), x, w, tol=PROX_TOL)
    else:
        u, _, _ = _solvers.fista(grad, L, lambda v, step: C.project(v, w), x, w, tol=PROX_TOL)
    return u


def prox(phi: StableFunction, x: ModuleElement, tau: float = 1.0) -> ModuleElement:
    """Proximity mapping ``argmin_u 1/2 ||u - x||^2 + tau phi(u)``."""
    return phi.prox(x, tau)


def prox_residuals(phi: StableFunction, x: ModuleElement, u: ModuleElement,
                   family: Sequence[ModuleElement], tau: float = 1.0):
    """Worst values over ``family`` of the two variational characterizations of a prox point.

    Returns ``(first, second)`` random variables:
    ``(u - x, v - u) + tau (phi(v) - phi(u))`` and
    ``(v - x, v - u) + tau (phi(v) - phi(u))``.  Both are ``>= 0`` at the prox point.
    """
    fu = phi.evaluate(u)
    first = np.full(phi.algebra.n_atoms, np.inf)
    second = first.copy()
    for v in family:
        gap = ext_mul(tau, ext_sub(phi.evaluate(v).values, fu.values))
        a = ext_add(pairing(u - x, v - u).values, gap)
        b = ext_add(pairing(v - x, v - u).values, gap)
        first, second = np.minimum(first, a), np.minimum(second, b)
    return RandomVariable(phi.algebra, first), RandomVariable(phi.algebra, second)


# ---------------------------------------------------------------- operations


def evaluate(f: StableFunction, x: ModuleElement) -> RandomVariable:
    return f.evaluate(x)


def extend(f: StableFunction, G: StableConvexSet) -> Extended:
    """Extension of ``f`` from ``G`` to the whole module (``+inf`` off ``G``)."""
    return Extended(f, G)


def quotient_limit(f: StableFunction, x: ModuleElement, y: ModuleElement,
                   tol: float = 1e-9, max_halvings: int = 26):
    """Limit of ``(f(x + t y) - f(x)) / t`` along ``t = 2^-j``.

    Successive quotients are Richardson-extrapolated to cancel the linear
    term; iteration stops when two extrapolants agree within ``tol`` in the
    sup gauge.  Steps stop at ``2^-26`` (about the square root of machine
    precision) because smaller ones lose the difference to rounding; the
    extrapolant with the smallest gauge is then returned.  Returns
    ``(limit, gauge)``.
    """
    fx = f.evaluate(x)
    if not fx.is_finite:
        raise ValueError("x lies outside the domain of f")
    prev_q = prev_r = None
    gauge, best = np.inf, None
    for j in range(max_halvings + 1):
        t = 2.0 ** -j
        q = ext_sub(f.evaluate(x + t * y).values, fx.values) / t
        if prev_q is not None:
            with np.errstate(invalid="ignore"):
                r = np.where(np.isfinite(q) & np.isfinite(prev_q), 2.0 * q - prev_q, q)
            if prev_r is not None:
                same_inf = (r == prev_r) & ~np.isfinite(r)
                diff = np.where(same_inf, 0.0, np.abs(r - prev_r))
                diff = np.where(np.isnan(diff), np.inf, diff)
                g = float(diff.max())
                if g <= gauge:
                    gauge, best = g, r
                if gauge < tol:
                    break
            prev_r = r
        prev_q = q
    return RandomVariable(f.algebra, best), gauge


def gateaux(f: StableFunction, x: ModuleElement, y: ModuleElement) -> RandomVariable:
    """Directional (Gateaux) derivative ``f'(x)(y)``.

    Catalog members use their analytic derivative; otherwise the monotone
    difference-quotient limit is returned.  Scalar step sequences suffice:
    by stability a random step ``lambda_n`` acts as a scalar on each atom.
    """
    f._check(x)
    f._check(y)
    if not f.evaluate(x).is_finite:
        raise ValueError("x lies outside the domain of f")
    try:
        vals = [f.atom_directional(k, x.block(k), y.block(k))
                for k in range(f.algebra.n_atoms)]
        return RandomVariable(f.algebra, vals)
    except (NotImplementedError, TypeError):
        return quotient_limit(f, x, y)[0]


def subgradient_margin(f: StableFunction, x: ModuleElement, y: ModuleElement) -> RandomVariable:
    """``f(y) - f(x) - f'(x)(y - x)`` on each atom."""
    return ext_sub_rv(ext_sub_rv(f.evaluate(y), f.evaluate(x)), gateaux(f, x, y - x))


def ext_sub_rv(a: RandomVariable, b: RandomVariable) -> RandomVariable:
    return RandomVariable(a.algebra, ext_sub(a.values, b.values))


def subgradient_check(f: StableFunction, x: ModuleElement, y: ModuleElement,
                      tol: float = 1e-9) -> bool:
    return bool(np.all(subgradient_margin(f, x, y).values >= -tol))


def monotone_check(f: StableFunction, x: ModuleElement, y: ModuleElement,
                   tol: float = 1e-9) -> bool:
    """``(f'(x) - f'(y))(x - y) >= 0`` on every atom.

    Only one direction of the classical equivalence is known in this setting,
    so a pass is evidence of convexity, not a proof.
    """
    a = gateaux(f, x, x - y).values
    b = gateaux(f, y, y - x).values
    return bool(np.all(ext_add(a, b) >= -tol))


# ------------------------------------------------------------------- JSON


def function_from_json(algebra: SigmaAlgebra, obj: dict) -> StableFunction:
    kind = obj["kind"]
    if kind == "quadratic":
        d = int(obj["d"])
        lin = obj.get("linear")
        return Quadratic(algebra, d, obj["forms"],
                         None if lin is None else ModuleElement(algebra, lin),
                         None if "constant" not in obj else decode_reals(obj["constant"]))
    if kind == "cond_variance":
        return CondVariance(algebra, int(obj.get("d", 1)))
    if kind == "cond_norm_p":
        lam = obj.get("lam", 1.0)
        return CondNormPower(algebra, int(obj["d"]), obj["p"],
                             decode_reals(lam) if isinstance(lam, list) else lam)
    if kind == "indicator":
        return Indicator(StableConvexSet.from_json(algebra, obj["set"]))
    if kind == "separable":
        lam = obj.get("lam", 1.0)
        return SeparablePLQ(algebra, int(obj["d"]), obj["breakpoints"], obj["pieces"],
                            decode_reals(lam) if isinstance(lam, list) else lam)
    if kind == "sum":
        terms = [function_from_json(algebra, t) for t in obj["terms"]]
        weights = obj.get("weights")
        if weights is not None:
            weights = [decode_reals(w) if isinstance(w, list) else w for w in weights]
        return Sum(terms, weights)
    if kind == "constant":
        return Constant(algebra, int(obj["d"]), decode_reals(obj["value"]))
    if kind == "extended":
        return Extended(function_from_json(algebra, obj["f"]),
                        StableConvexSet.from_json(algebra, obj["set"]))
    raise ValueError(f"unknown function kind {kind!r}")
