"""Random variational inequalities ``(M(u) - f)(v - u) + phi(v) - phi(u) >= 0``.

Operators are stable (they act atom by atom) and monotone in the conditional
L2 pairing.  A solution is a fixed point of ``u -> prox_{tau phi}(u - tau (M(u) - f))``.
The solver uses damped steps: forward-backward with ``tau = alpha / L^2`` when
``M`` is strongly monotone with modulus ``alpha``, and extragradient with
``tau = 1 / (2L)`` otherwise.  The undamped step-1 map is exposed as
:func:`fixed_point_map`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._solvers import _guard
from .convex_sets import StableConvexSet, certify_order_bounded, membership, sample_family
from .errors import ConvergenceError, HypothesisError
from .functions import Indicator, StableFunction, function_from_json
from .parallel import atom_map
from .prob_core import RandomVariable, SigmaAlgebra, _same_algebra, ext_add, ext_sub
from .rn_module import DualFunctional, ModuleElement, atom_weights, pairing

__all__ = ["MonotoneOperator", "LinearOperator", "GradientOperator", "SumOperator",
           "ShiftedOperator", "VISolution", "solve_vi", "solve_vi_over_set",
           "solve_operator_equation", "fixed_point_map", "residuals",
           "monotone_spot_check", "operator_from_json"]

POWER_ITERS = 50
POWER_RTOL = 1e-6
VI_TOL = 1e-9
VI_MAXITER = 1_000_000


class MonotoneOperator:
    """Stable monotone map from the module to its dual, one atom at a time.

    ``atom_apply(k, u)`` returns the representer of ``M(x)`` on atom ``k``
    in stacked coordinates.
    """

    kind = "abstract"
    verified = True

    def __init__(self, algebra: SigmaAlgebra, d: int, coercive: bool = False):
        self.algebra = algebra
        self.d = int(d)
        self.coercive = bool(coercive)
        self._L: dict = {}

    def weights(self, k):
        return atom_weights(self.algebra, k, self.d)

    def atom_apply(self, k: int, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def atom_linear(self, k: int) -> np.ndarray | None:
        """Matrix of the linear part on atom ``k`` when the operator is affine."""
        return None

    def atom_modulus(self, k: int) -> float:
        """Strong-monotonicity modulus ``alpha`` (0 when only monotone)."""
        return 0.0

    def atom_lipschitz(self, k: int) -> float:
        if k not in self._L:
            self._L[k] = self._estimate_lipschitz(k)
        return self._L[k]

    def _estimate_lipschitz(self, k: int) -> float:
        A = self.atom_linear(k)
        if A is None:
            raise NotImplementedError("no Lipschitz estimate for this operator")
        return _power_norm(A, self.weights(k), seed=k)

    def apply(self, x: ModuleElement) -> DualFunctional:
        _same_algebra(self, x)
        blocks = [self.atom_apply(k, x.block(k)) for k in range(self.algebra.n_atoms)]
        return DualFunctional.of(ModuleElement.from_blocks(self.algebra, self.d, blocks))

    __call__ = apply

    @property
    def strongly_monotone(self) -> bool:
        return all(self.atom_modulus(k) > 0 for k in range(self.algebra.n_atoms))

    def __add__(self, other: "MonotoneOperator") -> "SumOperator":
        return SumOperator([self, other])


def _weighted_matrix(A, w):
    s = np.sqrt(w)
    return s[:, None] * A / s[None, :]


def _power_norm(A, w, seed=0):
    """Weighted operator norm of ``A`` by power iteration on ``B^T B``."""
    B = _weighted_matrix(A, w)
    if not np.any(B):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(B.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(POWER_ITERS):
        z = B.T @ (B @ v)
        nz = np.linalg.norm(z)
        if nz == 0:
            break
        new = np.sqrt(nz)
        v = z / nz
        if abs(new - est) <= POWER_RTOL * new:
            est = new
            break
        est = new
    return float(est)


class LinearOperator(MonotoneOperator):
    """``M(x) = A_k x + shift`` on atom ``k``, in stacked coordinates.

    Monotonicity means the symmetric part of ``W A_k`` is positive
    semidefinite, ``W`` holding the conditional probabilities; this is
    checked at construction.
    """

    kind = "linear"

    def __init__(self, algebra, d, matrices, shift: ModuleElement | None = None,
                 coercive: bool = False):
        super().__init__(algebra, d, coercive)
        mats = [np.array(A, dtype=float) for A in matrices]
        if len(mats) != algebra.n_atoms:
            raise ValueError("need one matrix per atom")
        self._alpha = []
        for k, A in enumerate(mats):
            m = len(algebra.atoms[k]) * self.d
            if A.shape != (m, m):
                raise ValueError(f"atom {k}: matrix must be {m}x{m}")
            B = _weighted_matrix(A, self.weights(k))
            alpha = float(np.linalg.eigvalsh(0.5 * (B + B.T))[0])
            if alpha < -1e-10 * (1 + np.abs(B).max(initial=0)):
                raise ValueError(f"atom {k}: operator is not monotone")
            self._alpha.append(max(alpha, 0.0))
        self.matrices = tuple(mats)
        self.shift = shift

    @classmethod
    def identity(cls, algebra, d, scale=1.0):
        return cls(algebra, d, [scale * np.eye(len(a) * d) for a in algebra.atoms])

    @classmethod
    def from_bilinear(cls, algebra, d, forms, **kw):
        """Operator with ``(M(x), y) = y_A . B_k . x_A`` on each atom."""
        return cls(algebra, d, [np.asarray(B, dtype=float) / atom_weights(algebra, k, d)[:, None]
                                for k, B in enumerate(forms)], **kw)

    def atom_apply(self, k, u):
        out = self.matrices[k] @ u
        if self.shift is not None:
            out = out + self.shift.block(k)
        return out

    def atom_linear(self, k):
        return self.matrices[k]

    def atom_modulus(self, k):
        return self._alpha[k] if self._alpha[k] > 1e-12 else 0.0

    def to_json(self):
        out = {"kind": self.kind, "d": self.d, "matrices": [A.tolist() for A in self.matrices]}
        if self.shift is not None:
            out["shift"] = self.shift.data.tolist()
        return out


class GradientOperator(MonotoneOperator):
    """``M = f'`` for a smooth catalog function ``f``."""

    kind = "gradient"

    def __init__(self, f: StableFunction, coercive: bool = False):
        if not f.smooth:
            raise TypeError("gradient operator needs a smooth function")
        super().__init__(f.algebra, f.d, coercive)
        self.f = f
        self.verified = f.verified

    def atom_apply(self, k, u):
        return self.f.atom_grad(k, u)

    def atom_linear(self, k):
        parts = self.f.atom_parts(k)
        if parts.smooth:
            return None
        return 2.0 * parts.H / parts.w[:, None]

    def _estimate_lipschitz(self, k):
        return self.f.atom_parts(k).smooth_lipschitz()

    def atom_modulus(self, k):
        from ._solvers import weighted_lmin
        parts = self.f.atom_parts(k)
        alpha = 2.0 * weighted_lmin(parts.H, parts.w)
        return alpha if alpha > 1e-12 else 0.0

    def to_json(self):
        return {"kind": self.kind, "f": self.f.to_json()}


class SumOperator(MonotoneOperator):
    """Nonnegative combination of monotone operators."""

    kind = "sum"

    def __init__(self, ops: Sequence[MonotoneOperator], coeffs=None, coercive: bool = False):
        ops = list(ops)
        if not ops:
            raise ValueError("empty operator sum")
        for o in ops[1:]:
            _same_algebra(ops[0], o)
        super().__init__(ops[0].algebra, ops[0].d,
                         coercive or any(o.coercive for o in ops))
        self.coeffs = [1.0] * len(ops) if coeffs is None else [float(c) for c in coeffs]
        if any(c < 0 for c in self.coeffs):
            raise ValueError("operator sum coefficients must be nonnegative")
        self.ops = ops
        self.verified = all(o.verified for o in ops)

    def atom_apply(self, k, u):
        return sum(c * o.atom_apply(k, u) for c, o in zip(self.coeffs, self.ops))

    def atom_linear(self, k):
        mats = [o.atom_linear(k) for o in self.ops]
        if any(A is None for A in mats):
            return None
        return sum(c * A for c, A in zip(self.coeffs, mats))

    def _estimate_lipschitz(self, k):
        if self.atom_linear(k) is not None:
            return super()._estimate_lipschitz(k)
        return sum(c * o.atom_lipschitz(k) for c, o in zip(self.coeffs, self.ops))

    def atom_modulus(self, k):
        return sum(c * o.atom_modulus(k) for c, o in zip(self.coeffs, self.ops))

    def to_json(self):
        return {"kind": self.kind, "terms": [o.to_json() for o in self.ops],
                "coeffs": self.coeffs}


class ShiftedOperator(MonotoneOperator):
    """``x -> M(x + c)``."""

    kind = "shifted"

    def __init__(self, M: MonotoneOperator, c: ModuleElement):
        super().__init__(M.algebra, M.d, M.coercive)
        self.M, self.c = M, c
        self.verified = M.verified

    def atom_apply(self, k, u):
        return self.M.atom_apply(k, u + self.c.block(k))

    def atom_linear(self, k):
        return self.M.atom_linear(k)

    def atom_lipschitz(self, k):
        return self.M.atom_lipschitz(k)

    def atom_modulus(self, k):
        return self.M.atom_modulus(k)


def operator_from_json(algebra: SigmaAlgebra, obj: dict) -> MonotoneOperator:
    kind = obj["kind"]
    coercive = bool(obj.get("coercive", False))
    if kind == "linear":
        shift = obj.get("shift")
        return LinearOperator(algebra, int(obj["d"]), obj["matrices"],
                              None if shift is None else ModuleElement(algebra, shift),
                              coercive=coercive)
    if kind == "identity":
        op = LinearOperator.identity(algebra, int(obj["d"]), obj.get("scale", 1.0))
        op.coercive = coercive
        return op
    if kind == "gradient":
        return GradientOperator(function_from_json(algebra, obj["f"]), coercive)
    if kind == "sum":
        return SumOperator([operator_from_json(algebra, t) for t in obj["terms"]],
                           obj.get("coeffs"), coercive)
    raise ValueError(f"unknown operator kind {kind!r}")


def monotone_spot_check(M: MonotoneOperator, n_pairs: int = 50, seed: int = 0,
                        tol: float = 1e-9) -> bool:
    """``(M(u) - M(v))(u - v) >= -tol`` on seeded random pairs."""
    rng = np.random.default_rng(seed)
    n = M.algebra.space.n
    for _ in range(n_pairs):
        u = ModuleElement(M.algebra, rng.standard_normal((n, M.d)))
        v = ModuleElement(M.algebra, rng.standard_normal((n, M.d)))
        if np.any(pairing(M(u) - M(v), u - v).values < -tol):
            return False
    return True


# -------------------------------------------------------------- solutions


@dataclass(frozen=True)
class VISolution:
    u: ModuleElement
    direct_residual: RandomVariable | None
    minty_residual: RandomVariable | None
    iterations: tuple
    method: str
    gauge: float
    verified: bool = True

    def certified(self, tol: float = 1e-7) -> bool:
        return (self.direct_residual is not None
                and bool(np.all(self.direct_residual.values >= -tol))
                and bool(np.all(self.minty_residual.values >= -tol)))

    def to_json(self):
        out = {"u": self.u.to_json(), "iterations": list(self.iterations),
               "method": self.method, "gauge": self.gauge,
               "verified_hypotheses": self.verified}
        if self.direct_residual is not None:
            out["direct_residual"] = self.direct_residual.to_json()
            out["minty_residual"] = self.minty_residual.to_json()
        return out


def _atom_prox(phi, k, v, tau):
    return v if phi is None else phi.atom_prox(k, v, tau)


def fixed_point_map(M: MonotoneOperator, f: DualFunctional, phi: StableFunction | None,
                    u: ModuleElement, tau: float = 1.0) -> ModuleElement:
    """``prox_{tau phi}(u - tau (M(u) - f))``; solutions are exactly its fixed points."""
    blocks = [_atom_prox(phi, k, u.block(k) - tau * (M.atom_apply(k, u.block(k)) - f.block(k)),
                         tau) for k in range(M.algebra.n_atoms)]
    return ModuleElement.from_blocks(M.algebra, M.d, blocks)


def residuals(M: MonotoneOperator, f: DualFunctional, phi: StableFunction | None,
              u: ModuleElement, v_family: Sequence[ModuleElement]):
    """Worst values over ``v_family`` of the direct and the Minty inequality.

    Returns ``(direct, minty)`` random variables; both are ``>= 0`` at a
    solution when ``M`` is monotone.
    """
    n = M.algebra.n_atoms
    direct = np.full(n, np.inf)
    minty = direct.copy()
    Mu = M(u) - f
    phiu = phi.evaluate(u).values if phi is not None else np.zeros(n)
    for v in v_family:
        gap = ext_sub(phi.evaluate(v).values, phiu) if phi is not None else np.zeros(n)
        a = ext_add(pairing(Mu, v - u).values, gap)
        b = ext_add(pairing(M(v) - f, v - u).values, gap)
        direct, minty = np.minimum(direct, a), np.minimum(minty, b)
    return RandomVariable(M.algebra, direct), RandomVariable(M.algebra, minty)


def _vi_family(M, f, phi, u, seed, n_random):
    dom = None if phi is None else phi.domain()
    if dom is None:
        dom = StableConvexSet.whole(M.algebra, M.d)
    scale = max(1.0, float(np.max(np.abs(u.data), initial=0.0)))
    fam = sample_family(dom, n_random=n_random, seed=seed, anchor=u, step=1e-3 * scale)
    fam += sample_family(dom, n_random=0, seed=seed, anchor=u, step=scale)
    g = M(u) - f
    for s in (1e-4, 1e-2, 1.0):
        fam.append(dom.project(u - s * g))
    return fam


def solve_vi(M: MonotoneOperator, f: DualFunctional, phi: StableFunction | None = None, *,
             u0: ModuleElement | None = None, v0: ModuleElement | None = None,
             tol: float = VI_TOL, maxiter: int = VI_MAXITER, seed: int = 0,
             n_random: int = 100, certify: bool = True) -> VISolution:
    """Find ``u`` with ``(M(u) - f)(v - u) + phi(v) - phi(u) >= 0`` for every ``v``.

    ``phi = None`` means ``phi = 0``.  Iteration stops once the distance
    to the solution is bounded by ``tol`` (contraction estimate) for
    forward-backward, or the fixed-point residual is below ``tol`` for
    extragradient.  The reported ``gauge`` is the sup distance between
    ``u`` and its image under the damped fixed-point map.

    Raises
    ------
    HypothesisError
        ``M`` is not strongly monotone on an atom where ``dom(phi)`` is
        unbounded and no coercivity witness (``v0`` or the operator flag)
        was supplied.
    ConvergenceError, DivergenceError
        Iteration cap reached, or iterates exploded.
    """
    alg, d = M.algebra, M.d
    _same_algebra(M, f)
    if phi is not None:
        _same_algebra(M, phi)
    dom = None if phi is None else phi.domain()
    bounded = dom is not None and certify_order_bounded(dom).compact
    if not (bounded or M.strongly_monotone or M.coercive or v0 is not None):
        raise HypothesisError("solve_vi needs a bounded domain, strong monotonicity, "
                              "or a coercivity witness v0")
    if u0 is None:
        u0 = dom.feasible_point() if dom is not None else ModuleElement.zeros(alg, d)

    def solve(k):
        w = M.weights(k)
        fk = f.block(k)
        F = lambda v: M.atom_apply(k, v) - fk
        L = M.atom_lipschitz(k)
        alpha = M.atom_modulus(k)
        u = _atom_prox(phi, k, np.array(u0.block(k), dtype=float), 1.0)
        sw = float(np.sqrt(w.min()))
        if alpha > 0 and L > 0:
            tau = alpha / (L * L)
            q = float(np.sqrt(max(0.0, 1.0 - alpha * alpha / (L * L))))
            stop = tol * max(1.0 - q, 1e-12) * sw
            for it in range(1, maxiter + 1):
                new = _atom_prox(phi, k, u - tau * F(u), tau)
                _guard(new, it)
                step = float(np.sqrt(np.sum(w * (new - u) ** 2)))
                u = new
                if step <= stop:
                    return u, it, tau, "forward-backward"
        else:
            tau = 1.0 / (2.0 * L) if L > 0 else 1.0
            for it in range(1, maxiter + 1):
                mid = _atom_prox(phi, k, u - tau * F(u), tau)
                new = _atom_prox(phi, k, u - tau * F(mid), tau)
                _guard(new, it)
                res = float(np.max(np.abs(mid - u), initial=0.0))
                u = new
                if res <= tol:
                    return u, it, tau, "extragradient"
        raise ConvergenceError(f"VI iteration did not converge on atom {k}",
                               iterations=maxiter)

    out = atom_map(solve, range(alg.n_atoms))
    u = ModuleElement.from_blocks(alg, d, [o[0] for o in out])
    gauge = 0.0
    for k, (uk, _, tau, _) in enumerate(out):
        img = _atom_prox(phi, k, uk - tau * (M.atom_apply(k, uk) - f.block(k)), tau)
        gauge = max(gauge, float(np.max(np.abs(img - uk), initial=0.0)))
    direct = minty = None
    if certify:
        direct, minty = residuals(M, f, phi, u, _vi_family(M, f, phi, u, seed, n_random))
    verified = M.verified and (phi is None or phi.verified)
    methods = "+".join(sorted({o[3] for o in out}))
    return VISolution(u, direct, minty, tuple(int(o[1]) for o in out), methods, gauge,
                      verified)


def solve_vi_over_set(M: MonotoneOperator, f: DualFunctional, G: StableConvexSet,
                      **kwargs) -> VISolution:
    """``(M(u) - f)(v - u) >= 0`` for all ``v`` in ``G``, with ``u`` in ``G``.

    When the null element is outside ``G``, the problem is first moved by a
    feasible point ``c`` (solve for ``u - c`` over ``G - c``) and then shifted back.
    """
    zero = ModuleElement.zeros(G.algebra, G.d)
    if membership(G, zero):
        return solve_vi(M, f, Indicator(G), **kwargs)
    c = G.feasible_point()
    if kwargs.get("u0") is not None:
        kwargs["u0"] = kwargs["u0"] - c
    if kwargs.get("v0") is not None:
        kwargs["v0"] = kwargs["v0"] - c
    certify = kwargs.pop("certify", True)
    seed, n_random = kwargs.get("seed", 0), kwargs.get("n_random", 100)
    sol = solve_vi(ShiftedOperator(M, c), f, Indicator(G.translate(c)), certify=False,
                   **kwargs)
    u = sol.u + c
    direct = minty = None
    phi = Indicator(G)
    if certify:
        direct, minty = residuals(M, f, phi, u, _vi_family(M, f, phi, u, seed, n_random))
    return VISolution(u, direct, minty, sol.iterations, sol.method, sol.gauge, sol.verified)


def solve_operator_equation(M: LinearOperator, f: DualFunctional, alpha=None, *,
                            seed: int = 0, n_checks: int = 50) -> ModuleElement:
    """Unique ``u`` with ``M(u) = f`` for a strongly monotone linear ``M``.

    ``alpha`` (scalar or per atom) is the claimed modulus in
    ``(M(v), v) >= alpha ||v||^2``; it defaults to the computed one and is
    spot-checked on seeded random directions.
    """
    alg, d = M.algebra, M.d
    _same_algebra(M, f)
    rng = np.random.default_rng(seed)
    blocks = []
    for k in range(alg.n_atoms):
        A = M.atom_linear(k)
        if A is None:
            raise TypeError("operator equation solver needs a linear operator")
        w = M.weights(k)
        a_k = M.atom_modulus(k) if alpha is None else float(np.broadcast_to(
            np.asarray(alpha, dtype=float), (alg.n_atoms,))[k])
        if a_k <= 0:
            raise HypothesisError(f"atom {k}: operator is not strongly monotone")
        for _ in range(n_checks):
            v = rng.standard_normal(w.size)
            if np.sum(w * v * (A @ v)) < a_k * np.sum(w * v * v) * (1 - 1e-9):
                raise HypothesisError(f"atom {k}: coercivity spot check failed")
        rhs = f.block(k) - M.atom_apply(k, np.zeros(w.size))
        try:
            blocks.append(np.linalg.solve(A, rhs))
        except np.linalg.LinAlgError as exc:
            raise HypothesisError(f"atom {k}: singular operator matrix") from exc
    return ModuleElement.from_blocks(alg, d, blocks)
