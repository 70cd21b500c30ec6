"""The random normed module ``L0(E, R^d)`` over ``L0(F)`` on a finite space.

An element stores one ``d``-vector per scenario.  Everything measurable with
respect to the base algebra (conditional expectations, conditional norms,
pairings) comes back per atom.

Inside one atom the scenarios are "stacked" into a single vector of length
``len(atom) * d``; per-atom solvers work in that coordinate system with the
diagonal weight vector returned by :func:`atom_weights`, so that the
conditional inner product on the atom is ``sum(w * u * v)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .prob_core import IndicatorSet, RandomVariable, SigmaAlgebra, _same_algebra

__all__ = [
    "ModuleElement", "DualFunctional", "atom_weights",
    "cond_expectation", "cond_norm", "global_norm", "l0_convex_combination",
    "concatenate", "pairing", "inner", "dual_norm",
    "Decomposition", "fin_gen_decompose", "RANK_RTOL",
]

RANK_RTOL = 1e-10


def atom_weights(algebra: SigmaAlgebra, k: int, d: int) -> np.ndarray:
    """Conditional weights of atom ``k`` repeated over the ``d`` coordinates."""
    return np.repeat(algebra.cond_weights(k), d)


class ModuleElement:
    """One real ``d``-vector per scenario, over the base algebra ``algebra``."""

    __array_priority__ = 100

    def __init__(self, algebra: SigmaAlgebra, data):
        arr = np.array(data, dtype=float)
        n = algebra.space.n
        if arr.ndim == 1:
            arr = arr.reshape(n, -1) if arr.size % n == 0 and arr.size else arr
        if arr.ndim != 2 or arr.shape[0] != n:
            raise ValueError(f"data must have {n} scenario rows, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("module elements must be finite")
        arr.setflags(write=False)
        self.algebra = algebra
        self.data = arr

    @classmethod
    def zeros(cls, algebra: SigmaAlgebra, d: int) -> "ModuleElement":
        return cls(algebra, np.zeros((algebra.space.n, d)))

    @classmethod
    def from_blocks(cls, algebra: SigmaAlgebra, d: int,
                    blocks: Sequence[np.ndarray]) -> "ModuleElement":
        """Assemble from stacked per-atom vectors."""
        out = np.empty((algebra.space.n, d))
        for atom, blk in zip(algebra.atoms, blocks):
            out[list(atom)] = np.asarray(blk, dtype=float).reshape(len(atom), d)
        return cls(algebra, out)

    @property
    def space(self):
        return self.algebra.space

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def block(self, k: int) -> np.ndarray:
        """Stacked coordinates of atom ``k``."""
        return self.data[list(self.algebra.atoms[k])].ravel()

    def blocks(self) -> list[np.ndarray]:
        return [self.block(k) for k in range(self.algebra.n_atoms)]

    def with_algebra(self, algebra: SigmaAlgebra) -> "ModuleElement":
        if algebra.space != self.algebra.space:
            raise ValueError("different probability spaces")
        return ModuleElement(algebra, self.data)

    def _check(self, other: "ModuleElement"):
        if not isinstance(other, ModuleElement):
            raise TypeError(f"expected ModuleElement, got {type(other).__name__}")
        _same_algebra(self, other)
        if other.d != self.d:
            raise ValueError("dimension mismatch")

    def __add__(self, other):
        self._check(other)
        return ModuleElement(self.algebra, self.data + other.data)

    def __sub__(self, other):
        self._check(other)
        return ModuleElement(self.algebra, self.data - other.data)

    def __neg__(self):
        return ModuleElement(self.algebra, -self.data)

    def __mul__(self, c):
        if isinstance(c, RandomVariable):
            return self.scale(c)
        return ModuleElement(self.algebra, self.data * float(c))

    __rmul__ = __mul__

    def scale(self, xi: RandomVariable) -> "ModuleElement":
        """Module action of a finite ``xi`` in ``L0(F)``."""
        _same_algebra(self, xi)
        if not xi.is_finite:
            raise ValueError("module scalars must be finite")
        return ModuleElement(self.algebra, self.data * xi.on_scenarios()[:, None])

    def glue(self, A: IndicatorSet, other: "ModuleElement") -> "ModuleElement":
        """``I_A self + I_{A^c} other``."""
        self._check(other)
        on = A.mask()[self.algebra.atom_of]
        return ModuleElement(self.algebra, np.where(on[:, None], self.data, other.data))

    def restrict(self, A: IndicatorSet) -> "ModuleElement":
        """``I_A self``."""
        return self.glue(A, ModuleElement.zeros(self.algebra, self.d))

    def is_measurable(self, tol: float = 0.0) -> bool:
        """Whether the element is constant on every atom of its base algebra."""
        for atom in self.algebra.atoms:
            rows = self.data[list(atom)]
            if np.max(np.abs(rows - rows[0]), initial=0.0) > tol:
                return False
        return True

    def __eq__(self, other):
        if not isinstance(other, ModuleElement):
            return NotImplemented
        return self.algebra == other.algebra and np.array_equal(self.data, other.data)

    __hash__ = None

    def __repr__(self):
        return f"ModuleElement(d={self.d}, data={self.data.tolist()})"

    def to_json(self) -> dict:
        return {"d": self.d, "data": self.data.tolist()}

    @classmethod
    def from_json(cls, algebra: SigmaAlgebra, obj: dict) -> "ModuleElement":
        data = np.asarray(obj["data"], dtype=float).reshape(algebra.space.n, -1)
        if data.shape[1] != int(obj.get("d", data.shape[1])):
            raise ValueError("declared d does not match data")
        return cls(algebra, data)


class DualFunctional(ModuleElement):
    """A continuous module homomorphism ``E -> L0(F)`` stored by its representer.

    ``f(x) = E[<f, x> | F]``.
    """

    def __call__(self, x: ModuleElement) -> RandomVariable:
        return pairing(self, x)

    @classmethod
    def of(cls, x: ModuleElement) -> "DualFunctional":
        return cls(x.algebra, x.data)

    @classmethod
    def zeros(cls, algebra: SigmaAlgebra, d: int) -> "DualFunctional":
        return cls(algebra, np.zeros((algebra.space.n, d)))


def row_norms(data: np.ndarray) -> np.ndarray:
    """Euclidean norm of each row, scaled first so huge entries do not overflow."""
    peak = np.max(np.abs(data), axis=1)
    safe = np.where(peak > 0, peak, 1.0)
    return peak * np.linalg.norm(data / safe[:, None], axis=1)


def cond_expectation(x: ModuleElement) -> np.ndarray:
    """``E[x | F]``, one ``d``-vector per atom (shape ``(n_atoms, d)``)."""
    alg = x.algebra
    p = alg.space.p
    out = np.zeros((alg.n_atoms, x.d))
    np.add.at(out, alg.atom_of, p[:, None] * x.data)
    return out / alg.atom_probs[:, None]


def cond_norm(x: ModuleElement, p: float = 2.0) -> RandomVariable:
    """Conditional ``L^p`` norm ``E[|x|^p | F]^{1/p}``; ``p = inf`` gives the atom max.

    ``|x|`` is the Euclidean norm of each scenario vector.
    """
    p = float(p)
    if not p >= 1.0:
        raise ValueError(f"conditional norm exponent must be >= 1, got {p}")
    alg = x.algebra
    mag = row_norms(x.data)
    if p == np.inf:
        out = np.zeros(alg.n_atoms)
        np.maximum.at(out, alg.atom_of, mag)
        return RandomVariable(alg, out)
    # scale by the atom max so large exponents do not overflow
    peak = np.zeros(alg.n_atoms)
    np.maximum.at(peak, alg.atom_of, mag)
    safe = np.where(peak > 0, peak, 1.0)
    ratio = mag / safe[alg.atom_of]
    acc = np.zeros(alg.n_atoms)
    np.add.at(acc, alg.atom_of, alg.space.p * ratio ** p)
    return RandomVariable(alg, peak * (acc / alg.atom_probs) ** (1.0 / p))


def global_norm(x: ModuleElement, inner_p: float = 2.0, outer_p: float = 2.0) -> float:
    """``(integral of ||x||_inner^outer dP)^{1/outer}`` with ``||x||`` the conditional norm."""
    outer_p = float(outer_p)
    if not outer_p >= 1.0:
        raise ValueError(f"outer exponent must be >= 1, got {outer_p}")
    local = cond_norm(x, inner_p).values
    if outer_p == np.inf:
        return float(local.max())
    probs = x.algebra.atom_probs
    return float(np.sum(probs * local ** outer_p) ** (1.0 / outer_p))


def l0_convex_combination(xi: RandomVariable, x: ModuleElement,
                          y: ModuleElement) -> ModuleElement:
    """``xi x + (1 - xi) y`` for ``0 <= xi <= 1`` in ``L0(F)``."""
    x._check(y)
    _same_algebra(x, xi)
    if not (np.all(xi.values >= 0) and np.all(xi.values <= 1)):
        raise ValueError("convex weight must lie in [0, 1] on every atom")
    w = xi.on_scenarios()[:, None]
    return ModuleElement(x.algebra, w * x.data + (1.0 - w) * y.data)


def concatenate(partition: Sequence[IndicatorSet],
                xs: Sequence[ModuleElement]) -> ModuleElement:
    """The unique ``g`` with ``I_{A_k} g = I_{A_k} x_k`` for a partition ``(A_k)``."""
    if len(partition) != len(xs) or not xs:
        raise ValueError("need one element per partition block")
    alg = xs[0].algebra
    for x in xs[1:]:
        xs[0]._check(x)
    count = np.zeros(alg.n_atoms, dtype=int)
    for A in partition:
        if A.algebra != alg:
            raise ValueError("partition lives on a different algebra")
        count += A.mask()
    if np.any(count != 1):
        raise ValueError("blocks must partition the atoms (overlap or gap found)")
    out = np.empty_like(xs[0].data)
    for A, x in zip(partition, xs):
        on = A.mask()[alg.atom_of]
        out[on] = x.data[on]
    return ModuleElement(alg, out)


def pairing(f: ModuleElement, x: ModuleElement) -> RandomVariable:
    """Random inner product ``E[<f, x> | F]``."""
    f._check(x)
    alg = x.algebra
    acc = np.zeros(alg.n_atoms)
    np.add.at(acc, alg.atom_of, alg.space.p * np.einsum("ij,ij->i", f.data, x.data))
    return RandomVariable(alg, acc / alg.atom_probs)


inner = pairing


def dual_norm(f: DualFunctional) -> RandomVariable:
    """Norm of a functional on the conditional ``L^2`` module (its representer's norm).

    Other exponents are not covered: only the representer is stored.
    """
    return cond_norm(f, 2.0)


@dataclass(frozen=True)
class Decomposition:
    """Rank partition of a finitely generated submodule.

    ``ranks[k]`` is the rank on atom ``k``; ``parts[i]`` collects the atoms of
    rank ``i``; ``bases[k]`` lists generator indices spanning the module there.
    """

    ranks: tuple[int, ...]
    parts: tuple[IndicatorSet, ...]
    bases: tuple[tuple[int, ...], ...]


def fin_gen_decompose(generators: Sequence[ModuleElement],
                      rtol: float = RANK_RTOL) -> Decomposition:
    """Split ``span{p_1..p_n}`` into free pieces of constant rank.

    Generators must be measurable for the base algebra.  On each atom the
    rank counts singular values above ``rtol`` times the largest one; the basis
    is picked greedily by Gram-Schmidt pivoting on the largest residual.
    """
    if not generators:
        raise ValueError("need at least one generator")
    alg = generators[0].algebra
    for g in generators:
        generators[0]._check(g)
        if not g.is_measurable(tol=1e-12):
            raise ValueError("generators must be constant on every atom")
    n_gen = len(generators)
    ranks, bases = [], []
    for atom in alg.atoms:
        mat = np.stack([g.data[atom[0]] for g in generators], axis=1)
        sv = np.linalg.svd(mat, compute_uv=False)
        r = int(np.sum(sv > rtol * sv[0])) if sv.size and sv[0] > 0 else 0
        ranks.append(r)
        bases.append(tuple(_greedy_pivots(mat, r)))
    parts = tuple(IndicatorSet(alg, frozenset(k for k, r in enumerate(ranks) if r == i))
                  for i in range(n_gen + 1))
    return Decomposition(tuple(ranks), parts, tuple(bases))


def _greedy_pivots(mat: np.ndarray, r: int) -> list[int]:
    resid = mat.astype(float).copy()
    chosen: list[int] = []
    for _ in range(r):
        norms = np.linalg.norm(resid, axis=0)
        norms[chosen] = -1.0
        j = int(np.argmax(norms))
        chosen.append(j)
        q = resid[:, j] / norms[j]
        resid -= np.outer(q, q @ resid)
    return sorted(chosen)
