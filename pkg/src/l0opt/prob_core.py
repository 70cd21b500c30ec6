"""Finite probability spaces, partitions, and random variables stored per atom.

A sub-sigma-algebra of a finite space is a partition of the scenario set into
atoms.  Every measurable quantity is stored once per atom, so a value that is
not constant on an atom cannot be built by accident.

Extended reals are IEEE floats (``inf``/``-inf``).  The conventions
``0 * (+-inf) = 0`` and ``+inf + (-inf) = +inf`` are enforced by
:func:`ext_mul` and :func:`ext_add`; plain numpy arithmetic would yield NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ProbSpace", "SigmaAlgebra", "RandomVariable", "IndicatorSet",
    "ext_add", "ext_mul", "ext_sub",
    "ess_sup", "ess_inf", "directed_sequence", "restrict_glue",
    "ky_fan_distance", "as_sup_distance",
    "encode_reals", "decode_reals",
]

WEIGHT_TOL = 1e-12


def ext_add(a, b):
    """Extended-real addition with ``+inf + (-inf) = +inf``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore"):
        out = a + b
    return np.where(np.isnan(out) & ~np.isnan(a) & ~np.isnan(b), np.inf, out)


def ext_sub(a, b):
    """``a - b`` as ``a + (-b)`` under the same convention."""
    return ext_add(a, -np.asarray(b, dtype=float))


def ext_mul(a, b):
    """Extended-real product with ``0 * (+-inf) = 0``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore"):
        out = a * b
    return np.where((a == 0) | (b == 0), 0.0, out)


@dataclass(frozen=True, eq=False)
class ProbSpace:
    """Finite scenario set with strictly positive weights.

    Weights are checked to sum to one within ``1e-12`` and then renormalized
    so that the sum is exactly the float nearest one.
    """

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float).ravel()
        if p.size == 0:
            raise ValueError("a probability space needs at least one scenario")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("scenario probabilities must be finite and > 0")
        total = p.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.p.size

    @classmethod
    def uniform(cls, n: int) -> "ProbSpace":
        return cls(np.full(n, 1.0 / n))

    def __eq__(self, other):
        return isinstance(other, ProbSpace) and np.array_equal(self.p, other.p)

    def __hash__(self):
        return hash(self.p.tobytes())

    def to_json(self) -> dict:
        return {"p": [float(v) for v in self.p]}

    @classmethod
    def from_json(cls, obj: dict) -> "ProbSpace":
        return cls(np.asarray(obj["p"], dtype=float))


class SigmaAlgebra:
    """A sub-sigma-algebra given by a partition of ``range(space.n)`` into atoms.

    Atoms are stored canonically (each block sorted, blocks ordered by least
    element) so two algebras over the same space compare equal exactly when
    they are the same partition.
    """

    def __init__(self, space: ProbSpace, atoms: Iterable[Iterable[int]]):
        blocks = [tuple(sorted(int(i) for i in b)) for b in atoms]
        if any(len(b) == 0 for b in blocks):
            raise ValueError("atoms must be nonempty")
        seen = sorted(i for b in blocks for i in b)
        if seen != list(range(space.n)):
            raise ValueError("atoms must be disjoint and cover every scenario")
        blocks.sort(key=lambda b: b[0])
        self.space = space
        self.atoms: tuple[tuple[int, ...], ...] = tuple(blocks)
        atom_of = np.empty(space.n, dtype=int)
        for k, b in enumerate(self.atoms):
            atom_of[list(b)] = k
        atom_of.setflags(write=False)
        self.atom_of = atom_of
        probs = np.array([space.p[list(b)].sum() for b in self.atoms])
        probs.setflags(write=False)
        self.atom_probs = probs

    @classmethod
    def full(cls, space: ProbSpace) -> "SigmaAlgebra":
        return cls(space, [[i] for i in range(space.n)])

    @classmethod
    def trivial(cls, space: ProbSpace) -> "SigmaAlgebra":
        return cls(space, [range(space.n)])

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def cond_weights(self, k: int) -> np.ndarray:
        """Conditional probabilities of the scenarios of atom ``k``."""
        idx = list(self.atoms[k])
        return self.space.p[idx] / self.atom_probs[k]

    def is_coarser_than(self, other: "SigmaAlgebra") -> bool:
        """True when every atom of ``other`` lies inside one atom of ``self``."""
        if self.space != other.space:
            return False
        return all(len({int(self.atom_of[i]) for i in b}) == 1 for b in other.atoms)

    def __eq__(self, other):
        return (isinstance(other, SigmaAlgebra) and self.space == other.space
                and self.atoms == other.atoms)

    def __hash__(self):
        return hash((self.space, self.atoms))

    def __repr__(self):
        return f"SigmaAlgebra(atoms={[list(b) for b in self.atoms]})"

    def to_json(self) -> dict:
        return {"atoms": [list(b) for b in self.atoms]}

    @classmethod
    def from_json(cls, space: ProbSpace, obj: dict) -> "SigmaAlgebra":
        return cls(space, obj["atoms"])


def encode_reals(values) -> list:
    """Floats to JSON-friendly values with ``"inf"``/``"-inf"`` sentinels."""
    out = []
    for v in np.asarray(values, dtype=float).ravel():
        if v == np.inf:
            out.append("inf")
        elif v == -np.inf:
            out.append("-inf")
        else:
            out.append(float(v))
    return out


def decode_reals(values) -> np.ndarray:
    def one(v):
        if isinstance(v, str):
            if v in ("inf", "+inf"):
                return np.inf
            if v == "-inf":
                return -np.inf
            raise ValueError(f"unknown real sentinel {v!r}")
        return float(v)
    return np.array([one(v) for v in values], dtype=float)


class RandomVariable:
    """An element of L0 or its extended version: one (extended) real per atom."""

    __array_priority__ = 100

    def __init__(self, algebra: SigmaAlgebra, values, finite: bool = False):
        vals = np.array(values, dtype=float).ravel()
        if vals.size != algebra.n_atoms:
            raise ValueError(
                f"expected {algebra.n_atoms} atom values, got {vals.size}")
        if np.any(np.isnan(vals)):
            raise ValueError("NaN is not an extended real")
        if finite and not np.all(np.isfinite(vals)):
            raise ValueError("finite random variable has infinite entries")
        vals.setflags(write=False)
        self.algebra = algebra
        self.values = vals

    @classmethod
    def constant(cls, algebra: SigmaAlgebra, c: float) -> "RandomVariable":
        return cls(algebra, np.full(algebra.n_atoms, float(c)))

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def on_scenarios(self) -> np.ndarray:
        """Expand to one value per scenario."""
        return self.values[self.algebra.atom_of]

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, RandomVariable):
            _same_algebra(self, other)
            return other.values
        return np.broadcast_to(np.asarray(other, dtype=float), self.values.shape)

    def __add__(self, other):
        return RandomVariable(self.algebra, ext_add(self.values, self._coerce(other)))

    __radd__ = __add__

    def __sub__(self, other):
        return RandomVariable(self.algebra, ext_sub(self.values, self._coerce(other)))

    def __rsub__(self, other):
        return RandomVariable(self.algebra, ext_sub(self._coerce(other), self.values))

    def __mul__(self, other):
        return RandomVariable(self.algebra, ext_mul(self.values, self._coerce(other)))

    __rmul__ = __mul__

    def __neg__(self):
        return RandomVariable(self.algebra, -self.values)

    def __abs__(self):
        return RandomVariable(self.algebra, np.abs(self.values))

    def __le__(self, other) -> bool:
        return bool(np.all(self.values <= self._coerce(other)))

    def __ge__(self, other) -> bool:
        return bool(np.all(self.values >= self._coerce(other)))

    def __eq__(self, other):
        if not isinstance(other, RandomVariable):
            return NotImplemented
        return self.algebra == other.algebra and np.array_equal(self.values, other.values)

    __hash__ = None

    def where_gt(self, other) -> "IndicatorSet":
        """The event ``(self > other)`` as an indicator set."""
        mask = self.values > self._coerce(other)
        return IndicatorSet(self.algebra, np.flatnonzero(mask))

    def where_le(self, other) -> "IndicatorSet":
        mask = self.values <= self._coerce(other)
        return IndicatorSet(self.algebra, np.flatnonzero(mask))

    def __repr__(self):
        return f"RandomVariable({self.values.tolist()})"

    def to_json(self) -> dict:
        return {"values": encode_reals(self.values)}

    @classmethod
    def from_json(cls, algebra: SigmaAlgebra, obj: dict) -> "RandomVariable":
        return cls(algebra, decode_reals(obj["values"]))


@dataclass(frozen=True, eq=False)
class IndicatorSet:
    """An event of the sub-sigma-algebra, given by the atoms it contains."""

    algebra: SigmaAlgebra
    atoms: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        atoms = frozenset(int(a) for a in self.atoms)
        if any(a < 0 or a >= self.algebra.n_atoms for a in atoms):
            raise ValueError("indicator set refers to a nonexistent atom")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def everything(cls, algebra: SigmaAlgebra) -> "IndicatorSet":
        return cls(algebra, frozenset(range(algebra.n_atoms)))

    @classmethod
    def empty(cls, algebra: SigmaAlgebra) -> "IndicatorSet":
        return cls(algebra, frozenset())

    def complement(self) -> "IndicatorSet":
        return IndicatorSet(self.algebra, frozenset(range(self.algebra.n_atoms)) - self.atoms)

    def __or__(self, other: "IndicatorSet") -> "IndicatorSet":
        _same_algebra(self, other)
        return IndicatorSet(self.algebra, self.atoms | other.atoms)

    def __and__(self, other: "IndicatorSet") -> "IndicatorSet":
        _same_algebra(self, other)
        return IndicatorSet(self.algebra, self.atoms & other.atoms)

    def __contains__(self, k) -> bool:
        return int(k) in self.atoms

    def __eq__(self, other):
        return (isinstance(other, IndicatorSet) and self.algebra == other.algebra
                and self.atoms == other.atoms)

    def __hash__(self):
        return hash((self.algebra, self.atoms))

    def mask(self) -> np.ndarray:
        """Boolean mask over atoms."""
        m = np.zeros(self.algebra.n_atoms, dtype=bool)
        m[sorted(self.atoms)] = True
        return m

    def indicator(self) -> RandomVariable:
        return RandomVariable(self.algebra, self.mask().astype(float))

    def probability(self) -> float:
        return float(self.algebra.atom_probs[self.mask()].sum())

    def sorted(self) -> list[int]:
        return sorted(self.atoms)


def _same_algebra(*objs):
    first = objs[0].algebra
    for o in objs[1:]:
        if o.algebra != first:
            raise ValueError("objects live on different sigma-algebras")


def ess_sup(family: Sequence[RandomVariable]) -> RandomVariable:
    """Essential supremum of a nonempty family (atomwise maximum)."""
    if len(family) == 0:
        raise ValueError("essential supremum of an empty family")
    _same_algebra(*family)
    return RandomVariable(family[0].algebra,
                          np.max(np.stack([h.values for h in family]), axis=0))


def ess_inf(family: Sequence[RandomVariable]) -> RandomVariable:
    """Essential infimum of a nonempty family (atomwise minimum)."""
    if len(family) == 0:
        raise ValueError("essential infimum of an empty family")
    _same_algebra(*family)
    return RandomVariable(family[0].algebra,
                          np.min(np.stack([h.values for h in family]), axis=0))


def directed_sequence(family: Sequence[RandomVariable],
                      upward: bool = True) -> list[RandomVariable]:
    """Monotone selection from a directed family attaining its sup (or inf).

    Returns members ``a_1 <= a_2 <= ...`` of ``family`` whose last element
    equals ``ess_sup(family)``.  For every new member ``h`` an element above
    ``a_k v h`` is looked up in the family; ``ValueError`` is raised if none
    exists, i.e. the family is not directed.
    """
    if len(family) == 0:
        raise ValueError("empty family")
    _same_algebra(*family)
    sign = 1.0 if upward else -1.0
    vals = [sign * h.values for h in family]
    seq = [0]
    for j in range(1, len(family)):
        target = np.maximum(vals[seq[-1]], vals[j])
        for i, v in enumerate(vals):
            if np.all(v >= target):
                if i != seq[-1]:
                    seq.append(i)
                break
        else:
            raise ValueError("family is not directed")
    return [family[i] for i in seq]


def restrict_glue(A: IndicatorSet, x, y):
    """``I_A x + I_{A^c} y`` for random variables or module elements."""
    _same_algebra(A, x, y)
    if isinstance(x, RandomVariable):
        return RandomVariable(x.algebra, np.where(A.mask(), x.values, y.values))
    return x.glue(A, y)


def _deviations(x, y):
    """Per-cell deviations and cell probabilities for the two gauges."""
    if isinstance(x, RandomVariable):
        _same_algebra(x, y)
        return np.abs(ext_sub(x.values, y.values)), x.algebra.atom_probs
    if x.algebra.space != y.algebra.space or x.d != y.d:
        raise ValueError("module elements are incompatible")
    return np.linalg.norm(x.data - y.data, axis=1), x.algebra.space.p


def ky_fan_distance(x, y) -> float:
    """Ky Fan metric ``inf{eps > 0 : P(|x - y| > eps) <= eps}``.

    Exact: on each interval between consecutive distinct deviation levels the
    tail probability is constant, so the smallest admissible ``eps`` on that
    interval is ``max(level, tail)`` when it falls inside the interval.
    """
    dev, prob = _deviations(x, y)
    if not np.all(np.isfinite(dev)):
        raise ValueError("Ky Fan distance needs finite random variables")
    levels = np.unique(np.concatenate([[0.0], dev]))
    best = np.inf
    for j, lo in enumerate(levels):
        hi = levels[j + 1] if j + 1 < levels.size else np.inf
        tail = float(prob[dev > lo].sum())
        cand = max(lo, tail)
        if cand < hi or (hi == np.inf):
            best = min(best, cand)
            break
    return float(best)


def as_sup_distance(x, y) -> float:
    """Uniform (almost sure) gauge ``max |x - y|`` over atoms or scenarios."""
    dev, _ = _deviations(x, y)
    return float(dev.max()) if dev.size else 0.0
