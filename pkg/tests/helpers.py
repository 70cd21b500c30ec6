"""Random instance builders shared by the test modules."""

import numpy as np

from l0opt.prob_core import ProbSpace, RandomVariable, SigmaAlgebra
from l0opt.rn_module import ModuleElement


def random_algebra(rng, n_min=2, n_max=8, atoms_max=4):
    """Random probability vector and random partition with nonempty atoms."""
    n = int(rng.integers(n_min, n_max + 1))
    p = rng.uniform(0.2, 1.0, n)
    space = ProbSpace(p / p.sum())
    n_atoms = int(rng.integers(1, min(atoms_max, n) + 1))
    labels = np.concatenate([np.arange(n_atoms), rng.integers(0, n_atoms, n - n_atoms)])
    rng.shuffle(labels)
    return SigmaAlgebra(space, [np.flatnonzero(labels == a).tolist() for a in range(n_atoms)])


def random_algebra_min_atom(rng, min_size=2, n_max=8, atoms_max=4):
    """Like :func:`random_algebra` but every atom holds at least ``min_size`` scenarios."""
    n = int(rng.integers(min_size, n_max + 1))
    p = rng.uniform(0.2, 1.0, n)
    space = ProbSpace(p / p.sum())
    n_atoms = int(rng.integers(1, min(atoms_max, n // min_size) + 1))
    labels = np.concatenate([np.repeat(np.arange(n_atoms), min_size),
                             rng.integers(0, n_atoms, n - min_size * n_atoms)])
    rng.shuffle(labels)
    return SigmaAlgebra(space, [np.flatnonzero(labels == a).tolist() for a in range(n_atoms)])


def random_element(rng, alg, d=1, scale=1.0):
    return ModuleElement(alg, scale * rng.standard_normal((alg.space.n, d)))


def random_rv(rng, alg, lo=-1.0, hi=1.0):
    return RandomVariable(alg, rng.uniform(lo, hi, alg.n_atoms))


def measurable(alg, per_atom):
    """Element that is constant on each atom, from an ``(n_atoms, d)`` array."""
    per_atom = np.asarray(per_atom, dtype=float)
    data = np.zeros((alg.space.n, per_atom.shape[1]))
    for k, atom in enumerate(alg.atoms):
        data[list(atom)] = per_atom[k]
    return ModuleElement(alg, data)


def atom_weights_oracle(alg, k, d):
    """Conditional probabilities of atom ``k`` repeated per coordinate."""
    atom = list(alg.atoms[k])
    q = alg.space.p[atom] / alg.space.p[atom].sum()
    return np.repeat(q, d)
