import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l0opt.prob_core import (IndicatorSet, ProbSpace, RandomVariable, SigmaAlgebra,
                             as_sup_distance, decode_reals, directed_sequence, encode_reals,
                             ess_inf, ess_sup, ext_add, ext_mul, ky_fan_distance,
                             restrict_glue)

from helpers import random_algebra


@pytest.fixture
def two_atoms():
    space = ProbSpace.uniform(4)
    return SigmaAlgebra(space, [[0, 1], [2, 3]])


def test_space_rejects_zero_and_bad_sum():
    with pytest.raises(ValueError):
        ProbSpace([0.5, 0.5, 0.0])
    with pytest.raises(ValueError):
        ProbSpace([0.5, 0.6])
    sp = ProbSpace([0.3, 0.7 + 1e-13])
    assert sp.p.sum() == pytest.approx(1.0, abs=1e-15)


def test_partition_must_cover_disjointly():
    sp = ProbSpace.uniform(3)
    with pytest.raises(ValueError):
        SigmaAlgebra(sp, [[0, 1], [1, 2]])
    with pytest.raises(ValueError):
        SigmaAlgebra(sp, [[0], [1]])
    assert SigmaAlgebra(sp, [[2, 1], [0]]) == SigmaAlgebra(sp, [[0], [1, 2]])


def test_extended_conventions():
    assert ext_mul(0.0, np.inf) == 0.0
    assert ext_mul(0.0, -np.inf) == 0.0
    assert ext_add(np.inf, -np.inf) == np.inf
    assert ext_add(1.0, 2.0) == 3.0


def test_random_variable_arithmetic_uses_conventions(two_atoms):
    x = RandomVariable(two_atoms, [np.inf, 1.0])
    y = RandomVariable(two_atoms, [-np.inf, 2.0])
    assert (x + y).values.tolist() == [np.inf, 3.0]
    z = RandomVariable(two_atoms, [0.0, 2.0]) * x
    assert z.values.tolist() == [0.0, 2.0]
    with pytest.raises(ValueError):
        RandomVariable(two_atoms, [np.inf, 0.0], finite=True)
    with pytest.raises(ValueError):
        RandomVariable(two_atoms, [1.0])


def test_ess_sup_examples(two_atoms):
    a = RandomVariable(two_atoms, [1, 0])
    b = RandomVariable(two_atoms, [0, 1])
    assert ess_sup([a, b]).values.tolist() == [1, 1]
    assert ess_sup([a]).values.tolist() == a.values.tolist()
    fam = [RandomVariable(two_atoms, v) for v in ([1, 2], [3, -1], [2, 2])]
    assert ess_sup(fam).values.tolist() == [3, 2]
    assert ess_inf(fam).values.tolist() == [1, -1]
    with pytest.raises(ValueError):
        ess_sup([])
    other = SigmaAlgebra.full(ProbSpace.uniform(4))
    with pytest.raises(ValueError):
        ess_sup([a, RandomVariable(other, [0, 0, 0, 0])])


def test_directed_sequence(two_atoms):
    a = RandomVariable(two_atoms, [1, 0])
    b = RandomVariable(two_atoms, [0, 1])
    top = RandomVariable(two_atoms, [1, 1])
    seq = directed_sequence([a, b, top])
    assert seq[-1].values.tolist() == [1, 1]
    for s, t in zip(seq, seq[1:]):
        assert s <= t
    with pytest.raises(ValueError):
        directed_sequence([a, b])


def test_restrict_glue_examples(two_atoms):
    x = RandomVariable(two_atoms, [5, 5])
    y = RandomVariable(two_atoms, [0, 0])
    everything = IndicatorSet.everything(two_atoms)
    nothing = IndicatorSet.empty(two_atoms)
    assert restrict_glue(everything, x, y).values.tolist() == [5, 5]
    assert restrict_glue(nothing, x, y).values.tolist() == [0, 0]
    A = IndicatorSet(two_atoms, frozenset({0}))
    assert restrict_glue(A, x, y).values.tolist() == [5, 0]


def _ky_fan_bisection(dev, prob):
    lo, hi = 0.0, max(1.0, float(dev.max()))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if prob[dev > mid].sum() <= mid:
            hi = mid
        else:
            lo = mid
    return hi


def test_ky_fan_examples():
    one = SigmaAlgebra.trivial(ProbSpace.uniform(1))
    assert ky_fan_distance(RandomVariable(one, [0.3]), RandomVariable(one, [0.0])) == \
        pytest.approx(0.3)
    two = SigmaAlgebra.full(ProbSpace.uniform(2))
    x, y = RandomVariable(two, [1, 0]), RandomVariable(two, [0, 0])
    assert ky_fan_distance(x, y) == pytest.approx(0.5)
    assert ky_fan_distance(x, x) == 0.0
    with pytest.raises(ValueError):
        ky_fan_distance(RandomVariable(two, [np.inf, 0]), y)


def test_ky_fan_matches_bisection_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        alg = random_algebra(rng)
        x = RandomVariable(alg, rng.exponential(0.5, alg.n_atoms))
        y = RandomVariable(alg, np.zeros(alg.n_atoms))
        dev = np.abs(x.values)
        assert ky_fan_distance(x, y) == pytest.approx(_ky_fan_bisection(dev, alg.atom_probs),
                                                      abs=1e-12)


def test_as_sup_distance_examples():
    three = SigmaAlgebra.full(ProbSpace.uniform(3))
    x = RandomVariable(three, [0.2, 0.7, 0.1])
    z = RandomVariable(three, [0, 0, 0])
    assert as_sup_distance(x, z) == pytest.approx(0.7)
    assert as_sup_distance(x, x) == 0.0


def test_indicator_set_algebra(two_atoms):
    A = IndicatorSet(two_atoms, frozenset({0}))
    assert (A | A.complement()) == IndicatorSet.everything(two_atoms)
    assert (A & A.complement()) == IndicatorSet.empty(two_atoms)
    assert A.probability() == pytest.approx(0.5)
    assert A.mask().tolist() == [True, False]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.one_of(st.floats(-1e6, 1e6), st.sampled_from([np.inf, -np.inf])),
                min_size=1, max_size=6))
def test_real_encoding_round_trip(values):
    assert decode_reals(encode_reals(values)).tolist() == [float(v) for v in values]


def test_json_round_trip(two_atoms):
    x = RandomVariable(two_atoms, [np.inf, -2.5])
    sp = ProbSpace.from_json(two_atoms.space.to_json())
    alg = SigmaAlgebra.from_json(sp, two_atoms.to_json())
    assert alg == two_atoms
    assert RandomVariable.from_json(alg, x.to_json()).values.tolist() == [np.inf, -2.5]
