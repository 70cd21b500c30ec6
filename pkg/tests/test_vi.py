import numpy as np
import pytest

from l0opt.convex_sets import Affine, StableConvexSet, project, sample_family
from l0opt.errors import HypothesisError
from l0opt.functions import CondNormPower, Indicator, Quadratic, SeparablePLQ
from l0opt.optimize import minimize
from l0opt.prob_core import IndicatorSet, ProbSpace, SigmaAlgebra, as_sup_distance
from l0opt.rn_module import DualFunctional, ModuleElement, cond_norm
from l0opt.vi import (GradientOperator, LinearOperator, SumOperator, fixed_point_map,
                      monotone_spot_check, operator_from_json, residuals, solve_operator_equation,
                      solve_vi, solve_vi_over_set)

from helpers import atom_weights_oracle, random_algebra, random_element
from oracles import weighted_saddle


def col(*v):
    return [[float(a)] for a in v]


@pytest.fixture
def four():
    return SigmaAlgebra(ProbSpace([0.1, 0.2, 0.3, 0.4]), [[0, 1], [2, 3]])


def spd_operator(rng, alg, d=1, skew=0.0):
    """Strongly monotone operator: bilinear form ``B + skew * S`` with ``B`` SPD."""
    forms = []
    for atom in alg.atoms:
        m = len(atom) * d
        B = rng.standard_normal((m, m))
        S = rng.standard_normal((m, m))
        forms.append(B @ B.T + 0.5 * np.eye(m) + skew * (S - S.T))
    return LinearOperator.from_bilinear(alg, d, forms), forms


def test_identity_with_box_is_clamp(four):
    f = DualFunctional(four, col(-2, 0.3, 5, 0.9))
    sol = solve_vi(LinearOperator.identity(four, 1), f,
                   Indicator(StableConvexSet.box(four, 1, 0.0, 1.0)))
    assert sol.u.data[:, 0] == pytest.approx([0, 0.3, 1, 0.9], abs=1e-9)
    assert sol.certified() and sol.gauge <= 1e-8


def test_identity_without_phi_returns_f(four):
    f = DualFunctional(four, col(1, 2, 3, 4))
    sol = solve_vi(LinearOperator.identity(four, 1), f)
    assert sol.u.data[:, 0] == pytest.approx([1, 2, 3, 4], abs=1e-9)


def test_affine_domain_matches_saddle_oracle():
    rng = np.random.default_rng(40)
    for _ in range(15):
        alg = random_algebra(rng, n_max=6)
        M, forms = spd_operator(rng, alg, skew=0.3)
        descs, fdata = [], rng.standard_normal((alg.space.n, 1))
        for atom in alg.atoms:
            m = len(atom)
            r = int(rng.integers(1, m + 1)) if m > 1 else 1
            descs.append(Affine(rng.standard_normal((min(r, m - 1) or 1, m)),
                                rng.standard_normal(min(r, m - 1) or 1)))
        G = StableConvexSet(alg, 1, descs)
        f = DualFunctional(alg, fdata)
        sol = solve_vi_over_set(M, f, G, n_random=20)
        for k, atom in enumerate(alg.atoms):
            w = atom_weights_oracle(alg, k, 1)
            expect = weighted_saddle(M.atom_linear(k), w, fdata[list(atom), 0],
                                     descs[k].A, descs[k].b)
            assert sol.u.block(k) == pytest.approx(expect, abs=1e-7)
        assert sol.certified()


def test_ball_projection_formula(four):
    f = DualFunctional(four, col(3, 4, 0.1, 0.2))
    G = StableConvexSet.ball(four, 1, 0.0, 1.0)
    sol = solve_vi_over_set(LinearOperator.identity(four, 1), f, G)
    fx = ModuleElement(four, f.data)
    norms = cond_norm(fx).values
    expect = fx.data[:, 0] / np.where(norms > 1, norms, 1.0)[[0, 0, 1, 1]]
    assert sol.u.data[:, 0] == pytest.approx(expect, abs=1e-8)


def test_translation_when_origin_is_outside(four):
    G = StableConvexSet.box(four, 1, 1.0, 2.0)
    f = DualFunctional(four, col(0, 1.5, 3, 1.2))
    sol = solve_vi_over_set(LinearOperator.identity(four, 1), f, G)
    assert sol.u.data[:, 0] == pytest.approx([1, 1.5, 2, 1.2], abs=1e-8)
    assert sol.certified()


def test_box_instance_against_grid(four):
    rng = np.random.default_rng(41)
    alg = SigmaAlgebra.trivial(ProbSpace([0.35, 0.65]))
    M, _ = spd_operator(rng, alg)
    f = DualFunctional(alg, rng.standard_normal((2, 1)))
    G = StableConvexSet.box(alg, 1, -0.5, 0.5)
    sol = solve_vi_over_set(M, f, G)
    grid = np.linspace(-0.5, 0.5, 201)
    u = sol.u
    worst = min(float(np.sum(alg.space.p * (M(u) - f).data[:, 0] * (np.array([a, b])
                                                                     - u.data[:, 0])))
                for a in grid for b in grid)
    assert worst >= -1e-7


def test_operator_equation_examples(four):
    g = DualFunctional(four, col(2, -4, 6, 1))
    u = solve_operator_equation(LinearOperator.identity(four, 1, 2.0), g)
    assert u.data[:, 0] == pytest.approx([1, -2, 3, 0.5])
    rng = np.random.default_rng(42)
    for skew in (0.0, 1.0):
        M, _ = spd_operator(rng, four, skew=skew)
        f = DualFunctional(four, rng.standard_normal((4, 1)))
        u = solve_operator_equation(M, f)
        for k in range(2):
            assert M.atom_linear(k) @ u.block(k) == pytest.approx(f.block(k), abs=1e-10)
        assert as_sup_distance(u, solve_vi(M, f).u) < 1e-8
    with pytest.raises(HypothesisError):
        solve_operator_equation(LinearOperator.identity(four, 1), g, alpha=5.0)


def test_two_starts_agree_and_gauge():
    rng = np.random.default_rng(43)
    for _ in range(10):
        alg = random_algebra(rng, n_max=6)
        M, _ = spd_operator(rng, alg, skew=0.5)
        f = DualFunctional(alg, rng.standard_normal((alg.space.n, 1)))
        phi = CondNormPower(alg, 1, 1.0, 0.3)
        a = solve_vi(M, f, phi, n_random=20)
        b = solve_vi(M, f, phi, u0=random_element(rng, alg, scale=5.0), certify=False)
        assert as_sup_distance(a.u, b.u) < 1e-7
        assert a.gauge <= 1e-8 and a.certified()
        assert as_sup_distance(a.u, fixed_point_map(M, f, phi, a.u, 0.05)) < 1e-8


def test_merely_monotone_uses_extragradient(four):
    skew = [np.array([[0.0, 1.0], [-1.0, 0.0]])] * 2
    M = LinearOperator.from_bilinear(four, 1, skew)
    assert not M.strongly_monotone
    f = DualFunctional(four, col(1, -1, 0.5, 2))
    with pytest.raises(HypothesisError):
        solve_vi(M, f)
    sol = solve_vi(M, f, Indicator(StableConvexSet.box(four, 1, -1.0, 1.0)))
    assert sol.method == "extragradient"
    assert sol.certified()


def test_residuals_detect_perturbation_and_vanish_at_v_equal_u(four):
    rng = np.random.default_rng(44)
    M, _ = spd_operator(rng, four)
    f = DualFunctional(four, rng.standard_normal((4, 1)))
    G = StableConvexSet.box(four, 1, -1.0, 1.0)
    phi = Indicator(G)
    sol = solve_vi(M, f, phi)
    d, m = residuals(M, f, phi, sol.u, [sol.u])
    assert d.values.tolist() == [0.0, 0.0] and m.values.tolist() == [0.0, 0.0]
    bad = project(G, sol.u + ModuleElement(four, np.full((4, 1), 0.3)))
    fam = sample_family(G, n_random=30, seed=0, anchor=bad, step=0.1) + [sol.u]
    d, _ = residuals(M, f, phi, bad, fam)
    assert np.any(d.values < -1e-6)


def test_gradient_operator_matches_minimize():
    rng = np.random.default_rng(45)
    for _ in range(5):
        alg = random_algebra(rng, n_max=5)
        c = random_element(rng, alg, scale=2.0)
        f1 = Quadratic.half_distance(c)
        f2 = SeparablePLQ(alg, 1, [-1.0, 1.0], [[0, -1, -0.5], [1, 0, 0], [0, 1, -0.5]])
        sol = solve_vi(GradientOperator(f1), DualFunctional.zeros(alg, 1), f2, n_random=20)
        res = minimize(f1 + f2, certify=False)
        assert as_sup_distance(sol.u, res.minimizer) < 1e-7


def test_gluing_invariance(four):
    rng = np.random.default_rng(46)
    M, _ = spd_operator(rng, four)
    f, g = (DualFunctional(four, rng.standard_normal((4, 1))) for _ in range(2))
    phi = Indicator(StableConvexSet.box(four, 1, -0.5, 0.5))
    A = IndicatorSet(four, frozenset({0}))
    fg = DualFunctional(four, ModuleElement(four, f.data).glue(A, ModuleElement(four, g.data)).data)
    lhs = solve_vi(M, fg, phi, certify=False).u
    rhs = solve_vi(M, f, phi, certify=False).u.glue(A, solve_vi(M, g, phi, certify=False).u)
    assert lhs == rhs


def test_monotonicity_is_checked(four):
    with pytest.raises(ValueError):
        LinearOperator(four, 1, [-np.eye(2), np.eye(2)])
    rng = np.random.default_rng(47)
    M, _ = spd_operator(rng, four, skew=2.0)
    assert monotone_spot_check(M)
    assert monotone_spot_check(SumOperator([M, GradientOperator(CondNormPower(four, 1, 2.0))]))


def test_operator_json_round_trip(four):
    rng = np.random.default_rng(48)
    M, _ = spd_operator(rng, four)
    N = operator_from_json(four, M.to_json())
    x = random_element(rng, four)
    assert np.allclose(N(x).data, M(x).data)
