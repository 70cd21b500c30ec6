import numpy as np
import pytest
from scipy.optimize import minimize as sp_minimize

from l0opt.convex_sets import (Affine, Ball, Box, Halfspaces, Intersection, RandomInterval,
                               StableConvexSet, certify_order_bounded, default_duals,
                               essential_membership, extract_forward_combinations,
                               james_certify, membership, project, sample_family)
from l0opt.errors import InfeasibleError
from l0opt.prob_core import IndicatorSet, ProbSpace, RandomVariable, SigmaAlgebra, as_sup_distance
from l0opt.rn_module import DualFunctional, ModuleElement, cond_norm, pairing

from helpers import atom_weights_oracle, random_algebra, random_element


@pytest.fixture
def four():
    return SigmaAlgebra(ProbSpace.uniform(4), [[0, 1], [2, 3]])


def col(*v):
    return [[float(a)] for a in v]


def test_membership_examples(four):
    G = StableConvexSet.box(four, 1, 0.0, 1.0)
    assert membership(G, G.feasible_point())
    rep = membership(G, ModuleElement(four, col(2, 0.5, 0.5, 0.5)))
    assert not rep and rep.violating_atoms == [0]
    B = StableConvexSet.ball(four, 1, center=ModuleElement(four, col(1, 2, 3, 4)), radius=0.5)
    assert membership(B, ModuleElement(four, col(1, 2, 3, 4)))
    with pytest.raises(ValueError):
        membership(G, ModuleElement.zeros(four, 2))


def test_essential_membership_examples(four):
    G = StableConvexSet.box(four, 1, -1.0, 1.0)
    x = ModuleElement(four, col(5, 0, 0.5, 0.5))
    assert essential_membership(G, x).sorted() == [1]
    assert essential_membership(G, ModuleElement.zeros(four, 1)).sorted() == [0, 1]
    assert essential_membership(G, ModuleElement(four, col(5, 5, 5, 5))).sorted() == []
    # S(I_B x, G) = B^c u S(x, G)
    B = IndicatorSet(four, frozenset({0}))
    lhs = essential_membership(G, x.restrict(B))
    assert lhs == (B.complement() | essential_membership(G, x))
    with pytest.raises(ValueError):
        essential_membership(StableConvexSet.box(four, 1, 1.0, 2.0), x)


def test_project_examples():
    alg = SigmaAlgebra(ProbSpace.uniform(4), [[0, 1], [2, 3]])
    G = StableConvexSet.box(alg, 1, 0.0, 1.0)
    u = project(G, ModuleElement(alg, col(-1, 0.5, 2, 0.3)))
    assert u.data[:, 0].tolist() == [0, 0.5, 1, 0.3]
    assert project(G, u) == u
    single = SigmaAlgebra.full(ProbSpace.uniform(1))
    ball = StableConvexSet.ball(single, 1, 0.0, 1.0)
    assert project(ball, ModuleElement(single, col(3))).data[0, 0] == pytest.approx(1.0)


def _weighted_projection_oracle(desc_constraints, x, w):
    cons = [{"type": t, "fun": f} for t, f in desc_constraints]
    res = sp_minimize(lambda u: 0.5 * np.sum(w * (u - x) ** 2), x,
                      jac=lambda u: w * (u - x), constraints=cons, method="SLSQP",
                      options={"ftol": 1e-14, "maxiter": 1000})
    return res.x


def test_affine_projection_matches_kkt():
    rng = np.random.default_rng(4)
    for _ in range(30):
        m = int(rng.integers(2, 6))
        r = int(rng.integers(1, m))
        A, b = rng.standard_normal((r, m)), rng.standard_normal(r)
        w = rng.uniform(0.1, 1.0, m)
        w /= w.sum()
        x = rng.standard_normal(m)
        K = np.block([[np.diag(w), A.T], [A, np.zeros((r, r))]])
        sol = np.linalg.solve(K, np.concatenate([w * x, b]))
        assert Affine(A, b).project(x, w) == pytest.approx(sol[:m], abs=1e-10)


def test_intersection_projection_matches_slsqp():
    rng = np.random.default_rng(8)
    for _ in range(15):
        m = 3
        w = rng.uniform(0.2, 1.0, m)
        w /= w.sum()
        lo, hi = -rng.uniform(0.2, 1, m), rng.uniform(0.2, 1, m)
        a = rng.standard_normal(m)
        box, half = Box(lo, hi), Halfspaces(a[None, :], [0.1])
        inter = Intersection([box, half])
        x = 2 * rng.standard_normal(m)
        u = inter.project(x, w)
        oracle = _weighted_projection_oracle(
            [("ineq", lambda v: v - lo), ("ineq", lambda v: hi - v),
             ("ineq", lambda v: 0.1 - a @ v)], x, w)
        assert u == pytest.approx(oracle, abs=1e-6)
        assert inter.violation(u, w) <= 1e-9


def test_ball_and_box_intersection_projection():
    rng = np.random.default_rng(9)
    w = np.array([0.5, 0.5])
    inter = Intersection([Ball(np.zeros(2), 1.0), Box([0.2, -1], [1, 1])])
    for _ in range(10):
        x = 3 * rng.standard_normal(2)
        u = inter.project(x, w)
        oracle = _weighted_projection_oracle(
            [("ineq", lambda v: 1 - np.sum(w * v * v)), ("ineq", lambda v: v - [0.2, -1]),
             ("ineq", lambda v: [1, 1] - v)], x, w)
        assert u == pytest.approx(oracle, abs=1e-6)


def test_projection_variational_inequality_on_samples():
    rng = np.random.default_rng(10)
    for _ in range(10):
        alg = random_algebra(rng, n_max=5)
        G = StableConvexSet.box(alg, 2, -0.5, 0.5).intersect(StableConvexSet.ball(alg, 2, 0.0, 0.6))
        x = random_element(rng, alg, 2, 2.0)
        u = project(G, x)
        for v in sample_family(G, n_random=30, seed=1):
            assert np.all(pairing(x - u, v - u).values <= 1e-7)


def test_projection_is_stable_under_gluing(four):
    rng = np.random.default_rng(12)
    G = StableConvexSet.ball(four, 1, 0.0, 1.0)
    x, y = random_element(rng, four, 1, 3), random_element(rng, four, 1, 3)
    A = IndicatorSet(four, frozenset({1}))
    assert project(G, x.glue(A, y)) == project(G, x).glue(A, project(G, y))


def test_empty_descriptors_raise():
    with pytest.raises(InfeasibleError):
        Box([1.0], [0.0])
    with pytest.raises(InfeasibleError):
        Affine([[1.0, 1.0], [1.0, 1.0]], [0.0, 1.0])
    with pytest.raises(InfeasibleError):
        Halfspaces([[1.0], [-1.0]], [0.0, -1.0])


def test_certify_order_bounded_examples(four):
    zero, one = RandomVariable(four, [0, 0]), RandomVariable(four, [1, 1])
    assert certify_order_bounded(RandomInterval(zero, one)).compact
    cert = certify_order_bounded(RandomInterval(zero, RandomVariable(four, [1, np.inf])))
    assert not cert.compact and cert.witness[0] == 1
    hi = np.ones((4, 1))
    hi[2, 0] = np.inf
    cert = certify_order_bounded(StableConvexSet.box(four, 1, 0.0, hi))
    assert not cert.compact and cert.witness == (1, 2, 0, 1)
    assert certify_order_bounded(StableConvexSet.ball(four, 3, 0.0, 2.0)).compact


def test_james_examples(four):
    a, b = RandomVariable(four, [-1, 0]), RandomVariable(four, [2, 3])
    eta = DualFunctional(four, col(1, 1, 2, 2))
    cert = james_certify(RandomInterval(a, b), [eta])
    assert cert.compact
    assert np.allclose(cert.attainers[0].data[:, 0], [2, 2, 3, 3])
    c = DualFunctional(four, [[3.0, 4.0], [0.0, 1.0], [1.0, 1.0], [-2.0, 0.0]])
    cert = james_certify(StableConvexSet.ball(four, 2, 0.0, 1.0), [c])
    expect = ModuleElement(four, c.data).scale(RandomVariable(four, 1 / cond_norm(c).values))
    assert as_sup_distance(cert.attainers[0], expect) < 1e-12
    unbounded = RandomInterval(a, RandomVariable(four, [2, np.inf]))
    cert = james_certify(unbounded, [eta])
    assert not cert.compact and cert.offending == (0, 1)


def test_default_duals_are_seeded(four):
    d1 = default_duals(four, 2, count=10, seed=3)
    d2 = default_duals(four, 2, count=10, seed=3)
    assert len(d1) == 10 and all(a == b for a, b in zip(d1, d2))


def test_extraction_constant_sequence(four):
    c = ModuleElement(four, col(0.1, -0.2, 0.3, 0.0))
    fc = extract_forward_combinations([c] * 60, RandomVariable(four, [1, 1]), depth=20)
    assert fc.limit == c
    assert all(row == (k, k) for k, row in enumerate(fc.indices))


def test_extraction_alternating_sign():
    alg = SigmaAlgebra.full(ProbSpace.uniform(1))
    xs = [ModuleElement(alg, col((-1) ** n)) for n in range(100)]
    fc = extract_forward_combinations(xs, RandomVariable(alg, [1.0]), depth=30)
    assert fc.limit.data[0, 0] == -1.0
    assert all(row[0] % 2 == 1 for row in fc.indices)


def test_extraction_per_scenario_indices_differ():
    alg = SigmaAlgebra.full(ProbSpace.uniform(2))
    xs = [ModuleElement(alg, [[(-1.0) ** n], [1.0 / (n + 1)]]) for n in range(400)]
    fc = extract_forward_combinations(xs, RandomVariable(alg, [1.0, 1.0]), depth=8)
    assert fc.limit.data[0, 0] == -1.0
    assert abs(fc.limit.data[1, 0]) < 0.02
    assert any(row[0] != row[1] for row in fc.indices)


def test_extraction_receipts_and_errors(four):
    rng = np.random.default_rng(1)
    centers = rng.uniform(-0.5, 0.5, (2, 4, 1))
    xs = [ModuleElement(four, centers[j % 2] + 0.3 * 0.7 ** j * rng.uniform(-1, 1, (4, 1)))
          for j in range(200)]
    fc = extract_forward_combinations(xs, RandomVariable(four, [1, 1]), depth=40)
    assert fc.gauge <= 1e-6
    for k, (y, receipt) in enumerate(zip(fc.ys, fc.receipts)):
        assert all(l >= k for l in receipt)
        rebuilt = ModuleElement.zeros(four, 1)
        for l, A in receipt.items():
            rebuilt = xs[l].glue(A, rebuilt)
        assert rebuilt == y
    with pytest.raises(ValueError):
        extract_forward_combinations(xs, RandomVariable(four, [0.01, 0.01]), depth=5)
    with pytest.raises(ValueError):
        extract_forward_combinations(xs[:10], RandomVariable(four, [1, 1]), depth=40)


def test_sample_family_is_feasible():
    rng = np.random.default_rng(13)
    for _ in range(10):
        alg = random_algebra(rng, n_max=5)
        G = StableConvexSet.box(alg, 1, -1.0, 2.0).intersect(
            StableConvexSet.ball(alg, 1, 0.0, 1.5))
        for v in sample_family(G, n_random=20, seed=4, anchor=random_element(rng, alg)):
            assert membership(G, v, tol=1e-8)


def test_set_json_round_trip(four):
    G = StableConvexSet(four, 1, [Intersection([Box([0, 0], [1, np.inf]),
                                                Halfspaces([[1, 1]], [1.5])]),
                                  Affine([[1, -1]], [0.25])])
    H = StableConvexSet.from_json(four, G.to_json())
    x = ModuleElement(four, col(3, -1, 2, 0))
    assert project(H, x) == project(G, x)


def test_weights_are_conditional_probabilities():
    rng = np.random.default_rng(14)
    alg = random_algebra(rng)
    G = StableConvexSet.whole(alg, 2)
    for k in range(alg.n_atoms):
        assert G.weights(k) == pytest.approx(atom_weights_oracle(alg, k, 2))


def test_halfspace_system_projection_matches_slsqp():
    rng = np.random.default_rng(15)
    for _ in range(15):
        m, r = 4, int(rng.integers(2, 6))
        A = rng.standard_normal((r, m))
        b = rng.uniform(0.1, 1.0, r)
        w = rng.uniform(0.2, 1.0, m)
        w /= w.sum()
        x = 3 * rng.standard_normal(m)
        u = Halfspaces(A, b).project(x, w)
        oracle = _weighted_projection_oracle([("ineq", lambda v: b - A @ v)], x, w)
        assert u == pytest.approx(oracle, abs=1e-6)
        assert Halfspaces(A, b).violation(u, w) <= 1e-12


def test_ball_and_box_support_matches_slsqp():
    rng = np.random.default_rng(16)
    w = np.array([0.2, 0.3, 0.5])
    inter = Intersection([Ball(np.zeros(3), 1.0), Box([-0.3, -1, 0.1], [1, 0.4, 1])])
    for _ in range(10):
        g = rng.standard_normal(3)
        val, pt, ray = inter.support(g, w)
        res = sp_minimize(lambda v: -g @ v, inter.feasible_point(w), method="SLSQP",
                          constraints=[{"type": "ineq", "fun": lambda v: 1 - np.sum(w * v * v)}],
                          bounds=list(zip([-0.3, -1, 0.1], [1, 0.4, 1])),
                          options={"ftol": 1e-14, "maxiter": 500})
        assert ray is None and val == pytest.approx(-res.fun, abs=1e-6)
        assert inter.violation(pt, w) <= 1e-9
