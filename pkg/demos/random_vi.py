"""A variational inequality solved atom by atom, with its residual certificates.

The operator is a strongly monotone linear map with a skew part, so it is not
the gradient of anything; the constraint is a conditional box.
"""

import numpy as np

from l0opt import (DualFunctional, Indicator, LinearOperator, ProbSpace, SigmaAlgebra,
                   StableConvexSet, as_sup_distance, solve_vi)
from l0opt.rn_module import ModuleElement

rng = np.random.default_rng(7)
alg = SigmaAlgebra(ProbSpace.uniform(6), [[0, 1], [2, 3, 4], [5]])
forms = []
for atom in alg.atoms:
    m = len(atom)
    B, S = rng.standard_normal((m, m)), rng.standard_normal((m, m))
    forms.append(B @ B.T + 0.5 * np.eye(m) + (S - S.T))
M = LinearOperator.from_bilinear(alg, 1, forms)
f = DualFunctional(alg, rng.standard_normal((6, 1)))
phi = Indicator(StableConvexSet.box(alg, 1, -0.5, 0.5))

sol = solve_vi(M, f, phi, n_random=40)
print("method        ", sol.method)
print("solution      ", np.round(sol.u.data[:, 0], 6))
print("direct  resid ", sol.direct_residual.values)
print("minty   resid ", sol.minty_residual.values)
print("gauge         ", sol.gauge)

other = solve_vi(M, f, phi, u0=ModuleElement(alg, rng.uniform(-3, 3, (6, 1))), certify=False)
print("start gap     ", as_sup_distance(sol.u, other.u))
