"""Order-boundedness, James-type attainment, and forward-combination extraction.

A random interval is compact exactly when both endpoints are finite on every
atom.  A bounded sequence need not converge, but conditional convex
combinations of its tail do; each extracted point comes with the events that
rebuild it from tail terms.
"""

import numpy as np

from l0opt import (ModuleElement, ProbSpace, RandomInterval, RandomVariable, SigmaAlgebra,
                   certify_order_bounded, extract_forward_combinations, james_certify)
from l0opt.convex_sets import default_duals

alg = SigmaAlgebra(ProbSpace.uniform(4), [[0, 1], [2], [3]])
for hi in ([1.0, 2.0, 3.0], [1.0, np.inf, 3.0]):
    G = RandomInterval(RandomVariable(alg, [-1.0, -1.0, 0.0]), RandomVariable(alg, hi))
    order = certify_order_bounded(G)
    james = james_certify(G, default_duals(alg, 1, count=20, seed=0))
    print(f"upper {hi}: order-bounded {order.compact}, James {james.compact}")

rng = np.random.default_rng(3)
xs = [ModuleElement(alg, (-1.0) ** j * np.array([[0.5], [0.2], [0.7], [-0.4]])
                    + 0.3 ** j * rng.uniform(-1, 1, (4, 1))) for j in range(200)]
fc = extract_forward_combinations(xs, RandomVariable(alg, np.full(3, 2.0)), depth=30)
print("tail gauge    ", fc.gauge)
print("limit         ", np.round(fc.limit.data[:, 0], 6))
k = 5
print(f"y_{k} built from", {l: sorted(A.atoms) for l, A in fc.receipts[k].items()})
