"""Conditional mean-variance portfolios on a two-period scenario tree.

The first period reveals one of two market states (the atoms of ``F``); inside
each state three equally likely payoffs remain.  The investor wants a unit
price under the pricing kernel ``r`` and a target conditional mean ``w``.
"""

import numpy as np

from l0opt import ModuleElement, ProbSpace, RandomVariable, SigmaAlgebra, hansen_richard

space = ProbSpace([0.1, 0.2, 0.2, 0.15, 0.15, 0.2])
alg = SigmaAlgebra(space, [[0, 1, 2], [3, 4, 5]])
r = ModuleElement(alg, [[0.8], [1.0], [1.3], [0.9], [1.0], [1.1]])

for target in (0.9, 1.0, 1.2):
    w = RandomVariable(alg, [target, target])
    res = hansen_richard(r, w)
    print(f"target mean {target:.1f}")
    print("  payoff     ", np.round(res.minimizer.data[:, 0], 4))
    print("  variance   ", np.round(res.value.values, 6))

# the two-scenario case with prices (0.9, 1.1) and target 1: the riskless payoff
two = SigmaAlgebra.trivial(ProbSpace.uniform(2))
res = hansen_richard(ModuleElement(two, [[0.9], [1.1]]), RandomVariable(two, [1.0]))
print("riskless case", res.minimizer.data[:, 0], "variance", res.value.values[0])
