"""
The saturation cost map
=======================

Every connection gets a cost from the sigmoid activation it carries.
Activations near 0.5 are cheap, saturated ones (near 0 or 1) cost almost 1.
"""
import numpy as np

from isingdrop import CostMapParams, gaussian_cost
from isingdrop.ising import connection_activations

h = np.linspace(0, 1, 21)
cost = gaussian_cost(h)
for a, c in zip(h, cost):
    print(f"{a:4.2f} {c:.6f} " + "#" * int(round(40 * c)))

# a wider Gaussian is more forgiving
wide = gaussian_cost(h, CostMapParams(sigma2=0.05))
print("\nsigma2=0.05 at h=0.3:", round(float(wide[6]), 4), "vs default", round(float(cost[6]), 4))

# per-connection activations use the batch mean of the source unit times the weight
mean_prev = np.array([0.05, 0.5, 0.95])
w = np.array([[-3.0, 0.0, 3.0]] * 3)
print("\nconnection activations:\n", connection_activations(mean_prev, w).round(3))
print("costs:\n", gaussian_cost(connection_activations(mean_prev, w)).round(3))
