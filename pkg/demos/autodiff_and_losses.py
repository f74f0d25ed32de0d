"""
Autodiff core and segmentation losses
=====================================

Checks a composite op against central differences, then compares the
cross-entropy, focal and PolyLoss terms on a single pixel.
"""

import numpy as np

from laneforge import tensor as T
from laneforge.losses import LossConfig, cross_entropy, fl_taylor_truncated, focal_loss, poly_loss

# a conv -> relu -> pool -> sum graph, checked coordinate by coordinate in float64
rng = np.random.default_rng(0)
w = rng.standard_normal((4, 3, 3, 3))
check = T.finite_difference_check(lambda x: T.tsum(T.maxpool2(T.relu(T.conv2d(x, w)))), rng.standard_normal((3, 8, 8)))
print(f"conv/relu/pool: {check.checked} coordinates, worst relative error {check.max_rel_error:.2e}")

# one lane pixel predicted with probability q
for q in (0.1, 0.5, 0.9):
    h, y = np.array([q]), np.array([1])
    ce = cross_entropy(h, y).item()
    fl = focal_loss(h, y, epsilon=1.0).item()
    pl = poly_loss(h, y, LossConfig(alpha=1.0, gamma=1.0, epsilon=1.0)).item()
    print(f"q={q:.1f}  CE {ce:.4f}  focal {fl:.4f}  poly {pl:.4f}")

# the focal term is a power series in (1 - q); twelve terms already pin -ln q down
for q in (0.7, 0.9, 0.99):
    series = fl_taylor_truncated(q, 0.0, 12)
    print(f"q={q}: 12-term series {series:.9f} vs -ln q {-np.log(q):.9f}")
