"""
Checking gradients
==================

Compares backprop with central differences, first for single operators and
then for the whole 25-layer network with all four heads.
"""

import numpy as np

from disco import tensornet as tn
from disco.cli import gradcheck_network

rng = np.random.default_rng(0)

x = tn.parameter(rng.normal(size=(2, 6, 6, 3)), "x")
kernel = tn.parameter(rng.normal(size=(3, 3, 3, 4)), "kernel")
target = rng.normal(size=(2, 3, 3, 4))
report = tn.grad_check(lambda: tn.l2_loss(tn.conv3x3(x, kernel, stride=2), target), [x, kernel])
print("strided conv", report.max_rel_error, report.passed)

scale = tn.parameter(np.ones(4), "scale")
shift = tn.parameter(np.zeros(4), "shift")
h = tn.parameter(rng.normal(size=(4, 3, 3, 4)), "h")
state = tn.BatchNormState(4, np.float64)
report = tn.grad_check(lambda: tn.l2_loss(tn.batchnorm(h, scale, shift, state, True), target[:1].repeat(4, 0)),
                       [h, scale, shift])
print("batch norm", report.max_rel_error, report.passed)

# the whole objective in float64, dropout masks held fixed
for size in ("3-layer", "desk"):
    report, tol = gradcheck_network(size, num_checks=20)
    print(size, f"{report.max_rel_error:.2e}", "<", tol)
