"""A short tour of the complex autodiff engine.

Builds a tiny graph on complex grids, runs the reverse pass, verifies one
coordinate against central finite differences by hand, and then lets Adam
drive a small least-squares problem to zero.
"""

import numpy as np

from en2mri.autodiff import (AdamState, adam_step, backward, l2_modulus_mean,
                             no_grad, param)
from en2mri.layers import complex_conv2d, init_conv, split_activation

rng = np.random.default_rng(0)
x = param(rng.normal(size=(1, 8, 8)) + 1j * rng.normal(size=(1, 8, 8)))
conv = init_conv(rng, 1, 1, 3, 3, padding="same")
target = rng.normal(size=(1, 8, 8)) + 1j * rng.normal(size=(1, 8, 8))


def make_loss():
    h = complex_conv2d(x, conv)
    h = split_activation(h, "tanh")
    return l2_modulus_mean(h, target)


loss = make_loss()
backward(loss)
print(f"loss = {loss.item():.6f}")
print(f"grad shapes: x {x.grad.shape}, weight {conv.weight.grad.shape}")

# one-coordinate finite-difference spot check on the real plane of x[0,3,3]
h = 1e-6
orig = x.value[0, 3, 3]
x.value[0, 3, 3] = orig + h
with no_grad():
    up = make_loss().item()
x.value[0, 3, 3] = orig - h
with no_grad():
    down = make_loss().item()
x.value[0, 3, 3] = orig
numeric = (up - down) / (2 * h)
print(f"dL/dRe(x[3,3]): analytic {x.grad[0, 3, 3].real:+.8f}, "
      f"numeric {numeric:+.8f}")

# Adam on a pure quadratic: minimize mean |p - c|^2
c = rng.normal(size=(1, 4, 4)) + 1j * rng.normal(size=(1, 4, 4))
p = param(np.zeros_like(c))
state = AdamState([p], learning_rate=0.1)
for step in range(200):
    p.grad = None
    backward(l2_modulus_mean(p, c))
    adam_step([p], [p.grad], state)
final = l2_modulus_mean(p, c).item()
print(f"Adam on |p - c|^2: loss after {state.step_count} steps = {final:.2e}")
