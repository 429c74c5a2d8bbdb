"""Centered, unitary 2D Fourier transforms between image space and k-space.

Both directions are normalized with 1/sqrt(H*W) ("ortho"), so the transform
is unitary: Parseval holds exactly up to roundoff and the inverse is the
adjoint.  Centering places the zero-frequency sample at (H//2, W//2), which
is where the variable-density masks put the fully sampled block.  Transforms
act on the last two axes, so (C, H, W) grids are handled per channel, and
non-power-of-two sizes (e.g. 96x84) are supported.

Each transform accepts either a plain ndarray or an autodiff Node; with a
Node it records the graph.  Because the map is unitary and complex-linear,
the pullback of the forward transform is the inverse transform applied to
the upstream gradient, and vice versa.
"""

import numpy as np

from .autodiff import Node, make_op

_AXES = (-2, -1)


def _fft2c(a):
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(a, axes=_AXES), axes=_AXES, norm="ortho"), axes=_AXES)


def _ifft2c(a):
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(a, axes=_AXES), axes=_AXES, norm="ortho"), axes=_AXES)


def fft2_centered(img):
    """Image -> k-space, unitary and centered."""
    if isinstance(img, Node):
        out = _fft2c(img.value).astype(img.value.dtype)
        return make_op(out, (img,), lambda g: (_ifft2c(g).astype(g.dtype),), "fft2_centered")
    return _fft2c(np.asarray(img))


def ifft2_centered(k):
    """k-space -> image, exact inverse of fft2_centered."""
    if isinstance(k, Node):
        out = _ifft2c(k.value).astype(k.value.dtype)
        return make_op(out, (k,), lambda g: (_fft2c(g).astype(g.dtype),), "ifft2_centered")
    return _ifft2c(np.asarray(k))
