"""Cartesian undersampling: masks, the forward model, data consistency, noise.

Masks select whole k-space columns (phase-encoding undersampling), with a
fully sampled block around the center column and the remaining columns drawn
without replacement from a variable-density law proportional to
(1 - |j - c| / c)**6 with c = width / 2.  Generation is deterministic per
seed via numpy's PCG64 stream.

Data consistency is hard replacement: predicted k-space values are replaced
by the measured ones wherever the mask sampled them.  This makes the layer a
projection (idempotent) and its gradient w.r.t. the prediction exactly the
complementary mask.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, make_op
from .errors import ConfigurationError, ContractViolation
from .fourier import fft2_centered, ifft2_centered


@dataclass(eq=False)
class SamplingMask:
    """Per-column binary k-space mask with acceleration metadata."""

    height: int
    width: int
    column_flags: np.ndarray  # uint8, length == width
    af_nominal: float
    center_columns: int
    seed: int = -1
    _bool_grid: np.ndarray = field(default=None, repr=False)

    def bool_grid(self):
        """Expand to a (height, width) boolean grid, constant down columns."""
        if self._bool_grid is None:
            flags = self.column_flags.astype(bool)
            self._bool_grid = np.broadcast_to(flags, (self.height, self.width)).copy()
        return self._bool_grid

    def u8_grid(self):
        return self.bool_grid().astype(np.uint8)

    def num_sampled(self):
        return int(self.column_flags.sum())


def _as_bool_grid(mask, shape_hw):
    """Accept a SamplingMask or any broadcastable 0/1 array."""
    if isinstance(mask, SamplingMask):
        grid = mask.bool_grid()
    else:
        grid = np.asarray(mask).astype(bool)
        if grid.ndim == 3 and grid.shape[0] == 1:
            grid = grid[0]
    if grid.shape != shape_hw:
        raise ContractViolation(f"mask grid {grid.shape} does not match data {shape_hw}")
    return grid


def make_mask(height, width, af, center_fraction=0.08, seed=0):
    """Build a variable-density Cartesian column mask.

    Exactly round(width / af) columns are sampled.  The floor(center_fraction
    * width) columns around width // 2 are always on; the rest are drawn
    without replacement with probability proportional to the density law.

    Raises ConfigurationError if the request is infeasible.
    """
    if af < 1:
        raise ConfigurationError(f"acceleration factor must be >= 1, got {af}")
    n_center = int(np.floor(center_fraction * width))
    if n_center < 1:
        raise ConfigurationError(
            f"center_fraction {center_fraction} keeps no column at width {width}")
    total = int(round(width / af))
    if total < n_center:
        raise ConfigurationError(
            f"round(width/af) = {total} is smaller than the {n_center} center columns")

    flags = np.zeros(width, dtype=np.uint8)
    if total >= width:
        flags[:] = 1
        return SamplingMask(height, width, flags, float(af), n_center, seed)

    c0 = width // 2
    start = c0 - n_center // 2
    flags[start:start + n_center] = 1

    candidates = np.flatnonzero(flags == 0)
    c = width / 2.0
    w = (1.0 - np.abs(candidates - c) / c) ** 6
    remaining = total - n_center
    if remaining > 0:
        positive = w > 0
        if remaining > int(positive.sum()):
            raise ConfigurationError(
                f"need {remaining} density-weighted columns but only {int(positive.sum())} have positive weight")
        rng = np.random.Generator(np.random.PCG64(seed))
        chosen = rng.choice(candidates, size=remaining, replace=False, p=w / w.sum())
        flags[chosen] = 1
    return SamplingMask(height, width, flags, float(af), n_center, seed)


def undersample(x, mask):
    """Forward model: centered FFT of the image with unsampled entries
    set to exactly zero."""
    x = np.asarray(x)
    grid = _as_bool_grid(mask, x.shape[-2:])
    y = fft2_centered(x)
    return np.where(grid, y, 0)


def kdc(k_pred, y_u, mask):
    """k-space data consistency: measured values win at sampled locations.

    k_pred may be a Node (graph-recording) or an ndarray; y_u is always
    treated as measured data, never differentiated.
    """
    if isinstance(k_pred, Node):
        grid = _as_bool_grid(mask, k_pred.value.shape[-2:])
        _check_kdc_shapes(k_pred.value, y_u)
        out = np.where(grid, y_u, k_pred.value).astype(k_pred.value.dtype)

        def bw(g):
            return (np.where(grid, 0, g),)

        return make_op(out, (k_pred,), bw, "kdc")
    k_pred = np.asarray(k_pred)
    grid = _as_bool_grid(mask, k_pred.shape[-2:])
    _check_kdc_shapes(k_pred, y_u)
    return np.where(grid, y_u, k_pred)


def _check_kdc_shapes(k_pred, y_u):
    y_u = np.asarray(y_u)
    if y_u.shape != k_pred.shape:
        raise ContractViolation(f"kdc: y_u {y_u.shape} does not match prediction {k_pred.shape}")


def idc(img, y_u, mask):
    """Image-domain data consistency: FFT, replace sampled entries, inverse FFT."""
    return ifft2_centered(kdc(fft2_centered(img), y_u, mask))


def add_noise(k, sigma, seed=0):
    """Add i.i.d. complex Gaussian noise N(0, sigma^2) per plane, seeded."""
    if sigma < 0:
        raise ContractViolation(f"noise sigma must be >= 0, got {sigma}")
    k = np.asarray(k)
    if sigma == 0:
        return k.copy()
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.normal(0.0, sigma, k.shape) + 1j * rng.normal(0.0, sigma, k.shape)
    return k + noise
