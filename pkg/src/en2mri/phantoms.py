"""Synthetic complex lung-like phantoms and dataset assembly.

A phantom is built from three nested regions on a normalized coordinate
grid: a thoracic ellipse of moderate tissue intensity, two bright lung
ellipses with band-limited texture, and a few low-intensity defect blobs
inside the lungs.  The magnitude image is normalized so its maximum is
exactly 1, and a smooth random phase map (low-order polynomial plus
band-limited noise) makes the image genuinely complex.  Intensity classes
are kept well separated so 1D K-means segmentation can recover the planted
defects.

Everything here is a pure function of the seed: per-sample phantom, mask
and noise seeds are derived from a dataset master seed.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, ContractViolation
from .fourier import fft2_centered, ifft2_centered
from .kspace import SamplingMask, add_noise, make_mask

_TISSUE_LEVEL = 0.40
_LUNG_LEVEL = 0.72
_LUNG_TEXTURE = 0.05
_TISSUE_TEXTURE = 0.012
_DEFECT_TEXTURE = 0.012


@dataclass(eq=False)
class PhantomSample:
    """Ground truth: complex image (1,H,W) plus the region masks."""

    image: np.ndarray
    lung_mask: np.ndarray      # bool (H,W)
    thoracic_mask: np.ndarray  # bool (H,W)
    defect_mask: np.ndarray    # bool (H,W)
    seed: int


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _smooth_noise(rng, shape, sigma):
    raw = rng.normal(size=shape)
    sm = ndimage.gaussian_filter(raw, sigma)
    sd = sm.std()
    return sm / sd if sd > 0 else sm


def gen_phantom(seed, height, width, defect_count_range=(0, 4), defect_intensity=0.10):
    """Generate one deterministic phantom.

    defect_count_range is an inclusive (lo, hi) range for the number of
    planted low-intensity blobs; defect_intensity is their mean magnitude.
    """
    if height < 16 or width < 16:
        raise ConfigurationError(f"phantom dimensions must be >= 16, got {height}x{width}")
    lo, hi = defect_count_range
    if lo < 0 or hi < lo:
        raise ConfigurationError(f"bad defect_count_range {defect_count_range}")

    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.meshgrid(np.linspace(-1, 1, height), np.linspace(-1, 1, width), indexing="ij")

    thoracic = _ellipse(yy, xx, 0.0, 0.0,
                        0.86 + 0.05 * rng.uniform(-1, 1),
                        0.90 + 0.05 * rng.uniform(-1, 1))
    lung = np.zeros((height, width), dtype=bool)
    for side in (-1.0, 1.0):
        cx = side * (0.42 + 0.04 * rng.uniform(-1, 1))
        cy = 0.05 * rng.uniform(-1, 1)
        ry = 0.58 + 0.06 * rng.uniform(-1, 1)
        rx = 0.30 + 0.04 * rng.uniform(-1, 1)
        lung |= _ellipse(yy, xx, cy, cx, ry, rx)
    lung &= thoracic

    mag = np.zeros((height, width))
    tex = _smooth_noise(rng, (height, width), max(min(height, width) / 24.0, 1.0))
    mag[thoracic] = _TISSUE_LEVEL + _TISSUE_TEXTURE * tex[thoracic]
    mag[lung] = _LUNG_LEVEL + _LUNG_TEXTURE * tex[lung]

    defect = np.zeros((height, width), dtype=bool)
    n_defects = int(rng.integers(lo, hi + 1))
    lung_idx = np.flatnonzero(lung)
    for _ in range(n_defects):
        if lung_idx.size == 0:
            break
        center = lung_idx[rng.integers(0, lung_idx.size)]
        cy, cx = np.unravel_index(center, (height, width))
        r = rng.uniform(0.04, 0.10) * min(height, width)
        ratio = rng.uniform(0.7, 1.4)
        blob = _ellipse(yy * (height / 2.0), xx * (width / 2.0),
                        yy[cy, cx] * (height / 2.0), xx[cy, cx] * (width / 2.0),
                        r, r * ratio)
        defect |= blob & lung
    mag[defect] = defect_intensity + _DEFECT_TEXTURE * tex[defect]

    np.clip(mag, 0.0, None, out=mag)
    mag /= mag.max()

    phase = np.pi * (
        0.15 * rng.uniform(-1, 1)
        + 0.20 * rng.uniform(-1, 1) * xx
        + 0.20 * rng.uniform(-1, 1) * yy
        + 0.10 * rng.uniform(-1, 1) * xx * yy
        + 0.10 * rng.uniform(-1, 1) * xx * xx
        + 0.10 * rng.uniform(-1, 1) * yy * yy
    )
    phase = phase + 0.05 * _smooth_noise(rng, (height, width), max(min(height, width) / 16.0, 1.0))

    image = (mag * np.exp(1j * phase)).astype(np.complex128)[None]
    return PhantomSample(image, lung, thoracic, defect, int(seed))


def pad_to(img, height, width):
    """Zero-pad a grid to (height, width); extra rows/columns go to the
    bottom/right.  Works on (C,H,W) grids and on 2D masks."""
    img = np.asarray(img)
    h, w = img.shape[-2:]
    if height < h or width < w:
        raise ContractViolation(f"pad_to target {height}x{width} smaller than source {h}x{w}")
    pt = (height - h) // 2
    pl = (width - w) // 2
    pad = [(0, 0)] * (img.ndim - 2) + [(pt, height - h - pt), (pl, width - w - pl)]
    return np.pad(img, pad)


def crop_to(img, height, width):
    """Inverse of pad_to: crop the centered (height, width) region back out."""
    img = np.asarray(img)
    h, w = img.shape[-2:]
    if height > h or width > w:
        raise ContractViolation(f"crop_to target {height}x{width} larger than source {h}x{w}")
    pt = (h - height) // 2
    pl = (w - width) // 2
    return img[..., pt:pt + height, pl:pl + width]


@dataclass(eq=False)
class Sample:
    """One training/evaluation record: phantom truth, mask, and the
    zero-filled undersampled k-space input."""

    phantom: PhantomSample
    mask: SamplingMask
    y_u: np.ndarray

    @property
    def x(self):
        return self.phantom.image


def derive_seed(master_seed, *key):
    """Stable 64-bit child seed from a master seed and an integer key path."""
    return int(np.random.SeedSequence([int(master_seed), *map(int, key)]).generate_state(1, np.uint64)[0])


_STREAM_PHANTOM = 0
_STREAM_MASK = 1
_STREAM_NOISE = 2


def make_dataset(n, seed, height, width, af, center_fraction=0.08, noise_sigma=0.0,
                 defect_count_range=(0, 4), defect_intensity=0.10):
    """Generate n samples with per-sample seeds derived from the master seed.

    Noise (when requested) is added to the full k-space before masking, so
    unsampled entries stay exactly zero.
    """
    if n < 1:
        raise ConfigurationError(f"dataset size must be >= 1, got {n}")
    samples = []
    for i in range(n):
        phantom = gen_phantom(derive_seed(seed, i, _STREAM_PHANTOM), height, width,
                              defect_count_range, defect_intensity)
        mask = make_mask(height, width, af, center_fraction,
                         seed=derive_seed(seed, i, _STREAM_MASK))
        y = fft2_centered(phantom.image)
        if noise_sigma > 0:
            y = add_noise(y, noise_sigma, derive_seed(seed, i, _STREAM_NOISE))
        y_u = np.where(mask.bool_grid(), y, 0)
        samples.append(Sample(phantom, mask, y_u))
    return samples


def zero_filled(y_u):
    """Baseline reconstruction: inverse FFT of the zero-filled k-space."""
    return ifft2_centered(np.asarray(y_u))
