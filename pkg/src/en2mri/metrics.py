"""Image-quality and lung-function metrics.

PSNR and SSIM are evaluated over a region mask (the lung in the standard
pipeline): PSNR uses the masked MSE with peak 1.0, SSIM averages the usual
11x11 Gaussian-window map (sigma 1.5, K1=0.01, K2=0.03, dynamic range 1.0)
over the mask pixels.  Ventilation defects are segmented by deterministic
1D K-means over magnitudes inside the thoracic mask, with centroids
initialized at the (2k-1)/(2K) intensity quantiles; the lowest-centroid
cluster is the defect class.  SNR follows the Rician-noise correction
sqrt(2 - pi/2) on (mean_signal - mean_noise) / std_noise.
"""

import math

import numpy as np
from scipy import ndimage

from .errors import ContractViolation, DegenerateInputError

RICIAN_FACTOR = math.sqrt(2.0 - math.pi / 2.0)


def _as_mask(mask, shape, what):
    m = np.asarray(mask).astype(bool)
    if m.shape != shape:
        raise ContractViolation(f"{what}: mask {m.shape} does not match grid {shape}")
    return m


def _as_plane(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ContractViolation(f"expected a 2D real grid, got shape {a.shape}")
    return a


def psnr(ref_mag, rec_mag, mask):
    """Peak SNR in dB over the mask, peak fixed at 1.0.

    Returns math.inf when the masked MSE is zero."""
    ref = _as_plane(ref_mag)
    rec = _as_plane(rec_mag)
    if ref.shape != rec.shape:
        raise ContractViolation(f"psnr: shapes differ {ref.shape} vs {rec.shape}")
    m = _as_mask(mask, ref.shape, "psnr")
    if not m.any():
        raise ContractViolation("psnr: empty mask")
    diff = ref[m] - rec[m]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _gaussian_window(size=11, sigma=1.5):
    r = size // 2
    g = np.exp(-(np.arange(-r, r + 1) ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return g


def ssim_map(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Per-pixel SSIM map (Gaussian-weighted local statistics)."""
    a = _as_plane(a)
    b = _as_plane(b)
    if a.shape != b.shape:
        raise ContractViolation(f"ssim: shapes differ {a.shape} vs {b.shape}")
    g = _gaussian_window(window_size, sigma)

    def filt(img):
        out = ndimage.correlate1d(img, g, axis=0, mode="reflect")
        return ndimage.correlate1d(out, g, axis=1, mode="reflect")

    mu1 = filt(a)
    mu2 = filt(b)
    s11 = filt(a * a) - mu1 * mu1
    s22 = filt(b * b) - mu2 * mu2
    s12 = filt(a * b) - mu1 * mu2
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    return ((2 * mu1 * mu2 + c1) * (2 * s12 + c2)) / ((mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2))


def ssim(ref_mag, rec_mag, mask):
    """Mean of the SSIM map over the mask pixels."""
    ref = _as_plane(ref_mag)
    m = _as_mask(mask, ref.shape, "ssim")
    if not m.any():
        raise ContractViolation("ssim: empty mask")
    return float(ssim_map(ref_mag, rec_mag)[m].mean())


def snr_rician(mag, signal_mask, noise_mask):
    """(mean_signal - mean_noise) / std_noise, Rician-corrected."""
    a = _as_plane(mag)
    sm = _as_mask(signal_mask, a.shape, "snr_rician signal")
    nm = _as_mask(noise_mask, a.shape, "snr_rician noise")
    if not sm.any() or not nm.any():
        raise ContractViolation("snr_rician: masks must be non-empty")
    std_noise = float(a[nm].std())
    if std_noise == 0.0:
        raise DegenerateInputError("snr_rician: zero noise standard deviation")
    return (float(a[sm].mean()) - float(a[nm].mean())) / std_noise * RICIAN_FACTOR


def kmeans_defect(mag, thoracic_mask, k):
    """Segment defects by 1D Lloyd K-means over magnitudes inside the mask.

    Centroids start at the (2j-1)/(2K) quantiles, iteration stops at a fixed
    point or 100 rounds, ties go to the lower cluster index, and an emptied
    cluster keeps its centroid.  The lowest-centroid cluster is the defect;
    a near-constant intensity range (< 1e-6) yields an empty defect mask.
    """
    if k < 2:
        raise ContractViolation(f"kmeans_defect: k must be >= 2, got {k}")
    a = _as_plane(mag)
    m = _as_mask(thoracic_mask, a.shape, "kmeans_defect")
    if not m.any():
        raise ContractViolation("kmeans_defect: empty thoracic mask")
    vals = a[m]
    if float(vals.max() - vals.min()) < 1e-6:
        return np.zeros(a.shape, dtype=bool)
    q = (2 * np.arange(1, k + 1) - 1) / (2.0 * k)
    centroids = np.quantile(vals, q)
    for _ in range(100):
        labels = np.argmin(np.abs(vals[:, None] - centroids[None, :]), axis=1)
        new = centroids.copy()
        for j in range(k):
            sel = labels == j
            if sel.any():
                new[j] = vals[sel].mean()
        if np.array_equal(new, centroids):
            break
        centroids = new
    labels = np.argmin(np.abs(vals[:, None] - centroids[None, :]), axis=1)
    defect = np.zeros(a.shape, dtype=bool)
    defect[m] = labels == int(np.argmin(centroids))
    return defect


def vdp(defect_mask, thoracic_mask):
    """Ventilation defect percentage: 100 * |defect| / |thoracic|."""
    d = np.asarray(defect_mask).astype(bool)
    t = np.asarray(thoracic_mask).astype(bool)
    if d.shape != t.shape:
        raise ContractViolation(f"vdp: shapes differ {d.shape} vs {t.shape}")
    if not t.any():
        raise ContractViolation("vdp: empty thoracic mask")
    if np.any(d & ~t):
        raise ContractViolation("vdp: defect mask extends outside the thoracic mask")
    return 100.0 * float(d.sum()) / float(t.sum())


def dice(a, b):
    """Dice overlap 2|a&b| / (|a|+|b|); two empty masks score 1.0."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ContractViolation(f"dice: shapes differ {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def sample_snr(sample):
    """Rician SNR of a phantom-like sample: lung region vs the background
    outside the thoracic mask."""
    return snr_rician(np.abs(sample.image), sample.lung_mask, ~sample.thoracic_mask)


def snr_filter(samples, threshold=6.6):
    """Keep samples whose Rician SNR is >= threshold."""
    return [s for s in samples if sample_snr(s) >= threshold]


def pearson_r(a, b):
    """Pearson correlation of two sequences (nan when undefined)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation("pearson_r: length mismatch")
    if a.size < 2 or a.std() == 0 or b.std() == 0:
        return math.nan
    return float(np.corrcoef(a, b)[0, 1])
