"""Phantoms, variable-density masks, and the undersampled forward model.

Generates a synthetic complex lung phantom, builds Cartesian column masks at
several acceleration factors, pushes the phantom through the undersampling
model, and writes PGM snapshots of everything under demo_out/01/.
"""

from pathlib import Path

import numpy as np

from en2mri.data_io import export_pgm, write_en2t
from en2mri.fourier import fft2_centered
from en2mri.kspace import make_mask, undersample
from en2mri.phantoms import gen_phantom, pad_to, zero_filled

out = Path("demo_out/01")
out.mkdir(parents=True, exist_ok=True)

# A 96x84 phantom, padded to 96x96 the way the acquisition pipeline would.
phantom = gen_phantom(seed=7, height=96, width=84, defect_count_range=(2, 4))
image = pad_to(phantom.image, 96, 96)
lung = pad_to(phantom.lung_mask, 96, 96).astype(bool)
print(f"phantom 96x84 -> padded {image.shape[1]}x{image.shape[2]}, "
      f"|x| in [{np.abs(image).min():.3f}, {np.abs(image).max():.3f}], "
      f"defect pixels: {int(phantom.defect_mask.sum())}")

export_pgm(np.abs(image), None, out / "truth.pgm")
export_pgm(np.log1p(np.abs(fft2_centered(image))), None, out / "kspace_log.pgm")

for af in (4, 6, 8):
    mask = make_mask(96, 96, af, center_fraction=0.08, seed=af)
    y_u = undersample(image, mask)
    zf = zero_filled(y_u)
    kept = mask.num_sampled()
    print(f"AF {af}: {kept}/96 columns sampled "
          f"({100 * kept / 96:.0f}%), zero-filled error "
          f"{np.linalg.norm(np.abs(zf) - np.abs(image)):.3f}")
    export_pgm(mask.u8_grid().astype(float), None, out / f"mask_af{af}.pgm")
    export_pgm(np.abs(zf), None, out / f"zero_filled_af{af}.pgm")
    write_en2t(mask.u8_grid(), out / f"mask_af{af}.en2t")

print(f"wrote images to {out}/")
