"""Train a small dual-domain network and reconstruct held-out phantoms.

Uses a reduced setup (24 phantoms, 12 epochs) so the demo finishes in well
under a minute; the acceptance suite runs the full smoke configuration.
Outputs land in demo_out/03/.
"""

from pathlib import Path

import numpy as np

from en2mri.data_io import export_pgm
from en2mri.metrics import psnr, ssim
from en2mri.network import (NetworkConfig, TrainConfig, reconstruct,
                            save_checkpoint, train)
from en2mri.phantoms import make_dataset, zero_filled

out = Path("demo_out/03")
out.mkdir(parents=True, exist_ok=True)

cfg = NetworkConfig(height=32, width=32, e_blocks=1, en2_layers=3, f_blocks=2,
                    fmus_per_block=2, growth_channels=4, en2_mode="freq")
tcfg = TrainConfig(epochs=12, batch_size=8, seed=1, lr_start=2e-3, lr_end=2e-3)

train_set = make_dataset(24, seed=11, height=32, width=32, af=4)
held_out = make_dataset(6, seed=99, height=32, width=32, af=4)

params, history = train(train_set, cfg, tcfg)
print(f"parameters: {params.num_parameters()} complex "
      f"({2 * params.num_parameters()} real)")
print("epoch loss:", " ".join(f"{v:.3f}" for v in history.train_loss))
save_checkpoint(out / "model.en2t", params, history)

rows = []
for i, s in enumerate(held_out):
    rec = reconstruct(params, s.y_u, s.mask)
    zf = zero_filled(s.y_u)
    ref = np.abs(s.x[0])
    lung = s.phantom.lung_mask
    rows.append((psnr(ref, np.abs(zf[0]), lung), psnr(ref, np.abs(rec[0]), lung),
                 ssim(ref, np.abs(rec[0]), lung)))
    if i == 0:
        export_pgm(ref, None, out / "truth.pgm")
        export_pgm(np.abs(zf[0]), None, out / "zero_filled.pgm")
        export_pgm(np.abs(rec[0]), None, out / "network.pgm")

zf_psnr = np.mean([r[0] for r in rows])
net_psnr = np.mean([r[1] for r in rows])
print(f"held-out lung PSNR: zero-filled {zf_psnr:.2f} dB, "
      f"network {net_psnr:.2f} dB ({net_psnr - zf_psnr:+.2f} dB)")
print(f"held-out lung SSIM (network): {np.mean([r[2] for r in rows]):.4f}")
print(f"checkpoint and PGMs in {out}/")
