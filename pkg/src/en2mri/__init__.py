"""Dual-domain complex CNN for undersampled MRI reconstruction.

The package is organized as:

    autodiff   complex tensors, reverse-mode gradients, Adam, lr schedule
    fourier    centered unitary 2D FFTs (graph-aware)
    kspace     sampling masks, forward model, data consistency, noise
    layers     complex conv, encoding-direction layers, FMU, E/F blocks
    network    full model, losses, training loop, checkpoints
    phantoms   synthetic complex lung phantoms and datasets
    metrics    PSNR, SSIM, Rician SNR, K-means defects, VDP, Dice
    data_io    EN2T tensor format and 16-bit PGM export
    cli        batch driver (gen-data / mask / train / recon / eval)
"""

from .autodiff import (AdamState, Node, adam_step, backward, lr_schedule,
                       no_grad)
from .data_io import export_pgm, read_en2t, write_en2t
from .errors import (ConfigurationError, ContractViolation,
                     DegenerateInputError, FormatError, NumericError)
from .fourier import fft2_centered, ifft2_centered
from .kspace import SamplingMask, add_noise, idc, kdc, make_mask, undersample
from .layers import (ComplexConvParams, En2LayerParams, FmuParams,
                     complex_conv2d, e_block_forward, en2_forward,
                     f_block_forward, fmu_forward, split_activation)
from .metrics import (dice, kmeans_defect, pearson_r, psnr, snr_filter,
                      snr_rician, ssim, vdp)
from .network import (NetworkConfig, NetworkParams, TrainConfig, build_network,
                      forward, load_checkpoint, loss_lw, loss_total,
                      reconstruct, save_checkpoint, train)
from .phantoms import (PhantomSample, Sample, crop_to, gen_phantom,
                       make_dataset, pad_to, zero_filled)

__version__ = "0.1.0"
