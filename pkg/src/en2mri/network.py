"""Full reconstruction network: k-space completion stage + image refinement
stage, the dual-domain loss, the training loop, and checkpointing.

The k-space stage is a chain of data-consistent blocks built from
encoding-direction layers (or, for ablations, shape-preserving complex
convolutions with matched parameter budgets).  Its output passes through the
inverse FFT into a chain of image blocks made of feature-strengthening units.
Every block ends in hard data consistency, so the final image's k-space always
agrees with the measured data at sampled locations, and a network with all
parameters at zero reduces exactly to the zero-filled reconstruction.

Both loss terms are weighted sums of mean complex-modulus error (L1) and mean
squared modulus error (L2), applied in k-space and in the image domain with
equal weight.
"""

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import (AdamState, Node, add, adam_step, backward, lr_schedule,
                       no_grad, scale, l1_modulus_mean, l2_modulus_mean)
from .data_io import read_en2t, write_en2t
from .errors import ConfigurationError, ContractViolation, FormatError, NumericError
from .fourier import fft2_centered, ifft2_centered
from .kspace import SamplingMask
from .layers import (ComplexConvParams, En2LayerParams, FmuParams,
                     e_block_forward, f_block_forward, init_conv,
                     init_en2_layer, init_fmu)

_STREAM_SHUFFLE = 101
_STREAM_NOISE = 102


@dataclass
class NetworkConfig:
    """Architecture hyperparameters.

    e_blocks / en2_layers size the k-space stage, f_blocks / fmus_per_block /
    growth_channels the image stage.  en2_mode selects row-wise ("freq",
    1 x W kernels) or column-wise ("phase", H x 1) line convolutions.
    kspace_kernel switches the k-space stage between encoding-direction
    layers ("en2") and conventional complex convolutions ("square_3",
    "square_5", ..., "rect_3x5", "dilated_3x3_r2") behind the same interface;
    kspace_channels sets the hidden width of the conv variants (None picks
    the width whose parameter count best matches the en2 stage).
    """

    height: int
    width: int
    e_blocks: int = 1
    en2_layers: int = 5
    f_blocks: int = 15
    fmus_per_block: int = 5
    growth_channels: int = 8
    en2_mode: str = "freq"
    kspace_kernel: str = "en2"
    kspace_channels: int | None = None
    l1_weight: float = 1.0
    precision: int = 64

    def validate(self):
        for name in ("e_blocks", "en2_layers", "f_blocks", "fmus_per_block", "growth_channels"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.height < 1 or self.width < 1:
            raise ConfigurationError("height and width must be positive")
        if self.en2_mode not in ("freq", "phase"):
            raise ConfigurationError(f"en2_mode must be 'freq' or 'phase', got {self.en2_mode!r}")
        if self.l1_weight < 0:
            raise ConfigurationError(f"l1_weight must be >= 0, got {self.l1_weight}")
        if self.precision not in (32, 64):
            raise ConfigurationError(f"precision must be 32 or 64, got {self.precision}")
        if self.kspace_kernel != "en2":
            parse_kernel_spec(self.kspace_kernel)
        if self.kspace_channels is not None and self.kspace_channels < 1:
            raise ConfigurationError("kspace_channels must be >= 1 when given")
        return self

    @property
    def dtype(self):
        return np.complex128 if self.precision == 64 else np.complex64

    @property
    def line_length(self):
        return self.width if self.en2_mode == "freq" else self.height


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 10
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    seed: int = 0
    noise_sigma: float = 0.0

    def validate(self):
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.noise_sigma < 0:
            raise ConfigurationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        return self


@dataclass
class NetworkParams:
    """All learnable values plus the structure needed to apply them."""

    config: NetworkConfig
    init_seed: int
    kspace_blocks: list            # per block: list of En2LayerParams | ComplexConvParams
    image_blocks: list             # per block: (list of FmuParams, final ComplexConvParams)
    flat: list = field(default_factory=list)  # parameter Nodes in canonical order

    def num_parameters(self):
        """Complex parameter count (each entry = 2 real parameters)."""
        return int(sum(p.value.size for p in self.flat))

    def zero_grads(self):
        for p in self.flat:
            p.grad = None

    def set_values(self, arrays):
        if len(arrays) != len(self.flat):
            raise ContractViolation("set_values: wrong number of arrays")
        for p, a in zip(self.flat, arrays):
            if a.shape != p.value.shape:
                raise ContractViolation(f"set_values: {a.shape} vs {p.value.shape}")
            p.value = np.ascontiguousarray(a, dtype=p.value.dtype)

    def value_copies(self):
        return [p.value.copy() for p in self.flat]


def parse_kernel_spec(spec):
    """'square_N' | 'rect_AxB' | 'dilated_AxB_rN' -> (kh, kw, dilation)."""
    m = re.fullmatch(r"square_(\d+)", spec)
    if m:
        n = int(m.group(1))
        return n, n, 1
    m = re.fullmatch(r"rect_(\d+)x(\d+)", spec)
    if m:
        return int(m.group(1)), int(m.group(2)), 1
    m = re.fullmatch(r"dilated_(\d+)x(\d+)_r(\d+)", spec)
    if m:
        return int(m.group(1)), int(m.group(2)), int(m.group(3))
    raise ConfigurationError(f"unknown kspace_kernel spec {spec!r}")


def en2_stage_param_count(cfg):
    """Complex parameters in one en2 k-space block: Q * (L*L + L)."""
    line = cfg.line_length
    return cfg.en2_layers * (line * line + line)


def conv_stage_param_count(q, kh, kw, channels):
    """Complex parameters in a conv k-space block with hidden width channels."""
    taps = kh * kw
    if q == 1:
        return taps + 1
    first = taps * channels + channels
    mid = (q - 2) * (taps * channels * channels + channels)
    last = taps * channels + 1
    return first + mid + last


def matched_conv_channels(cfg):
    """Hidden width whose conv-stage count best matches the en2 stage."""
    kh, kw, _ = parse_kernel_spec(cfg.kspace_kernel)
    target = en2_stage_param_count(cfg)
    return min(range(1, 513),
               key=lambda f: abs(conv_stage_param_count(cfg.en2_layers, kh, kw, f) - target))


def build_network(cfg, seed):
    """Initialize all parameters deterministically from the seed."""
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    dtype = cfg.dtype
    flat = []

    def track(*nodes):
        flat.extend(nodes)

    kspace_blocks = []
    for b in range(cfg.e_blocks):
        layers = []
        if cfg.kspace_kernel == "en2":
            for q in range(cfg.en2_layers):
                lp = init_en2_layer(rng, cfg.en2_mode, cfg.line_length, dtype,
                                    name=f"kspace.{b}.{q}")
                track(lp.kernels, lp.bias)
                layers.append(lp)
        else:
            kh, kw, dil = parse_kernel_spec(cfg.kspace_kernel)
            hidden = cfg.kspace_channels or matched_conv_channels(cfg)
            plan = [1] + [hidden] * (cfg.en2_layers - 1) + [1]
            for q in range(cfg.en2_layers):
                cp = init_conv(rng, plan[q], plan[q + 1],
                               kh, kw, padding="same", dilation=dil, dtype=dtype,
                               name=f"kspace.{b}.{q}")
                track(cp.weight, cp.bias)
                layers.append(cp)
            # Anchor the stage at the zero-fill map, mirroring the identity
            # anchoring of the en2 variant: zero output before consistency
            # means the block initially passes the measured data through.
            layers[-1].weight.value[:] = 0
        kspace_blocks.append(layers)

    image_blocks = []
    for m in range(cfg.f_blocks):
        fmus = []
        ch = 1
        for r in range(cfg.fmus_per_block):
            fp = init_fmu(rng, ch, cfg.growth_channels, dtype, name=f"image.{m}.fmu{r}")
            track(fp.residual_conv.weight, fp.residual_conv.bias,
                  fp.dense_conv.weight, fp.dense_conv.bias)
            fmus.append(fp)
            ch += cfg.growth_channels
        final = init_conv(rng, ch, 1, 3, 3, padding="same", dtype=dtype,
                          name=f"image.{m}.final")
        # Zero fusion weights: each image block starts as the identity (skip
        # connection + data consistency) and learns a residual correction.
        final.weight.value[:] = 0
        track(final.weight, final.bias)
        image_blocks.append((fmus, final))

    return NetworkParams(cfg, int(seed), kspace_blocks, image_blocks, flat)


def forward(params, y_u, mask):
    """Run the network; returns (k_rec, i_rec) as graph nodes.

    y_u is the zero-filled undersampled k-space grid (1, H, W); mask is the
    SamplingMask (or binary grid) that produced it.
    """
    cfg = params.config
    y_u = np.ascontiguousarray(np.asarray(y_u), dtype=cfg.dtype)
    if y_u.shape != (1, cfg.height, cfg.width):
        raise ContractViolation(
            f"forward: y_u shape {y_u.shape} does not match config (1, {cfg.height}, {cfg.width})")
    k = Node(y_u, tag="input")
    for layers in params.kspace_blocks:
        k = e_block_forward(k, y_u, mask, layers)
    k_rec = k
    img = ifft2_centered(k_rec)
    for fmus, final in params.image_blocks:
        img = f_block_forward(img, y_u, mask, fmus, final)
    return k_rec, img


def loss_lw(a, b, alpha):
    """alpha * mean|a-b| + mean|a-b|^2, as a scalar node."""
    return add(scale(l1_modulus_mean(a, b), alpha), l2_modulus_mean(a, b))


def loss_total(y, k_rec, x, i_rec, alpha):
    """Dual-domain loss: equal-weight sum of the k-space and image terms."""
    return add(loss_lw(y, k_rec, alpha), loss_lw(x, i_rec, alpha))


def _unpack_sample(sample):
    if hasattr(sample, "x"):
        return sample.x, sample.y_u, sample.mask
    x, y_u, mask = sample
    return x, y_u, mask


def _derive_seed(*entropy):
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, np.uint64)[0])


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)


def _mean_loss(params, prepared, alpha):
    total = 0.0
    with no_grad():
        for x, y, y_u, mask in prepared:
            k_rec, i_rec = forward(params, y_u, mask)
            total += loss_total(y, k_rec, x, i_rec, alpha).item()
    return total / len(prepared)


def _prepare(dataset, cfg, noise_sigma, master_seed):
    """Cast samples to the configured dtype and optionally noise the inputs.

    Noise is added to the measured k-space before masking (the loss target
    stays the clean fully sampled data)."""
    from .kspace import add_noise

    prepared = []
    for i, sample in enumerate(dataset):
        x, y_u, mask = _unpack_sample(sample)
        x = np.ascontiguousarray(np.asarray(x), dtype=cfg.dtype)
        y = np.ascontiguousarray(fft2_centered(x), dtype=cfg.dtype)
        if noise_sigma > 0:
            grid = mask.bool_grid() if isinstance(mask, SamplingMask) else np.asarray(mask).astype(bool)
            noisy = add_noise(y, noise_sigma, _derive_seed(master_seed, _STREAM_NOISE, i))
            y_u = np.where(grid, noisy, 0).astype(cfg.dtype)
        else:
            y_u = np.ascontiguousarray(np.asarray(y_u), dtype=cfg.dtype)
        prepared.append((x, y, y_u, mask))
    return prepared


def train(dataset, cfg, tcfg, val_dataset=None):
    """Mini-batch Adam over the dual-domain loss.

    Deterministic for a fixed (seed, dataset order, config, precision): the
    initialization, shuffling stream, and gradient reduction order are all
    fixed.  Raises NumericError on a non-finite loss; the exception carries
    .last_good (parameter values before the failing step) and .history.
    """
    cfg.validate()
    tcfg.validate()
    if not dataset:
        raise ContractViolation("train: dataset must be non-empty")

    params = build_network(cfg, tcfg.seed)
    history = TrainHistory()
    if tcfg.epochs == 0:
        return params, history

    prepared = _prepare(dataset, cfg, tcfg.noise_sigma, tcfg.seed)
    prepared_val = _prepare(val_dataset, cfg, tcfg.noise_sigma, tcfg.seed + 1) if val_dataset else None
    alpha = cfg.l1_weight
    state = AdamState(params.flat, learning_rate=tcfg.lr_start)
    shuffle_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([tcfg.seed, _STREAM_SHUFFLE])))
    n = len(prepared)
    last_good = params.value_copies()

    for epoch in range(tcfg.epochs):
        state.learning_rate = lr_schedule(epoch, tcfg.epochs, tcfg.lr_start, tcfg.lr_end)
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, tcfg.batch_size):
            batch = perm[start:start + tcfg.batch_size]
            params.zero_grads()
            batch_loss = 0.0
            try:
                for idx in batch:
                    x, y, y_u, mask = prepared[idx]
                    k_rec, i_rec = forward(params, y_u, mask)
                    loss = loss_total(y, k_rec, x, i_rec, alpha)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise NumericError(f"non-finite loss at epoch {epoch}, sample {idx}")
                    batch_loss += value
                    backward(loss)
            except NumericError as err:
                err.last_good = last_good
                err.history = history
                raise
            inv = 1.0 / len(batch)
            grads = []
            for p in params.flat:
                g = p.grad if p.grad is not None else np.zeros_like(p.value)
                g = g * inv
                grads.append(g)
            adam_step(params.flat, grads, state)
            epoch_loss += batch_loss
            last_good = params.value_copies()
        history.train_loss.append(epoch_loss / n)
        history.lr.append(state.learning_rate)
        if prepared_val:
            history.val_loss.append(_mean_loss(params, prepared_val, alpha))
    return params, history


def reconstruct(params, y_u, mask):
    """Inference wrapper: forward without graph recording, returns the image.

    Accepts a single (y_u, mask) pair, or lists of inputs (masks may be a
    matching list or one shared mask); outputs keep the input order.
    """
    if isinstance(y_u, (list, tuple)):
        masks = mask if isinstance(mask, (list, tuple)) else [mask] * len(y_u)
        if len(masks) != len(y_u):
            raise ContractViolation("reconstruct: inputs and masks differ in length")
        return [reconstruct(params, yi, mi) for yi, mi in zip(y_u, masks)]
    with no_grad():
        _, i_rec = forward(params, y_u, mask)
    return i_rec.value


# -------------------------------------------------------------- checkpoints

_CONFIG_FIELDS = ("height", "width", "e_blocks", "en2_layers", "f_blocks",
                  "fmus_per_block", "growth_channels", "en2_mode",
                  "kspace_kernel", "kspace_channels", "l1_weight", "precision")


def save_checkpoint(path, params, history=None, step_count=None):
    """Write the flattened parameter list as one EN2T file plus a plain
    key=value manifest sidecar at <path>.manifest."""
    flat = (np.concatenate([p.value.reshape(-1) for p in params.flat])
            if params.flat else np.zeros(0, dtype=params.config.dtype))
    write_en2t(flat, path)
    lines = ["format=en2mri-checkpoint-v1"]
    for name in _CONFIG_FIELDS:
        value = getattr(params.config, name)
        lines.append(f"{name}={'auto' if value is None else value}")
    lines.append(f"init_seed={params.init_seed}")
    lines.append(f"param_count={params.num_parameters()}")
    if step_count is not None:
        lines.append(f"step_count={step_count}")
    if history is not None:
        lines.append("train_loss_history=" + ",".join(repr(v) for v in history.train_loss))
        lines.append("val_loss_history=" + ",".join(repr(v) for v in history.val_loss))
    with open(str(path) + ".manifest", "w") as f:
        f.write("\n".join(lines) + "\n")


def _parse_manifest(path):
    entries = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


def load_checkpoint(path):
    """Rebuild NetworkParams from a checkpoint file + manifest sidecar."""
    manifest = _parse_manifest(str(path) + ".manifest")
    if manifest.get("format") != "en2mri-checkpoint-v1":
        raise FormatError(f"{path}: unrecognized checkpoint manifest")
    kc = manifest["kspace_channels"]
    cfg = NetworkConfig(
        height=int(manifest["height"]),
        width=int(manifest["width"]),
        e_blocks=int(manifest["e_blocks"]),
        en2_layers=int(manifest["en2_layers"]),
        f_blocks=int(manifest["f_blocks"]),
        fmus_per_block=int(manifest["fmus_per_block"]),
        growth_channels=int(manifest["growth_channels"]),
        en2_mode=manifest["en2_mode"],
        kspace_kernel=manifest["kspace_kernel"],
        kspace_channels=None if kc == "auto" else int(kc),
        l1_weight=float(manifest["l1_weight"]),
        precision=int(manifest["precision"]),
    )
    params = build_network(cfg, int(manifest["init_seed"]))
    flat = read_en2t(path)
    if flat.size != params.num_parameters():
        raise FormatError(
            f"{path}: holds {flat.size} parameters, config expects {params.num_parameters()}")
    arrays = []
    offset = 0
    for p in params.flat:
        size = p.value.size
        arrays.append(flat[offset:offset + size].reshape(p.value.shape))
        offset += size
    params.set_values(arrays)
    return params, manifest
