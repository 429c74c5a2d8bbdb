"""Neural building blocks: complex convolution, encoding-direction layers,
split activations, feature-strengthening units, and the two block types.

All layers run on complex grids (channels, height, width) and record the
autodiff graph.  Complex convolution realizes (X + iY) * (A + iB) =
(X*A - Y*B) + i(X*B + Y*A) in one complex im2col matmul, which performs
exactly those four real products per tap.  Encoding-direction ("EN2")
layers convolve a full k-space row (freq mode, 1 x W kernels) or column
(phase mode, H x 1 kernels); with as many kernels as the line length the
layer is a learned right/left matrix multiplication of the k-space matrix
plus a broadcast bias.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (Node, add, concat_channels, make_op, param,
                       relu_split, tanh_split)
from .errors import ContractViolation
from .kspace import idc, kdc


@dataclass
class ComplexConvParams:
    """Complex 2D convolution filter bank.

    weight: Node with value (out_channels, in_channels, kh, kw) complex;
    bias: Node with value (out_channels,) complex.  padding "same" keeps the
    spatial shape with zero fill, "valid" does no padding.  dilation spaces
    the taps (effective extent (k-1)*dilation + 1).
    """

    weight: Node
    bias: Node
    padding: str = "same"
    dilation: int = 1

    @property
    def out_channels(self):
        return self.weight.value.shape[0]

    @property
    def in_channels(self):
        return self.weight.value.shape[1]


@dataclass
class En2LayerParams:
    """One encoding-direction layer: num_kernels line kernels plus biases.

    mode "freq": kernels (num_kernels, W) act on rows; mode "phase":
    kernels (num_kernels, H) act on columns.
    """

    mode: str
    kernels: Node  # (num_kernels, line_length) complex
    bias: Node     # (num_kernels,) complex

    @property
    def num_kernels(self):
        return self.kernels.value.shape[0]

    @property
    def line_length(self):
        return self.kernels.value.shape[1]


@dataclass
class FmuParams:
    """Feature-strengthening unit: 1x1 residual path plus 3x3 dense path
    that appends growth channels."""

    residual_conv: ComplexConvParams  # 1x1, Y -> Y
    dense_conv: ComplexConvParams     # 3x3, Y -> V, same padding


def glorot_complex(rng, shape, fan_in, fan_out, dtype=np.complex128):
    """Uniform Glorot init drawn independently for each plane; the fans are
    counted on the real-equivalent network (each complex unit = 2 reals)."""
    lim = math.sqrt(6.0 / (2 * fan_in + 2 * fan_out))
    re = rng.uniform(-lim, lim, size=shape)
    im = rng.uniform(-lim, lim, size=shape)
    return (re + 1j * im).astype(dtype)


def init_conv(rng, in_channels, out_channels, kh, kw, padding="same", dilation=1,
              dtype=np.complex128, name="conv"):
    fan_in = in_channels * kh * kw
    fan_out = out_channels * kh * kw
    w = glorot_complex(rng, (out_channels, in_channels, kh, kw), fan_in, fan_out, dtype)
    b = np.zeros(out_channels, dtype=dtype)
    return ComplexConvParams(param(w, name + ".weight"), param(b, name + ".bias"),
                             padding=padding, dilation=dilation)


def init_en2_layer(rng, mode, line_length, dtype=np.complex128, name="en2"):
    # Identity-anchored: the layer starts as a perturbed identity map of the
    # k-space line, so a freshly built stage behaves like zero-filling plus
    # noise instead of scrambling the spectrum.
    w = np.eye(line_length, dtype=dtype) + 0.25 * glorot_complex(
        rng, (line_length, line_length), line_length, line_length, dtype)
    b = np.zeros(line_length, dtype=dtype)
    return En2LayerParams(mode, param(w, name + ".kernels"), param(b, name + ".bias"))


def init_fmu(rng, in_channels, growth, dtype=np.complex128, name="fmu"):
    residual = init_conv(rng, in_channels, in_channels, 1, 1, padding="valid",
                         dtype=dtype, name=name + ".residual")
    dense = init_conv(rng, in_channels, growth, 3, 3, padding="same",
                      dtype=dtype, name=name + ".dense")
    return FmuParams(residual, dense)


# ------------------------------------------------------- complex convolution

def _pad_amounts(k, dilation):
    extent = (k - 1) * dilation + 1
    lo = (extent - 1) // 2
    return lo, extent - 1 - lo, extent


def _im2col(xp, kh, kw, dilation, h_out, w_out):
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, h_out, w_out), dtype=xp.dtype)
    d = dilation
    for a in range(kh):
        for b in range(kw):
            cols[:, a, b] = xp[:, a * d:a * d + h_out, b * d:b * d + w_out]
    return cols.reshape(c * kh * kw, h_out * w_out)


def _col2im(dcols, c, kh, kw, dilation, padded_shape, h_out, w_out):
    dxp = np.zeros((c,) + padded_shape, dtype=dcols.dtype)
    dcols = dcols.reshape(c, kh, kw, h_out, w_out)
    d = dilation
    for a in range(kh):
        for b in range(kw):
            dxp[:, a * d:a * d + h_out, b * d:b * d + w_out] += dcols[:, a, b]
    return dxp


def complex_conv2d(x, params):
    """Complex 2D convolution (CNN convention: correlation, no kernel flip)."""
    if not isinstance(x, Node):
        x = Node(np.asarray(x))
    w, bias = params.weight, params.bias
    out_c, in_c, kh, kw = w.value.shape
    c, h, ww = x.value.shape
    if c != in_c:
        raise ContractViolation(f"complex_conv2d: input has {c} channels, filter expects {in_c}")
    d = params.dilation
    if params.padding == "same":
        pt, pb, _ = _pad_amounts(kh, d)
        pl, pr, _ = _pad_amounts(kw, d)
        xp = np.pad(x.value, ((0, 0), (pt, pb), (pl, pr)))
    elif params.padding == "valid":
        xp = x.value
    else:
        raise ContractViolation(f"unknown padding mode {params.padding!r}")
    eh = (kh - 1) * d + 1
    ew = (kw - 1) * d + 1
    h_out = xp.shape[1] - eh + 1
    w_out = xp.shape[2] - ew + 1
    if h_out < 1 or w_out < 1:
        raise ContractViolation(
            f"complex_conv2d: kernel extent ({eh}x{ew}) exceeds input ({xp.shape[1]}x{xp.shape[2]})")

    cols = _im2col(xp, kh, kw, d, h_out, w_out)
    w_mat = w.value.reshape(out_c, in_c * kh * kw)
    out = (w_mat @ cols).reshape(out_c, h_out, w_out) + bias.value[:, None, None]
    padded_shape = xp.shape[1:]

    def bw(g):
        g_mat = g.reshape(out_c, h_out * w_out)
        dw = (g_mat @ cols.conj().T).reshape(w.value.shape)
        db = g_mat.sum(axis=1)
        dcols = w_mat.conj().T @ g_mat
        dxp = _col2im(dcols, in_c, kh, kw, d, padded_shape, h_out, w_out)
        if params.padding == "same":
            dx = dxp[:, pt:pt + h, pl:pl + ww]
            dx = np.ascontiguousarray(dx)
        else:
            dx = dxp
        return (dx, dw, db)

    return make_op(out, (x, w, bias), bw, "complex_conv2d")


# -------------------------------------------------- encoding-direction layer

def en2_forward(k, params):
    """Apply one encoding-direction layer to a single-channel k-space grid.

    freq mode: kernel j is dotted with every row, and the kernel outputs are
    concatenated along width, so out[i, j] = sum_k K[i, k] * E_j[k] + b_j,
    i.e. out = K @ E.T + b (broadcast over rows).  phase mode is the
    symmetric column-wise form, out = E @ K + b (broadcast over columns).
    No padding is involved: each kernel spans the full line.
    """
    if not isinstance(k, Node):
        k = Node(np.asarray(k))
    if k.value.shape[0] != 1:
        raise ContractViolation(f"en2_forward: expected a single channel, got {k.value.shape[0]}")
    h, w = k.value.shape[1:]
    kern, bias = params.kernels, params.bias
    m = kern.value
    if params.mode == "freq":
        if m.shape[1] != w:
            raise ContractViolation(f"freq kernels of length {m.shape[1]} on width-{w} input")
        out = (k.value[0] @ m.T + bias.value[None, :])[None]

        def bw(g):
            g2 = g[0]
            dk = (g2 @ m.conj())[None]
            dm = g2.T @ k.value[0].conj()
            db = g2.sum(axis=0)
            return (dk, dm, db)

    elif params.mode == "phase":
        if m.shape[1] != h:
            raise ContractViolation(f"phase kernels of length {m.shape[1]} on height-{h} input")
        out = (m @ k.value[0] + bias.value[:, None])[None]

        def bw(g):
            g2 = g[0]
            dk = (m.conj().T @ g2)[None]
            dm = g2 @ k.value[0].conj().T
            db = g2.sum(axis=1)
            return (dk, dm, db)

    else:
        raise ContractViolation(f"unknown en2 mode {params.mode!r}")
    return make_op(out, (k, kern, bias), bw, "en2_" + params.mode)


def split_activation(t, kind):
    """Scalar activation applied independently to the real and imaginary planes."""
    if kind == "tanh":
        return tanh_split(t)
    if kind == "relu":
        return relu_split(t)
    raise ContractViolation(f"unknown activation kind {kind!r}")


# -------------------------------------------------------------------- blocks

def fmu_forward(s_in, params):
    """Residual 1x1 path added to the input, concatenated with a 3x3 dense
    path of new channels: out = (relu(conv1(s)) + s) || relu(conv3(s))."""
    if not isinstance(s_in, Node):
        s_in = Node(np.asarray(s_in))
    if s_in.value.shape[0] != params.residual_conv.in_channels:
        raise ContractViolation(
            f"fmu_forward: input has {s_in.value.shape[0]} channels, unit expects "
            f"{params.residual_conv.in_channels}")
    residual = relu_split(complex_conv2d(s_in, params.residual_conv))
    modified = add(residual, s_in)
    dense = relu_split(complex_conv2d(s_in, params.dense_conv))
    return concat_channels(modified, dense)


def e_block_forward(y_in, y_u, mask, layer_params):
    """k-space block: sequential line/conv layers with one tanh after layer
    ceil(Q/2), closed by hard k-space data consistency against y_u."""
    q = len(layer_params)
    tanh_after = (q + 1) // 2
    h = y_in
    for i, lp in enumerate(layer_params, start=1):
        if isinstance(lp, En2LayerParams):
            h = en2_forward(h, lp)
        else:
            h = complex_conv2d(h, lp)
        if i == tanh_after:
            h = split_activation(h, "tanh")
    return kdc(h, y_u, mask)


def f_block_forward(img, y_u, mask, fmus, final_conv):
    """Image block: FMU chain, 3x3 fusion conv back to one channel, skip
    connection from the block input, then image-domain data consistency."""
    h = img if isinstance(img, Node) else Node(np.asarray(img))
    skip = h
    for fp in fmus:
        h = fmu_forward(h, fp)
    h = complex_conv2d(h, final_conv)
    h = add(h, skip)
    return idc(h, y_u, mask)
