"""Differentiable kernels

Every function takes and returns :class:`tstnn.autodiff.Tensor` and records a
single tape node with a hand-written backward rule, except where it is a plain
composition of recorded primitives (``linear``, ``subpixel_shuffle_f``).
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from tstnn.autodiff import Tensor, as_tensor, concat, matmul, record
from tstnn.constants import NORM_EPS
from tstnn.exceptions import ConfigError, ShapeError
from tstnn.framing import FramingSpec, frame_indices


class Padding(str, Enum):
    SAME = 'same'
    CAUSAL_N = 'causal_n'
    VALID = 'valid'


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """y = x W (+ b) over the last dimension of ``x``."""

    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f'linear input dim {x.shape[-1]} does not match weight {weight.shape}')
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, x.shape[0])
    out = matmul(x, weight)
    if bias is not None:
        out = out + bias
    return out.reshape(out.shape[1]) if squeeze else out


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0

    def backward_fn(g):
        return (g * positive,)

    return record(np.where(positive, x.data, 0.0).astype(x.dtype), (x,), backward_fn)


def prelu(x: Tensor, a: Tensor, channel_axis: int = 1) -> Tensor:
    """x if x > 0 else a * x, with ``a`` scalar-shaped ``[1]`` or one slope per channel."""

    shape = [1] * x.ndim
    if a.size > 1:
        if x.shape[channel_axis] != a.size:
            raise ShapeError(f'prelu has {a.size} slopes for {x.shape[channel_axis]} channels')
        shape[channel_axis] = a.size
    slope = a.data.reshape(shape)
    positive = x.data > 0

    def backward_fn(g):
        grad_x = g * np.where(positive, 1.0, slope).astype(x.dtype)
        grad_a = np.where(positive, 0.0, g * x.data)
        axes = tuple(i for i, size in enumerate(shape) if size == 1)
        return grad_x, grad_a.sum(axis=axes).reshape(a.shape)

    return record(np.where(positive, x.data, slope * x.data), (x, a), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward_fn(g):
        return (g * y * (1.0 - y),)

    return record(y, (x,), backward_fn)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward_fn(g):
        return (g * (1.0 - y * y),)

    return record(y, (x,), backward_fn)


def absolute(x: Tensor) -> Tensor:
    def backward_fn(g):
        return (g * np.sign(x.data),)

    return record(np.abs(x.data), (x,), backward_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    y = exps / exps.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(y, (x,), backward_fn)


def _normalize_last(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std, inv_std


def _normalize_last_backward(g_hat: np.ndarray, x_hat: np.ndarray, inv_std: np.ndarray) -> np.ndarray:
    return inv_std * (g_hat - g_hat.mean(axis=-1, keepdims=True)
                      - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalises over the last dimension with biased variance, then applies gamma/beta."""

    dim = x.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise ShapeError(f'layer norm over {dim} features got gamma {gamma.shape}, beta {beta.shape}')
    x_hat, inv_std = _normalize_last(x.data, eps)

    def backward_fn(g):
        grad_x = _normalize_last_backward(g * gamma.data, x_hat, inv_std)
        grad_gamma = (g * x_hat).reshape(-1, dim).sum(axis=0)
        grad_beta = g.reshape(-1, dim).sum(axis=0)
        return grad_x, grad_gamma, grad_beta

    return record(x_hat * gamma.data + beta.data, (x, gamma, beta), backward_fn)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalises ``[B, C, N, F]`` over (channels in group, N, F), affine per channel."""

    batch, channels = x.shape[:2]
    if groups < 1 or channels % groups:
        raise ConfigError(f'{channels} channels not divisible into {groups} groups', field='groups')
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f'group norm over {channels} channels got gamma {gamma.shape}')
    grouped = x.data.reshape(batch, groups, -1)
    x_hat, inv_std = _normalize_last(grouped, eps)
    x_hat = x_hat.reshape(x.shape)
    affine_shape = (1, channels) + (1,) * (x.ndim - 2)
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def backward_fn(g):
        g_hat = (g * gamma.data.reshape(affine_shape)).reshape(batch, groups, -1)
        grad_x = _normalize_last_backward(g_hat, x_hat.reshape(batch, groups, -1), inv_std)
        return (grad_x.reshape(x.shape), (g * x_hat).sum(axis=reduce_axes),
                g.sum(axis=reduce_axes))

    out = x_hat * gamma.data.reshape(affine_shape) + beta.data.reshape(affine_shape)
    return record(out, (x, gamma, beta), backward_fn)


def conv_padding(policy: Padding, kernel: tuple[int, int],
                 dilation: tuple[int, int]) -> tuple[tuple[int, int], tuple[int, int]]:
    """Low/high zero padding on the (N, F) axes for a padding policy."""

    total_n = (kernel[0] - 1) * dilation[0]
    total_f = (kernel[1] - 1) * dilation[1]
    same_f = (total_f // 2, total_f - total_f // 2)
    policy = Padding(policy)
    if policy is Padding.VALID:
        return (0, 0), (0, 0)
    if policy is Padding.CAUSAL_N:
        return (total_n, 0), same_f
    return (total_n // 2, total_n - total_n // 2), same_f


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: tuple[int, int] = (1, 1), dilation: tuple[int, int] = (1, 1),
           padding: Padding = Padding.SAME) -> Tensor:
    """Cross-correlation of ``[B, Cin, N, F]`` with ``[Cout, Cin, kN, kF]``.

        Args:
            x (Tensor): Input frames.
            weight (Tensor): Kernel.
            bias (Tensor, optional): Per output channel bias.
            stride (tuple): (sN, sF).
            dilation (tuple): (dN, dF).
            padding (Padding): SAME, CAUSAL_N (low side of N only, SAME on F) or VALID.

        Returns:
            Tensor: ``[B, Cout, N', F']``.
    """

    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f'conv2d expects rank-4 input and kernel, got {x.shape}, {weight.shape}')
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(f'kernel expects {weight.shape[1]} input channels, got {x.shape[1]}')
    k_n, k_f = weight.shape[2:]
    (s_n, s_f), (d_n, d_f) = stride, dilation
    pad_n, pad_f = conv_padding(padding, (k_n, k_f), dilation)
    padded = np.pad(x.data, ((0, 0), (0, 0), pad_n, pad_f))
    out_n = (padded.shape[2] - (k_n - 1) * d_n - 1) // s_n + 1
    out_f = (padded.shape[3] - (k_f - 1) * d_f - 1) // s_f + 1
    if out_n < 1 or out_f < 1:
        raise ShapeError(f'kernel {weight.shape[2:]} larger than padded input {padded.shape[2:]}')

    taps = []
    for i in range(k_n):
        for j in range(k_f):
            taps.append((i, j, (slice(None), slice(None),
                                slice(i * d_n, i * d_n + (out_n - 1) * s_n + 1, s_n),
                                slice(j * d_f, j * d_f + (out_f - 1) * s_f + 1, s_f))))

    out = np.zeros((x.shape[0], weight.shape[0], out_n, out_f), dtype=x.dtype)
    for i, j, window in taps:
        out += np.tensordot(padded[window], weight.data[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def backward_fn(g):
        grad_padded = np.zeros_like(padded)
        grad_weight = np.zeros_like(weight.data)
        for i, j, window in taps:
            grad_weight[:, :, i, j] = np.tensordot(g, padded[window], axes=([0, 2, 3], [0, 2, 3]))
            grad_padded[window] += np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, pad_n[0]:pad_n[0] + x.shape[2], pad_f[0]:pad_f[0] + x.shape[3]]
        grad_bias = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return grad_x, grad_weight, grad_bias

    inputs = (x, weight, bias if bias is not None else as_tensor(np.zeros(0, dtype=x.dtype)))
    return record(out, inputs, backward_fn)


@dataclass
class GruDirection:
    """Weights of one GRU direction, gate order (z, r, n) along the last axis.

        Attributes:
            w_ih (Tensor): ``[in, 3H]`` input weights (W_z, W_r, W_n).
            w_hh (Tensor): ``[H, 3H]`` recurrent weights (U_z, U_r, U_n).
            b_ih (Tensor): ``[3H]`` input biases; ``b_ih[2H:]`` is b_nx.
            b_hh (Tensor): ``[3H]`` recurrent biases; ``b_hh[2H:]`` is b_nh.
    """

    w_ih: Tensor
    w_hh: Tensor
    b_ih: Tensor
    b_hh: Tensor

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]


def _gru_direction(x: Tensor, h0: Tensor, p: GruDirection, reverse: bool) -> Tensor:
    steps, batch, n_in = x.shape
    hidden = p.hidden
    if p.w_ih.shape != (n_in, 3 * hidden) or p.w_hh.shape != (hidden, 3 * hidden):
        raise ShapeError(f'GRU weights {p.w_ih.shape}, {p.w_hh.shape} do not fit input dim {n_in}')
    if h0.shape != (batch, hidden):
        raise ShapeError(f'GRU initial state {h0.shape} should be {(batch, hidden)}')

    w_hh = p.w_hh.data
    gates_x = (x.data.reshape(steps * batch, n_in) @ p.w_ih.data + p.b_ih.data).reshape(steps, batch, 3 * hidden)
    outputs = np.empty((steps, batch, hidden), dtype=x.dtype)
    z = np.empty_like(outputs)
    r = np.empty_like(outputs)
    n = np.empty_like(outputs)
    hn = np.empty_like(outputs)
    h_prev = np.empty_like(outputs)
    order = list(range(steps - 1, -1, -1)) if reverse else list(range(steps))

    h = h0.data
    for t in order:
        gates_h = h @ w_hh + p.b_hh.data
        gx = gates_x[t]
        z[t] = 0.5 * (1.0 + np.tanh(0.5 * (gx[:, :hidden] + gates_h[:, :hidden])))
        r[t] = 0.5 * (1.0 + np.tanh(0.5 * (gx[:, hidden:2 * hidden] + gates_h[:, hidden:2 * hidden])))
        hn[t] = gates_h[:, 2 * hidden:]
        n[t] = np.tanh(gx[:, 2 * hidden:] + r[t] * hn[t])
        h_prev[t] = h
        h = (1.0 - z[t]) * n[t] + z[t] * h
        outputs[t] = h

    def backward_fn(g):
        grad_gates_x = np.empty((steps, batch, 3 * hidden), dtype=x.dtype)
        grad_w_hh = np.zeros_like(w_hh)
        grad_b_hh = np.zeros_like(p.b_hh.data)
        grad_h = np.zeros((batch, hidden), dtype=x.dtype)
        for t in reversed(order):
            grad_h = grad_h + g[t]
            grad_n = grad_h * (1.0 - z[t]) * (1.0 - n[t] * n[t])
            grad_z = grad_h * (h_prev[t] - n[t]) * z[t] * (1.0 - z[t])
            grad_r = grad_n * hn[t] * r[t] * (1.0 - r[t])
            grad_gates_h = np.concatenate([grad_z, grad_r, grad_n * r[t]], axis=1)
            grad_gates_x[t] = np.concatenate([grad_z, grad_r, grad_n], axis=1)
            grad_w_hh += h_prev[t].T @ grad_gates_h
            grad_b_hh += grad_gates_h.sum(axis=0)
            grad_h = grad_h * z[t] + grad_gates_h @ w_hh.T
        flat = grad_gates_x.reshape(steps * batch, 3 * hidden)
        grad_x = (flat @ p.w_ih.data.T).reshape(x.shape)
        grad_w_ih = x.data.reshape(steps * batch, n_in).T @ flat
        return grad_x, grad_h, grad_w_ih, grad_w_hh, flat.sum(axis=0), grad_b_hh

    return record(outputs, (x, h0, p.w_ih, p.w_hh, p.b_ih, p.b_hh), backward_fn)


def gru(x: Tensor, h0: Optional[Tensor], directions: list[GruDirection]) -> Tensor:
    """Runs a GRU over ``[seq, batch, in]``.

    Per step: z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
    n = tanh(W_n x + b_nx + r ⊙ (U_n h + b_nh)), h' = (1 − z) ⊙ n + z ⊙ h.
    With two directions the second runs over reversed time and the outputs are
    concatenated on the last axis.

        Args:
            x (Tensor): ``[seq, batch, in]`` input.
            h0 (Tensor, optional): ``[batch, hidden]`` initial state shared by both directions.
            directions (list): One ``GruDirection`` (unidirectional) or two (bidirectional).

        Returns:
            Tensor: ``[seq, batch, hidden * len(directions)]``.
    """

    if x.ndim != 3:
        raise ShapeError(f'GRU input must be [seq, batch, in], got {x.shape}')
    if len(directions) not in (1, 2):
        raise ConfigError('GRU takes one or two directions', field='directions')
    if h0 is None:
        h0 = as_tensor(np.zeros((x.shape[1], directions[0].hidden), dtype=x.dtype))
    outputs = [_gru_direction(x, h0, p, reverse=index == 1) for index, p in enumerate(directions)]
    return outputs[0] if len(outputs) == 1 else concat(outputs, axis=-1)


def subpixel_shuffle_f(x: Tensor, r: int) -> Tensor:
    """out[b, c, n, r*f + k] = in[b, c*r + k, n, f]."""

    batch, channels, n_frames, width = x.shape
    if r < 1 or channels % r:
        raise ShapeError(f'{channels} channels not divisible by upscale factor {r}')
    out = x.reshape(batch, channels // r, r, n_frames, width).transpose(0, 1, 3, 4, 2)
    return out.reshape(batch, channels // r, n_frames, width * r)


def subpixel_unshuffle_f(x: Tensor, r: int) -> Tensor:
    """Inverse gather of :func:`subpixel_shuffle_f`."""

    batch, channels, n_frames, width = x.shape
    if r < 1 or width % r:
        raise ShapeError(f'frame dim {width} not divisible by factor {r}')
    out = x.reshape(batch, channels, n_frames, width // r, r).transpose(0, 1, 4, 2, 3)
    return out.reshape(batch, channels * r, n_frames, width // r)


def overlap_add_frames(frames: Tensor, spec: FramingSpec, length: int) -> Tensor:
    """Differentiable overlap-add of ``[B, 1, N, F]`` frames into ``[B, length]`` waveforms."""

    batch, channels, n_frames, width = frames.shape
    if channels != 1 or width != spec.frame_size:
        raise ShapeError(f'overlap-add expects [B, 1, N, {spec.frame_size}], got {frames.shape}')
    indices = spec.indices(n_frames)
    coverage = spec.coverage(n_frames).astype(frames.dtype)
    summed = np.zeros((batch, coverage.shape[0]), dtype=frames.dtype)
    np.add.at(summed, (slice(None), indices), frames.data[:, 0])
    out = (summed / coverage)[:, :length]

    def backward_fn(g):
        scaled = np.zeros((batch, coverage.shape[0]), dtype=frames.dtype)
        scaled[:, :length] = g / coverage[:length]
        return (scaled[:, indices][:, None, :, :],)

    return record(out, (frames,), backward_fn)


def frame_signal(x: Tensor, frame_size: int, hop: int) -> Tensor:
    """Gathers ``[B, L]`` into ``[B, T, frame_size]`` frames at the given hop; L must lie on the grid."""

    batch, length = x.shape
    if length < frame_size or (length - frame_size) % hop:
        raise ShapeError(f'length {length} is not on the grid of frame {frame_size}, hop {hop}')
    indices = frame_indices((length - frame_size) // hop + 1, frame_size, hop)

    def backward_fn(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, (slice(None), indices), g)
        return (grad,)

    return record(x.data[:, indices], (x,), backward_fn)


def attention_scale(d_model: int, n_heads: int, mode: str = 'head') -> float:
    """1/sqrt(d/h) for ``head`` scaling, 1/sqrt(d) for ``model`` scaling."""

    if mode == 'head':
        return 1.0 / math.sqrt(d_model // n_heads)
    if mode == 'model':
        return 1.0 / math.sqrt(d_model)
    raise ConfigError(f'unknown attention scale {mode}', field='attention_scale')
