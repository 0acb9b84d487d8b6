"""Two-stage transformer

The improved transformer layer drops positional encoding and replaces the
first feed-forward projection with a GRU:

    Mid    = LayerNorm(X + MultiHead(X))
    FFN    = ReLU(GRU(Mid)) W_1 + b_1
    Output = LayerNorm(Mid + FFN)

A two-stage block applies one such layer along the frame axis F' (local, every
frame on its own) and a second one along the frame-index axis N (global), each
followed by group normalisation and a residual connection. The TSTM stacks
these blocks.
"""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from tstnn import functional as F
from tstnn.autodiff import ParamStore, Tensor
from tstnn.constants import NORM_EPS
from tstnn.exceptions import ConfigError, ShapeError
from tstnn.layers import GroupNorm, Gru, LayerNorm


@dataclass
class AttentionParams:
    """Multi-head attention weights.

    ``w_q``, ``w_k`` and ``w_v`` are ``[d, d]``; column block ``i`` (width d/h) is
    the per-head matrix W_i. ``w_o`` is ``[d, d]``.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    n_heads: int
    scale_mode: str = 'head'

    def __post_init__(self) -> None:
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f'd={self.d_model} not divisible by h={self.n_heads}', field='n_heads')

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def head_weights(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        block = slice(i * self.head_dim, (i + 1) * self.head_dim)
        return self.w_q.data[:, block], self.w_k.data[:, block], self.w_v.data[:, block]

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d_model: int, n_heads: int,
               scale_mode: str = 'head') -> 'AttentionParams':
        weights = [store.create(f'{prefix}.{name}', (d_model, d_model), fan_in=d_model)
                   for name in ('w_q', 'w_k', 'w_v', 'w_o')]
        return cls(*weights, n_heads=n_heads, scale_mode=scale_mode)


def multi_head_attention(x: Tensor, p: AttentionParams,
                         return_weights: bool = False) -> Union[Tensor, tuple[Tensor, Tensor]]:
    """Scaled dot-product attention over ``[l, d]`` or a batch ``[S, l, d]`` of sequences.

        Args:
            x (Tensor): Input sequences.
            p (AttentionParams): Attention weights.
            return_weights (bool): Also return the ``[S, h, l, l]`` attention weights.

        Returns:
            Tensor: Output with the same shape as ``x``.
    """

    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[-1] != p.d_model:
        raise ShapeError(f'attention over d={p.d_model} got input {x.shape}')
    n_seq, length, d_model = x.shape
    h, d_head = p.n_heads, p.head_dim

    def split_heads(w: Tensor) -> Tensor:
        return (x @ w).reshape(n_seq, length, h, d_head).transpose(0, 2, 1, 3)

    q, k, v = split_heads(p.w_q), split_heads(p.w_k), split_heads(p.w_v)
    scores = (q @ k.transpose(0, 1, 3, 2)) * F.attention_scale(d_model, h, p.scale_mode)
    weights = F.softmax(scores, axis=-1)
    context = (weights @ v).transpose(0, 2, 1, 3).reshape(n_seq, length, d_model)
    out = context @ p.w_o
    if squeeze:
        out = out.reshape(length, d_model)
    return (out, weights) if return_weights else out


class ImprovedTransformerLayer:
    """Attention + GRU feed-forward layer of width ``d_model``.

    The feed-forward GRU emits d_ff = 4 * d features: bidirectional with 2d
    hidden units per direction, or unidirectional with 4d.
    """

    def __init__(self, store: ParamStore, prefix: str, d_model: int, n_heads: int,
                 bidirectional: bool = True, scale_mode: str = 'head', eps: float = NORM_EPS) -> None:
        self.d_model = d_model
        self.attention = AttentionParams.create(store, f'{prefix}.attention', d_model, n_heads, scale_mode)
        d_ff = 4 * d_model
        self.gru = Gru(store, f'{prefix}.ffn.gru', d_model, d_ff // 2 if bidirectional else d_ff,
                       bidirectional)
        self.w_1 = store.create(f'{prefix}.ffn.w_1', (d_ff, d_model), fan_in=d_ff)
        self.b_1 = store.create(f'{prefix}.ffn.b_1', (d_model,), fan_in=d_ff)
        self.norm1 = LayerNorm(store, f'{prefix}.norm1', d_model, eps)
        self.norm2 = LayerNorm(store, f'{prefix}.norm2', d_model, eps)

    def feed_forward(self, mid: Tensor) -> Tensor:
        recurrent = self.gru(mid.transpose(1, 0, 2)).transpose(1, 0, 2)
        return F.linear(F.relu(recurrent), self.w_1, self.b_1)

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        if x.shape[-1] != self.d_model:
            raise ShapeError(f'layer of width {self.d_model} got input {x.shape}')
        mid = self.norm1(x + multi_head_attention(x, self.attention))
        out = self.norm2(mid + self.feed_forward(mid))
        return out.reshape(*out.shape[1:]) if squeeze else out


def improved_transformer_layer(x: Tensor, layer: ImprovedTransformerLayer) -> Tensor:
    return layer(x)


class TwoStageBlock:
    """Local transformer over F' followed by a global transformer over N."""

    def __init__(self, store: ParamStore, prefix: str, d_model: int, n_heads: int,
                 bidirectional: bool = True, scale_mode: str = 'head', eps: float = NORM_EPS) -> None:
        self.d_model = d_model
        self.local_layer = ImprovedTransformerLayer(store, f'{prefix}.local', d_model, n_heads,
                                                    bidirectional, scale_mode, eps)
        self.local_norm = GroupNorm(store, f'{prefix}.local_norm', d_model, groups=1, eps=eps)
        self.global_layer = ImprovedTransformerLayer(store, f'{prefix}.global', d_model, n_heads,
                                                     bidirectional, scale_mode, eps)
        self.global_norm = GroupNorm(store, f'{prefix}.global_norm', d_model, groups=1, eps=eps)

    def _check(self, x: Tensor) -> None:
        if x.ndim != 4:
            raise ShapeError(f'two-stage block expects [B, C, N, F], got {x.shape}')
        if x.shape[1] != self.d_model:
            raise ConfigError(f'block width {self.d_model} does not match {x.shape[1]} channels',
                              field='tstm_channels')

    def local_transform(self, x: Tensor) -> Tensor:
        """Local layer applied to every frame on its own; no cross-frame mixing."""

        self._check(x)
        batch, channels, n_frames, width = x.shape
        sequences = x.transpose(0, 2, 3, 1).reshape(batch * n_frames, width, channels)
        return self.local_layer(sequences).reshape(batch, n_frames, width, channels).transpose(0, 3, 1, 2)

    def local_stage(self, x: Tensor) -> Tensor:
        # group norm statistics span all frames of a batch item
        return x + self.local_norm(self.local_transform(x))

    def global_stage(self, x: Tensor) -> Tensor:
        self._check(x)
        batch, channels, n_frames, width = x.shape
        sequences = x.transpose(0, 3, 2, 1).reshape(batch * width, n_frames, channels)
        out = self.global_layer(sequences).reshape(batch, width, n_frames, channels).transpose(0, 3, 2, 1)
        return x + self.global_norm(out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.global_stage(self.local_stage(x))


def two_stage_block(x: Tensor, block: TwoStageBlock) -> Tensor:
    return block(x)


def tstm_forward(x: Tensor, blocks: Sequence[TwoStageBlock]) -> Tensor:
    """Applies the blocks in order; all must share one width."""

    widths = {block.d_model for block in blocks}
    if len(widths) > 1:
        raise ConfigError(f'TSTM blocks have mismatched widths {sorted(widths)}', field='tstm_channels')
    for block in blocks:
        x = block(x)
    return x


class TwoStageModule:
    def __init__(self, store: ParamStore, prefix: str, d_model: int, n_blocks: int, n_heads: int,
                 bidirectional: bool = True, scale_mode: str = 'head', eps: float = NORM_EPS) -> None:
        self.blocks = [TwoStageBlock(store, f'{prefix}.block{i}', d_model, n_heads,
                                     bidirectional, scale_mode, eps) for i in range(n_blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        return tstm_forward(x, self.blocks)
