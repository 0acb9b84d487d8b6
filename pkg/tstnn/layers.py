"""Parameter-owning layers registered in a ParamStore under hierarchical names."""

from typing import Optional

from tstnn import functional as F
from tstnn.autodiff import ParamStore, Tensor
from tstnn.constants import NORM_EPS


class Conv2d:
    """2-D convolution with weight ``[out, in, kN, kF]`` and per-channel bias."""

    def __init__(self, store: ParamStore, prefix: str, in_channels: int, out_channels: int,
                 kernel: tuple[int, int] = (1, 1), stride: tuple[int, int] = (1, 1),
                 dilation: tuple[int, int] = (1, 1), padding: F.Padding = F.Padding.SAME) -> None:
        fan_in = in_channels * kernel[0] * kernel[1]
        self.weight = store.create(f'{prefix}.weight', (out_channels, in_channels) + tuple(kernel),
                                   fan_in=fan_in)
        self.bias = store.create(f'{prefix}.bias', (out_channels,), fan_in=fan_in)
        self.stride = stride
        self.dilation = dilation
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.dilation, self.padding)


class Linear:
    def __init__(self, store: ParamStore, prefix: str, in_features: int, out_features: int,
                 bias: bool = True) -> None:
        self.weight = store.create(f'{prefix}.weight', (in_features, out_features), fan_in=in_features)
        self.bias = store.create(f'{prefix}.bias', (out_features,), fan_in=in_features) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store: ParamStore, prefix: str, dim: int, eps: float = NORM_EPS) -> None:
        self.gamma = store.create(f'{prefix}.gamma', (dim,), init='ones')
        self.beta = store.create(f'{prefix}.beta', (dim,), init='zeros')
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class GroupNorm:
    def __init__(self, store: ParamStore, prefix: str, channels: int, groups: int = 1,
                 eps: float = NORM_EPS) -> None:
        self.gamma = store.create(f'{prefix}.gamma', (channels,), init='ones')
        self.beta = store.create(f'{prefix}.beta', (channels,), init='zeros')
        self.groups = groups
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return F.group_norm(x, self.groups, self.gamma, self.beta, self.eps)


class PReLU:
    def __init__(self, store: ParamStore, prefix: str, channels: int, init: float = 0.25,
                 channel_axis: int = 1) -> None:
        self.slope = store.create(f'{prefix}.slope', (channels,), init='const', value=init)
        self.channel_axis = channel_axis

    def __call__(self, x: Tensor) -> Tensor:
        return F.prelu(x, self.slope, self.channel_axis)


class Gru:
    """Uni- or bidirectional GRU; names ``{prefix}.forward.*`` and ``{prefix}.backward.*``."""

    def __init__(self, store: ParamStore, prefix: str, input_size: int, hidden: int,
                 bidirectional: bool = True) -> None:
        self.directions = []
        for direction in ('forward', 'backward') if bidirectional else ('forward',):
            name = f'{prefix}.{direction}'
            self.directions.append(F.GruDirection(
                w_ih=store.create(f'{name}.w_ih', (input_size, 3 * hidden), fan_in=hidden),
                w_hh=store.create(f'{name}.w_hh', (hidden, 3 * hidden), fan_in=hidden),
                b_ih=store.create(f'{name}.b_ih', (3 * hidden,), fan_in=hidden),
                b_hh=store.create(f'{name}.b_hh', (3 * hidden,), fan_in=hidden),
            ))

    @property
    def output_size(self) -> int:
        return sum(p.hidden for p in self.directions)

    def __call__(self, x: Tensor, h0: Optional[Tensor] = None) -> Tensor:
        return F.gru(x, h0, self.directions)
