"""TSTNN model

segment -> encoder -> channel halving -> TSTM -> masking (against the encoder
output) -> decoder -> overlap-add. Shapes at the default configuration:

    [B, 1, N, 512] -> [B, 64, N, 256] -> [B, 32, N, 256] -> TSTM
    -> [B, 64, N, 256] -> [B, 1, N, 512]
"""

import logging
from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping, Optional

import numpy as np

from config.settings import Config
from tstnn import functional as F
from tstnn.autodiff import ParamStore, Tensor, as_tensor, concat
from tstnn.constants import NORM_EPS, REFERENCE_PARAM_COUNT
from tstnn.exceptions import ConfigError, ShapeError
from tstnn.framing import AudioBuffer, FramingSpec, segment_array
from tstnn.layers import Conv2d, LayerNorm, PReLU
from tstnn.transformer import TwoStageModule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    """Architectural hyperparameters; serialisable as flat JSON."""

    frame_size: int = 512
    overlap: int = 256
    encoder_channels: int = 64
    tstm_channels: int = 32
    n_blocks: int = 4
    n_heads: int = 4
    ddb_layers: int = 4
    ddb_dilations: tuple[int, ...] = (1, 2, 4, 8)
    prelu_init: float = 0.25
    norm_eps: float = NORM_EPS
    sample_rate: int = 16000
    attention_scale: str = 'head'
    gru_bidirectional: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, 'ddb_dilations', tuple(int(d) for d in self.ddb_dilations))
        for name in ('encoder_channels', 'tstm_channels', 'n_blocks', 'n_heads', 'ddb_layers',
                     'sample_rate'):
            if int(getattr(self, name)) < 1:
                raise ConfigError('must be >= 1', field=name)
        if self.frame_size % 2:
            raise ConfigError('frame size must be even', field='frame_size')
        FramingSpec(self.frame_size, self.overlap)
        if self.encoder_channels != 2 * self.tstm_channels:
            raise ConfigError('encoder_channels must equal 2 * tstm_channels', field='encoder_channels')
        if self.tstm_channels % self.n_heads:
            raise ConfigError('tstm_channels must be divisible by n_heads', field='n_heads')
        if len(self.ddb_dilations) != self.ddb_layers or min(self.ddb_dilations) < 1:
            raise ConfigError('need one positive dilation per dense layer', field='ddb_dilations')
        if self.norm_eps <= 0:
            raise ConfigError('must be positive', field='norm_eps')
        if self.attention_scale not in ('head', 'model'):
            raise ConfigError("must be 'head' or 'model'", field='attention_scale')

    @property
    def framing(self) -> FramingSpec:
        return FramingSpec(self.frame_size, self.overlap)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> 'ModelConfig':
        unknown = set(values) - cls.field_names()
        if unknown:
            raise ConfigError('unknown model config key', field=sorted(unknown)[0])
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        values = asdict(self)
        values['ddb_dilations'] = list(self.ddb_dilations)
        return values


PRESETS = {
    'full': ModelConfig(),
    'tiny': ModelConfig(frame_size=64, overlap=32, encoder_channels=16, tstm_channels=8,
                        n_blocks=2, n_heads=2),
    'toy': ModelConfig(frame_size=8, overlap=4, encoder_channels=4, tstm_channels=2, n_blocks=1,
                       n_heads=2, ddb_layers=2, ddb_dilations=(1, 2), sample_rate=8000),
}


class DilatedDenseBlock:
    """Densely connected dilated convolutions.

    Layer i sees the concatenation of the block input and every earlier layer
    output (channels * (i + 1)); each layer is a (2, 3) convolution dilated along
    N with causal padding on N, then layer norm over the frame axis and PReLU.
    The block returns the last layer output.
    """

    def __init__(self, store: ParamStore, prefix: str, channels: int, width: int,
                 dilations: tuple[int, ...], prelu_init: float = 0.25, eps: float = NORM_EPS) -> None:
        self.layers = []
        for i, dilation in enumerate(dilations):
            name = f'{prefix}.layer{i}'
            self.layers.append((
                Conv2d(store, f'{name}.conv', channels * (i + 1), channels, kernel=(2, 3),
                       dilation=(dilation, 1), padding=F.Padding.CAUSAL_N),
                LayerNorm(store, f'{name}.norm', width, eps),
                PReLU(store, f'{name}.prelu', channels, prelu_init),
            ))

    def __call__(self, x: Tensor) -> Tensor:
        skip = out = x
        for conv, norm, prelu in self.layers:
            out = prelu(norm(conv(skip)))
            skip = concat([out, skip], axis=1)
        return out


class Encoder:
    def __init__(self, store: ParamStore, prefix: str, config: ModelConfig) -> None:
        channels, width = config.encoder_channels, config.frame_size
        self.frame_size = width
        self.conv_in = Conv2d(store, f'{prefix}.conv_in', 1, channels)
        self.norm_in = LayerNorm(store, f'{prefix}.norm_in', width, config.norm_eps)
        self.prelu_in = PReLU(store, f'{prefix}.prelu_in', channels, config.prelu_init)
        self.dense = DilatedDenseBlock(store, f'{prefix}.dense', channels, width,
                                       config.ddb_dilations, config.prelu_init, config.norm_eps)
        # pad 1 on both sides of F so stride 2 maps F to exactly F / 2
        self.conv_down = Conv2d(store, f'{prefix}.conv_down', channels, channels, kernel=(1, 3),
                                stride=(1, 2))
        self.norm_down = LayerNorm(store, f'{prefix}.norm_down', width // 2, config.norm_eps)
        self.prelu_down = PReLU(store, f'{prefix}.prelu_down', channels, config.prelu_init)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[3] != self.frame_size:
            raise ShapeError(f'encoder expects [B, 1, N, {self.frame_size}], got {x.shape}')
        x = self.prelu_in(self.norm_in(self.conv_in(x)))
        x = self.dense(x)
        return self.prelu_down(self.norm_down(self.conv_down(x)))


class TstmInputProj:
    def __init__(self, store: ParamStore, prefix: str, config: ModelConfig) -> None:
        self.in_channels = config.encoder_channels
        self.conv = Conv2d(store, f'{prefix}.conv', config.encoder_channels, config.tstm_channels)
        self.prelu = PReLU(store, f'{prefix}.prelu', config.tstm_channels, config.prelu_init)

    def __call__(self, e: Tensor) -> Tensor:
        if e.shape[1] != self.in_channels:
            raise ShapeError(f'expected {self.in_channels} channels, got {e.shape[1]}')
        return self.prelu(self.conv(e))


class MaskingModule:
    """Gated tanh/sigmoid paths producing a non-negative mask over encoder features."""

    def __init__(self, store: ParamStore, prefix: str, config: ModelConfig) -> None:
        channels, half = config.encoder_channels, config.tstm_channels
        self.half = half
        self.prelu = PReLU(store, f'{prefix}.prelu', half, config.prelu_init)
        self.conv_up = Conv2d(store, f'{prefix}.conv_up', half, channels)
        self.conv_tanh = Conv2d(store, f'{prefix}.conv_tanh', channels, channels)
        self.conv_sigmoid = Conv2d(store, f'{prefix}.conv_sigmoid', channels, channels)
        self.conv_mask = Conv2d(store, f'{prefix}.conv_mask', channels, channels)

    def mask(self, t: Tensor) -> Tensor:
        if t.shape[1] != self.half:
            raise ShapeError(f'masking expects {self.half} channels, got {t.shape[1]}')
        up = self.conv_up(self.prelu(t))
        gated = F.tanh(self.conv_tanh(up)) * F.sigmoid(self.conv_sigmoid(up))
        return F.relu(self.conv_mask(gated))

    def __call__(self, t: Tensor, e: Tensor) -> Tensor:
        mask = self.mask(t)
        if mask.shape != e.shape:
            raise ShapeError(f'mask {mask.shape} does not match encoder output {e.shape}')
        return mask * e


class Decoder:
    def __init__(self, store: ParamStore, prefix: str, config: ModelConfig) -> None:
        channels = config.encoder_channels
        self.channels = channels
        self.dense = DilatedDenseBlock(store, f'{prefix}.dense', channels, config.frame_size // 2,
                                       config.ddb_dilations, config.prelu_init, config.norm_eps)
        self.conv_expand = Conv2d(store, f'{prefix}.conv_expand', channels, 2 * channels)
        self.conv_out = Conv2d(store, f'{prefix}.conv_out', channels, 1)

    def __call__(self, m: Tensor) -> Tensor:
        if m.ndim != 4 or m.shape[1] != self.channels:
            raise ShapeError(f'decoder expects {self.channels} channels, got {m.shape}')
        x = self.dense(m)
        x = F.subpixel_shuffle_f(self.conv_expand(x), 2)
        return self.conv_out(x)


class TSTNN:
    """The full enhancement network and its parameter registry.

        Attributes:
            config (ModelConfig): Architecture.
            params (ParamStore): Every learnable tensor, named ``<submodule>.<layer>.<param>``.
    """

    def __init__(self, config: Optional[ModelConfig] = None, seed: int = 0, dtype=None) -> None:
        self.config = config or ModelConfig()
        self.params = ParamStore(seed, dtype or Config.PRECISION)
        self.encoder = Encoder(self.params, 'encoder', self.config)
        self.tstm_proj = TstmInputProj(self.params, 'tstm_proj', self.config)
        self.tstm = TwoStageModule(self.params, 'tstm', self.config.tstm_channels, self.config.n_blocks,
                                   self.config.n_heads, self.config.gru_bidirectional,
                                   self.config.attention_scale, self.config.norm_eps)
        self.masking = MaskingModule(self.params, 'masking', self.config)
        self.decoder = Decoder(self.params, 'decoder', self.config)

    @property
    def framing(self) -> FramingSpec:
        return self.config.framing

    def forward_frames(self, frames, shapes: Optional[list] = None) -> Tensor:
        """Maps ``[B, 1, N, F]`` noisy frames to enhanced frames of the same shape.

            Args:
                frames (Tensor or np.ndarray): Input frames.
                shapes (list, optional): Receives ``(stage, shape)`` for every stage.
        """

        def trace(stage: str, tensor: Tensor) -> None:
            logger.debug('%s %s', stage, tensor.shape)
            if shapes is not None:
                shapes.append((stage, tensor.shape))

        x = as_tensor(frames, self.params.dtype)
        trace('input', x)
        e = self.encoder(x)
        trace('encoder', e)
        t = self.tstm_proj(e)
        trace('tstm_proj', t)
        for i, block in enumerate(self.tstm.blocks):
            t = block(t)
            trace(f'tstm.block{i}', t)
        m = self.masking(t, e)
        trace('masking', m)
        out = self.decoder(m)
        trace('decoder', out)
        return out

    def enhance_batch(self, signals: np.ndarray) -> Tensor:
        """Enhances equal-length waveforms ``[B, L]``; differentiable when run under a tape."""

        signals = np.atleast_2d(np.asarray(signals, dtype=self.params.dtype))
        frames = segment_array(signals, self.framing)
        enhanced = self.forward_frames(frames)
        return F.overlap_add_frames(enhanced, self.framing, signals.shape[1])

    def denoise(self, noisy: AudioBuffer) -> AudioBuffer:
        return tstnn_forward(noisy, self)


def tstnn_forward(noisy: AudioBuffer, model: TSTNN) -> AudioBuffer:
    """Runs the full pipeline on one waveform; the output has the input length."""

    if len(noisy) == 0:
        raise ShapeError('cannot enhance empty audio', field='samples')
    enhanced = model.enhance_batch(noisy.samples[None, :])
    return AudioBuffer(enhanced.data[0].astype(np.float64), noisy.sample_rate)


def param_count(model: TSTNN) -> int:
    return model.params.count()


def param_report(model: TSTNN, depth: int = 2) -> list[str]:
    """Tab-separated per-submodule counts, the total and its deviation from 0.92 M."""

    total = param_count(model)
    lines = [f'{name}\t{count}' for name, count in model.params.breakdown(depth).items()]
    lines.append(f'total\t{total}')
    lines.append(f'reference\t{int(REFERENCE_PARAM_COUNT)}\t{(total - REFERENCE_PARAM_COUNT) / REFERENCE_PARAM_COUNT:+.3%}')
    return lines
