"""Training losses

The frequency loss compares |Re| + |Im| of one-sided STFTs of the clean and
enhanced waveforms with an elementwise absolute difference, normalised by the
number of time frames and frequency bins. The time loss is the mean squared
sample error. Both accept a batch of zero-padded signals with per-item valid
lengths; padded samples never contribute, and neither do STFT frames made of
padding only.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from tstnn import functional as F
from tstnn.autodiff import Tensor, as_tensor, concat
from tstnn.exceptions import ConfigError, ShapeError
from tstnn.framing import AudioBuffer, frame_indices, padded_length

Signal = Union[Tensor, np.ndarray, AudioBuffer]


@dataclass(frozen=True)
class StftSpec:
    fft_size: int = 512
    hop: int = 256
    window: str = 'hann'

    def __post_init__(self) -> None:
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ConfigError('fft size must be a power of two', field='fft_size')
        if not 1 <= self.hop <= self.fft_size:
            raise ConfigError(f'hop must lie in [1, {self.fft_size}]', field='stft_hop')
        if self.window not in ('hann', 'rect'):
            raise ConfigError("window must be 'hann' or 'rect'", field='window')

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_array(self) -> np.ndarray:
        if self.window == 'rect':
            return np.ones(self.fft_size)
        # periodic
        n = np.arange(self.fft_size)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.fft_size)

    def padded_length(self, length: int) -> int:
        return padded_length(length, self.fft_size, self.hop)

    def n_frames(self, length: int) -> int:
        return (self.padded_length(length) - self.fft_size) // self.hop + 1

    def dft_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """``[fft_size, n_bins]`` real and imaginary DFT bases."""

        n = np.arange(self.fft_size)[:, None]
        k = np.arange(self.n_bins)[None, :]
        angle = 2.0 * np.pi * n * k / self.fft_size
        real, imag = np.cos(angle), -np.sin(angle)
        real[np.abs(real) < 1e-12] = 0.0
        imag[np.abs(imag) < 1e-12] = 0.0
        return real, imag


def stft(x: Union[AudioBuffer, np.ndarray], spec: StftSpec = StftSpec()) -> np.ndarray:
    """One-sided complex spectrogram ``[T, n_bins]`` of a 1-D signal."""

    samples = x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64).reshape(-1)
    padded = np.zeros(spec.padded_length(samples.shape[0]))
    padded[:samples.shape[0]] = samples
    frames = padded[frame_indices(spec.n_frames(samples.shape[0]), spec.fft_size, spec.hop)]
    return np.fft.rfft(frames * spec.window_array(), axis=-1)


def _as_batch(x: Signal, dtype=None) -> Tensor:
    if isinstance(x, AudioBuffer):
        x = x.samples
    x = as_tensor(x, dtype)
    return x.reshape(1, x.shape[0]) if x.ndim == 1 else x


def _batch_pair(clean: Signal, enhanced: Signal) -> tuple[Tensor, Tensor]:
    enhanced = _as_batch(enhanced, None if isinstance(enhanced, Tensor) else np.float64)
    clean = _as_batch(clean, enhanced.dtype)
    if clean.shape != enhanced.shape or clean.ndim != 2:
        raise ShapeError(f'clean {clean.shape} and enhanced {enhanced.shape} must be equal [B, L]')
    return clean, enhanced


def _lengths(lengths: Optional[Sequence[int]], batch: int, length: int) -> np.ndarray:
    if lengths is None:
        return np.full(batch, length)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (batch,) or lengths.min() < 1 or lengths.max() > length:
        raise ShapeError(f'lengths {lengths.tolist()} do not fit a batch of {batch} x {length}')
    return lengths


def sample_mask(lengths: np.ndarray, length: int) -> np.ndarray:
    return (np.arange(length)[None, :] < lengths[:, None]).astype(np.float64)


def spectral_sum(x: Tensor, spec: StftSpec) -> Tensor:
    """|Re| + |Im| of the one-sided STFT of ``[B, L]`` signals, shaped ``[B, T, n_bins]``."""

    batch, length = x.shape
    pad = spec.padded_length(length) - length
    if pad:
        x = concat([x, np.zeros((batch, pad), dtype=x.dtype)], axis=1)
    frames = F.frame_signal(x, spec.fft_size, spec.hop) * spec.window_array().astype(x.dtype)
    real, imag = spec.dft_matrices()
    return F.absolute(frames @ real.astype(x.dtype)) + F.absolute(frames @ imag.astype(x.dtype))


def loss_frequency(clean: Signal, enhanced: Signal, spec: StftSpec = StftSpec(),
                   lengths: Optional[Sequence[int]] = None) -> Tensor:
    """Mean over the batch of sum |S(clean) - S(enhanced)| / (T * n_bins)."""

    clean, enhanced = _batch_pair(clean, enhanced)
    batch, length = clean.shape
    lengths = _lengths(lengths, batch, length)
    mask = sample_mask(lengths, length)
    diff = F.absolute(spectral_sum(clean * mask, spec) - spectral_sum(enhanced * mask, spec))

    n_frames = spec.n_frames(length)
    starts = np.arange(n_frames) * spec.hop
    valid = (starts[None, :] < lengths[:, None]).astype(np.float64)
    weights = valid / (valid.sum(axis=1, keepdims=True) * spec.n_bins * batch)
    return (diff * weights[:, :, None]).sum()


def loss_time(clean: Signal, enhanced: Signal, lengths: Optional[Sequence[int]] = None) -> Tensor:
    """Mean over the batch of the per-item mean squared error over valid samples."""

    clean, enhanced = _batch_pair(clean, enhanced)
    batch, length = clean.shape
    lengths = _lengths(lengths, batch, length)
    error = (clean - enhanced) * sample_mask(lengths, length)
    weights = 1.0 / (lengths.astype(np.float64) * batch)
    return (error * error * weights[:, None]).sum()


def combine_losses(loss_f, loss_t, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f'alpha {alpha} outside [0, 1]', field='alpha')
    return loss_f * alpha + loss_t * (1.0 - alpha)


def loss_combined(clean: Signal, enhanced: Signal, alpha: float = 0.2, spec: StftSpec = StftSpec(),
                  lengths: Optional[Sequence[int]] = None) -> tuple[Tensor, Tensor, Tensor]:
    """alpha * loss_frequency + (1 - alpha) * loss_time.

        Returns:
            tuple: The combined loss, the frequency loss and the time loss.
    """

    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f'alpha {alpha} outside [0, 1]', field='alpha')
    loss_f = loss_frequency(clean, enhanced, spec, lengths)
    loss_t = loss_time(clean, enhanced, lengths)
    return combine_losses(loss_f, loss_t, alpha), loss_f, loss_t
