"""Framing

Splits waveforms into overlapped rectangular frames, inverts the split by
coverage-normalised overlap-add, and reads/writes 16-bit PCM WAV files.

Frame ``n`` of a signal covers samples ``[n * stride, n * stride + frame_size)``
where ``stride = frame_size - overlap``. Signals are zero-padded on the right
so that the last frame ends exactly at the padded length.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import soundfile as sf

from tstnn.constants import PCM_MAX, PCM_SCALE
from tstnn.exceptions import AudioFormatError, ConfigError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AudioBuffer:
    """Mono waveform with its sample rate.

        Attributes:
            samples (np.ndarray): 1-D array of real samples, nominally in [-1, 1].
            sample_rate (int): Sampling rate in Hz.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) <= 0:
            raise ConfigError('sample rate must be positive', field='sample_rate')
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ShapeError('audio samples must be finite', field='samples')

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class FrameTensor:
    """Rank-4 feature carrier ``[batch, channels, n_frames, frame_dim]``.

        Attributes:
            data (np.ndarray): Frame values.
            sample_rate (int, optional): Rate of the waveform the frames were cut from.
    """

    data: np.ndarray
    sample_rate: Optional[int] = None

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 4 or min(self.data.shape) < 1:
            raise ShapeError(f'frame tensor must be rank 4 with positive dims, got {self.data.shape}')
        if not np.all(np.isfinite(self.data)):
            raise ShapeError('frame tensor elements must be finite')

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(self.data.shape)


def padded_length(length: int, frame_size: int, stride: int) -> int:
    """Smallest L' >= max(length, frame_size) with (L' - frame_size) divisible by stride."""

    base = max(length, frame_size)
    remainder = (base - frame_size) % stride
    return base + (stride - remainder) % stride


def frame_indices(n_frames: int, frame_size: int, stride: int) -> np.ndarray:
    """Returns the ``[n_frames, frame_size]`` sample positions gathered into each frame."""

    return np.arange(n_frames)[:, None] * stride + np.arange(frame_size)[None, :]


@dataclass(frozen=True)
class FramingSpec:
    """Frame size F and overlap H, with stride S = F - H.

        Attributes:
            frame_size (int): Samples per frame.
            overlap (int): Samples shared by adjacent frames.
    """

    frame_size: int
    overlap: int

    def __post_init__(self) -> None:
        if self.frame_size < 2:
            raise ConfigError('frame size must be at least 2', field='frame_size')
        if not 0 < self.overlap < self.frame_size:
            raise ConfigError(f'overlap must lie in (0, {self.frame_size})', field='overlap')

    @property
    def stride(self) -> int:
        return self.frame_size - self.overlap

    def padded_length(self, length: int) -> int:
        return padded_length(length, self.frame_size, self.stride)

    def n_frames(self, length: int) -> int:
        return (self.padded_length(length) - self.frame_size) // self.stride + 1

    def indices(self, n_frames: int) -> np.ndarray:
        return frame_indices(n_frames, self.frame_size, self.stride)

    def coverage(self, n_frames: int) -> np.ndarray:
        """Number of frames covering each position of the padded signal."""

        total = (n_frames - 1) * self.stride + self.frame_size
        counts = np.zeros(total)
        np.add.at(counts, self.indices(n_frames), 1.0)
        return counts


def segment_array(signals: np.ndarray, spec: FramingSpec) -> np.ndarray:
    """Frames a ``[batch, length]`` array into ``[batch, 1, n_frames, frame_size]``."""

    signals = np.atleast_2d(signals)
    batch, length = signals.shape
    total = spec.padded_length(length)
    padded = np.zeros((batch, total), dtype=signals.dtype)
    padded[:, :length] = signals
    frames = padded[:, spec.indices(spec.n_frames(length))]
    return frames[:, None, :, :]


def overlap_add_array(frames: np.ndarray, spec: FramingSpec, original_length: int) -> np.ndarray:
    """Inverts :func:`segment_array` for ``[batch, n_frames, frame_size]`` input.

        Returns:
            np.ndarray: ``[batch, original_length]`` coverage-normalised sum.
    """

    batch, n_frames, frame_dim = frames.shape
    if frame_dim != spec.frame_size:
        raise ShapeError(f'frame dim {frame_dim} does not match frame size {spec.frame_size}')
    coverage = spec.coverage(n_frames)
    summed = np.zeros((batch, coverage.shape[0]), dtype=frames.dtype)
    np.add.at(summed, (slice(None), spec.indices(n_frames)), frames)
    return (summed / coverage.astype(frames.dtype))[:, :original_length]


def segment(audio: AudioBuffer, spec: FramingSpec) -> tuple[FrameTensor, int]:
    """Splits a waveform into overlapped frames.

        Args:
            audio (AudioBuffer): Non-empty input waveform.
            spec (FramingSpec): Frame size and overlap.

        Returns:
            tuple: ``FrameTensor`` of shape ``[1, 1, N, F]`` and the original length.
    """

    if len(audio) == 0:
        raise ShapeError('cannot segment empty audio', field='samples')
    return FrameTensor(segment_array(audio.samples[None, :], spec), audio.sample_rate), len(audio)


def overlap_add(frames: FrameTensor, spec: FramingSpec, original_length: int,
                sample_rate: Optional[int] = None) -> AudioBuffer:
    """Reconstructs a waveform from frames, trimmed to ``original_length``.

    The output rate is the one the frames carry from :func:`segment`; ``sample_rate``
    supplies it for frames built elsewhere and must agree when both are known.
    """

    if sample_rate is None:
        sample_rate = frames.sample_rate
    elif frames.sample_rate is not None and frames.sample_rate != sample_rate:
        raise ConfigError(f'frames were cut at {frames.sample_rate} Hz, not {sample_rate} Hz',
                          field='sample_rate')
    if sample_rate is None:
        raise ConfigError('frames carry no sample rate and none was given', field='sample_rate')
    batch, channels, _, _ = frames.dims
    if batch != 1 or channels != 1:
        raise ShapeError(f'overlap-add expects batch 1 and channel 1, got {frames.dims}')
    samples = overlap_add_array(frames.data[:, 0], spec, original_length)[0]
    return AudioBuffer(samples, sample_rate)


def read_wav(path: str) -> AudioBuffer:
    """Reads a 16-bit PCM mono little-endian WAV file, scaling samples by 1/32768."""

    try:
        info = sf.info(path)
    except RuntimeError as e:
        raise AudioFormatError(f'unreadable WAV header in {path}: {e}', field='header')

    if info.format != 'WAV':
        raise AudioFormatError(f'{path} is {info.format}, expected WAV', field='format')
    if info.channels != 1:
        raise AudioFormatError(f'{path} has {info.channels} channels, expected 1', field='channels')
    if info.subtype != 'PCM_16':
        raise AudioFormatError(f'{path} is {info.subtype}, expected PCM_16', field='subtype')
    if info.endian not in ('FILE', 'LITTLE'):
        raise AudioFormatError(f'{path} is {info.endian}-endian', field='endian')

    data, sample_rate = sf.read(path, dtype='int16', always_2d=False)
    return AudioBuffer(data.astype(np.float64) / PCM_SCALE, sample_rate)


def quantize(samples: Union[np.ndarray, list]) -> np.ndarray:
    """Symmetric clamp-and-quantize to 16-bit integers."""

    scaled = np.round(np.asarray(samples, dtype=np.float64) * PCM_SCALE)
    return np.clip(scaled, -PCM_MAX, PCM_MAX).astype(np.int16)


def write_wav(path: str, audio: AudioBuffer) -> None:
    sf.write(path, quantize(audio.samples), audio.sample_rate, subtype='PCM_16', format='WAV')
    logger.debug('wrote %d samples to %s', len(audio), path)
