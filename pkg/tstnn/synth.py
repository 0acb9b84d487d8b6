"""Synthetic clean/noisy pairs

Clean clips are sums of two to five sinusoids under a slow random envelope,
or crops of user WAV files. Noise is white, pink (1/f power) or a recorded
WAV, scaled so that the mixture reaches the target SNR exactly.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tstnn.constants import SILENCE_ENERGY
from tstnn.exceptions import ConfigError, GenerationError
from tstnn.framing import AudioBuffer, read_wav

logger = logging.getLogger(__name__)

PEAK_LIMIT = 0.99


@dataclass(frozen=True)
class SynthSpec:
    """How to generate a batch of training or evaluation mixtures.

        Attributes:
            snr_db (float): Target SNR; ``math.inf`` leaves the clean signal untouched.
            clip_samples (int): Length of every clip.
            sample_rate (int): Sampling rate in Hz.
            noise (str): ``white``, ``pink`` or a path to a 16-bit mono WAV.
            seed (int): Seed of the generator; equal seeds give equal batches.
            clean_files (tuple): Optional WAV paths used instead of sinusoids.
    """

    snr_db: float = 0.0
    clip_samples: int = 16000
    sample_rate: int = 16000
    noise: str = 'white'
    seed: int = 0
    clean_files: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ConfigError('target SNR must be finite or +inf', field='snr_db')
        if self.clip_samples < 1:
            raise ConfigError('clip length must be positive', field='clip_samples')
        if self.sample_rate < 1:
            raise ConfigError('sample rate must be positive', field='sample_rate')


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Returns ``clean + g * noise`` with g set so that 10 log10(P_clean / P_gnoise) = snr_db."""

    if snr_db == math.inf:
        return clean.copy()
    p_clean = float(np.mean(clean * clean))
    p_noise = float(np.mean(noise * noise))
    if p_clean < SILENCE_ENERGY:
        raise GenerationError('clean signal is silent, SNR is undefined', field='clean')
    if p_noise < SILENCE_ENERGY:
        raise GenerationError('noise signal is silent, SNR cannot be reached', field='noise')
    gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return clean + gain * noise


def sinusoid_clip(rng: np.random.Generator, n_samples: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n_samples) / sample_rate
    n_tones = int(rng.integers(2, 6))
    top = min(4000.0, 0.45 * sample_rate)
    signal = np.zeros(n_samples)
    for _ in range(n_tones):
        freq = rng.uniform(100.0, top)
        signal += rng.uniform(0.2, 1.0) * np.sin(2.0 * np.pi * freq * t + rng.uniform(0.0, 2.0 * np.pi))
    envelope = 0.6 + 0.4 * np.sin(2.0 * np.pi * rng.uniform(0.5, 4.0) * t + rng.uniform(0.0, 2.0 * np.pi))
    signal *= envelope
    return 0.5 * signal / np.max(np.abs(signal))


def pink_noise(rng: np.random.Generator, n_samples: int) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n_samples))
    freqs = np.arange(spectrum.shape[0], dtype=np.float64)
    freqs[0] = 1.0
    return np.fft.irfft(spectrum / np.sqrt(freqs), n=n_samples)


def _crop(rng: np.random.Generator, samples: np.ndarray, n_samples: int) -> np.ndarray:
    """Tiles ``samples`` when too short, then crops at a random offset."""

    if samples.shape[0] == 0:
        raise GenerationError('source audio is empty', field='noise')
    repeats = -(-(n_samples + samples.shape[0]) // samples.shape[0])
    tiled = np.tile(samples, repeats)
    start = int(rng.integers(0, samples.shape[0]))
    return tiled[start:start + n_samples]


class NoiseSource:
    def __init__(self, kind: str, sample_rate: int) -> None:
        self.kind = kind
        self.recording: Optional[np.ndarray] = None
        if kind not in ('white', 'pink'):
            audio = read_wav(kind)
            if audio.sample_rate != sample_rate:
                raise GenerationError(f'noise rate {audio.sample_rate} differs from {sample_rate}',
                                      field='noise')
            self.recording = audio.samples

    def __call__(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        if self.kind == 'white':
            return rng.standard_normal(n_samples)
        if self.kind == 'pink':
            return pink_noise(rng, n_samples)
        return _crop(rng, self.recording, n_samples)


def _clean_sources(spec: SynthSpec) -> list[np.ndarray]:
    sources = []
    for path in spec.clean_files:
        audio = read_wav(path)
        if audio.sample_rate != spec.sample_rate:
            raise GenerationError(f'{path} has rate {audio.sample_rate}, expected {spec.sample_rate}',
                                  field='clean')
        sources.append(audio.samples)
    return sources


def synth_batch(spec: SynthSpec, count: int) -> list[tuple[AudioBuffer, AudioBuffer]]:
    """Generates ``count`` deterministic (clean, noisy) pairs.

    A pair whose mixture would clip is scaled down jointly, which keeps its SNR.
    """

    if count < 1:
        raise ConfigError('count must be positive', field='count')
    rng = np.random.default_rng(spec.seed)
    noise = NoiseSource(spec.noise, spec.sample_rate)
    sources: Sequence[np.ndarray] = _clean_sources(spec)

    pairs = []
    for i in range(count):
        if sources:
            clean = _crop(rng, sources[i % len(sources)], spec.clip_samples)
        else:
            clean = sinusoid_clip(rng, spec.clip_samples, spec.sample_rate)
        noisy = mix_at_snr(clean, noise(rng, spec.clip_samples), spec.snr_db)
        peak = float(np.max(np.abs(noisy)))
        if peak > PEAK_LIMIT:
            clean, noisy = clean * (PEAK_LIMIT / peak), noisy * (PEAK_LIMIT / peak)
        pairs.append((AudioBuffer(clean, spec.sample_rate), AudioBuffer(noisy, spec.sample_rate)))

    logger.info('generated %d mixtures at %s dB', count, spec.snr_db)
    return pairs
