"""Objective quality metrics

Segmental SNR averages per-frame SNRs clamped to [-10, 35] dB over frames
whose clean energy is above a silence threshold. Whole-signal SNR and
scale-invariant SNR are capped at +-60 dB so that perfect reconstructions
report a finite value.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from tstnn.constants import SILENCE_ENERGY, SNR_CAP_DB, SSNR_MAX_DB, SSNR_MIN_DB
from tstnn.exceptions import ShapeError, UndefinedMetricError
from tstnn.framing import AudioBuffer, frame_indices, padded_length

logger = logging.getLogger(__name__)

Signal = Union[AudioBuffer, np.ndarray]


def _pair(clean: Signal, enhanced: Signal) -> tuple[np.ndarray, np.ndarray]:
    clean = clean.samples if isinstance(clean, AudioBuffer) else np.asarray(clean, dtype=np.float64)
    enhanced = enhanced.samples if isinstance(enhanced, AudioBuffer) else np.asarray(enhanced, dtype=np.float64)
    if clean.shape != enhanced.shape or clean.ndim != 1:
        raise ShapeError(f'clean {clean.shape} and enhanced {enhanced.shape} must be equal 1-D signals')
    return clean, enhanced


def _ratio_db(signal_energy: float, error_energy: float) -> float:
    if signal_energy == 0.0:
        return -math.inf
    if error_energy == 0.0:
        return math.inf
    return 10.0 * math.log10(signal_energy / error_energy)


def _cap(value: float, low: float, high: float) -> float:
    return min(max(value, low), high)


def ssnr(clean: Signal, enhanced: Signal, frame: int = 512, hop: int = 256) -> float:
    """Segmental SNR in dB over frames of ``frame`` samples every ``hop`` samples.

    Signals are zero-padded on the right to the last full frame.

        Raises:
            UndefinedMetricError: if every frame of ``clean`` is silent.
    """

    clean, enhanced = _pair(clean, enhanced)
    if frame < 1 or not 1 <= hop <= frame:
        raise ShapeError(f'invalid SSNR framing {frame}/{hop}')
    total = padded_length(clean.shape[0], frame, hop)
    indices = frame_indices((total - frame) // hop + 1, frame, hop)
    padded_clean = np.zeros(total)
    padded_clean[:clean.shape[0]] = clean
    padded_error = np.zeros(total)
    padded_error[:clean.shape[0]] = clean - enhanced

    signal_energy = np.sum(padded_clean[indices] ** 2, axis=1)
    error_energy = np.sum(padded_error[indices] ** 2, axis=1)
    retained = signal_energy >= SILENCE_ENERGY
    if not retained.any():
        raise UndefinedMetricError('no frame of the clean signal carries energy', field='clean')
    skipped = int((~retained).sum())
    if skipped > retained.shape[0] / 2:
        logger.warning('skipped %d of %d silent frames', skipped, retained.shape[0])

    values = [_cap(_ratio_db(s, e), SSNR_MIN_DB, SSNR_MAX_DB)
              for s, e in zip(signal_energy[retained], error_energy[retained])]
    return float(np.mean(values))


def snr(clean: Signal, enhanced: Signal) -> float:
    clean, enhanced = _pair(clean, enhanced)
    signal_energy = float(np.sum(clean * clean))
    if signal_energy == 0.0:
        raise UndefinedMetricError('clean signal has zero energy', field='clean')
    error = clean - enhanced
    return _cap(_ratio_db(signal_energy, float(np.sum(error * error))), -SNR_CAP_DB, SNR_CAP_DB)


def si_snr(clean: Signal, enhanced: Signal) -> float:
    """SNR of ``enhanced`` after projecting it onto ``clean``; invariant to rescaling ``enhanced``."""

    clean, enhanced = _pair(clean, enhanced)
    clean_energy = float(np.sum(clean * clean))
    if clean_energy == 0.0:
        raise UndefinedMetricError('clean signal has zero energy', field='clean')
    target = (float(np.dot(enhanced, clean)) / clean_energy) * clean
    residual = enhanced - target
    return _cap(_ratio_db(float(np.sum(target * target)), float(np.sum(residual * residual))),
                -SNR_CAP_DB, SNR_CAP_DB)


@dataclass
class UtteranceMetrics:
    name: str
    ssnr_db: float
    snr_db: float
    si_snr_db: float

    @classmethod
    def measure(cls, name: str, clean: Signal, enhanced: Signal, frame: int = 512,
                hop: int = 256) -> 'UtteranceMetrics':
        return cls(name, ssnr(clean, enhanced, frame, hop), snr(clean, enhanced), si_snr(clean, enhanced))

    def values(self) -> tuple[float, float, float]:
        return self.ssnr_db, self.snr_db, self.si_snr_db


@dataclass
class MetricReport:
    """Per-utterance metrics plus corpus means."""

    utterances: list[UtteranceMetrics] = field(default_factory=list)

    def add(self, metrics: UtteranceMetrics) -> None:
        self.utterances.append(metrics)

    def means(self) -> tuple[float, float, float]:
        if not self.utterances:
            raise UndefinedMetricError('no utterances evaluated', field='utterances')
        return tuple(float(v) for v in np.mean([u.values() for u in self.utterances], axis=0))


class ReportGenerator:
    """Renders metric reports as tab-separated lines.

        Attributes:
            report (MetricReport): Metrics of the processed files.
            baseline (MetricReport): Optional metrics of the unprocessed inputs.
    """

    def __init__(self, report: MetricReport, baseline: MetricReport = None) -> None:
        self.report = report
        self.baseline = baseline

    @staticmethod
    def _row(label: str, values) -> str:
        return '\t'.join([label] + [f'{v:.4f}' for v in values])

    def generate_report(self) -> list[str]:
        """One ``path ssnr snr si_snr`` line per utterance, then the corpus means.

        With a baseline, the noisy-input means and the mean improvements follow.
        """

        lines = [self._row(u.name, u.values()) for u in self.report.utterances]
        means = self.report.means()
        lines.append(self._row('mean', means))
        if self.baseline is not None:
            baseline_means = self.baseline.means()
            lines.append(self._row('baseline_mean', baseline_means))
            lines.append(self._row('improvement', [m - b for m, b in zip(means, baseline_means)]))
        return lines
