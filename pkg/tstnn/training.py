"""Training loop

Each step assembles a batch (random fixed-length slices of long clips,
zero-padding of short ones), runs the model under a tape, computes the
combined loss, back-propagates, clips the global gradient norm and applies
Adam with the warmup/decay learning rate. One trace row is produced per step.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Iterator, Mapping, Optional, Sequence

import numpy as np

from config.settings import Config
from tstnn.autodiff import Tape, backward
from tstnn.checkpoint import save_checkpoint
from tstnn.exceptions import ConfigError, NumericError, ShapeError
from tstnn.framing import AudioBuffer
from tstnn.losses import StftSpec, loss_combined
from tstnn.model import TSTNN
from tstnn.optim import Adam, clip_gradients, grad_norm, lr_at

logger = logging.getLogger(__name__)

Pair = tuple[AudioBuffer, AudioBuffer]


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation, schedule and data settings; serialisable as flat JSON.

    ``d_model`` is a schedule constant only and is independent of the TSTM width.
    """

    alpha: float = 0.2
    k1: float = 0.2
    k2: float = 4e-4
    num_warmups: int = 4000
    d_model: int = 64
    decay: float = 0.98
    decay_every: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    epochs: int = 1
    batch_size: int = 4
    segment_seconds: float = 4.0
    seed: int = 0
    fft_size: int = 512
    stft_hop: int = 256
    max_steps: Optional[int] = None
    synth_count: int = 4
    synth_snr_db: float = 0.0
    synth_clip_samples: int = 16000
    synth_noise: str = 'white'
    data_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError('alpha must lie in [0, 1]', field='alpha')
        if self.clip_norm <= 0:
            raise ConfigError('must be positive', field='clip_norm')
        for name in ('num_warmups', 'd_model', 'decay_every', 'epochs', 'batch_size', 'synth_count',
                     'synth_clip_samples'):
            if int(getattr(self, name)) < 1:
                raise ConfigError('must be >= 1', field=name)
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError('must be >= 1', field='max_steps')
        if self.segment_seconds <= 0:
            raise ConfigError('must be positive', field='segment_seconds')
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError('must lie in (0, 1]', field='decay')
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError('Adam betas must lie in [0, 1)', field='beta1')
        StftSpec(self.fft_size, self.stft_hop)

    @property
    def stft(self) -> StftSpec:
        return StftSpec(self.fft_size, self.stft_hop)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> 'TrainConfig':
        unknown = set(values) - cls.field_names()
        if unknown:
            raise ConfigError('unknown training config key', field=sorted(unknown)[0])
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Batch:
    clean: np.ndarray
    noisy: np.ndarray
    lengths: np.ndarray


def assemble_batch(pairs: Sequence[Pair], segment_samples: int, rng: np.random.Generator) -> Batch:
    """Slices clips longer than ``segment_samples`` at a random offset and zero-pads the rest."""

    cleans, noisies = [], []
    for clean, noisy in pairs:
        if len(clean) != len(noisy):
            raise ShapeError(f'clean has {len(clean)} samples, noisy has {len(noisy)}')
        start = 0
        if len(clean) > segment_samples:
            start = int(rng.integers(0, len(clean) - segment_samples + 1))
        cleans.append(clean.samples[start:start + segment_samples])
        noisies.append(noisy.samples[start:start + segment_samples])

    lengths = np.array([c.shape[0] for c in cleans])
    clean_batch = np.zeros((len(pairs), lengths.max()))
    noisy_batch = np.zeros_like(clean_batch)
    for i, (clean, noisy) in enumerate(zip(cleans, noisies)):
        clean_batch[i, :clean.shape[0]] = clean
        noisy_batch[i, :noisy.shape[0]] = noisy
    return Batch(clean_batch, noisy_batch, lengths)


def iterate_batches(data: Sequence[Pair], cfg: TrainConfig, segment_samples: int,
                    rng: np.random.Generator) -> Iterator[Batch]:
    order = rng.permutation(len(data))
    for start in range(0, len(order), cfg.batch_size):
        yield assemble_batch([data[i] for i in order[start:start + cfg.batch_size]], segment_samples, rng)


@dataclass
class TraceRow:
    step: int
    epoch: int
    lr: float
    loss: float
    loss_f: float
    loss_t: float
    grad_norm: float

    def line(self) -> str:
        return '\t'.join([str(self.step), str(self.epoch)]
                         + [repr(float(v)) for v in (self.lr, self.loss, self.loss_f, self.loss_t, self.grad_norm)])


@dataclass
class TrainReport:
    rows: list[TraceRow] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.rows)

    @property
    def initial_loss(self) -> float:
        return self.rows[0].loss

    @property
    def final_loss(self) -> float:
        return self.rows[-1].loss

    def lines(self) -> list[str]:
        return [row.line() for row in self.rows]


def _abort(model: TSTNN, last_good: dict, checkpoint_path: Optional[str], step: int, what: str) -> None:
    model.params.restore(last_good)
    logger.warning('restored last finite parameters before step %d', step)
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path)
    raise NumericError(f'non-finite {what} at step {step}', field=what)


def train(model: TSTNN, cfg: TrainConfig, data: Sequence[Pair], trace_path: Optional[str] = None,
          checkpoint_path: Optional[str] = None) -> TrainReport:
    """Trains ``model`` in place.

        Args:
            model (TSTNN): Model to update.
            cfg (TrainConfig): Optimisation settings.
            data (list): (clean, noisy) pairs at the model's sample rate.
            trace_path (str, optional): File receiving one tab-separated row per step.
            checkpoint_path (str, optional): Written at the end, or with the last finite
                parameters when training aborts.

        Returns:
            TrainReport: Per-step trace.

        Raises:
            NumericError: if the loss or gradient norm becomes non-finite.
    """

    if not data:
        raise ConfigError('no training data', field='data')
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.params, cfg.beta1, cfg.beta2, cfg.eps)
    segment_samples = int(round(cfg.segment_seconds * model.config.sample_rate))
    stft_spec = cfg.stft
    report = TrainReport()
    trace = open(trace_path, 'w') if trace_path else None

    step = 0
    last_good = model.params.snapshot()
    try:
        for epoch in range(cfg.epochs):
            for batch in iterate_batches(data, cfg, segment_samples, rng):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                step += 1
                lr = lr_at(step, epoch, cfg)
                model.params.zero_grad()
                with Tape() as tape:
                    enhanced = model.enhance_batch(batch.noisy)
                    loss, loss_f, loss_t = loss_combined(batch.clean, enhanced, cfg.alpha, stft_spec,
                                                         batch.lengths)
                if not np.isfinite(loss.item()):
                    _abort(model, last_good, checkpoint_path, step, 'loss')
                last_good = model.params.snapshot()

                backward(tape, loss)
                norm = grad_norm(model.params)
                if not np.isfinite(norm):
                    _abort(model, last_good, checkpoint_path, step, 'grad_norm')
                clip_gradients(model.params, cfg.clip_norm)
                optimizer.step(lr)

                row = TraceRow(step, epoch, lr, loss.item(), loss_f.item(), loss_t.item(), norm)
                # free this step's graph before the next forward pass
                del tape, enhanced, loss, loss_f, loss_t
                report.rows.append(row)
                if trace:
                    trace.write(row.line() + '\n')
                if step % Config.LOG_EVERY == 0 or step == 1:
                    logger.info('step %d epoch %d lr %.4g loss %.5g grad %.4g',
                                step, epoch, lr, row.loss, norm)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    finally:
        if trace:
            trace.close()

    if checkpoint_path:
        save_checkpoint(model, checkpoint_path)
    return report
