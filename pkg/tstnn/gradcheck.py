"""Finite-difference gradient checks

Every registered case builds float64 inputs, evaluates an output tensor, and
compares the taped gradient of a fixed random projection of that output with
central differences (step 1e-5). The error of one element is
``|analytic - numeric| / max(|analytic|, |numeric|, atol / rtol)``.

Whole-model cases pass through ReLU, PReLU and abs kinks that no input
construction can avoid. With ``kink_guard`` set, a failing element whose
forward and backward one-sided differences also disagree by more than the
tolerance is treated as having a kink inside the stencil, and another element
is drawn in its place. On a smooth stretch the two one-sided differences agree
up to a curvature term of order ``step``, so a wrong gradient still fails.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from tstnn import functional as F
from tstnn.autodiff import ParamStore, Tape, Tensor, backward, concat
from tstnn.exceptions import UsageError
from tstnn.framing import FramingSpec
from tstnn.layers import GroupNorm, Gru, LayerNorm
from tstnn.losses import StftSpec, loss_combined, loss_frequency, loss_time
from tstnn.model import PRESETS, TSTNN
from tstnn.transformer import AttentionParams, ImprovedTransformerLayer, TwoStageBlock, multi_head_attention

logger = logging.getLogger(__name__)

STEP = 1e-5
RTOL = 1e-4
ATOL = 1e-7
MODEL_RTOL = 1e-3
MODEL_SAMPLES = 20


@dataclass
class GradCase:
    """Output function over leaf inputs.

        Attributes:
            output (callable): Recomputes the output from the current input values.
            inputs (list): Leaf tensors whose gradients are checked.
            rtol (float): Largest acceptable relative error.
            samples (int, optional): Number of input elements to check; all when ``None``.
            kink_guard (bool): Redraw elements whose difference stencil straddles a kink.
    """

    output: Callable[[], Tensor]
    inputs: list[Tensor]
    rtol: float = RTOL
    samples: Optional[int] = None
    kink_guard: bool = False


@dataclass
class GradcheckResult:
    name: str
    max_error: float
    checked: int
    rtol: float
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_error < self.rtol

    def line(self) -> str:
        return (f'{self.name}\t{self.max_error:.3e}\t{self.checked}\t{self.skipped}\t'
                f'{"ok" if self.passed else "FAIL"}')


def check_gradients(case: GradCase, name: str = 'case', seed: int = 0, step: float = STEP,
                    atol: float = ATOL) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal(case.output().shape)

    def objective() -> float:
        return float(np.sum(case.output().data * projection))

    for tensor in case.inputs:
        tensor.zero_grad()
    with Tape() as tape:
        loss = (case.output() * projection).sum()
    backward(tape, loss)
    analytic = [tensor.grad.copy() for tensor in case.inputs]

    positions = [(i, index) for i, tensor in enumerate(case.inputs) for index in np.ndindex(tensor.shape)]
    if case.kink_guard:
        positions = [positions[k] for k in rng.permutation(len(positions))]
    elif case.samples is not None and len(positions) > case.samples:
        positions = [positions[k] for k in rng.choice(len(positions), case.samples, replace=False)]
    wanted = len(positions) if case.samples is None else min(case.samples, len(positions))
    base = objective() if case.kink_guard else 0.0

    worst, checked, skipped = 0.0, 0, 0
    for i, index in positions:
        if checked == wanted:
            break
        data = case.inputs[i].data
        original = data[index]
        data[index] = original + step
        plus = objective()
        data[index] = original - step
        minus = objective()
        data[index] = original
        numeric = (plus - minus) / (2.0 * step)
        exact = float(analytic[i][index])
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), atol / case.rtol)
        if case.kink_guard and error >= case.rtol:
            right, left = (plus - base) / step, (base - minus) / step
            if abs(right - left) > case.rtol * max(abs(right), abs(left), atol / case.rtol):
                skipped += 1
                continue
        worst = max(worst, error)
        checked += 1
    if skipped:
        logger.debug('%s: redrew %d elements with a kink inside the stencil', name, skipped)
    return GradcheckResult(name, worst, checked, case.rtol, skipped)


def _leaf(rng: np.random.Generator, *shape: int, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_zero(rng: np.random.Generator, *shape: int) -> Tensor:
    """Values with |x| >= 0.1 so kinks at zero stay out of the difference stencil."""

    magnitude = rng.uniform(0.1, 1.0, size=shape)
    return Tensor(magnitude * rng.choice([-1.0, 1.0], size=shape), requires_grad=True)


def _store(seed: int) -> ParamStore:
    return ParamStore(seed, np.float64)


def _toy_model(seed: int) -> TSTNN:
    return TSTNN(PRESETS['toy'], seed=seed, dtype=np.float64)


def _params(model: TSTNN, prefix: str) -> list[Tensor]:
    return [param for name, param in model.params.items() if name.startswith(prefix + '.')]


def _linear(rng):
    x, w, b = _leaf(rng, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
    return GradCase(lambda: F.linear(x, w, b), [x, w, b])


def _conv2d(rng):
    x, w, b = _leaf(rng, 2, 3, 5, 6), _leaf(rng, 4, 3, 2, 3), _leaf(rng, 4)
    w_strided = _leaf(rng, 2, 3, 1, 3)

    def output():
        dilated = F.conv2d(x, w, b, dilation=(2, 1), padding=F.Padding.CAUSAL_N)
        strided = F.conv2d(x, w_strided, None, stride=(1, 2))
        return concat([dilated.reshape(-1), strided.reshape(-1)])

    return GradCase(output, [x, w, b, w_strided])


def _gru(rng):
    store = _store(int(rng.integers(1 << 31)))
    layer = Gru(store, 'gru', 3, 4, bidirectional=True)
    x, h0 = _leaf(rng, 5, 2, 3), _leaf(rng, 2, 4)
    return GradCase(lambda: layer(x, h0), [x, h0] + [p for _, p in store.items()])


def _layer_norm(rng):
    store = _store(0)
    norm = LayerNorm(store, 'norm', 6)
    store['norm.gamma'].data[...] = rng.uniform(0.5, 1.5, size=6)
    x = _leaf(rng, 3, 6)
    return GradCase(lambda: norm(x), [x] + [p for _, p in store.items()])


def _group_norm(rng):
    store = _store(0)
    norm = GroupNorm(store, 'norm', 4, groups=2)
    store['norm.gamma'].data[...] = rng.uniform(0.5, 1.5, size=4)
    x = _leaf(rng, 2, 4, 3, 5)
    return GradCase(lambda: norm(x), [x] + [p for _, p in store.items()])


def _prelu(rng):
    x, a = _away_from_zero(rng, 2, 3, 4, 5), _leaf(rng, 3, low=0.1, high=0.4)
    return GradCase(lambda: F.prelu(x, a), [x, a])


def _elementwise(fn):
    def build(rng):
        x = _away_from_zero(rng, 3, 7)
        return GradCase(lambda: fn(x), [x])

    return build


def _softmax(rng):
    x = _leaf(rng, 2, 3, 6, low=-3.0, high=3.0)
    return GradCase(lambda: F.softmax(x, axis=-1), [x])


def _subpixel_shuffle(rng):
    x = _leaf(rng, 1, 4, 3, 5)
    return GradCase(lambda: F.subpixel_shuffle_f(x, 2), [x])


def _overlap_add(rng):
    spec = FramingSpec(8, 3)
    x = _leaf(rng, 2, 1, 4, 8)
    return GradCase(lambda: F.overlap_add_frames(x, spec, 25), [x])


def _frame_signal(rng):
    x = _leaf(rng, 2, 20)
    return GradCase(lambda: F.frame_signal(x, 8, 4), [x])


def _attention(rng):
    store = _store(int(rng.integers(1 << 31)))
    params = AttentionParams.create(store, 'attention', 4, 2)
    x = _leaf(rng, 2, 5, 4)
    return GradCase(lambda: multi_head_attention(x, params), [x] + [p for _, p in store.items()])


def _transformer_layer(rng):
    store = _store(int(rng.integers(1 << 31)))
    layer = ImprovedTransformerLayer(store, 'layer', 4, 2)
    x = _leaf(rng, 2, 5, 4)
    return GradCase(lambda: layer(x), [x] + [p for _, p in store.items()])


def _two_stage_block(rng):
    store = _store(int(rng.integers(1 << 31)))
    block = TwoStageBlock(store, 'block', 2, 2)
    x = _leaf(rng, 1, 2, 3, 4)
    return GradCase(lambda: block(x), [x] + [p for _, p in store.items()])


def _encoder(rng):
    model = _toy_model(int(rng.integers(1 << 31)))
    x = _leaf(rng, 1, 1, 3, 8)
    return GradCase(lambda: model.encoder(x), [x] + _params(model, 'encoder'))


def _tstm_input_proj(rng):
    model = _toy_model(int(rng.integers(1 << 31)))
    e = _leaf(rng, 1, 4, 3, 4)
    return GradCase(lambda: model.tstm_proj(e), [e] + _params(model, 'tstm_proj'))


def _masking(rng):
    model = _toy_model(int(rng.integers(1 << 31)))
    t, e = _leaf(rng, 1, 2, 3, 4), _leaf(rng, 1, 4, 3, 4)
    # positive mask logits keep the ReLU off its kink
    model.params['masking.conv_mask.bias'].data[...] = 1.0
    return GradCase(lambda: model.masking(t, e), [t, e] + _params(model, 'masking'))


def _decoder(rng):
    model = _toy_model(int(rng.integers(1 << 31)))
    m = _leaf(rng, 1, 4, 3, 4)
    return GradCase(lambda: model.decoder(m), [m] + _params(model, 'decoder'))


def _loss_frequency(rng):
    clean, enhanced = rng.uniform(-1.0, 1.0, size=(2, 20)), _leaf(rng, 2, 20)
    return GradCase(lambda: loss_frequency(clean, enhanced, StftSpec(8, 4), lengths=[20, 14]), [enhanced])


def _loss_time(rng):
    clean, enhanced = rng.uniform(-1.0, 1.0, size=(2, 20)), _leaf(rng, 2, 20)
    return GradCase(lambda: loss_time(clean, enhanced, lengths=[20, 14]), [enhanced])


def _full_model(rng):
    model = _toy_model(int(rng.integers(1 << 31)))
    noisy = rng.uniform(-0.5, 0.5, size=(2, 21))
    clean = rng.uniform(-0.5, 0.5, size=(2, 21))

    def output():
        loss, _, _ = loss_combined(clean, model.enhance_batch(noisy), 0.2, StftSpec(8, 4))
        return loss

    return GradCase(output, [p for _, p in model.params.items()], rtol=MODEL_RTOL, samples=MODEL_SAMPLES,
                    kink_guard=True)


def _tiny_model(rng):
    model = TSTNN(PRESETS['tiny'], seed=int(rng.integers(1 << 31)), dtype=np.float64)
    noisy, clean = rng.uniform(-0.5, 0.5, size=(2, 2, 200))

    def output():
        loss, _, _ = loss_combined(clean, model.enhance_batch(noisy), 0.2, StftSpec(64, 32))
        return loss

    return GradCase(output, [p for _, p in model.params.items()], rtol=MODEL_RTOL, samples=MODEL_SAMPLES,
                    kink_guard=True)


GRADCHECKS: dict[str, Callable[[np.random.Generator], GradCase]] = {
    'linear': _linear,
    'conv2d': _conv2d,
    'gru': _gru,
    'layer_norm': _layer_norm,
    'group_norm': _group_norm,
    'prelu': _prelu,
    'relu': _elementwise(F.relu),
    'sigmoid': _elementwise(F.sigmoid),
    'tanh': _elementwise(F.tanh),
    'softmax': _softmax,
    'abs': _elementwise(F.absolute),
    'subpixel_shuffle': _subpixel_shuffle,
    'overlap_add': _overlap_add,
    'frame_signal': _frame_signal,
    'attention': _attention,
    'transformer_layer': _transformer_layer,
    'two_stage_block': _two_stage_block,
    'encoder': _encoder,
    'tstm_input_proj': _tstm_input_proj,
    'masking': _masking,
    'decoder': _decoder,
    'loss_frequency': _loss_frequency,
    'loss_time': _loss_time,
    'full_model': _full_model,
    'tiny_model': _tiny_model,
}


def run_gradchecks(names: Optional[Sequence[str]] = None, seed: int = 0) -> list[GradcheckResult]:
    """Runs the named checks (all when ``names`` is empty) and returns one result each."""

    names = list(names) if names else list(GRADCHECKS)
    unknown = [name for name in names if name not in GRADCHECKS]
    if unknown:
        raise UsageError(f'unknown gradient check {unknown[0]}', field='op')

    results = []
    for name in names:
        rng = np.random.default_rng(seed)
        result = check_gradients(GRADCHECKS[name](rng), name, seed)
        logger.info('gradcheck %s: max error %.3e (%s)', name, result.max_error,
                    'ok' if result.passed else 'FAIL')
        results.append(result)
    return results
