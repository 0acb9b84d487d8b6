"""Learning-rate schedule, gradient clipping and Adam."""

import logging
import math

import numpy as np

from tstnn.autodiff import ParamStore
from tstnn.exceptions import UsageError

logger = logging.getLogger(__name__)


def lr_at(step: int, epoch: int, cfg) -> float:
    """Warmup-then-decay learning rate.

    While ``step <= num_warmups`` the rate rises linearly,
    ``k1 * d_model^-0.5 * step * num_warmups^-1.5``; afterwards it is
    ``k2 * decay^floor(epoch / decay_every)``. ``step`` counts optimizer steps
    from 1 across epochs.

        Args:
            step (int): Global optimizer step, starting at 1.
            epoch (int): Zero-based epoch index.
            cfg (TrainConfig): Schedule constants.
    """

    if step < 1:
        raise UsageError(f'step counter starts at 1, got {step}', field='step')
    if step <= cfg.num_warmups:
        return cfg.k1 * cfg.d_model ** -0.5 * step * cfg.num_warmups ** -1.5
    return cfg.k2 * cfg.decay ** (epoch // cfg.decay_every)


def grad_norm(store: ParamStore) -> float:
    total = 0.0
    for _, param in store.items():
        grad = param.grad.astype(np.float64)
        total += float(np.sum(grad * grad))
    return math.sqrt(total)


def clip_gradients(store: ParamStore, max_norm: float) -> float:
    """Rescales all gradients so their global L2 norm is at most ``max_norm``; returns the scale."""

    norm = grad_norm(store)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for _, param in store.items():
        param.grad = param.grad * param.dtype.type(scale)
    logger.debug('clipped gradient norm %.4g to %.4g', norm, max_norm)
    return scale


class AdamState:
    """First and second moment estimates per parameter name."""

    def __init__(self, store: ParamStore) -> None:
        self.m = {name: np.zeros_like(param.data) for name, param in store.items()}
        self.v = {name: np.zeros_like(param.data) for name, param in store.items()}


def adam_step(store: ParamStore, state: AdamState, lr: float, t: int, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every parameter, in place."""

    if t < 1:
        raise UsageError(f'Adam step counter starts at 1, got {t}', field='t')
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, param in store.items():
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * param.grad
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * param.grad * param.grad
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        param.data -= update.astype(param.dtype)


class Adam:
    """Stateful wrapper around :func:`adam_step` that counts steps from 1."""

    def __init__(self, store: ParamStore, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> None:
        self.store = store
        self.state = AdamState(store)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        adam_step(self.store, self.state, lr, self.t, self.beta1, self.beta2, self.eps)
