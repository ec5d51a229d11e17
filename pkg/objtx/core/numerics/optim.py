from typing import Dict, Iterable, Mapping, Optional

import numpy as np

from objtx.core.numerics.registry import ParamRegistry
from objtx.utils.errors import UsageError


class AdamState:
    def __init__(
        self,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        """
        Moment buffers and hyperparameters of Adam with decoupled weight decay.

        :param beta1: decay of the first-moment estimate
        :param beta2: decay of the second-moment estimate
        :param eps: added to the root of the second moment
        :param weight_decay: decoupled decay factor, applied as p <- p - lr*wd*p
        """
        self.step = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay


def adam_step(
    params: ParamRegistry,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    names: Optional[Iterable[str]] = None,
) -> ParamRegistry:
    """
    One bias-corrected Adam update over `names` (default: every gradient given).

    Decay-eligible parameters are first shrunk by lr*weight_decay, then moved by the
    moment-based step. Parameters not listed are left untouched, which is how frozen
    tensors are kept bit-identical.
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name in list(names) if names is not None else list(grads):
        p = params[name].data
        g = np.asarray(grads[name], dtype=p.dtype)
        if g.shape != p.shape:
            raise UsageError(f"{name}: gradient shape {g.shape} does not match {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        updated = p
        if state.weight_decay and params.decays(name):
            updated = updated - lr * state.weight_decay * updated
        m_hat = m / correction1
        v_hat = v / correction2
        updated = updated - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        params.replace(name, updated.astype(p.dtype))
    return params


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_frac: float = 0.1) -> float:
    """Linear warm-up from 0 to `base_lr` over the first `warmup_frac` of the run, then linear decay to 0."""
    if total_steps <= 0:
        raise UsageError(f"total_steps must be positive, got {total_steps}")
    if step < 0 or step > total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_frac * total_steps
    if warmup > 0 and step <= warmup:
        return base_lr * step / warmup
    if total_steps == warmup:
        return base_lr
    return base_lr * (total_steps - step) / (total_steps - warmup)


def update_lr(update: int, n_updates: int, base_lr: float, warmup_frac: float = 0.1) -> float:
    """
    Learning rate of the `update`-th (1-based) of `n_updates` optimizer steps.

    The schedule runs over `n_updates + 1` steps so its zero endpoints fall just outside
    the run: every update gets a positive rate.
    """
    if not 1 <= update <= n_updates:
        raise UsageError(f"update {update} outside [1, {n_updates}]")
    return lr_schedule(update, n_updates + 1, base_lr, warmup_frac)
