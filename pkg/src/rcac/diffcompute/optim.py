"""Adam and Polyak averaging over ParameterSets."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from rcac.diffcompute.net import ParameterSet
from rcac.errors import ConfigurationError, NumericError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_update(value, grad, m, v, step, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam update, in place on ``value``, ``m`` and ``v``.

    ``step`` is the 1-based count of updates including this one.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(value.dtype, copy=False)


class Adam:
    """Adam over one or more ParameterSets.

    Moment buffers live here, not in the parameter sets, so several
    optimizers can update a shared set (the encoder) with independent state.
    Gradients are read but never cleared.
    """

    def __init__(self, param_sets: Sequence[ParameterSet], lr: float,
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS,
                 name: str = "adam"):
        if lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        self.param_sets = list(param_sets)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.name = name
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        seen = set()
        for ps in self.param_sets:
            for pname in ps:
                if pname in seen:
                    raise ConfigurationError(f"{name}: parameter {pname!r} registered twice")
                seen.add(pname)
                self.m[pname] = np.zeros_like(ps[pname])
                self.v[pname] = np.zeros_like(ps[pname])

    def step(self) -> None:
        self.step_count += 1
        for ps in self.param_sets:
            for pname in ps:
                adam_update(ps.values[pname], ps.grads[pname], self.m[pname], self.v[pname],
                            self.step_count, self.lr, self.beta1, self.beta2, self.eps)
                if not np.isfinite(ps.values[pname]).all():
                    raise NumericError(f"{self.name}: non-finite value in {pname} after step")

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for pname in self.m:
            out[f"{self.name}/m/{pname}"] = self.m[pname]
            out[f"{self.name}/v/{pname}"] = self.v[pname]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for pname in self.m:
            self.m[pname][...] = arrays[f"{self.name}/m/{pname}"]
            self.v[pname][...] = arrays[f"{self.name}/v/{pname}"]
        self.step_count = int(step_count)


def soft_update(target: ParameterSet, online: ParameterSet, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, elementwise and in place."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"tau must lie in [0, 1], got {tau}")
    if set(target.names()) != set(online.names()):
        raise ConfigurationError("target and online parameter names differ")
    for pname in online:
        t, o = target.values[pname], online.values[pname]
        if t.shape != o.shape:
            raise ConfigurationError(f"{pname}: shape {t.shape} vs {o.shape}")
        if tau == 1.0:
            t[...] = o
        elif tau > 0.0:
            t *= (1.0 - tau)
            t += tau * o
