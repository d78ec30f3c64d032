"""Unrolled Leaky Integrate-and-Fire neurons with a rectangle surrogate.

Per timestep, with h[-1] = 0::

    v[t] = h[t-1] + x[t]                          charge
    s[t] = H(v[t] - theta)                        fire (H(0) = 1)
    h[t] = beta * v[t] - theta * s[t]             soft reset
         = v[t] * (1 - s[t])                      hard reset

The backward replaces dH/dv by ``(1/a) * 1[|v - theta| < a/2]``. In
``soft`` mode the forward uses ``clamp((v - theta)/a + 1/2, 0, 1)``
instead of the step, whose derivative is exactly that rectangle, so finite
differences of the forward check the surrogate backward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var
from .errors import ParameterError, ShapeError

RESETS = ("soft", "hard")
MODES = ("spike", "soft")


@dataclass(frozen=True)
class LifParams:
    beta: float = 0.5
    theta: float = 1.0
    reset: str = "soft"
    a: float = 1.0
    mode: str = "spike"

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ParameterError(f"beta must be in (0, 1], got {self.beta}")
        if not self.theta > 0:
            raise ParameterError(f"theta must be positive, got {self.theta}")
        if not self.a > 0:
            raise ParameterError(f"surrogate width a must be positive, got {self.a}")
        if self.reset not in RESETS:
            raise ParameterError(f"reset must be one of {RESETS}, got {self.reset!r}")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")

    def replace(self, **changes) -> "LifParams":
        fields = {k: getattr(self, k) for k in ("beta", "theta", "reset", "a", "mode")}
        fields.update(changes)
        return LifParams(**fields)


@dataclass
class LifTrace:
    v: np.ndarray  # membrane after charging
    s: np.ndarray  # spikes (or clamped soft spikes)
    h: np.ndarray  # membrane after reset


def surrogate_grad(v, params: LifParams) -> np.ndarray:
    """Rectangle window of height 1/a and width a centred on the threshold."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(np.abs(v - params.theta) < params.a / 2, 1.0 / params.a, 0.0)


def lif_simulate(x, params: LifParams) -> LifTrace:
    """Run the neuron over the leading (time) axis of ``x``.

    Works for any numeric dtype, including object arrays of ``Fraction``
    for exact-arithmetic checks.
    """
    x = np.asarray(x)
    if x.ndim < 1 or x.shape[0] == 0:
        raise ShapeError("lif: need at least one timestep")
    p = params
    v = np.empty_like(x)
    s = np.empty_like(x)
    h = np.empty_like(x)
    prev = x[0] * 0
    for t in range(x.shape[0]):
        vt = prev + x[t]
        if p.mode == "spike":
            st = np.where(vt >= p.theta, x[t] * 0 + 1, x[t] * 0)
        else:
            st = np.clip((vt - p.theta) / p.a + 0.5, 0.0, 1.0)
        if p.reset == "soft":
            ht = p.beta * vt - p.theta * st
        else:
            ht = vt * (1 - st)
        v[t], s[t], h[t] = vt, st, ht
        prev = ht
    return LifTrace(v, s, h)


def lif_forward(x: Var, params: LifParams, output: str = "spikes") -> Var:
    """LIF layer on the tape; ``output`` selects spikes or the charged membrane v.

    The whole temporal recurrence is one node whose backward runs BPTT,
    including the reset path through the surrogate.
    """
    if output not in ("spikes", "membrane"):
        raise ParameterError(f"output must be 'spikes' or 'membrane', got {output!r}")
    trace = lif_simulate(x.value, params)
    sg = surrogate_grad(trace.v, params)
    if params.reset == "soft":
        dh_dv = params.beta - params.theta * sg
    else:
        dh_dv = (1.0 - trace.s) - trace.v * sg
    value = trace.s if output == "spikes" else trace.v

    def vjp(g, needs):
        gx = np.empty_like(g)
        carry = np.zeros_like(g[0])
        for t in range(g.shape[0] - 1, -1, -1):
            direct = g[t] * sg[t] if output == "spikes" else g[t]
            carry = direct + carry * dh_dv[t]
            gx[t] = carry
        return (gx,)

    return x.tape.record("lif", (x,), value, vjp, aux={"trace": trace},
                         beta=params.beta, theta=params.theta, reset=params.reset,
                         a=params.a, mode=params.mode, output=output)
