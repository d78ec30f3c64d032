"""Differentiable primitives on (T, B, C, H, W) float64 tensors.

Spatial ops act independently on each (t, b) slice. Every function takes
and returns :class:`~sterf.autodiff.Var` handles and records its backward
rule on the operand's tape.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Var
from .errors import DimensionError, ParameterError, ShapeError


def _check5(x: Var, op: str) -> tuple[int, int, int, int, int]:
    if x.value.ndim != 5:
        raise ShapeError(f"{op}: expected a (T, B, C, H, W) tensor, got shape {x.shape}")
    return x.shape


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Var, weight: Var, stride: int = 1, padding: int = 0, groups: int = 1) -> Var:
    """Zero-padded cross-correlation; weight is (C_out, C_in / groups, k, k)."""
    T, B, C, H, W = _check5(x, "conv2d")
    w = weight.value
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d: weight must be (C_out, C_in/groups, k, k), got {w.shape}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ParameterError(f"conv2d: bad stride={stride} padding={padding} groups={groups}")
    O, Cg, k, _ = w.shape
    if C % groups or O % groups or Cg != C // groups:
        raise DimensionError(
            f"conv2d: input has {C} channels, weight {w.shape} with groups={groups}")
    Ho = conv_output_size(H, k, stride, padding)
    Wo = conv_output_size(W, k, stride, padding)
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"conv2d: output size {Ho}x{Wo} for input {H}x{W}, k={k}")

    G, Og, N, L, s, p = groups, O // groups, T * B, Ho * Wo, stride, padding
    depthwise = Og == 1 and Cg == 1
    xp = np.pad(x.value.reshape(N, C, H, W), ((0, 0), (0, 0), (p, p), (p, p)))
    wg = w.reshape(G, Og, Cg, k, k)

    def window(arr, i, j):
        return arr[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s]

    out = np.zeros((N, G, Og, L))
    for i in range(k):
        for j in range(k):
            xs = window(xp, i, j).reshape(N, G, Cg, L)
            if depthwise:
                out += wg[:, :, :, i, j] * xs
            else:
                out += wg[:, :, :, i, j] @ xs
    value = out.reshape(T, B, O, Ho, Wo)

    def vjp(g, needs):
        g = g.reshape(N, G, Og, L)
        gx = gw = None
        if needs[0]:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    if depthwise:
                        gxs = wg[:, :, :, i, j] * g
                    else:
                        gxs = np.swapaxes(wg[:, :, :, i, j], 1, 2) @ g
                    window(gxp, i, j)[...] += gxs.reshape(N, C, Ho, Wo)
            gx = gxp[:, :, p:p + H, p:p + W].reshape(T, B, C, H, W)
        if needs[1]:
            gwg = np.zeros_like(wg)
            for i in range(k):
                for j in range(k):
                    xs = window(xp, i, j).reshape(N, G, Cg, L)
                    if depthwise:
                        gwg[:, :, :, i, j] = (g * xs).sum(axis=(0, 3))[:, :, None]
                    else:
                        gwg[:, :, :, i, j] = (g @ np.swapaxes(xs, 2, 3)).sum(axis=0)
            gw = gwg.reshape(w.shape)
        return gx, gw

    return x.tape.record("conv2d", (x, weight), value, vjp,
                         stride=stride, padding=padding, groups=groups, kernel=k)


def dwconv(x: Var, weight: Var, stride: int = 1, padding: int | None = None) -> Var:
    """Depthwise convolution: one k x k filter per channel, weight (C, 1, k, k)."""
    C = _check5(x, "dwconv")[2]
    w = weight.value
    if w.ndim != 4 or w.shape[:2] != (C, 1):
        raise DimensionError(f"dwconv: weight must be ({C}, 1, k, k), got {w.shape}")
    if padding is None:
        padding = w.shape[2] // 2
    return conv2d(x, weight, stride=stride, padding=padding, groups=C)


def pixelwise_linear(x: Var, weight: Var, bias: Var | None = None) -> Var:
    """y[t, b, :, h, w] = W @ x[t, b, :, h, w] + bias at every position."""
    C = _check5(x, "pixelwise_linear")[2]
    w = weight.value
    if w.ndim != 2 or w.shape[1] != C:
        raise DimensionError(f"pixelwise_linear: weight {w.shape} does not take {C} channels")
    if bias is not None and bias.value.shape != (w.shape[0],):
        raise DimensionError(f"pixelwise_linear: bias {bias.shape} != ({w.shape[0]},)")
    xv = x.value
    value = np.moveaxis(np.tensordot(xv, w, axes=([2], [1])), -1, 2)
    if bias is not None:
        value = value + bias.value[:, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g, needs):
        gx = gw = gb = None
        if needs[0]:
            gx = np.moveaxis(np.tensordot(g, w, axes=([2], [0])), -1, 2)
        if needs[1]:
            gw = np.tensordot(g, xv, axes=([0, 1, 3, 4], [0, 1, 3, 4]))
        if len(needs) > 2 and needs[2]:
            gb = g.sum(axis=(0, 1, 3, 4))
        return gx, gw, gb

    return x.tape.record("pixelwise_linear", inputs, value, vjp)


def batchnorm(x: Var, gamma: Var, beta: Var, eps: float = 1e-5, stats_grad: bool = True,
              fold_time: bool = True) -> Var:
    """Batch normalization with per-channel batch statistics.

    Statistics (mean, biased variance) are taken over (T, B, H, W) when
    ``fold_time`` is set, otherwise over (B, H, W) separately per timestep.
    With ``stats_grad=False`` the backward treats the statistics as
    constants, which removes the coupling between spatial positions.
    """
    C = _check5(x, "batchnorm")[2]
    if not eps > 0:
        raise ParameterError(f"batchnorm: eps must be positive, got {eps}")
    if gamma.value.shape != (C,) or beta.value.shape != (C,):
        raise DimensionError(
            f"batchnorm: affine shapes {gamma.shape}, {beta.shape} do not match {C} channels")
    axes = (0, 1, 3, 4) if fold_time else (1, 3, 4)
    xv = x.value
    mu = xv.mean(axis=axes, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    gam = gamma.value[:, None, None]
    value = gam * xhat + beta.value[:, None, None]

    def vjp(g, needs):
        gx = gg = gb = None
        if needs[0]:
            gy = g * gam
            if stats_grad:
                gx = inv_std * (gy - gy.mean(axis=axes, keepdims=True)
                                - xhat * (gy * xhat).mean(axis=axes, keepdims=True))
            else:
                gx = inv_std * gy
        if needs[1]:
            gg = (g * xhat).sum(axis=(0, 1, 3, 4))
        if needs[2]:
            gb = g.sum(axis=(0, 1, 3, 4))
        return gx, gg, gb

    return x.tape.record("batchnorm", (x, gamma, beta), value, vjp,
                         eps=eps, stats_grad=stats_grad, fold_time=fold_time)


def _same_shape(x: Var, y: Var, op: str) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


def add(x: Var, y: Var) -> Var:
    _same_shape(x, y, "add")
    return x.tape.record("add", (x, y), x.value + y.value, lambda g, needs: (g, g))


def scale(x: Var, k: float) -> Var:
    k = float(k)
    return x.tape.record("scale", (x,), x.value * k, lambda g, needs: (g * k,), k=k)


def hadamard(x: Var, y: Var) -> Var:
    _same_shape(x, y, "hadamard")
    xv, yv = x.value, y.value
    return x.tape.record("hadamard", (x, y), xv * yv, lambda g, needs: (g * yv, g * xv))


def spatial_sum(x: Var) -> Var:
    """Sum over (H, W), keeping singleton spatial dims."""
    _check5(x, "spatial_sum")
    H, W = x.shape[3:]

    def vjp(g, needs):
        return (np.broadcast_to(g, g.shape[:3] + (H, W)).copy(),)

    return x.tape.record("spatial_sum", (x,), x.value.sum(axis=(3, 4), keepdims=True), vjp)


def broadcast_hw(x: Var, H: int, W: int) -> Var:
    """Repeat a (T, B, C, 1, 1) tensor over an H x W grid."""
    if _check5(x, "broadcast_hw")[3:] != (1, 1):
        raise DimensionError(f"broadcast_hw: expected singleton spatial dims, got {x.shape}")
    value = np.broadcast_to(x.value, x.shape[:3] + (H, W)).copy()
    return x.tape.record("broadcast_hw", (x,), value,
                         lambda g, needs: (g.sum(axis=(3, 4), keepdims=True),), H=H, W=W)
