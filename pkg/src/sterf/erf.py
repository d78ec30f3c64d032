"""Spatio-temporal effective receptive fields by gradient stimuli.

One backward pass per sample computes the aggregated receptive field
directly: the output adjoint is set to a unit stimulus (the centre pixel at
every timestep and channel for the spatial map, every pixel at the last
timestep for the temporal profile), so the adjoint that reaches the input is
the sum of all the stimulated output-input partial derivatives.

Sample ``i`` of a run with seed ``s`` draws its input from
``randn(shape, stream_seed(s, i))`` and results are reduced in sample order,
so thread count never changes the output bits.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .errors import ParameterError
from .network import Network
from .rng import randn, stream_seed

DEFAULT_SAMPLES = 60
DEFAULT_SEED = 42
CHANNEL_AGGREGATIONS = ("sum", "mean")
READ_POINTS = ("network_input", "stage_input")


@dataclass
class ErfSpatial:
    grid: np.ndarray  # (H, W), signed
    per_channel: np.ndarray  # (C, H, W), signed, before channel aggregation
    meta: dict = field(default_factory=dict)


@dataclass
class ErfTemporal:
    values: np.ndarray  # values[tau] for input timestep T-1-tau (0-based)
    meta: dict = field(default_factory=dict)


@dataclass
class SpreadReport:
    r95: float
    centroid: tuple[float, float]
    mass_entropy: float
    zero_mass: bool = False

    def to_dict(self) -> dict:
        return {"r95": self.r95, "centroid": list(self.centroid),
                "mass_entropy": self.mass_entropy, "zero_mass": self.zero_mass}


def make_spatial_stimulus(out_shape, center: tuple[int, int] | None = None) -> np.ndarray:
    """Ones at the centre pixel (H//2, W//2) for every (t, b, c)."""
    T, B, C, H, W = out_shape
    i, j = (H // 2, W // 2) if center is None else center
    stim = np.zeros(out_shape)
    stim[:, :, :, i, j] = 1.0
    return stim


def make_temporal_stimulus(out_shape) -> np.ndarray:
    """Ones at every (b, c, h, w) of the final timestep only."""
    stim = np.zeros(out_shape)
    stim[-1] = 1.0
    return stim


def sample_input(net: Network, seed: int, index: int) -> np.ndarray:
    return randn(net.input_tensor_shape, stream_seed(seed, index))


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("STERF_THREADS", "1") or 1)
    return max(1, threads)


def stimulus_gradient(net: Network, x: np.ndarray, probe: str, kind: str = "spatial",
                      bn_stats: bool = True, read_at: str = "network_input",
                      center: tuple[int, int] | None = None) -> np.ndarray:
    """Adjoint at the read point for one input and one stimulus kind."""
    if read_at not in READ_POINTS:
        raise ParameterError(f"read_at must be one of {READ_POINTS}, got {read_at!r}")
    probe = net.check_probe(probe)
    tape = Tape()
    trace = net.forward(tape, x, upto=probe, bn_stats=bn_stats)
    out = trace.outputs[probe]
    if kind == "spatial":
        stim = make_spatial_stimulus(out.shape, center)
    elif kind == "temporal":
        stim = make_temporal_stimulus(out.shape)
    else:
        raise ParameterError(f"unknown stimulus kind {kind!r}")
    read = trace.input if read_at == "network_input" else trace.stage_inputs[probe]
    adj = tape.backward(out, stim)
    return adj.get(read.id, np.zeros(read.shape))


def _per_sample(net, probe, seed, samples, kind, bn_stats, read_at, center, threads, reduce):
    if samples < 1:
        raise ParameterError(f"samples must be >= 1, got {samples}")

    def run(i):
        g = stimulus_gradient(net, sample_input(net, seed, i), probe, kind, bn_stats, read_at, center)
        return reduce(g)

    n_threads = _threads(threads)
    if n_threads == 1:
        parts = [run(i) for i in range(samples)]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(run, range(samples)))
    total = parts[0].copy()
    for p in parts[1:]:
        total += p
    return total / samples


def spatial_reduce(g: np.ndarray) -> np.ndarray:
    """(T, B, C, H, W) adjoint -> (C, H, W): mean over time, sum over batch."""
    return g.sum(axis=1).mean(axis=0)


def temporal_reduce(g: np.ndarray) -> np.ndarray:
    """(T, B, C, H, W) adjoint -> values[tau] = sum over (b, c, h, w) at t = T-1-tau."""
    return g.sum(axis=(1, 2, 3, 4))[::-1].copy()


def spatial_erf(net: Network, probe: str = "output", samples: int = DEFAULT_SAMPLES,
                seed: int = DEFAULT_SEED, *, bn_stats: bool = True, read_at: str = "network_input",
                channels: str = "mean", center: tuple[int, int] | None = None,
                threads: int | None = None) -> ErfSpatial:
    """Temporal-averaged spatial ERF of the stimulus placed at ``probe``'s output.

    Per sample the read-point adjoint is averaged over time and summed over
    the batch; channels are then averaged (or summed) and samples averaged.
    """
    if channels not in CHANNEL_AGGREGATIONS:
        raise ParameterError(f"channels must be one of {CHANNEL_AGGREGATIONS}, got {channels!r}")
    probe = net.check_probe(probe)
    per_channel = _per_sample(net, probe, seed, samples, "spatial", bn_stats, read_at, center,
                              threads, spatial_reduce)
    grid = per_channel.sum(axis=0) if channels == "sum" else per_channel.mean(axis=0)
    meta = {"samples": samples, "seed": seed, "probe": probe, "timesteps": net.timesteps,
            "stimulus": "spatial", "bn_stats": bn_stats, "read_at": read_at, "channels": channels}
    return ErfSpatial(grid, per_channel, meta)


def temporal_erf(net: Network, probe: str = "output", samples: int = DEFAULT_SAMPLES,
                 seed: int = DEFAULT_SEED, *, bn_stats: bool = True, read_at: str = "network_input",
                 threads: int | None = None) -> ErfTemporal:
    probe = net.check_probe(probe)
    values = _per_sample(net, probe, seed, samples, "temporal", bn_stats, read_at, None,
                         threads, temporal_reduce)
    meta = {"samples": samples, "seed": seed, "probe": probe, "timesteps": net.timesteps,
            "stimulus": "temporal", "bn_stats": bn_stats, "read_at": read_at}
    return ErfTemporal(values, meta)


def spread_metrics(erf: ErfSpatial | np.ndarray) -> SpreadReport:
    """Centroid, 95%-mass radius and entropy of the |grid| mass distribution.

    r95 is the distance from the centroid to the farthest pixel centre that
    must be included, nearest first, before 95% of the mass is covered.
    """
    grid = erf.grid if isinstance(erf, ErfSpatial) else np.asarray(erf, dtype=np.float64)
    H, W = grid.shape
    mass = np.abs(grid)
    total = mass.sum()
    if total == 0:
        return SpreadReport(0.0, (float(H // 2), float(W // 2)), 0.0, zero_mass=True)
    p = mass / total
    rows, cols = np.indices((H, W), dtype=np.float64)
    cy, cx = float((p * rows).sum()), float((p * cols).sum())
    dist = np.hypot(rows - cy, cols - cx).ravel()
    order = np.argsort(dist, kind="stable")
    cum = np.cumsum(p.ravel()[order])
    k = int(np.searchsorted(cum, 0.95 - 1e-12))
    r95 = float(dist[order[min(k, len(order) - 1)]])
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    return SpreadReport(r95, (cy, cx), max(entropy, 0.0))


def normalize_for_viz(erf: ErfSpatial | np.ndarray, gamma: float = 0.5) -> np.ndarray:
    """(|grid| / max|grid|) ** gamma, in [0, 1]."""
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    grid = erf.grid if isinstance(erf, ErfSpatial) else np.asarray(erf, dtype=np.float64)
    mag = np.abs(grid)
    peak = mag.max() if mag.size else 0.0
    if peak == 0:
        return np.zeros_like(mag)
    return (mag / peak) ** gamma


def support_radius(grid: np.ndarray, center: tuple[int, int] | None = None) -> float:
    """Largest Chebyshev distance from the centre of any nonzero cell (-inf if all zero)."""
    H, W = grid.shape
    ci, cj = (H // 2, W // 2) if center is None else center
    nz = np.argwhere(grid != 0)
    if len(nz) == 0:
        return -math.inf
    return float(np.max(np.maximum(np.abs(nz[:, 0] - ci), np.abs(nz[:, 1] - cj))))
