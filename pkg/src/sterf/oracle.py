"""Independent checks for the gradient-stimulus engine.

``jacobian_aggregate`` builds the receptive field the slow way: one one-hot
backward pass per stimulated output element, weighted and summed in output
index order. It walks the tape with its own traversal and shares nothing with
:meth:`Tape.backward` except the recorded per-op backward rules.
``finite_difference`` checks those rules themselves in soft neuron mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tape, Var
from .errors import DimensionError, DomainError, ModeError, SizeError
from .network import Network
from .neurons import LifParams
from .rng import randn, stream_seed

MAX_OUTPUT_ELEMENTS = 4096

Model = Network | Callable[[Tape, Var], Var]


@dataclass
class ComparisonReport:
    max_abs_diff: float
    max_rel_diff: float
    worst_index: tuple[int, ...]
    passed: bool
    atol: float
    rtol: float
    label: str = ""

    @property
    def pass_(self) -> bool:
        return self.passed

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        name = f"{self.label}: " if self.label else ""
        return (f"{status} {name}max_abs={self.max_abs_diff:.3e} max_rel={self.max_rel_diff:.3e} "
                f"worst={self.worst_index} (atol={self.atol:g}, rtol={self.rtol:g})")


def compare(a, b, atol: float = 0.0, rtol: float = 0.0, label: str = "") -> ComparisonReport:
    """Elementwise check; an element passes if abs diff <= atol OR rel diff <= rtol."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"compare: shape mismatch {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, diff / scale, 0.0)
    ok = (diff <= atol) | (rel <= rtol)
    if a.size == 0:
        return ComparisonReport(0.0, 0.0, (), True, atol, rtol, label)
    if ok.all():
        flat = int(np.argmax(diff))
    else:
        flat = int(np.argmax(np.where(ok, -1.0, diff)))
    worst = tuple(int(i) for i in np.unravel_index(flat, a.shape))
    return ComparisonReport(float(diff.max()), float(rel.max()), worst, bool(ok.all()),
                            atol, rtol, label)


def _forward(model: Model, tape: Tape, x: np.ndarray, probe, bn_stats, read_at):
    xin = tape.input(x)
    if isinstance(model, Network):
        probe = model.check_probe(probe or "output")
        trace = model.forward(tape, xin, upto=probe, bn_stats=bn_stats)
        read = trace.input if read_at == "network_input" else trace.stage_inputs[probe]
        return trace.outputs[probe], read
    return model(tape, xin), xin


def _one_hot_pullback(tape: Tape, out_id: int, index: tuple[int, ...], read_id: int) -> np.ndarray:
    nodes = tape.nodes
    seed = np.zeros_like(nodes[out_id].value)
    seed[index] = 1.0
    pending = {out_id: seed}
    for nid in reversed(range(read_id, out_id + 1)):
        g = pending.pop(nid, None)
        if g is None:
            continue
        if nid == read_id:
            return g
        node = nodes[nid]
        if node.vjp is None:
            continue
        needs = tuple(nodes[i].requires_grad for i in node.inputs)
        for i, gi in zip(node.inputs, node.vjp(g, needs)):
            if gi is not None and nodes[i].requires_grad:
                pending[i] = gi if i not in pending else pending[i] + gi
    return np.zeros_like(nodes[read_id].value)


def jacobian_aggregate(model: Model, stimulus, x, probe: str | None = None, bn_stats: bool = True,
                       read_at: str = "network_input",
                       max_outputs: int = MAX_OUTPUT_ELEMENTS) -> np.ndarray:
    """sum_k stimulus[k] * d out[k] / d input, one one-hot backward pass per k."""
    tape = Tape()
    out, read = _forward(model, tape, np.asarray(x, dtype=np.float64), probe, bn_stats, read_at)
    stim = np.asarray(stimulus, dtype=np.float64)
    if stim.shape != out.shape:
        raise DimensionError(f"stimulus shape {stim.shape} != output shape {out.shape}")
    if out.value.size > max_outputs:
        raise SizeError(f"output has {out.value.size} elements; limit is {max_outputs}")
    total = np.zeros(read.shape)
    for flat in np.flatnonzero(stim):
        index = np.unravel_index(flat, stim.shape)
        total += stim[index] * _one_hot_pullback(tape, out.id, index, read.id)
    return total


def _objective(model, x, stim, probe, bn_stats) -> float:
    tape = Tape()
    out, _ = _forward(model, tape, x, probe, bn_stats, "network_input")
    return float(np.sum(stim * out.value))


def finite_difference(model: Model, stimulus, x, h: float = 1e-5, probe: str | None = None,
                      bn_stats: bool = True) -> np.ndarray:
    """Central differences of <stimulus, output> with respect to every input element."""
    if isinstance(model, Network) and model.lif.mode != "soft":
        raise ModeError("finite differences need soft neuron mode; spike mode is a step function")
    if not 1e-7 <= h <= 1e-3:
        raise DomainError(f"step h must be in [1e-7, 1e-3], got {h}")
    x = np.array(x, dtype=np.float64)
    stim = np.asarray(stimulus, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = _objective(model, x, stim, probe, bn_stats)
        x[idx] = orig - h
        down = _objective(model, x, stim, probe, bn_stats)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def kink_distance(tape: Tape) -> float:
    """Smallest distance of any recorded membrane to a surrogate window edge."""
    best = np.inf
    for node in tape.nodes:
        if node.op != "lif":
            continue
        v = node.aux["trace"].v
        half = node.params["a"] / 2
        theta = node.params["theta"]
        edge = np.minimum(np.abs(v - (theta - half)), np.abs(v - (theta + half)))
        if node.params["mode"] == "spike":
            edge = np.minimum(edge, np.abs(v - theta))
        best = min(best, float(edge.min()))
    return best


def jittered_input(model: Model, shape, seed: int, margin: float = 1e-3, probe: str | None = None,
                   bn_stats: bool = True, max_tries: int = 200) -> np.ndarray:
    """First N(0,1) draw whose membranes all sit at least ``margin`` from a kink."""
    for attempt in range(max_tries):
        x = randn(shape, stream_seed(seed, attempt))
        tape = Tape()
        _forward(model, tape, x, probe, bn_stats, "network_input")
        if kink_distance(tape) > margin:
            return x
    raise DomainError(f"no kink-free input found in {max_tries} draws (margin {margin})")


def lif_chain_closed_form(params: LifParams, T: int, tau: int) -> float:
    """Influence of x[T-1-tau] on v[T-1] in the sub-threshold (no-spike) chain."""
    if not 0 <= tau < T:
        raise DomainError(f"tau must be in [0, T); got tau={tau}, T={T}")
    return params.beta ** tau


# -- randomized small networks -------------------------------------------------

MIXER_TAGS = ("conv_k3", "mlpixer", "srb")


def random_small_network(seed: int, mode: str = "spike", mixer: str | None = None,
                         max_hw: int = 16, max_t: int = 3, channels: tuple[int, ...] = (2, 3),
                         bn_stats_fold: bool = True) -> Network:
    """At most four top-level layers, T <= max_t, H = W <= max_hw, one channel mixer.

    The first layer is a 3x3 conv on the raw input; the rest are drawn from a
    full SNN block, a bare channel mixer, batch norm and a spiking layer.
    """
    from .blocks import BN, SN, Conv, MixerKind, channel_mixer, snn_block

    rng = np.random.default_rng(seed)
    tag = mixer or MIXER_TAGS[seed % 3]
    kind = MixerKind(tag, float(rng.choice([2, 4])))
    c = int(rng.choice(channels))
    T = int(rng.integers(1, max_t + 1))
    hw = int(rng.choice([s for s in (6, 8, 12, 16) if s <= max_hw] or [max_hw]))
    theta = float(rng.uniform(0.3, 1.0))
    lif = LifParams(beta=float(rng.uniform(0.2, 0.95)), theta=theta,
                    reset=str(rng.choice(["soft", "hard"])), a=float(rng.uniform(0.5, 2.0)),
                    mode=mode)
    layers = [Conv("l0.stem", 1, c, 3)]
    extras = int(rng.integers(1, 4))
    mixer_at = int(rng.integers(0, extras))
    for i in range(extras):
        name = f"l{i + 1}"
        if i == mixer_at:
            if rng.random() < 0.5:
                layers.append(snn_block(name, c, kind, token_mixer=str(rng.choice(["ssc", "none"]))))
            else:
                layers.append(channel_mixer(name, c, kind))
        else:
            pick = int(rng.integers(0, 3))
            layers.append([BN(f"{name}.bn", c), SN(f"{name}.sn"), Conv(f"{name}.conv", c, c, 3)][pick])
    return Network.from_layers(layers, (1, hw, hw), T, lif, seed=seed, fold_time=bn_stats_fold)
