"""Composite spiking blocks: SSC token mixer, channel mixers, SNN blocks.

Layers are pure structure. Their weights live in a flat name -> array store
owned by the network; a layer only declares :class:`ParamSpec` entries and
fetches the arrays through the :class:`ForwardContext` during a forward.

Conventions
-----------
* Every convolution and linear map reads spikes (an ``SN`` precedes it),
  except the network stem which reads the raw input.
* Convolutions carry no bias; each is followed by batch norm.
* Residuals add real-valued feature maps (membrane shortcut).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ops
from .autodiff import Tape, Var
from .errors import ConfigError
from .neurons import LifParams, lif_forward

TOKEN_MIXERS = ("ssc", "attention_standin", "none")
CHANNEL_MIXERS = ("conv_k3", "mlpixer", "srb", "none")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str  # "kaiming" | "ones" | "zeros"
    fan_in: int = 1


@dataclass(frozen=True)
class MixerKind:
    tag: str
    epsilon: float = 4.0

    def __post_init__(self):
        if self.tag not in CHANNEL_MIXERS[:3]:
            raise ConfigError(f"unknown channel mixer {self.tag!r}; expected one of {CHANNEL_MIXERS[:3]}")
        if not self.epsilon > 1:
            raise ConfigError(f"channel expansion epsilon must exceed 1, got {self.epsilon}")

    def hidden(self, dim: int) -> int:
        h = self.epsilon * dim
        if abs(h - round(h)) > 1e-9:
            raise ConfigError(f"epsilon={self.epsilon} on {dim} channels is not an integer width")
        return int(round(h))


@dataclass
class ForwardContext:
    params: dict[str, np.ndarray]
    lif: LifParams
    bn_stats: bool = True
    fold_time: bool = True
    bn_eps: float = 1e-5
    param_grads: bool = False

    def param(self, tape: Tape, name: str) -> Var:
        return tape.param(name, self.params[name], requires_grad=self.param_grads)


class Layer:
    name: str = ""

    def specs(self) -> Iterator[ParamSpec]:
        return iter(())

    def forward(self, tape: Tape, x: Var, ctx: ForwardContext) -> Var:
        raise NotImplementedError

    def __call__(self, tape: Tape, x: Var, ctx: ForwardContext) -> Var:
        return self.forward(tape, x, ctx)

    def radius(self) -> int:
        """Spatial support radius of this layer's Jacobian (statistics path off)."""
        return 0


class Sequential(Layer):
    def __init__(self, name: str, layers: list[Layer]):
        self.name = name
        self.layers = layers

    def specs(self):
        for layer in self.layers:
            yield from layer.specs()

    def forward(self, tape, x, ctx):
        for layer in self.layers:
            x = layer(tape, x, ctx)
        return x

    def radius(self):
        return sum(layer.radius() for layer in self.layers)


class Identity(Layer):
    def __init__(self, name: str = "identity"):
        self.name = name

    def forward(self, tape, x, ctx):
        return x


class SN(Layer):
    """Spiking neuron layer using the network's neuron parameters."""

    def __init__(self, name: str, output: str = "spikes"):
        self.name = name
        self.output = output

    def forward(self, tape, x, ctx):
        return lif_forward(x, ctx.lif, output=self.output)


class Conv(Layer):
    def __init__(self, name: str, cin: int, cout: int, kernel: int, stride: int = 1,
                 groups: int = 1, padding: int | None = None):
        self.name = name
        self.cin, self.cout, self.kernel = cin, cout, kernel
        self.stride, self.groups = stride, groups
        self.padding = kernel // 2 if padding is None else padding

    def specs(self):
        cg = self.cin // self.groups
        yield ParamSpec(f"{self.name}.weight", (self.cout, cg, self.kernel, self.kernel),
                        "kaiming", cg * self.kernel * self.kernel)

    def forward(self, tape, x, ctx):
        w = ctx.param(tape, f"{self.name}.weight")
        return ops.conv2d(x, w, stride=self.stride, padding=self.padding, groups=self.groups)

    def radius(self):
        return self.kernel // 2


class Linear(Layer):
    """Pixel-wise fully connected map (the 'MLP' of the channel mixers)."""

    def __init__(self, name: str, cin: int, cout: int, bias: bool = False):
        self.name = name
        self.cin, self.cout, self.bias = cin, cout, bias

    def specs(self):
        yield ParamSpec(f"{self.name}.weight", (self.cout, self.cin), "kaiming", self.cin)
        if self.bias:
            yield ParamSpec(f"{self.name}.bias", (self.cout,), "zeros")

    def forward(self, tape, x, ctx):
        w = ctx.param(tape, f"{self.name}.weight")
        b = ctx.param(tape, f"{self.name}.bias") if self.bias else None
        return ops.pixelwise_linear(x, w, b)


class BN(Layer):
    def __init__(self, name: str, channels: int):
        self.name = name
        self.channels = channels

    def specs(self):
        yield ParamSpec(f"{self.name}.gamma", (self.channels,), "ones")
        yield ParamSpec(f"{self.name}.beta", (self.channels,), "zeros")

    def forward(self, tape, x, ctx):
        return ops.batchnorm(x, ctx.param(tape, f"{self.name}.gamma"),
                             ctx.param(tape, f"{self.name}.beta"), eps=ctx.bn_eps,
                             stats_grad=ctx.bn_stats, fold_time=ctx.fold_time)


def ssc(name: str, dim: int, ratio: int = 2, kernel: int = 7) -> Sequential:
    """Spike-driven separable conv: PW1 -> DW k x k -> PW2, each read from spikes."""
    mid = ratio * dim
    return Sequential(name, [
        SN(f"{name}.sn0"), Conv(f"{name}.pw1", dim, mid, 1), BN(f"{name}.bn1", mid),
        SN(f"{name}.sn1"), Conv(f"{name}.dw", mid, mid, kernel, groups=mid), BN(f"{name}.bn2", mid),
        SN(f"{name}.sn2"), Conv(f"{name}.pw2", mid, dim, 1), BN(f"{name}.bn3", dim),
    ])


def channel_mixer_conv(name: str, dim: int, epsilon: float = 4) -> Sequential:
    """Vanilla mixer: BN(Conv3x3(SN(BN(Conv3x3(SN(X))))))."""
    hid = MixerKind("conv_k3", epsilon).hidden(dim)
    return Sequential(name, [
        SN(f"{name}.sn1"), Conv(f"{name}.conv1", dim, hid, 3), BN(f"{name}.bn1", hid),
        SN(f"{name}.sn2"), Conv(f"{name}.conv2", hid, dim, 3), BN(f"{name}.bn2", dim),
    ])


def mlpixer(name: str, dim: int, epsilon: float = 4) -> Sequential:
    """MLPixer: BN(MLP(SN(BN(MLP(SN(X)))))) with pixel-wise linear maps."""
    hid = MixerKind("mlpixer", epsilon).hidden(dim)
    return Sequential(name, [
        SN(f"{name}.sn1"), Linear(f"{name}.fc1", dim, hid), BN(f"{name}.bn1", hid),
        SN(f"{name}.sn2"), Linear(f"{name}.fc2", hid, dim), BN(f"{name}.bn2", dim),
    ])


def srb(name: str, dim: int, epsilon: float = 4) -> Sequential:
    """Splash-and-reconstruct: BN(MLP(SN(BN(Conv1x1(SN(X)))))), conv first."""
    hid = MixerKind("srb", epsilon).hidden(dim)
    return Sequential(name, [
        SN(f"{name}.sn1"), Conv(f"{name}.conv1", dim, hid, 1), BN(f"{name}.bn1", hid),
        SN(f"{name}.sn2"), Linear(f"{name}.fc2", hid, dim), BN(f"{name}.bn2", dim),
    ])


def channel_mixer(name: str, dim: int, kind: MixerKind) -> Sequential:
    build = {"conv_k3": channel_mixer_conv, "mlpixer": mlpixer, "srb": srb}[kind.tag]
    return build(name, dim, kind.epsilon)


class AttentionStandin(Layer):
    """NOT A PAPER COMPONENT: spiking linear attention used in place of SDSA.

    Q, K, V = SN(BN(Linear(SN(X)))); out = BN(Linear(Q * sum_hw(K * V) / HW)).
    Every output position depends on every input position through the
    spatial sum.
    """

    label = "attention_standin (non-paper stand-in for SDSA)"

    def __init__(self, name: str, dim: int):
        self.name = name
        self.dim = dim
        self.sn_in = SN(f"{name}.sn_in")
        self.branches = {
            key: Sequential(f"{name}.{key}", [Linear(f"{name}.{key}.fc", dim, dim),
                                              BN(f"{name}.{key}.bn", dim), SN(f"{name}.{key}.sn")])
            for key in ("q", "k", "v")
        }
        self.proj = Linear(f"{name}.proj", dim, dim)
        self.proj_bn = BN(f"{name}.proj_bn", dim)

    def specs(self):
        for branch in self.branches.values():
            yield from branch.specs()
        yield from self.proj.specs()
        yield from self.proj_bn.specs()

    def forward(self, tape, x, ctx):
        H, W = x.shape[3:]
        xs = self.sn_in(tape, x, ctx)
        q, k, v = (self.branches[key](tape, xs, ctx) for key in ("q", "k", "v"))
        kv = ops.spatial_sum(ops.hadamard(k, v))
        att = ops.scale(ops.hadamard(q, ops.broadcast_hw(kv, H, W)), 1.0 / (H * W))
        return self.proj_bn(tape, self.proj(tape, att, ctx), ctx)

    def radius(self):
        return math.inf


class SNNBlock(Layer):
    """X' = X + TokenMixer(X);  X'' = X' + ChannelMixer(X')."""

    def __init__(self, name: str, token_mixer: Layer | None, channel_mixer: Layer | None):
        self.name = name
        self.token_mixer = token_mixer
        self.channel_mixer = channel_mixer

    def specs(self):
        for part in (self.token_mixer, self.channel_mixer):
            if part is not None:
                yield from part.specs()

    def forward(self, tape, x, ctx):
        for part in (self.token_mixer, self.channel_mixer):
            if part is not None:
                x = ops.add(x, part(tape, x, ctx))
        return x

    def radius(self):
        return sum(p.radius() for p in (self.token_mixer, self.channel_mixer) if p is not None)


def snn_block(name: str, dim: int, mixer: MixerKind | None, token_mixer: str = "ssc",
              ssc_ratio: int = 2) -> SNNBlock:
    if token_mixer == "ssc":
        tm = ssc(f"{name}.ssc", dim, ssc_ratio)
    elif token_mixer == "attention_standin":
        tm = AttentionStandin(f"{name}.attn", dim)
    elif token_mixer == "none":
        tm = None
    else:
        raise ConfigError(f"unknown token mixer {token_mixer!r}; expected one of {TOKEN_MIXERS}")
    cm = None if mixer is None else channel_mixer(f"{name}.mixer", dim, mixer)
    return SNNBlock(name, tm, cm)


def downsample(name: str, cin: int, cout: int, kernel: int, stride: int, first: bool) -> Sequential:
    """Conv k x k / stride + BN; non-stem downsamplers read spikes."""
    layers: list[Layer] = [] if first else [SN(f"{name}.sn")]
    layers += [Conv(f"{name}.conv", cin, cout, kernel, stride=stride), BN(f"{name}.bn", cout)]
    return Sequential(name, layers)
