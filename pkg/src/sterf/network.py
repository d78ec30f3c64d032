"""Executable networks: staged layer sequences with named probe points."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, Var
from .blocks import ForwardContext, Layer, ParamSpec
from .errors import ConfigError, GraphReferenceError
from .neurons import LifParams
from .rng import name_key, randn, stream_seed

WEIGHTS_MAGIC = b"STERFW01"


@dataclass
class Stage:
    name: str
    layers: list[Layer]


@dataclass
class Trace:
    """Handles recorded by one forward pass."""

    input: Var
    outputs: dict[str, Var]
    stage_inputs: dict[str, Var]


def init_param(spec: ParamSpec, seed: int) -> np.ndarray:
    if spec.init == "ones":
        return np.ones(spec.shape)
    if spec.init == "zeros":
        return np.zeros(spec.shape)
    # Kaiming-normal with fan-in scaling, one named stream per tensor
    return randn(spec.shape, stream_seed(seed, name_key(spec.name))) * math.sqrt(2.0 / spec.fan_in)


class Network:
    def __init__(self, stages: list[Stage], input_shape: tuple[int, int, int], timesteps: int,
                 lif: LifParams, *, seed: int = 0, fold_time: bool = True, bn_eps: float = 1e-5,
                 batch: int = 1, params: dict[str, np.ndarray] | None = None, arch=None):
        if not stages:
            raise ConfigError("network needs at least one stage")
        names = [s.name for s in stages]
        if len(set(names)) != len(names) or "input" in names:
            raise ConfigError(f"stage names must be unique and not 'input': {names}")
        self.stages = stages
        self.input_shape = tuple(input_shape)
        self.timesteps = timesteps
        self.batch = batch
        self.lif = lif
        self.seed = seed
        self.fold_time = fold_time
        self.bn_eps = bn_eps
        self.arch = arch
        self.weights_source = "random-init"
        self.weights_sha256: str | None = None
        self.param_specs()  # fail fast on duplicate names
        self._params = params

    @property
    def params(self) -> dict[str, np.ndarray]:
        # initialised on first use so shape-only queries stay cheap
        if self._params is None:
            self._params = {s.name: init_param(s, self.seed) for s in self.param_specs()}
        return self._params

    @params.setter
    def params(self, value: dict[str, np.ndarray]) -> None:
        self._params = value

    @classmethod
    def from_layers(cls, layers: list[Layer], input_shape, timesteps: int,
                    lif: LifParams | None = None, name: str = "net", **kwargs) -> "Network":
        return cls([Stage(name, list(layers))], input_shape, timesteps, lif or LifParams(), **kwargs)

    @property
    def probes(self) -> list[str]:
        return ["input"] + [s.name for s in self.stages]

    @property
    def input_tensor_shape(self) -> tuple[int, int, int, int, int]:
        return (self.timesteps, self.batch) + self.input_shape

    def param_specs(self) -> list[ParamSpec]:
        specs, seen = [], set()
        for stage in self.stages:
            for layer in stage.layers:
                for spec in layer.specs():
                    if spec.name in seen:
                        raise ConfigError(f"duplicate parameter name {spec.name!r}")
                    seen.add(spec.name)
                    specs.append(spec)
        return specs

    def parameter_count(self, weights_only: bool = False) -> int:
        return sum(math.prod(s.shape) for s in self.param_specs()
                   if not weights_only or s.name.endswith(".weight"))

    def with_options(self, **lif_changes) -> "Network":
        """Copy sharing the (immutable) weights, with neuron parameters changed."""
        net = Network(self.stages, self.input_shape, self.timesteps, self.lif.replace(**lif_changes),
                      seed=self.seed, fold_time=self.fold_time, bn_eps=self.bn_eps,
                      batch=self.batch, params=self._params, arch=self.arch)
        net.weights_source, net.weights_sha256 = self.weights_source, self.weights_sha256
        return net

    def check_probe(self, probe: str) -> str:
        if probe == "output":
            return self.stages[-1].name
        if probe not in self.probes:
            raise GraphReferenceError(f"unknown probe {probe!r}; valid probes: {', '.join(self.probes)}")
        return probe

    def forward(self, tape: Tape, x, upto: str | None = None, bn_stats: bool = True,
                param_grads: bool = False) -> Trace:
        """Run stages in order, stopping after ``upto`` (a probe name)."""
        stop = self.check_probe(upto) if upto is not None else self.stages[-1].name
        xin = x if isinstance(x, Var) else tape.input(x, name="input")
        ctx = ForwardContext(self.params, self.lif, bn_stats=bn_stats, fold_time=self.fold_time,
                             bn_eps=self.bn_eps, param_grads=param_grads)
        trace = Trace(xin, {"input": xin}, {"input": xin})
        h = xin
        if stop == "input":
            return trace
        for stage in self.stages:
            trace.stage_inputs[stage.name] = h
            for layer in stage.layers:
                h = layer(tape, h, ctx)
            trace.outputs[stage.name] = h
            if stage.name == stop:
                break
        return trace

    def __call__(self, tape: Tape, x, bn_stats: bool = True) -> Var:
        return self.forward(tape, x, bn_stats=bn_stats).outputs[self.stages[-1].name]

    def output_shape(self, probe: str | None = None) -> tuple[int, ...]:
        tape = Tape()
        x = np.zeros(self.input_tensor_shape)
        trace = self.forward(tape, x, upto=probe)
        name = self.check_probe(probe) if probe else self.stages[-1].name
        return trace.outputs[name].shape

    # weight files: magic, u64 LE header length, JSON header, raw <f8 data
    def save_weights(self, path) -> str:
        entries, offset, blobs = [], 0, []
        for spec in self.param_specs():
            arr = np.ascontiguousarray(self.params[spec.name], dtype="<f8")
            entries.append({"name": spec.name, "shape": list(arr.shape), "offset": offset})
            blobs.append(arr.tobytes())
            offset += arr.nbytes
        header = json.dumps({"dtype": "<f8", "tensors": entries}, sort_keys=True).encode()
        data = WEIGHTS_MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    def load_weights(self, path) -> str:
        data = Path(path).read_bytes()
        if data[:8] != WEIGHTS_MAGIC:
            raise ConfigError(f"{path}: not a sterf weight file")
        (hlen,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + hlen])
        base = 16 + hlen
        loaded = {}
        for entry in header["tensors"]:
            n = math.prod(entry["shape"])
            start = base + entry["offset"]
            loaded[entry["name"]] = np.frombuffer(data, dtype="<f8", count=n,
                                                  offset=start).reshape(entry["shape"]).copy()
        for spec in self.param_specs():
            if spec.name not in loaded:
                raise ConfigError(f"{path}: missing tensor {spec.name!r}")
            if tuple(loaded[spec.name].shape) != spec.shape:
                raise ConfigError(f"{path}: tensor {spec.name!r} has shape "
                                  f"{loaded[spec.name].shape}, expected {spec.shape}")
        self.params = {s.name: loaded[s.name] for s in self.param_specs()}
        digest = hashlib.sha256(data).hexdigest()
        self.weights_source, self.weights_sha256 = str(path), digest
        return digest
