"""TOML architecture configs.

A config is either a full description::

    timesteps = 4
    seed = 0
    input = [3, 64, 64]

    [neuron]
    beta = 0.5
    theta = 1.0
    reset = "soft"
    a = 1.0
    mode = "spike"

    [[stages]]
    name = "stage1"
    downsample = { kernel = 7, stride = 2, dim = 16 }

    [[stages.blocks]]
    token_mixer = "ssc"
    channel_mixer = "mlpixer"
    epsilon = 4

or a preset reference with optional overrides::

    preset = "meta-sdt-tiny-desk"
    channel_mixer = "srb"
    epsilon = 4
"""

from __future__ import annotations

import re
import sys
from dataclasses import asdict

import tomli_w

from .arch import ArchSpec, BlockSpec, DownsampleSpec, StageSpec, preset
from .errors import ConfigError, ParameterError
from .neurons import LifParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TOP_KEYS = {"timesteps", "input", "seed", "bn_fold_time", "neuron", "stages"}
PRESET_KEYS = {"preset", "channel_mixer", "epsilon", "late_token_mixer", "timesteps", "seed",
               "neuron", "bn_fold_time"}
NEURON_KEYS = {"beta", "theta", "reset", "a", "mode"}
STAGE_KEYS = {"name", "downsample", "blocks", "conv_stage"}
DOWNSAMPLE_KEYS = {"kernel", "stride", "dim"}
BLOCK_KEYS = {"token_mixer", "channel_mixer", "epsilon", "ssc_ratio", "kind", "kernel", "dim"}


def _unknown(found, allowed, where: str) -> None:
    extra = sorted(set(found) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}; allowed: {sorted(allowed)}")


def _neuron(d: dict, base: LifParams) -> LifParams:
    if not isinstance(d, dict):
        raise ConfigError("[neuron] must be a table")
    _unknown(d, NEURON_KEYS, "[neuron]")
    try:
        return base.replace(**d)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"[neuron]: {exc}") from None


def _block(d: dict, where: str) -> BlockSpec:
    _unknown(d, BLOCK_KEYS, where)
    kw = dict(d)
    if "epsilon" in kw:
        kw["epsilon"] = float(kw["epsilon"])
    return BlockSpec(**kw)


def _stage(d: dict, index: int) -> StageSpec:
    where = f"stage {d.get('name', index)!r}"
    _unknown(d, STAGE_KEYS, where)
    if "name" not in d:
        d = dict(d, name=f"stage{index + 1}")
    ds = d.get("downsample")
    if ds is not None:
        if not isinstance(ds, dict):
            raise ConfigError(f"{where}: downsample must be a table")
        _unknown(ds, DOWNSAMPLE_KEYS, f"{where}.downsample")
        missing = DOWNSAMPLE_KEYS - set(ds)
        if missing:
            raise ConfigError(f"{where}.downsample: missing {sorted(missing)}")
        ds = DownsampleSpec(**ds)
    blocks = tuple(_block(b, f"{where}, block {i}") for i, b in enumerate(d.get("blocks", [])))
    return StageSpec(d["name"], blocks, ds, bool(d.get("conv_stage", True)))


def arch_from_mapping(doc: dict) -> ArchSpec:
    if "preset" in doc:
        _unknown(doc, PRESET_KEYS, "preset config")
        spec = preset(doc["preset"], mixer=doc.get("channel_mixer"), epsilon=doc.get("epsilon"),
                      late_token_mixer=doc.get("late_token_mixer"), timesteps=doc.get("timesteps"),
                      seed=doc.get("seed"))
        kw = {}
        if "neuron" in doc:
            kw["neuron"] = _neuron(doc["neuron"], spec.neuron)
        if "bn_fold_time" in doc:
            kw["bn_fold_time"] = bool(doc["bn_fold_time"])
        spec = _replace(spec, **kw)
    else:
        _unknown(doc, TOP_KEYS, "config")
        if not doc.get("stages"):
            raise ConfigError("config has an empty or missing stage list")
        stages = tuple(_stage(s, i) for i, s in enumerate(doc["stages"]))
        spec = ArchSpec(stages=stages, timesteps=int(doc.get("timesteps", 4)),
                        input=tuple(doc.get("input", (3, 64, 64))),
                        neuron=_neuron(doc.get("neuron", {}), LifParams()),
                        seed=int(doc.get("seed", 0)),
                        bn_fold_time=bool(doc.get("bn_fold_time", True)))
    spec.validate()
    return spec


def _replace(spec: ArchSpec, **kw) -> ArchSpec:
    from dataclasses import replace
    return replace(spec, **kw) if kw else spec


def parse_arch_config(text: str) -> ArchSpec:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", line=int(m.group(1)) if m else None) from None
    try:
        return arch_from_mapping(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def serialize_arch(spec: ArchSpec) -> str:
    """Canonical, fully expanded TOML for ``spec`` (never a preset reference)."""
    stages = []
    for st in spec.stages:
        entry: dict = {"name": st.name, "conv_stage": st.conv_stage}
        if st.downsample is not None:
            entry["downsample"] = asdict(st.downsample)
        entry["blocks"] = [{k: v for k, v in asdict(b).items() if v is not None} for b in st.blocks]
        stages.append(entry)
    doc = {"timesteps": spec.timesteps, "seed": spec.seed, "input": list(spec.input),
           "bn_fold_time": spec.bn_fold_time, "neuron": asdict(spec.neuron), "stages": stages}
    return tomli_w.dumps(doc)


def load_arch(arg: str, mixer: str | None = None, epsilon: float | None = None) -> ArchSpec:
    """Resolve ``--arch``: an existing file path, else a preset name."""
    from pathlib import Path
    path = Path(arg)
    if path.is_file():
        text = path.read_text()
    else:
        text = f'preset = "{arg}"\n'
    spec = parse_arch_config(text)
    if mixer is not None or epsilon is not None:
        spec = spec.with_mixer(mixer, epsilon)
        spec.validate()
    return spec
