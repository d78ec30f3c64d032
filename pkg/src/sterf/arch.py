"""Declarative architecture descriptions, presets, and the network builder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

from .blocks import (BN, CHANNEL_MIXERS, TOKEN_MIXERS, Conv, Identity, Layer, MixerKind, SN,
                     downsample, snn_block)
from .errors import ConfigError
from .network import Network, Stage
from .neurons import LifParams
from .ops import conv_output_size

BLOCK_KINDS = ("metaformer", "lif", "lif_membrane", "conv", "bn", "identity")


@dataclass(frozen=True)
class DownsampleSpec:
    kernel: int
    stride: int
    dim: int


@dataclass(frozen=True)
class BlockSpec:
    """One block. ``kind="metaformer"`` is the token-mixer + channel-mixer block;
    the other kinds are bare primitives for small analysis networks."""

    token_mixer: str = "ssc"
    channel_mixer: str = "conv_k3"
    epsilon: float = 4.0
    ssc_ratio: int = 2
    kind: str = "metaformer"
    kernel: int = 3
    dim: int | None = None

    @property
    def mixer(self) -> MixerKind | None:
        if self.channel_mixer == "none":
            return None
        return MixerKind(self.channel_mixer, self.epsilon)


@dataclass(frozen=True)
class StageSpec:
    name: str
    blocks: tuple[BlockSpec, ...] = ()
    downsample: DownsampleSpec | None = None
    # stages built from conv-based SNN blocks; mixer overrides apply only here
    conv_stage: bool = True


@dataclass(frozen=True)
class ArchSpec:
    stages: tuple[StageSpec, ...]
    timesteps: int = 4
    input: tuple[int, int, int] = (3, 64, 64)
    neuron: LifParams = field(default_factory=LifParams)
    seed: int = 0
    bn_fold_time: bool = True

    def validate(self) -> list[tuple[int, int, int]]:
        """Check geometry and channel consistency; returns (C, H, W) after each stage."""
        if not self.stages:
            raise ConfigError("architecture has no stages")
        if self.timesteps < 1:
            raise ConfigError(f"timesteps must be >= 1, got {self.timesteps}")
        if len(self.input) != 3 or min(self.input) < 1:
            raise ConfigError(f"input must be three positive ints (C, H, W), got {self.input}")
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names) or "input" in names or "output" in names:
            raise ConfigError(f"stage names must be unique and not 'input'/'output': {names}")
        c, h, w = self.input
        dims = []
        for stage in self.stages:
            where = f"stage {stage.name!r}"
            ds = stage.downsample
            if ds is not None:
                if ds.kernel < 1 or ds.stride < 1 or ds.dim < 1:
                    raise ConfigError(f"{where}: downsample kernel/stride/dim must be positive")
                if h // ds.stride < 1 or w // ds.stride < 1:
                    # padded output would be a single border-dominated pixel
                    raise ConfigError(f"{where}: stride {ds.stride} drives spatial size {h}x{w} "
                                      f"to {h // ds.stride}x{w // ds.stride}")
                h = conv_output_size(h, ds.kernel, ds.stride, ds.kernel // 2)
                w = conv_output_size(w, ds.kernel, ds.stride, ds.kernel // 2)
                c = ds.dim
                if h < 1 or w < 1:
                    raise ConfigError(f"{where}: downsampling drives spatial size to {h}x{w}")
            for i, block in enumerate(stage.blocks):
                bwhere = f"{where}, block {i}"
                if block.kind not in BLOCK_KINDS:
                    raise ConfigError(f"{bwhere}: unknown kind {block.kind!r}; expected {BLOCK_KINDS}")
                if block.kind == "metaformer":
                    if block.token_mixer not in TOKEN_MIXERS:
                        raise ConfigError(f"{bwhere}: unknown token mixer {block.token_mixer!r}")
                    if block.channel_mixer not in CHANNEL_MIXERS:
                        raise ConfigError(f"{bwhere}: unknown channel mixer {block.channel_mixer!r}")
                    if block.ssc_ratio < 1:
                        raise ConfigError(f"{bwhere}: ssc_ratio must be >= 1")
                    try:
                        if block.mixer is not None:
                            block.mixer.hidden(c)
                    except ConfigError as exc:
                        raise ConfigError(f"{bwhere}: {exc}") from None
                    if block.dim not in (None, c):
                        raise ConfigError(f"{bwhere}: block dim {block.dim} != stage dim {c}")
                elif block.kind == "conv":
                    if block.kernel < 1 or block.kernel % 2 == 0:
                        raise ConfigError(f"{bwhere}: conv kernel must be a positive odd int")
                    c = block.dim or c
                elif block.dim not in (None, c):
                    raise ConfigError(f"{bwhere}: {block.kind} cannot change channels ({c} -> {block.dim})")
            dims.append((c, h, w))
        return dims

    def with_mixer(self, mixer: str | None = None, epsilon: float | None = None) -> "ArchSpec":
        """Swap channel mixers (and/or epsilon) of metaformer blocks in conv stages only."""
        stages = []
        for stage in self.stages:
            if stage.conv_stage:
                blocks = tuple(
                    replace(b, channel_mixer=mixer or b.channel_mixer,
                            epsilon=b.epsilon if epsilon is None else float(epsilon))
                    if b.kind == "metaformer" and b.channel_mixer != "none" else b
                    for b in stage.blocks)
                stage = replace(stage, blocks=blocks)
            stages.append(stage)
        return replace(self, stages=tuple(stages))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        stages = tuple(
            StageSpec(name=s["name"],
                      blocks=tuple(BlockSpec(**b) for b in s.get("blocks", ())),
                      downsample=DownsampleSpec(**s["downsample"]) if s.get("downsample") else None,
                      conv_stage=s.get("conv_stage", True))
            for s in d["stages"])
        return cls(stages=stages, timesteps=d["timesteps"], input=tuple(d["input"]),
                   neuron=LifParams(**d["neuron"]), seed=d["seed"],
                   bn_fold_time=d.get("bn_fold_time", True))


# -- presets -----------------------------------------------------------------

# (name, downsample kernel, stride, tiny dim, blocks, conv_stage)
_TINY_LAYOUT = (
    ("stage1a", 7, 2, 16, 1, True),
    ("stage1", 3, 2, 32, 1, True),
    ("stage2", 3, 2, 64, 2, True),
    ("stage3", 3, 2, 128, 6, False),
    ("stage4", 3, 1, 192, 2, False),
)


def meta_sdt_tiny(mixer: str = "conv_k3", epsilon: float = 4, *, desk: bool = False,
                  late_token_mixer: str = "attention_standin", timesteps: int = 4,
                  seed: int = 0) -> ArchSpec:
    """Meta-SDT Tiny layout; ``desk`` halves widths and uses 64x64 inputs."""
    stages = []
    for name, k, s, dim, nblocks, conv_stage in _TINY_LAYOUT:
        dim = dim // 2 if desk else dim
        if conv_stage:
            block = BlockSpec("ssc", mixer, float(epsilon), 2)
        else:
            block = BlockSpec(late_token_mixer, "mlpixer", 4.0, 2)
        stages.append(StageSpec(name, (block,) * nblocks, DownsampleSpec(k, s, dim), conv_stage))
    return ArchSpec(tuple(stages), timesteps=timesteps,
                    input=(3, 64, 64) if desk else (3, 224, 224), seed=seed)


def _preset_table() -> dict[str, dict]:
    table = {}
    for base, desk in (("meta-sdt-tiny", False), ("meta-sdt-tiny-desk", True)):
        for suffix, mixer, eps in (("", "conv_k3", 4), ("-mlpixer", "mlpixer", 4),
                                   ("-mlpixer-e6", "mlpixer", 6), ("-srb", "srb", 4)):
            table[base + suffix] = {"mixer": mixer, "epsilon": eps, "desk": desk}
    return table


PRESETS = _preset_table()


def preset(name: str, **overrides) -> ArchSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available presets: {', '.join(sorted(PRESETS))}")
    kw = dict(PRESETS[name])
    if overrides.get("mixer") is not None:
        kw["mixer"] = overrides.pop("mixer")
    if overrides.get("epsilon") is not None:
        kw["epsilon"] = overrides.pop("epsilon")
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return meta_sdt_tiny(**kw)


# -- builder -----------------------------------------------------------------

def _block_layer(name: str, block: BlockSpec, c: int) -> Layer:
    if block.kind == "metaformer":
        return snn_block(name, c, block.mixer, block.token_mixer, block.ssc_ratio)
    if block.kind == "lif":
        return SN(name)
    if block.kind == "lif_membrane":
        return SN(name, output="membrane")
    if block.kind == "conv":
        return Conv(name, c, block.dim or c, block.kernel)
    if block.kind == "bn":
        return BN(name, c)
    return Identity(name)


def build_network(spec: ArchSpec) -> Network:
    spec.validate()
    c = spec.input[0]
    stages = []
    for si, st in enumerate(spec.stages):
        layers: list[Layer] = []
        if st.downsample is not None:
            ds = st.downsample
            layers.append(downsample(f"{st.name}.down", c, ds.dim, ds.kernel, ds.stride, first=si == 0))
            c = ds.dim
        for bi, block in enumerate(st.blocks):
            layers.append(_block_layer(f"{st.name}.block{bi}", block, c))
            if block.kind == "conv":
                c = block.dim or c
        stages.append(Stage(st.name, layers))
    return Network(stages, spec.input, spec.timesteps, spec.neuron, seed=spec.seed,
                   fold_time=spec.bn_fold_time, arch=spec)
