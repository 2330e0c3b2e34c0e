"""Model presets and the flat ``key=value`` run-config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .features import RasterConfig

MODES = ("single-on", "single-off", "mm-d", "mm-e", "point", "pixel")
ONLINE_MODES = ("single-on", "mm-d", "mm-e", "point")
OFFLINE_MODES = ("single-off", "mm-d", "mm-e", "pixel")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OnlineEncoderCfg:
    stem_channels: int = 48
    growth_rate: int = 24
    num_blocks: int = 5
    layers_per_block: int = 3
    kernel: int = 3
    compression: float = 1.0
    pool_after: tuple[int, ...] = (3, 5)
    gru_hidden: int = 250
    gru_layers: int = 2

    @property
    def factor(self) -> int:
        return 2 ** len(self.pool_after)


@dataclass(frozen=True)
class OfflineEncoderCfg:
    stem_channels: int = 48
    growth_rate: int = 24
    num_blocks: int = 3
    layers_per_block: int = 16
    bottleneck_width: int = 96
    kernel: int = 3
    compression: float = 0.5
    factor: int = 8

    @property
    def stem_pools(self) -> int:
        total = self.factor.bit_length() - 1
        if 2 ** total != self.factor or total < self.num_blocks - 1:
            raise ConfigError(f"offline factor {self.factor} must be 2^k with k >= {self.num_blocks - 1}")
        return total - (self.num_blocks - 1)


@dataclass(frozen=True)
class DecoderCfg:
    embed_dim: int = 256
    hidden: int = 256
    attn_dim: int = 500
    coverage_channels: int = 64
    coverage_kernel: int = 7
    pixel_coverage_kernel: int = 11


@dataclass(frozen=True)
class ModelConfig:
    online: OnlineEncoderCfg = OnlineEncoderCfg()
    offline: OfflineEncoderCfg = OfflineEncoderCfg()
    decoder: DecoderCfg = DecoderCfg()
    d_model: int = 500


PRESETS: dict[str, ModelConfig] = {
    "paper": ModelConfig(),
    "toy": ModelConfig(
        online=OnlineEncoderCfg(stem_channels=16, growth_rate=8, layers_per_block=1, gru_hidden=32),
        offline=OfflineEncoderCfg(stem_channels=16, growth_rate=8, layers_per_block=2, bottleneck_width=16),
        decoder=DecoderCfg(embed_dim=32, hidden=32, attn_dim=32, coverage_channels=8,
                           coverage_kernel=7, pixel_coverage_kernel=5),
        d_model=64,
    ),
    # smallest shapes that still exercise every code path; used for grad checks
    "micro": ModelConfig(
        online=OnlineEncoderCfg(stem_channels=4, growth_rate=2, layers_per_block=1, gru_hidden=3, gru_layers=1),
        offline=OfflineEncoderCfg(stem_channels=4, growth_rate=2, layers_per_block=1, bottleneck_width=2),
        decoder=DecoderCfg(embed_dim=4, hidden=3, attn_dim=3, coverage_channels=2,
                           coverage_kernel=3, pixel_coverage_kernel=3),
        d_model=4,
    ),
}
PRESETS["paper-online"] = PRESETS["paper"]
PRESETS["paper-offline"] = PRESETS["paper"]
PRESET_DEFAULT_MODE = {"paper-online": "single-on", "paper-offline": "single-off"}


def get_preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class RunConfig:
    preset: str = "toy"
    mode: str = "single-on"
    lam: float = 0.2
    weight_decay: float = 1e-5
    rho: float = 0.95
    eps: float = 1e-8
    lr: float = 1.0
    clip: float = 0.0
    epochs: int = 10
    seed: int = 0
    beam: int = 10
    max_len: int = 200
    data: str = ""
    vocab: str = ""
    raster: RasterConfig = field(default_factory=RasterConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        get_preset(self.preset)
        if self.lam < 0 or not 0 < self.rho < 1 or self.eps <= 0:
            raise ConfigError("need lambda >= 0, 0 < rho < 1, eps > 0")
        if self.beam < 1 or self.max_len < 1:
            raise ConfigError("beam and max_len must be >= 1")

    @property
    def model(self) -> ModelConfig:
        return get_preset(self.preset)


# config-file key -> RunConfig attribute
_ALIASES = {"lambda": "lam", "λ": "lam", "wd": "weight_decay", "ρ": "rho", "ε": "eps"}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = dataclasses.asdict(base) if base else {}
    raster = dict(values.pop("raster", {}) or dataclasses.asdict(RasterConfig()))
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    defaults = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = key.strip(), val.strip()
        if key.startswith("raster."):
            sub = key[len("raster."):]
            if sub not in raster:
                raise ConfigError(f"line {lineno}: unknown raster key {sub!r}")
            try:
                raster[sub] = type(getattr(RasterConfig(), sub))(float(val))
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
            continue
        key = _ALIASES.get(key, key)
        if key not in types or key == "raster":
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = type(getattr(defaults, key))
        try:
            values[key] = kind(val) if kind is not int else int(float(val))
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    values["raster"] = RasterConfig(**raster)
    if "mode" not in values and values.get("preset") in PRESET_DEFAULT_MODE:
        values["mode"] = PRESET_DEFAULT_MODE[values["preset"]]
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        if f.name == "raster":
            continue
        key = "lambda" if f.name == "lam" else f.name
        lines.append(f"{key}={getattr(cfg, f.name)}")
    for f in dataclasses.fields(RasterConfig):
        lines.append(f"raster.{f.name}={getattr(cfg.raster, f.name)}")
    return "\n".join(lines) + "\n"
