"""Run configuration: one JSON document covering anchors, network widths,
mining, training and inference knobs, validated strictly on load.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .anchors import AnchorConfig
from .errors import ConfigError
from .network import BackboneConfig
from .sampler import OhemConfig
from .synthdata import SynthConfig
from .training import TrainConfig


@dataclasses.dataclass(frozen=True)
class InferConfig:
    min_side: float = 1200.0
    max_side: float = 1600.0
    nms_iou: float = 0.3
    top_k: int = 1000
    score_floor: float = 0.01

    def __post_init__(self):
        if self.min_side <= 0 or self.max_side <= 0:
            raise ConfigError("inference sides must be positive")
        if not 0.0 < self.nms_iou < 1.0:
            raise ConfigError(f"nms_iou must be in (0, 1), got {self.nms_iou}")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.score_floor < 0:
            raise ConfigError("score_floor must be >= 0")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    anchors: AnchorConfig = AnchorConfig()
    backbone: BackboneConfig = BackboneConfig()
    ohem: OhemConfig = OhemConfig()
    train: TrainConfig = TrainConfig()
    infer: InferConfig = InferConfig()
    synth: SynthConfig = SynthConfig()


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_SECTION_TYPES = {
    "anchors": AnchorConfig,
    "backbone": BackboneConfig,
    "ohem": OhemConfig,
    "train": TrainConfig,
    "infer": InferConfig,
    "synth": SynthConfig,
}

# fields that round-trip through JSON lists
_TUPLE_FIELDS = {
    ("anchors", "scales"): lambda v: tuple(tuple(float(x) for x in row) for row in v),
    ("anchors", "strides"): lambda v: tuple(int(x) for x in v),
    ("backbone", "stage_channels"): lambda v: tuple(int(x) for x in v),
    ("backbone", "context_channels"): lambda v: tuple(int(x) for x in v),
    ("synth", "band_sides"): lambda v: tuple(int(x) for x in v),
    ("synth", "band_margins"): lambda v: tuple(int(x) for x in v),
}


def _build_section(section: str, data: dict):
    cls = _SECTION_TYPES[section]
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        conv = _TUPLE_FIELDS.get((section, key))
        kwargs[key] = conv(value) if conv else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value in section {section!r}: {e}") from e


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = {
        name: _build_section(name, data.get(name, {})) for name in _SECTION_TYPES
    }
    return RunConfig(**sections)


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return config_from_dict(data)


def config_to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)


def to_canonical_json(config: RunConfig) -> str:
    """Serialise with sorted keys and fixed layout; loading this string
    and re-serialising reproduces it byte for byte."""
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


def save_config(path: str | Path, config: RunConfig) -> None:
    Path(path).write_text(to_canonical_json(config), encoding="utf-8")


def apply_override(data: dict, spec: str) -> None:
    """Apply one "section.key=value" override onto a config dict.

    The value parses as JSON when possible, else stays a string.
    """
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} must look like section.key=value")
    dotted, raw = spec.split("=", 1)
    parts = dotted.split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {dotted!r} must be section.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    section, key = parts
    data.setdefault(section, {})[key] = value


def default_config() -> RunConfig:
    return RunConfig()


def toy_config(seed: int = 0) -> RunConfig:
    """The desk-scale experiment preset.

    Scenes are 128 px and get upscaled 27/16 to a 216 px input (padded to
    224). Anchor sides are then 28 / 128 / 208 px for the three heads,
    which the three synthetic square sizes (12, 80, 123 -> 20.25, 135,
    207.6 px at input scale) match one-to-one under the 0.5/0.3 rules.
    """
    return RunConfig(
        anchors=AnchorConfig(base_size=16.0, scales=((1.75,), (7.0,), (4.0, 13.0))),
        backbone=BackboneConfig(
            stage_channels=(8, 16, 32),
            fusion_channels=16,
            context_channels=(16, 16, 16),
        ),
        ohem=OhemConfig(batch_per_module=64),
        train=TrainConfig(
            iterations=2000,
            lr_drop_iteration=1800,
            input_min_side=216.0,
            input_max_side=288.0,
            seed=seed,
        ),
        infer=InferConfig(min_side=216.0, max_side=288.0),
        synth=SynthConfig(),
    )
