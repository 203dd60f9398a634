import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from fcf.exceptions import ConfigError

load_dotenv()


@dataclass
class Settings:
    workers: int
    log_level: str


def load_settings() -> Settings:
    workers = os.getenv("FCF_WORKERS", "")
    return Settings(
        workers=int(workers) if workers.strip() else (os.cpu_count() or 1),
        log_level=os.getenv("FCF_LOG_LEVEL", "INFO"),
    )


settings = load_settings()


@dataclass
class ChannelsConfig:
    pre_smooth: str = "off"


@dataclass
class FilterBankConfig:
    family: str = "checkerboards"
    max_rows: int = 4
    max_cols: int = 4
    n_sizes: int = 16
    n_random: int = 50
    cell_px: int = 6
    pca_k: int = 4
    pca_patches: int = 2000
    bank_path: str = ""


@dataclass
class TrainingConfig:
    window_width: int = 60
    window_height: int = 120
    depth: int = 2
    variant: str = "discrete"
    schedule: Tuple[int, ...] = (32, 512, 1024, 2048, 4096)
    initial_negatives: int = 10000
    negatives_per_round: int = 10000
    mining_score_min: float = -1.0
    exclusion_iou: float = 0.1
    mirror: bool = True
    cascade: bool = False


@dataclass
class DetectorConfig:
    scales_per_octave: int = 8
    min_object_height: float = 50.0
    max_object_height: float = 480.0
    stride: int = 6
    score_min: float = -1.0
    nms_overlap: float = 0.65
    object_width_frac: float = 0.5
    object_height_frac: float = 1.0


@dataclass
class EvalConfig:
    protocol: str = "caltech-mr"
    subset: str = "reasonable"
    iou_min: float = 0.5
    recall_points: int = 41
    reasonable_min_height: float = 50.0
    reasonable_max_occlusion: float = 0.35
    moderate_min_height: float = 25.0
    moderate_max_occlusion: float = 0.5


@dataclass
class DataConfig:
    train_manifest: str = ""
    test_manifest: str = ""
    subsample: int = 1


@dataclass
class SynthConfig:
    width: int = 256
    height: int = 192
    n_images: int = 300
    targets_min: int = 1
    targets_max: int = 3
    min_height: float = 100.0
    max_height: float = 160.0
    aspect: float = 0.25
    noise: float = 0.03
    distractors: int = 4
    occlusion_prob: float = 0.1
    test_images: int = 100


@dataclass
class RunConfig:
    channels: ChannelsConfig = field(default_factory=ChannelsConfig)
    filterbank: FilterBankConfig = field(default_factory=FilterBankConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0

    def to_lines(self) -> List[str]:
        """Resolved configuration as sorted KEY=VALUE lines."""
        lines = [f"SEED={self.seed}"]
        for prefix, section_name in SECTIONS.items():
            section = getattr(self, section_name)
            for f in fields(section):
                lines.append(f"{prefix}_{f.name.upper()}={_render(getattr(section, f.name))}")
        return sorted(lines)


SECTIONS = {
    "CHANNELS": "channels",
    "FILTERBANK": "filterbank",
    "TRAINING": "training",
    "DETECTOR": "detector",
    "EVAL": "eval",
    "DATA": "data",
    "SYNTH": "synth",
}


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(key: str, raw: Optional[str], default):
    text = (raw or "").strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(key, f"cannot parse value {text!r}")
    return text


def _key_index() -> Dict[str, Tuple[Optional[str], str]]:
    index: Dict[str, Tuple[Optional[str], str]] = {"SEED": (None, "seed")}
    defaults = RunConfig()
    for prefix, section_name in SECTIONS.items():
        for f in fields(getattr(defaults, section_name)):
            index[f"{prefix}_{f.name.upper()}"] = (section_name, f.name)
    return index


def apply_overrides(config: RunConfig, values: Mapping[str, Optional[str]]) -> RunConfig:
    """Return a copy of `config` with KEY=VALUE entries applied; unknown keys are rejected."""
    index = _key_index()
    for key, raw in values.items():
        norm = key.strip().upper()
        if norm not in index:
            raise ConfigError(key, "unknown configuration key")
        section_name, field_name = index[norm]
        if section_name is None:
            config = replace(config, seed=_parse(norm, raw, config.seed))
            continue
        section = getattr(config, section_name)
        value = _parse(norm, raw, getattr(section, field_name))
        config = replace(config, **{section_name: replace(section, **{field_name: value})})
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    schedule = config.training.schedule
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] < 1:
        raise ConfigError("TRAINING_SCHEDULE", "must be a strictly increasing list of positive counts")
    if config.training.variant not in ("discrete", "real"):
        raise ConfigError("TRAINING_VARIANT", "expected 'discrete' or 'real'")
    if not 1 <= config.training.depth <= 5:
        raise ConfigError("TRAINING_DEPTH", "expected a depth between 1 and 5")
    if config.channels.pre_smooth not in ("off", "triangle1"):
        raise ConfigError("CHANNELS_PRE_SMOOTH", "expected 'off' or 'triangle1'")
    if config.eval.protocol not in ("caltech-mr", "kitti-ap"):
        raise ConfigError("EVAL_PROTOCOL", "expected 'caltech-mr' or 'kitti-ap'")
    if config.eval.recall_points not in (11, 41):
        raise ConfigError("EVAL_RECALL_POINTS", "expected 11 or 41")
    if config.eval.subset not in ("reasonable", "moderate", "all"):
        raise ConfigError("EVAL_SUBSET", "expected 'reasonable', 'moderate' or 'all'")
    if config.detector.stride < 1:
        raise ConfigError("DETECTOR_STRIDE", "must be positive")


def parse_override(text: str) -> Tuple[str, str]:
    if "=" not in text:
        raise ConfigError(text, "override must look like KEY=VALUE")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def load_run_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Defaults, then the dotenv-format config file, then flag overrides."""
    config = RunConfig()
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(str(path), "configuration file not found")
        config = apply_overrides(config, dotenv_values(path))
    if overrides:
        config = apply_overrides(config, overrides)
    _validate(config)
    return config
