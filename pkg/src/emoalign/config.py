"""TOML run configuration.

One document with optional sections [frontend], [encoder], [qformer],
[decoder], [loss], [train], [eval], [synth]; every key is optional and
defaults to the owning module's defaults. Unknown sections or keys are hard
errors, reported with their dotted path. The fully resolved configuration is
echoed into every output artifact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .corpus import EMOTIONS, KNOWN_LANGUAGES, EmotionLabel
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .evaluation import FOUR_CLASSES
from .frontend import FrameParams
from .losses import LossConfig
from .qformer import QFormerConfig
from .trainer import StageFilter, TrainConfig

__all__ = ["ConfigError", "SynthConfig", "EvalConfig", "RunConfig", "load_run_config"]


class ConfigError(ValueError):
    """Malformed run configuration (unknown key, bad value, parse failure)."""


@dataclass(frozen=True)
class SynthConfig:
    """Corpus-shape settings for the synthesizer; the prosody/timbre tables
    themselves live in SynthesisProfile and are code-level."""

    languages: tuple[str, ...] = KNOWN_LANGUAGES
    emotions: tuple[str, ...] = tuple(e.text for e in EMOTIONS)
    per_cell: int = 10
    sr: int = 16000
    dur_min: float = 0.8
    dur_max: float = 1.6
    dataset: str = "synthetic"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.per_cell < 1:
            raise ValueError("per_cell must be >= 1")
        if not (0 < self.dur_min <= self.dur_max):
            raise ValueError("need 0 < dur_min <= dur_max")
        for name in self.emotions:
            EmotionLabel.from_text(name)

    @property
    def emotion_labels(self) -> tuple[EmotionLabel, ...]:
        return tuple(EmotionLabel.from_text(name) for name in self.emotions)

    @property
    def dur_range(self) -> tuple[float, float]:
        return (self.dur_min, self.dur_max)

    def to_dict(self) -> dict:
        return {
            "languages": list(self.languages),
            "emotions": list(self.emotions),
            "per_cell": self.per_cell,
            "sr": self.sr,
            "dur_min": self.dur_min,
            "dur_max": self.dur_max,
            "dataset": self.dataset,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol: 7-class full set or the 4-class subset, plus the
    ablation grid's held-out and stage-1 anchor languages."""

    classes: int = 7
    holdout_language: str = "it"
    anchor_language: str = "en"

    def __post_init__(self) -> None:
        if self.classes not in (4, 7):
            raise ValueError(f"classes must be 4 or 7, got {self.classes}")
        if self.holdout_language == self.anchor_language:
            raise ValueError("holdout and anchor languages must differ")

    @property
    def restrict(self) -> tuple[EmotionLabel, ...] | None:
        return FOUR_CLASSES if self.classes == 4 else None

    def to_dict(self) -> dict:
        return {
            "classes": self.classes,
            "holdout_language": self.holdout_language,
            "anchor_language": self.anchor_language,
        }


@dataclass(frozen=True)
class RunConfig:
    frontend: FrameParams = field(default_factory=FrameParams)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    qformer: QFormerConfig = field(default_factory=QFormerConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        return {
            "frontend": self.frontend.to_dict(),
            "encoder": self.encoder.to_dict(),
            "qformer": self.qformer.to_dict(),
            "decoder": self.decoder.to_dict(),
            "loss": self.train.loss.to_dict(),
            "train": self.train.to_dict(),
            "eval": self.eval.to_dict(),
            "synth": self.synth.to_dict(),
        }


_SECTIONS = ("frontend", "encoder", "qformer", "decoder", "loss", "train", "eval", "synth")

# Short aliases for the loss parameters as they are usually written.
_LOSS_ALIASES = {"m": "margin", "lambda": "ce_weight"}

_STAGE_KEYS = ("synthetic", "languages", "datasets", "split")


def _check_keys(section: str, table: dict, allowed: Sequence[str]) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")


def _dataclass_kwargs(section: str, table: dict, cls) -> dict:
    names = [f.name for f in fields(cls)]
    _check_keys(section, table, names)
    out = dict(table)
    for key, value in out.items():
        if isinstance(value, list):
            out[key] = tuple(value)
    return out


def _build(section: str, cls, kwargs: dict):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[{section}] {err}") from err


def _parse_stage_filter(section: str, table: dict, default: StageFilter) -> StageFilter:
    """'any' lifts a constraint; lists and scalars set it."""
    _check_keys(section, table, _STAGE_KEYS)
    kwargs = {
        "synthetic": default.synthetic,
        "languages": default.languages,
        "datasets": default.datasets,
        "split": default.split,
    }
    for key, value in table.items():
        if value == "any":
            kwargs[key] = None
        elif key == "languages" or key == "datasets":
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigError(f"{section}.{key} must be a list of strings or 'any'")
            kwargs[key] = tuple(value)
        elif key == "synthetic":
            if not isinstance(value, bool):
                raise ConfigError(f"{section}.synthetic must be a boolean or 'any'")
            kwargs[key] = value
        else:
            if not isinstance(value, str):
                raise ConfigError(f"{section}.split must be a string or 'any'")
            kwargs[key] = value
    return StageFilter(**kwargs)


def parse_run_config(doc: dict) -> RunConfig:
    """Validate and resolve a parsed TOML document into a RunConfig.

    Unset encoder/connector/decoder widths are wired from upstream sections:
    encoder.n_mels follows frontend.n_mels, qformer.d_enc follows
    encoder.d_model, decoder.d_conn follows qformer.d_model.
    """
    for name in doc:
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    for name in _SECTIONS:
        if name in doc and not isinstance(doc[name], dict):
            raise ConfigError(f"[{name}] must be a table")

    frontend = _build(
        "frontend", FrameParams,
        _dataclass_kwargs("frontend", doc.get("frontend", {}), FrameParams),
    )

    enc_kwargs = _dataclass_kwargs("encoder", doc.get("encoder", {}), EncoderConfig)
    enc_kwargs.setdefault("n_mels", frontend.n_mels)
    encoder = _build("encoder", EncoderConfig, enc_kwargs)

    qf_kwargs = _dataclass_kwargs("qformer", doc.get("qformer", {}), QFormerConfig)
    qf_kwargs.setdefault("d_enc", encoder.d_model)
    qformer = _build("qformer", QFormerConfig, qf_kwargs)

    dec_kwargs = _dataclass_kwargs("decoder", doc.get("decoder", {}), DecoderConfig)
    dec_kwargs.setdefault("d_conn", qformer.d_model)
    decoder = _build("decoder", DecoderConfig, dec_kwargs)

    loss_table = dict(doc.get("loss", {}))
    for alias, target in _LOSS_ALIASES.items():
        if alias in loss_table:
            if target in loss_table:
                raise ConfigError(f"loss.{alias} and loss.{target} are the same setting")
            loss_table[target] = loss_table.pop(alias)
    loss = _build("loss", LossConfig, _dataclass_kwargs("loss", loss_table, LossConfig))

    train_table = dict(doc.get("train", {}))
    stage1_table = train_table.pop("stage1", {})
    stage2_table = train_table.pop("stage2", {})
    if not isinstance(stage1_table, dict) or not isinstance(stage2_table, dict):
        raise ConfigError("[train.stage1] and [train.stage2] must be tables")
    train_names = [f.name for f in fields(TrainConfig) if f.name not in ("loss", "stage1", "stage2")]
    _check_keys("train", train_table, train_names)
    defaults = TrainConfig()
    train = _build(
        "train", TrainConfig,
        {
            **train_table,
            "loss": loss,
            "stage1": _parse_stage_filter("train.stage1", stage1_table, defaults.stage1),
            "stage2": _parse_stage_filter("train.stage2", stage2_table, defaults.stage2),
        },
    )

    eval_cfg = _build("eval", EvalConfig, _dataclass_kwargs("eval", doc.get("eval", {}), EvalConfig))
    synth = _build("synth", SynthConfig, _dataclass_kwargs("synth", doc.get("synth", {}), SynthConfig))

    return RunConfig(
        frontend=frontend, encoder=encoder, qformer=qformer, decoder=decoder,
        train=train, eval=eval_cfg, synth=synth,
    )


def load_run_config(path: str | Path | None) -> RunConfig:
    """Parse a TOML file into a RunConfig; None loads pure defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    return parse_run_config(doc)
