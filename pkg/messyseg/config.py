"""
Configuration models for messyseg
Model hyperparameters, OCR noise settings and synthetic corpus style knobs
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from messyseg.errors import DataError, UsageError

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "MESSYSEG_THREADS"


class ModelConfig(BaseModel):
    """Hyperparameters and feature switches of the segmentation tagger"""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    scheme: Literal["bio", "bi"] = "bio"
    segment_class: str = "Marriage"

    # Feature switches
    use_contextual: bool = True
    use_static: bool = True
    use_distance: bool = True

    # Feature dimensions
    char_dim: int = Field(25, ge=1)
    char_filters: int = Field(30, ge=1)
    char_kernel: int = Field(3, ge=1)
    static_dim: int = Field(100, ge=1)
    contextual_dim: int = Field(100, ge=1)
    contextual_layers: int = Field(3, ge=1)
    hidden_size: int = Field(100, ge=1)

    # External feature sources
    oov_policy: Literal["hashed", "zeros"] = "hashed"
    contextual_provider: Literal["degenerate", "window", "file"] = "degenerate"
    embeddings_path: Optional[str] = None
    contextual_sidecar: Optional[str] = None
    distance_divisor: float = Field(1.0, gt=0.0)

    # Initialisation
    init_scale: float = Field(0.1, gt=0.0)
    forget_bias: float = 1.0

    # Optimisation
    batch_size: int = Field(16, ge=1)
    learning_rate: float = Field(0.001, gt=0.0)
    dropout: float = Field(0.5, ge=0.0, lt=1.0)
    seed: int = 0
    patience: int = Field(5, ge=0)
    max_epochs: int = Field(50, ge=1)
    protocol: Literal["early_stopping", "combined"] = "early_stopping"

    @model_validator(mode="after")
    def _check_consistency(self) -> "ModelConfig":
        if not (self.use_contextual or self.use_static):
            raise ValueError("at least one of use_contextual/use_static must be enabled")
        if (
            self.use_contextual
            and self.contextual_provider in ("degenerate", "window")
            and self.contextual_dim != self.static_dim
        ):
            raise ValueError(
                f"{self.contextual_provider} contextual layers are built from static "
                f"embeddings: contextual_dim ({self.contextual_dim}) must equal "
                f"static_dim ({self.static_dim})"
            )
        if self.use_contextual and self.contextual_provider == "file" and not self.contextual_sidecar:
            raise ValueError("file contextual provider requires contextual_sidecar")
        return self

    @property
    def token_dim(self) -> int:
        """Dimension of the assembled token embedding fed to the BiLSTM"""
        dim = self.char_filters + 8
        if self.use_static:
            dim += self.static_dim
        if self.use_contextual:
            dim += self.contextual_dim
        if self.use_distance:
            dim += 2
        return dim


DEFAULT_CONFUSIONS: List[Tuple[str, str]] = [
    ("o", "0"),
    ("0", "o"),
    ("l", "1"),
    ("1", "l"),
    ("rn", "m"),
    ("m", "rn"),
    (".", ","),
    (",", "."),
    ("e", "c"),
    ("c", "e"),
    ("h", "b"),
    ("i", "l"),
    ("S", "5"),
    ("B", "8"),
]


class NoiseConfig(BaseModel):
    """OCR noise injection rates"""

    model_config = ConfigDict(extra="forbid")

    substitution_rate: float = Field(0.0, ge=0.0, le=1.0)
    case_flip_rate: float = Field(0.0, ge=0.0, le=1.0)
    punctuation_swap_rate: float = Field(0.0, ge=0.0, le=1.0)
    confusions: List[Tuple[str, str]] = Field(default_factory=lambda: list(DEFAULT_CONFUSIONS))
    seed: int = 0

    @classmethod
    def uniform(cls, rate: float, seed: int = 0) -> "NoiseConfig":
        """All three noise rates set to the same value"""
        return cls(
            substitution_rate=rate,
            case_flip_rate=rate,
            punctuation_swap_rate=rate,
            seed=seed,
        )

    @property
    def is_identity(self) -> bool:
        return self.substitution_rate == 0 and self.case_flip_rate == 0 and self.punctuation_swap_rate == 0


class SynthStyle(BaseModel):
    """Knobs of the synthetic announcement-list generator"""

    model_config = ConfigDict(extra="forbid")

    header_prob: float = Field(0.7, ge=0.0, le=1.0)
    subheading_prob: float = Field(0.3, ge=0.0, le=1.0)
    trailer_prob: float = Field(0.15, ge=0.0, le=1.0)
    # segments per document = min_segments + NegativeBinomial(segment_shape, segment_p)
    min_segments: int = Field(2, ge=1)
    segment_shape: int = Field(4, ge=1)
    segment_p: float = Field(0.4, gt=0.0, le=1.0)
    max_segments: int = Field(30, ge=1)
    age_prob: float = Field(0.4, ge=0.0, le=1.0)
    middle_initial_prob: float = Field(0.5, ge=0.0, le=1.0)
    # layout
    line_width: int = Field(900, ge=100)
    left_margin: int = Field(40, ge=0)
    char_width: int = Field(10, ge=1)
    line_height: int = Field(14, ge=1)
    segment_newline_prob: float = Field(0.85, ge=0.0, le=1.0)
    # documented failure shapes
    comma_for_period_prob: float = Field(0.05, ge=0.0, le=1.0)
    lowercase_start_prob: float = Field(0.05, ge=0.0, le=1.0)


def load_json_config(path: Optional[str]) -> Dict[str, Any]:
    """
    Load a JSON configuration file into a plain dict

    Args:
        path: Path to the JSON file, or None

    Returns:
        Parsed mapping (empty when no path was given)
    """
    if not path:
        return {}
    config_path = Path(path)
    if not config_path.exists():
        raise UsageError(f"Config file not found: {path}")
    try:
        data = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON in config {path}: {str(e)}", line_number=e.lineno)
    if not isinstance(data, dict):
        raise DataError(f"config {path} must contain a JSON object")
    logger.info(f"Loaded configuration from {path}")
    return data


def build_model_config(file_values: Dict[str, Any], overrides: Dict[str, Any]) -> ModelConfig:
    """
    Merge configuration sources: CLI overrides > config file > defaults

    Args:
        file_values: Values read from a config file
        overrides: Values given on the command line (None means "not given")

    Returns:
        Validated ModelConfig
    """
    merged = dict(file_values)
    merged.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return ModelConfig(**merged)
    except ValidationError as e:
        raise UsageError(f"invalid model configuration: {str(e)}")


def get_thread_limit() -> int:
    """Worker process cap from MESSYSEG_THREADS (default 1)"""
    raw = os.getenv(THREADS_ENV_VAR, "1")
    try:
        threads = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV_VAR}={raw!r}")
        return 1
    return max(1, threads)


def resolve_workers(requested: Optional[int] = None) -> int:
    """Requested worker count, capped by MESSYSEG_THREADS"""
    limit = get_thread_limit()
    if requested is None:
        return limit
    if requested < 1:
        raise UsageError(f"--workers must be positive, got {requested}")
    if requested > limit:
        logger.warning(f"Capping {requested} workers at {THREADS_ENV_VAR}={limit}")
    return min(requested, limit)
