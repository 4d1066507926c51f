"""
Configuration for tube generation.

Values come from (highest precedence first) explicit overrides such as CLI
flags, the process environment, a ``.env`` file, and finally the defaults
below (lambda = 0.1, n = 10, k = 5).
"""

import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from tubelink.errors import ConfigError

# env var -> Config field
ENV_VARS: Dict[str, str] = {
    "TUBELINK_LAMBDA": "lambda_",
    "TUBELINK_N": "n",
    "TUBELINK_K": "k",
    "TUBELINK_ALPHA": "alpha",
    "TUBELINK_NMS_IOU": "nms_iou",
    "TUBELINK_CLASSES": "class_count",
    "TUBELINK_MIN_SCORE": "min_score",
    "TUBELINK_BOOST_IOU": "boost_iou",
    "TUBELINK_THREADS": "threads",
    "TUBELINK_COALESCENCE": "coalescence",
}


class Config(BaseModel):
    """Parameters of suppression, linking and temporal labelling."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: float = Field(0.1, ge=0.0, le=1.0, alias="lambda")
    n: int = Field(10, ge=1)
    k: int = Field(5, ge=1)
    alpha: float = Field(3.0, ge=0.0)
    nms_iou: float = Field(0.45, ge=0.0, le=1.0)
    class_count: int = Field(24, ge=1)
    min_score: float = Field(0.0, ge=0.0, le=1.0)
    boost_iou: float = Field(0.3, ge=0.0, le=1.0)
    threads: int = Field(1, ge=1)
    coalescence: bool = False


def _env_overrides() -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for var, field in ENV_VARS.items():
        raw = os.getenv(var)
        if raw is not None and raw.strip() != "":
            values[field] = raw.strip()
    return values


def load_config(env_file: Optional[str] = None, **overrides: Any) -> Config:
    """Build a Config from .env, the environment and explicit overrides.

    Overrides whose value is None are ignored so that unset CLI flags fall
    through to the environment.
    """
    load_dotenv(env_file, override=False)
    values = _env_overrides()
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return Config(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
