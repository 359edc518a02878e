"""
Default seeds and dimension, overridable from the environment or a .env file.
"""

import os

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field

# Load environment variables from .env file
load_dotenv()


class Defaults(BaseModel):
    """
    Process-wide defaults. No environment variable is required.

    Attributes:
        codebook_seed (int): ``HDVQA_CODEBOOK_SEED``.
        dim (int): ``HDVQA_DIM``.
        split_seed (int): ``HDVQA_SPLIT_SEED``.
        init_seed (int): ``HDVQA_INIT_SEED``.
        shuffle_seed (int): ``HDVQA_SHUFFLE_SEED``.
    """
    model_config = ConfigDict(frozen=True)

    codebook_seed: int = Field(default=2017, ge=0)
    dim: int = Field(default=1000, ge=1)
    split_seed: int = Field(default=7, ge=0)
    init_seed: int = Field(default=11, ge=0)
    shuffle_seed: int = Field(default=13, ge=0)


_ENV = {
    "codebook_seed": "HDVQA_CODEBOOK_SEED",
    "dim": "HDVQA_DIM",
    "split_seed": "HDVQA_SPLIT_SEED",
    "init_seed": "HDVQA_INIT_SEED",
    "shuffle_seed": "HDVQA_SHUFFLE_SEED",
}


def load_defaults() -> Defaults:
    """Reads ``Defaults`` from environment variables, falling back to built-ins."""
    overrides = {field: os.environ[var] for field, var in _ENV.items() if os.getenv(var)}
    return Defaults(**overrides)
