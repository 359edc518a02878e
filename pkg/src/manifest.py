"""
Run manifest: every seed, path, setting and artifact hash needed to replay a run.
"""

from datetime import datetime, timezone
from typing import Dict, Optional

from pydantic import BaseModel, Field

from src import __version__
from src.training import TrainConfig
from src.utils import PathLike, atomic_write_text, read_file, sha256_file


class RunManifest(BaseModel):
    """
    Attributes:
        command (str): Subcommand that produced the run.
        codebook_seed (int): Codebook seed.
        dim (int): Hypervector dimension.
        split_seed (Optional[int]): Split seed of the dataset.
        dedupe (Optional[bool]): Dataset dedupe flag.
        init_seed (Optional[int]): Initial weight seed (training runs).
        shuffle_seed (Optional[int]): Minibatch order seed (training runs).
        dataset (Optional[str]): Dataset directory.
        checkpoint (Optional[str]): Checkpoint written or read.
        config (Optional[TrainConfig]): Training settings.
        artifacts (Dict[str, str]): SHA-256 of every file read or written, by name.
        tool_version (str): Package version.
        created_at (str): UTC timestamp; informational, excluded from replay.
    """
    command: str
    codebook_seed: int
    dim: int
    split_seed: Optional[int] = None
    dedupe: Optional[bool] = None
    init_seed: Optional[int] = None
    shuffle_seed: Optional[int] = None
    dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    config: Optional[TrainConfig] = None
    artifacts: Dict[str, str] = Field(default_factory=dict)
    tool_version: str = __version__
    created_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def record(self, name: str, path: PathLike) -> None:
        """Adds the hash of an artifact."""
        self.artifacts[name] = sha256_file(path)

    def save(self, path: PathLike) -> None:
        atomic_write_text(path, self.model_dump_json(indent=2) + "\n")

    @classmethod
    def load(cls, path: PathLike) -> "RunManifest":
        return cls.model_validate_json(read_file(path))
