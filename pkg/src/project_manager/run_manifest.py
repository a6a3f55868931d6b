"""
Blueprint: Project Manager - Run Manifest

Records what a subcommand consumed and produced so a run can be reproduced
and audited: configuration snapshot, seed, input and output files with their
SHA-256, and per-stage wall-clock timings.

Components:
1. ArtifactRecord / RunManifest (pydantic models written as manifest.json)
2. RunRecorder (collects records during a run, writes the manifest)
3. verify_manifest (re-hash recorded outputs)
"""

import hashlib
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

from pydantic import BaseModel, Field

from ..config_manager.config_handler import PipelineConfig
from ..data_handlers.feature_io import atomic_write_bytes
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

MANIFEST_NAME = "manifest.json"


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactRecord(BaseModel):
    path: str
    sha256: str
    size: int = Field(ge=0)

    @classmethod
    def from_path(cls, path: Union[str, Path]) -> "ArtifactRecord":
        path = Path(path)
        return cls(path=str(path), sha256=sha256_file(path), size=path.stat().st_size)


class RunManifest(BaseModel):
    """Everything needed to re-run a subcommand"""
    command: str
    arguments: Dict[str, Any] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    inputs: List[ArtifactRecord] = Field(default_factory=list)
    outputs: List[ArtifactRecord] = Field(default_factory=list)
    timings: Dict[str, float] = Field(default_factory=dict, description="Seconds per stage")


class RunRecorder:
    """Collects manifest entries while a subcommand runs"""

    def __init__(self, command: str, config: Optional[PipelineConfig] = None,
                 arguments: Optional[Dict[str, Any]] = None):
        config_dump = {}
        if config is not None:
            config_dump = {k: list(v) if isinstance(v, tuple) else v for k, v in config.model_dump().items()}
        self.manifest = RunManifest(
            command=command,
            arguments={k: str(v) if isinstance(v, Path) else v for k, v in (arguments or {}).items()},
            config=config_dump,
            seed=config.seed if config is not None else None,
        )

    def add_input(self, path: Union[str, Path]) -> None:
        path = Path(path)
        if path.is_file():
            self.manifest.inputs.append(ArtifactRecord.from_path(path))

    def add_outputs(self, paths) -> None:
        for path in paths:
            self.manifest.outputs.append(ArtifactRecord.from_path(path))

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.manifest.timings[name] = round(time.perf_counter() - start, 6)

    def write(self, out_dir: Union[str, Path]) -> Path:
        """Write manifest.json into the output directory"""
        try:
            path = Path(out_dir) / MANIFEST_NAME
            atomic_write_bytes(path, self.manifest.model_dump_json(indent=2).encode("utf-8"))
            logger.debug(f"Wrote run manifest to {path}")
            return path

        except Exception as e:
            logger.error(f"Manifest writing failed: {str(e)}")
            raise


def load_manifest(path: Union[str, Path]) -> RunManifest:
    return RunManifest.model_validate_json(Path(path).read_text())


def verify_manifest(manifest: RunManifest) -> List[str]:
    """Paths of recorded outputs that are missing or whose content changed"""
    mismatched = []
    for record in manifest.outputs:
        path = Path(record.path)
        if not path.is_file() or sha256_file(path) != record.sha256:
            mismatched.append(record.path)
    return mismatched
