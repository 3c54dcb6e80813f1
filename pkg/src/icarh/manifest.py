"""
iCARH Run Manifest

Every CLI run records its argument vector, the fully materialised
configuration, the seed, SHA-256 digests of its inputs and outputs, the
library version and the elapsed time. `--replay manifest.json` re-runs the
recorded argument vector.
"""

import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from humanfriendly import format_timespan

from . import __version__
from .exceptions import IcarhIOError

logger = logging.getLogger(__name__)

MANIFEST_FILE = 'manifest.json'


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_name(command: str) -> str:
    """manifest.json for fit and simulate runs, <command>_manifest.json for reports written beside them."""
    return MANIFEST_FILE if command in ('fit', 'simulate') else f"{command}_manifest.json"


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    version: str = __version__
    python: str = field(default_factory=lambda: sys.version.split()[0])
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec='seconds'))
    elapsed_seconds: float = 0.0
    elapsed: str = ''
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self._clock = time.monotonic()

    def record_input(self, path: Path) -> None:
        self.inputs[str(path)] = file_digest(Path(path))

    def record_output(self, path: Path, root: Optional[Path] = None) -> None:
        path = Path(path)
        key = str(path.relative_to(root)) if root is not None else str(path)
        self.outputs[key] = file_digest(path)

    def write(self, directory: Path) -> Path:
        self.elapsed_seconds = time.monotonic() - self._clock
        self.elapsed = format_timespan(self.elapsed_seconds)
        path = Path(directory) / manifest_name(self.command)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=False), encoding='utf-8')
        logger.info(f"Wrote {path} ({len(self.outputs)} output(s), {self.elapsed})")
        return path

    @classmethod
    def read(cls, path: Path) -> 'RunManifest':
        try:
            values = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise IcarhIOError(f"Cannot read manifest {path}: {e}")
        return cls(**values)
