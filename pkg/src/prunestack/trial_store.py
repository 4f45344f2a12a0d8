"""
Append-only trial store for resumable searches.

Every record is one JSON line ``{schema, timestamp, host, config_hash, kind,
payload}``; appends are flushed and fsynced before the call returns, so a
killed run loses at most the record being written. A torn final line is
truncated on open. The store is bound to one run configuration: opening it
with a different config hash is refused. A lock left by a process that no
longer exists is taken over.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .latency_bench import LatencySample, host_fingerprint
from .trial import Trial

SCHEMA_VERSION = 1
STORE_FILENAME = "trials.jsonl"
LOCK_FILENAME = "store.lock"

RECORD_TRIAL = "trial"
RECORD_SAMPLE = "sample"


class StoreConflictError(Exception):
    """Raised when a store cannot be used by this run (locked, foreign or corrupt)."""

    pass


@dataclass
class StoreRecord:
    """One line of the store."""

    kind: str
    payload: Dict[str, Any]
    config_hash: str
    host: str
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat())
    schema: int = SCHEMA_VERSION


class TrialStore:
    """JSONL store of trials and latency samples under one run directory."""

    def __init__(
        self,
        directory: Union[str, Path],
        config_hash: str,
        host: Optional[str] = None,
    ):
        """
        Initialize the store.

        Args:
            directory: run directory holding the store and its lock
            config_hash: hash of the run configuration the store is bound to
            host: host fingerprint recorded with each line (defaults to this host)
        """
        self.directory = Path(directory)
        self.path = self.directory / STORE_FILENAME
        self.lock_path = self.directory / LOCK_FILENAME
        self.config_hash = config_hash
        self.host = host or host_fingerprint()
        self._records: List[StoreRecord] = []
        self._locked = False

    def __enter__(self) -> "TrialStore":
        return self.open()

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def open(self) -> "TrialStore":
        """Take the lock and replay existing records."""
        self.directory.mkdir(parents=True, exist_ok=True)
        self._acquire_lock()
        try:
            self._records = self._replay()
        except Exception:
            self._release_lock()
            raise
        if self._records:
            logging.info(f"Resuming from {len(self._records)} stored records in {self.path}")
        return self

    def close(self) -> None:
        self._release_lock()

    def _acquire_lock(self) -> None:
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = self._lock_holder()
            if holder is not None and _pid_alive(holder):
                raise StoreConflictError(
                    f"{self.lock_path} exists: another run (pid {holder}) is using this directory"
                )
            if holder is None:
                raise StoreConflictError(
                    f"{self.lock_path} exists: another run is using this directory "
                    f"(delete the lock file if that run is dead)"
                )
            logging.warning(f"Taking over {self.lock_path} left by dead process {holder}")
            self.lock_path.unlink(missing_ok=True)
            try:
                fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                raise StoreConflictError(
                    f"{self.lock_path} exists: another run took the lock first"
                )
        with os.fdopen(fd, "w") as f:
            f.write(f"{os.getpid()}\n")
        self._locked = True

    def _lock_holder(self) -> Optional[int]:
        """PID written in the lock file, or None if it cannot be read."""
        try:
            return int(self.lock_path.read_text().strip())
        except (OSError, ValueError):
            return None

    def _release_lock(self) -> None:
        if self._locked:
            self.lock_path.unlink(missing_ok=True)
            self._locked = False

    def _replay(self) -> List[StoreRecord]:
        if not self.path.exists():
            return []
        data = self.path.read_bytes()
        end = data.rfind(b"\n") + 1
        if end < len(data):
            logging.warning(f"Truncating torn final record in {self.path}")
            with open(self.path, "r+b") as f:
                f.truncate(end)
                f.flush()
                os.fsync(f.fileno())
        records = []
        for lineno, line in enumerate(data[:end].splitlines(), start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                record = StoreRecord(**raw)
            except (json.JSONDecodeError, TypeError) as e:
                raise StoreConflictError(f"{self.path}:{lineno}: corrupt record ({e})")
            if record.schema != SCHEMA_VERSION:
                raise StoreConflictError(
                    f"{self.path}:{lineno}: schema {record.schema}, expected {SCHEMA_VERSION}"
                )
            if record.config_hash != self.config_hash:
                raise StoreConflictError(
                    f"{self.path} was written by a different configuration "
                    f"({record.config_hash} != {self.config_hash})"
                )
            records.append(record)
        return records

    def _append(self, kind: str, payload: Dict[str, Any]) -> StoreRecord:
        if not self._locked:
            raise StoreConflictError("store is not open")
        record = StoreRecord(kind, payload, self.config_hash, self.host)
        line = json.dumps(asdict(record), sort_keys=True) + "\n"
        with open(self.path, "a") as f:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())
        self._records.append(record)
        return record

    def append_trial(self, trial: Trial) -> None:
        self._append(RECORD_TRIAL, trial.to_dict())

    def append_sample(self, sample: LatencySample) -> None:
        self._append(RECORD_SAMPLE, sample.to_dict())

    @property
    def records(self) -> List[StoreRecord]:
        return list(self._records)

    def trials(self, stage: Optional[int] = None) -> List[Trial]:
        """Stored trials in append order, optionally for one stage."""
        out = [Trial.from_dict(r.payload) for r in self._records if r.kind == RECORD_TRIAL]
        return [t for t in out if stage is None or t.stage == stage]

    def samples(self) -> List[LatencySample]:
        """Stand-alone latency samples (from ``bench``), in append order."""
        return [
            LatencySample.from_dict(r.payload) for r in self._records if r.kind == RECORD_SAMPLE
        ]


def _pid_alive(pid: int) -> bool:
    if pid <= 0:
        return False
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True
