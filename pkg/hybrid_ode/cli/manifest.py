"""Run manifests: the effective options, seeds and input digests of one command."""

from __future__ import annotations

import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, Field, ValidationError

from hybrid_ode.core.exceptions import DataError

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "h2ncm-manifest/1"
MANIFEST_SUFFIX = ".manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


def digest_path(path: str | Path) -> str:
    """
    SHA-256 of a file, or of every file below a directory in sorted order.

    Manifest files inside a directory are skipped so a dataset's digest does not
    change when it is re-described.
    """
    target = Path(path)
    h = hashlib.sha256()
    if target.is_dir():
        for item in sorted(p for p in target.rglob("*") if p.is_file()):
            if item.name.endswith("manifest.json"):
                continue
            h.update(item.relative_to(target).as_posix().encode())
            h.update(b"\0")
            h.update(item.read_bytes())
    else:
        h.update(target.read_bytes())
    return h.hexdigest()


class RunManifest(BaseModel):
    """Everything needed to replay a command."""

    schema_: str = Field(MANIFEST_SCHEMA, alias="schema")
    command: str = Field(..., description="Subcommand name")
    argv: list[str] = Field(..., description="Arguments as given on the command line")
    options: dict[str, Any] = Field(..., description="Effective options after config resolution")
    seeds: dict[str, int] = Field(default_factory=dict, description="Seeds used by the command")
    inputs: dict[str, str] = Field(default_factory=dict, description="SHA-256 of each input path")
    version: str = Field(..., description="Tool version")
    started_at: str = Field(default_factory=_now, description="UTC start time")
    finished_at: Optional[str] = Field(None, description="UTC end time")
    status: str = Field("running", description="running, ok or failed")
    error: Optional[str] = Field(None, description="Failure message")

    model_config = {"extra": "forbid", "populate_by_name": True}

    def finish(self, error: str | None = None) -> RunManifest:
        """Copy with the end time and outcome filled in."""
        return self.model_copy(
            update={"finished_at": _now(), "status": "failed" if error else "ok", "error": error},
        )

    def save(self, path: str | Path) -> None:
        """Write the manifest as JSON."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        payload = self.model_dump(mode="json", by_alias=True)
        target.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        logger.debug("Wrote manifest %s", target)

    @classmethod
    def load(cls, path: str | Path) -> RunManifest:
        """
        Read a manifest file.

        Raises:
            DataError: If the file is not a manifest

        """
        try:
            manifest = cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except ValidationError as e:
            msg = f"Invalid manifest {path}: {e.errors()[0]['msg']}"
            raise DataError(msg) from e
        if manifest.schema_ != MANIFEST_SCHEMA:
            msg = f"Unsupported manifest schema {manifest.schema_!r} in {path}"
            raise DataError(msg, field="schema")
        return manifest
