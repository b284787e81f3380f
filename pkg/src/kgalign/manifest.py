"""Run manifests: resolved configuration and input digests for reproduction.

A manifest records everything needed to replay a run byte-identically on the
same build: the fully resolved configuration (defaults materialized), SHA-256
digests of every input file, the master seed, the kernel backend, and the
artifact paths. Manifests contain no timestamps.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

__all__ = ["RunManifest", "sha256_file"]


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, dict] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    kernel_backend: str = ""

    def add_input(self, name: str, path: str | Path) -> None:
        self.inputs[name] = {"path": str(path), "sha256": sha256_file(path)}

    def verify_inputs(self) -> None:
        """Raise if any recorded input digest no longer matches its file."""
        for name, entry in self.inputs.items():
            actual = sha256_file(entry["path"])
            if actual != entry["sha256"]:
                raise ValueError(
                    f"input {name!r} at {entry['path']} has digest {actual}, "
                    f"manifest expects {entry['sha256']}"
                )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(
            command=data["command"],
            config=data["config"],
            inputs=data.get("inputs", {}),
            outputs=data.get("outputs", {}),
            kernel_backend=data.get("kernel_backend", ""),
        )
