"""Checkpoint container: JSON manifest plus one float32 raster per tensor.

Every component (unet, token table, codec, ...) stores each named parameter
as ``<component>.<param>.bin`` (little-endian float32, C order) with a JSON
shape sidecar, and the manifest records per-component SHA-256 checksums.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT = "mtl-lab-checkpoint-v1"


def component_checksum(state: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(np.ascontiguousarray(state[name]).astype("<f4").tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | Path,
    kind: str,
    step: int,
    seed: int,
    config: dict,
    components: dict[str, dict[str, np.ndarray]],
    extra: dict | None = None,
) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "format": FORMAT,
        "kind": kind,
        "step": step,
        "seed": seed,
        "config": config,
        "extra": extra or {},
        "components": {},
    }
    for comp, state in components.items():
        params = {}
        for pname, arr in state.items():
            arr = np.asarray(arr)
            fname = f"{comp}.{pname}"
            (path / f"{fname}.bin").write_bytes(
                np.ascontiguousarray(arr).astype("<f4").tobytes()
            )
            (path / f"{fname}.json").write_text(
                json.dumps({"shape": list(arr.shape), "dtype": "float32"})
            )
            params[pname] = {"file": fname, "shape": list(arr.shape)}
        manifest["components"][comp] = {
            "checksum": component_checksum(state),
            "params": params,
        }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} checkpoint")
    components: dict[str, dict[str, np.ndarray]] = {}
    for comp, meta in manifest["components"].items():
        state = {}
        for pname, info in meta["params"].items():
            raw = np.frombuffer((path / f"{info['file']}.bin").read_bytes(), dtype="<f4")
            state[pname] = raw.reshape(info["shape"]).astype(np.float64)
        loaded = component_checksum(state)
        if loaded != meta["checksum"]:
            raise ValueError(f"checksum mismatch for component {comp} in {path}")
        components[comp] = state
    return manifest, components
