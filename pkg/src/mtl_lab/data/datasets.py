"""Partially labeled toy datasets on disk.

Layout: ``<root>/<dataset_id>/manifest.json`` plus one directory per sample
holding little-endian float32/int32 rasters with a JSON sidecar per raster
(shape, dtype, task). Each dataset keeps only the labels its coverage row
grants, mimicking a corpus where every source annotates a task subset.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..tasks import TASKS
from .scene import SceneSample, generate_scene

FORMAT = "mtl-lab-dataset-v1"

_FLOAT = "float32"
_INT = "int32"


def worker_count() -> int:
    """Worker threads for sample generation; MTL_LAB_THREADS caps it (default 1)."""
    return max(1, int(os.environ.get("MTL_LAB_THREADS", "1")))


def write_raster(base: Path, array: np.ndarray, task: str | None = None):
    array = np.asarray(array)
    if array.dtype.kind in "fc":
        dtype, cast = _FLOAT, "<f4"
    else:
        dtype, cast = _INT, "<i4"
    base.with_suffix(".bin").write_bytes(np.ascontiguousarray(array).astype(cast).tobytes())
    sidecar = {"shape": list(array.shape), "dtype": dtype, "task": task}
    base.with_suffix(".json").write_text(json.dumps(sidecar))


def read_raster(base: Path) -> np.ndarray:
    sidecar = json.loads(base.with_suffix(".json").read_text())
    cast = "<f4" if sidecar["dtype"] == _FLOAT else "<i4"
    raw = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype=cast)
    arr = raw.reshape(sidecar["shape"])
    return arr.astype(np.float64) if sidecar["dtype"] == _FLOAT else arr.astype(np.int64)


@dataclass(frozen=True)
class CoverageMatrix:
    """Boolean dataset x task grid, stored as per-dataset task tuples."""

    rows: dict[str, tuple[str, ...]]

    def __post_init__(self):
        known = {t.name for t in TASKS}
        for dataset_id, names in self.rows.items():
            bad = set(names) - known
            if bad:
                raise ValueError(f"{dataset_id} covers unknown tasks {sorted(bad)}")
        covered = {name for names in self.rows.values() for name in names}
        missing = known - covered
        if missing:
            raise ValueError(f"tasks not covered by any dataset: {sorted(missing)}")

    def tasks_of(self, dataset_id: str) -> tuple[str, ...]:
        return self.rows[dataset_id]

    def providers(self, task_name: str) -> tuple[str, ...]:
        return tuple(d for d, names in self.rows.items() if task_name in names)


TOY_COVERAGE = CoverageMatrix(
    {
        "toy-indoor": ("normal", "depth", "shading", "albedo"),
        "toy-urban": ("semantic", "normal", "depth", "optical_flow", "scene_flow"),
        "toy-objects": ("optical_flow", "scene_flow"),
    }
)

TOY_STYLES = {"toy-indoor": "indoor", "toy-urban": "urban", "toy-objects": "objects"}


def _sample_dir(root: Path, idx: int) -> str:
    return f"{idx:06d}"


def assemble_dataset(
    root: str | Path,
    dataset_id: str,
    tasks: tuple[str, ...],
    n_samples: int,
    seed: int,
    resolution: tuple[int, int] = (32, 64),
    style: str = "urban",
    motion_scale: float = 1.0,
) -> Path:
    """Generate and write a dataset keeping only the covered tasks' labels.

    Regeneration with the same arguments is bit-identical; per-sample seeds
    are spawned from the dataset seed so parallel generation cannot change
    the result.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    root = Path(root)
    out = root / dataset_id
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(n_samples)

    def build(idx: int) -> SceneSample:
        return generate_scene(children[idx], resolution=resolution, style=style, motion_scale=motion_scale)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(build, range(n_samples)))
    else:
        samples = [build(i) for i in range(n_samples)]

    names = []
    for idx, sample in enumerate(samples):
        name = _sample_dir(out, idx)
        names.append(name)
        d = out / name
        d.mkdir(exist_ok=True)
        write_raster(d / "frame_i", sample.frame_i)
        write_raster(d / "frame_j", sample.frame_j)
        for task_name in tasks:
            write_raster(d / f"label_{task_name}", sample.labels[task_name], task=task_name)
            write_raster(
                d / f"valid_{task_name}",
                sample.validity[task_name].astype(np.int64),
                task=task_name,
            )

    manifest = {
        "format": FORMAT,
        "dataset_id": dataset_id,
        "style": style,
        "coverage": list(tasks),
        "seed": seed,
        "n_samples": n_samples,
        "resolution": list(resolution),
        "focal": resolution[1] / 2.0,
        "motion_scale": motion_scale,
        "samples": names,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


class DatasetReader:
    """Interface real datasets would implement to plug into the trainer."""

    dataset_id: str
    coverage: tuple[str, ...]

    def __len__(self) -> int:
        raise NotImplementedError

    def sample(self, idx: int) -> SceneSample:
        raise NotImplementedError


class ToyDataset(DatasetReader):
    def __init__(self, path: str | Path):
        self.path = Path(path)
        manifest = json.loads((self.path / "manifest.json").read_text())
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{self.path} is not a {FORMAT} dataset")
        self.manifest = manifest
        self.dataset_id = manifest["dataset_id"]
        self.coverage = tuple(manifest["coverage"])
        self.resolution = tuple(manifest["resolution"])
        self._names = manifest["samples"]
        self._cache: dict[int, SceneSample] = {}

    def __len__(self) -> int:
        return len(self._names)

    def sample(self, idx: int) -> SceneSample:
        if idx in self._cache:
            return self._cache[idx]
        d = self.path / self._names[idx]
        labels, validity = {}, {}
        for task_name in self.coverage:
            labels[task_name] = read_raster(d / f"label_{task_name}")
            validity[task_name] = read_raster(d / f"valid_{task_name}").astype(bool)
        sample = SceneSample(
            frame_i=read_raster(d / "frame_i"),
            frame_j=read_raster(d / "frame_j"),
            labels=labels,
            validity=validity,
            dataset_id=self.dataset_id,
            meta={"focal": self.manifest["focal"], "style": self.manifest["style"]},
        )
        self._cache[idx] = sample
        return sample


def build_toy_corpus(
    root: str | Path,
    n_train: int,
    n_eval: int,
    seed: int,
    resolution: tuple[int, int] = (32, 64),
) -> dict[str, dict[str, Path]]:
    """Write train and eval splits of the three toy datasets."""
    root = Path(root)
    mixer = np.random.default_rng(np.random.SeedSequence(seed))
    out: dict[str, dict[str, Path]] = {"train": {}, "eval": {}}
    for dataset_id in sorted(TOY_COVERAGE.rows):
        for split, count in (("train", n_train), ("eval", n_eval)):
            split_seed = int(mixer.integers(0, 2**31 - 1))
            out[split][dataset_id] = assemble_dataset(
                root / split,
                dataset_id,
                TOY_COVERAGE.tasks_of(dataset_id),
                count,
                seed=split_seed,
                resolution=resolution,
                style=TOY_STYLES[dataset_id],
            )
    return out


def load_split(root: str | Path, split: str) -> dict[str, ToyDataset]:
    base = Path(root) / split
    datasets = {}
    for child in sorted(base.iterdir()):
        if (child / "manifest.json").exists():
            ds = ToyDataset(child)
            datasets[ds.dataset_id] = ds
    if not datasets:
        raise FileNotFoundError(f"no datasets found under {base}")
    return datasets


def tree_checksum(path: str | Path) -> str:
    """SHA-256 over every file (sorted relative paths); detects any drift."""
    path = Path(path)
    h = hashlib.sha256()
    for file in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(file.relative_to(path)).encode())
        h.update(file.read_bytes())
    return h.hexdigest()
