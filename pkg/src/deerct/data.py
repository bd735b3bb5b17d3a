"""Synthetic datasets: random-ellipse phantoms, their few-view sinograms and
the derived network inputs."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analytic import prepare_arrays
from .config import ExperimentConfig
from .geometry import PhantomSpec, equispaced_angles, make_phantom, project
from .rasterio import load_raster, save_raster

SPLITS = ("train", "val", "test")
_SPLIT_OFFSET = {"train": 0, "val": 1_000_000, "test": 2_000_000}


def split_seeds(cfg: ExperimentConfig) -> dict[str, list[int]]:
    """Phantom seeds per split; the ranges never overlap."""
    base = cfg.seed * 10_000_000
    sizes = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    return {s: [base + _SPLIT_OFFSET[s] + i for i in range(sizes[s])] for s in SPLITS}


@dataclass
class Samples:
    gt: np.ndarray          # (M, n, n)
    fewview: np.ndarray     # (M, nv_few, n_det)
    fbp: np.ndarray         # (M, n, n)
    filtered: np.ndarray    # (M, nv_dense, n_det)
    seeds: np.ndarray
    few_angles: np.ndarray
    dense_angles: np.ndarray

    def __len__(self) -> int:
        return len(self.gt)

    def subset(self, idx) -> "Samples":
        return Samples(self.gt[idx], self.fewview[idx], self.fbp[idx], self.filtered[idx], self.seeds[idx],
                       self.few_angles, self.dense_angles)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"gt": self.gt, "fewview": self.fewview, "fbp": self.fbp, "filtered": self.filtered}


def from_fewview(gt: np.ndarray, fewview: np.ndarray, seeds, n: int, nv_dense: int) -> Samples:
    few_angles = equispaced_angles(fewview.shape[1])
    fbp_imgs, _, filtered = prepare_arrays(fewview.astype(np.float32), few_angles, n, nv_dense)
    return Samples(gt.astype(np.float32), fewview.astype(np.float32), fbp_imgs, filtered,
                   np.asarray(seeds), few_angles, equispaced_angles(nv_dense))


def simulate(seeds, n: int, nv_few: int, n_det: int, nv_dense: int) -> Samples:
    if len(seeds) == 0:
        raise ValueError("cannot build an empty dataset")
    gt = np.stack([make_phantom(PhantomSpec("random-ellipses", int(s)), n).data for s in seeds])
    few = project(gt, equispaced_angles(nv_few), n_det).astype(np.float32)
    return from_fewview(gt, few, seeds, n, nv_dense)


def build_split(cfg: ExperimentConfig, split: str, nv_few: int | None = None,
                nv_dense: int | None = None) -> Samples:
    """Simulate one split in memory; view counts may be overridden for transfer tests."""
    seeds = split_seeds(cfg)[split]
    return simulate(seeds, cfg.n, nv_few or cfg.nv_few, cfg.n_det, nv_dense or cfg.nv_dense)


# -- on-disk datasets -------------------------------------------------------

def write_dataset(cfg: ExperimentConfig, out: Path) -> dict:
    """Write phantoms and few-view sinograms per split plus a manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = split_seeds(cfg)
    geom = cfg.geometry()
    files = {}
    for split in SPLITS:
        if not seeds[split]:
            continue
        gt = np.stack([make_phantom(PhantomSpec("random-ellipses", s), cfg.n).data for s in seeds[split]])
        angles = equispaced_angles(cfg.nv_few)
        few = project(gt, angles, cfg.n_det)
        save_raster(out / f"{split}_phantoms.raw", gt, kind="phantoms", pixel_size=1.0, seeds=seeds[split])
        save_raster(out / f"{split}_fewview.raw", few, kind="sinogram", angles=angles.tolist(),
                    det_spacing=1.0, seeds=seeds[split], **geom)
        files[split] = {"phantoms": f"{split}_phantoms.raw", "fewview": f"{split}_fewview.raw",
                        "count": len(seeds[split])}
    manifest = {"config_hash": cfg.hash(), "geometry": geom, "seed": cfg.seed,
                "splits": {s: seeds[s] for s in SPLITS}, "files": files}
    text = json.dumps(manifest, sort_keys=True, indent=1)
    (out / "manifest.json").write_text(text)
    cfg.save(out / "config.toml")
    return manifest


def manifest_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_split(root: Path, split: str, nv_dense: int) -> Samples:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    entry = manifest["files"].get(split)
    if entry is None:
        raise ValueError(f"dataset at {root} has no {split!r} split")
    gt, _ = load_raster(root / entry["phantoms"])
    few, meta = load_raster(root / entry["fewview"])
    return from_fewview(gt, few, meta["seeds"], gt.shape[-1], nv_dense)
