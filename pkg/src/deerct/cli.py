"""Command-line entry point: ``deer {gen-data,train,reconstruct,evaluate,grad-check}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .analytic import prepare_arrays
from .config import ExperimentConfig
from .data import SPLITS, Samples, manifest_hash, read_split, write_dataset
from .geometry import equispaced_angles
from .rasterio import CorruptFileError, load_raster, save_png, save_raster
from .train import Trainer

log = logging.getLogger("deerct")

OUTPUT_ROOT_ENV = "DEER_OUTPUT_ROOT"


class CliError(Exception):
    """A user-facing failure; reported without a traceback."""


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _window(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    if hi <= lo:
        raise argparse.ArgumentTypeError(f"window must be increasing, got {text!r}")
    return lo, hi


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise CliError(f"{path} exists and is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(Path(args.out) if args.out else output_root() / "data", args.force)
    manifest = write_dataset(cfg, out)
    counts = {s: manifest["files"][s]["count"] for s in manifest["files"]}
    print(f"wrote {out} ({counts}); manifest sha256 {manifest_hash(out / 'manifest.json')}")
    return 0


def _check_dataset(cfg: ExperimentConfig, root: Path) -> None:
    manifest = json.loads((root / "manifest.json").read_text())
    geom = manifest["geometry"]
    if geom["n"] != cfg.n or geom["nv_few"] != cfg.nv_few or geom["n_det"] != cfg.n_det:
        raise CliError(f"dataset geometry {geom} does not match config {cfg.geometry()}")


def cmd_train(args) -> int:
    data = Path(args.data)
    if not (data / "manifest.json").exists():
        raise CliError(f"{data} is not a dataset directory (no manifest.json); run gen-data first")
    if args.resume:
        trainer = _load_trainer(args.resume)
        cfg = trainer.cfg
    else:
        cfg = _load_config(args)
    _check_dataset(cfg, data)
    train_set = read_split(data, "train", cfg.nv_dense)
    val_set = read_split(data, "val", cfg.nv_dense) if cfg.n_val else None
    out = Path(args.out) if args.out else output_root() / f"train-{cfg.variant}-{cfg.hash()}"
    if args.resume:
        trainer.train_set, trainer.val_set, trainer.out_dir = train_set, val_set, out
        out.mkdir(parents=True, exist_ok=True)
    else:
        _prepare_out(out, args.force)
        trainer = Trainer(cfg, train_set, val_set, out)
    cfg.save(out / "config.toml")
    history = trainer.fit(until_epoch=args.until_epoch)
    last = history[-1] if history else {}
    print(f"trained {cfg.variant} to epoch {trainer.state.epoch} in {out}; "
          + " ".join(f"{k}={v:.4g}" for k, v in last.items() if k.startswith("val_")))
    return 0


def _load_trainer(path) -> Trainer:
    try:
        return Trainer.from_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint {path} does not exist") from None
    except (CorruptFileError, ValueError, KeyError) as exc:
        raise CliError(f"refusing checkpoint {path}: {exc}") from None


def _dense_count(cfg: ExperimentConfig, nv_in: int) -> int:
    return max(1, round(nv_in * cfg.nv_dense / cfg.nv_few))


def reconstruct_arrays(trainer: Trainer, fewview: np.ndarray, angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run a trained generator on ``(B, Nv, Nd)`` few-view sinograms; returns ``(X, FBP)``."""
    cfg = trainer.cfg
    nv_in = fewview.shape[1]
    if fewview.shape[2] != cfg.n_det:
        raise CliError(f"sinogram has {fewview.shape[2]} detectors, checkpoint expects {cfg.n_det}")
    nv_dense = _dense_count(cfg, nv_in)
    bp = trainer.generator.bp
    if bp is not None and bp.variant == "view-dependent" and nv_dense != cfg.nv_dense:
        raise CliError(f"view-dependent checkpoint expects {cfg.nv_few} few-view ({cfg.nv_dense} dense) views, "
                       f"sinogram has {nv_in} ({nv_dense} dense); only deer-lite transfers across view counts")
    fbp_imgs, _, filtered = prepare_arrays(fewview.astype(np.float32), angles, cfg.n, nv_dense)
    s = Samples(np.zeros_like(fbp_imgs), fewview, fbp_imgs, filtered, np.zeros(len(fewview), int),
                np.asarray(angles), equispaced_angles(nv_dense))
    x, _ = trainer.predict(s)
    return x, fbp_imgs


def cmd_reconstruct(args) -> int:
    trainer = _load_trainer(args.checkpoint)
    try:
        sino, meta = load_raster(args.sinogram)
    except CorruptFileError as exc:
        raise CliError(str(exc)) from None
    single = sino.ndim == 2
    batch = sino[None] if single else sino
    if batch.ndim != 3:
        raise CliError(f"sinogram raster must be (Nv, Nd) or (M, Nv, Nd), got {sino.shape}")
    angles = np.asarray(meta.get("angles", equispaced_angles(batch.shape[1])), dtype=np.float64)
    if len(angles) != batch.shape[1]:
        raise CliError(f"header lists {len(angles)} angles for {batch.shape[1]} views")
    x, _ = reconstruct_arrays(trainer, batch, angles)
    out = Path(args.out) if args.out else output_root() / "recon" / (Path(args.sinogram).stem + "_recon.raw")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_raster(out, x[0] if single else x, kind="image", pixel_size=1.0, variant=trainer.cfg.variant,
                config_hash=trainer.cfg.hash(), n_views=int(batch.shape[1]))
    if args.png:
        imgs = x[:1] if single else x
        for i, img in enumerate(imgs):
            png = out.with_suffix(".png") if len(imgs) == 1 else out.with_name(f"{out.stem}_{i:04d}.png")
            save_png(png, img, args.png_window)
    print(f"wrote {out} {x.shape[1:] if single else x.shape}")
    return 0


def cmd_evaluate(args) -> int:
    if not args.checkpoint:
        raise CliError("no methods to evaluate; pass at least one --checkpoint")
    data = Path(args.data)
    trainers = [_load_trainer(p) for p in args.checkpoint]
    cfg0 = trainers[0].cfg
    for tr, path in zip(trainers, args.checkpoint):
        try:
            _check_dataset(tr.cfg, data)
        except CliError as exc:
            raise CliError(f"{path}: {exc}") from None
    test = read_split(data, args.split, cfg0.nv_dense)
    test_set = {"gt": test.gt, "fewview": test.fewview, "fbp": test.fbp}
    methods = [("FBP", lambda b: b["fbp"])]
    seen = set()
    for tr in trainers:
        label = tr.cfg.variant
        while label in seen:
            label += "'"
        seen.add(label)
        methods.append((label, lambda b, tr=tr: reconstruct_arrays(tr, b["fewview"], test.few_angles)[0]))
        if tr.generator.bp is not None:
            methods.append((f"{label}/bp", lambda b, tr=tr: _bp_only(tr, b["fewview"], test.few_angles)))
    report = metrics.evaluate(methods, test_set)
    out = Path(args.out) if args.out else output_root() / "eval"
    out.mkdir(parents=True, exist_ok=True)
    table = report.to_table()
    (out / "report.txt").write_text(table + "\n")
    with open(out / "report.jsonl", "w") as fh:
        for rec in report.to_records():
            fh.write(json.dumps(rec) + "\n")
    print(table)
    return 0


def _bp_only(trainer: Trainer, fewview: np.ndarray, angles) -> np.ndarray:
    from . import tensor as T

    nv_dense = _dense_count(trainer.cfg, fewview.shape[1])
    _, _, filtered = prepare_arrays(fewview.astype(np.float32), angles, trainer.cfg.n, nv_dense)
    with T.no_grad():
        return trainer.generator.back_project(T.Tensor(filtered), equispaced_angles(nv_dense)).data


def cmd_grad_check(args) -> int:
    from .gradcheck import operator_suite, grad_check

    worst = 0.0
    for spec in operator_suite():
        err = grad_check(spec, trials=args.trials, step=args.step, seed=args.seed or 0)
        worst = max(worst, err)
        print(f"{spec.name:<28} {err:.3e} {'ok' if err < args.tol else 'FAIL'}")
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    return 0 if worst < args.tol else 1


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deer", description="Few-view CT reconstruction with learned back-projection.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="simulate phantoms and few-view sinograms")
    g.add_argument("--config", help="experiment TOML file (defaults built in)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help=f"dataset directory (default ${OUTPUT_ROOT_ENV}/data)")
    g.add_argument("--force", action="store_true", help="write into a non-empty directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="two-phase training on a generated dataset")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--data", required=True, help="directory written by gen-data")
    t.add_argument("--out", help="run directory for checkpoints and metrics.jsonl")
    t.add_argument("--force", action="store_true")
    t.add_argument("--resume", help="continue from this checkpoint (its config wins)")
    t.add_argument("--until-epoch", type=int, help="stop before this epoch index")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("reconstruct", help="reconstruct few-view sinograms with a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--sinogram", required=True, help="raster of shape (Nv, Nd) or (M, Nv, Nd)")
    r.add_argument("--out", help="output raster path")
    r.add_argument("--png", action="store_true", help="also write PNG previews")
    r.add_argument("--png-window", type=_window, default=(0.0, 1.0), metavar="LO,HI")
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("evaluate", help="PSNR/SSIM/MAE table against the FBP baseline")
    e.add_argument("--checkpoint", action="append", default=[], help="repeatable")
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=SPLITS, default="test")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("grad-check", help="finite-difference certification of every operator")
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--step", type=float, default=1e-5)
    c.add_argument("--tol", type=float, default=1e-6)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"deer {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
