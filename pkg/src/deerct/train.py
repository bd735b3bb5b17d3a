"""Two-phase training: back-projection pretraining, then joint optimisation of
the whole generator (and the critic when the adversarial weight is nonzero)."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from . import tensor as T
from .config import ExperimentConfig
from .data import Samples
from .losses import (LossWeights, SsimParams, loss_adversarial, loss_discriminator, loss_generator_total,
                     loss_mae, loss_mae_bp, loss_structural)
from .model import Discriminator, Generator
from .optim import Adam
from .rasterio import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

PRETRAIN = "pretrain-bp"
JOINT = "joint"


@dataclass
class TrainState:
    epoch: int = -1  # last completed epoch
    phase: str = PRETRAIN
    seed: int = 0
    history: list[dict] = field(default_factory=list)


class Trainer:
    def __init__(self, cfg: ExperimentConfig, train_set: Samples, val_set: Samples | None = None,
                 out_dir: Path | None = None):
        if len(train_set) == 0:
            raise ValueError("training set is empty")
        self.cfg = cfg
        self.train_set = train_set
        self.val_set = val_set
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.weights = LossWeights(cfg.lambda_al, cfg.lambda_sl, cfg.lambda_gp, cfg.clip_c)
        self.ssim_params = SsimParams(weighting=cfg.ssim_window)
        self.generator = Generator(cfg.variant, cfg.n, cfg.nv_dense, cfg.n_det, padding=cfg.padding,
                                   final_activation=cfg.final_activation, seed=cfg.seed,
                                   unet_bias=cfg.unet_bias)
        self.adversarial = cfg.lambda_al > 0
        self.discriminator = Discriminator(cfg.n, rng=np.random.default_rng([cfg.seed, 3])) if self.adversarial else None
        if self.discriminator is not None:
            self.discriminator.clip(cfg.clip_c)
        betas = dict(beta1=cfg.beta1, beta2=cfg.beta2)
        bp = self.generator.bp_parameters()
        self.opt = {
            "bp_pre": Adam(bp, cfg.lr_pretrain, **betas),
            "bp": Adam(bp, cfg.lr_base * cfg.bp_lr_ratio, **betas),
            "unet": Adam(self.generator.refine_parameters(), cfg.lr_base, **betas),
        }
        if self.discriminator is not None:
            self.opt["disc"] = Adam(self.discriminator.parameters(), cfg.lr_disc, **betas)
        self.state = TrainState(seed=cfg.seed)

    # -- schedule ----------------------------------------------------------
    @property
    def pretrain_epochs(self) -> int:
        return self.cfg.epochs_pretrain if self.generator.bp is not None else 0

    @property
    def total_epochs(self) -> int:
        return self.pretrain_epochs + self.cfg.epochs_joint

    def phase_of(self, epoch: int) -> str:
        return PRETRAIN if epoch < self.pretrain_epochs else JOINT

    def _batches(self, epoch: int, size: int):
        order = np.random.default_rng([self.cfg.seed, 7, epoch]).permutation(len(self.train_set))
        for lo in range(0, len(order), size):
            yield self.train_set.subset(order[lo:lo + size])

    # -- steps -------------------------------------------------------------
    def _inputs(self, b: Samples):
        return T.Tensor(b.filtered), T.Tensor(b.fbp), T.Tensor(b.gt)

    def pretrain_step(self, b: Samples) -> dict:
        q, _, y = self._inputs(b)
        opt = self.opt["bp_pre"]
        opt.zero_grad()
        x_bp = self.generator.back_project(q, b.dense_angles)
        loss = loss_mae_bp(x_bp, y)
        loss.backward()
        opt.step()
        return {"l1_bp": loss.item()}

    def joint_step(self, b: Samples) -> dict:
        q, f, y = self._inputs(b)
        g = self.generator
        x, x_bp = g(q, f, b.dense_angles)
        out = {}
        d = self.discriminator
        if d is not None:
            opt_d = self.opt["disc"]
            opt_d.zero_grad()
            l_d = loss_discriminator(d, x.detach(), y)
            l_d.backward()
            opt_d.step()
            d.clip(self.cfg.clip_c)
            out["l_d"] = l_d.item()
        l1 = loss_mae(x, y)
        l1_bp = loss_mae_bp(x_bp, y) if x_bp is not None else None
        l_sl = loss_structural(x, y, self.ssim_params)
        l_al = None
        if d is not None:
            for p in d.parameters().values():
                p.requires_grad = False
            l_al = loss_adversarial(d, x)
        total = loss_generator_total(l_al, l_sl, l1, l1_bp, self.weights)
        for name in ("bp", "unet"):
            self.opt[name].zero_grad()
        total.backward()
        if d is not None:
            for p in d.parameters().values():
                p.requires_grad = True
        if g.bp is not None:
            self.opt["bp"].step()
        self.opt["unet"].step()
        out.update(l1=l1.item(), l_sl=l_sl.item(), l_g=total.item())
        if l1_bp is not None:
            out["l1_bp"] = l1_bp.item()
        if l_al is not None:
            out["l_al"] = l_al.item()
        return out

    # -- evaluation ----------------------------------------------------------
    def predict(self, s: Samples, batch_size: int = 16) -> tuple[np.ndarray, np.ndarray | None]:
        xs, bps = [], []
        with T.no_grad():
            for lo in range(0, len(s), batch_size):
                b = s.subset(slice(lo, lo + batch_size))
                q, f, _ = self._inputs(b)
                x, x_bp = self.generator(q, f, b.dense_angles)
                xs.append(x.data)
                if x_bp is not None:
                    bps.append(x_bp.data)
        return np.concatenate(xs), (np.concatenate(bps) if bps else None)

    def validate(self) -> dict:
        if self.val_set is None or len(self.val_set) == 0:
            return {}
        x, x_bp = self.predict(self.val_set)
        gt = self.val_set.gt
        rec = {
            "val_psnr": float(np.mean([metrics.psnr(a, b) for a, b in zip(x, gt)])),
            "val_ssim": float(np.mean([metrics.ssim(a, b) for a, b in zip(x, gt)])),
            "val_mae": float(np.mean([metrics.mae(a, b) for a, b in zip(x, gt)])),
        }
        if x_bp is not None:
            rec["val_bp_mae"] = float(np.mean([metrics.mae(a, b) for a, b in zip(x_bp, gt)]))
        return rec

    # -- loop ----------------------------------------------------------------
    def run_epoch(self, epoch: int) -> dict:
        phase = self.phase_of(epoch)
        if phase == PRETRAIN:
            size, step = self.cfg.batch_pretrain, self.pretrain_step
            lrs = {"lr_bp": self.opt["bp_pre"].lr}
        else:
            size, step = self.cfg.batch_joint, self.joint_step
            lrs = {"lr_bp": self.opt["bp"].lr if self.generator.bp is not None else None,
                   "lr_base": self.opt["unet"].lr}
            if self.discriminator is not None:
                lrs["lr_disc"] = self.opt["disc"].lr
        sums: dict[str, float] = {}
        steps = 0
        for b in self._batches(epoch, size):
            for k, v in step(b).items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        rec = {"epoch": epoch, "phase": phase, "batch_size": size, "steps": steps, **lrs}
        rec.update({k: v / steps for k, v in sums.items()})
        rec.update(self.validate())
        self.state.epoch = epoch
        self.state.phase = phase
        self.state.history.append(rec)
        return rec

    def fit(self, until_epoch: int | None = None, checkpoint_every: bool = True) -> list[dict]:
        """Train from the next epoch up to ``until_epoch`` (exclusive; default: the end)."""
        stop = self.total_epochs if until_epoch is None else min(until_epoch, self.total_epochs)
        for epoch in range(self.state.epoch + 1, stop):
            rec = self.run_epoch(epoch)
            log.info("epoch %d %s %s", epoch, rec["phase"],
                     " ".join(f"{k}={v:.4g}" for k, v in rec.items() if isinstance(v, float)))
            if self.out_dir is not None:
                self.out_dir.mkdir(parents=True, exist_ok=True)
                with open(self.out_dir / "metrics.jsonl", "a") as fh:
                    fh.write(json.dumps(rec) + "\n")
                if checkpoint_every:
                    self.save(self.out_dir / f"checkpoint_{epoch:04d}.ckpt")
        if self.out_dir is not None:
            self.save(self.out_dir / "final.ckpt")
        return self.state.history

    # -- persistence ---------------------------------------------------------
    def arrays(self) -> dict[str, np.ndarray]:
        arrays = {f"g.{k}": p.data for k, p in self.generator.parameters().items()}
        if self.discriminator is not None:
            arrays.update({f"d.{k}": p.data for k, p in self.discriminator.parameters().items()})
        for name, opt in self.opt.items():
            for k in opt.params:
                arrays[f"opt.{name}.m.{k}"] = opt.m[k]
                arrays[f"opt.{name}.v.{k}"] = opt.v[k]
        return arrays

    def save(self, path) -> None:
        meta = {
            "kind": "deer-checkpoint",
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.hash(),
            "variant": self.cfg.variant,
            "geometry": self.cfg.geometry(),
            "epoch": self.state.epoch,
            "phase": self.state.phase,
            "seed": self.state.seed,
            "optimizers": {k: {"t": o.t, "lr": o.lr} for k, o in self.opt.items()},
            "history": self.state.history,
        }
        save_checkpoint(path, self.arrays(), meta)

    @classmethod
    def from_checkpoint(cls, path, train_set: Samples | None = None, val_set: Samples | None = None,
                        out_dir: Path | None = None) -> "Trainer":
        arrays, meta = load_checkpoint(path)
        cfg = ExperimentConfig.from_dict(meta["config"])
        if cfg.hash() != meta["config_hash"]:
            raise ValueError(f"{path}: config hash mismatch ({cfg.hash()} != {meta['config_hash']})")
        self = cls(cfg, train_set if train_set is not None else _empty_samples(cfg), val_set, out_dir)
        if train_set is None:
            self.train_set = None
        own = self.arrays()
        missing = sorted(set(own) - set(arrays))
        if missing:
            raise ValueError(f"{path}: checkpoint lacks {missing[:3]}{'...' if len(missing) > 3 else ''}")
        for k, dst in own.items():
            src = arrays[k]
            if src.shape != dst.shape:
                raise ValueError(f"{path}: {k} has shape {src.shape}, model expects {dst.shape}")
            dst[...] = src
        for k, o in self.opt.items():
            o.t = meta["optimizers"][k]["t"]
        self.state = TrainState(meta["epoch"], meta["phase"], meta["seed"], list(meta["history"]))
        return self


def _empty_samples(cfg: ExperimentConfig) -> Samples:
    z = np.zeros((1, cfg.n, cfg.n), np.float32)
    q = np.zeros((1, cfg.nv_dense, cfg.n_det), np.float32)
    from .geometry import equispaced_angles

    return Samples(z, np.zeros((1, cfg.nv_few, cfg.n_det), np.float32), z, q, np.zeros(1, int),
                   equispaced_angles(cfg.nv_few), equispaced_angles(cfg.nv_dense))


def train(cfg: ExperimentConfig, train_set: Samples, val_set: Samples | None = None,
          out_dir: Path | None = None) -> Trainer:
    trainer = Trainer(cfg, train_set, val_set, out_dir)
    trainer.fit()
    return trainer
