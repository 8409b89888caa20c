"""Adversarial training, synthesis, detector training and the two-fold protocol."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .core_data import Dataset, PairedStudy, PetImage, file_sha256, load_dataset, save_dataset, split_two_fold
from .detection import DetectionReport, EvalConfig, evaluate_detector
from .errors import ConfigError, ContractError, NumericalError, PreconditionError
from .losses import LossConfig, mgan_d_loss, mgan_g_loss
from .metrics import QualityReport, quality_report
from .networks import (MODES, ChannelConfig, CheckpointMeta, build_detector, build_discriminator,
                       build_generator, from_net, generator_forward, save_checkpoint, to_net)

log = logging.getLogger(__name__)

ARMS = ("LB", "CT", "M", "REAL")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 1
    learning_rate: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    seed: int = 0
    channel_mode: str = "M"
    d_steps_per_g_step: int = 1
    base_width: int = 32

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.d_steps_per_g_step < 1:
            raise ConfigError("d_steps_per_g_step must be >= 1")
        if self.channel_mode not in MODES:
            raise ConfigError(f"channel_mode must be one of {MODES}")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("betas must be two values in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    d_loss: float
    g_adv: float
    g_l1: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    d_updates: int = 0
    g_updates: int = 0

    def losses(self) -> list[tuple[int, float, float, float]]:
        """Loss columns only; wall time is excluded so runs can be compared."""
        return [(r.epoch, r.d_loss, r.g_adv, r.g_l1) for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "d_loss", "g_adv", "g_l1", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.d_loss), repr(r.g_adv), repr(r.g_l1),
                            f"{r.seconds:.3f}"])


def _image_size(studies: Sequence[PairedStudy]) -> int:
    shapes = {s.pet.shape for s in studies}
    if len(shapes) != 1:
        raise ContractError(f"studies have mixed sizes: {sorted(shapes)}")
    (h, w), = shapes
    if h != w:
        raise ContractError(f"square images required, got {h}x{w}")
    return h


def _check_finite(values, epoch, batch):
    for name, v in values.items():
        if not math.isfinite(v):
            raise NumericalError(f"non-finite {name} ({v}) at epoch {epoch}, batch {batch}")


def train_gan(train_set, cfg: TrainConfig = TrainConfig(), loss_cfg: LossConfig = LossConfig()):
    """Alternate discriminator and generator updates; returns ``(G, D, TrainLog)``."""
    studies = list(train_set)
    if not studies:
        raise PreconditionError("training set is empty")
    size = _image_size(studies)
    mode = ChannelConfig(cfg.channel_mode)
    torch.manual_seed(cfg.seed)
    G = build_generator(mode.mode, size, cfg.seed, cfg.base_width)
    D = build_discriminator(mode.mode, size, cfg.seed + 1, cfg.base_width)
    cond = torch.from_numpy(np.stack([mode.condition(s) for s in studies]))
    target = torch.from_numpy(to_net(np.stack([s.pet.values for s in studies]))[:, None]
                              .astype(np.float32))
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.learning_rate, betas=cfg.betas)
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.learning_rate, betas=cfg.betas)
    rng = np.random.default_rng(cfg.seed)
    tlog = TrainLog()
    G.train()
    D.train()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(studies))
        sums = np.zeros(3)
        n_batches = 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = torch.from_numpy(order[start:start + cfg.batch_size])
            c, t = cond[idx], target[idx]
            fake = generator_forward(G, c)
            for _ in range(cfg.d_steps_per_g_step):
                d_loss = mgan_d_loss(D, c, t, fake)
                opt_d.zero_grad(set_to_none=True)
                d_loss.backward()
                opt_d.step()
                tlog.d_updates += 1
            total, adv, l1 = mgan_g_loss(D, c, fake, t, loss_cfg)
            opt_g.zero_grad(set_to_none=True)
            total.backward()
            opt_g.step()
            tlog.g_updates += 1
            vals = {"d_loss": d_loss.item(), "g_adv": adv.item(), "g_l1": l1.item()}
            _check_finite(vals, epoch, b)
            sums += [vals["d_loss"], vals["g_adv"], vals["g_l1"]]
            n_batches += 1
        means = sums / n_batches
        tlog.records.append(EpochRecord(epoch, float(means[0]), float(means[1]), float(means[2]),
                                        time.perf_counter() - t0))
        log.debug("epoch %d d=%.4f adv=%.4f l1=%.4f", epoch, *means)
    G.eval()
    D.eval()
    G.mode = mode.mode
    return G, D, tlog


@torch.no_grad()
def synthesize_studies(G, mode: str, studies) -> list[PairedStudy]:
    """Single-pass inference (dropout off); each result keeps its input label and CT."""
    mode = ChannelConfig(mode)
    g_mode = getattr(G, "mode", None)
    if g_mode is not None and g_mode != mode.mode:
        raise ContractError(f"generator was trained for mode {g_mode}, not {mode.mode}")
    if G.in_channels != mode.in_channels:
        raise ContractError(f"generator takes {G.in_channels} channels; mode {mode.mode} "
                            f"supplies {mode.in_channels}")
    G.eval()
    out = []
    for s in studies:
        c = torch.from_numpy(mode.condition(s)[None])
        y = generator_forward(G, c)[0, 0].double().numpy()
        pet = PetImage(np.clip(from_net(y), 0.0, 1.0), suv_scale=s.pet.suv_scale)
        out.append(PairedStudy(s.patient_id, s.slice_index, s.label, s.ct, pet))
    return out


def synthesize(G, mode: str, studies, out_dir) -> Path:
    """Write synthetic PET for every study; returns the new manifest path."""
    return save_dataset(synthesize_studies(G, mode, studies), out_dir)


def train_detector(train_pairs, cfg: TrainConfig) -> torch.nn.Module:
    """Fit the FCN detector with per-pixel binary cross-entropy.

    ``train_pairs`` holds ``(pet, label)`` tuples or studies.
    """
    items = list(train_pairs)
    if not items:
        raise PreconditionError("detector training set is empty")
    if hasattr(items[0], "pet"):
        items = [(s.pet, s.label) for s in items]
    pets = np.stack([np.asarray(getattr(p, "values", p)) for p, _ in items])
    labels = np.stack([np.asarray(getattr(l, "values", l)) for _, l in items])
    x = torch.from_numpy(to_net(pets)[:, None].astype(np.float32))
    y = torch.from_numpy(labels[:, None].astype(np.float32))
    torch.manual_seed(cfg.seed)
    F_ = build_detector(cfg.seed)
    opt = torch.optim.Adam(F_.parameters(), lr=cfg.learning_rate, betas=cfg.betas)
    rng = np.random.default_rng(cfg.seed)
    F_.train()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(items))
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = torch.from_numpy(order[start:start + cfg.batch_size])
            loss = F.binary_cross_entropy_with_logits(F_(x[idx]), y[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            _check_finite({"detector_loss": loss.item()}, epoch, b)
    F_.eval()
    return F_


# --- two-fold protocol ---------------------------------------------------------

@dataclass(frozen=True)
class ProtocolConfig:
    gan: TrainConfig = TrainConfig()
    detector: TrainConfig = TrainConfig(epochs=40, batch_size=4, learning_rate=1e-3,
                                        betas=(0.9, 0.999))
    loss: LossConfig = LossConfig()
    eval: EvalConfig = EvalConfig()
    arms: tuple[str, ...] = ARMS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        bad = [a for a in self.arms if a not in ARMS]
        if bad or not self.arms:
            raise ConfigError(f"arms must be a non-empty subset of {ARMS}, got {list(self.arms)}")


def _ckpt_record(path: Path, root: Path) -> dict:
    return {"path": path.relative_to(root).as_posix(), "sha256": file_sha256(path)}


def run_two_fold_protocol(ds: Dataset, cfg: ProtocolConfig, out_dir) -> dict:
    """Two-fold experiment with role reversal.

    For each direction (X -> Y): train a GAN on fold X, synthesise fold Y, train
    a detector on fold Y's synthetic PET with fold Y's labels, test it on fold
    X's real PET. The REAL arm trains its detector on fold Y's real PET.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fold_a, fold_b = split_two_fold(ds, cfg.seed)
    folds = {"A": fold_a, "B": fold_b}
    directions = [("A", "B"), ("B", "A")]
    gan_arms = [a for a in cfg.arms if a != "REAL"]

    quality = {a: QualityReport() for a in gan_arms}
    detect = {a: [] for a in cfg.arms}
    provenance = []
    per_direction = []
    synth_manifests = {}

    for d_index, (src, dst) in enumerate(directions):
        name = f"{src}to{dst}"
        ddir = out_dir / name
        train_fold, other = folds[src], folds[dst]
        entry = {"name": name, "gan_train_fold": src, "synth_fold": dst,
                 "detector_train_fold": dst, "detector_test_fold": src, "arms": {}}
        seed = cfg.seed * 1000 + d_index * 100
        for a_index, arm in enumerate(cfg.arms):
            arm_seed = seed + a_index * 10
            arm_entry = {}
            if arm == "REAL":
                det_train = list(other)
            else:
                gcfg = replace(cfg.gan, channel_mode=arm, seed=arm_seed)
                log.info("[%s] training %s-GAN on %d studies", name, arm, len(train_fold))
                G, D, tlog = train_gan(train_fold, gcfg, cfg.loss)
                gdir = ddir / f"gan_{arm}"
                meta = CheckpointMeta(G.arch(), arm, arm_seed, gcfg.epochs)
                g_file = save_checkpoint(G, gdir / "generator", meta)
                d_file = save_checkpoint(D, gdir / "discriminator",
                                         CheckpointMeta(D.arch(), arm, arm_seed + 1, gcfg.epochs))
                tlog.to_csv(gdir / "train_log.csv")
                sdir = ddir / f"synth_{arm}"
                manifest = synthesize(G, arm, other, sdir)
                synth_manifests[(name, arm)] = manifest
                synth = load_dataset(manifest)
                q = quality_report(synth, other)
                quality[arm] = quality[arm].extend(q)
                arm_entry["quality"] = {"mae": q.mean_mae, "psnr": q.to_dict()["psnr"],
                                        "count": q.count}
                arm_entry["final_epoch"] = asdict(tlog.records[-1]) | {"seconds": None}
                provenance.append({
                    "model": f"{name}/gan_{arm}", "kind": "gan", "arm": arm,
                    "train_patients": train_fold.patient_ids,
                    "eval_patients": other.patient_ids,
                    "checkpoints": [_ckpt_record(g_file, out_dir), _ckpt_record(d_file, out_dir)],
                })
                det_train = list(synth)
            dcfg = replace(cfg.detector, seed=arm_seed + 5)
            F_ = train_detector(det_train, dcfg)
            f_file = save_checkpoint(F_, ddir / f"detector_{arm}" / "detector",
                                     CheckpointMeta(F_.arch(), None, dcfg.seed, dcfg.epochs,
                                                    {"arm": arm}))
            rep = evaluate_detector(F_, train_fold, cfg=cfg.eval)
            detect[arm].append(rep)
            arm_entry["detection"] = rep.summary()
            provenance.append({
                "model": f"{name}/detector_{arm}", "kind": "detector", "arm": arm,
                "train_patients": other.patient_ids,
                "eval_patients": train_fold.patient_ids,
                "upstream_patients": [] if arm == "REAL" else train_fold.patient_ids,
                "checkpoints": [_ckpt_record(f_file, out_dir)],
            })
            entry["arms"][arm] = arm_entry
        per_direction.append(entry)

    table1 = {a: quality[a] for a in gan_arms}
    table2 = {a: DetectionReport.merge(detect[a]) for a in cfg.arms}
    report = {
        "seed": cfg.seed,
        "folds": {k: v.patient_ids for k, v in folds.items()},
        "directions": per_direction,
        "table1": {a: {k: v for k, v in r.to_dict().items() if k != "per_image"}
                   for a, r in table1.items()},
        "table2": {a: r.summary() for a, r in table2.items()},
        "provenance": provenance,
    }
    report["leakage_audit"] = audit_leakage(report)
    report["_objects"] = {"quality": table1, "detection": table2,
                          "synth_manifests": synth_manifests}
    return report


def audit_leakage(report: dict) -> dict:
    """Check that every model's training patients are disjoint from its test patients."""
    violations = []
    for rec in report["provenance"]:
        overlap = sorted(set(rec["train_patients"]) & set(rec["eval_patients"]))
        if overlap:
            violations.append({"model": rec["model"], "patients": overlap})
    return {"checked": len(report["provenance"]), "violations": violations,
            "ok": not violations}


def public_report(report: dict) -> dict:
    return {k: v for k, v in report.items() if not k.startswith("_")}


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(public_report(report), indent=1, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path
