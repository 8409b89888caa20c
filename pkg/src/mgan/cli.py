"""Command-line entry point: ``mgan {phantom|train|synth|quality|detect|experiment}``.

Each subcommand writes into its own run directory and finishes by writing
``run.json``, a provenance record with the config hash, seeds, input
hashes, code version and runtime facts that affect numerics. A directory
holding a ``run.json`` is a completed run and is never overwritten unless
``--force`` is given.

Exit codes: 0 success, 2 config error, 3 input error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import __version__, _kernels
from .config import ExperimentConfig, default_config_path, load_config
from .core_data import Dataset, file_sha256, load_dataset, split_two_fold
from .detection import evaluate_detector, format_table2
from .errors import ConfigError, InputError, MganError, PreconditionError
from .figures import write_comparison
from .metrics import format_table1, quality_report
from .networks import CheckpointMeta, load_checkpoint, save_checkpoint
from .phantom import generate_corpus
from .trainer import (run_two_fold_protocol, synthesize, train_detector, train_gan,
                      write_report)

log = logging.getLogger("mgan")

RUN_RECORD = "run.json"


# --- run directories and provenance ---------------------------------------------

def dataset_sha256(manifest) -> str:
    """Digest of a manifest and every image it references, in manifest order."""
    manifest = Path(manifest)
    h = hashlib.sha256(manifest.read_bytes())
    doc = json.loads(manifest.read_text(encoding="utf-8"))
    for rec in doc.get("studies", []):
        for kind in ("label", "ct", "pet"):
            f = manifest.parent / rec[kind]
            if f.is_file():
                h.update(bytes.fromhex(file_sha256(f)))
    return h.hexdigest()


def prepare_run_dir(path: Path, force: bool) -> Path:
    path = Path(path)
    if (path / RUN_RECORD).exists():
        if not force:
            raise InputError(f"{path} already holds a completed run; "
                             "choose another --out or run id, or pass --force")
        shutil.rmtree(path)
    elif path.exists() and not path.is_dir():
        raise InputError(f"output path {path} exists and is not a directory")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _outputs(run_dir: Path) -> dict:
    out = {}
    for f in sorted(run_dir.rglob("*")):
        if f.is_file() and f.name != RUN_RECORD and f.suffix != ".csv":
            out[f.relative_to(run_dir).as_posix()] = file_sha256(f)
    return out


def write_run_record(run_dir: Path, command: str, cfg: ExperimentConfig, seeds: dict,
                     inputs: dict) -> Path:
    """Write ``run.json``; wall-clock data is deliberately left out."""
    record = {
        "command": command,
        "code_version": __version__,
        "config": cfg.to_dict(),
        "config_sha256": cfg.sha256(),
        "seeds": seeds,
        "inputs": {name: {"path": str(p), "sha256": dataset_sha256(p)
                          if str(p).endswith(".json") else file_sha256(p)}
                   for name, p in inputs.items()},
        "runtime": {
            "kernel_backend": _kernels.BACKEND,
            "torch": torch.__version__,
            "numpy": np.__version__,
            "threads": torch.get_num_threads(),
        },
        "outputs": _outputs(run_dir),
    }
    path = run_dir / RUN_RECORD
    path.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _existing(path, what: str) -> Path:
    if not path:
        raise InputError(f"no {what} given")
    path = Path(path)
    if not path.exists():
        raise InputError(f"{what} not found: {path}")
    return path


def _select_fold(ds: Dataset, fold: str, seed: int) -> Dataset:
    if fold == "all":
        return ds
    a, b = split_two_fold(ds, seed)
    return a if fold == "A" else b


# --- subcommands ------------------------------------------------------------------

def cmd_phantom(args, cfg: ExperimentConfig) -> Path:
    pcfg = cfg.phantom
    if args.size is not None:
        try:
            pcfg = replace(pcfg, image_size=args.size)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if args.seed is not None:
        pcfg = replace(pcfg, seed=args.seed)
    patients = args.patients if args.patients is not None else cfg.corpus.patients
    slices = args.slices if args.slices is not None else cfg.corpus.slices_per_patient
    if patients < 2 or slices < 1:
        raise ConfigError("--patients must be >= 2 and --slices >= 1")
    cfg = replace(cfg, phantom=pcfg,
                  corpus=replace(cfg.corpus, patients=patients, slices_per_patient=slices))
    run_dir = prepare_run_dir(_run_dir(args, cfg, "phantom"), args.force)
    manifest = generate_corpus(pcfg, patients, slices, run_dir)
    write_run_record(run_dir, "phantom", cfg, {"phantom": pcfg.seed}, {})
    print(manifest)
    return manifest


def cmd_train(args, cfg: ExperimentConfig) -> Path:
    data = _existing(args.data or cfg.paths.corpus, "training manifest (--data)")
    ds = load_dataset(data)
    train_set = _select_fold(ds, args.fold, cfg.seed)
    run_dir = prepare_run_dir(_run_dir(args, cfg, f"train_{args.arm}_{args.fold}"), args.force)
    gcfg = replace(cfg.train, channel_mode=args.arm, seed=cfg.seed)
    G, D, tlog = train_gan(train_set, gcfg, cfg.loss)
    ckpt = save_checkpoint(G, run_dir / "generator",
                           CheckpointMeta(G.arch(), args.arm, gcfg.seed, gcfg.epochs,
                                          {"train_patients": train_set.patient_ids}))
    save_checkpoint(D, run_dir / "discriminator",
                    CheckpointMeta(D.arch(), args.arm, gcfg.seed + 1, gcfg.epochs))
    tlog.to_csv(run_dir / "train_log.csv")
    write_run_record(run_dir, "train", cfg, {"gan": gcfg.seed, "split": cfg.seed},
                     {"data": data})
    print(ckpt)
    return ckpt


def cmd_synth(args, cfg: ExperimentConfig) -> Path:
    ckpt = _existing(args.checkpoint, "generator checkpoint (--checkpoint)")
    data = _existing(args.data or cfg.paths.corpus, "input manifest (--data)")
    G, meta = load_checkpoint(ckpt)
    if meta.arch.get("kind") != "generator":
        raise InputError(f"{ckpt} is a {meta.arch.get('kind')} checkpoint, not a generator")
    studies = _select_fold(load_dataset(data), args.fold, cfg.seed)
    run_dir = prepare_run_dir(_run_dir(args, cfg, f"synth_{meta.mode}_{args.fold}"), args.force)
    manifest = synthesize(G, meta.mode, studies, run_dir)
    write_run_record(run_dir, "synth", cfg, {"split": cfg.seed},
                     {"checkpoint": ckpt.with_suffix(".safetensors"), "data": data})
    print(manifest)
    return manifest


def cmd_quality(args, cfg: ExperimentConfig):
    synth = _existing(args.synth, "synthetic manifest (--synth)")
    real = _existing(args.real, "real manifest (--real)")
    synth_ds, real_ds = load_dataset(synth), load_dataset(real)
    # a full real corpus may be scored against a synthesized fold
    report = quality_report(synth_ds, real_ds.subset(synth_ds.patient_ids))
    run_dir = prepare_run_dir(_run_dir(args, cfg, "quality"), args.force)
    _write_json(run_dir / "quality.json", report.to_dict())
    table = format_table1({args.name: report})
    (run_dir / "table1.txt").write_text(table, encoding="utf-8")
    write_run_record(run_dir, "quality", cfg, {}, {"synth": synth, "real": real})
    print(table, end="")
    return report


def cmd_detect(args, cfg: ExperimentConfig):
    train_m = _existing(args.train, "detector training manifest (--train)")
    test_m = _existing(args.test, "detector test manifest (--test)")
    train_set, test_set = load_dataset(train_m), load_dataset(test_m)
    shared = sorted(set(train_set.patient_ids) & set(test_set.patient_ids))
    if shared:
        raise PreconditionError(f"train and test manifests share patients: {shared}")
    run_dir = prepare_run_dir(_run_dir(args, cfg, "detect"), args.force)
    dcfg = replace(cfg.detector, seed=cfg.seed)
    F_ = train_detector(list(train_set), dcfg)
    save_checkpoint(F_, run_dir / "detector",
                    CheckpointMeta(F_.arch(), None, dcfg.seed, dcfg.epochs,
                                   {"train_patients": train_set.patient_ids}))
    report = evaluate_detector(F_, list(test_set), cfg=cfg.eval)
    _write_json(run_dir / "detection.json", report.to_dict())
    table = format_table2({args.name: report})
    (run_dir / "table2.txt").write_text(table, encoding="utf-8")
    write_run_record(run_dir, "detect", cfg, {"detector": dcfg.seed},
                     {"train": train_m, "test": test_m})
    print(table, end="")
    return report


ROW_NAMES = {"LB": "LB-GAN", "CT": "CT-GAN", "M": "M-GAN", "REAL": "Real"}
FIGURE_COLUMNS = ("LB", "CT", "M")


def cmd_experiment(args, cfg: ExperimentConfig) -> dict:
    run_dir = prepare_run_dir(_run_dir(args, cfg, None), args.force)
    data = args.data or cfg.paths.corpus
    if data:
        manifest = _existing(data, "corpus manifest")
    else:
        manifest = generate_corpus(cfg.phantom, cfg.corpus.patients,
                                   cfg.corpus.slices_per_patient, run_dir / "corpus")
    ds = load_dataset(manifest)
    report = run_two_fold_protocol(ds, cfg.protocol(), run_dir)
    objs = report["_objects"]
    write_report(report, run_dir / "report.json")
    table1 = {ROW_NAMES[a]: r for a, r in objs["quality"].items()}
    table2 = {f"{ROW_NAMES[a]} PET": r for a, r in objs["detection"].items()}
    (run_dir / "table1.txt").write_text(format_table1(table1), encoding="utf-8")
    (run_dir / "table2.txt").write_text(format_table2(table2), encoding="utf-8")
    gan_arms = [a for a in FIGURE_COLUMNS if a in cfg.arms]
    if cfg.figure_rows and gan_arms:
        fig_dir = run_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        for entry in report["directions"]:
            real = [s for s in ds if s.patient_id in report["folds"][entry["synth_fold"]]]
            synth = {a: list(load_dataset(objs["synth_manifests"][(entry["name"], a)]))
                     for a in gan_arms}
            write_comparison(real, synth, fig_dir / f"{entry['name']}.png", cfg.figure_rows)
    seeds = {"protocol": cfg.seed}
    if not data:
        seeds["phantom"] = cfg.phantom.seed
    inputs = {"corpus": manifest} if data else {}
    write_run_record(run_dir, "experiment", cfg, seeds, inputs)
    print((run_dir / "table1.txt").read_text(encoding="utf-8"), end="")
    print((run_dir / "table2.txt").read_text(encoding="utf-8"), end="")
    if not report["leakage_audit"]["ok"]:
        raise PreconditionError(f"leakage audit failed: {report['leakage_audit']['violations']}")
    return report


COMMANDS = {
    "phantom": cmd_phantom, "train": cmd_train, "synth": cmd_synth,
    "quality": cmd_quality, "detect": cmd_detect, "experiment": cmd_experiment,
}


def _run_dir(args, cfg: ExperimentConfig, leaf: str | None) -> Path:
    if args.out:
        return Path(args.out)
    base = cfg.workspace() / cfg.paths.run_id
    return base / leaf if leaf else base


# --- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgan", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"mgan {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="TOML experiment config (default: the packaged desk.toml)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", type=Path, default=None,
                        help="run directory (default: $MGAN_WORKSPACE/<run_id>/...)")
    common.add_argument("--force", action="store_true",
                        help="replace an existing completed run directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="generate a phantom corpus")
    p.add_argument("--patients", type=int)
    p.add_argument("--slices", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("train", parents=[common], help="train one GAN arm on one fold")
    p.add_argument("--data", help="corpus manifest")
    p.add_argument("--arm", choices=["LB", "CT", "M"], default="M")
    p.add_argument("--fold", choices=["A", "B", "all"], default="A")

    p = sub.add_parser("synth", parents=[common], help="synthesize PET with a trained generator")
    p.add_argument("--checkpoint", required=True, help="generator checkpoint (.safetensors)")
    p.add_argument("--data", help="manifest supplying labels and CT")
    p.add_argument("--fold", choices=["A", "B", "all"], default="all")

    p = sub.add_parser("quality", parents=[common], help="MAE/PSNR of synthetic against real PET")
    p.add_argument("--synth", required=True)
    p.add_argument("--real", required=True)
    p.add_argument("--name", default="synthetic", help="row name in table1.txt")

    p = sub.add_parser("detect", parents=[common], help="train and evaluate a tumor detector")
    p.add_argument("--train", required=True, help="manifest the detector learns from")
    p.add_argument("--test", required=True, help="manifest of real PET to evaluate on")
    p.add_argument("--name", default="detector", help="row name in table2.txt")

    sub.add_parser("experiment", parents=[common],
                   help="run the full two-fold protocol").add_argument(
        "--data", help="existing corpus manifest (default: generate one)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config if args.config is not None else default_config_path())
    if args.seed is not None and args.command != "phantom":
        cfg = replace(cfg, seed=args.seed)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if cfg.threads:
            torch.set_num_threads(cfg.threads)
        COMMANDS[args.command](args, cfg)
    except MganError as exc:
        print(f"mgan {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
