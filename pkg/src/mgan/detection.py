"""Tumor instances, overlap matching and precision/recall/f-score."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import torch

from . import _kernels
from .errors import ConfigError, PreconditionError
from .networks import detector_forward, to_net

DENOMINATORS = ("union", "truth")


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    min_area: int = 2
    overlap_threshold: float = 0.5
    denominator: str = "union"

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.min_area < 1:
            raise ConfigError("min_area must be >= 1")
        if self.denominator not in DENOMINATORS:
            raise ConfigError(f"overlap denominator must be one of {DENOMINATORS}")


@dataclass(eq=False)
class TumorInstance:
    rows: np.ndarray
    cols: np.ndarray

    @property
    def area(self) -> int:
        return int(self.rows.size)

    @property
    def centroid(self) -> tuple[float, float]:
        return float(self.rows.mean()), float(self.cols.mean())

    def pixel_set(self) -> set[tuple[int, int]]:
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    def _codes(self) -> np.ndarray:
        return self.rows.astype(np.int64) * (1 << 32) + self.cols.astype(np.int64)


class MatchResult(NamedTuple):
    tp: int
    fp: int
    fn: int
    matches: list[tuple[int, int, float]]


def extract_instances(mask, min_area: int = 2) -> list[TumorInstance]:
    """8-connected components of a binary mask, ordered by first raster pixel."""
    mask = np.asarray(getattr(mask, "values", mask))
    labels, n = _kernels.label8((mask != 0).astype(np.uint8))
    return _instances_from_labels(labels, n, min_area)


def _instances_from_labels(labels, n, min_area):
    if n == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n + 1)
    bounds = np.cumsum(counts)
    width = labels.shape[1]
    out = []
    for k in range(1, n + 1):
        if counts[k] < min_area:
            continue
        idx = order[bounds[k - 1]:bounds[k]]
        out.append(TumorInstance(idx // width, idx % width))
    return out


def overlap_matrix(detected: Sequence[TumorInstance], truth: Sequence[TumorInstance],
                   denominator: str = "union") -> np.ndarray:
    """``M[i, j]`` = overlap ratio of detection i with truth j."""
    if denominator not in DENOMINATORS:
        raise ConfigError(f"overlap denominator must be one of {DENOMINATORS}")
    m = np.zeros((len(detected), len(truth)))
    tcodes = [t._codes() for t in truth]
    for i, d in enumerate(detected):
        dcodes = d._codes()
        for j, t in enumerate(truth):
            inter = np.intersect1d(dcodes, tcodes[j], assume_unique=True).size
            if inter:
                denom = d.area + t.area - inter if denominator == "union" else t.area
                m[i, j] = inter / denom
    return m


def match_overlaps(ratios: np.ndarray, overlap_threshold: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching in descending ratio order.

    Only pairs with ratio strictly above ``overlap_threshold`` can match; every
    matched pair is a true positive, leftover detections are false positives
    and leftover truths false negatives.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.ndim != 2:
        raise ValueError(f"ratio matrix must be 2D, got shape {ratios.shape}")
    n_det, n_truth = ratios.shape
    pairs = [(-ratios[i, j], i, j) for i in range(n_det) for j in range(n_truth)
             if ratios[i, j] > overlap_threshold]
    pairs.sort()
    used_d, used_t, matches = set(), set(), []
    for neg, i, j in pairs:
        if i in used_d or j in used_t:
            continue
        used_d.add(i)
        used_t.add(j)
        matches.append((i, j, -neg))
    tp = len(matches)
    return MatchResult(tp, n_det - tp, n_truth - tp, matches)


def match_instances(detected, truth, denominator: str = "union",
                    overlap_threshold: float = 0.5) -> MatchResult:
    return match_overlaps(overlap_matrix(detected, truth, denominator), overlap_threshold)


def f_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 2 * precision * recall / s if s > 0 else 0.0


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and f-score in percent; 0 where undefined."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    p = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    r = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    return p, r, f_score(p, r)


@dataclass
class DetectionReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    per_image: list[dict] = field(default_factory=list)

    @property
    def precision(self) -> float:
        return prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return prf(self.tp, self.fp, self.fn)[1]

    @property
    def f_score(self) -> float:
        return prf(self.tp, self.fp, self.fn)[2]

    def add(self, key, result: MatchResult) -> None:
        self.tp += result.tp
        self.fp += result.fp
        self.fn += result.fn
        self.per_image.append({
            "key": list(key) if isinstance(key, tuple) else key,
            "tp": result.tp, "fp": result.fp, "fn": result.fn,
            "matches": [[i, j, round(r, 12)] for i, j, r in result.matches],
        })

    @classmethod
    def merge(cls, reports: Sequence["DetectionReport"]) -> "DetectionReport":
        out = cls()
        for r in reports:
            out.tp += r.tp
            out.fp += r.fp
            out.fn += r.fn
            out.per_image.extend(r.per_image)
        return out

    def summary(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall,
                "f_score": self.f_score}

    def to_dict(self) -> dict:
        return {**self.summary(), "per_image": self.per_image}


def evaluate_maps(prob_maps, truths, cfg: EvalConfig = EvalConfig(), keys=None) -> DetectionReport:
    """Score probability maps against binary ground-truth masks."""
    if len(prob_maps) == 0:
        raise PreconditionError("empty test set")
    keys = list(range(len(prob_maps))) if keys is None else keys
    report = DetectionReport()
    for key, prob, truth in zip(keys, prob_maps, truths):
        prob = np.asarray(prob)
        truth = np.asarray(getattr(truth, "values", truth))
        det_lab, nd = _kernels.label8((prob >= cfg.threshold).astype(np.uint8))
        tru_lab, nt = _kernels.label8((truth != 0).astype(np.uint8))
        table = _kernels.overlap_counts(det_lab, nd, tru_lab, nt)
        areas_d = table.sum(axis=1)[1:]
        areas_t = table.sum(axis=0)[1:]
        keep = np.flatnonzero(areas_d >= cfg.min_area)  # ground truth is never filtered
        inter = table[1:, 1:][keep].astype(np.float64)
        if cfg.denominator == "union":
            denom = areas_d[keep][:, None] + areas_t[None, :] - inter
        else:
            denom = np.broadcast_to(areas_t[None, :], inter.shape).astype(np.float64)
        ratios = np.divide(inter, denom, out=np.zeros_like(inter), where=inter > 0)
        report.add(key, match_overlaps(ratios, cfg.overlap_threshold))
    return report


@torch.no_grad()
def predict_maps(F, pets, batch_size: int = 16) -> list[np.ndarray]:
    F.eval()
    arr = np.stack([np.asarray(getattr(p, "values", p)) for p in pets])
    x = torch.from_numpy(to_net(arr)[:, None].astype(np.float32))
    out = []
    for i in range(0, len(x), batch_size):
        out.append(detector_forward(F, x[i:i + batch_size])[:, 0].double().numpy())
    return list(np.concatenate(out)) if out else []


def evaluate_detector(F, test_set, threshold: float = 0.5, cfg: EvalConfig | None = None) -> DetectionReport:
    """Run the detector on ``(pet, label)`` pairs or studies and score it."""
    cfg = cfg or EvalConfig(threshold=threshold)
    items = list(test_set)
    if not items:
        raise PreconditionError("empty test set")
    if hasattr(items[0], "pet"):
        keys = [s.key for s in items]
        pairs = [(s.pet, s.label) for s in items]
    else:
        keys = list(range(len(items)))
        pairs = items
    maps = predict_maps(F, [p for p, _ in pairs])
    return evaluate_maps(maps, [l for _, l in pairs], cfg, keys)


def format_table2(reports: dict) -> str:
    """Plain-text precision/recall/f-score table, one row per arm."""
    lines = [f"{'Trained with':<14}{'Precision':>11}{'Recall':>9}{'F-score':>9}", "-" * 43]
    for name, rep in reports.items():
        lines.append(f"{name:<14}{rep.precision:>11.2f}{rep.recall:>9.2f}{rep.f_score:>9.2f}")
    return "\n".join(lines) + "\n"
