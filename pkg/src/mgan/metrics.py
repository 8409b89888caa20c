"""MAE and PSNR between synthetic and real PET, on the 8-bit display scale."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_data import Dataset, load_dataset
from .errors import ContractError, ValidationError

DISPLAY_MAX = 255.0


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(a, "values", a), dtype=np.float64)
    b = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image dims differ: {a.shape} vs {b.shape}")
    return a, b


def mae(a, b) -> float:
    """Mean absolute difference of normalised images, in 0-255 units."""
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)) * DISPLAY_MAX)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 255; ``math.inf`` when identical."""
    a, b = _pair(a, b)
    mse = float(np.mean(((a - b) * DISPLAY_MAX) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DISPLAY_MAX ** 2 / mse)


@dataclass
class QualityReport:
    keys: list[tuple[str, int]] = field(default_factory=list)
    mae: list[float] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.keys)

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.mae)) if self.mae else math.nan

    @property
    def psnr_infinite_count(self) -> int:
        return sum(1 for p in self.psnr if math.isinf(p))

    @property
    def mean_psnr(self) -> float:
        """Mean over finite values; infinite when every pair was identical."""
        finite = [p for p in self.psnr if not math.isinf(p)]
        if finite:
            return float(np.mean(finite))
        return math.inf if self.psnr else math.nan

    def extend(self, other: "QualityReport") -> "QualityReport":
        return QualityReport(self.keys + other.keys, self.mae + other.mae,
                             self.psnr + other.psnr)

    def to_dict(self) -> dict:
        def num(x):
            return None if math.isinf(x) or math.isnan(x) else x

        return {
            "count": self.count,
            "mae": num(self.mean_mae),
            "psnr": num(self.mean_psnr),
            "psnr_infinite_count": self.psnr_infinite_count,
            "per_image": [
                {"patient_id": k[0], "slice_index": k[1], "mae": m, "psnr": num(p)}
                for k, m, p in zip(self.keys, self.mae, self.psnr)
            ],
        }


def _as_dataset(x) -> Dataset:
    return x if isinstance(x, Dataset) else load_dataset(Path(x))


def quality_report(synth, real) -> QualityReport:
    """Score each synthetic PET against the real PET with the same study key.

    ``synth`` and ``real`` are manifest paths or Datasets that must pair
    one-to-one on ``(patient_id, slice_index)``.
    """
    synth, real = _as_dataset(synth), _as_dataset(real)
    real_by_key = {s.key: s for s in real}
    synth_keys = {s.key for s in synth}
    for s in synth:
        if s.key not in real_by_key:
            raise ValidationError(f"synthetic study {s.key} has no real counterpart")
    for key in real_by_key:
        if key not in synth_keys:
            raise ValidationError(f"real study {key} has no synthetic counterpart")
    report = QualityReport()
    for s in synth:
        r = real_by_key[s.key]
        report.keys.append(s.key)
        report.mae.append(mae(s.pet, r.pet))
        report.psnr.append(psnr(s.pet, r.pet))
    return report


def format_table1(reports: dict[str, QualityReport]) -> str:
    """Plain-text MAE/PSNR table, one row per arm."""
    lines = [f"{'':<10}{'MAE':>9}{'PSNR':>9}", "-" * 28]
    for name, rep in reports.items():
        p = rep.mean_psnr
        ptxt = "inf" if math.isinf(p) else f"{p:.2f}"
        lines.append(f"{name:<10}{rep.mean_mae:>9.2f}{ptxt:>9}")
    return "\n".join(lines) + "\n"
