"""Procedural thorax phantoms: aligned label, CT and PET slices.

Each slice has a body ellipse containing two lung ellipses, a mediastinal band
between them and a vertebral disk. CT encodes anatomy only; tumors are not
visible on CT. PET is a piecewise-constant uptake map plus Gaussian hot spots
centred in a lung or the mediastinum, blurred, then corrupted with Gaussian
noise. The label is the 40%-of-local-peak connected threshold of the
noise-free PET.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels
from .core_data import CtImage, LabelMap, PairedStudy, PetImage, save_dataset
from .errors import ConfigError, GenerationError, PreconditionError

PEAK_FRACTION = 0.40

# PET uptake of each structure as a multiple of background_uptake
LUNG_UPTAKE = 0.30
BODY_UPTAKE = 0.65
MEDIASTINUM_UPTAKE = 0.85
# normalised CT intensities
CT_LEVELS = {"air": 0.0, "lung": 0.08, "body": 0.45, "mediastinum": 0.55, "spine": 0.90}
CT_NOISE_SIGMA = 0.01
MAX_ATTEMPTS = 50


@dataclass(frozen=True)
class PhantomConfig:
    image_size: int = 64
    tumors_per_slice_range: tuple[int, int] = (1, 4)
    tumor_radius_range: tuple[float, float] = (2.0, 6.0)
    pet_noise_sigma: float = 0.02
    pet_blur_sigma: float = 1.0
    background_uptake: float = 0.25
    tumor_uptake_range: tuple[float, float] = (0.6, 1.0)
    seed: int = 0
    peak_fraction: float = PEAK_FRACTION

    def __post_init__(self):
        object.__setattr__(self, "tumors_per_slice_range", tuple(self.tumors_per_slice_range))
        object.__setattr__(self, "tumor_radius_range", tuple(self.tumor_radius_range))
        object.__setattr__(self, "tumor_uptake_range", tuple(self.tumor_uptake_range))
        n = self.image_size
        if n < 8 or n & (n - 1):
            raise ConfigError(f"image_size must be a power of two >= 8, got {n}")
        for name in ("tumors_per_slice_range", "tumor_radius_range", "tumor_uptake_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")
        if self.tumors_per_slice_range[0] < 0:
            raise ConfigError("tumors_per_slice_range must be non-negative")
        if self.tumor_radius_range[0] <= 0:
            raise ConfigError("tumor radii must be positive")
        if self.pet_noise_sigma < 0 or self.pet_blur_sigma < 0:
            raise ConfigError("noise and blur sigmas must be >= 0")
        if not 0 < self.background_uptake < 1:
            raise ConfigError("background_uptake must lie in (0, 1)")
        lo, hi = self.tumor_uptake_range
        if not (self.background_uptake < lo and hi <= 1):
            raise ConfigError("tumor_uptake_range must lie in (background_uptake, 1]")
        if not 0 < self.peak_fraction < 1:
            raise ConfigError("peak_fraction must lie in (0, 1)")

    @property
    def hot_spot_floor(self) -> float:
        """Minimum peak value for a local maximum to seed a label component."""
        b = self.background_uptake
        return b + 0.8 * (self.tumor_uptake_range[0] - b)


@dataclass(frozen=True)
class Tumor:
    row: int
    col: int
    radius: float
    uptake: float
    region: str


@dataclass
class PhantomSlice:
    study: PairedStudy
    noise_free_pet: np.ndarray
    tumors: list[Tumor]
    masks: dict[str, np.ndarray] = field(repr=False)


# --- label derivation ------------------------------------------------------

def derive_label(pet, peak_fraction: float = PEAK_FRACTION, floor: float | None = None) -> LabelMap:
    """Connected thresholding at ``peak_fraction`` of each hot spot's own peak.

    Hot spots are seeded at local maxima (8-neighbourhood, ties allowed) whose
    value exceeds ``floor``. From each seed the 8-connected region of pixels
    ``>= peak_fraction * seed_value`` is grown; the label is the union.
    ``floor`` defaults to ``median + 0.25 * (max - median)``, so a constant
    image yields an empty label.
    """
    if not 0 < peak_fraction < 1:
        raise ValueError(f"peak_fraction must lie in (0, 1), got {peak_fraction}")
    values = np.asarray(getattr(pet, "values", pet), dtype=np.float64)
    if floor is None:
        med = float(np.median(values))
        floor = med + 0.25 * (float(values.max()) - med)
    seeds = _kernels.local_maxima(values, float(floor))
    rows, cols = np.nonzero(seeds)
    if rows.size == 0:
        return LabelMap(np.zeros_like(values))
    peaks = values[rows, cols]
    order = np.argsort(-peaks, kind="stable")
    rows, cols, peaks = rows[order], cols[order], peaks[order]
    grown = _kernels.grow_from_seeds(values, rows, cols, peak_fraction * peaks)
    return LabelMap(grown.astype(np.float64))


# --- anatomy -----------------------------------------------------------------

def _stream(seed: int, patient_id: str, *extra: int) -> np.random.Generator:
    key = (zlib.crc32(patient_id.encode("utf-8")),) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _ellipse(yy, xx, cy, cx, ay, ax):
    return ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0


def _anatomy(cfg: PhantomConfig, patient_id: str, slice_index: int) -> dict:
    n = cfg.image_size
    prng = _stream(cfg.seed, patient_id)
    srng = _stream(cfg.seed, patient_id, slice_index, 0)
    body_ax = n * prng.uniform(0.40, 0.46)
    body_ay = n * prng.uniform(0.30, 0.37)
    lung_w = prng.uniform(0.28, 0.34)
    lung_h = prng.uniform(0.62, 0.72)
    band = prng.uniform(0.12, 0.16)
    pet_gain = prng.uniform(0.92, 1.08)
    ct_shift = prng.uniform(-0.03, 0.03)
    suv_scale = prng.uniform(8.0, 12.0)
    # slice-to-slice variation along the axial direction
    scale = 1.0 + srng.uniform(-0.04, 0.04)
    cy = n / 2 + srng.uniform(-0.03, 0.03) * n
    cx = n / 2 + srng.uniform(-0.03, 0.03) * n
    body_ax *= scale
    body_ay *= scale

    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) + 0.5
    body = _ellipse(yy, xx, cy, cx, body_ay, body_ax)
    lung_cy = cy - 0.08 * body_ay
    lungs = (_ellipse(yy, xx, lung_cy, cx - 0.5 * body_ax, lung_h * body_ay, lung_w * body_ax)
             | _ellipse(yy, xx, lung_cy, cx + 0.5 * body_ax, lung_h * body_ay, lung_w * body_ax))
    mediastinum = ((np.abs(xx - cx) < band * body_ax)
                   & (np.abs(yy - lung_cy) < 0.6 * body_ay) & body & ~lungs)
    spine = _ellipse(yy, xx, cy + 0.68 * body_ay, cx, 0.12 * body_ay, 0.12 * body_ay) & body
    return {
        "body": body, "lungs": lungs & body, "mediastinum": mediastinum,
        "spine": spine, "pet_gain": pet_gain, "ct_shift": ct_shift,
        "suv_scale": suv_scale,
    }


def _render_ct(anat: dict, rng: np.random.Generator) -> np.ndarray:
    shift = anat["ct_shift"]
    ct = np.full(anat["body"].shape, CT_LEVELS["air"])
    ct[anat["body"]] = CT_LEVELS["body"] + shift
    ct[anat["lungs"]] = CT_LEVELS["lung"] + shift / 2
    ct[anat["mediastinum"]] = CT_LEVELS["mediastinum"] + shift
    ct[anat["spine"]] = CT_LEVELS["spine"] + shift
    ct = ndimage.gaussian_filter(ct, 0.5, mode="constant")
    ct = ct + rng.normal(0.0, CT_NOISE_SIGMA, ct.shape) * anat["body"]
    return np.clip(ct, 0.0, 1.0)


def _uptake_map(cfg: PhantomConfig, anat: dict) -> np.ndarray:
    b = cfg.background_uptake * anat["pet_gain"]
    pet = np.zeros(anat["body"].shape)
    pet[anat["body"]] = BODY_UPTAKE * b
    pet[anat["lungs"]] = LUNG_UPTAKE * b
    pet[anat["mediastinum"]] = MEDIASTINUM_UPTAKE * b
    return pet


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img.copy()
    return ndimage.gaussian_filter(img, sigma, mode="constant")


def _place_tumors(cfg, anat, rng) -> list[Tumor]:
    lo, hi = cfg.tumors_per_slice_range
    count = int(rng.integers(lo, hi + 1))
    dist = {name: ndimage.distance_transform_edt(anat[name])
            for name in ("lungs", "mediastinum")}
    tumors: list[Tumor] = []
    for _ in range(count):
        radius = float(rng.uniform(*cfg.tumor_radius_range))
        uptake = float(rng.uniform(*cfg.tumor_uptake_range))
        first = "lungs" if rng.random() < 0.75 else "mediastinum"
        placed = None
        for region in (first, "mediastinum" if first == "lungs" else "lungs"):
            ok = dist[region] >= radius
            for t in tumors:
                rr, cc = np.ogrid[0:ok.shape[0], 0:ok.shape[1]]
                ok &= (rr - t.row) ** 2 + (cc - t.col) ** 2 >= (1.5 * (radius + t.radius) + 2) ** 2
            cand = np.flatnonzero(ok)
            if cand.size:
                idx = int(cand[rng.integers(cand.size)])
                placed = Tumor(idx // ok.shape[1], idx % ok.shape[1], radius, uptake, region)
                break
        if placed is None:
            if not any((dist[r] >= radius).any() for r in dist):
                raise GenerationError(
                    f"tumor radius {radius:.2f}px exceeds lung and mediastinum extent")
            return None  # crowded; caller redraws the slice
        tumors.append(placed)
    return tumors


def _render_pet(cfg, anat, tumors) -> np.ndarray:
    """Noise-free PET before clipping. Each hot spot peaks at its uptake."""
    base = _blur(_uptake_map(cfg, anat), cfg.pet_blur_sigma)
    total = base.copy()
    n = cfg.image_size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    for t in tumors:
        sigma = t.radius / 2.0
        unit = np.exp(-((yy - t.row) ** 2 + (xx - t.col) ** 2) / (2 * sigma ** 2))
        unit_blurred = _blur(unit, cfg.pet_blur_sigma)
        peak = unit_blurred[t.row, t.col]
        amp = max(t.uptake - base[t.row, t.col], 0.0) / peak
        total += amp * unit_blurred
    return total


def simulate_slice(cfg: PhantomConfig, patient_id: str, slice_index: int) -> PhantomSlice:
    """Generate one slice together with its ground-truth tumor list and masks."""
    anat = _anatomy(cfg, patient_id, slice_index)
    rng = _stream(cfg.seed, patient_id, slice_index, 1)
    floor = cfg.hot_spot_floor
    for _ in range(MAX_ATTEMPTS):
        tumors = _place_tumors(cfg, anat, rng)
        if tumors is None:
            continue
        clean = _render_pet(cfg, anat, tumors)
        clean_clipped = np.clip(clean, 0.0, 1.0)
        label = derive_label(clean_clipped, cfg.peak_fraction, floor)
        labels, ncomp = _kernels.label8(label.values.astype(np.uint8))
        hit = {int(labels[t.row, t.col]) for t in tumors}
        if ncomp != len(tumors) or 0 in hit or len(hit) != len(tumors):
            continue
        if (label.values.astype(bool) & ~anat["body"]).any():
            continue
        noisy = clean + rng.normal(0.0, cfg.pet_noise_sigma, clean.shape)
        pet = PetImage(np.clip(noisy, 0.0, 1.0), suv_scale=float(anat["suv_scale"]))
        ct = CtImage(_render_ct(anat, rng), raw_range=(-1000.0, 1000.0))
        study = PairedStudy(patient_id, int(slice_index), label, ct, pet)
        masks = {k: anat[k] for k in ("body", "lungs", "mediastinum", "spine")}
        return PhantomSlice(study, clean_clipped, tumors, masks)
    raise GenerationError(
        f"could not place {cfg.tumors_per_slice_range} separable tumors for "
        f"({patient_id}, {slice_index}) after {MAX_ATTEMPTS} attempts")


def generate_study(cfg: PhantomConfig, patient_id: str, slice_index: int) -> PairedStudy:
    return simulate_slice(cfg, patient_id, slice_index).study


def patient_ids(n_patients: int) -> list[str]:
    return [f"p{i:03d}" for i in range(n_patients)]


def generate_corpus(cfg: PhantomConfig, n_patients: int, slices_per_patient: int, out_dir) -> Path:
    """Write ``n_patients * slices_per_patient`` studies and return the manifest path."""
    if n_patients < 2:
        raise PreconditionError(f"need >= 2 patients for a two-fold split, got {n_patients}")
    if slices_per_patient < 1:
        raise PreconditionError("slices_per_patient must be >= 1")
    studies = [generate_study(cfg, pid, k)
               for pid in patient_ids(n_patients) for k in range(slices_per_patient)]
    return save_dataset(studies, out_dir)


def with_seed(cfg: PhantomConfig, seed: int) -> PhantomConfig:
    return replace(cfg, seed=seed)
