import math

import numpy as np
import pytest

from mgan.core_data import CtImage, Dataset, LabelMap, PairedStudy, PetImage, save_dataset
from mgan.errors import ContractError, ValidationError
from mgan.metrics import QualityReport, format_table1, mae, psnr, quality_report


def pet_study(pid, k, values):
    n = values.shape[0]
    return PairedStudy(pid, k, LabelMap(np.zeros((n, n))), CtImage(np.zeros((n, n))),
                       PetImage(values))


def test_mae_hand_values():
    a = np.zeros((2, 2))
    assert mae(a, a + 1 / 255) == pytest.approx(1.0, abs=1e-12)
    assert mae(a, a) == 0.0


def test_psnr_mse_four():
    a = np.zeros((8, 8))
    b = a + 2 / 255  # difference of 2 gray levels, MSE = 4
    assert psnr(a, b) == pytest.approx(10 * math.log10(65025 / 4), abs=1e-9)
    assert psnr(a, b) == pytest.approx(42.11, abs=0.01)
    assert psnr(a, a) == math.inf


def test_symmetry_and_dim_check(rng):
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert mae(a, b) == mae(b, a) and psnr(a, b) == psnr(b, a)
    with pytest.raises(ContractError):
        mae(a, np.zeros((8, 8)))
    with pytest.raises(ContractError):
        psnr(PetImage(np.zeros((8, 8))), PetImage(np.zeros((16, 16))))


def test_psnr_decreases_along_error_ladder(rng):
    a = rng.random((16, 16)) * 0.5
    noise = rng.standard_normal((16, 16))
    vals = [psnr(a, a + s * noise) for s in (0.001, 0.01, 0.05, 0.1)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_psnr_ranking_invariant_under_common_scaling(rng):
    pairs = [(rng.random((8, 8)), rng.random((8, 8))) for _ in range(20)]
    base = [psnr(a, b) for a, b in pairs]
    scaled = [psnr(0.5 * a, 0.5 * b) for a, b in pairs]
    assert np.argsort(base).tolist() == np.argsort(scaled).tolist()


def test_report_identical_pairs(tmp_path):
    studies = [pet_study("p0", k, np.full((8, 8), 0.1 * k)) for k in range(3)]
    m = save_dataset(studies, tmp_path / "a")
    rep = quality_report(m, m)
    assert rep.count == 3 and rep.mean_mae == 0.0
    assert rep.psnr_infinite_count == 3 and rep.mean_psnr == math.inf
    assert rep.to_dict()["psnr"] is None


def test_report_mean_matches_per_image(rng):
    real = Dataset([pet_study("p0", k, rng.random((16, 16))) for k in range(5)])
    synth_studies = [pet_study("p0", k, np.clip(s.pet.values + rng.normal(0, 0.05, (16, 16)), 0, 1))
                     for k, s in enumerate(real)]
    synth_studies[2] = real[2]  # one identical pair, excluded from the PSNR mean
    rep = quality_report(Dataset(synth_studies), real)
    assert abs(rep.mean_mae - sum(rep.mae) / 5) <= 1e-12
    finite = [p for p in rep.psnr if math.isfinite(p)]
    assert rep.psnr_infinite_count == 1 and len(finite) == 4
    assert abs(rep.mean_psnr - sum(finite) / 4) <= 1e-12


def test_report_unpaired_named():
    real = Dataset([pet_study("p0", 0, np.zeros((8, 8))), pet_study("p0", 1, np.zeros((8, 8)))])
    synth = Dataset([pet_study("p0", 0, np.zeros((8, 8))), pet_study("p9", 0, np.zeros((8, 8)))])
    with pytest.raises(ValidationError, match="p9"):
        quality_report(synth, real)
    with pytest.raises(ValidationError, match="'p0', 1"):
        quality_report(Dataset(synth.studies[:1]), real)


def test_table1_layout():
    rep = QualityReport([("p", 0)], [4.6], [28.06])
    text = format_table1({"M-GAN": rep, "LB-GAN": QualityReport([("p", 0)], [7.98], [math.inf])})
    lines = text.splitlines()
    assert "MAE" in lines[0] and "PSNR" in lines[0]
    assert lines[2].split() == ["M-GAN", "4.60", "28.06"]
    assert lines[3].split() == ["LB-GAN", "7.98", "inf"]
