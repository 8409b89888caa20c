import math

import numpy as np
import pytest
import torch

from mgan.core_data import Dataset, load_dataset
from mgan.errors import ConfigError, ContractError, PreconditionError
from mgan.networks import CheckpointMeta, detector_forward, load_checkpoint, save_checkpoint
from mgan.phantom import PhantomConfig, generate_corpus, generate_study, patient_ids
from mgan.trainer import (ProtocolConfig, TrainConfig, audit_leakage, public_report,
                          run_two_fold_protocol, synthesize, synthesize_studies, train_detector,
                          train_gan, write_report)

SMALL = PhantomConfig(image_size=32, tumor_radius_range=(1.5, 3.0))
FAST = TrainConfig(epochs=2, base_width=8, seed=4)


@pytest.fixture(scope="module")
def studies():
    return Dataset([generate_study(SMALL, pid, k) for pid in patient_ids(3) for k in range(2)])


@pytest.fixture(scope="module")
def trained(studies):
    return train_gan(studies, FAST)


def test_config_validation():
    for bad in ({"epochs": 0}, {"batch_size": 0}, {"learning_rate": 0.0},
                {"channel_mode": "XY"}, {"betas": (0.5, 1.0)}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_one_study_bookkeeping(studies):
    _, _, tlog = train_gan(studies.studies[:1], TrainConfig(epochs=1, base_width=8))
    assert (tlog.d_updates, tlog.g_updates) == (1, 1)
    assert [r.epoch for r in tlog.records] == [1]
    _, _, tlog = train_gan(studies, TrainConfig(epochs=2, batch_size=4, d_steps_per_g_step=2,
                                                 base_width=8))
    # 6 studies in batches of 4 -> 2 batches per epoch
    assert (tlog.d_updates, tlog.g_updates) == (8, 4)


def test_train_gan_deterministic(studies, trained):
    G, D, tlog = trained
    G2, D2, tlog2 = train_gan(studies, FAST)
    assert tlog.losses() == tlog2.losses()
    assert all(math.isfinite(v) for row in tlog.losses() for v in row[1:])
    for a, b in zip(G.state_dict().values(), G2.state_dict().values()):
        assert torch.equal(a, b)
    for a, b in zip(D.state_dict().values(), D2.state_dict().values()):
        assert torch.equal(a, b)


def test_empty_training_set():
    with pytest.raises(PreconditionError):
        train_gan([], FAST)


def test_synthesize_contract(studies, trained, tmp_path):
    G = trained[0]
    out = synthesize_studies(G, "M", studies)
    assert len(out) == len(studies)
    for s, o in zip(studies, out):
        assert o.key == s.key and o.label is s.label and o.ct is s.ct
        assert 0.0 <= o.pet.values.min() and o.pet.values.max() <= 1.0
    again = synthesize_studies(G, "M", studies)
    assert all(np.array_equal(a.pet.values, b.pet.values) for a, b in zip(out, again))
    with pytest.raises(ContractError):
        synthesize_studies(G, "LB", studies)
    manifest = synthesize(G, "M", studies, tmp_path / "s")
    assert len(load_dataset(manifest)) == len(studies)


def test_checkpoint_round_trip_is_bitwise(studies, trained, tmp_path):
    G = trained[0]
    before = synthesize_studies(G, "M", studies)
    path = save_checkpoint(G, tmp_path / "g", CheckpointMeta(G.arch(), "M", 4, 2))
    G2, meta = load_checkpoint(path)
    after = synthesize_studies(G2, meta.mode, studies)
    assert all(np.array_equal(a.pet.values, b.pet.values) for a, b in zip(before, after))
    with pytest.raises(ContractError):
        synthesize_studies(G2, "CT", studies)


def test_detector_beats_all_zero_baseline():
    train = [generate_study(SMALL, f"t{i:02d}", 0) for i in range(24)]
    test = [generate_study(SMALL, f"h{i:02d}", 0) for i in range(8)]
    cfg = TrainConfig(epochs=30, batch_size=4, learning_rate=1e-3, betas=(0.9, 0.999), seed=2)
    F_ = train_detector(train, cfg)
    pet = torch.from_numpy(np.stack([s.pet.values for s in test])[:, None] * 2 - 1).float()
    with torch.no_grad():
        pred = detector_forward(F_, pet).numpy()[:, 0] >= 0.5
    truth = np.stack([s.label.values for s in test]).astype(bool)
    baseline = 1.0 - truth.mean()
    assert (pred == truth).mean() > baseline
    F2 = train_detector(train, cfg)
    for a, b in zip(F_.state_dict().values(), F2.state_dict().values()):
        assert torch.equal(a, b)
    with pytest.raises(PreconditionError):
        train_detector([], cfg)


@pytest.fixture(scope="module")
def protocol_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("proto")
    ds = load_dataset(generate_corpus(SMALL, 4, 2, root / "corpus"))
    cfg = ProtocolConfig(gan=TrainConfig(epochs=1, base_width=8),
                         detector=TrainConfig(epochs=2, batch_size=4, learning_rate=1e-3),
                         seed=1)
    return ds, run_two_fold_protocol(ds, cfg, root / "run"), root / "run"


def test_protocol_artifacts(protocol_run):
    ds, report, out = protocol_run
    assert sorted(report["table2"]) == ["CT", "LB", "M", "REAL"]
    assert sorted(report["table1"]) == ["CT", "LB", "M"]
    assert [d["name"] for d in report["directions"]] == ["AtoB", "BtoA"]
    for arm in ("LB", "CT", "M"):
        assert len(list(out.glob(f"*/gan_{arm}/generator.safetensors"))) == 2
    for arm in ("LB", "CT", "M", "REAL"):
        assert len(list(out.glob(f"*/detector_{arm}/detector.safetensors"))) == 2
    folds = report["folds"]
    assert sorted(folds["A"] + folds["B"]) == ds.patient_ids
    assert report["table1"]["M"]["count"] == len(ds)


def test_protocol_additivity(protocol_run):
    _, report, _ = protocol_run
    for arm, total in report["table2"].items():
        parts = [d["arms"][arm]["detection"] for d in report["directions"]]
        for k in ("tp", "fp", "fn"):
            assert total[k] == sum(p[k] for p in parts)


def test_leakage_audit(protocol_run):
    _, report, _ = protocol_run
    audit = report["leakage_audit"]
    assert audit["ok"] and audit["checked"] == 2 * (3 + 4)
    tampered = {"provenance": [dict(report["provenance"][0])]}
    tampered["provenance"][0]["eval_patients"] = tampered["provenance"][0]["train_patients"][:1]
    assert not audit_leakage(tampered)["ok"]


def test_report_is_json_and_private_keys_dropped(protocol_run, tmp_path):
    _, report, _ = protocol_run
    path = write_report(report, tmp_path / "r.json")
    assert "_objects" not in path.read_text() and "_objects" not in public_report(report)


def test_arm_filtering(tmp_path):
    ds = load_dataset(generate_corpus(SMALL, 2, 1, tmp_path / "c"))
    cfg = ProtocolConfig(gan=TrainConfig(epochs=1, base_width=8),
                         detector=TrainConfig(epochs=1), arms=("M", "REAL"))
    report = run_two_fold_protocol(ds, cfg, tmp_path / "r")
    assert sorted(report["table2"]) == ["M", "REAL"] and list(report["table1"]) == ["M"]
    with pytest.raises(ConfigError):
        ProtocolConfig(arms=("M", "GAN"))
