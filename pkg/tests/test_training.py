import json

import numpy as np
import pytest

from src.data.images import ImageRGB, patch_grid
from src.data.loader import load_manifest
from src.data.synthetic import make_synthetic_pairs, write_synthetic_fixture
from src.errors import ContractError, DataError, DimensionError, ParameterError
from src.models.pban_config import PBANConfig
from src.models.pban_model import pban_forward
from src.models.weights import NamedWeights, init_weights
from src.tensor.tensor import Tensor, precision
from src.training.folds import holdout_split, kfold_split
from src.training.loss import mse_loss
from src.training.sgd import SGDConfig, sgd_step
from src.training.trainer import (
    FIT_POLICY,
    PatchDataset,
    Trainer,
    predict_image,
    predict_patches,
    train,
)


@pytest.fixture
def micro():
    return PBANConfig.micro(patch_size=8)


def _weights(value):
    return NamedWeights({"w": np.array(value, dtype=np.float64)})


def test_sgd_plain_descent():
    weights, _ = sgd_step(_weights([1.0, -2.0]), {"w": np.array([0.5, 1.0])}, {}, SGDConfig(lr=0.5, momentum=0.0, weight_decay=0.0))
    np.testing.assert_array_equal(weights.array("w"), [0.75, -2.5])


def test_sgd_two_step_momentum_unroll():
    cfg = SGDConfig(lr=0.5, momentum=0.5, weight_decay=0.0)
    weights, velocity = _weights([3.0]), {}
    for _ in range(2):
        sgd_step(weights, {"w": np.array([1.0])}, velocity, cfg)
    np.testing.assert_array_equal(weights.array("w"), [3.0 - 0.5 * 1.0 * (2 + 0.5)])
    np.testing.assert_array_equal(velocity["w"], [1.5])


def test_sgd_weight_decay_shrinks_parameters():
    cfg = SGDConfig(lr=0.5, momentum=0.0, weight_decay=0.1)
    weights = _weights([2.0, -4.0])
    sgd_step(weights, {"w": np.zeros(2)}, {}, cfg)
    np.testing.assert_allclose(weights.array("w"), np.array([2.0, -4.0]) * (1 - 0.5 * 0.1), rtol=1e-15)


def test_sgd_leaves_buffers_alone():
    weights = NamedWeights({"bn.gamma": np.ones(2), "bn.running_mean": np.full(2, 0.3)})
    sgd_step(weights, {"bn.gamma": np.ones(2)}, {}, SGDConfig(lr=0.1, momentum=0.0))
    np.testing.assert_array_equal(weights.array("bn.running_mean"), [0.3, 0.3])


def test_sgd_missing_gradient():
    with pytest.raises(ContractError, match="'w'"):
        sgd_step(_weights([1.0]), {}, {}, SGDConfig())


def test_sgd_config_validation():
    with pytest.raises(ParameterError):
        SGDConfig(lr=0.0)
    with pytest.raises(ParameterError):
        SGDConfig(momentum=1.0)
    with pytest.raises(ParameterError):
        SGDConfig(weight_decay=-1e-3)


@pytest.mark.parametrize("n,expected", [(10, [2, 2, 2, 2, 2]), (7, [2, 2, 1, 1, 1])])
def test_kfold_sizes_and_partition(n, expected):
    split = kfold_split(n, 5, seed=3)
    assert sorted(split.sizes(), reverse=True) == expected
    held = np.concatenate([split.validation(f) for f in range(5)])
    assert sorted(held.tolist()) == list(range(n))
    for f in range(5):
        assert set(split.training(f)).isdisjoint(split.validation(f))


def test_kfold_is_seeded():
    assert np.array_equal(kfold_split(20, 5, 1).assignments, kfold_split(20, 5, 1).assignments)
    assert not np.array_equal(kfold_split(20, 5, 1).assignments, kfold_split(20, 5, 2).assignments)


def test_kfold_needs_enough_records():
    with pytest.raises(ParameterError):
        kfold_split(4, 5)


def test_holdout_split():
    train_idx, test_idx = holdout_split(10, 0.2, seed=0)
    assert len(test_idx) == 2 and len(train_idx) == 8
    assert sorted([*train_idx, *test_idx]) == list(range(10))
    train_idx, test_idx = holdout_split(10, 0.0)
    assert len(test_idx) == 0 and len(train_idx) == 10
    with pytest.raises(ParameterError):
        holdout_split(10, 1.0)


def test_mse_examples():
    with precision(np.float64):
        assert mse_loss(Tensor([[0.3], [0.7]]), np.array([0.3, 0.7])).item() == 0.0
        assert mse_loss(Tensor([[1.0], [2.0]]), np.array([0.0, 0.0])).item() == 2.5
    with pytest.raises(DimensionError):
        mse_loss(Tensor([[1.0], [2.0]]), np.array([0.0, 0.0, 0.0]))


def test_predict_image_is_patch_average(micro):
    weights = init_weights(micro, seed=0)
    pair = make_synthetic_pairs(1, size=8, seed=2)[0]
    sr = ImageRGB(np.concatenate([pair.sr.pixels, pair.hr.pixels], axis=2))
    hr = ImageRGB(np.concatenate([pair.hr.pixels, pair.hr.pixels], axis=2))
    a, b = (
        pban_forward(Tensor(h[None]), Tensor(s[None]), weights, micro).item()
        for h, s in zip(patch_grid(hr.pixels, 8), patch_grid(sr.pixels, 8))
    )
    assert predict_image(weights, micro, sr, hr) == pytest.approx((a + b) / 2, abs=1e-6)
    single = predict_image(weights, micro, ImageRGB(sr.pixels[:, :, :8]), ImageRGB(hr.pixels[:, :, :8]))
    assert single == pytest.approx(a, abs=1e-6)


def test_patch_order_does_not_change_score(micro):
    weights = init_weights(micro, seed=0)
    pair = make_synthetic_pairs(1, size=24, seed=4)[0]
    hr, sr = patch_grid(pair.hr.pixels, 8), patch_grid(pair.sr.pixels, 8)
    order = np.random.default_rng(0).permutation(len(sr))
    base = predict_patches(weights, micro, hr, sr, batch_size=4).mean()
    shuffled = predict_patches(weights, micro, hr[order], sr[order], batch_size=3).mean()
    assert shuffled == pytest.approx(base, abs=1e-6)


def test_predict_image_errors(micro):
    weights = init_weights(micro, seed=0)
    pair = make_synthetic_pairs(1, size=16, seed=0)[0]
    with pytest.raises(DimensionError):
        predict_image(weights, micro, pair.sr, None)
    with pytest.raises(DataError):
        predict_image(weights, micro, pair.sr, ImageRGB(pair.hr.pixels[:, :8]))
    tiny = ImageRGB(pair.sr.pixels[:, :4, :4])
    with pytest.raises(DataError, match="no patches"):
        predict_image(weights, micro, tiny, tiny)


def test_nr_prediction_ignores_reference():
    cfg = PBANConfig.micro(variant="NR", attention_mode="self", patch_size=8)
    weights = init_weights(cfg, seed=0)
    pair = make_synthetic_pairs(1, size=16, seed=1)[0]
    assert predict_image(weights, cfg, pair.sr, None) == predict_image(weights, cfg, pair.sr, pair.hr)


def test_small_steps_descend(micro):
    pairs = make_synthetic_pairs(4, size=8, seed=0)
    hr = np.stack([p.hr.pixels for p in pairs])
    sr = np.stack([p.sr.pixels for p in pairs])
    mos = np.array([p.mos for p in pairs], dtype=np.float32)
    trainer = Trainer(micro, SGDConfig(lr=0.001))
    weights, velocity, rng = init_weights(micro, seed=0), {}, np.random.default_rng(0)
    losses = [trainer.step(weights, velocity, hr, sr, mos, rng) for _ in range(11)]
    assert sum(b <= a for a, b in zip(losses, losses[1:])) >= 8


def test_patch_dataset_needs_patches():
    with pytest.raises(DataError):
        PatchDataset.from_pairs([])


def test_fit_respects_max_steps(micro):
    pairs = make_synthetic_pairs(3, size=8, seed=0)
    dataset = PatchDataset(
        hr=np.stack([p.hr.pixels for p in pairs]),
        sr=np.stack([p.sr.pixels for p in pairs]),
        mos=np.array([p.mos for p in pairs], dtype=np.float32),
    )
    trainer = Trainer(micro, SGDConfig(epochs=10, batch_size=2))
    result = trainer.fit(dataset, init_weights(micro, 0), np.random.default_rng(0), max_steps=5)
    assert len(result.step_losses) == 5
    assert len(result.epoch_losses) == 3
    assert all(np.isfinite(result.step_losses))


@pytest.fixture
def fixture_manifest(tmp_path):
    return load_manifest(write_synthetic_fixture(tmp_path / "data", n=6, size=16, seed=1))


def test_train_is_deterministic(tmp_path, micro, fixture_manifest):
    sgd = SGDConfig(epochs=2, batch_size=8, seed=5)
    first = train(fixture_manifest, micro, sgd, folds=2, out=tmp_path / "a.pbn")
    second = train(fixture_manifest, micro, sgd, folds=2, out=tmp_path / "b.pbn")
    assert (tmp_path / "a.pbn").read_bytes() == (tmp_path / "b.pbn").read_bytes()
    assert first.step_losses == second.step_losses
    assert first.fold_metrics == second.fold_metrics


def test_train_writes_report_and_plot(tmp_path, micro, fixture_manifest):
    out = tmp_path / "model.pbn"
    report = train(fixture_manifest, micro, SGDConfig(epochs=2, batch_size=8), folds=3, out=out)
    assert report.checkpoint == str(out)
    assert len(report.epoch_losses) == 2
    assert len(report.fold_losses) == 3 and all(len(f) == 2 for f in report.fold_losses)
    assert [m["fold"] for m in report.fold_metrics] == [0, 1, 2]
    assert all(m["n"] == 2 for m in report.fold_metrics)

    saved = json.loads((tmp_path / "model.pbn.report.json").read_text())
    assert saved["fit_policy"] == FIT_POLICY
    assert saved["epoch_losses"] == report.epoch_losses
    assert saved["pban_config"]["channels"] == 16
    assert (tmp_path / "model.pbn.loss.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_train_with_held_out_test_set(tmp_path, micro):
    manifest = load_manifest(write_synthetic_fixture(tmp_path, n=8, size=8, seed=2))
    report = train(manifest, micro, SGDConfig(epochs=1, batch_size=4), folds=2, test_fraction=0.25)
    assert report.checkpoint is None
    assert report.test_metrics["n"] == 2
    assert len(report.test_predictions) == 2
    assert {"sr_path", "hr_path", "mos", "prediction"} <= set(report.test_predictions[0])


def test_train_rejects_empty_manifest(tmp_path, micro):
    csv = tmp_path / "manifest.csv"
    csv.write_text("sr_path,hr_path,mos\n")
    with pytest.raises(DataError):
        train(load_manifest(csv), micro, SGDConfig(epochs=1))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_tiny_overfit(seed):
    cfg = PBANConfig.micro()
    pairs = make_synthetic_pairs(8, size=32, seed=seed, mos="random")
    dataset = PatchDataset(
        hr=np.stack([p.hr.pixels for p in pairs]),
        sr=np.stack([p.sr.pixels for p in pairs]),
        mos=np.array([p.mos for p in pairs], dtype=np.float32),
    )
    trainer = Trainer(cfg, SGDConfig(lr=0.01, momentum=0.9, weight_decay=1e-6, epochs=500, batch_size=8, seed=seed))
    result = trainer.fit(dataset, init_weights(cfg, seed), np.random.default_rng(seed), max_steps=500)
    assert len(result.step_losses) == 500
    assert result.epoch_losses[-1] < 1e-3
