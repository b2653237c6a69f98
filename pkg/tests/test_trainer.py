import numpy as np
import pytest

from cloc.autodiff import Tensor
from cloc.datagen import SyntheticSpec, generate, train_test
from cloc.sampler import BatchSpec
from cloc.trainer import (
    AdamState, TrainConfig, TrainingError, accuracy, adam_step, build_initial, read_logs_csv, run_phase_one,
    run_phase_two, train_cloc, write_logs_csv,
)

SMALL = dict(hidden=(16,), embedding_dim=6, classifier_hidden=8, learning_rate=5e-3)


def toy(n=30, seed=0, sigma=0.1):
    return generate(SyntheticSpec(n_classes=3, dim=4, n_per_class=n, gaps=[2.0, 2.0], sigma=sigma, seed=seed))


def test_adam_zero_gradient_leaves_parameters():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    st = AdamState()
    for _ in range(3):
        adam_step([p], [np.zeros(2)], st, 1e-3)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st.step == 3


def test_adam_first_step_closed_form():
    g = np.array([0.5, -3.0, 1e-4])
    p = Tensor(np.zeros(3), requires_grad=True)
    adam_step([p], [g], AdamState(), 0.01)
    # bias-corrected moments on step 1 are g and g^2
    np.testing.assert_allclose(p.data, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-15, atol=0)


def test_adam_identical_histories_identical_updates():
    a = Tensor(np.array([0.3]), requires_grad=True)
    b = Tensor(np.array([0.3]), requires_grad=True)
    st = AdamState()
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = rng.normal(size=1)
        adam_step([a, b], [g, g.copy()], st, 1e-2)
    assert a.data[0] == b.data[0]


def test_adam_rejects_non_finite_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(TrainingError):
        adam_step([p], [np.array([np.nan, 0.0])], AdamState(), 1e-3)


def test_phase_one_stops_on_accuracy_rule():
    d = toy()
    cfg = TrainConfig(max_epochs=200, seed=0, **SMALL)
    model, margins = build_initial(d, cfg)
    model, margins, log = run_phase_one(model, margins, d, cfg)
    assert log.stop_reason == "train_accuracy"
    assert len(log) < 200
    assert log.last.acc >= 0.95
    assert np.mean(log.last.margins) > 0.05
    assert all(len(r.margins) == 2 for r in log.records)


def test_all_fixed_registers_no_margin_parameters():
    d = toy()
    cfg = TrainConfig(max_epochs=3, seed=0, margin_mode="all_fixed", margin_constant=1.0, **SMALL)
    _, margins = build_initial(d, cfg)
    assert margins.parameters() == [] and margins.raw is None
    res = train_cloc(d, cfg)
    assert res.phase1.notes["n_margin_params"] == 0
    np.testing.assert_array_equal(res.margins.values(), [1.0, 1.0])


def test_phase_two_freezes_margins_bitwise_and_obeys_patience():
    d = toy(sigma=0.8, seed=3)
    cfg = TrainConfig(max_epochs=5, phase2_max_epochs=300, seed=1, phase2_patience=3, **SMALL)
    model, margins = build_initial(d, cfg)
    model, margins, _ = run_phase_one(model, margins, d, cfg)
    frozen = margins.freeze()
    before = frozen.values().tobytes()
    seen = []
    model, log = run_phase_two(model, frozen, d, cfg, callback=lambda ev: seen.append(ev.margins.tobytes()))
    assert frozen.values().tobytes() == before
    assert set(seen) == {before}
    assert log.stop_reason == "patience"
    assert len(log) == log.notes["best_epoch"] + 3
    assert log.notes["adam_reset"] is True


def test_phase_two_restores_best_state():
    d = toy(sigma=0.8, seed=3)
    cfg = TrainConfig(max_epochs=5, phase2_max_epochs=300, seed=1, phase2_patience=3, **SMALL)
    res = train_cloc(d, cfg)
    assert accuracy(res.model, d) == res.phase2.notes["best_monitored_accuracy"]
    assert accuracy(res.model, d) >= res.phase1.last.acc


def test_override_constant_through_both_phases():
    d = toy()
    seen = []
    cfg = TrainConfig(max_epochs=6, seed=0, fixed_overrides={2: 0.8}, **SMALL)
    res = train_cloc(d, cfg, callback=lambda ev: seen.append((ev.phase, ev.margins[1])))
    assert {p for p, _ in seen} == {1, 2}
    assert all(v == 0.8 for _, v in seen)
    assert res.margins.values()[1] == 0.8


def test_same_seed_identical_logs(tmp_path):
    d = toy(n=20)
    cfg = TrainConfig(max_epochs=4, seed=7, **SMALL)
    a, b = train_cloc(d, cfg), train_cloc(d, cfg)
    for la, lb in zip(a.logs, b.logs):
        assert la.records == lb.records
    write_logs_csv(tmp_path / "a.csv", a.logs, {"seed": 7})
    write_logs_csv(tmp_path / "b.csv", b.logs, {"seed": 7})
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    recs = read_logs_csv(tmp_path / "a.csv")
    assert recs == a.phase1.records + a.phase2.records


def test_different_seed_changes_run():
    d = toy(n=20)
    a = train_cloc(d, TrainConfig(max_epochs=2, seed=1, phase1_only=True, **SMALL))
    b = train_cloc(d, TrainConfig(max_epochs=2, seed=2, phase1_only=True, **SMALL))
    assert a.phase1.records != b.phase1.records
    assert a.phase2 is None


def test_without_precautions_switches_all_three():
    cfg = TrainConfig().without_precautions()
    assert cfg.margin_activation == "relu"
    assert cfg.margin_init == (0.0, 0.1)
    assert cfg.phase1_early_stop is False


@pytest.mark.parametrize("bad", [
    {"phase1_stop_train_accuracy": 0.0}, {"phase1_stop_train_accuracy": 1.5}, {"phase2_patience": 0},
    {"learning_rate": 0.0}, {"max_epochs": 0}, {"phase2_monitor": "loss"}, {"not_a_key": 1},
])
def test_config_validation(bad):
    with pytest.raises((ValueError, TypeError)):
        TrainConfig.from_dict(bad)


def test_config_dict_roundtrip():
    cfg = TrainConfig(seed=4, fixed_overrides={3: 0.5}, batch_spec=BatchSpec(3, 2), hidden=(8, 4))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_val_monitor_needs_validation_data():
    d = toy(n=10)
    cfg = TrainConfig(max_epochs=1, phase2_monitor="val", **SMALL)
    with pytest.raises(ValueError):
        train_cloc(d, cfg)
    tr, va = train_test(SyntheticSpec(n_classes=3, dim=4, n_per_class=10, gaps=[2, 2], sigma=0.1), 5)
    res = train_cloc(tr, cfg, val_data=va)
    assert res.phase2.notes["monitor"] == "val"


def test_phase_two_train_accuracy_not_below_phase_one_on_reference_task():
    tr, _ = train_test(SyntheticSpec(n_classes=5, dim=8, n_per_class=200, gaps=[1, 1, 0.5, 1], sigma=0.25, seed=0))
    res = train_cloc(tr, TrainConfig(seed=0))
    assert res.phase1.stop_reason == "train_accuracy"
    assert accuracy(res.model, tr) >= res.phase1.last.acc
