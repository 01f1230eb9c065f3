import numpy as np
import pytest

from marginlab.heads import make_head
from marginlab.noisegen import DatasetSpec, generate, inject_closed_noise
from marginlab.trainer import (
    METRICS_HEADER,
    EmbeddingModel,
    MetricsLog,
    TrainConfig,
    lr_at,
    sgd_step,
    train,
)


def toy(seed=0, n=3, per=30, dim=8):
    return generate(DatasetSpec(n, per, dim, concentration=8.0, seed=seed))


def test_lr_schedule_examples():
    cfg = TrainConfig(make_head("ArcFace"), epochs=30, lr_milestones=(6, 12, 19))
    assert lr_at(cfg, 0) == 0.1
    assert lr_at(cfg, 12) == pytest.approx(0.001, rel=1e-15)
    assert lr_at(cfg, 25) == pytest.approx(0.0001, rel=1e-15)
    with pytest.raises(ValueError):
        lr_at(cfg, 30)


def test_defaults_scale_with_epochs():
    cfg = TrainConfig(make_head("ArcFace"))
    assert cfg.lr_milestones == (6, 12, 19) and cfg.warmup_epochs == 7
    assert (cfg.momentum, cfg.weight_decay, cfg.lr) == (0.9, 5e-4, 0.1)
    short = TrainConfig(make_head("ArcFace"), epochs=10)
    assert short.lr_milestones == (2, 4, 6) and short.warmup_epochs == 2
    assert TrainConfig(make_head("ArcFace"), epochs=1).lr_milestones == ()


@pytest.mark.parametrize("kw", [
    dict(epochs=3, warmup_epochs=3), dict(lr_milestones=(5, 5)), dict(momentum=1.0),
    dict(batch_size=0), dict(lr=0.0),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(make_head("ArcFace"), **kw)


def test_sgd_step_examples():
    p, v = np.array([1.0, -2.0]), np.array([0.5, 0.5])
    p2, v2 = sgd_step(p, np.zeros(2), v, 0.1, 0.9, 0.0)
    np.testing.assert_array_equal(p2, p - 0.1 * 0.45)
    np.testing.assert_array_equal(v2, 0.9 * v)
    p3, _ = sgd_step(p, np.array([1.0, 1.0]), np.zeros(2), 0.5, 0.0, 0.0)
    np.testing.assert_array_equal(p3, [0.5, -2.5])
    g = np.array([2.0])
    q, vel = sgd_step(np.zeros(1), g, np.zeros(1), 1.0, 0.9, 0.0)
    q, vel = sgd_step(q, g, vel, 1.0, 0.9, 0.0)
    np.testing.assert_allclose(-q, g * 2.9, rtol=1e-15)


def test_sgd_zero_grad_zero_velocity_keeps_params():
    p = {"a": np.ones(3)}
    out, _ = sgd_step(p, {"a": np.zeros(3)}, {"a": np.zeros(3)}, 0.1, 0.9, 0.0)
    np.testing.assert_array_equal(out["a"], p["a"])


def test_single_update():
    g = toy(per=4)
    model = EmbeddingModel.init(8, 4, 3, seed=0)
    cfg = TrainConfig(make_head("ArcFace"), epochs=1, warmup_epochs=0, batch_size=64)
    trained, log = train(model, g.train, None, cfg)
    assert len(log.iterations) == 1
    assert not np.array_equal(trained.params["centers"], model.params["centers"])


def test_partial_last_batch_is_kept():
    g = toy(per=10)
    cfg = TrainConfig(make_head("ArcFace"), epochs=1, warmup_epochs=0, batch_size=16)
    _, log = train(EmbeddingModel.init(8, 4, 3), g.train, None, cfg)
    assert len(log.iterations) == 2


def test_arcface_loss_goes_down():
    g = toy()
    cfg = TrainConfig(make_head("ArcFace"), epochs=8, batch_size=16)
    _, log = train(EmbeddingModel.init(8, 4, 3, seed=1), g.train, None, cfg)
    ep = log.epochs()
    assert ep[-1].loss < ep[0].loss


def test_training_is_bitwise_reproducible():
    g = toy(n=4)
    noisy, ledger = inject_closed_noise(g.train, 0.2, 3)
    cfg = TrainConfig(make_head("BoundaryFace"), epochs=4, batch_size=16, seed=9)
    a, la = train(EmbeddingModel.init(8, 4, 4, seed=2), noisy, ledger, cfg)
    b, lb = train(EmbeddingModel.init(8, 4, 4, seed=2), noisy, ledger, cfg)
    assert la.to_csv() == lb.to_csv()
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_warmup_matches_arcface():
    g = toy(n=4)
    noisy, ledger = inject_closed_noise(g.train, 0.2, 3)
    model = EmbeddingModel.init(8, 4, 4, seed=2)
    common = dict(epochs=4, warmup_epochs=3, batch_size=16, seed=1)
    _, lb = train(model, noisy, ledger, TrainConfig(make_head("BoundaryFace"), **common))
    _, la = train(model, noisy, ledger, TrainConfig(make_head("ArcFace"), **common))
    warm = [i for i, it in enumerate(lb.iterations) if it.epoch < 3]
    assert [lb.iterations[i].loss for i in warm] == [la.iterations[i].loss for i in warm]
    assert all(lb.iterations[i].detected == 0 for i in warm)


def test_ledger_counts_add_up():
    g = toy(n=5, per=40)
    noisy, ledger = inject_closed_noise(g.train, 0.3, 3)
    cfg = TrainConfig(make_head("BoundaryFace", m=0.3), epochs=6, batch_size=32)
    _, log = train(EmbeddingModel.init(8, 6, 5), noisy, ledger, cfg)
    assert log.has_ledger
    assert sum(it.detected for it in log.iterations) > 0
    for it in log.iterations:
        assert it.detected == it.correct + it.wrong
        assert 0 <= it.correct / max(it.detected, 1) <= 1


def test_no_ledger_leaves_correctness_blank():
    g = toy()
    cfg = TrainConfig(make_head("BoundaryFace"), epochs=2, batch_size=32)
    _, log = train(EmbeddingModel.init(8, 4, 3), g.train, None, cfg)
    assert not log.has_ledger
    first_row = log.to_csv().splitlines()[1].split(",")
    assert first_row[5] == first_row[6] == ""


def test_training_never_mutates_labels_unless_persistent():
    g = toy(n=4)
    noisy, ledger = inject_closed_noise(g.train, 0.3, 3)
    before = noisy.labels.copy()
    cfg = TrainConfig(make_head("BoundaryFace", m=0.3), epochs=3, warmup_epochs=0, batch_size=16,
                      persistent_correction=True)
    train(EmbeddingModel.init(8, 4, 4), noisy, ledger, cfg)
    np.testing.assert_array_equal(noisy.labels, before)


def test_curricular_state_saved_and_evaluate_hook():
    g = toy()
    cfg = TrainConfig(make_head("Curricular"), epochs=3, warmup_epochs=0, batch_size=16)
    model, log = train(EmbeddingModel.init(8, 4, 3), g.train, None, cfg, evaluate=lambda m: 0.5)
    assert model.state["t"] != 0.0
    assert [e.verification_accuracy for e in log.epochs()] == [0.5, 0.5, 0.5]


def test_metrics_csv_round_trip():
    g = toy()
    noisy, ledger = inject_closed_noise(g.train, 0.2, 1)
    cfg = TrainConfig(make_head("BoundaryFace"), epochs=2, batch_size=32)
    _, log = train(EmbeddingModel.init(8, 4, 3), noisy, ledger, cfg)
    text = log.to_csv()
    assert text.splitlines()[0] == ",".join(METRICS_HEADER)
    assert MetricsLog.from_csv(text).to_csv() == text


def test_empty_dataset_rejected():
    g = toy()
    empty = g.train.copy()
    empty.inputs, empty.labels = empty.inputs[:0], empty.labels[:0]
    with pytest.raises(ValueError):
        train(EmbeddingModel.init(8, 4, 3), empty, None, TrainConfig(make_head("ArcFace"), epochs=1))
