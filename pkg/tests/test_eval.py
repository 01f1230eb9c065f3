import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from marginlab.evaluation import (
    EmptyPairsError,
    LedgerMissingError,
    aggregate,
    detection_curve,
    oracle_correction_test,
    sweep_threshold,
    verification_accuracy,
)
from marginlab.noisegen import (
    DatasetSpec,
    NoiseEntry,
    NoiseKind,
    NoiseLedger,
    NoisyDataset,
    generate,
    inject_closed_noise,
    make_verification_pairs,
)
from marginlab.trainer import IterationMetrics, MetricsLog


def test_perfect_separation():
    holdout = NoisyDataset(np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]), [0, 0, 1], 2)
    res = verification_accuracy(lambda x: x, [(0, 1, True), (0, 2, False)], holdout)
    assert res.accuracy == 1.0
    assert res.genuine_mean_cos == pytest.approx(1.0) and res.impostor_mean_cos == pytest.approx(-1.0)


def test_four_pair_sweep():
    thr, acc = sweep_threshold([0.8, 0.9, 0.1, 0.2], [True, True, False, False])
    assert acc == 1.0 and 0.2 < thr <= 0.8
    # lowest threshold that still rejects 0.2
    assert thr == pytest.approx(0.201)


def test_random_embeddings_near_chance():
    g = generate(DatasetSpec(20, 20, 16, num_holdout_classes=20, seed=0))
    pairs = make_verification_pairs(g.holdout, 1000, 1)
    rng = np.random.default_rng(0)
    table = rng.standard_normal((len(g.holdout), 16))
    res = verification_accuracy(lambda x: table, pairs, g.holdout)
    assert 0.5 <= res.accuracy < 0.55


def test_empty_pairs():
    with pytest.raises(EmptyPairsError):
        verification_accuracy(lambda x: x, [], NoisyDataset(np.eye(2), [0, 1], 2))
    with pytest.raises(EmptyPairsError):
        sweep_threshold([], [])


@given(st.integers(0, 2**32 - 1))
def test_sweep_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    sim = np.round(rng.uniform(-1, 1, 30), 3)
    same = rng.random(30) < 0.5
    thr, acc = sweep_threshold(sim, same)
    grid = np.arange(-1000, 1001) / 1000
    brute = [np.mean((sim >= t) == same) for t in grid]
    assert acc == pytest.approx(max(brute), abs=1e-15)
    assert thr == grid[int(np.argmax(brute))]
    assert acc >= max(same.mean(), 1 - same.mean()) - 1e-12


@given(st.floats(0.01, 100))
def test_accuracy_invariant_to_scale(scale):
    g = generate(DatasetSpec(2, 6, 8, num_holdout_classes=5, seed=1))
    pairs = make_verification_pairs(g.holdout, 30, 2)
    a = verification_accuracy(lambda x: x, pairs, g.holdout)
    b = verification_accuracy(lambda x: scale * x, pairs, g.holdout)
    assert (a.accuracy, a.best_threshold) == (b.accuracy, b.best_threshold)


def _log(rows):
    return MetricsLog([IterationMetrics(e, i, 1.0, 0.1, d, c, d - c, 0) for i, (e, d, c) in enumerate(rows)])


def _ledger(n):
    return NoiseLedger([NoiseEntry(i, NoiseKind.CLOSED, 0, 1) for i in range(n)])


def test_detection_curve_arithmetic():
    pts = detection_curve(_log([(0, 100, 90), (0, 50, 50)]), _ledger(200))
    assert len(pts) == 1
    p = pts[0]
    assert (p.detected, p.correct, p.wrong) == (150, 140, 10)
    assert p.precision == pytest.approx(0.9333, abs=1e-4) and p.recall == pytest.approx(0.70)


def test_detection_curve_edges():
    zero = detection_curve(_log([(0, 0, 0), (1, 0, 0)]), _ledger(10))
    assert all(p.precision == 0 and p.recall == 0 for p in zero)
    full = detection_curve(_log([(0, 10, 10)]), _ledger(10))
    assert full[0].precision == 1.0 and full[0].recall == 1.0
    with pytest.raises(LedgerMissingError):
        detection_curve(_log([(0, 1, 1)]), None)
    no_ledger = MetricsLog([IterationMetrics(0, 0, 1.0, 0.1, 1, None, None, 0)])
    with pytest.raises(LedgerMissingError):
        detection_curve(no_ledger, _ledger(1))


def test_detection_totals_equal_iteration_sums():
    log = _log([(0, 3, 2), (0, 4, 1), (1, 5, 5)])
    pts = detection_curve(log, _ledger(20))
    assert sum(p.detected for p in pts) == sum(it.detected for it in log.iterations)
    assert sum(p.correct for p in pts) == sum(it.correct for it in log.iterations)


def _orthogonal(ratio, seed=0):
    data = NoisyDataset(np.repeat(np.eye(10), 10, axis=0), np.repeat(np.arange(10), 10), 10)
    noisy, ledger = inject_closed_noise(data, ratio, seed)
    return np.eye(10), noisy, ledger


def test_oracle_correction_orthogonal():
    centers, noisy, ledger = _orthogonal(0.2)
    res = oracle_correction_test(centers, noisy, ledger, 0.5)
    assert res.recovered_fraction == 1.0 and res.false_positives == 0 and res.detected == 20


def test_oracle_correction_zero_flips_and_zero_margin():
    centers, noisy, ledger = _orthogonal(0.0)
    res = oracle_correction_test(centers, noisy, ledger, 0.5)
    assert res.recovered_fraction == 1.0 and res.detected == 0
    assert oracle_correction_test(centers, noisy, ledger, 0.0).detected == 0


def test_aggregate():
    assert aggregate([0.7]) == (0.7, 0.0)
    mean, std = aggregate([0.1, 0.2, 0.3])
    assert mean == pytest.approx(0.2) and std == pytest.approx(0.1)
