import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from marginlab.noisegen import (
    DatasetSpec,
    InsufficientDistractorsError,
    InsufficientHoldoutError,
    InvalidSpecError,
    NoiseEntry,
    NoiseKind,
    NoiseLedger,
    NoisyDataset,
    generate,
    inject_closed_noise,
    inject_open_noise,
    make_noisy,
    make_verification_pairs,
)


def small(seed=0, **kw):
    params = dict(num_classes=5, samples_per_class=20, input_dim=8,
                  num_distractor_classes=3, num_holdout_classes=4, seed=seed)
    params.update(kw)
    return generate(DatasetSpec(**params))


def test_infinite_concentration_puts_samples_on_centers():
    g = small(concentration=float("inf"))
    np.testing.assert_allclose(g.train.inputs, g.class_centers[g.train.labels], atol=1e-15)


def test_generation_is_deterministic():
    a, b = small(3), small(3)
    np.testing.assert_array_equal(a.train.inputs, b.train.inputs)
    np.testing.assert_array_equal(a.holdout.inputs, b.holdout.inputs)
    np.testing.assert_array_equal(a.distractors, b.distractors)
    assert not np.array_equal(a.train.inputs, small(4).train.inputs)


def test_within_class_tighter_than_between():
    g = generate(DatasetSpec(10, 100, 32, concentration=4.0, seed=7))
    cos = g.train.inputs @ g.train.inputs.T
    same = g.train.labels[:, None] == g.train.labels[None, :]
    np.fill_diagonal(same, False)
    diff = g.train.labels[:, None] != g.train.labels[None, :]
    assert cos[same].mean() > cos[diff].mean()


def test_inputs_unit_norm_and_shapes():
    g = small()
    for arr in (g.train.inputs, g.holdout.inputs, g.distractors):
        np.testing.assert_allclose(np.linalg.norm(arr, axis=1), 1.0, atol=1e-12)
    assert g.train.inputs.shape == (100, 8)
    assert g.holdout.num_classes == 4 and len(g.holdout) == 80
    assert g.distractors.shape == (60, 8)


@pytest.mark.parametrize("kw", [dict(num_classes=0), dict(concentration=0.0), dict(num_holdout_classes=-1)])
def test_invalid_spec(kw):
    with pytest.raises(InvalidSpecError):
        small(**kw)


def test_closed_noise_zero_ratio():
    g = small()
    noisy, ledger = inject_closed_noise(g.train, 0.0, 1)
    assert len(ledger) == 0
    np.testing.assert_array_equal(noisy.labels, g.train.labels)


def test_closed_noise_count_and_conservation():
    g = generate(DatasetSpec(10, 100, 4, seed=1))
    noisy, ledger = inject_closed_noise(g.train, 0.2, 9)
    assert len(ledger) == 200
    assert all(e.original_label != e.assigned_label for e in ledger)
    assert len(noisy) == len(g.train)
    assert np.bincount(noisy.labels, minlength=10).sum() == 1000
    changed = np.flatnonzero(noisy.labels != g.train.labels)
    assert set(changed.tolist()) == ledger.indices
    np.testing.assert_array_equal(noisy.inputs, g.train.inputs)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.9))
def test_ledger_restores_clean_labels(seed, ratio):
    g = small(seed % 1000)
    noisy, ledger = inject_closed_noise(g.train, ratio, seed)
    np.testing.assert_array_equal(ledger.clean_labels(noisy.labels), g.train.labels)
    assert len(ledger) == round(ratio * len(g.train))


def test_open_noise():
    g = small()
    noisy, ledger = inject_open_noise(g.train, 0.0, g.distractors, 2)
    assert len(ledger) == 0
    noisy, ledger = inject_open_noise(g.train, 0.3, g.distractors, 2)
    assert len(ledger) == 30
    idx = sorted(ledger.indices)
    np.testing.assert_array_equal(noisy.labels, g.train.labels)
    # replaced rows come from the pool, are distinct, and differ from the originals
    rows = {tuple(r) for r in noisy.inputs[idx]}
    pool = {tuple(r) for r in g.distractors}
    assert rows <= pool and len(rows) == 30
    assert not any(np.array_equal(noisy.inputs[i], g.train.inputs[i]) for i in idx)


def test_open_noise_needs_enough_distractors():
    g = small()
    with pytest.raises(InsufficientDistractorsError):
        inject_open_noise(g.train, 0.9, g.distractors[:5], 0)


def test_mixed_noise_partitions():
    g = generate(DatasetSpec(5, 100, 6, num_distractor_classes=2, seed=2))
    noisy, ledger = make_noisy(g.train, 0.2, 0.2, g.distractors, 5)
    closed = {e.index for e in ledger.of_kind(NoiseKind.CLOSED)}
    opened = {e.index for e in ledger.of_kind("OpenSet")}
    assert len(closed) == 100 and len(opened) == 100 and not closed & opened
    with pytest.raises(ValueError):
        make_noisy(g.train, 0.6, 0.4, g.distractors, 5)


def test_injection_order_commutes_on_disjoint_sets():
    g = generate(DatasetSpec(5, 40, 6, num_distractor_classes=2, seed=2))
    c1, lc = inject_closed_noise(g.train, 0.2, 1)
    o1, lo = inject_open_noise(g.train, 0.2, g.distractors, 2, avoid=lc)
    a, _ = inject_open_noise(c1, 0.2, g.distractors, 2, avoid=lc)
    # same flips applied after the open-set replacement
    b = o1.copy()
    for e in lc:
        b.labels[e.index] = e.assigned_label
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_ledger_invariants():
    with pytest.raises(ValueError):
        NoiseLedger([NoiseEntry(1, NoiseKind.CLOSED, 2, 2)])
    with pytest.raises(ValueError):
        NoiseLedger([NoiseEntry(1, NoiseKind.CLOSED, 1, 2), NoiseEntry(1, NoiseKind.OPEN, None, 0)])


def test_verification_pairs():
    g = small()
    pairs = make_verification_pairs(g.holdout, 50, 3)
    assert len(pairs) == 100
    lab = g.holdout.labels
    assert all((lab[i] == lab[j]) == same and i != j for i, j, same in pairs)
    assert sum(p[2] for p in pairs) == 50
    assert pairs == make_verification_pairs(g.holdout, 50, 3)


def test_verification_pairs_need_two_classes():
    one = NoisyDataset(np.eye(3), [0, 0, 0], 1)
    with pytest.raises(InsufficientHoldoutError):
        make_verification_pairs(one, 5, 0)
    singles = NoisyDataset(np.eye(3), [0, 1, 2], 3)
    with pytest.raises(InsufficientHoldoutError):
        make_verification_pairs(singles, 5, 0)
