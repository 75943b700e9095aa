import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_blobs, stretched_blobs
from npcert.core import Norm, PrototypeModel
from npcert.data import Dataset
from npcert.errors import ClassTooSmall, DataFormatError, InvariantViolation, UnsupportedCombination
from npcert.exact import minmax_lower_bound
from npcert.train import (Init, Optimizer, TrainConfig, batch_margins, clean_accuracy, init_prototypes, margin,
                          margin_gradient, objective, train)

BIG_CAP = 1e9


# --- margin ------------------------------------------------------------------------

def test_margin_single_pair(e1_model):
    mv = margin(e1_model, [0.0, 0.0], 0, Norm.L2, 3.0)
    assert mv.signed_margin == pytest.approx(2.0) and mv.argpair == (0, 1) and mv.correct


def test_margin_capped(e1_model):
    assert margin(e1_model, [0.0, 0.0], 0, Norm.L2, 1.0).signed_margin == pytest.approx(1.0)


def test_margin_misclassified(e1_model):
    mv = margin(e1_model, [2.5, 0.0], 0, Norm.L2, 3.0)
    assert mv.signed_margin == pytest.approx(-0.5) and not mv.correct


def test_margin_linf_misclassified():
    model = PrototypeModel([[1.0, 0.0], [3.0, 0.0]], [0, 1], Norm.LINF)
    assert margin(model, [2.5, 0.0], 0, Norm.LINF, 3.0).signed_margin == pytest.approx(-0.5)


def test_margin_rejects_l1_metric():
    model = PrototypeModel([[1.0, 0.0], [3.0, 0.0]], [0, 1], Norm.L1)
    with pytest.raises(UnsupportedCombination):
        margin(model, [0.0, 0.0], 0, Norm.L2, 1.0)


def test_margin_rejects_linf_with_l2_threat():
    model = PrototypeModel([[1.0, 0.0], [3.0, 0.0]], [0, 1], Norm.LINF)
    with pytest.raises(UnsupportedCombination):
        margin(model, [0.0, 0.0], 0, Norm.L2, 1.0)


def test_config_rejects_l1():
    with pytest.raises(UnsupportedCombination):
        TrainConfig(metric=Norm.L1)


def test_config_rejects_nonpositive_cap():
    with pytest.raises(InvariantViolation):
        TrainConfig(cap=0.0)


# --- gradients ---------------------------------------------------------------------

def test_gradient_e1_other_coordinate(e1_model):
    # in one dimension the margin reduces to (w + 1) / 2 in the other prototype's coordinate
    G = margin_gradient(e1_model, [0.0, 0.0], 0, Norm.L2, BIG_CAP)
    assert G[1, 0] == pytest.approx(0.5, abs=1e-12)


def test_gradient_zero_when_capped(e1_model):
    assert not margin_gradient(e1_model, [0.0, 0.0], 0, Norm.L2, 1.0).any()


def _central_difference(model, z, y, q, h=1e-6):
    P = np.array(model.prototypes)
    G = np.zeros_like(P)
    for idx in np.ndindex(P.shape):
        vals = []
        for s in (h, -h):
            Q = P.copy()
            Q[idx] += s
            vals.append(margin(model.with_prototypes(Q), z, y, q, BIG_CAP).signed_margin)
        G[idx] = (vals[0] - vals[1]) / (2 * h)
    return G


def _stable_pair(model, z, y, q, h=1e-4):
    """True when the realizing pair does not change under small perturbations of the prototypes."""
    ref = margin(model, z, y, q, BIG_CAP).argpair
    rng = np.random.default_rng(0)
    for _ in range(4):
        moved = model.with_prototypes(model.prototypes + rng.uniform(-h, h, model.prototypes.shape))
        if margin(moved, z, y, q, BIG_CAP).argpair != ref:
            return False
    return True


def test_gradient_finite_difference_5d():
    rng = np.random.default_rng(5)
    model = PrototypeModel(rng.normal(size=(4, 5)), [0, 1, 0, 1], Norm.L2)
    z = rng.normal(size=5)
    y = int(model.labels[np.argmin(np.linalg.norm(model.prototypes - z, axis=1))])
    G = margin_gradient(model, z, y, Norm.L2, BIG_CAP)
    assert np.max(np.abs(G - _central_difference(model, z, y, Norm.L2))) <= 1e-5


@pytest.mark.parametrize("q", [Norm.L2, Norm.L1, Norm.LINF])
def test_gradient_matches_finite_differences(q):
    rng = np.random.default_rng(11 + list(Norm).index(q))
    checked = 0
    for _ in range(1000 // 3 + 1):
        model = PrototypeModel(rng.normal(size=(4, 3)), [0, 1, 0, 1], Norm.L2)
        z = rng.normal(size=3)
        y = int(rng.integers(0, 2))
        if not _stable_pair(model, z, y, q):
            continue
        G = margin_gradient(model, z, y, q, BIG_CAP)
        F = _central_difference(model, z, y, q)
        assert np.allclose(G, F, rtol=1e-4, atol=1e-6)
        checked += 1
    assert checked > 200


def test_linf_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(300):
        model = PrototypeModel(rng.normal(size=(4, 3)), [0, 1, 0, 1], Norm.LINF)
        z = rng.normal(size=3)
        y = int(rng.integers(0, 2))
        if not _stable_pair(model, z, y, Norm.LINF):
            continue
        F = _central_difference(model, z, y, Norm.LINF, h=1e-7)
        # piecewise linear: skip draws where the difference straddles a kink
        if not np.allclose(F, np.round(F * 2) / 2, atol=1e-6):
            continue
        assert np.allclose(margin_gradient(model, z, y, Norm.LINF, BIG_CAP), F, atol=1e-6)
        checked += 1
    assert checked > 50


def test_batch_gradient_is_sum_of_samples():
    rng = np.random.default_rng(8)
    model = PrototypeModel(rng.normal(size=(6, 3)), [0, 1, 2, 0, 1, 2], Norm.L2)
    X, Y = rng.normal(size=(20, 3)), rng.integers(0, 3, 20)
    vals, _, G = batch_margins(model, X, Y, Norm.L2, 0.7, grad=True)
    ref = sum(margin_gradient(model, x, int(y), Norm.L2, 0.7) for x, y in zip(X, Y))
    assert np.allclose(G, ref, atol=1e-12)
    assert np.allclose(vals, [margin(model, x, int(y), Norm.L2, 0.7).signed_margin for x, y in zip(X, Y)])


# --- objective / certificate link --------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([Norm.L1, Norm.L2, Norm.LINF]))
def test_margin_equals_minmax_lower_bound(seed, q):
    rng = np.random.default_rng(seed)
    model = PrototypeModel(rng.normal(size=(6, 3)), [0, 1, 2, 0, 1, 2], Norm.L2)
    z = rng.normal(size=3)
    mv = margin(model, z, int(model.labels[np.argmin(np.linalg.norm(model.prototypes - z, axis=1))]), q, BIG_CAP)
    if mv.correct:
        assert mv.signed_margin == pytest.approx(minmax_lower_bound(model, z, q).value, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([Norm.L1, Norm.L2, Norm.LINF]))
def test_translation_equivariance(seed, q):
    rng = np.random.default_rng(seed)
    model = PrototypeModel(rng.normal(size=(6, 3)), [0, 1, 2, 0, 1, 2], Norm.L2)
    X, Y = rng.normal(size=(10, 3)), rng.integers(0, 3, 10)
    shift = rng.normal(size=3) * 5
    a, _, _ = batch_margins(model, X, Y, q, 1.0)
    b, _, _ = batch_margins(model.with_prototypes(model.prototypes + shift), X + shift, Y, q, 1.0)
    assert np.allclose(a, b, atol=1e-9)


def test_tiny_cap_tracks_accuracy(blobs):
    model = init_prototypes(blobs, TrainConfig())
    vals, correct, _ = batch_margins(model, blobs.features, blobs.labels, Norm.L2, 1e-9)
    assert np.all(vals[correct] == 1e-9)
    assert objective(model, blobs, Norm.L2, 1e-9) == pytest.approx(1e-9 * correct.mean(), rel=1e-9)


# --- initialization ----------------------------------------------------------------

def test_init_centroids(blobs):
    model = init_prototypes(blobs, TrainConfig(prototypes_per_class=1))
    for c in range(2):
        assert np.allclose(model.prototypes[model.labels == c][0], blobs.features[blobs.labels == c].mean(axis=0))


def test_init_random_reproducible(blobs):
    cfg = TrainConfig(prototypes_per_class=3, init=Init.RANDOM_SAMPLES, seed=4)
    a, b = init_prototypes(blobs, cfg), init_prototypes(blobs, cfg)
    assert np.array_equal(a.prototypes, b.prototypes)
    rows = {tuple(r) for r in blobs.features}
    assert all(tuple(p) in rows for p in a.prototypes)


def test_init_kmeans_several(blobs):
    model = init_prototypes(blobs, TrainConfig(prototypes_per_class=3))
    assert model.prototypes.shape == (6, 2) and list(model.labels) == [0, 0, 0, 1, 1, 1]


def test_init_class_too_small():
    data = Dataset(np.arange(6, dtype=float).reshape(6, 1), [0, 0, 0, 1, 1, 1])
    with pytest.raises(ClassTooSmall):
        init_prototypes(data, TrainConfig(prototypes_per_class=5, init=Init.RANDOM_SAMPLES))


def test_init_missing_class(blobs):
    with pytest.raises(DataFormatError):
        init_prototypes(blobs, TrainConfig(), num_classes=3)


# --- training ----------------------------------------------------------------------

def test_zero_epochs_returns_initial_model(blobs):
    cfg = TrainConfig(epochs=0)
    model, trace = train(blobs, cfg)
    assert np.array_equal(model.prototypes, init_prototypes(blobs, cfg).prototypes)
    assert len(trace) == 1


def test_batch_larger_than_dataset():
    data = make_blobs(n_per_class=5)
    with pytest.raises(InvariantViolation):
        train(data, TrainConfig(batch_size=11))


def test_training_is_deterministic(blobs):
    cfg = TrainConfig(epochs=5, batch_size=32, seed=9, prototypes_per_class=2)
    a, ta = train(blobs, cfg)
    b, tb = train(blobs, cfg)
    assert np.array_equal(a.prototypes, b.prototypes)
    assert [r.objective for r in ta] == [r.objective for r in tb]


@pytest.mark.parametrize("optimizer", [Optimizer.ADAM, Optimizer.SGD])
def test_training_on_blobs_improves_margin(optimizer):
    data = stretched_blobs()
    cfg = TrainConfig(epochs=50, batch_size=64, cap=0.1, optimizer=optimizer,
                      learning_rate=0.01 if optimizer is Optimizer.ADAM else 0.1)
    model, trace = train(data, cfg)
    assert trace[0].clean_accuracy < 1.0
    assert clean_accuracy(model, data) == 1.0
    assert trace[-1].objective > trace[0].objective
    assert trace[-1].clean_accuracy == 1.0


def test_training_linf():
    data = stretched_blobs()
    cfg = TrainConfig(epochs=20, batch_size=64, cap=0.1, metric=Norm.LINF)
    model, trace = train(data, cfg, q=Norm.LINF)
    assert clean_accuracy(model, data) == 1.0
    assert trace[-1].objective > trace[0].objective
