import numpy as np
import pytest

from rsvae.datastore import Split, sample_episode
from rsvae.errors import CapacityError, ContractError
from rsvae.gradnet import grad_check
from rsvae.protoclass import (
    CLASSIFIERS, Prototype, Provenance, build_task_model, classify_nearest, combine_prototypes,
    default_weights, fit_linear_svm, fit_logreg, logreg_loss_and_grad, one_nn_classify,
    prototype_mean, svm_loss_and_grad, zero_shot_prototype,
)
from rsvae.cvae import generate_features
from rsvae.selection import estimate_mean


def blobs(rng, d=2, n=50, sigma=1.0):
    """Two Gaussian blobs shifted apart along x so the gap between them is 5 sigma."""
    a = rng.normal(0, sigma, (n, d))
    b = rng.normal(0, sigma, (n, d))
    a[:, 0] -= a[:, 0].max() + 2.5 * sigma
    b[:, 0] -= b[:, 0].min() - 2.5 * sigma
    return np.vstack([a, b]), np.repeat([3, 7], n)


def test_prototype_mean_examples():
    assert prototype_mean([[1.0, 2.0]]).tolist() == [1.0, 2.0]
    assert prototype_mean([[0, 0], [4, 2]]).tolist() == [2.0, 1.0]
    x = np.random.default_rng(0).normal(size=(30, 4))
    np.testing.assert_array_equal(prototype_mean(x), estimate_mean(x))
    with pytest.raises(CapacityError):
        prototype_mean(np.empty((0, 2)))


def test_default_weights():
    assert default_weights(1) == (0.5, 0.5)
    assert default_weights(5) == pytest.approx((1 / 6, 5 / 6))


def test_combine_examples():
    assert combine_prototypes([1, 1], [3, 3], 0.5, 0.5).tolist() == [2.0, 2.0]
    np.testing.assert_array_equal(combine_prototypes([9.0, -1.0], [3.0, 4.0], 0.0, 1.0), [3.0, 4.0])
    p = np.random.default_rng(1).normal(size=5)
    np.testing.assert_allclose(combine_prototypes(p, p, 0.3, 0.7), p, atol=1e-15)
    with pytest.raises(ContractError):
        combine_prototypes([1.0], [2.0], 0.5, 0.6)
    with pytest.raises(ContractError):
        Prototype(0, np.zeros(2), Provenance.COMBINED, (0.2, 0.2))


def test_classify_nearest_examples():
    protos = [Prototype(4, np.array([0.0, 0.0])), Prototype(2, np.array([2.0, 0.0]))]
    assert classify_nearest(np.array([2.0, 0.0]), protos) == 2
    assert classify_nearest(np.array([1.0, 5.0]), protos) == 2    # equidistant: lower id
    with pytest.raises(CapacityError):
        classify_nearest(np.zeros(2), [])


def test_classify_nearest_vs_exhaustive_scan():
    rng = np.random.default_rng(2)
    protos = [Prototype(int(c), rng.normal(size=6)) for c in rng.permutation(10)]
    queries = rng.normal(size=(1000, 6))
    got = classify_nearest(queries, protos)
    for q, g in zip(queries, got):
        best = min(protos, key=lambda p: (np.sqrt(np.sum((q - p.vector) ** 2)), p.class_id))
        assert g == best.class_id
    shift = rng.normal(size=6) * 10
    moved = [Prototype(p.class_id, p.vector + shift) for p in protos]
    np.testing.assert_array_equal(classify_nearest(queries + shift, moved), got)


def test_one_nn():
    assert one_nn_classify(np.array([5.0]), np.array([[0.0]]), [9]) == 9
    rng = np.random.default_rng(3)
    ref = rng.normal(size=(40, 3))
    labels = rng.integers(0, 5, size=40)
    assert one_nn_classify(ref[17], ref, labels) == labels[17]
    queries = rng.normal(size=(200, 3))
    got = one_nn_classify(queries, ref, labels)
    for q, g in zip(queries, got):
        j = min(range(40), key=lambda i: (np.sum((q - ref[i]) ** 2), i))
        assert g == labels[j]
    with pytest.raises(CapacityError):
        one_nn_classify(np.zeros(3), np.empty((0, 3)), [])


def test_logreg_gradient():
    rng = np.random.default_rng(4)
    W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    x, y = rng.normal(size=(10, 4)), rng.integers(0, 3, size=10)

    def fn():
        loss, gW, gb = logreg_loss_and_grad(W, b, x, y, 0.1)
        return loss, [gW, gb]

    assert grad_check(fn, [W, b]) < 1e-5


def test_svm_hinge_inactive_beyond_margin():
    x = np.array([[2.0, 0.0], [-2.0, 0.0]])
    W = np.array([[-1.0, 0.0], [1.0, 0.0]])
    loss, gW, gb = svm_loss_and_grad(W, np.zeros(2), x, np.array([1, 0]), C=10.0)
    assert loss == pytest.approx(0.5 * np.sum(W * W))
    np.testing.assert_array_equal(gW, W)
    assert not gb.any()


def test_zero_init_predicts_lowest_class():
    x, y = blobs(np.random.default_rng(5))
    assert set(fit_logreg(x, y, steps=0).predict(x)) == {3}
    assert set(fit_linear_svm(x, y, steps=0).predict(x)) == {3}


@pytest.mark.parametrize("seed", range(5))
def test_separable_blobs(seed):
    rng = np.random.default_rng(seed)
    x, y = blobs(rng)
    lr = fit_logreg(x, y, steps=500)
    svm = fit_linear_svm(x, y, steps=500)
    assert (lr.predict(x) == y).all() and (svm.predict(x) == y).all()
    # held-out grid over the two blob regions (+-2 sigma around each centre)
    axis = np.linspace(-2, 2, 30)
    square = np.stack(np.meshgrid(axis, axis), -1).reshape(-1, 2)
    grid = np.vstack([square + x[y == c].mean(axis=0) for c in (3, 7)])
    assert np.mean(lr.predict(grid) == svm.predict(grid)) >= 0.99
    scaled = fit_logreg(4 * x, y, lr=0.5 / 16, steps=500)
    assert (scaled.predict(4 * x) == y).all()


def test_single_class_is_rejected():
    with pytest.raises(ContractError):
        fit_logreg(np.zeros((3, 2)), [1, 1, 1])
    with pytest.raises(ContractError):
        fit_linear_svm(np.zeros((3, 2)), [1, 1, 1])


def test_baseline_one_shot_prototype_is_support(desk):
    fs, _, _ = desk
    ep = sample_episode(fs, 5, 1, 15, np.random.default_rng(0))
    task = build_task_model(fs, ep)
    for p in task.prototypes:
        row = ep.support[list(ep.classes).index(p.class_id), 0]
        np.testing.assert_array_equal(p.vector, fs.features[row])


def test_zero_generator_weight_reduces_to_baseline(desk, desk_pair):
    fs, table, _ = desk
    ep = sample_episode(fs, 5, 1, 15, np.random.default_rng(1))
    q = fs.features[ep.query.ravel()]
    base = build_task_model(fs, ep).predict(q)
    svae = build_task_model(fs, ep, "svae", model=desk_pair.svae, semantics=table, gen_count=50,
                            weights=(0.0, 1.0), rng=np.random.default_rng(2)).predict(q)
    np.testing.assert_array_equal(base, svae)


@pytest.mark.parametrize("classifier", CLASSIFIERS)
@pytest.mark.parametrize("method", ["baseline", "svae", "zeroshot"])
def test_classifiers_predict_episode_classes(desk, desk_pair, method, classifier):
    fs, table, _ = desk
    ep = sample_episode(fs, 5, 1, 15, np.random.default_rng(3))
    task = build_task_model(fs, ep, method, classifier, desk_pair.svae, table, gen_count=20,
                            rng=np.random.default_rng(4))
    pred = task.predict(fs.features[ep.query.ravel()])
    assert set(pred) <= set(ep.classes)
    assert sorted(task.classes) == sorted(ep.classes)


def test_non_baseline_needs_model(desk):
    fs, table, _ = desk
    ep = sample_episode(fs, 5, 1, 15, np.random.default_rng(0))
    with pytest.raises(ContractError):
        build_task_model(fs, ep, "svae", semantics=table)


def test_zero_shot_prototype(desk, clean, clean_model):
    fs, table, truth = clean
    a = table[fs.classes(Split.NOVEL)[0]]
    p = zero_shot_prototype(clean_model, a, 1, np.random.default_rng(5))
    np.testing.assert_array_equal(p.vector, generate_features(clean_model, a, 1, np.random.default_rng(5))[0])
    assert p.provenance is Provenance.GENERATED_ONLY
    rng = np.random.default_rng(6)
    zero, one = [], []
    for c in fs.classes(Split.NOVEL):
        zp = zero_shot_prototype(clean_model, table[c], 500, rng, int(c))
        zero.append(np.linalg.norm(zp.vector - truth.mean(c)))
        one.append(np.linalg.norm(fs.features[rng.choice(fs.class_indices(c))] - truth.mean(c)))
    assert np.mean(zero) < np.mean(one)
