"""Contrastive losses, analytic gradients, and the toy projection head."""

import numpy as np
import pytest

from conftest import fd_gradient
from pointlift.classdict import semi_positive_weights
from pointlift.synth import SynthSpec, default_dictionary, generate_scene, generate_teacher
from pointlift.tmp import (
    TmpBatch,
    ToyHead,
    loss_ip,
    loss_tmp,
    loss_tp,
    train_toy_head,
)


def _unit(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _random_batch(rng, r, d):
    prompts = np.arange(r)  # distinct prompts, classes paired two-by-two
    return TmpBatch(
        superpoint=_unit(rng.normal(size=(r, d))),
        superpixel=_unit(rng.normal(size=(r, d))),
        text=_unit(rng.normal(size=(r, d))),
        class_of=prompts // 2,
        prompt_of=prompts,
    )


def test_loss_ip_perfectly_aligned_orthogonal_pairs():
    # aligned pairs on orthogonal axes: loss = log(1 + exp(-1/tau)), frozen
    rows = np.eye(8)[:2]
    batch = TmpBatch(rows, rows, np.eye(8)[2:4], np.array([0, 1]), np.array([0, 1]))
    loss, grad = loss_ip(batch)
    assert loss == pytest.approx(6.248747563830648e-07, rel=1e-9)
    # near the optimum the residual gradient scales like loss / tau
    assert np.abs(grad).max() < 1e-5


def test_loss_ip_uniform_similarities():
    # identical positives and negatives: loss = log(R)
    row = np.array([[1.0, 0.0]])
    rows = np.repeat(row, 3, axis=0)
    batch = TmpBatch(rows, rows, _unit(np.ones((3, 2))), np.zeros(3), np.arange(3))
    loss, _ = loss_ip(batch)
    assert loss == pytest.approx(np.log(3.0), rel=1e-12)


def test_loss_tp_excludes_same_prompt_rows():
    # rows 0 and 1 share a prompt, so each sees itself plus row 2 in the
    # denominator; row 2 competes against every row
    text = np.eye(3)
    sp = np.eye(3)
    batch = TmpBatch(sp, sp, text, np.array([0, 0, 1]), np.array([0, 0, 1]))
    loss, _ = loss_tp(batch, np.zeros((3, 3)))
    e = np.exp(1 / 0.07)
    expected = (2 * np.log(e + 1.0) + np.log(e + 2.0) - 3 / 0.07) / 3.0
    assert loss == pytest.approx(expected, rel=1e-12)
    # with all prompts distinct, anchors 0/1 face one more negative each
    distinct = TmpBatch(sp, sp, text, np.array([0, 0, 1]), np.array([0, 1, 2]))
    loss_d, _ = loss_tp(distinct, np.zeros((3, 3)))
    assert loss_d == pytest.approx(np.log(e + 2.0) - 1 / 0.07, rel=1e-12)
    assert loss_d > loss


def test_loss_tp_alpha_scales_negative_exponent():
    rng = np.random.default_rng(2)
    batch = _random_batch(rng, 4, 5)
    alpha = np.zeros((4, 4))
    alpha[0, 1] = alpha[1, 0] = 0.9
    l_damped, _ = loss_tp(batch, alpha)
    l_plain, _ = loss_tp(batch, np.zeros((4, 4)))
    assert l_damped != l_plain  # the semi-positive weight must matter


def test_loss_tp_alpha_must_be_symmetric():
    rng = np.random.default_rng(3)
    batch = _random_batch(rng, 3, 4)
    alpha = np.zeros((3, 3))
    alpha[0, 1] = 0.5
    with pytest.raises(ValueError, match="symmetric"):
        loss_tp(batch, alpha)


def test_loss_tmp_combination():
    rng = np.random.default_rng(4)
    batch = _random_batch(rng, 4, 6)
    alpha = np.zeros((4, 4))
    report = loss_tmp(batch, alpha=alpha)
    ip, g_ip = loss_ip(batch)
    tp, g_tp = loss_tp(batch, alpha)
    assert report.l_tmp == pytest.approx(0.5 * ip + 0.5 * tp, rel=1e-12)
    assert np.allclose(report.grad_superpoints, 0.5 * g_ip + 0.5 * g_tp, atol=1e-15)


def test_loss_tmp_alpha_from_dictionary():
    classdict = default_dictionary(("road", "car"))
    rng = np.random.default_rng(5)
    text = _unit(rng.normal(size=(3, 4)))
    batch = TmpBatch(_unit(rng.normal(size=(3, 4))), _unit(rng.normal(size=(3, 4))),
                     text, np.array([0, 0, 1]), np.array([0, 1, 2]))
    report = loss_tmp(batch, classdict=classdict)
    alpha = semi_positive_weights(text, classdict, prompt_ids=batch.prompt_of)
    manual = loss_tmp(batch, alpha=alpha)
    assert report.l_tmp == manual.l_tmp


def test_loss_tmp_requires_alpha_or_dictionary():
    rng = np.random.default_rng(6)
    with pytest.raises(ValueError, match="alpha or a class dictionary"):
        loss_tmp(_random_batch(rng, 2, 3))


def test_gradient_ip_matches_finite_differences():
    rng = np.random.default_rng(7)
    batch = _random_batch(rng, 4, 6)
    _, grad = loss_ip(batch)

    def f(x):
        b = TmpBatch(x, batch.superpixel, batch.text, batch.class_of, batch.prompt_of)
        return loss_ip(b)[0]

    fd = fd_gradient(f, batch.superpoint)
    assert np.abs(fd - grad).max() / np.abs(fd).max() < 1e-7


def test_gradient_tp_matches_finite_differences():
    rng = np.random.default_rng(8)
    batch = _random_batch(rng, 4, 6)
    alpha = semi_positive_weights(batch.text, default_dictionary(("road", "car")),
                                  prompt_ids=batch.prompt_of)
    _, grad = loss_tp(batch, alpha)

    def f(x):
        b = TmpBatch(x, batch.superpixel, batch.text, batch.class_of, batch.prompt_of)
        return loss_tp(b, alpha)[0]

    fd = fd_gradient(f, batch.superpoint)
    assert np.abs(fd - grad).max() / np.abs(fd).max() < 1e-7


def test_batch_validation():
    rows = _unit(np.random.default_rng(9).normal(size=(2, 3)))
    with pytest.raises(ValueError, match="temperature"):
        TmpBatch(rows, rows, rows, np.zeros(2), np.arange(2), tau=0.0)
    with pytest.raises(ValueError, match="unit-norm"):
        TmpBatch(rows, 2 * rows, rows, np.zeros(2), np.arange(2))
    with pytest.raises(ValueError, match="empty"):
        TmpBatch(rows[:0], rows[:0], rows[:0], np.zeros(0), np.zeros(0))


def test_toy_head_init_deterministic_and_round_trip(tmp_path):
    a = ToyHead.init(6, 8, seed=42)
    b = ToyHead.init(6, 8, seed=42)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
    path = str(tmp_path / "head.json")
    a.save(path)
    back = ToyHead.load(path)
    assert np.array_equal(back.weights, a.weights)
    assert np.array_equal(back.bias, a.bias)


def _train_fixture():
    spec = SynthSpec(seed=1, n_points=800, classes=("road", "car", "building"),
                     noise_rate=0.0, n_cameras=1, mask_tile=None)
    classdict = default_dictionary(spec.classes)
    bundle = generate_scene(spec)
    teacher = generate_teacher(bundle, classdict, spec)
    return bundle, teacher, classdict


def test_training_reduces_loss_and_is_deterministic():
    bundle, teacher, classdict = _train_fixture()
    a = train_toy_head(bundle, teacher.mask_sets, classdict, steps=50, lr=0.5, seed=1)
    b = train_toy_head(bundle, teacher.mask_sets, classdict, steps=50, lr=0.5, seed=1)
    assert a.final.l_tmp < a.trace[0][3]
    assert np.array_equal(a.head.weights, b.head.weights)
    assert np.array_equal(a.head.bias, b.head.bias)
    assert a.trace == b.trace


def test_training_zero_steps_leaves_head_at_init():
    bundle, teacher, classdict = _train_fixture()
    res = train_toy_head(bundle, teacher.mask_sets, classdict, steps=0, lr=0.5, seed=1)
    init = ToyHead.init(bundle.feature_dim, teacher.text_features.shape[1], seed=1)
    assert np.array_equal(res.head.weights, init.weights)
    assert res.final is None and res.trace == []


def test_training_empty_correspondence_rejected():
    bundle, teacher, classdict = _train_fixture()
    empty = [type(ms)(ms.camera_index, ms.width, ms.height, [],
                      ms.mask_features[:0], ms.text_features)
             for ms in teacher.mask_sets]
    with pytest.raises(ValueError, match="no correspondence pairs"):
        train_toy_head(bundle, empty, classdict, steps=5, lr=0.5, seed=1)


def test_trace_round_trips_through_csv(tmp_path):
    bundle, teacher, classdict = _train_fixture()
    res = train_toy_head(bundle, teacher.mask_sets, classdict, steps=5, lr=0.5, seed=1)
    path = str(tmp_path / "trace.csv")
    res.write_trace(path)
    rows = np.genfromtxt(path, delimiter=",", names=True)
    assert len(rows) == 5
    assert float(rows["l_tmp"][0]) == res.trace[0][3]
