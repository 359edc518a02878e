"""
Unit tests for the query losses, their gradients through the network, the
training loop and evaluation.
"""

import math

import numpy as np
import pytest

from src.concepts import POSITIONS, Concept
from src.errors import ZeroNormError
from src.network import MlpModel, backward, forward, init_model
from src.queries import NAMED_SETS, TRAINED_QUESTIONS, ground_truth, parse_question, score
from src.scenes import flatten_image
from src.training import (
    LOSS_COLUMNS,
    TrainConfig,
    batch_gradients,
    evaluate,
    evaluate_vectors,
    history_frame,
    loss_terms,
    query_losses,
    train,
)

TINY_SIZES = (2352, 16, 16, 64)



def _cos(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    return dot / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)))


def _probe(cb, position, key, m):
    p = cb[position].tolist()
    k = cb[key].tolist()
    return [k[i] * p[i] * m[i] for i in range(len(m))]


def oracle_contributions(m, cb, q):
    """The five squared errors, recomputed with plain Python loops."""
    shape_vec = {s: cb[s].tolist() for s in (Concept.CIRCLE, Concept.SQUARE, Concept.TRIANGLE)}
    s1 = sum(_cos(shape_vec[Concept.CIRCLE], _probe(cb, p, Concept.SHAPE, m)) for p in POSITIONS)
    s2 = sum(_cos(cb[Concept.GREEN].tolist(), _probe(cb, p, Concept.COLOR, m)) for p in POSITIONS)
    s3 = sum(_cos(cb[Concept.MAGENTA].tolist(), _probe(cb, p, Concept.COLOR, m))
             * _cos(shape_vec[Concept.TRIANGLE], _probe(cb, p, Concept.SHAPE, m)) for p in POSITIONS)
    s4 = _cos(shape_vec[Concept.SQUARE], _probe(cb, Concept.BOTTOM_LEFT, Concept.SHAPE, m))
    s5 = _cos(_probe(cb, Concept.TOP_LEFT, Concept.SHAPE, m), _probe(cb, Concept.TOP_RIGHT, Concept.SHAPE, m))
    return [(s - float(t)) ** 2 for s, t in zip((s1, s2, s3, s4, s5), q)]


def test_loss_terms_match_scalar_oracle(cb, dataset):
    """Loss contributions agree with plain-Python loops."""
    sizes = (2352, 200, 200, cb.dim)
    model = MlpModel.zeros(sizes)
    model.params[5][:] = np.arctanh(0.5)
    for record in dataset.records[:3]:
        terms = loss_terms(model, record, cb)
        expected = oracle_contributions([0.5] * cb.dim, cb, record.q)
        np.testing.assert_allclose(terms.contributions, expected, rtol=0, atol=1e-10)
        assert terms.output_gradient.shape == (cb.dim,)


def test_loss_gradient_wrt_output_matches_finite_differences(tiny_cb, rng):
    """dE/dm agrees with central differences."""
    eps = 1e-6
    for _ in range(3):
        m = rng.normal(size=tiny_cb.dim)
        targets = rng.integers(0, 2, size=5).astype(float)
        analytic = query_losses(m, targets, tiny_cb).output_gradient[0]
        numeric = np.empty_like(m)
        for i in range(m.size):
            step = np.zeros_like(m)
            step[i] = eps
            up = query_losses(m + step, targets, tiny_cb).contributions.sum()
            down = query_losses(m - step, targets, tiny_cb).contributions.sum()
            numeric[i] = (up - down) / (2 * eps)
        assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-6


def test_full_chain_gradient_matches_finite_differences(tiny_cb, rng):
    """Parameter gradients through queries and network agree with central differences."""
    sizes = (64, 16, 16, tiny_cb.dim)  # 8x8 single-channel input
    x = rng.uniform(0.0, 1.0, size=(4, 64))
    targets = rng.integers(0, 2, size=(4, 5)).astype(float)
    eps = 1e-6

    for point in range(5):
        model = init_model(100 + point, sizes)
        for bias in model.params[1::2]:
            bias += rng.normal(scale=0.1, size=bias.shape)

        def mean_loss():
            out = forward(model, x).out
            return query_losses(out, targets, tiny_cb).contributions.sum(axis=1).mean()

        _, grads = batch_gradients(model, x, targets, tiny_cb)
        for p, g in zip(model.params, grads):
            numeric = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                saved = p[idx]
                p[idx] = saved + eps
                up = mean_loss()
                p[idx] = saved - eps
                down = mean_loss()
                p[idx] = saved
                numeric[idx] = (up - down) / (2 * eps)
            assert np.linalg.norm(g - numeric) / max(np.linalg.norm(numeric), 1e-12) < 1e-3


def test_total_loss_is_sum_of_terms(cb, rng):
    """The record loss is the sum of its five terms."""
    outputs = rng.normal(size=(6, cb.dim))
    targets = rng.integers(0, 2, size=(6, 5)).astype(float)
    total = query_losses(outputs, targets, cb).contributions.sum()
    separate = sum(
        query_losses(outputs, targets[:, [i]], cb, [question]).contributions.sum()
        for i, question in enumerate(TRAINED_QUESTIONS)
    )
    assert total == pytest.approx(separate, rel=1e-12)


def test_output_gradient_flows_through_backward(tiny_cb, tiny_dataset):
    """Output gradients reach every parameter tensor."""
    model = init_model(1, TINY_SIZES)
    record = tiny_dataset.records[0]
    terms = loss_terms(model, record, tiny_cb)
    grads = backward(model, forward(model, flatten_image(record.image)), terms.output_gradient)
    assert [g.shape for g in grads] == model.shapes()


def test_training_is_deterministic(tiny_cb, tiny_dataset):
    """Two runs with the same config give identical models and histories."""
    model = init_model(11, TINY_SIZES)
    before = [p.copy() for p in model.params]
    config = TrainConfig(epochs=3, batch_size=16, learning_rate=1e-3)
    subset = tiny_dataset.indices("train")[:64]

    first = train(model, tiny_dataset, tiny_cb, config, train_idx=subset)
    second = train(model, tiny_dataset, tiny_cb, config, train_idx=subset)
    for p, q in zip(first.model.params, second.model.params):
        assert np.array_equal(p, q)
    assert [r.mean_loss for r in first.history] == [r.mean_loss for r in second.history]
    # the input model is left alone
    for p, q in zip(model.params, before):
        assert np.array_equal(p, q)


def test_training_reduces_loss(tiny_cb, tiny_dataset):
    """A few epochs lower the mean train loss."""
    config = TrainConfig(epochs=10, batch_size=16, learning_rate=1e-3)
    result = train(init_model(11, TINY_SIZES), tiny_dataset, tiny_cb, config,
                   train_idx=tiny_dataset.indices("train")[:64])
    assert result.history[-1].mean_loss < result.history[0].mean_loss
    frame = history_frame(result.history)
    assert list(frame.columns) == ["epoch", "mean_loss", *LOSS_COLUMNS, "wall_seconds"]
    assert frame["mean_loss"].to_numpy() == pytest.approx(frame[list(LOSS_COLUMNS)].sum(axis=1).to_numpy())


def test_early_stop(tiny_cb, tiny_dataset):
    """Training stops once the loss falls below the early-stop level."""
    config = TrainConfig(epochs=5, batch_size=16, early_stop=100.0)
    result = train(init_model(11, TINY_SIZES), tiny_dataset, tiny_cb, config,
                   train_idx=tiny_dataset.indices("train")[:32])
    assert result.stopped_early
    assert len(result.history) == 1


def test_training_rejects_bad_inputs(cb, tiny_cb, tiny_dataset):
    """Oversized batches, mismatched codebooks and zero outputs are rejected."""
    model = init_model(11, TINY_SIZES)
    with pytest.raises(ValueError):
        train(model, tiny_dataset, tiny_cb, TrainConfig(batch_size=64), train_idx=[0, 1, 2])
    with pytest.raises(ValueError):
        train(model, tiny_dataset, cb, TrainConfig(epochs=1))
    with pytest.raises(ZeroNormError):
        train(MlpModel.zeros(TINY_SIZES), tiny_dataset, tiny_cb, TrainConfig(epochs=1, batch_size=4),
              train_idx=[0, 1, 2, 3])


def test_train_config_validation():
    """Out-of-range optimizer settings are rejected."""
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(betas=(0.9, 1.0))


def test_zero_model_scores_the_base_rate(cb, dataset):
    """A zero model answers no everywhere and never beats the base rate."""
    records = [dataset.records[i] for i in dataset.indices("test")]
    report = evaluate(MlpModel.zeros((2352, 200, 200, cb.dim)), records, TRAINED_QUESTIONS, cb, split="test")
    for result in report.questions:
        assert result.accuracy == pytest.approx(1.0 - result.positive_rate)
        assert result.accuracy <= result.base_rate
        assert not result.above_base_rate
        assert result.tp == 0 and result.fp == 0
    assert report.cross_is_worst is None


def test_evaluate_agrees_with_single_queries(tiny_cb, tiny_dataset):
    """Report accuracies match answering record by record."""
    model = init_model(2, TINY_SIZES)
    records = [tiny_dataset.records[i] for i in tiny_dataset.indices("test")[:50]]
    report = evaluate(model, records, NAMED_SETS["all"], tiny_cb, split="test")
    assert report.record_count == 50
    assert report.cross_is_worst is not None
    for question, result in zip(NAMED_SETS["all"], report.questions):
        correct = 0
        for record in records:
            out = forward(model, flatten_image(record.image)).out
            correct += score(question, out, tiny_cb).answer == ground_truth(question, record.scene)
        assert result.accuracy == pytest.approx(correct / len(records))
    assert report.table().shape[0] == len(NAMED_SETS["all"])
    assert report.accuracy("exists-shape:cross") == report.questions[-1].accuracy


def test_answering_no_everywhere_does_not_beat_the_base_rate(cb, unique_scenes):
    """All-zero outputs answer no for every record, which only ties the majority class."""
    question = parse_question("exists-shape:cross")
    positives = [s for s in unique_scenes if ground_truth(question, s)][:199]
    negatives = [s for s in unique_scenes if not ground_truth(question, s)][:261]
    scenes = positives + negatives
    report = evaluate_vectors(np.zeros((len(scenes), cb.dim)), scenes, [question], cb)
    result = report.questions[0]
    assert (result.tp, result.fp, result.tn, result.fn) == (0, 0, 261, 199)
    assert result.accuracy == result.base_rate
    assert not result.above_base_rate


def test_published_values_attached(cb, dataset):
    """Unseen existence questions carry their published accuracies."""
    records = [dataset.records[i] for i in dataset.indices("test")[:10]]
    report = evaluate(MlpModel.zeros((2352, 200, 200, cb.dim)), records, NAMED_SETS["generalization"], cb)
    assert [q.published_accuracy for q in report.questions] == [0.72, 0.69, 0.60]
