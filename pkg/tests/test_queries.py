"""
Unit tests for question parsing, soft scores, their gradients and the clean
margin report.
"""

import numpy as np
import pytest

from src.concepts import POSITIONS, Concept
from src.errors import QuestionParseError, ZeroNormError
from src.hdc import bind, bundle_many, cosine
from src.queries import (
    GENERALIZATION_QUESTIONS,
    NAMED_SETS,
    TRAINED_QUESTIONS,
    Question,
    Template,
    clean_margin_report,
    ground_truth,
    occurrences,
    parse_question,
    parse_questions,
    score,
    score_batch,
    score_with_grad,
)
from src.scenes import Scene, encode_scene, label_scene

ALL_QUESTIONS = NAMED_SETS["all"]


def reference_score(question: Question, m: np.ndarray, cb) -> float:
    """Scalar re-statement of every query, written with the algebra primitives only."""
    def probe(position, key):
        return bind(cb[key], bind(cb[position], m))

    t = question.template
    if t is Template.EXISTS_SHAPE:
        return sum(cosine(cb[question.shape], probe(p, Concept.SHAPE)) for p in POSITIONS)
    if t is Template.EXISTS_COLOR:
        return sum(cosine(cb[question.color], probe(p, Concept.COLOR)) for p in POSITIONS)
    if t is Template.EXISTS_COLOR_SHAPE:
        return sum(cosine(cb[question.color], probe(p, Concept.COLOR))
                   * cosine(cb[question.shape], probe(p, Concept.SHAPE)) for p in POSITIONS)
    if t is Template.SHAPE_AT_POSITION:
        return cosine(cb[question.shape], probe(question.position, Concept.SHAPE))
    return cosine(probe(question.position, Concept.SHAPE), probe(question.other_position, Concept.SHAPE))


def attribute_only_encoding(scene: Scene, key: Concept, cb) -> np.ndarray:
    """Encoding that keeps only the ``key`` half of every placement."""
    return bundle_many(
        bind(cb[p.position], bind(cb[key], cb[getattr(p.figure, key.value)])) for p in scene.placements
    )


@pytest.mark.parametrize("text", [q.compact() for q in ALL_QUESTIONS])
def test_compact_round_trip(text):
    """Compact question strings parse and print back unchanged."""
    assert parse_question(text).compact() == text


@pytest.mark.parametrize("text", [
    "exists-shape:red",
    "exists-shape:hexagon",
    "exists-color:circle",
    "exists:green",
    "exists:circle+green",
    "at:top-left",
    "at:middle=square",
    "same-shape:top-left",
    "same-shape:top-left,square",
    "is-there:circle",
    "exists-shape",
    "",
])
def test_invalid_questions(text):
    """Malformed question strings raise QuestionParseError."""
    with pytest.raises(QuestionParseError):
        parse_question(text)


def test_parse_questions_expands_sets_and_keeps_commas():
    """Named sets expand and same-shape commas are not split."""
    questions = parse_questions("trained, same-shape:bottom-left,bottom-right, exists-shape:cross")
    assert len(questions) == 7
    assert questions[5].other_position is Concept.BOTTOM_RIGHT
    assert parse_questions("generalization") == list(GENERALIZATION_QUESTIONS)
    with pytest.raises(QuestionParseError):
        parse_questions(" , ")


def test_thresholds():
    """The color and shape conjunction uses 0.25, every other template 0.5."""
    assert [q.threshold for q in TRAINED_QUESTIONS] == [0.5, 0.5, 0.25, 0.5, 0.5]


def test_question_operands_are_checked():
    """Operands of the wrong role are rejected."""
    with pytest.raises(ValueError):
        Question(template=Template.EXISTS_SHAPE, color=Concept.RED)
    with pytest.raises(ValueError):
        Question(template=Template.SHAPE_AT_POSITION, shape=Concept.SQUARE, position=Concept.RED)


def test_scores_match_scalar_reference(cb, rng):
    """Batched scores match a scalar restatement of each query."""
    M = rng.normal(size=(5, cb.dim))
    for question in ALL_QUESTIONS:
        values = score_batch(question, M, cb)
        for m, value in zip(M, values):
            assert value == pytest.approx(reference_score(question, m, cb), rel=1e-12, abs=1e-12)


def test_scores_are_scale_invariant(cb, rng):
    """Scaling the knowledge vector leaves every score unchanged."""
    m = rng.normal(size=cb.dim)
    for question in ALL_QUESTIONS:
        assert score_batch(question, 2.0 * m, cb)[0] == pytest.approx(score_batch(question, m, cb)[0], rel=1e-12)


def test_same_shape_of_identical_probes_is_one(cb, rng):
    """Same-shape scores 1 when both positions hold the same probe."""
    tl, tr = cb[Concept.TOP_LEFT], cb[Concept.TOP_RIGHT]
    m = np.where(tl == tr, rng.normal(size=cb.dim), 0.0)
    question = parse_question("same-shape:top-left,top-right")
    assert score(question, m, cb).value == pytest.approx(1.0, abs=1e-12)


def test_pure_signal_scores_one(cb):
    """A vector holding only the asked attribute scores 1."""
    question = parse_question("at:top-left=circle")
    m = bind(cb[Concept.TOP_LEFT], bind(cb[Concept.SHAPE], cb[Concept.CIRCLE]))
    result = score(question, m, cb)
    assert result.value == pytest.approx(1.0)
    assert result.answer
    assert result.threshold == 0.5


def test_zero_vector(cb):
    """A zero knowledge vector raises unless zeros are allowed."""
    question = TRAINED_QUESTIONS[0]
    with pytest.raises(ZeroNormError):
        score_batch(question, np.zeros(cb.dim), cb)
    with pytest.raises(ZeroNormError):
        score_with_grad(question, np.zeros((2, cb.dim)), cb)
    assert score_batch(question, np.zeros((2, cb.dim)), cb, on_zero="zero").tolist() == [0.0, 0.0]


def test_score_gradients_match_finite_differences(tiny_cb, rng):
    """Score gradients agree with central differences."""
    eps = 1e-6
    m = rng.normal(size=tiny_cb.dim)
    for question in ALL_QUESTIONS:
        _, grad = score_with_grad(question, m, tiny_cb)
        numeric = np.empty(tiny_cb.dim)
        for i in range(tiny_cb.dim):
            step = np.zeros(tiny_cb.dim)
            step[i] = eps
            numeric[i] = (score_batch(question, m + step, tiny_cb)[0]
                          - score_batch(question, m - step, tiny_cb)[0]) / (2 * eps)
        rel = np.linalg.norm(grad[0] - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert rel < 1e-6, question.compact()


def test_decomposition_identity(cb, unique_scenes):
    """Unbinding a position and the shape key expands into signal plus three noise terms."""
    for scene in unique_scenes[::11]:
        (a, b) = scene.placements
        m = encode_scene(scene, cb)
        disentangled = bind(cb[a.position], bind(cb[Concept.SHAPE], m))
        expected = (cb[a.figure.shape]
                    + cb[Concept.SHAPE] * cb[Concept.COLOR] * cb[a.figure.color]
                    + cb[a.position] * cb[b.position] * cb[b.figure.shape]
                    + cb[a.position] * cb[b.position] * cb[Concept.SHAPE] * cb[Concept.COLOR] * cb[b.figure.color])
        assert np.array_equal(disentangled, expected)


def test_ground_truth_agrees_with_labels(unique_scenes):
    """ground_truth reproduces the stored labels for every scene."""
    for scene in unique_scenes:
        q, g = label_scene(scene)
        assert tuple(ground_truth(question, scene) for question in TRAINED_QUESTIONS) == q
        assert tuple(ground_truth(question, scene) for question in GENERALIZATION_QUESTIONS) == g


def test_occurrences_count_figures():
    """occurrences counts the figures matching a question."""
    scene = Scene.of((Concept.TOP_LEFT, Concept.CIRCLE, Concept.GREEN),
                     (Concept.BOTTOM_LEFT, Concept.CIRCLE, Concept.GREEN))
    assert occurrences(parse_question("exists-shape:circle"), scene) == 2
    assert occurrences(parse_question("exists:green+circle"), scene) == 2
    assert occurrences(parse_question("same-shape:top-left,top-right"), scene) == 0


def test_attribute_only_encodings_answer_correctly(cb, unique_scenes):
    """
    With the other attribute removed from every placement, a present shape or
    color scores about 0.71 per figure and absent ones stay near 0, so the
    thresholds separate them. The color+shape product has no such encoding:
    its best single-figure score is the threshold itself.
    """
    questions = [q for q in ALL_QUESTIONS if q.template is not Template.EXISTS_COLOR_SHAPE]
    shapes_only = np.stack([attribute_only_encoding(s, Concept.SHAPE, cb) for s in unique_scenes])
    colors_only = np.stack([attribute_only_encoding(s, Concept.COLOR, cb) for s in unique_scenes])
    for question in questions:
        M = colors_only if question.template is Template.EXISTS_COLOR else shapes_only
        answers = score_batch(question, M, cb) > question.threshold
        truth = np.array([ground_truth(question, s) for s in unique_scenes])
        assert np.mean(answers == truth) >= 0.99, question.compact()


def test_clean_scores_without_a_circle_answer_no(cb, unique_scenes):
    """Clean encodings without a circle score below 0.3 in magnitude."""
    question = parse_question("exists-shape:circle")
    scenes = [s for s in unique_scenes if not ground_truth(question, s)]
    values = score_batch(question, np.stack([encode_scene(s, cb) for s in scenes]), cb)
    assert np.all(np.abs(values) < 0.3)
    assert np.mean(np.abs(values)) < 0.1


def test_clean_margins_sit_at_the_thresholds(cb, unique_scenes):
    """Single matching figures score near the threshold and absent ones near 0."""
    report = clean_margin_report(unique_scenes, cb)
    assert report.scene_count == 1536
    for question in TRAINED_QUESTIONS[:4]:
        margins = report.for_question(question.compact())
        assert margins.by_occurrences["1"].mean == pytest.approx(question.threshold, abs=0.1)
        assert margins.by_occurrences["0"].mean == pytest.approx(0.0, abs=0.1)
    two_circles = report.for_question("exists-shape:circle").by_occurrences["2"]
    assert two_circles.mean == pytest.approx(1.0, abs=0.1)


def test_clean_same_shape_scores_track_shape_and_color(cb, unique_scenes):
    """Clean same-shape scores add about 0.5 for a shared shape and 0.5 for a shared color."""
    question = parse_question("same-shape:top-left,top-right")
    cases = {}
    for scene in unique_scenes:
        left = scene.figure_at(Concept.TOP_LEFT)
        right = scene.figure_at(Concept.TOP_RIGHT)
        if left is None or right is None:
            continue
        key = (left.shape == right.shape, left.color == right.color)
        cases.setdefault(key, []).append(encode_scene(scene, cb))
    means = {key: float(np.mean(score_batch(question, np.stack(ms), cb))) for key, ms in cases.items()}
    assert means[(True, True)] == pytest.approx(1.0, abs=0.01)
    assert means[(True, False)] == pytest.approx(0.499, abs=0.01)
    assert means[(False, True)] == pytest.approx(0.505, abs=0.01)
    assert means[(False, False)] == pytest.approx(0.004, abs=0.01)


def test_margin_report_needs_scenes(cb):
    """An empty scene list is rejected."""
    with pytest.raises(ValueError):
        clean_margin_report([], cb)
