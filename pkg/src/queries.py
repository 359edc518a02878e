"""
Threshold queries against a knowledge-base hypervector.

Every question has a soft score (a sum or product of cosines, differentiable in
the queried vector) and a hard answer ``score > threshold``. The same code
scores clean encodings and network outputs, and supplies the gradient of the
score with respect to the vector for training.
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.concepts import POSITIONS, Concept, Role, require_role
from src.errors import DimensionMismatchError, QuestionParseError, ZeroNormError
from src.hdc import Codebook
from src.scenes import Scene, encode_scene

logger = logging.getLogger(__name__)

HIST_BINS = 20
HIST_RANGE = (-1.5, 2.5)


class Template(str, Enum):
    EXISTS_SHAPE = "exists-shape"
    EXISTS_COLOR = "exists-color"
    EXISTS_COLOR_SHAPE = "exists"
    SHAPE_AT_POSITION = "at"
    SAME_SHAPE = "same-shape"


class Question(BaseModel):
    """
    One instance of a question template.

    Attributes:
        template (Template): Which query equation to evaluate.
        shape (Optional[Concept]): Shape operand (exists-shape, exists, at).
        color (Optional[Concept]): Color operand (exists-color, exists).
        position (Optional[Concept]): Position operand (at, first of same-shape).
        other_position (Optional[Concept]): Second position of same-shape.
    """
    model_config = ConfigDict(frozen=True)

    template: Template
    shape: Optional[Concept] = None
    color: Optional[Concept] = None
    position: Optional[Concept] = None
    other_position: Optional[Concept] = None

    @model_validator(mode="after")
    def _operands_match_template(self) -> "Question":
        needed = {
            Template.EXISTS_SHAPE: {"shape"},
            Template.EXISTS_COLOR: {"color"},
            Template.EXISTS_COLOR_SHAPE: {"color", "shape"},
            Template.SHAPE_AT_POSITION: {"shape", "position"},
            Template.SAME_SHAPE: {"position", "other_position"},
        }[self.template]
        given = {k for k in ("shape", "color", "position", "other_position") if getattr(self, k) is not None}
        if given != needed:
            raise ValueError(f"{self.template.value} takes {sorted(needed)}, got {sorted(given)}")
        if self.shape is not None:
            require_role(self.shape, Role.SHAPE)
        if self.color is not None:
            require_role(self.color, Role.COLOR)
        for pos in (self.position, self.other_position):
            if pos is not None:
                require_role(pos, Role.POSITION)
        return self

    @property
    def threshold(self) -> float:
        return 0.25 if self.template is Template.EXISTS_COLOR_SHAPE else 0.5

    def compact(self) -> str:
        """Compact string form, inverse of ``parse_question``."""
        t = self.template
        if t is Template.EXISTS_SHAPE:
            return f"exists-shape:{self.shape.value}"
        if t is Template.EXISTS_COLOR:
            return f"exists-color:{self.color.value}"
        if t is Template.EXISTS_COLOR_SHAPE:
            return f"exists:{self.color.value}+{self.shape.value}"
        if t is Template.SHAPE_AT_POSITION:
            return f"at:{self.position.value}={self.shape.value}"
        return f"same-shape:{self.position.value},{self.other_position.value}"

    def __str__(self) -> str:
        return self.compact()


class QueryScore(BaseModel):
    """Soft score of one question on one vector, and its thresholded answer."""
    value: float
    threshold: float
    answer: bool


def _concept(text: str, role: Role, source: str) -> Concept:
    try:
        return require_role(Concept(text.strip()), role)
    except ValueError:
        raise QuestionParseError(f"'{text}' is not a {role.value} in question '{source}'") from None


def parse_question(text: str) -> Question:
    """
    Parses one compact question string.

    Examples: ``exists-shape:circle``, ``exists-color:green``,
    ``exists:magenta+triangle``, ``at:bottom-left=square``,
    ``same-shape:top-left,top-right``.

    Raises:
        QuestionParseError: On any unknown template or operand.
    """
    head, sep, body = text.strip().partition(":")
    if not sep or not body:
        raise QuestionParseError(f"question '{text}' must look like '<template>:<operands>'")
    try:
        template = Template(head)
    except ValueError:
        raise QuestionParseError(f"unknown question template '{head}' in '{text}'") from None

    if template is Template.EXISTS_SHAPE:
        return Question(template=template, shape=_concept(body, Role.SHAPE, text))
    if template is Template.EXISTS_COLOR:
        return Question(template=template, color=_concept(body, Role.COLOR, text))
    if template is Template.EXISTS_COLOR_SHAPE:
        color, plus, shape = body.partition("+")
        if not plus:
            raise QuestionParseError(f"'{text}' must look like 'exists:<color>+<shape>'")
        return Question(template=template, color=_concept(color, Role.COLOR, text),
                        shape=_concept(shape, Role.SHAPE, text))
    if template is Template.SHAPE_AT_POSITION:
        position, eq, shape = body.partition("=")
        if not eq:
            raise QuestionParseError(f"'{text}' must look like 'at:<position>=<shape>'")
        return Question(template=template, position=_concept(position, Role.POSITION, text),
                        shape=_concept(shape, Role.SHAPE, text))

    first, comma, second = body.partition(",")
    if not comma:
        raise QuestionParseError(f"'{text}' must look like 'same-shape:<position>,<position>'")
    return Question(template=template, position=_concept(first, Role.POSITION, text),
                    other_position=_concept(second, Role.POSITION, text))


TRAINED_QUESTIONS: Tuple[Question, ...] = tuple(parse_question(s) for s in (
    "exists-shape:circle",
    "exists-color:green",
    "exists:magenta+triangle",
    "at:bottom-left=square",
    "same-shape:top-left,top-right",
))
GENERALIZATION_QUESTIONS: Tuple[Question, ...] = tuple(parse_question(s) for s in (
    "exists-shape:square",
    "exists-shape:triangle",
    "exists-shape:cross",
))
NAMED_SETS: Dict[str, Tuple[Question, ...]] = {
    "trained": TRAINED_QUESTIONS,
    "generalization": GENERALIZATION_QUESTIONS,
    "all": TRAINED_QUESTIONS + GENERALIZATION_QUESTIONS,
}


def parse_questions(text: str) -> List[Question]:
    """
    Parses a comma separated list of questions and/or named sets.

    ``same-shape`` operands contain a comma themselves, so a token without a
    ``:`` is glued back onto the previous one.
    """
    tokens: List[str] = []
    for raw in text.split(","):
        token = raw.strip()
        if not token:
            continue
        if ":" not in token and token not in NAMED_SETS and tokens:
            tokens[-1] = f"{tokens[-1]},{token}"
        else:
            tokens.append(token)
    if not tokens:
        raise QuestionParseError("no questions given")

    questions: List[Question] = []
    for token in tokens:
        questions.extend(NAMED_SETS[token] if token in NAMED_SETS else [parse_question(token)])
    return questions


def _as_batch(m: np.ndarray, cb: Codebook) -> npt.NDArray[np.float64]:
    batch = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if batch.shape[-1] != cb.dim:
        raise DimensionMismatchError(batch.shape[-1], cb.dim)
    return batch


def _cos_to_target(U: np.ndarray, target: np.ndarray, need_grad: bool):
    """
    Cosine of each ``U[..., :]`` against a fixed target, and d cos / dU.

    Zero rows give NaN; callers decide what that means.
    """
    t_hat = target / np.linalg.norm(target)
    norms = np.linalg.norm(U, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        U_hat = U / norms
        cos = U_hat @ t_hat
        grad = (t_hat - cos[..., None] * U_hat) / norms if need_grad else None
    return cos, grad


def _cos_pair(U: np.ndarray, V: np.ndarray, need_grad: bool):
    """Row-wise cosine of two equally shaped arrays, and its gradients."""
    nu = np.linalg.norm(U, axis=-1, keepdims=True)
    nv = np.linalg.norm(V, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        U_hat = U / nu
        V_hat = V / nv
        cos = np.sum(U_hat * V_hat, axis=-1)
        if not need_grad:
            return cos, None, None
        gu = (V_hat - cos[..., None] * U_hat) / nu
        gv = (U_hat - cos[..., None] * V_hat) / nv
    return cos, gu, gv


def _score(question: Question, M: np.ndarray, cb: Codebook, need_grad: bool):
    shape_key = cb[Concept.SHAPE]
    color_key = cb[Concept.COLOR]
    t = question.template

    if t in (Template.EXISTS_SHAPE, Template.EXISTS_COLOR):
        key, target = (shape_key, cb[question.shape]) if t is Template.EXISTS_SHAPE else (color_key, cb[question.color])
        keys = cb.rows(POSITIONS) * key                    # (4, D)
        U = M[:, None, :] * keys[None, :, :]               # (n, 4, D)
        cos, dU = _cos_to_target(U, target, need_grad)
        value = cos.sum(axis=1)
        grad = np.einsum("npd,pd->nd", dU, keys) if need_grad else None
        return value, grad

    if t is Template.EXISTS_COLOR_SHAPE:
        pos = cb.rows(POSITIONS)
        color_keys = pos * color_key
        shape_keys = pos * shape_key
        Uc = M[:, None, :] * color_keys[None]
        Us = M[:, None, :] * shape_keys[None]
        cc, dUc = _cos_to_target(Uc, cb[question.color], need_grad)
        cs, dUs = _cos_to_target(Us, cb[question.shape], need_grad)
        value = np.sum(cc * cs, axis=1)
        if not need_grad:
            return value, None
        grad = (np.einsum("np,npd,pd->nd", cs, dUc, color_keys)
                + np.einsum("np,npd,pd->nd", cc, dUs, shape_keys))
        return value, grad

    if t is Template.SHAPE_AT_POSITION:
        key = cb[question.position] * shape_key
        cos, dU = _cos_to_target(M * key, cb[question.shape], need_grad)
        return cos, (dU * key if need_grad else None)

    key_a = cb[question.position] * shape_key
    key_b = cb[question.other_position] * shape_key
    cos, gu, gv = _cos_pair(M * key_a, M * key_b, need_grad)
    return cos, (gu * key_a + gv * key_b if need_grad else None)


def score_batch(question: Question, m: np.ndarray, cb: Codebook, on_zero: str = "raise") -> npt.NDArray[np.float64]:
    """
    Soft scores of one question for each row of ``m``.

    Args:
        question (Question): The question.
        m (np.ndarray): ``(D,)`` or ``(n, D)`` vectors.
        cb (Codebook): Codebook defining the concepts.
        on_zero (str): ``"raise"`` to fail on an all-zero row, ``"zero"`` to
            score such rows 0 (evaluation must be total).

    Raises:
        ZeroNormError: If a row is all zeros and ``on_zero == "raise"``.
    """
    M = _as_batch(m, cb)
    zero_rows = ~np.any(M != 0.0, axis=1)
    if np.any(zero_rows) and on_zero == "raise":
        raise ZeroNormError(f"{int(zero_rows.sum())} all-zero vector(s) cannot be queried")
    value, _ = _score(question, M, cb, need_grad=False)
    return np.where(zero_rows, 0.0, value)


def score_with_grad(question: Question, m: np.ndarray, cb: Codebook) -> Tuple[np.ndarray, np.ndarray]:
    """
    Soft scores and their gradients with respect to each row of ``m``.

    Returns:
        Tuple[np.ndarray, np.ndarray]: values ``(n,)`` and gradients ``(n, D)``.

    Raises:
        ZeroNormError: If any row is all zeros (the gradient is undefined).
    """
    M = _as_batch(m, cb)
    if np.any(~np.any(M != 0.0, axis=1)):
        raise ZeroNormError("gradient of a cosine query is undefined at the zero vector")
    return _score(question, M, cb, need_grad=True)


def score(question: Question, m: np.ndarray, cb: Codebook) -> QueryScore:
    """Scores a single vector and thresholds it (strictly greater answers True)."""
    value = float(score_batch(question, m, cb)[0])
    return QueryScore(value=value, threshold=question.threshold, answer=value > question.threshold)


def ground_truth(question: Question, scene: Scene) -> bool:
    """Symbolic answer to any question instance."""
    return occurrences(question, scene) > 0


def occurrences(question: Question, scene: Scene) -> int:
    """
    How many figures make the question true.

    For ``same-shape`` this is 1 when both positions are occupied by the same
    shape and 0 otherwise.
    """
    figures = [p.figure for p in scene.placements]
    t = question.template
    if t is Template.EXISTS_SHAPE:
        return sum(f.shape == question.shape for f in figures)
    if t is Template.EXISTS_COLOR:
        return sum(f.color == question.color for f in figures)
    if t is Template.EXISTS_COLOR_SHAPE:
        return sum(f.shape == question.shape and f.color == question.color for f in figures)
    if t is Template.SHAPE_AT_POSITION:
        found = scene.figure_at(question.position)
        return int(found is not None and found.shape == question.shape)
    a = scene.figure_at(question.position)
    b = scene.figure_at(question.other_position)
    return int(a is not None and b is not None and a.shape == b.shape)


class ScoreStats(BaseModel):
    """Summary of a set of soft scores."""
    count: int
    min: Optional[float] = None
    mean: Optional[float] = None
    max: Optional[float] = None
    histogram: List[int] = Field(default_factory=lambda: [0] * HIST_BINS)

    @classmethod
    def of(cls, values: Sequence[float]) -> "ScoreStats":
        values = np.asarray(values, dtype=np.float64)
        counts, _ = np.histogram(values, bins=HIST_BINS, range=HIST_RANGE)
        if values.size == 0:
            return cls(count=0, histogram=counts.tolist())
        return cls(count=int(values.size), min=float(values.min()), mean=float(values.mean()),
                   max=float(values.max()), histogram=counts.tolist())


def histogram_edges() -> List[float]:
    return np.linspace(HIST_RANGE[0], HIST_RANGE[1], HIST_BINS + 1).tolist()


class QuestionMargins(BaseModel):
    question: str
    threshold: float
    accuracy: float
    by_truth: Dict[str, ScoreStats]
    by_occurrences: Dict[str, ScoreStats]


class MarginReport(BaseModel):
    """Distribution of clean-encoding scores around each decision threshold."""
    codebook_seed: int
    dim: int
    scene_count: int
    histogram_edges: List[float]
    questions: List[QuestionMargins]

    def for_question(self, text: str) -> QuestionMargins:
        return next(q for q in self.questions if q.question == text)


def clean_margin_report(
    scenes: Sequence[Scene],
    cb: Codebook,
    questions: Sequence[Question] = NAMED_SETS["all"],
) -> MarginReport:
    """
    Scores every question on the clean encodings of ``scenes``.

    For each question: score statistics split by ground truth and by number of
    matching figures, and the accuracy of thresholding the clean encodings.
    """
    if not scenes:
        raise ValueError("margin report needs at least one scene")
    M = np.stack([encode_scene(s, cb) for s in scenes])

    entries = []
    for question in questions:
        values = score_batch(question, M, cb)
        counts = np.array([occurrences(question, s) for s in scenes])
        truth = counts > 0
        answers = values > question.threshold
        entries.append(QuestionMargins(
            question=question.compact(),
            threshold=question.threshold,
            accuracy=float(np.mean(answers == truth)),
            by_truth={str(flag).lower(): ScoreStats.of(values[truth == flag]) for flag in (True, False)},
            by_occurrences={str(k): ScoreStats.of(values[counts == k]) for k in sorted(set(counts.tolist()))},
        ))
        logger.debug("%s: clean accuracy %.3f", question.compact(), entries[-1].accuracy)

    return MarginReport(codebook_seed=cb.seed, dim=cb.dim, scene_count=len(scenes),
                        histogram_edges=histogram_edges(), questions=entries)
