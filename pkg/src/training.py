"""
End-to-end training of the perceiver through the query losses, and evaluation
of thresholded answers on held-out records.
"""

import logging
import time
from typing import Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from src.errors import DivergenceError, NonFiniteError
from src.hdc import Codebook
from src.network import MlpModel, backward, forward, gradient_norm, predict
from src.optim import make_optimizer
from src.queries import (
    GENERALIZATION_QUESTIONS,
    TRAINED_QUESTIONS,
    Question,
    ScoreStats,
    ground_truth,
    histogram_edges,
    score_batch,
    score_with_grad,
)
from src.scenes import DatasetRecord, Scene, SceneDataset, flatten_image

logger = logging.getLogger(__name__)

# accuracies reported for the three unseen existence questions in the original study
PUBLISHED_ACCURACY: Dict[str, float] = {
    "exists-shape:square": 0.72,
    "exists-shape:triangle": 0.69,
    "exists-shape:cross": 0.60,
}
LOSS_COLUMNS = ("E1", "E2", "E3", "E4", "E5")


class TrainConfig(BaseModel):
    """
    Optimization settings. None of them is given by the model definition itself.

    Attributes:
        epochs (int): Maximum number of passes over the train split.
        batch_size (int): Records per gradient step (last batch may be smaller).
        learning_rate (float): Step size.
        optimizer (str): ``plain-sgd``, ``momentum-sgd`` or ``adam``.
        momentum (float): Momentum for ``momentum-sgd``.
        betas (Tuple[float, float]): Adam moment decay rates.
        eps (float): Adam denominator offset.
        shuffle_seed (int): Seed of the per-epoch record order.
        init_seed (int): Seed of the initial weights.
        early_stop (float): Stop once an epoch's mean train loss is below this.
        progress (bool): Show a tqdm bar over epochs.
    """
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=200, gt=0)
    batch_size: int = Field(default=32, gt=0)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    optimizer: Literal["plain-sgd", "momentum-sgd", "adam"] = "adam"
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0.0)
    shuffle_seed: int = 13
    init_seed: int = 11
    early_stop: float = Field(default=0.01, gt=0.0)
    progress: bool = False

    @model_validator(mode="after")
    def _betas_in_range(self) -> "TrainConfig":
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        return self


class LossTerms(NamedTuple):
    contributions: np.ndarray   # (5,) or (n, 5): (score_i - q_i)^2
    output_gradient: np.ndarray  # dE/dm, same leading shape as the output


class EpochRecord(BaseModel):
    epoch: int
    mean_loss: float
    E1: float
    E2: float
    E3: float
    E4: float
    E5: float
    wall_seconds: float


class TrainResult(NamedTuple):
    model: MlpModel
    history: List[EpochRecord]
    stopped_early: bool


def query_losses(outputs: np.ndarray, targets: np.ndarray, cb: Codebook,
                 questions: Sequence[Question] = TRAINED_QUESTIONS) -> LossTerms:
    """
    Squared query errors of network outputs and their gradient.

    Args:
        outputs (np.ndarray): ``(n, D)`` network outputs.
        targets (np.ndarray): ``(n, len(questions))`` 0/1 answers.
        cb (Codebook): Codebook defining the concepts.
        questions (Sequence[Question]): Questions, one loss term each.

    Returns:
        LossTerms: per-record per-question ``(score - target)^2`` and the
        gradient of each record's summed loss with respect to its output.

    Raises:
        ZeroNormError: If an output is the zero vector.
    """
    outputs = np.atleast_2d(outputs)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    contributions = np.empty((outputs.shape[0], len(questions)))
    gradient = np.zeros_like(outputs, dtype=np.float64)
    for i, question in enumerate(questions):
        values, dvalues = score_with_grad(question, outputs, cb)
        residual = values - targets[:, i]
        contributions[:, i] = residual ** 2
        gradient += 2.0 * residual[:, None] * dvalues
    return LossTerms(contributions, gradient)


def loss_terms(model: MlpModel, record: DatasetRecord, cb: Codebook) -> LossTerms:
    """
    Loss contributions of one record and dE/d(network output).

    Returns:
        LossTerms: ``(5,)`` contributions E_1..E_5 and the ``(D,)`` gradient.
    """
    out = forward(model, flatten_image(record.image)).out
    terms = query_losses(out, np.array(record.q, dtype=np.float64), cb)
    return LossTerms(terms.contributions[0], terms.output_gradient[0])


def batch_gradients(model: MlpModel, x: np.ndarray, targets: np.ndarray, cb: Codebook):
    """
    Mean per-record loss of a batch and its parameter gradients.

    Returns:
        Tuple[np.ndarray, List[np.ndarray]]: ``(n, 5)`` contributions and the
        gradients of ``mean_n sum_i E_i`` for every parameter tensor.
    """
    trace = forward(model, x)
    terms = query_losses(trace.out, targets, cb)
    grads = backward(model, trace, terms.output_gradient / x.shape[0])
    return terms.contributions, grads


def train(model: MlpModel, dataset: SceneDataset, cb: Codebook, config: TrainConfig,
          train_idx: Optional[Sequence[int]] = None) -> TrainResult:
    """
    Minibatch optimization of the summed query loss over the train split.

    The input model is not modified. The run is a pure function of the model,
    the dataset, the codebook and ``config``.

    Raises:
        ValueError: If the batch is larger than the train split or the split
            overlaps the test split.
        DivergenceError: If the loss or a gradient stops being finite.
        ZeroNormError: If the network outputs the zero vector.
    """
    if train_idx is None:
        train_idx = dataset.indices("train")
        overlap = set(train_idx) & set(dataset.indices("test"))
        if overlap:
            raise ValueError(f"{len(overlap)} records are in both train and test")
    train_idx = np.asarray(train_idx, dtype=int)
    if config.batch_size > len(train_idx):
        raise ValueError(f"batch size {config.batch_size} exceeds train split size {len(train_idx)}")
    if dataset.dim != cb.dim or model.output_dim != cb.dim:
        raise ValueError(f"model output {model.output_dim}, dataset {dataset.dim} and codebook {cb.dim} disagree")

    model = model.copy()
    optimizer = make_optimizer(config.optimizer, model.params, config.learning_rate,
                               momentum=config.momentum, betas=config.betas, eps=config.eps)
    x_all = dataset.images(train_idx).astype(np.float64)
    q_all = dataset.question_labels(train_idx).astype(np.float64)
    rng = np.random.Generator(np.random.PCG64(config.shuffle_seed))

    history: List[EpochRecord] = []
    stopped_early = False
    started = time.perf_counter()
    epochs = tqdm(range(1, config.epochs + 1), desc="Training", disable=not config.progress)
    for epoch in epochs:
        order = rng.permutation(len(train_idx))
        sums = np.zeros(len(LOSS_COLUMNS))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            contributions, grads = batch_gradients(model, x_all[batch], q_all[batch], cb)
            if not np.all(np.isfinite(contributions)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch starting at {start}")
            try:
                gradient_norm(grads)
            except NonFiniteError as e:
                raise DivergenceError(f"epoch {epoch}: {e}") from e
            optimizer.step(grads)
            sums += contributions.sum(axis=0)

        means = sums / len(order)
        record = EpochRecord(epoch=epoch, mean_loss=float(means.sum()),
                             **{name: float(v) for name, v in zip(LOSS_COLUMNS, means)},
                             wall_seconds=time.perf_counter() - started)
        history.append(record)
        epochs.set_postfix(loss=f"{record.mean_loss:.4f}")
        logger.info("epoch %d mean loss %.5f", epoch, record.mean_loss)
        if record.mean_loss < config.early_stop:
            stopped_early = True
            logger.info("early stop at epoch %d (loss %.5f < %.5f)", epoch, record.mean_loss, config.early_stop)
            break

    model.check_finite()
    return TrainResult(model=model, history=history, stopped_early=stopped_early)


def history_frame(history: Sequence[EpochRecord]) -> pd.DataFrame:
    """Training log with columns ``epoch,mean_loss,E1..E5,wall_seconds``."""
    columns = ["epoch", "mean_loss", *LOSS_COLUMNS, "wall_seconds"]
    return pd.DataFrame([r.model_dump() for r in history], columns=columns)


class QuestionResult(BaseModel):
    """Accuracy and score distribution of one question on a record set."""
    question: str
    threshold: float
    accuracy: float = Field(ge=0.0, le=1.0)
    tp: int
    fp: int
    tn: int
    fn: int
    positive_rate: float
    base_rate: float
    above_base_rate: bool
    scores: ScoreStats
    scores_true: ScoreStats
    scores_false: ScoreStats
    published_accuracy: Optional[float] = None


class EvalReport(BaseModel):
    """Per-question results of thresholded answers on one record set."""
    split: str
    source: str
    record_count: int
    histogram_edges: List[float]
    questions: List[QuestionResult]
    cross_is_worst: Optional[bool] = None

    def accuracy(self, question: str) -> float:
        return next(q.accuracy for q in self.questions if q.question == question)

    def table(self) -> pd.DataFrame:
        rows = [{
            "question": q.question,
            "accuracy": q.accuracy,
            "base_rate": q.base_rate,
            "published": q.published_accuracy,
            "tp": q.tp, "fp": q.fp, "tn": q.tn, "fn": q.fn,
        } for q in self.questions]
        return pd.DataFrame(rows)


def evaluate_vectors(vectors: np.ndarray, scenes: Sequence[Scene], questions: Sequence[Question],
                     cb: Codebook, split: str = "all", source: str = "network") -> EvalReport:
    """
    Thresholds each question on each vector and compares with the scene's truth.

    All-zero vectors score 0 and therefore answer False.
    """
    vectors = np.atleast_2d(vectors)
    if len(vectors) != len(scenes):
        raise ValueError(f"{len(vectors)} vectors for {len(scenes)} scenes")

    results = []
    for question in questions:
        values = score_batch(question, vectors, cb, on_zero="zero") if len(vectors) else np.zeros(0)
        truth = np.array([ground_truth(question, s) for s in scenes], dtype=bool)
        answers = values > question.threshold
        tp = int(np.sum(answers & truth))
        fp = int(np.sum(answers & ~truth))
        tn = int(np.sum(~answers & ~truth))
        fn = int(np.sum(~answers & truth))
        n = max(len(truth), 1)
        positives = int(truth.sum())
        majority = max(positives, len(truth) - positives)
        positive_rate = positives / n
        base_rate = majority / n
        accuracy = (tp + tn) / n
        results.append(QuestionResult(
            question=question.compact(),
            threshold=question.threshold,
            accuracy=accuracy,
            tp=tp, fp=fp, tn=tn, fn=fn,
            positive_rate=positive_rate,
            base_rate=base_rate,
            above_base_rate=tp + tn > majority,
            scores=ScoreStats.of(values),
            scores_true=ScoreStats.of(values[truth]),
            scores_false=ScoreStats.of(values[~truth]),
            published_accuracy=PUBLISHED_ACCURACY.get(question.compact()),
        ))

    cross_is_worst = None
    by_name = {r.question: r.accuracy for r in results}
    generalization = [q.compact() for q in GENERALIZATION_QUESTIONS]
    if all(name in by_name for name in generalization):
        worst = min(generalization, key=lambda name: by_name[name])
        cross_is_worst = worst == "exists-shape:cross"

    return EvalReport(split=split, source=source, record_count=len(scenes),
                      histogram_edges=histogram_edges(), questions=results, cross_is_worst=cross_is_worst)


def evaluate(model: MlpModel, records: Sequence[DatasetRecord], questions: Sequence[Question],
             cb: Codebook, split: str = "all") -> EvalReport:
    """
    Runs the network on every record and reports per-question accuracy.

    Args:
        model (MlpModel): Trained (or untrained) network.
        records (Sequence[DatasetRecord]): Records to evaluate.
        questions (Sequence[Question]): Questions to threshold.
        cb (Codebook): Codebook the network was trained against.
        split (str): Label stored in the report.
    """
    if records:
        outputs = predict(model, np.stack([flatten_image(r.image) for r in records]))
    else:
        outputs = np.zeros((0, cb.dim))
    return evaluate_vectors(outputs, [r.scene for r in records], questions, cb, split=split, source="network")
