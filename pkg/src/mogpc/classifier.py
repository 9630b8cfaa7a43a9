"""Bayes-rule prediction with equal class priors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import normalize_apply
from .likelihood import log_marginal
from .model import Dataset, DimensionError, Instance, ModelBundle, NumericalError
from .parallel import pmap
from .training import misclassification_measure


@dataclass(frozen=True, eq=False)
class Prediction:
    predicted_class: int
    scores: np.ndarray
    margin: float


@dataclass(frozen=True, eq=False)
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    per_class_accuracy: np.ndarray
    predictions: tuple = ()


def class_scores(inst: Instance, model: ModelBundle) -> np.ndarray:
    """Scores ``a * log p(f | theta_m) + b`` for every class."""
    if inst.output_dim != model.output_dim or inst.input_dim != model.input_dim:
        raise DimensionError(
            f"instance is {inst.input_dim}-in/{inst.output_dim}-out, model is "
            f"{model.input_dim}-in/{model.output_dim}-out")
    inst = normalize_apply(inst, model.normalization)
    a, b = model.mce_scaling
    out = np.empty(model.n_classes)
    for m, theta in enumerate(model.per_class):
        try:
            lp = log_marginal(inst, theta, model.kernel_config, model.approx).log_marginal
        except NumericalError as e:
            raise NumericalError(f"class {model.class_names[m]}: {e}") from e
        out[m] = a * lp + b
    return out


def predict(inst: Instance, model: ModelBundle, eta: float = 2.0) -> Prediction:
    """Most likely class; ties go to the lowest index.

    ``margin`` is the misclassification measure of the predicted class at
    softening ``eta`` (0.0 for single-class models).
    """
    scores = class_scores(inst, model)
    k = int(np.argmax(scores))
    margin = misclassification_measure(scores, k, eta) if scores.size > 1 else 0.0
    return Prediction(k, scores, margin)


def evaluate(model: ModelBundle, ds: Dataset) -> EvalReport:
    """Accuracy and confusion matrix (rows are true classes)."""
    M = max(model.n_classes, ds.n_classes)
    pairs = list(ds.labeled())
    preds = pmap(lambda pair: predict(pair[1], model), pairs)
    confusion = np.zeros((M, M), dtype=int)
    for (m, _), p in zip(pairs, preds):
        confusion[m, p.predicted_class] += 1
    total = confusion.sum()
    rows = confusion.sum(axis=1)
    per_class = np.divide(np.diag(confusion), rows, out=np.zeros(M), where=rows > 0)
    acc = float(np.trace(confusion) / total) if total else 0.0
    return EvalReport(acc, confusion, per_class, tuple(preds))
