"""Displacement-error metrics, dataset aggregates and ID/OoD deltas.

Per-mode average errors are summed with :func:`math.fsum` (correctly rounded),
so results do not depend on summation order and can be reproduced exactly by
an independent exact-arithmetic oracle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from trajood.errors import InputError, StorageError
from trajood.predictors import PredictionSet

DEFAULT_KS = (1, 6)


def metric_names(ks: Iterable[int] = DEFAULT_KS) -> list[str]:
    names = []
    for k in ks:
        names += [f"minADE_{k}", f"minFDE_{k}"]
    return names


def select_modes(pred: PredictionSet, k: int) -> np.ndarray:
    """Indices of the ``k`` modes scored for best-of-K.

    Highest probability first, ties (and missing probabilities) by mode index.
    """
    if k < 1:
        raise InputError(f"K must be >= 1, got {k}")
    if k > pred.k:
        raise InputError(
            f"K={k} but {pred.scenario_id}/{pred.agent_id} has {pred.k} modes", code="INSUFFICIENT_MODES"
        )
    if pred.probabilities is None:
        return np.arange(k)
    return np.argsort(-pred.probabilities, kind="stable")[:k]


def _distances(modes: np.ndarray, gt: np.ndarray) -> np.ndarray:
    dx = modes[..., 0] - gt[:, 0]
    dy = modes[..., 1] - gt[:, 1]
    return np.sqrt(dx * dx + dy * dy)


def _check_gt(gt, pred: PredictionSet) -> np.ndarray:
    gt = np.asarray(gt, float)
    if gt.shape != pred.modes.shape[1:]:
        raise InputError(f"ground truth shape {gt.shape} != {pred.modes.shape[1:]}")
    if not np.isfinite(gt).all():
        raise InputError("ground truth contains non-finite points")
    return gt


def min_ade(pred: PredictionSet, gt, k: int) -> float:
    gt = _check_gt(gt, pred)
    dist = _distances(pred.modes[select_modes(pred, k)], gt)
    n = dist.shape[1]
    return min(math.fsum(row) / n for row in dist.tolist())


def min_fde(pred: PredictionSet, gt, k: int) -> float:
    gt = _check_gt(gt, pred)
    dist = _distances(pred.modes[select_modes(pred, k), -1:], gt[-1:])
    return float(dist.min())


@dataclass(frozen=True)
class MetricRecord:
    scenario_id: str
    agent_id: str
    values: dict[str, float]

    def __getitem__(self, name: str) -> float:
        return self.values[name]


def evaluate_prediction(pred: PredictionSet, gt, ks: Sequence[int] = DEFAULT_KS) -> MetricRecord:
    """Metrics for every K in ``ks`` that the prediction has enough modes for."""
    values = {}
    for k in ks:
        if k <= pred.k:
            values[f"minADE_{k}"] = min_ade(pred, gt, k)
            values[f"minFDE_{k}"] = min_fde(pred, gt, k)
    return MetricRecord(pred.scenario_id, pred.agent_id, values)


@dataclass(frozen=True)
class DatasetMetrics:
    sample_count: int
    values: dict[str, float]
    model: str = "model"
    train_set: str = ""
    test_set: str = ""

    def __getitem__(self, name: str) -> float:
        return self.values[name]


def aggregate(records: Sequence[MetricRecord], model: str = "model", train_set: str = "", test_set: str = "",
              names: Sequence[str] | None = None) -> DatasetMetrics:
    """Arithmetic mean of each metric over all records, equal weight per sample."""
    if not records:
        raise InputError("cannot aggregate an empty record set", code="EMPTY_SET")
    if names is None:
        names = [n for n in records[0].values]
    means = {}
    for name in names:
        try:
            column = [r.values[name] for r in records]
        except KeyError:
            missing = next(r for r in records if name not in r.values)
            raise InputError(
                f"{name} missing for {missing.scenario_id}/{missing.agent_id}", code="INSUFFICIENT_MODES"
            ) from None
        means[name] = math.fsum(column) / len(column)
    return DatasetMetrics(len(records), means, model=model, train_set=train_set, test_set=test_set)


@dataclass(frozen=True)
class DeltaRecord:
    metric: str
    id_value: float
    ood_value: float
    delta: float
    relative: float | None = field(default=None)  # percent; None when id_value == 0

    @property
    def relative_defined(self) -> bool:
        return self.relative is not None


def delta_record(metric: str, id_value: float, ood_value: float) -> DeltaRecord:
    delta = ood_value - id_value
    relative = 100.0 * delta / id_value if id_value != 0 else None
    return DeltaRecord(metric, id_value, ood_value, delta, relative)


def delta_metrics(id_metrics: DatasetMetrics, ood_metrics: DatasetMetrics) -> list[DeltaRecord]:
    """OoD minus ID for every metric present in both, plus 100*delta/ID."""
    if id_metrics.model != ood_metrics.model:
        raise InputError(
            f"model tags differ: ID {id_metrics.model!r} vs OoD {ood_metrics.model!r}", code="TAG_MISMATCH"
        )
    return [
        delta_record(name, id_metrics.values[name], ood_metrics.values[name])
        for name in id_metrics.values
        if name in ood_metrics.values
    ]


def relative_to_reference(metrics: Sequence[DatasetMetrics], reference: str) -> dict[str, dict[str, float]]:
    """Each run's metrics as a percentage of the reference model's."""
    ref = next((m for m in metrics if m.model == reference), None)
    if ref is None:
        raise InputError(f"reference model {reference!r} not among runs", code="MISSING_REFERENCE")
    table = {}
    for m in metrics:
        row = {}
        for name, value in m.values.items():
            base = ref.values.get(name)
            if base is None or not base > 0:
                raise InputError(f"reference {reference!r} has no positive {name}", code="MISSING_REFERENCE")
            row[name] = 100.0 * value / base
        table[m.model] = row
    return table


# --------------------------------------------------------------------------
# metrics files
# --------------------------------------------------------------------------

METRICS_COLUMNS = ["model", "train_set", "test_set", "sample_count", "metric", "value"]
DELTA_COLUMNS = ["metric", "id_value", "ood_value", "delta", "relative_pct"]


def metrics_to_rows(m: DatasetMetrics) -> list[list]:
    return [[m.model, m.train_set, m.test_set, m.sample_count, name, repr(float(v))] for name, v in m.values.items()]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc.strerror or exc}", path=str(path)) from None


def read_metrics_csv(path) -> list[DatasetMetrics]:
    """All runs stored in a metrics CSV, in first-appearance order."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc.strerror or exc}", path=str(path)) from None
    runs: dict[tuple[str, str, str], tuple[int, dict[str, float]]] = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            key = (row["model"], row["train_set"], row["test_set"])
            count, value = int(row["sample_count"]), float(row["value"])
            name = row["metric"]
        except (KeyError, TypeError, ValueError):
            raise InputError(f"{path} line {lineno}: expected columns {METRICS_COLUMNS}", code="PARSE_ERROR") from None
        runs.setdefault(key, (count, {}))[1][name] = value
    return [
        DatasetMetrics(count, values, model=model, train_set=train, test_set=test)
        for (model, train, test), (count, values) in runs.items()
    ]


def delta_rows(deltas: Iterable[DeltaRecord]) -> list[list[str]]:
    return [
        [d.metric, repr(d.id_value), repr(d.ood_value), repr(d.delta), "" if d.relative is None else repr(d.relative)]
        for d in deltas
    ]
