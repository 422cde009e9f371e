"""Result tables (absolute + reference-relative) and ID/OoD delta summaries.

Internal values stay at full precision; rounding (half-even, 3 decimals for
meters, 1 for percentages) happens only here, and the text and CSV renderings
carry the same rounded numbers.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

from trajood.errors import InputError
from trajood.metrics import DatasetMetrics, delta_metrics, relative_to_reference


def fmt(value: float, places: int, signed: bool = False) -> str:
    q = Decimal(repr(float(value))).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_EVEN)
    if q == 0:
        q = abs(q)
    text = f"{q:.{places}f}"
    if signed and q >= 0:
        text = "+" + text
    return text


@dataclass
class RunRegistry:
    runs: list[DatasetMetrics] = field(default_factory=list)
    reference: str | None = None

    def __post_init__(self):
        seen = set()
        for run in self.runs:
            key = (run.model, run.train_set, run.test_set)
            if key in seen:
                raise InputError(f"duplicate run {key}")
            seen.add(key)

    def add(self, run: DatasetMetrics) -> None:
        key = (run.model, run.train_set, run.test_set)
        if any((r.model, r.train_set, r.test_set) == key for r in self.runs):
            raise InputError(f"duplicate run {key}")
        self.runs.append(run)

    def groups(self) -> dict[str, list[DatasetMetrics]]:
        out: dict[str, list[DatasetMetrics]] = {}
        for run in self.runs:
            out.setdefault(run.train_set, []).append(run)
        return out

    def metric_names(self) -> list[str]:
        names: list[str] = []
        for run in self.runs:
            names += [n for n in run.values if n not in names]
        return names


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _text_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip())
    return "\n".join(lines) + "\n"


def render_table(reg: RunRegistry, reference: str | None = None) -> tuple[str, str]:
    """Table of absolute errors with reference-relative percentages per training set.

    Returns ``(text, csv)``. Within each training-set group the reference
    model comes first, then the other models in registration order. Metrics
    the reference run does not report get no percentage.
    """
    reference = reference or reg.reference
    if reference is None:
        raise InputError("no reference model given", code="MISSING_REFERENCE")
    names = reg.metric_names()
    text_rows, csv_rows = [], []
    for train_set, runs in reg.groups().items():
        ref_runs = [r for r in runs if r.model == reference]
        if not ref_runs:
            raise InputError(f"reference {reference!r} missing for training set {train_set!r}", code="MISSING_REFERENCE")
        ordered = ref_runs + [r for r in runs if r.model != reference]
        for test_set in dict.fromkeys(r.test_set for r in ordered):
            subset = [r for r in ordered if r.test_set == test_set]
            if not any(r.model == reference for r in subset):
                raise InputError(
                    f"reference {reference!r} missing for {train_set!r}->{test_set!r}", code="MISSING_REFERENCE"
                )
            ref_run = subset[0]
            # metrics the reference lacks are shown without a percentage
            shared = [
                DatasetMetrics(r.sample_count, {n: v for n, v in r.values.items() if n in ref_run.values}, r.model)
                for r in subset
            ]
            pct = relative_to_reference(shared, reference)
            for run in subset:
                cells = []
                for name in names:
                    if name not in run.values:
                        cells.append("-")
                        continue
                    value = fmt(run.values[name], 3)
                    if name in pct[run.model]:
                        rel = fmt(pct[run.model][name], 1)
                        cells.append(f"{value} ({rel}%)")
                    else:
                        rel = ""
                        cells.append(value)
                    csv_rows.append([train_set, test_set, run.model, name, value, rel])
                text_rows.append([train_set, run.model, *cells])
    header = ["train", "model", *[f"{n} [m]" for n in names]]
    text = f"reference: {reference} (= 100.0%)\n" + _text_table(header, text_rows)
    return text, _csv_text(["train_set", "test_set", "model", "metric", "value", "relative_pct"], csv_rows)


def _by_key(reg: RunRegistry) -> dict[tuple[str, str], DatasetMetrics]:
    out = {}
    for run in reg.runs:
        key = (run.model, run.train_set)
        if key in out:
            raise InputError(f"model {run.model!r} (train {run.train_set!r}) appears twice in one registry")
        out[key] = run
    return out


def render_delta_summary(id_reg: RunRegistry, ood_reg: RunRegistry) -> tuple[str, str]:
    """Per model and metric: ID value, OoD - ID, and the relative increase.

    Runs are matched on (model, training set). Returns ``(text, csv)``; the
    CSV is the plot-ready bar data.
    """
    id_runs, ood_runs = _by_key(id_reg), _by_key(ood_reg)
    unmatched = sorted(set(id_runs) ^ set(ood_runs))
    if unmatched:
        model, train = unmatched[0]
        side = "ID" if (model, train) in id_runs else "OoD"
        raise InputError(
            f"model {model!r} (train {train!r}) present only in the {side} registry", code="TAG_MISMATCH"
        )
    text_rows, csv_rows = [], []
    for key, id_run in id_runs.items():
        for d in delta_metrics(id_run, ood_runs[key]):
            rel = fmt(d.relative, 1, signed=True) if d.relative is not None else "n/a"
            row = [id_run.model, id_run.train_set, d.metric, fmt(d.id_value, 3), fmt(d.ood_value, 3),
                   fmt(d.delta, 3, signed=True), rel]
            csv_rows.append(row)
            text_rows.append(row[:6] + [rel + ("%" if d.relative is not None else "")])
    header = ["model", "train_set", "metric", "id_value", "ood_value", "delta", "relative_pct"]
    text = _text_table(["model", "train", "metric", "ID [m]", "OoD [m]", "delta [m]", "relative"], text_rows)
    return text, _csv_text(header, [[c if c != "n/a" else "" for c in r] for r in csv_rows])
