"""Aggregate scored generations into per-method, per-dataset, per-scenario tables."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace

from rankcot.errors import InputError
from rankcot.evaluation.metrics import METRICS, accuracy, rouge_l, string_em
from rankcot.evaluation.scenarios import SCENARIOS, ScenarioAssignment
from rankcot.types import GENERATION_METHODS, GenerationRecord, QueryRecord

AVG = "Avg."


def score_record(record: GenerationRecord, query: QueryRecord, metric: str) -> float:
    """Per-record value of a dataset's headline metric, as a rate in [0, 1]."""
    if metric == "accuracy":
        return float(accuracy(record.answer, query.gold_answers))
    if metric == "string_em":
        return string_em(record.answer, query.answer_sets)
    if metric == "rouge_l":
        return rouge_l(record.answer, list(query.gold_answers)).f1
    raise InputError(f"unknown metric {metric!r}; expected one of {METRICS}")


def score_records(records: Iterable[GenerationRecord], queries: Mapping[str, QueryRecord]) -> list[GenerationRecord]:
    out = []
    for rec in records:
        query = queries.get(rec.query_id)
        if query is None:
            raise InputError(f"generation for unknown query {rec.query_id!r}")
        out.append(replace(rec, correct=accuracy(rec.answer, query.gold_answers)))
    return out


@dataclass
class EvalReport:
    methods: list[str]
    datasets: list[str]
    dataset_metric_map: dict[str, str]
    cells: dict = field(default_factory=dict)
    config_digest: str = ""
    analyses: dict = field(default_factory=dict)

    def value(self, method: str, dataset: str, scenario: str = "all") -> float | None:
        return self.cells[method][dataset][scenario]["value"]

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "methods": self.methods,
            "datasets": self.datasets,
            "dataset_metric_map": self.dataset_metric_map,
            "scenarios": list(SCENARIOS),
            "cells": self.cells,
            "analyses": self.analyses,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> EvalReport:
        return cls(
            methods=list(obj["methods"]),
            datasets=list(obj["datasets"]),
            dataset_metric_map=dict(obj["dataset_metric_map"]),
            cells=obj["cells"],
            config_digest=obj.get("config_digest", ""),
            analyses=obj.get("analyses", {}),
        )

    def to_text(self) -> str:
        """Aligned plain-text table; values are percentages, ``-`` for empty cells."""
        header = ["method", "scenario"] + [
            f"{d} ({self.dataset_metric_map[d]})" for d in self.datasets
        ] + [AVG]
        rows = [header]
        for method in self.methods:
            for scenario in SCENARIOS:
                row = [method, scenario]
                for col in self.datasets + [AVG]:
                    v = self.cells[method][col][scenario]["value"]
                    row.append("-" if v is None else f"{v:.2f}")
                rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = []
        for n, row in enumerate(rows):
            cells = [c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
            lines.append("  ".join(cells).rstrip())
            if n == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def build_report(
    records: Iterable[GenerationRecord],
    queries: Mapping[str, QueryRecord],
    assignment: ScenarioAssignment,
    dataset_metric_map: Mapping[str, str],
    config_digest: str = "",
) -> EvalReport:
    """Percent-scaled cell means plus a macro average over datasets.

    Empty cells are ``None`` and do not enter the average.
    """
    members = {s: assignment.members(s) for s in SCENARIOS}
    values: dict[tuple[str, str, str], list[float]] = {}
    datasets = set()
    methods = set()
    for rec in records:
        query = queries.get(rec.query_id)
        if query is None:
            raise InputError(f"generation for unknown query {rec.query_id!r}")
        metric = dataset_metric_map.get(query.dataset)
        if metric is None:
            raise InputError(f"dataset {query.dataset!r} has no metric mapping")
        if metric not in METRICS:
            raise InputError(f"unknown metric {metric!r} for dataset {query.dataset!r}")
        value = score_record(rec, query, metric)
        datasets.add(query.dataset)
        methods.add(rec.method)
        for scenario in SCENARIOS:
            if rec.query_id in members[scenario]:
                values.setdefault((rec.method, query.dataset, scenario), []).append(value)

    method_order = [m for m in GENERATION_METHODS if m in methods]
    dataset_order = sorted(datasets)
    cells: dict = {}
    for method in method_order:
        cells[method] = {}
        for dataset in dataset_order:
            cells[method][dataset] = {}
            for scenario in SCENARIOS:
                vals = values.get((method, dataset, scenario), [])
                cells[method][dataset][scenario] = {
                    "metric": dataset_metric_map[dataset],
                    "value": 100.0 * sum(vals) / len(vals) if vals else None,
                    "count": len(vals),
                }
        cells[method][AVG] = {}
        for scenario in SCENARIOS:
            present = [
                cells[method][d][scenario]["value"]
                for d in dataset_order
                if cells[method][d][scenario]["value"] is not None
            ]
            cells[method][AVG][scenario] = {
                "metric": "macro",
                "value": sum(present) / len(present) if present else None,
                "count": len(present),
            }
    return EvalReport(method_order, dataset_order, dict(dataset_metric_map), cells, config_digest)
