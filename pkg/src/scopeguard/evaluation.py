"""Running matchers over simulated datasets and tabulating the results."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .domain import MatchDecision, MatchRequest, TaskSample, ToolDescriptor
from .errors import ScopeGuardError, UnsupportedFormat, UnsupportedTaskArity

logger = logging.getLogger(__name__)

DISPLAY_NAMES = {"semsim": "SemSimM", "llmres": "LLM-ResM", "static": "Static", "oracle": "Oracle"}
FORMATS = ("text", "csv", "json")
METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1")


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, predicted: bool, actual: bool) -> None:
        if predicted and actual:
            self.tp += 1
        elif predicted:
            self.fp += 1
        elif actual:
            self.fn += 1
        else:
            self.tn += 1

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _ratio(num: float, den: float) -> Optional[float]:
    return num / den if den else None


def compute_metrics(c: ConfusionCounts) -> Dict[str, Optional[float]]:
    """Standard binary metrics; a zero denominator gives None rather than 0."""
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return {
        "accuracy": _ratio(c.tp + c.tn, c.total),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "fpr": _ratio(c.fp, c.fp + c.tn),
        "fnr": _ratio(c.fn, c.fn + c.tp),
    }


@dataclass
class MetricsReport:
    matcher_id: str
    dataset_id: str
    counts: ConfusionCounts
    accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    fpr: Optional[float] = None
    fnr: Optional[float] = None
    per_n: Dict[int, "MetricsReport"] = field(default_factory=dict)
    n_errors: int = 0
    run_label: str = "single seeded run"

    @classmethod
    def from_counts(cls, counts: ConfusionCounts, matcher_id: str, dataset_id: str,
                    per_n: Optional[Dict[int, "MetricsReport"]] = None, n_errors: int = 0) -> "MetricsReport":
        return cls(matcher_id, dataset_id, counts, per_n=dict(per_n or {}), n_errors=n_errors,
                   **compute_metrics(counts))

    @property
    def error_rate(self) -> float:
        return self.n_errors / self.counts.total if self.counts.total else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "matcher_id": self.matcher_id,
            "dataset_id": self.dataset_id,
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp, "fn": self.counts.fn, "tn": self.counts.tn},
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "fpr": self.fpr,
            "fnr": self.fnr,
            "per_n": {str(k): v.to_dict() for k, v in sorted(self.per_n.items())},
            "n_errors": self.n_errors,
            "run_label": self.run_label,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsReport":
        return cls(
            matcher_id=data["matcher_id"],
            dataset_id=data["dataset_id"],
            counts=ConfusionCounts(**data["counts"]),
            accuracy=data.get("accuracy"),
            precision=data.get("precision"),
            recall=data.get("recall"),
            f1=data.get("f1"),
            fpr=data.get("fpr"),
            fnr=data.get("fnr"),
            per_n={int(k): cls.from_dict(v) for k, v in data.get("per_n", {}).items()},
            n_errors=data.get("n_errors", 0),
            run_label=data.get("run_label", "single seeded run"),
        )


class GroundTruthMatcher:
    """Approves exactly the task's required tools."""

    matcher_id = "oracle"

    def decide(self, task: TaskSample, tool: ToolDescriptor, registry=None) -> MatchDecision:
        ok = tool.scope in {t.scope for t in task.required_tools}
        return MatchDecision(appropriate=ok, matcher_id=self.matcher_id, score=1.0 if ok else 0.0,
                             rationale="ground truth")


class DecisionCache:
    """Decisions keyed by (matcher_id, sample_id, scope), optionally persisted as JSONL."""

    def __init__(self, path: Optional[os.PathLike] = None):
        self.path = Path(path) if path is not None else None
        self._data: Dict[Tuple[str, str, str], MatchDecision] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._data[tuple(rec["key"])] = MatchDecision.from_dict(rec["decision"])

    def get(self, key: Tuple[str, str, str]) -> Optional[MatchDecision]:
        with self._lock:
            return self._data.get(key)

    def put(self, key: Tuple[str, str, str], decision: MatchDecision) -> None:
        with self._lock:
            self._data[key] = decision
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": list(key), "decision": decision.to_dict()}) + "\n")

    def __len__(self) -> int:
        return len(self._data)


def _decide(matcher, req: MatchRequest, registry, cache: Optional[DecisionCache]) -> MatchDecision:
    key = (matcher.matcher_id, req.task.sample_id, req.requested_tool.scope)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    try:
        decision = matcher.decide(req.task, req.requested_tool, registry)
    except UnsupportedTaskArity:
        raise
    except ScopeGuardError as exc:
        logger.warning("matcher error on %s/%s: %s", req.task.sample_id, req.requested_tool.scope, exc)
        decision = MatchDecision(appropriate=False, matcher_id=matcher.matcher_id,
                                 error=f"{type(exc).__name__}: {exc}")
    if cache is not None:
        cache.put(key, decision)
    return decision


def evaluate(matcher, dataset: Sequence[MatchRequest], registry, dataset_id: str = "dataset",
             parallelism: int = 1, cache: Optional[DecisionCache] = None) -> MetricsReport:
    """Score ``matcher`` on ``dataset``; ``correct`` labels are the positive class."""
    if not dataset:
        raise ValueError("dataset is empty")
    if matcher.matcher_id == "semsim" and any(r.task.n_tools != 1 for r in dataset):
        raise UnsupportedTaskArity("SemSimM can only be evaluated on single-tool tasks")
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            decisions = list(pool.map(lambda r: _decide(matcher, r, registry, cache), dataset))
    else:
        decisions = [_decide(matcher, r, registry, cache) for r in dataset]

    per_n_counts: Dict[int, ConfusionCounts] = {}
    per_n_errors: Dict[int, int] = {}
    for req, dec in zip(dataset, decisions):
        n = req.task.n_tools
        per_n_counts.setdefault(n, ConfusionCounts()).add(dec.appropriate, req.positive)
        per_n_errors[n] = per_n_errors.get(n, 0) + (dec.error is not None)
    per_n = {
        n: MetricsReport.from_counts(c, matcher.matcher_id, f"{dataset_id}/N{n}", n_errors=per_n_errors[n])
        for n, c in sorted(per_n_counts.items())
    }
    total = ConfusionCounts()
    for c in per_n_counts.values():
        total = total + c
    return MetricsReport.from_counts(total, matcher.matcher_id, dataset_id, per_n,
                                     n_errors=sum(per_n_errors.values()))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _fmt(value: Optional[float], digits: int = 2) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def _render(header: Sequence[str], rows: List[List[Any]], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])
        return buf.getvalue()
    cells = [list(header)] + [[_fmt(v) if isinstance(v, float) or v is None else str(v) for v in row]
                              for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _as_list(metrics: Union[MetricsReport, Iterable[MetricsReport]]) -> List[MetricsReport]:
    return [metrics] if isinstance(metrics, MetricsReport) else list(metrics)


def report(metrics: Union[MetricsReport, Iterable[MetricsReport]], fmt: str = "text") -> str:
    """Render reports as a Matcher/Data/Accuracy/Precision/Recall/F1 table."""
    if fmt not in FORMATS:
        raise UnsupportedFormat(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
    reports = _as_list(metrics)
    if fmt == "json":
        return json.dumps([r.to_dict() for r in reports], indent=2) + "\n"
    rows = [[DISPLAY_NAMES.get(r.matcher_id, r.matcher_id), r.dataset_id]
            + [getattr(r, k) if fmt == "text" else _csv_num(getattr(r, k)) for k in METRIC_COLUMNS]
            for r in reports]
    return _render(("Matcher", "Data", "Accuracy", "Precision", "Recall", "F1"), rows, fmt)


def _csv_num(value: Optional[float]) -> Optional[str]:
    return None if value is None else f"{value:.4f}"


def tradeoff_points(metrics: Union[MetricsReport, Iterable[MetricsReport]]) -> List[Dict[str, Any]]:
    """One (FPR, FNR) point per report and task size N."""
    points = []
    for r in _as_list(metrics):
        for n, sub in sorted(r.per_n.items()):
            points.append({"matcher": DISPLAY_NAMES.get(r.matcher_id, r.matcher_id), "data": r.dataset_id,
                           "n_tools": n, "fpr": sub.fpr, "fnr": sub.fnr})
    return points


def tradeoff_table(metrics: Union[MetricsReport, Iterable[MetricsReport]], fmt: str = "text") -> str:
    """Under/over-scoping table: FPR (over-scoping) against FNR (under-scoping) per N."""
    if fmt not in FORMATS:
        raise UnsupportedFormat(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
    points = tradeoff_points(metrics)
    if fmt == "json":
        return json.dumps(points, indent=2) + "\n"
    rows = [[p["matcher"], p["data"], p["n_tools"],
             p["fpr"] if fmt == "text" else _csv_num(p["fpr"]),
             p["fnr"] if fmt == "text" else _csv_num(p["fnr"])] for p in points]
    return _render(("Matcher", "Data", "N", "FPR", "FNR"), rows, fmt)


def load_reports(text: str) -> List[MetricsReport]:
    data = json.loads(text)
    if isinstance(data, dict):
        data = [data]
    return [MetricsReport.from_dict(d) for d in data]
