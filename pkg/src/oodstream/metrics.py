"""Detection and classification metrics over an event log.

All metrics consume arrival-time scores only. The module also carries
brute-force oracle implementations (exhaustive threshold sweep, O(n^2)
pairwise comparison) used to cross-check the fast paths in tests.

Threshold semantics: a score >= tau counts as an in-distribution call; tau is
the largest threshold whose ID true-positive rate still meets the target, the
most conservative feasible choice. AUROC uses the midrank (half-credit) tie
convention and equals the trapezoidal ROC area.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .engine import EventLog, RunCounts, StreamEvent
from .filtering import FilterDecision


@dataclass(frozen=True)
class MetricsReport:
    fpr95: float
    auroc: float
    id_acc: float
    counts: RunCounts


def _split_scores(events: list[StreamEvent]) -> tuple[np.ndarray, np.ndarray]:
    id_scores = np.array([e.score_at_arrival for e in events if not e.ground_truth_is_ood])
    ood_scores = np.array([e.score_at_arrival for e in events if e.ground_truth_is_ood])
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("log must contain at least one ID and one OOD event")
    return id_scores, ood_scores


def fpr_at_tpr(log: EventLog, tpr_target: float = 0.95) -> float:
    """OOD false-positive rate at the largest threshold meeting the ID TPR target."""
    if not 0.0 < tpr_target <= 1.0:
        raise ValueError(f"tpr_target must be in (0, 1], got {tpr_target}")
    id_scores, ood_scores = _split_scores(log.events)
    k = math.ceil(tpr_target * id_scores.size)
    tau = np.sort(id_scores)[id_scores.size - k]
    return float(np.mean(ood_scores >= tau))


def fpr_at_tpr_bruteforce(log: EventLog, tpr_target: float = 0.95) -> float:
    """Exhaustive sweep over every observed score as a candidate threshold."""
    id_scores, ood_scores = _split_scores(log.events)
    feasible = [
        t for t in np.unique(np.concatenate([id_scores, ood_scores]))
        if np.mean(id_scores >= t) >= tpr_target
    ]
    tau = max(feasible)
    return float(np.mean(ood_scores >= tau))


def auroc(log: EventLog) -> float:
    """Probability an ID event outranks an OOD event, ties counted half."""
    id_scores, ood_scores = _split_scores(log.events)
    combined = np.concatenate([id_scores, ood_scores])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(combined.size)
    ranks[order] = np.arange(1, combined.size + 1)
    # average ranks within tie groups (midranks)
    sorted_vals = combined[order]
    i = 0
    while i < combined.size:
        j = i
        while j + 1 < combined.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    n_id = id_scores.size
    u = ranks[:n_id].sum() - n_id * (n_id + 1) / 2.0
    return float(u / (n_id * ood_scores.size))


def auroc_bruteforce(log: EventLog) -> float:
    """O(n^2) pairwise count: wins plus half the ties."""
    id_scores, ood_scores = _split_scores(log.events)
    diff = id_scores[:, None] - ood_scores[None, :]
    wins = np.sum(diff > 0) + 0.5 * np.sum(diff == 0)
    return float(wins / diff.size)


def id_accuracy(log: EventLog) -> float:
    """Fraction of labeled ID events whose arrival-time prediction is correct."""
    hits = total = 0
    for e in log.events:
        if e.ground_truth_is_ood or e.ground_truth_label is None:
            continue
        total += 1
        hits += e.prediction == e.ground_truth_label
    if total == 0:
        raise ValueError("log has no labeled ID events")
    return hits / total


def id_accuracy_recount(log: EventLog) -> float:
    """Straight-line recount oracle for id_accuracy."""
    pairs = [(e.prediction, e.ground_truth_label) for e in log.events
             if not e.ground_truth_is_ood and e.ground_truth_label is not None]
    if not pairs:
        raise ValueError("log has no labeled ID events")
    return sum(1 for p, t in pairs if p == t) / len(pairs)


def report(log: EventLog) -> MetricsReport:
    """All sub-metrics plus the run counters; counters must partition the log."""
    c = log.counts
    if c.pseudo_id + c.pseudo_ood + c.abstain != len(log.events):
        raise ValueError("run counters do not partition the event log")
    return MetricsReport(
        fpr95=fpr_at_tpr(log),
        auroc=auroc(log),
        id_acc=id_accuracy(log),
        counts=c,
    )


def report_to_json(rep: MetricsReport, extra: dict | None = None) -> str:
    """Serialize with fixed key names; ``extra`` adds provenance keys."""
    obj: dict = dict(extra or {})
    obj.update({
        "fpr95": rep.fpr95,
        "auroc": rep.auroc,
        "id_acc": rep.id_acc,
        "counts": {
            "pseudo_id": rep.counts.pseudo_id,
            "pseudo_ood": rep.counts.pseudo_ood,
            "abstain": rep.counts.abstain,
            "updates": rep.counts.updates,
            "bank_replacements": rep.counts.bank_replacements,
            "contaminated_replacements": rep.counts.contaminated_replacements,
        },
    })
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def slice_log(log: EventLog, start: int, stop: int) -> EventLog:
    """Sub-log over [start, stop); partition counters recomputed from events."""
    events = log.events[start:stop]
    counts = RunCounts()
    for e in events:
        if e.decision == FilterDecision.PSEUDO_ID:
            counts.pseudo_id += 1
        elif e.decision == FilterDecision.PSEUDO_OOD:
            counts.pseudo_ood += 1
            counts.updates += 1
        else:
            counts.abstain += 1
    return EventLog(events=events, counts=counts)
