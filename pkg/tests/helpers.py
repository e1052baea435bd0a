"""Shared test utilities: finite-difference gradients and log builders."""

from __future__ import annotations

import numpy as np

from oodstream.engine import EventLog, RunCounts, StreamEvent
from oodstream.filtering import FilterDecision
from oodstream.nn import LossSpec, MlpModel, total_loss


def finite_diff_grads(model: MlpModel, x, spec: LossSpec, step: float = 1e-5):
    """Central-difference gradient of total_loss w.r.t. every parameter."""
    d_weights, d_biases = [], []
    for tensors, store in ((model.weights, d_weights), (model.biases, d_biases)):
        for t in tensors:
            g = np.zeros_like(t)
            flat = t.ravel()
            gflat = g.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = total_loss(model, x, spec)
                flat[i] = orig - step
                lo = total_loss(model, x, spec)
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * step)
            store.append(g)
    return d_weights, d_biases


def max_grad_rel_err(model: MlpModel, x, spec: LossSpec, step: float = 1e-5) -> float:
    """Max entrywise relative error between analytic and numeric gradients,
    with a 1e-4 magnitude floor so exact zeros compare at absolute scale."""
    from oodstream.nn import backward

    analytic = backward(model, x, spec)
    fd_w, fd_b = finite_diff_grads(model, x, spec, step)
    worst = 0.0
    for a, f in zip(analytic.d_weights + analytic.d_biases, fd_w + fd_b):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-4)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def make_event(index: int, score: float, is_ood: bool, prediction: int = 0,
               label: int | None = 0,
               decision: FilterDecision = FilterDecision.ABSTAIN,
               m_out: float = 0.0) -> StreamEvent:
    return StreamEvent(
        index=index,
        score_at_arrival=score,
        prediction=prediction,
        decision=decision,
        ground_truth_is_ood=is_ood,
        ground_truth_label=None if is_ood else label,
        m_out_after=m_out,
    )


def log_from_scores(id_scores, ood_scores) -> EventLog:
    """Synthetic event log carrying only scores and ground-truth flags."""
    events = []
    for s in id_scores:
        events.append(make_event(len(events), float(s), is_ood=False))
    for s in ood_scores:
        events.append(make_event(len(events), float(s), is_ood=True))
    counts = RunCounts(abstain=len(events))
    return EventLog(events=events, counts=counts)


def random_log(rng: np.random.Generator, n_id: int, n_ood: int,
               with_ties: bool) -> EventLog:
    """Random score log; optionally quantized so ties occur across classes."""
    id_scores = rng.normal(1.0, 0.5, size=n_id)
    ood_scores = rng.normal(0.5, 0.5, size=n_ood)
    if with_ties:
        id_scores = np.round(id_scores, 1)
        ood_scores = np.round(ood_scores, 1)
    return log_from_scores(id_scores, ood_scores)
