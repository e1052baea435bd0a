"""The online adaptation loop.

One sample arrives at a time. It is scored under the live model, filtered
into pseudo-ID / pseudo-OOD / abstain, and then:

  * pseudo-ID samples replace their predicted class's memory-bank slot;
  * pseudo-OOD samples trigger T inner optimization iterations of
        total = id_weight * bank_ce + lambda1 * uniform_ce
              + lambda2 * consistency_hinge
    followed by exactly one greedy outlier-margin update with the
    arrival-time score;
  * abstentions change nothing.

A frozen clone of the pretrained model supplies the reference prediction for
the consistency hinge and never changes. Hidden ground truth rides along
into the event log only; no decision or loss ever reads it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import filtering, memory, nn, scoring
from .data import LabeledSet, Stream
from .filtering import FilterDecision, Margins
from .memory import MemoryBank
from .nn import LossSpec, MlpModel, SgdConfig
from .scoring import ScoreKind


class NonFiniteLossError(ArithmeticError):
    """An update produced a non-finite loss; the run aborts rather than skip."""


@dataclass
class AutoConfig:
    """Knobs of the online loop. Defaults match the recommended operating point."""

    lambda1: float = 1.0
    lambda2: float = 0.1
    phi: float = 0.2
    iters_t: int = 2
    score_kind: ScoreKind = field(default_factory=ScoreKind)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    lambda2_decay: float = 0.0
    id_weight: float = 1.0
    id_loss_reduction: str = "sum"
    k1: float = 0.0
    k2: float = 3.0
    stats_subsample_n: int | None = None
    margin_literal_m0: bool = False
    memory_mode: str = "random"
    memory_seed: int = 0

    def __post_init__(self) -> None:
        if self.iters_t < 0:
            raise ValueError(f"iters_t must be >= 0, got {self.iters_t}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if self.lambda2_decay < 0:
            raise ValueError("lambda2_decay must be nonnegative")
        if self.memory_mode not in ("random", "prototype"):
            raise ValueError(f"unknown memory_mode {self.memory_mode!r}")
        if self.id_loss_reduction not in ("sum", "mean"):
            raise ValueError(f"unknown id_loss_reduction {self.id_loss_reduction!r}")


@dataclass
class AutoState:
    """Mutable per-run state owned by a single engine instance."""

    model_t: MlpModel
    model_0: MlpModel
    margins: Margins
    bank: MemoryBank
    step_counter: int = 0
    update_counter: int = 0
    bank_replacements: int = 0
    contaminated_replacements: int = 0


@dataclass(frozen=True)
class StreamEvent:
    """Per-arrival record; score and prediction are pre-update values."""

    index: int
    score_at_arrival: float
    prediction: int
    decision: FilterDecision
    ground_truth_is_ood: bool
    ground_truth_label: int | None
    m_out_after: float


@dataclass
class RunCounts:
    pseudo_id: int = 0
    pseudo_ood: int = 0
    abstain: int = 0
    updates: int = 0
    bank_replacements: int = 0
    contaminated_replacements: int = 0


@dataclass(frozen=True)
class UpdateTrace:
    """Total-loss trajectory of one update episode: T+1 values, descending
    when the step actually decreased the objective."""

    event_index: int
    losses: tuple[float, ...]


@dataclass
class EventLog:
    """Ordered event records plus run-level counters and episode traces."""

    events: list[StreamEvent] = field(default_factory=list)
    counts: RunCounts = field(default_factory=RunCounts)
    update_traces: list[UpdateTrace] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)


def lambda2_at(config: AutoConfig, update_counter: int) -> float:
    """Consistency-loss weight for the given episode counter.

    With decay enabled the weight is lambda2 / (1 + decay * k): monotone
    non-increasing in k with unit factor at k = 0.
    """
    if config.lambda2_decay == 0.0:
        return config.lambda2
    return config.lambda2 / (1.0 + config.lambda2_decay * update_counter)


def init_state(model: MlpModel, train_set: LabeledSet, config: AutoConfig) -> AutoState:
    """Freeze a reference clone, estimate filter margins, and seed the bank.

    Score statistics use the configured score kind so the margins live on
    that score's scale. ``stats_subsample_n`` keeps only the first n rows of
    the (already shuffled) training set for the estimate.
    """
    model_0 = nn.clone_frozen(model)
    feats = train_set.features
    if config.stats_subsample_n is not None:
        n = min(config.stats_subsample_n, len(feats))
        if n < 1:
            raise ValueError("stats_subsample_n must keep at least one sample")
        feats = feats[:n]
    scores = [scoring.score(config.score_kind, nn.forward_logits(model, x)) for x in feats]
    stats = filtering.estimate_id_stats(scores)
    margins = filtering.init_margins(stats, config.k1, config.k2,
                                     literal_m0=config.margin_literal_m0)
    if config.memory_mode == "prototype":
        bank = memory.init_prototype(train_set)
    else:
        bank = memory.init_random(train_set, config.memory_seed)
    return AutoState(model_t=model, model_0=model_0, margins=margins, bank=bank)


def _episode_spec(state: AutoState, config: AutoConfig, pred_0: int,
                  lam2: float) -> LossSpec:
    return LossSpec(
        uniform_weight=config.lambda1,
        sc_weight=lam2,
        sc_ref_pred=pred_0,
        sc_phi=config.phi,
        bank_inputs=state.bank.features,
        bank_labels=state.bank.labels,
        bank_weight=config.id_weight,
        bank_reduction=config.id_loss_reduction,
    )


def step(state: AutoState, config: AutoConfig, x: np.ndarray,
         hidden_truth: tuple[bool, int | None]) -> tuple[StreamEvent, UpdateTrace | None]:
    """Process one arrival; returns its event and, for update episodes, the
    loss trajectory. ``hidden_truth`` is recorded verbatim and never read by
    any decision."""
    logits = nn.forward_logits(state.model_t, x)
    arrival_score = scoring.score(config.score_kind, logits)
    prediction = scoring.predict(logits)
    decision = filtering.classify(state.margins, arrival_score)
    trace: UpdateTrace | None = None

    if decision == FilterDecision.PSEUDO_ID:
        memory.replace(state.bank, x, prediction)
        if not state.bank.prototype:
            state.bank_replacements += 1
            if hidden_truth[0]:
                state.contaminated_replacements += 1
    elif decision == FilterDecision.PSEUDO_OOD:
        lam2 = lambda2_at(config, state.update_counter)
        pred_0 = scoring.predict(nn.forward_logits(state.model_0, x))
        spec = _episode_spec(state, config, pred_0, lam2)
        losses: list[float] = []
        for _ in range(config.iters_t):
            loss, grads = nn._loss_and_grad(state.model_t, x, spec)
            if not math.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite loss {loss} at stream index {state.step_counter}"
                )
            losses.append(loss)
            nn.sgd_step(state.model_t, grads, config.sgd)
        if config.iters_t > 0:
            final = nn.total_loss(state.model_t, x, spec)
            if not math.isfinite(final):
                raise NonFiniteLossError(
                    f"non-finite loss {final} at stream index {state.step_counter}"
                )
            losses.append(final)
            trace = UpdateTrace(state.step_counter, tuple(losses))
        state.update_counter += 1
        state.margins = filtering.update_outlier_margin(state.margins, arrival_score)

    event = StreamEvent(
        index=state.step_counter,
        score_at_arrival=arrival_score,
        prediction=prediction,
        decision=decision,
        ground_truth_is_ood=bool(hidden_truth[0]),
        ground_truth_label=None if hidden_truth[1] is None or hidden_truth[1] < 0
        else int(hidden_truth[1]),
        m_out_after=state.margins.m_out,
    )
    state.step_counter += 1
    return event, trace


def run_stream(state: AutoState, config: AutoConfig, stream: Stream,
               log: EventLog | None = None) -> EventLog:
    """Apply ``step`` to every arrival in order; extends ``log`` if given."""
    if log is None:
        log = EventLog()
    for i in range(len(stream)):
        truth = (bool(stream.is_ood[i]), int(stream.labels[i]))
        event, trace = step(state, config, stream.features[i], truth)
        log.events.append(event)
        if trace is not None:
            log.update_traces.append(trace)
        if event.decision == FilterDecision.PSEUDO_ID:
            log.counts.pseudo_id += 1
        elif event.decision == FilterDecision.PSEUDO_OOD:
            log.counts.pseudo_ood += 1
            log.counts.updates += 1
        else:
            log.counts.abstain += 1
    log.counts.bank_replacements = state.bank_replacements
    log.counts.contaminated_replacements = state.contaminated_replacements
    return log


def run_posthoc(model: MlpModel, margins: Margins, stream: Stream,
                score_kind: ScoreKind, *, update_margins: bool = True) -> EventLog:
    """Straight-line post-hoc scorer: the model is never touched.

    Detector bookkeeping still runs: classification against the margins and,
    unless ``update_margins`` is false, the greedy outlier-margin update on
    pseudo-OOD arrivals. Scores and metrics are unaffected by that toggle.
    """
    log = EventLog()
    for i in range(len(stream)):
        logits = nn.forward_logits(model, stream.features[i])
        s = scoring.score(score_kind, logits)
        pred = scoring.predict(logits)
        decision = filtering.classify(margins, s)
        if decision == FilterDecision.PSEUDO_ID:
            log.counts.pseudo_id += 1
        elif decision == FilterDecision.PSEUDO_OOD:
            log.counts.pseudo_ood += 1
            if update_margins:
                margins = filtering.update_outlier_margin(margins, s)
        else:
            log.counts.abstain += 1
        label = int(stream.labels[i])
        log.events.append(StreamEvent(
            index=i,
            score_at_arrival=s,
            prediction=pred,
            decision=decision,
            ground_truth_is_ood=bool(stream.is_ood[i]),
            ground_truth_label=None if label < 0 else label,
            m_out_after=margins.m_out,
        ))
    return log
