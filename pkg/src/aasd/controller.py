"""Diversification control: the recovery state machine driven by vote results.

Transitions are pure functions ``(phase, health, input) -> (phase', health',
actions)``. :class:`RecoveryController` wraps them with mutable state and an
append-only event log for the harness.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .diversity import (
    DEFAULT_DATA_BASE,
    DiversityConfig,
    LayoutOverflow,
    data_extent,
    derive_layout,
    mirror_base_offset,
)
from .faults import DEFAULT_MEMORY_SIZE, FaultDefinition, kind_sort_key
from .isa import Program
from .redundancy import Consensus, NoMajority


class ScheduleExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class CoreHealth:
    error_counter: int = 0
    consecutive_ok: int = 0


@dataclass(frozen=True)
class Thresholds:
    threshold_dynamic: int = 3
    max_dynamic_attempts: int = 8
    coverage_threshold: float = 0.95

    def __post_init__(self):
        if self.threshold_dynamic < 1 or self.max_dynamic_attempts < 1:
            raise ValueError("threshold_dynamic and max_dynamic_attempts must be >= 1")
        if not 0 < self.coverage_threshold <= 1:
            raise ValueError("coverage_threshold must lie in (0, 1]")


# --- phases -----------------------------------------------------------------


@dataclass(frozen=True)
class Normal:
    kind = "normal"


@dataclass(frozen=True)
class DynamicAdaptation:
    core: int
    attempt: int
    kind = "dynamic-adaptation"


@dataclass(frozen=True)
class SelfTesting:
    core: int
    kind = "self-testing"


@dataclass(frozen=True)
class AwaitingVariant:
    core: int
    fault: FaultDefinition
    kind = "awaiting-variant"


@dataclass(frozen=True)
class Fallback:
    core: int
    reason: str  # "no-fault-found" | "generation-failed"
    kind = "fallback"


RecoveryPhase = Normal | DynamicAdaptation | SelfTesting | AwaitingVariant | Fallback
PHASE_KINDS = ("normal", "dynamic-adaptation", "self-testing", "awaiting-variant", "fallback")


# --- actions ----------------------------------------------------------------


@dataclass(frozen=True)
class ReconfigureDynamic:
    core: int
    attempt: int


@dataclass(frozen=True)
class RunSelfTests:
    core: int


@dataclass(frozen=True)
class RequestVariant:
    core: int
    fault: FaultDefinition


@dataclass(frozen=True)
class DeployVariant:
    core: int
    config: DiversityConfig


@dataclass(frozen=True)
class RaiseAlarm:
    core: int
    reason: str


@dataclass(frozen=True)
class EpisodeClosed:
    core: int


@dataclass(frozen=True)
class NoConsensus:
    pass


# --- transitions ------------------------------------------------------------


def on_vote_result(phase, health: dict[int, CoreHealth], vote, thresholds: Thresholds):
    health = dict(health)
    if isinstance(vote, NoMajority):
        return phase, health, [NoConsensus()]
    assert isinstance(vote, Consensus)
    for core in sorted(set(health) | vote.dissenters | vote.agreeing):
        h = health.get(core, CoreHealth())
        if core in vote.dissenters:
            health[core] = CoreHealth(h.error_counter + 1, 0)
        else:
            health[core] = CoreHealth(0, h.consecutive_ok + 1)

    if isinstance(phase, Normal):
        over = [c for c in sorted(vote.dissenters) if health[c].error_counter > thresholds.threshold_dynamic]
        if over:
            return DynamicAdaptation(over[0], 1), health, [ReconfigureDynamic(over[0], 1)]
    elif isinstance(phase, DynamicAdaptation):
        core = phase.core
        if core in vote.dissenters:
            if phase.attempt < thresholds.max_dynamic_attempts:
                nxt = phase.attempt + 1
                return DynamicAdaptation(core, nxt), health, [ReconfigureDynamic(core, nxt)]
            new_phase, actions = escalate(core)
            return new_phase, health, actions
        if health[core].consecutive_ok >= thresholds.threshold_dynamic:
            return Normal(), health, [EpisodeClosed(core)]
    return phase, health, []


def escalate(core: int):
    return SelfTesting(core), [RunSelfTests(core)]


def on_selftest_report(phase, report: list[FaultDefinition]):
    if not isinstance(phase, SelfTesting):
        raise ValueError(f"self-test report received in phase {phase}")
    if not report:
        return Fallback(phase.core, "no-fault-found"), [RaiseAlarm(phase.core, "no-fault-found")]
    first = min(report, key=lambda d: kind_sort_key(d.kind))
    return AwaitingVariant(phase.core, first), [RequestVariant(phase.core, first)]


def on_variant(phase, health: dict[int, CoreHealth], result):
    """``result`` is a DiversityConfig (variant) or None (generation failed)."""
    if not isinstance(phase, AwaitingVariant):
        raise ValueError(f"variant received in phase {phase}")
    core = phase.core
    if result is None:
        return Fallback(core, "generation-failed"), dict(health), [RaiseAlarm(core, "generation-failed")]
    health = dict(health)
    health[core] = CoreHealth()
    return Normal(), health, [DeployVariant(core, result)]


# --- adaptation schedule ----------------------------------------------------


@dataclass
class HistoryEntry:
    config: DiversityConfig
    errors: list[int] = field(default_factory=list)


class AdaptationHistory:
    """Per-core configs tried in the current episode with their error trajectory."""

    def __init__(self):
        self.episodes: dict[int, list[HistoryEntry]] = {}

    def start_episode(self, core: int, config: DiversityConfig) -> None:
        self.episodes[core] = [HistoryEntry(config)]

    def append(self, core: int, config: DiversityConfig) -> None:
        self.episodes.setdefault(core, []).append(HistoryEntry(config))

    def note_errors(self, core: int, counter: int) -> None:
        if self.episodes.get(core):
            self.episodes[core][-1].errors.append(counter)

    def episode(self, core: int) -> list[HistoryEntry]:
        return list(self.episodes.get(core, []))

    def attempts(self, core: int) -> int:
        return max(0, len(self.episodes.get(core, [])) - 1)


KNOB_CYCLE = ("gap", "gap", "base", "base", "order", "order", "key", "key")


def _base_candidates(current: DiversityConfig, program: Program | None, memory_size: int, rng):
    extent = 64 if program is None else data_extent(program, current.dynamic.gap_size)
    span = max(1, memory_size - DEFAULT_DATA_BASE - extent)
    mirror = mirror_base_offset(extent, memory_size)
    yield mirror if current.dynamic.base_offset != mirror else 0
    yield (current.dynamic.base_offset + memory_size // 4 + 0x5A5) % span
    while True:
        yield rng.randrange(span)


class ScheduleStrategy:
    """Default adaptation tactic: one knob per attempt in a fixed cycle.

    Gap size doubles (starting at 1), then the data base moves (first to the
    bitwise mirror of the default placement), then the variable order and the
    re-expression key are re-drawn. Knobs that do not apply are skipped.
    """

    def __init__(self, max_attempts: int = 8, memory_size: int = DEFAULT_MEMORY_SIZE):
        self.max_attempts = max_attempts
        self.memory_size = memory_size

    def __call__(self, core: int, history: AdaptationHistory, seed: int, program: Program | None = None):
        episode = history.episode(core)
        if not episode:
            raise ValueError(f"no open episode for core {core}")
        attempt = len(episode)
        if attempt > self.max_attempts:
            raise ScheduleExhausted(f"core {core}: {self.max_attempts} dynamic attempts used")
        tried = {e.config for e in episode}
        current = episode[-1].config
        rng = random.Random(f"{seed}:{core}:{attempt}")
        start = (attempt - 1) % len(KNOB_CYCLE)
        for step in range(len(KNOB_CYCLE) * 4):
            knob = KNOB_CYCLE[(start + step) % len(KNOB_CYCLE)]
            for candidate in self._variants(knob, current, program, rng):
                if candidate not in tried and self._feasible(candidate, program):
                    return candidate
        raise ScheduleExhausted(f"core {core}: no untried dynamic configuration left")

    def _variants(self, knob, current: DiversityConfig, program, rng):
        d = current.dynamic
        if knob == "gap":
            yield current.with_dynamic(gap_size=1 if d.gap_size == 0 else d.gap_size * 2)
        elif knob == "base":
            for i, offset in enumerate(_base_candidates(current, program, self.memory_size, rng)):
                if i >= 6:
                    break
                yield current.with_dynamic(base_offset=offset)
        elif knob == "order":
            if program is None or len(program.variables) > 1:
                for _ in range(4):
                    yield current.with_dynamic(variable_order_seed=rng.randrange(1 << 31))
        elif knob == "key":
            if program is None or program.reexpression:
                for _ in range(4):
                    yield current.with_dynamic(reexpr_key=rng.randrange(1, 1 << 32))

    def _feasible(self, config, program) -> bool:
        if program is None:
            return True
        try:
            derive_layout(program, config.dynamic, memory_size=self.memory_size)
        except LayoutOverflow:
            return False
        return True


def next_dynamic_config(core: int, history: AdaptationHistory, seed: int, program: Program | None = None,
                        max_attempts: int = 8) -> DiversityConfig:
    return ScheduleStrategy(max_attempts)(core, history, seed, program)


# --- stateful wrapper -------------------------------------------------------


@dataclass
class Event:
    round: int
    phase: str
    counters: dict[int, int]
    action: str

    def to_dict(self) -> dict:
        return {"round": self.round, "phase": self.phase, "counters": dict(self.counters), "action": self.action}


def describe_phase(phase) -> str:
    if isinstance(phase, DynamicAdaptation):
        return f"dynamic-adaptation(core={phase.core},attempt={phase.attempt})"
    if isinstance(phase, (SelfTesting,)):
        return f"self-testing(core={phase.core})"
    if isinstance(phase, AwaitingVariant):
        return f"awaiting-variant(core={phase.core})"
    if isinstance(phase, Fallback):
        return f"fallback(core={phase.core},reason={phase.reason})"
    return "normal"


def describe_action(action) -> str:
    name = type(action).__name__
    if isinstance(action, ReconfigureDynamic):
        return f"{name}(core={action.core},attempt={action.attempt})"
    if isinstance(action, DeployVariant):
        return f"{name}(core={action.core},config={action.config.describe()})"
    if isinstance(action, RequestVariant):
        return f"{name}(core={action.core},fault={action.fault.kind})"
    if isinstance(action, (RunSelfTests, EpisodeClosed)):
        return f"{name}(core={action.core})"
    if isinstance(action, RaiseAlarm):
        return f"{name}(core={action.core},reason={action.reason})"
    return name


class RecoveryController:
    """Single logical actor serializing votes, self-test reports and variants."""

    def __init__(self, cores, thresholds: Thresholds | None = None, strategy=None):
        self.thresholds = thresholds or Thresholds()
        self.phase = Normal()
        self.health = {c: CoreHealth() for c in cores}
        self.history = AdaptationHistory()
        self.strategy = strategy or ScheduleStrategy(self.thresholds.max_dynamic_attempts)
        self.log: list[Event] = []
        self.visited: list[str] = ["normal"]

    def _record(self, rnd: int, actions) -> None:
        counters = {c: h.error_counter for c, h in sorted(self.health.items())}
        if self.visited[-1] != self.phase.kind:
            self.visited.append(self.phase.kind)
        for action in actions or [None]:
            self.log.append(Event(rnd, describe_phase(self.phase), counters,
                                  describe_action(action) if action else ""))

    def feed_vote(self, vote, rnd: int = 0):
        self.phase, self.health, actions = on_vote_result(self.phase, self.health, vote, self.thresholds)
        for core, h in self.health.items():
            self.history.note_errors(core, h.error_counter)
        self._record(rnd, actions)
        return actions

    def next_config(self, core: int, current: DiversityConfig, seed: int, program: Program | None = None):
        if not self.history.episode(core) or isinstance(self.phase, DynamicAdaptation) and self.phase.attempt == 1:
            self.history.start_episode(core, current)
        config = self.strategy(core, self.history, seed, program)
        self.history.append(core, config)
        return config

    def feed_report(self, report, rnd: int = 0):
        self.phase, actions = on_selftest_report(self.phase, report)
        self._record(rnd, actions)
        return actions

    def feed_variant(self, config, rnd: int = 0):
        self.phase, self.health, actions = on_variant(self.phase, self.health, config)
        self._record(rnd, actions)
        return actions
