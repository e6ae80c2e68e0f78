"""Campaign engine: closed-loop recovery trials, Monte Carlo campaigns, reports."""

from __future__ import annotations

import csv
import io
import json
import os
import random
import time
from dataclasses import dataclass, field

from . import records
from .benchmarks import BENCHMARKS, get_benchmark
from .controller import (
    DeployVariant,
    EpisodeClosed,
    Fallback,
    Normal,
    RaiseAlarm,
    ReconfigureDynamic,
    RecoveryController,
    RequestVariant,
    RunSelfTests,
    Thresholds,
)
from .diversity import DEFAULT_CONFIG, DiversityConfig
from .faults import Fault, FaultPlan, FaultSpace, Permanent, Transient, kind_name, sample_faults
from .machine import golden_run
from .redundancy import Consensus, NmrConfig, ReplicaSlot, execute_replicas, vote
from .selftest import CoreContext, run_self_tests
from .server import Generated, VariantRequest, generate_variant

SINGLE_SHOT = "single-shot-voting"
CLOSED_LOOP = "closed-loop-recovery"
MODES = (SINGLE_SHOT, CLOSED_LOOP)

UNDETECTED = "undetected"
MASKED = "masked-throughout"
RECOVERED_DYNAMIC = "recovered-dynamic"
RECOVERED_STATIC = "recovered-static"
FALLBACK = "fallback-alarm"
STATUSES = (MASKED, RECOVERED_DYNAMIC, RECOVERED_STATIC, FALLBACK, UNDETECTED)

CSV_COLUMNS = (
    "trial",
    "fault_kind",
    "fault_location",
    "onset",
    "rounds_to_detect",
    "dynamic_attempts",
    "final_status",
    "variant_config",
)


class SpecError(ValueError):
    """A campaign spec is malformed."""


@dataclass(frozen=True)
class CampaignSpec:
    benchmark: str
    fault_space: FaultSpace
    trials: int = 100
    seed: int = 0
    nmr: NmrConfig = NmrConfig()
    thresholds: Thresholds = Thresholds()
    mode: str = CLOSED_LOOP
    onset_rounds: int = 10
    observe_rounds: int = 20  # rounds watched after onset when nothing escalates
    max_rounds: int = 200

    def __post_init__(self):
        if self.trials < 1:
            raise SpecError("trials must be >= 1")
        if self.benchmark not in BENCHMARKS:
            raise SpecError(f"unknown benchmark {self.benchmark!r}")
        if self.mode not in MODES:
            raise SpecError(f"mode must be one of {', '.join(MODES)}")
        if self.onset_rounds < 1 or self.max_rounds <= self.onset_rounds:
            raise SpecError("need 1 <= onset_rounds < max_rounds")

    def to_dict(self) -> dict:
        t = self.thresholds
        return {
            "benchmark": self.benchmark,
            "fault_space": records.space_to_dict(self.fault_space),
            "trials": self.trials,
            "seed": self.seed,
            "nmr": {"n": self.nmr.n, "m": self.nmr.m},
            "thresholds": {
                "threshold_dynamic": t.threshold_dynamic,
                "max_dynamic_attempts": t.max_dynamic_attempts,
                "coverage_threshold": t.coverage_threshold,
            },
            "mode": self.mode,
            "onset_rounds": self.onset_rounds,
            "observe_rounds": self.observe_rounds,
            "max_rounds": self.max_rounds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CampaignSpec:
        try:
            nmr = d.get("nmr", {})
            return cls(
                benchmark=d["benchmark"],
                fault_space=records.space_from_dict(d.get("fault_space", {})),
                trials=int(d.get("trials", 100)),
                seed=int(d.get("seed", 0)),
                nmr=NmrConfig(int(nmr.get("n", 3)), nmr.get("m")),
                thresholds=Thresholds(**d.get("thresholds", {})),
                mode=d.get("mode", CLOSED_LOOP),
                onset_rounds=int(d.get("onset_rounds", 10)),
                observe_rounds=int(d.get("observe_rounds", 20)),
                max_rounds=int(d.get("max_rounds", 200)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"bad campaign spec: {exc}") from None


@dataclass
class TrialRecord:
    trial: int
    fault: Fault
    onset: int
    final_status: str
    rounds_to_detect: int | None = None
    dynamic_attempts: int = 0
    variant_config: DiversityConfig | None = None
    phases: list[str] = field(default_factory=list)
    votes: list[str] = field(default_factory=list)
    consensus_violations: int = 0  # consensus value differing from golden
    identification_violations: int = 0  # faulty core missing from dissenters on a mismatch
    events: list[dict] = field(default_factory=list)

    @property
    def detected(self) -> bool:
        return self.rounds_to_detect is not None

    def csv_row(self) -> list[str]:
        return [
            str(self.trial),
            kind_name(self.fault.kind),
            records.describe_kind(self.fault.kind),
            str(self.onset),
            "" if self.rounds_to_detect is None else str(self.rounds_to_detect),
            str(self.dynamic_attempts),
            self.final_status,
            "" if self.variant_config is None else self.variant_config.describe(),
        ]


@dataclass
class CampaignSummary:
    trials: int
    counts: dict[str, int]
    per_class: dict[str, dict[str, int]]
    detected: int
    escalated: int
    recovered_dynamic_among_detected: float | None
    recovered_dynamic_among_escalated: float | None
    consensus_violations: int
    identification_violations: int
    runtime_seconds: float = 0.0

    @property
    def fractions(self) -> dict[str, float]:
        return {s: self.counts.get(s, 0) / self.trials if self.trials else 0.0 for s in STATUSES}

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "counts": {s: self.counts.get(s, 0) for s in STATUSES},
            "fractions": self.fractions,
            "per_class": self.per_class,
            "detected": self.detected,
            "escalated": self.escalated,
            "recovered_dynamic_among_detected": self.recovered_dynamic_among_detected,
            "recovered_dynamic_among_escalated": self.recovered_dynamic_among_escalated,
            "consensus_violations": self.consensus_violations,
            "identification_violations": self.identification_violations,
            "runtime_seconds": round(self.runtime_seconds, 3),
        }


# --- trials -----------------------------------------------------------------


def _trial_fault(spec: CampaignSpec, index: int, rng: random.Random) -> Fault:
    drawn = sample_faults(f"{spec.seed}:{index}:fault", spec.fault_space, 1)[0]
    return Fault(drawn.kind, drawn.persistence, rng.randrange(spec.nmr.n))


def _plans(fault: Fault, rnd: int, onset: int) -> dict[int, FaultPlan]:
    if rnd < onset:
        return {}
    if isinstance(fault.persistence, Transient):
        return {fault.core: FaultPlan([fault])} if rnd == onset else {}
    return {fault.core: FaultPlan([Fault(fault.kind, Permanent(0), fault.core)])}


def _vote_label(result) -> str:
    if isinstance(result, Consensus):
        return "ok" if not result.dissenters else "dissent:" + "+".join(map(str, sorted(result.dissenters)))
    return "no-majority"


def run_trial(spec: CampaignSpec, index: int) -> TrialRecord:
    """One closed-loop (or single-shot) scenario; a pure function of (spec, index)."""
    rng = random.Random(f"{spec.seed}:{index}")
    fault = _trial_fault(spec, index, rng)
    bench = get_benchmark(spec.benchmark)
    program = bench.program
    stream = random.Random(f"{spec.seed}:{index}:inputs")
    if spec.mode == SINGLE_SHOT:
        return _single_shot(spec, index, fault, bench, stream)

    onset = rng.randrange(spec.onset_rounds)
    thresholds = spec.thresholds
    slots = [ReplicaSlot(c, program) for c in range(spec.nmr.n)]
    ctl = RecoveryController(range(spec.nmr.n), thresholds)
    record = TrialRecord(index, fault, onset, UNDETECTED)
    left_normal = False
    static_used = False
    finished = None
    test_inputs = None

    for rnd in range(spec.max_rounds):
        inputs = bench.generate(stream)
        plans = _plans(fault, rnd, onset)
        outputs = execute_replicas(program, inputs, slots, plans, bench.watchdog)
        result = vote(outputs, spec.nmr.m)
        record.votes.append(_vote_label(result))
        golden = tuple(golden_run(program, inputs))
        if isinstance(result, Consensus):
            if result.value != golden:
                record.consensus_violations += 1
            if result.mismatch and fault.core in plans and outputs[fault.core] != golden \
                    and fault.core not in result.dissenters:
                record.identification_violations += 1
        if result.mismatch and record.rounds_to_detect is None:
            record.rounds_to_detect = rnd - onset

        queue = list(ctl.feed_vote(result, rnd))
        while queue:
            action = queue.pop(0)
            if isinstance(action, ReconfigureDynamic):
                left_normal = True
                slot = slots[action.core]
                slot.deploy(ctl.next_config(action.core, slot.config, spec.seed * 1_000_003 + index, program))
                record.dynamic_attempts = action.attempt
            elif isinstance(action, RunSelfTests):
                static_used = True
                slot = slots[action.core]
                ctx = CoreContext(
                    plans.get(action.core, FaultPlan()),
                    encoding_seed=slot.config.static_.opcode_encoding_seed,
                )
                queue.extend(ctl.feed_report(run_self_tests(ctx).found, rnd))
            elif isinstance(action, RequestVariant):
                if test_inputs is None:
                    test_inputs = tuple(map(tuple, bench.test_inputs()))
                response = generate_variant(
                    VariantRequest(program, action.fault, test_inputs, thresholds.coverage_threshold)
                )
                queue.extend(ctl.feed_variant(response.config if isinstance(response, Generated) else None, rnd))
            elif isinstance(action, DeployVariant):
                slots[action.core].deploy(action.config)
            elif isinstance(action, RaiseAlarm):
                finished = FALLBACK
            elif isinstance(action, EpisodeClosed):
                finished = RECOVERED_STATIC if static_used else RECOVERED_DYNAMIC

        if finished is None and isinstance(ctl.phase, Normal) and left_normal and static_used:
            if ctl.health[fault.core].consecutive_ok >= thresholds.threshold_dynamic:
                finished = RECOVERED_STATIC
        if finished is None and not left_normal and isinstance(ctl.phase, Normal):
            if rnd >= onset + spec.observe_rounds and ctl.health[fault.core].error_counter == 0:
                finished = MASKED if record.detected else UNDETECTED
        if finished is not None:
            break

    if finished is None:
        # round budget spent without settling
        finished = FALLBACK if not isinstance(ctl.phase, Normal) or left_normal else (
            MASKED if record.detected else UNDETECTED)
    if isinstance(ctl.phase, Fallback):
        finished = FALLBACK
    record.final_status = finished
    record.phases = list(ctl.visited)
    record.events = [e.to_dict() for e in ctl.log]
    config = slots[fault.core].config
    record.variant_config = None if config == DEFAULT_CONFIG else config
    return record


def _single_shot(spec, index, fault, bench, stream) -> TrialRecord:
    program = bench.program
    inputs = bench.generate(stream)
    slots = [ReplicaSlot(c, program) for c in range(spec.nmr.n)]
    plans = _plans(fault, 0, 0)
    outputs = execute_replicas(program, inputs, slots, plans, bench.watchdog)
    result = vote(outputs, spec.nmr.m)
    golden = tuple(golden_run(program, inputs))
    record = TrialRecord(index, fault, 0, UNDETECTED, votes=[_vote_label(result)])
    if result.mismatch:
        record.rounds_to_detect = 0
        record.final_status = MASKED
    if isinstance(result, Consensus):
        if result.value != golden:
            record.consensus_violations = 1
        if result.mismatch and outputs[fault.core] != golden and fault.core not in result.dissenters:
            record.identification_violations = 1
    record.phases = ["normal"]
    return record


# --- campaigns --------------------------------------------------------------


def summarize(records_: list[TrialRecord], runtime: float = 0.0) -> CampaignSummary:
    counts = {s: 0 for s in STATUSES}
    per_class: dict[str, dict[str, int]] = {}
    for r in records_:
        counts[r.final_status] += 1
        cls = per_class.setdefault(kind_name(r.fault.kind), {s: 0 for s in STATUSES})
        cls[r.final_status] += 1
    detected = [r for r in records_ if r.detected]
    escalated = [r for r in records_ if r.dynamic_attempts > 0]

    def frac(rs):
        if not rs:
            return None
        return sum(r.final_status == RECOVERED_DYNAMIC for r in rs) / len(rs)

    return CampaignSummary(
        trials=len(records_),
        counts=counts,
        per_class={k: per_class[k] for k in sorted(per_class)},
        detected=len(detected),
        escalated=len(escalated),
        recovered_dynamic_among_detected=frac(detected),
        recovered_dynamic_among_escalated=frac(escalated),
        consensus_violations=sum(r.consensus_violations for r in records_),
        identification_violations=sum(r.identification_violations for r in records_),
        runtime_seconds=runtime,
    )


def run_campaign(spec: CampaignSpec, progress=None) -> tuple[CampaignSummary, list[TrialRecord]]:
    start = time.perf_counter()
    out = []
    for i in range(spec.trials):
        out.append(run_trial(spec, i))
        if progress is not None:
            progress(i + 1, spec.trials)
    out.sort(key=lambda r: r.trial)
    return summarize(out, time.perf_counter() - start), out


# --- reports ----------------------------------------------------------------


def csv_text(records_: list[TrialRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sorted(records_, key=lambda r: r.trial):
        writer.writerow(r.csv_row())
    return buf.getvalue()


def emit_report(summary: CampaignSummary, records_: list[TrialRecord], out_dir: str,
                formats=("csv", "structured-text")) -> list[str]:
    """Write ``trials.csv`` and/or ``summary.json`` into ``out_dir``; returns the paths."""
    paths = []
    try:
        os.makedirs(out_dir, exist_ok=True)
        if "csv" in formats:
            path = os.path.join(out_dir, "trials.csv")
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(csv_text(records_))
            paths.append(path)
        if "structured-text" in formats:
            path = os.path.join(out_dir, "summary.json")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(json.dumps(summary.to_dict(), sort_keys=True, indent=2) + "\n")
            paths.append(path)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report: {exc.strerror}", exc.filename) from None
    return paths
