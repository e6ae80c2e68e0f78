"""N-modular redundant execution and M-out-of-N voting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

from .diversity import DEFAULT_CONFIG, DiversityConfig, effective_family, invert_reexpress, reexpress
from .faults import EMPTY_PLAN, FaultPlan
from .isa import Program
from .machine import DEFAULT_CYCLE_LIMIT, MachineImage, assemble, run


@dataclass(frozen=True)
class NmrConfig:
    n: int = 3
    m: int | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.m is None:
            object.__setattr__(self, "m", math.ceil(self.n / 2))
        if not 1 <= self.m <= self.n:
            raise ValueError("m must satisfy 1 <= m <= n")

    @property
    def tolerated_faulty(self) -> int:
        return self.n - self.m


@dataclass(frozen=True)
class ReplicaFailure:
    """Failure marker for a crashed or timed-out replica; never equal to a word vector."""

    status: str
    reason: str | None = None


@dataclass
class ReplicaSlot:
    core: int
    program: Program
    config: DiversityConfig = DEFAULT_CONFIG

    @cached_property
    def image(self) -> MachineImage:
        return assemble(self.program, self.config)

    def deploy(self, config: DiversityConfig) -> None:
        self.config = config
        self.__dict__.pop("image", None)


def canonical_output(program: Program, config: DiversityConfig, inputs, plan=EMPTY_PLAN,
                     cycle_limit=DEFAULT_CYCLE_LIMIT, image: MachineImage | None = None):
    """Run one replica and undo re-expression; failures map to ReplicaFailure."""
    image = image or assemble(program, config)
    family = effective_family(program, config)
    key = config.dynamic.reexpr_key
    raw_inputs = reexpress(inputs, key, family) if family else list(inputs)
    outcome = run(image, raw_inputs, plan, cycle_limit)
    if not outcome.completed:
        return ReplicaFailure(outcome.status, outcome.reason)
    outputs = outcome.outputs
    if family:
        outputs = invert_reexpress(outputs, key, family, program.inputs)
    return tuple(outputs)


def execute_replicas(
    program: Program,
    inputs,
    slots: list[ReplicaSlot],
    per_core_faults: dict[int, FaultPlan] | None = None,
    cycle_limit: int = DEFAULT_CYCLE_LIMIT,
) -> dict[int, tuple[int, ...] | ReplicaFailure]:
    per_core_faults = per_core_faults or {}
    results = {}
    for slot in sorted(slots, key=lambda s: s.core):
        plan = per_core_faults.get(slot.core, EMPTY_PLAN)
        results[slot.core] = canonical_output(program, slot.config, inputs, plan, cycle_limit, slot.image)
    return results


@dataclass(frozen=True)
class Consensus:
    value: tuple[int, ...]
    dissenters: frozenset[int] = field(default_factory=frozenset)
    agreeing: frozenset[int] = field(default_factory=frozenset)

    @property
    def mismatch(self) -> bool:
        return bool(self.dissenters)


@dataclass(frozen=True)
class NoMajority:
    values: tuple[tuple[int, object], ...]

    mismatch = True
    dissenters = frozenset()


VoteResult = Consensus | NoMajority


def vote(outputs: dict[int, object], m: int) -> Consensus | NoMajority:
    """Bit-exact M-out-of-N vote; failure markers never join a group."""
    if len(outputs) < m:
        raise ValueError("fewer outputs than the required majority")
    groups: dict[tuple[int, ...], list[int]] = {}
    for core in sorted(outputs):
        value = outputs[core]
        if isinstance(value, ReplicaFailure):
            continue
        groups.setdefault(tuple(value), []).append(core)
    ranked = sorted(groups.items(), key=lambda kv: -len(kv[1]))
    if ranked and len(ranked[0][1]) >= m and (len(ranked) == 1 or len(ranked[1][1]) < len(ranked[0][1])):
        value, cores = ranked[0]
        agreeing = frozenset(cores)
        return Consensus(value, frozenset(outputs) - agreeing, agreeing)
    return NoMajority(tuple(sorted(outputs.items())))
