"""Software-based self-tests run as probe programs on a possibly faulty core.

Probes execute through the same fault views as ordinary runs. The host
only sees what a probe leaves behind: its outputs, its final register file
and its memory image. Faults are located by comparing those observations
with host-side predictions; the injected plan is never consulted.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

from .diversity import DEFAULT_DATA_BASE, DiversityConfig, DynamicParams, StaticParams, opcode_encoding
from .faults import (
    ADDRESS_MODES,
    DEFAULT_MEMORY_SIZE,
    EMPTY_PLAN,
    AddressDecoderLine,
    Fault,
    FaultDefinition,
    FaultPlan,
    InstructionDecoderSub,
    MemoryStuckBit,
    RegisterStuckBit,
    apply_address_mapping,
    kind_sort_key,
)
from .isa import NUM_REGISTERS, WORD_MASK, Instruction, Opcode, Program, Variable
from .machine import COMPLETED, MachineState, assemble, execute

PATTERNS = (0x00000000, 0xFFFFFFFF, 0xAAAAAAAA, 0x55555555)
# Probe data sits where no single address-line fault can push it onto code
# (low memory) or onto the line-signature words (top of memory).
WALK_BASES = (0x5A40, 0x3C80)
PROBE_DATA = 0x5A40
WINDOW = 0x5A5A
WINDOW_VALUE = 0xA5A5A5A5
DEFAULT_REGION = (0x1000, 0x1100)
MAX_FAULTY_REGISTERS = 4
PROBE_CYCLES = 20_000
SWEEP_CYCLES = 64

TESTS = ("registers", "memory", "opcodes")


class ProbeCrashed(RuntimeError):
    """A probe could not complete, so its test cannot localize anything."""

    def __init__(self, test: str, status: str, reason: str | None = None):
        super().__init__(f"{test} probe {status}" + (f" ({reason})" if reason else ""))
        self.test = test
        self.status = status
        self.reason = reason


@dataclass(frozen=True)
class CoreContext:
    """What a self-test may use: a core (its fault plan stands in for the
    silicon), the core's current opcode encoding and the memory region
    reserved for the march test."""

    plan: FaultPlan = EMPTY_PLAN
    encoding_seed: int | None = None
    memory_size: int = DEFAULT_MEMORY_SIZE
    region: tuple[int, int] = DEFAULT_REGION
    excluded_registers: frozenset[int] = frozenset()

    def silicon(self) -> FaultPlan:
        # transient faults have expired by the time tests are scheduled
        return self.plan.without_transients()


@dataclass
class FaultReport:
    found: list[FaultDefinition] = field(default_factory=list)
    tests_run: list[str] = field(default_factory=list)
    crashed: list[str] = field(default_factory=list)
    inconclusive: list[str] = field(default_factory=list)

    def kinds(self):
        return [d.kind for d in self.found]

    def add(self, definitions) -> None:
        seen = {d.kind for d in self.found}
        for d in definitions:
            if d.kind not in seen:
                self.found.append(d)
                seen.add(d.kind)


# --- probe construction -----------------------------------------------------


def _config(data_base: int, seed: int | None) -> DiversityConfig:
    return DiversityConfig(DynamicParams(base_offset=data_base - DEFAULT_DATA_BASE), StaticParams(opcode_encoding_seed=seed))


def _probe(ctx: CoreContext, program: Program, data_base: int, seed, test: str) -> MachineState:
    image = assemble(program, _config(data_base, seed), ctx.memory_size)
    state = execute(image, (), ctx.silicon(), PROBE_CYCLES)
    if state.outcome.status != COMPLETED:
        raise ProbeCrashed(test, state.outcome.status, state.outcome.reason)
    return state


def _allowed(excluded) -> list[int]:
    regs = [r for r in range(1, NUM_REGISTERS) if r not in excluded]
    return regs + ([0] if 0 not in excluded else [])


@functools.lru_cache(maxsize=8)
def _walk_program(pattern: int) -> Program:
    ins = [Instruction(Opcode.LOADI, r, 0, 0, pattern) for r in range(NUM_REGISTERS)]
    ins += [Instruction(Opcode.STORE, r, 0, 0, r, symbol="out") for r in range(NUM_REGISTERS)]
    ins.append(Instruction(Opcode.HALT))
    return Program("probe-registers", tuple(ins), (Variable("out", NUM_REGISTERS),), 0, NUM_REGISTERS)


# --- register walk ----------------------------------------------------------


def register_walk_test(ctx: CoreContext, seed: int | None = None) -> list[FaultDefinition]:
    """Write each pattern to every register and read it back through memory.

    The walk runs at two data placements; a bit is reported only when both
    agree, which separates register faults from stuck cells under the probe.
    """
    seed = ctx.encoding_seed if seed is None else seed
    verdicts = []
    for base in WALK_BASES:
        observed = {p: _probe(ctx, _walk_program(p), base, seed, "registers").outcome.outputs for p in PATTERNS}
        stuck = set()
        for r in range(NUM_REGISTERS):
            for b in range(32):
                bits = {(observed[p][r] >> b) & 1 for p in PATTERNS}
                if len(bits) == 1:
                    stuck.add((r, b, bits.pop()))
        verdicts.append(stuck)
    common = verdicts[0] & verdicts[1]
    if len({r for r, _, _ in common}) > MAX_FAULTY_REGISTERS:
        raise _Inconclusive("registers: too many registers disagree; probe path suspect")
    return [FaultDefinition(RegisterStuckBit(r, b, v), "register-walk") for r, b, v in sorted(common)]


class _Inconclusive(Exception):
    pass


# --- memory: address-line signature and MATS+ ------------------------------


def _line_count(memory_size: int) -> int:
    return memory_size.bit_length() - 1


def _signature_rom(memory_size: int) -> dict[int, int]:
    top = memory_size - 1
    cells = {top: top}
    for line in range(_line_count(memory_size)):
        a = top ^ (1 << line)
        cells[a] = a
    return cells


@functools.lru_cache(maxsize=64)
def _line_programs(memory_size: int, regs: tuple[int, ...]) -> tuple[tuple[Program, tuple[int, ...]], ...]:
    top = memory_size - 1
    rom = tuple(sorted(_signature_rom(memory_size).items()))
    lines = list(range(_line_count(memory_size)))
    per_run = len(regs) - 1
    runs = []
    for start in range(0, len(lines), per_run):
        addrs = (top,) + tuple(top ^ (1 << l) for l in lines[start:start + per_run])
        ins = [Instruction(Opcode.LOAD, regs[i], 0, 0, a) for i, a in enumerate(addrs)]
        ins.append(Instruction(Opcode.HALT))
        runs.append((Program("probe-lines", tuple(ins), (Variable("out", 1),), 0, 1, rom=rom), addrs))
    return tuple(runs)


def _line_hypotheses(memory_size: int):
    yield None
    for line in range(_line_count(memory_size)):
        for mode in ADDRESS_MODES:
            yield AddressDecoderLine(line, mode)


def address_line_test(ctx: CoreContext, seed=None, excluded=frozenset()) -> list[FaultDefinition]:
    """Load a self-addressed signature through the decoder and explain it by one line fault."""
    seed = ctx.encoding_seed if seed is None else seed
    regs = tuple(_allowed(excluded)[:9])
    rom = _signature_rom(ctx.memory_size)
    observations = []
    for program, addrs in _line_programs(ctx.memory_size, regs):
        state = _probe(ctx, program, PROBE_DATA, seed, "memory")
        observations += [(a, state.registers[regs[i]]) for i, a in enumerate(addrs)]
    matches = []
    for hyp in _line_hypotheses(ctx.memory_size):
        ok = True
        for a, seen in observations:
            mapped = a if hyp is None else apply_address_mapping(a, hyp.line, hyp.mode)
            if rom.get(mapped, 0) != seen:
                ok = False
                break
        if ok:
            matches.append(hyp)
    if matches == [None]:
        return []
    if len(matches) == 1:
        return [FaultDefinition(matches[0], "address-line-signature")]
    raise _Inconclusive(f"memory: address signature explained by {len(matches)} hypotheses")


@functools.lru_cache(maxsize=512)
def _march_program(n: int, regs: tuple[int, ...]) -> Program:
    i, lim, one, zero, ones, tmp, status = regs[:7]
    L, S, B = Opcode.LOADI, Opcode.STORE, Opcode
    ins = [
        Instruction(L, status, 0, 0, 0),
        Instruction(L, i, 0, 0, 0),
        Instruction(L, lim, 0, 0, n),
        Instruction(L, one, 0, 0, 1),
        Instruction(L, zero, 0, 0, 0),
        Instruction(L, ones, 0, 0, WORD_MASK),
        # M0: ascending w0
        Instruction(S, zero, i, 0, 0, symbol="region", indexed=True),  # 6
        Instruction(B.ADD, i, i, one),
        Instruction(B.BLT, 0, i, lim, 6),
        # M1: ascending r0 w1
        Instruction(L, i, 0, 0, 0),
        Instruction(B.LOAD, tmp, i, 0, 0, symbol="region", indexed=True),  # 10
        Instruction(B.BNE, 0, tmp, zero, 24),
        Instruction(S, ones, i, 0, 0, symbol="region", indexed=True),
        Instruction(B.ADD, i, i, one),
        Instruction(B.BLT, 0, i, lim, 10),
        # M2: descending r1 w0
        Instruction(B.OR, i, lim, lim),
        Instruction(B.SUB, i, i, one),  # 16
        Instruction(B.LOAD, tmp, i, 0, 0, symbol="region", indexed=True),
        Instruction(B.BNE, 0, tmp, ones, 26),
        Instruction(S, zero, i, 0, 0, symbol="region", indexed=True),
        Instruction(B.BNE, 0, i, zero, 16),
        Instruction(Opcode.HALT),  # 21
        Instruction(Opcode.NOP),
        Instruction(Opcode.NOP),
        Instruction(L, status, 0, 0, 1),  # 24
        Instruction(Opcode.HALT),
        Instruction(L, status, 0, 0, 2),  # 26
        Instruction(Opcode.HALT),
    ]
    return Program("probe-march", tuple(ins), (Variable("region", n), Variable("out", 1)), 0, 1)


def march_memory_test(ctx: CoreContext, region=None, seed=None, excluded=frozenset(),
                      max_reruns: int = 16) -> list[FaultDefinition]:
    """MATS+ over ``region``; each failing cell yields the bits that refused to change."""
    seed = ctx.encoding_seed if seed is None else seed
    lo, hi = region or ctx.region
    if not 0 <= lo < hi <= ctx.memory_size:
        raise ValueError(f"region {lo:#x}..{hi:#x} outside memory")
    regs = tuple(_allowed(excluded)[:7])
    found = []
    start = lo
    for _ in range(max_reruns):
        if start >= hi:
            break
        state = _probe(ctx, _march_program(hi - start, regs), start, seed, "memory")
        status, index, seen = (state.registers[r] for r in (regs[6], regs[0], regs[5]))
        if status == 0:
            break
        addr = start + index
        expected = 0 if status == 1 else WORD_MASK
        for b in range(32):
            bit = (seen >> b) & 1
            if bit != (expected >> b) & 1:
                found.append(FaultDefinition(MemoryStuckBit(addr, b, bit), "march-mats+"))
        start = addr + 1
    return found


def memory_test(ctx: CoreContext, seed=None, excluded=frozenset()) -> list[FaultDefinition]:
    lines = address_line_test(ctx, seed, excluded)
    if lines:
        return lines  # the march would only see the aliasing again
    return march_memory_test(ctx, seed=seed, excluded=excluded)


# --- opcode sweep -----------------------------------------------------------

# (x, w) feed the opcode under test; (y, z) are loaded from memory first so
# that a corrupted LOADI still computes on distinct non-zero operands.
_OPERANDS = (
    (0x12345678, 0x00000005, 0xCAFEBABE, 0x0000000B),
    (0x00000007, 0x00000007, 0x80000001, 0x0BADF00D),
    (0x00000003, 0x80000000, 0x00000013, 0x13579BDF),
)
_BRANCH_TARGET = 7


def _sweep_program(op: Opcode, variant: int, regs) -> Program:
    ra, rb, rc, re, rf, rg, rh = regs[:7]
    x, w, y, z = _OPERANDS[variant]
    imm = _BRANCH_TARGET if op in (Opcode.BEQ, Opcode.BNE, Opcode.BLT, Opcode.JMP) else WINDOW
    loads = (
        Instruction(Opcode.LOAD, rb, ra, rg, WINDOW + 1),
        Instruction(Opcode.LOAD, rc, rb, ra, WINDOW + 2),
    )
    consts = (
        Instruction(Opcode.LOADI, ra, rb, rc, x),
        Instruction(Opcode.LOADI, rg, rc, rb, w),
    )
    # the last variant starts with LOADI so that a corrupted first
    # instruction sees registers that are not all zero in some variant
    setup = consts + loads if variant == len(_OPERANDS) - 1 else loads + consts
    ins = setup + (
        Instruction(op, rc, ra, rg, imm),
        Instruction(Opcode.LOADI, re, ra, rg, 0x1111),
        Instruction(Opcode.LOADI, rf, rg, ra, 0x2222),
        Instruction(Opcode.LOADI, rh, ra, rg, 0x3333),  # branch target
        Instruction(Opcode.HALT, rc, ra, rg, 0),
    )
    rom = ((WINDOW, WINDOW_VALUE), (WINDOW + 1, y), (WINDOW + 2, z))
    return Program(f"probe-{op.name.lower()}", ins, (Variable("out", 1),), 0, 1, rom=rom)


@functools.lru_cache(maxsize=32)
def _sweep_programs(regs: tuple[int, ...]) -> tuple[Program, ...]:
    return tuple(_sweep_program(op, v, regs) for op in Opcode for v in range(len(_OPERANDS)))


def _observe(state: MachineState):
    o = state.outcome
    return (o.status, o.reason, tuple(state.registers), tuple(sorted(state.memory.items())))


def _hypothesis_plan(hyp, seed, known: tuple[Fault, ...]) -> FaultPlan:
    if hyp is None:
        return FaultPlan(known)
    enc = opcode_encoding(seed)
    o, y = hyp
    return FaultPlan(known + (Fault(InstructionDecoderSub(enc[o], 0 if y is None else enc[y])),))


@functools.lru_cache(maxsize=1 << 16)
def _predict(regs: tuple[int, ...], seed, memory_size: int, known: tuple[Fault, ...], hyp, index: int):
    program = _sweep_programs(regs)[index]
    image = assemble(program, _config(PROBE_DATA, seed), memory_size)
    return _observe(execute(image, (), _hypothesis_plan(hyp, seed, known), SWEEP_CYCLES))


def _hypotheses():
    for o in Opcode:
        for y in list(Opcode) + [None]:
            if y is not o:
                yield (o, y)


def opcode_sweep_test(ctx: CoreContext, seed=None, excluded=frozenset(), known=()) -> list[FaultDefinition]:
    """Run micro-programs for every opcode and match the observations against
    each single-substitution hypothesis simulated on the host.

    ``known`` lists already located non-decoder faults; predictions include
    them so that, for example, an address-line fault is not blamed on LOAD.
    """
    seed = ctx.encoding_seed if seed is None else seed
    regs = tuple(_allowed(excluded)[:7])
    known = tuple(Fault(d.kind) for d in sorted(known, key=lambda d: kind_sort_key(d.kind)))
    programs = _sweep_programs(regs)
    silicon = ctx.silicon()
    observed = []
    for program in programs:
        image = assemble(program, _config(PROBE_DATA, seed), ctx.memory_size)
        observed.append(_observe(execute(image, (), silicon, SWEEP_CYCLES)))
    key = (regs, seed, ctx.memory_size, known)
    differing = [i for i, obs in enumerate(observed) if _predict(*key, None, i) != obs]
    if not differing:
        return []
    order = differing + [i for i in range(len(programs)) if i not in differing]
    matches = [h for h in _hypotheses() if all(_predict(*key, h, i) == observed[i] for i in order)]
    froms = {h[0] for h in matches}
    if len(froms) != 1:
        raise _Inconclusive(f"opcodes: observations explained by {len(matches)} hypotheses")
    enc = opcode_encoding(seed)
    o = froms.pop()
    if len(matches) == 1 and matches[0][1] is not None:
        y = matches[0][1]
        return [FaultDefinition(InstructionDecoderSub(enc[o], enc[y]), f"opcode-sweep: {o.name} behaves as {y.name}")]
    return [FaultDefinition(InstructionDecoderSub(enc[o], None), f"opcode-sweep: {o.name} unknown-target")]


# --- orchestration ----------------------------------------------------------


def _avoiding_seed(bytes_: set[int]) -> int:
    seed = 1
    while set(opcode_encoding(seed).values()) & bytes_:
        seed += 1
    return seed


def _guarded(report: FaultReport, name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ProbeCrashed as exc:
        report.crashed.append(str(exc))
    except _Inconclusive as exc:
        report.inconclusive.append(str(exc))
    return []


def run_self_tests(ctx: CoreContext, max_passes: int = 3) -> FaultReport:
    """Registers, then memory, then opcodes; deterministic.

    Later tests avoid what earlier ones located (faulty registers are not
    used as probe registers, known line faults are part of the sweep's
    predictions). A located decoder substitution triggers a further pass
    under an opcode encoding that never emits the faulty byte, so that the
    register and memory verdicts are not polluted by it.
    """
    seed = ctx.encoding_seed
    subs: list[FaultDefinition] = []
    final = FaultReport()
    for _ in range(max_passes):
        report = FaultReport(tests_run=list(TESTS))
        regs = _guarded(report, "registers", register_walk_test, ctx, seed)
        excluded = frozenset(d.kind.reg for d in regs) | ctx.excluded_registers
        if len(excluded) > MAX_FAULTY_REGISTERS:
            excluded = frozenset(sorted(excluded)[:MAX_FAULTY_REGISTERS])
        mem = _guarded(report, "memory", memory_test, ctx, seed, excluded)
        ops = _guarded(report, "opcodes", opcode_sweep_test, ctx, seed, excluded,
                       [d for d in mem if isinstance(d.kind, AddressDecoderLine)])
        report.add(regs)
        report.add(mem)
        final = report
        fresh = [d for d in ops if d.kind not in {s.kind for s in subs}]
        if not fresh:
            break
        subs += fresh
        seed = _avoiding_seed({d.kind.from_ for d in subs})
    final.add(subs)
    final.found.sort(key=lambda d: kind_sort_key(d.kind))
    return final
