"""Register-machine interpreter with fault hooks on every architectural access.

Memory is a flat word-addressed space per core. Code (and ROM words) are
placed physically by the loader and fetched on the instruction path. Data
accesses (input acquisition, initializers, LOAD/STORE and output
collection) go through the core's data address decoder, so decoder faults
act consistently on everything the core does with data. All cell accesses
pass through the memory stuck-bit views.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

from .diversity import (
    DEFAULT_CONFIG,
    DiversityConfig,
    MemoryLayout,
    apply_static,
    derive_layout,
)
from .faults import DEFAULT_MEMORY_SIZE, EMPTY_PLAN, FaultPlan, _force, is_active, view_address
from .isa import (
    BRANCH_OPS,
    FLAG_INDEXED,
    INSTRUCTION_WORDS,
    NUM_REGISTERS,
    WORD_MASK,
    Instruction,
    Opcode,
    Program,
)

DEFAULT_CYCLE_LIMIT = 100_000

COMPLETED = "completed"
CRASHED = "crashed"
TIMED_OUT = "timed-out"

INVALID_OPCODE = "invalid-opcode"
OUT_OF_BOUNDS = "out-of-bounds"
DIVIDE_BY_ZERO = "divide-by-zero"  # no division opcode; kept for the status vocabulary


_LOADI, _LOAD, _STORE = int(Opcode.LOADI), int(Opcode.LOAD), int(Opcode.STORE)
_ADD, _SUB, _MUL, _AND, _OR, _XOR, _SHL, _SHR = (int(o) for o in (
    Opcode.ADD, Opcode.SUB, Opcode.MUL, Opcode.AND, Opcode.OR, Opcode.XOR, Opcode.SHL, Opcode.SHR))
_BEQ, _BNE, _BLT, _JMP, _HALT = (int(o) for o in (Opcode.BEQ, Opcode.BNE, Opcode.BLT, Opcode.JMP, Opcode.HALT))


class GoldenRunFailed(RuntimeError):
    """The fault-free program crashed or timed out: the benchmark is broken."""


@dataclass(frozen=True)
class ExecutionOutcome:
    status: str
    outputs: tuple[int, ...] | None = None
    cycles: int = 0
    reason: str | None = None

    @property
    def completed(self) -> bool:
        return self.status == COMPLETED


@dataclass(frozen=True)
class MachineImage:
    program: Program
    config: DiversityConfig
    layout: MemoryLayout
    register_map: tuple[tuple[int, int], ...]
    opcode_encoding: tuple[tuple[Opcode, int], ...]
    instructions: tuple[Instruction, ...]  # after static transforms
    resolved_code: tuple[tuple[int, int], ...]
    decode_table: tuple[Opcode | None, ...]

    @property
    def encoding_map(self) -> dict[Opcode, int]:
        return dict(self.opcode_encoding)

    def address_of(self, name: str) -> int:
        return self.layout.address_of(self.program, name)

    @property
    def code_range(self) -> tuple[int, int]:
        base = self.layout.code_base
        return base, base + len(self.resolved_code) * INSTRUCTION_WORDS

    def code_bytes(self) -> bytes:
        return b"".join(w.to_bytes(4, "big") for pair in self.resolved_code for w in pair)


def encode_instruction(ins: Instruction, encoding: dict[Opcode, int], imm: int) -> tuple[int, int]:
    flags = FLAG_INDEXED if ins.indexed else 0
    w0 = (encoding[ins.op] << 24) | (ins.rd << 20) | (ins.rs1 << 16) | (ins.rs2 << 12) | flags
    return w0, imm & WORD_MASK


def decode_instruction(w0: int, w1: int, decode_table) -> Instruction | None:
    op = decode_table[w0 >> 24]
    if op is None:
        return None
    return Instruction(
        op, (w0 >> 20) & 15, (w0 >> 16) & 15, (w0 >> 12) & 15, w1, indexed=bool(w0 & FLAG_INDEXED)
    )


@functools.lru_cache(maxsize=8192)
def assemble(
    program: Program, config: DiversityConfig = DEFAULT_CONFIG, memory_size: int = DEFAULT_MEMORY_SIZE
) -> MachineImage:
    variant = apply_static(program, config.static_)
    code_words = len(variant.instructions) * INSTRUCTION_WORDS
    layout = derive_layout(program, config.dynamic, code_words=code_words, memory_size=memory_size)
    encoding = variant.encoding_map
    labels = dict(variant.labels)
    var_addr = {v.name: layout.addresses[i] for i, v in enumerate(program.variables)}
    code = []
    for ins in variant.instructions:
        if ins.op in BRANCH_OPS or ins.op is Opcode.JMP:
            imm = labels[ins.symbol] if ins.symbol is not None else ins.imm
        elif ins.symbol is not None:
            imm = var_addr[ins.symbol] + ins.imm
        else:
            imm = ins.imm
        code.append(encode_instruction(ins, encoding, imm))
    table: list[Opcode | None] = [None] * 256
    for op, byte in encoding.items():
        table[byte] = op
    return MachineImage(
        program=program,
        config=config,
        layout=layout,
        register_map=variant.register_map,
        opcode_encoding=variant.encoding,
        instructions=variant.instructions,
        resolved_code=tuple(code),
        decode_table=tuple(table),
    )


@dataclass
class MachineState:
    """Final architectural state, exposed for self-test probes."""

    outcome: ExecutionOutcome
    registers: list[int]
    memory: dict[int, int]
    pc: int


def execute(
    image: MachineImage,
    inputs=(),
    plan: FaultPlan = EMPTY_PLAN,
    cycle_limit: int = DEFAULT_CYCLE_LIMIT,
) -> MachineState:
    """Run ``image`` on ``inputs`` under ``plan``.

    The loader and input acquisition happen at cycle 0; the i-th executed
    instruction is stamped with cycle i. HALT does not consume a cycle, so
    TimedOut holds exactly when ``cycles == cycle_limit``.
    """
    program = image.program
    if len(inputs) != program.inputs:
        raise ValueError(f"{program.name} expects {program.inputs} input words, got {len(inputs)}")
    if cycle_limit <= 0:
        raise ValueError("cycle_limit must be > 0")

    layout = image.layout
    msize = layout.memory_size
    mem: dict[int, int] = {}
    mw_tab, mr_tab = plan.mem_write, plan.mem_read
    rr_tab, rw_tab = plan.regs_read, plan.regs_write
    lines, subs = plan.lines, plan.subs

    def store_phys(addr, value, cyc):
        e = mw_tab.get(addr) if mw_tab else None
        mem[addr] = _force(value, e, cyc) if e else value

    def load_phys(addr, cyc):
        v = mem.get(addr, 0)
        e = mr_tab.get(addr) if mr_tab else None
        return _force(v, e, cyc) if e else v

    if lines:

        def translate(addr, cyc):
            return view_address(addr, plan, cyc, msize)

    else:

        def translate(addr, cyc):
            return addr

    # physical placement: code and ROM
    base = layout.code_base
    for i, (w0, w1) in enumerate(image.resolved_code):
        store_phys(base + 2 * i, w0, 0)
        store_phys(base + 2 * i + 1, w1, 0)
    for addr, value in program.rom:
        store_phys(addr, value, 0)
    # data placement through the data path: zero-fill, initializers, inputs
    for idx in layout.variable_order:
        var = program.variables[idx]
        start = layout.addresses[idx]
        for j in range(var.size):
            store_phys(translate(start + j, 0), 0, 0)
    for idx in layout.variable_order:
        var = program.variables[idx]
        start = layout.addresses[idx]
        for j, value in enumerate(var.init):
            store_phys(translate(start + j, 0), value, 0)
    if program.inputs:
        start = image.address_of("in")
        for j, value in enumerate(inputs):
            store_phys(translate(start + j, 0), value & WORD_MASK, 0)

    regs = [0] * NUM_REGISTERS
    table = image.decode_table
    n_code = len(image.resolved_code)
    pc = 0
    cycles = 0
    status, reason = None, None
    faulty_mem = bool(mw_tab or mr_tab)
    decoded: dict[int, tuple] = {}

    while True:
        if cycles >= cycle_limit:
            status = TIMED_OUT
            break
        cyc = cycles + 1
        if not 0 <= pc < n_code:
            status, reason = CRASHED, OUT_OF_BOUNDS
            break
        fa = base + 2 * pc
        if faulty_mem:
            w0 = load_phys(fa, cyc)
            imm = load_phys(fa + 1, cyc)
        else:
            w0 = mem.get(fa, 0)
            imm = mem.get(fa + 1, 0)
        if subs:
            byte = w0 >> 24
            if byte in subs:
                for to, pers in subs[byte]:
                    if is_active(pers, cyc):
                        w0 = (to << 24) | (w0 & 0xFFFFFF)
                        break
        d = decoded.get(w0)
        if d is None:
            op = table[w0 >> 24]
            d = decoded[w0] = (
                0 if op is None else int(op),
                (w0 >> 20) & 15,
                (w0 >> 16) & 15,
                (w0 >> 12) & 15,
                w0 & FLAG_INDEXED,
            )
        op, rd, rs1, rs2, indexed = d
        if op == 0:
            status, reason = CRASHED, INVALID_OPCODE
            break
        if op == _HALT:
            status = COMPLETED
            break
        pc += 1

        a = regs[rs1]
        b = regs[rs2]
        if rr_tab:
            e = rr_tab.get(rs1)
            if e:
                a = _force(a, e, cyc)
            e = rr_tab.get(rs2)
            if e:
                b = _force(b, e, cyc)

        if op <= _STORE:
            if op == _LOADI:
                result = imm
            else:
                addr = (imm + a) & WORD_MASK if indexed else imm
                if addr >= msize:
                    status, reason = CRASHED, OUT_OF_BOUNDS
                    break
                if lines:
                    addr = view_address(addr, plan, cyc, msize)
                if op == _LOAD:
                    result = load_phys(addr, cyc) if faulty_mem else mem.get(addr, 0)
                else:
                    v = regs[rd]
                    if rr_tab:
                        e = rr_tab.get(rd)
                        if e:
                            v = _force(v, e, cyc)
                    store_phys(addr, v, cyc)
                    cycles += 1
                    continue
        elif op <= _SHR:
            if op == _ADD:
                result = (a + b) & WORD_MASK
            elif op == _SUB:
                result = (a - b) & WORD_MASK
            elif op == _MUL:
                result = (a * b) & WORD_MASK
            elif op == _AND:
                result = a & b
            elif op == _OR:
                result = a | b
            elif op == _XOR:
                result = a ^ b
            elif op == _SHL:
                result = (a << (b & 31)) & WORD_MASK
            else:
                result = a >> (b & 31)
        else:
            if op == _BLT:
                if a < b:
                    pc = imm
            elif op == _BEQ:
                if a == b:
                    pc = imm
            elif op == _BNE:
                if a != b:
                    pc = imm
            elif op == _JMP:
                pc = imm
            cycles += 1
            continue
        if rw_tab:
            e = rw_tab.get(rd)
            if e:
                result = _force(result, e, cyc)
        regs[rd] = result
        cycles += 1
    outputs = None
    if status == COMPLETED:
        cyc = cycles + 1
        start = image.address_of("out")
        outputs = tuple(load_phys(translate(start + j, cyc), cyc) for j in range(program.outputs))
    if status == TIMED_OUT:
        cycles = cycle_limit
    return MachineState(ExecutionOutcome(status, outputs, cycles, reason), regs, mem, pc)


def run(
    image: MachineImage,
    inputs=(),
    plan: FaultPlan = EMPTY_PLAN,
    cycle_limit: int = DEFAULT_CYCLE_LIMIT,
) -> ExecutionOutcome:
    return execute(image, inputs, plan, cycle_limit).outcome


@functools.lru_cache(maxsize=65536)
def _golden(program: Program, inputs: tuple[int, ...]) -> ExecutionOutcome:
    outcome = run(assemble(program), inputs)
    if not outcome.completed:
        raise GoldenRunFailed(f"{program.name} on {inputs}: {outcome.status} ({outcome.reason})")
    return outcome


def golden_run(program: Program, inputs) -> list[int]:
    return list(_golden(program, tuple(int(x) & WORD_MASK for x in inputs)).outputs)


def golden_cycles(program: Program, inputs) -> int:
    return _golden(program, tuple(int(x) & WORD_MASK for x in inputs)).cycles


WATCHDOG_FACTOR = 16
WATCHDOG_SLACK = 1000


def watchdog_limit(program: Program, inputs_list) -> int:
    """Cycle budget for a task: generous against every diversity transform,
    but a faulty replica stuck in a loop is cut off as timed out."""
    worst = max(golden_cycles(program, inputs) for inputs in inputs_list)
    return min(DEFAULT_CYCLE_LIMIT, WATCHDOG_FACTOR * worst + WATCHDOG_SLACK)
