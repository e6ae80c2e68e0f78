"""Instruction set, program model and the assembly text format.

The machine is a 16-register, 32-bit, word-addressed load/store machine.
Every instruction occupies two memory words::

    word0 = opcode << 24 | rd << 20 | rs1 << 16 | rs2 << 12 | flags
    word1 = immediate (32 bits)

Bit 0 of ``flags`` marks an indexed LOAD/STORE (address = imm + rs1).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

WORD_MASK = 0xFFFFFFFF
NUM_REGISTERS = 16
INSTRUCTION_WORDS = 2
FLAG_INDEXED = 0x1


class AssemblyError(ValueError):
    """Raised for malformed program text or ill-formed programs."""


class Opcode(enum.IntEnum):
    LOADI = 1
    LOAD = 2
    STORE = 3
    ADD = 4
    SUB = 5
    MUL = 6
    AND = 7
    OR = 8
    XOR = 9
    SHL = 10
    SHR = 11
    BEQ = 12
    BNE = 13
    BLT = 14
    JMP = 15
    HALT = 16
    NOP = 17


ALU_OPS = frozenset(
    {Opcode.ADD, Opcode.SUB, Opcode.MUL, Opcode.AND, Opcode.OR, Opcode.XOR, Opcode.SHL, Opcode.SHR}
)
BRANCH_OPS = frozenset({Opcode.BEQ, Opcode.BNE, Opcode.BLT})
CONTROL_OPS = BRANCH_OPS | {Opcode.JMP, Opcode.HALT}


def wrap(value: int) -> int:
    return value & WORD_MASK


@dataclass(frozen=True)
class Instruction:
    """One symbolic instruction.

    ``symbol`` names either a branch label or a data variable; ``imm`` is
    the literal immediate or the offset added to the symbol's address.
    """

    op: Opcode
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0
    symbol: str | None = None
    indexed: bool = False
    address_of: bool = False  # LOADI rd, @var

    def registers_read(self) -> tuple[int, ...]:
        op = self.op
        if op in ALU_OPS or op in BRANCH_OPS:
            return (self.rs1, self.rs2)
        if op is Opcode.STORE:
            return (self.rd, self.rs1) if self.indexed else (self.rd,)
        if op is Opcode.LOAD:
            return (self.rs1,) if self.indexed else ()
        return ()

    def registers_written(self) -> tuple[int, ...]:
        if self.op in ALU_OPS or self.op in (Opcode.LOADI, Opcode.LOAD):
            return (self.rd,)
        return ()

    def registers(self) -> frozenset[int]:
        return frozenset(self.registers_read() + self.registers_written())

    def remap(self, mapping) -> Instruction:
        """Rename the register operands this opcode actually uses."""
        used_rd = self.op in ALU_OPS or self.op in (Opcode.LOADI, Opcode.LOAD, Opcode.STORE)
        used_rs = self.op in ALU_OPS or self.op in BRANCH_OPS or (
            self.op in (Opcode.LOAD, Opcode.STORE) and self.indexed
        )
        used_rs2 = self.op in ALU_OPS or self.op in BRANCH_OPS
        return Instruction(
            self.op,
            mapping[self.rd] if used_rd else self.rd,
            mapping[self.rs1] if used_rs else self.rs1,
            mapping[self.rs2] if used_rs2 else self.rs2,
            self.imm,
            self.symbol,
            self.indexed,
            self.address_of,
        )


@dataclass(frozen=True)
class Variable:
    name: str
    size: int
    init: tuple[int, ...] = ()


@dataclass(frozen=True)
class Program:
    """A benchmark kernel.

    Inputs live in the implicit variable ``in`` and outputs in ``out``.
    ``labels`` maps label names to instruction indices. ``rom`` holds
    words the loader places at fixed physical addresses alongside code.
    """

    name: str
    instructions: tuple[Instruction, ...]
    variables: tuple[Variable, ...]
    inputs: int
    outputs: int
    labels: tuple[tuple[str, int], ...] = ()
    reexpression: str | None = None
    rom: tuple[tuple[int, int], ...] = ()
    text: str = field(default="", compare=False, repr=False)

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise AssemblyError(f"{self.name}: duplicate variable names")
        if self.outputs < 1:
            raise AssemblyError(f"{self.name}: program must declare at least one output")
        by_name = {v.name: v for v in self.variables}
        if by_name.get("out") is None or by_name["out"].size != self.outputs:
            raise AssemblyError(f"{self.name}: 'out' variable does not match .out")
        if self.inputs and (by_name.get("in") is None or by_name["in"].size != self.inputs):
            raise AssemblyError(f"{self.name}: 'in' variable does not match .in")
        labels = dict(self.labels)
        for ins in self.instructions:
            if max(ins.rd, ins.rs1, ins.rs2) >= NUM_REGISTERS:
                raise AssemblyError(f"{self.name}: register index out of range in {ins}")
            if ins.op in BRANCH_OPS or ins.op is Opcode.JMP:
                if ins.symbol is not None and ins.symbol not in labels:
                    raise AssemblyError(f"{self.name}: undefined label {ins.symbol!r}")
                target = labels.get(ins.symbol, ins.imm) if ins.symbol else ins.imm
                if not 0 <= target <= len(self.instructions):
                    raise AssemblyError(f"{self.name}: branch target {target} out of range")
            elif ins.symbol is not None:
                var = by_name.get(ins.symbol)
                if var is None:
                    raise AssemblyError(f"{self.name}: undefined variable {ins.symbol!r}")
                if not ins.indexed and not ins.address_of and not 0 <= ins.imm < var.size:
                    raise AssemblyError(f"{self.name}: offset {ins.imm} outside {var.name}")

    @property
    def label_map(self) -> dict[str, int]:
        return dict(self.labels)

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def registers_used(self) -> frozenset[int]:
        regs: set[int] = set()
        for ins in self.instructions:
            regs |= ins.registers()
        return frozenset(regs)

    @property
    def data_words(self) -> int:
        return sum(v.size for v in self.variables)


_REG = re.compile(r"^r(\d+)$", re.IGNORECASE)
_MEM = re.compile(r"^(?P<sym>[A-Za-z_]\w*)(?:\+(?P<off>\w+))?(?:\[(?P<idx>r\d+)\])?$", re.IGNORECASE)


def _int(token: str) -> int:
    try:
        return wrap(int(token, 0))
    except ValueError:
        raise AssemblyError(f"bad integer literal {token!r}") from None


def _reg(token: str) -> int:
    m = _REG.match(token)
    if not m or int(m.group(1)) >= NUM_REGISTERS:
        raise AssemblyError(f"bad register {token!r}")
    return int(m.group(1))


def _mem_operand(token: str):
    m = _MEM.match(token)
    if not m:
        raise AssemblyError(f"bad memory operand {token!r}")
    off = _int(m.group("off")) if m.group("off") else 0
    idx = _reg(m.group("idx")) if m.group("idx") else None
    return m.group("sym"), off, idx


def parse_program(text: str, name: str | None = None) -> Program:
    """Parse the line-oriented assembly format.

    Directives: ``.name id``, ``.in n``, ``.out n``, ``.var name size [init...]``,
    ``.reexpr family``, ``.rom addr value``. Comments start with ``;``.
    """
    prog_name = name
    inputs = 0
    outputs = 0
    reexpr = None
    variables: list[Variable] = []
    rom: list[tuple[int, int]] = []
    labels: dict[str, int] = {}
    instructions: list[Instruction] = []

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        try:
            while ":" in line.split()[0]:
                label, _, line = line.partition(":")
                label = label.strip()
                if label in labels:
                    raise AssemblyError(f"duplicate label {label!r}")
                labels[label] = len(instructions)
                line = line.strip()
                if not line:
                    break
            if not line:
                continue
            head, _, rest = line.partition(" ")
            args = [a.strip() for a in rest.replace(",", " ").split()] if rest.strip() else []
            if head.startswith("."):
                directive = head[1:].lower()
                if directive == "name":
                    prog_name = prog_name or args[0]
                elif directive == "in":
                    inputs = int(args[0], 0)
                    variables.append(Variable("in", inputs))
                elif directive == "out":
                    outputs = int(args[0], 0)
                    variables.append(Variable("out", outputs))
                elif directive == "var":
                    size = int(args[1], 0)
                    init = tuple(_int(a) for a in args[2:])
                    if len(init) > size:
                        raise AssemblyError(f"too many initializers for {args[0]}")
                    variables.append(Variable(args[0], size, init))
                elif directive == "reexpr":
                    reexpr = args[0]
                elif directive == "rom":
                    rom.append((_int(args[0]), _int(args[1])))
                else:
                    raise AssemblyError(f"unknown directive {head}")
                continue
            instructions.append(_parse_instruction(head.upper(), args))
        except (AssemblyError, IndexError, ValueError) as exc:
            raise AssemblyError(f"line {lineno}: {exc}") from None

    return Program(
        name=prog_name or "anonymous",
        instructions=tuple(instructions),
        variables=tuple(variables),
        inputs=inputs,
        outputs=outputs,
        labels=tuple(labels.items()),
        reexpression=reexpr,
        rom=tuple(rom),
        text=text,
    )


def _parse_instruction(mnemonic: str, args: list[str]) -> Instruction:
    try:
        op = Opcode[mnemonic]
    except KeyError:
        raise AssemblyError(f"unknown mnemonic {mnemonic}") from None
    if op in ALU_OPS:
        rd, rs1, rs2 = (_reg(a) for a in args)
        return Instruction(op, rd, rs1, rs2)
    if op is Opcode.LOADI:
        rd = _reg(args[0])
        if args[1].startswith("@"):
            sym, off, idx = _mem_operand(args[1][1:])
            if idx is not None:
                raise AssemblyError("LOADI @var cannot be indexed")
            return Instruction(op, rd, imm=off, symbol=sym, address_of=True)
        return Instruction(op, rd, imm=_int(args[1]))
    if op in (Opcode.LOAD, Opcode.STORE):
        rd = _reg(args[0])
        sym, off, idx = _mem_operand(args[1])
        return Instruction(op, rd, rs1=idx or 0, imm=off, symbol=sym, indexed=idx is not None)
    if op in BRANCH_OPS:
        return Instruction(op, rs1=_reg(args[0]), rs2=_reg(args[1]), symbol=args[2])
    if op is Opcode.JMP:
        return Instruction(op, symbol=args[0])
    if args:
        raise AssemblyError(f"{mnemonic} takes no operands")
    return Instruction(op)
