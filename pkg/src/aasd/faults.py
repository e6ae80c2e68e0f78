"""Hardware fault model and the fault views applied to architectural accesses.

Register and memory faults are stuck-at bits. Each carries a ``side``:
read-side faults force the observed bit, write-side faults force the stored
bit. Address-decoder faults act on the core's load/store address path;
instruction-decoder faults substitute one physical opcode byte for another.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from functools import cached_property
from typing import Union

from .isa import NUM_REGISTERS

DEFAULT_MEMORY_SIZE = 1 << 16
ADDRESS_MODES = ("stuck-0", "stuck-1", "flip")


class EmptySpace(ValueError):
    """The fault-space descriptor matches no locations."""


@dataclass(frozen=True, order=True)
class RegisterStuckBit:
    reg: int
    bit: int
    stuck_value: int
    side: str = "read"

    def __post_init__(self):
        _check(0 <= self.reg < NUM_REGISTERS, f"register {self.reg} out of range")
        _check(0 <= self.bit < 32, f"bit {self.bit} out of range")
        _check(self.stuck_value in (0, 1), "stuck_value must be 0 or 1")
        _check(self.side in ("read", "write"), f"bad side {self.side!r}")


@dataclass(frozen=True, order=True)
class MemoryStuckBit:
    addr: int
    bit: int
    stuck_value: int
    side: str = "write"

    def __post_init__(self):
        _check(self.addr >= 0, "negative address")
        _check(0 <= self.bit < 32, f"bit {self.bit} out of range")
        _check(self.stuck_value in (0, 1), "stuck_value must be 0 or 1")
        _check(self.side in ("read", "write"), f"bad side {self.side!r}")


@dataclass(frozen=True, order=True)
class AddressDecoderLine:
    line: int
    mode: str

    def __post_init__(self):
        _check(self.line >= 0, "negative line")
        _check(self.mode in ADDRESS_MODES, f"bad mode {self.mode!r}")


@dataclass(frozen=True, order=True)
class InstructionDecoderSub:
    from_: int
    to: int | None  # None: target unknown (self-test could not identify it)

    def __post_init__(self):
        _check(0 <= self.from_ < 256, "from byte out of range")
        _check(self.to is None or 0 <= self.to < 256, "to byte out of range")
        _check(self.from_ != self.to, "from and to must differ")


FaultKind = Union[RegisterStuckBit, MemoryStuckBit, AddressDecoderLine, InstructionDecoderSub]

KIND_NAMES = {
    RegisterStuckBit: "register",
    MemoryStuckBit: "memory",
    AddressDecoderLine: "address-decoder",
    InstructionDecoderSub: "instruction-decoder",
}
_KIND_RANK = {cls: i for i, cls in enumerate(KIND_NAMES)}


def kind_name(kind: FaultKind) -> str:
    return KIND_NAMES[type(kind)]


def kind_sort_key(kind: FaultKind):
    """Deterministic (kind, location) order used for tie-breaking."""
    if isinstance(kind, InstructionDecoderSub):
        loc = (kind.from_, -1 if kind.to is None else kind.to)
    elif isinstance(kind, AddressDecoderLine):
        loc = (kind.line, ADDRESS_MODES.index(kind.mode))
    elif isinstance(kind, RegisterStuckBit):
        loc = (kind.reg, kind.bit, kind.stuck_value, kind.side)
    else:
        loc = (kind.addr, kind.bit, kind.stuck_value, kind.side)
    return (_KIND_RANK[type(kind)], loc)


def location_key(kind: FaultKind):
    """The (kind, location) identity: at most one fault per key in a plan."""
    if isinstance(kind, RegisterStuckBit):
        return ("register", kind.reg, kind.bit)
    if isinstance(kind, MemoryStuckBit):
        return ("memory", kind.addr, kind.bit)
    if isinstance(kind, AddressDecoderLine):
        return ("address-decoder", kind.line)
    return ("instruction-decoder", kind.from_)


@dataclass(frozen=True)
class Transient:
    cycle: int


@dataclass(frozen=True)
class Permanent:
    onset_cycle: int = 0


Persistence = Union[Transient, Permanent]


def is_active(persistence: Persistence, cycle: int) -> bool:
    if isinstance(persistence, Permanent):
        return cycle >= persistence.onset_cycle
    return cycle == persistence.cycle


@dataclass(frozen=True)
class Fault:
    kind: FaultKind
    persistence: Persistence = Permanent()
    core: int = 0


@dataclass(frozen=True)
class FaultDefinition:
    """A located fault as reported by a self-test."""

    kind: FaultKind
    evidence: str = ""


class FaultPlan:
    """Immutable set of faults on one core, indexed for the fault views."""

    def __init__(self, faults=(), core: int | None = None):
        faults = tuple(faults)
        cores = {f.core for f in faults}
        if len(cores) > 1:
            raise ValueError("all faults of a plan must share the same core")
        keys = [location_key(f.kind) for f in faults]
        if len(set(keys)) != len(keys):
            raise ValueError("at most one fault per (kind, location)")
        self.faults = faults
        self.core = cores.pop() if cores else (core if core is not None else 0)
        self.regs_read: dict[int, list] = {}
        self.regs_write: dict[int, list] = {}
        self.mem_read: dict[int, list] = {}
        self.mem_write: dict[int, list] = {}
        self.lines: list = []
        self.subs: dict[int, list] = {}
        for f in faults:
            k = f.kind
            if isinstance(k, RegisterStuckBit):
                table = self.regs_read if k.side == "read" else self.regs_write
                table.setdefault(k.reg, []).append((k.bit, k.stuck_value, f.persistence))
            elif isinstance(k, MemoryStuckBit):
                table = self.mem_read if k.side == "read" else self.mem_write
                table.setdefault(k.addr, []).append((k.bit, k.stuck_value, f.persistence))
            elif isinstance(k, AddressDecoderLine):
                self.lines.append((k.line, k.mode, f.persistence))
            else:
                if k.to is None:
                    raise ValueError("an injected decoder fault needs a concrete target byte")
                self.subs.setdefault(k.from_, []).append((k.to, f.persistence))

    def __iter__(self):
        return iter(self.faults)

    def __len__(self):
        return len(self.faults)

    def __bool__(self):
        return bool(self.faults)

    def __eq__(self, other):
        return isinstance(other, FaultPlan) and (self.core, set(self.faults)) == (other.core, set(other.faults))

    def __hash__(self):
        return hash((self.core, frozenset(self.faults)))

    def __repr__(self):
        return f"FaultPlan(core={self.core}, faults={list(self.faults)!r})"

    @cached_property
    def max_transient_cycle(self) -> int:
        return max((f.persistence.cycle for f in self.faults if isinstance(f.persistence, Transient)), default=-1)

    def without_transients(self) -> FaultPlan:
        return FaultPlan([f for f in self.faults if isinstance(f.persistence, Permanent)], core=self.core)


EMPTY_PLAN = FaultPlan()


def _force(value: int, entries, cycle: int) -> int:
    for bit, stuck, pers in entries:
        if is_active(pers, cycle):
            if stuck:
                value |= 1 << bit
            else:
                value &= ~(1 << bit)
    return value


def view_register_read(raw: int, reg: int, plan: FaultPlan, cycle: int) -> int:
    entries = plan.regs_read.get(reg)
    return _force(raw, entries, cycle) if entries else raw


def view_register_write(value: int, reg: int, plan: FaultPlan, cycle: int) -> int:
    entries = plan.regs_write.get(reg)
    return _force(value, entries, cycle) if entries else value


def view_memory_read(raw: int, addr: int, plan: FaultPlan, cycle: int) -> int:
    entries = plan.mem_read.get(addr)
    return _force(raw, entries, cycle) if entries else raw


def view_memory_write(value: int, addr: int, plan: FaultPlan, cycle: int) -> int:
    entries = plan.mem_write.get(addr)
    return _force(value, entries, cycle) if entries else value


def view_address(addr: int, plan: FaultPlan, cycle: int, memory_size: int = DEFAULT_MEMORY_SIZE) -> int:
    for line, mode, pers in plan.lines:
        if is_active(pers, cycle):
            mask = 1 << line
            if mode == "stuck-0":
                addr &= ~mask
            elif mode == "stuck-1":
                addr |= mask
            else:
                addr ^= mask
    return addr % memory_size


def view_opcode(op: int, plan: FaultPlan, cycle: int) -> int:
    for to, pers in plan.subs.get(op, ()):
        if is_active(pers, cycle):
            return to
    return op


def apply_address_mapping(addr: int, line: int, mode: str) -> int:
    """Address seen by memory under one decoder-line fault (always active)."""
    mask = 1 << line
    if mode == "stuck-0":
        return addr & ~mask
    if mode == "stuck-1":
        return addr | mask
    return addr ^ mask


# --- fault-space sampling ---------------------------------------------------


@dataclass(frozen=True)
class FaultSpace:
    """Descriptor of a finite fault population.

    ``kinds`` selects among register, memory, address-decoder and
    instruction-decoder faults; the remaining fields bound locations.
    ``opcode_from``/``opcode_to`` default to all bytes.
    """

    kinds: tuple[str, ...] = ("register",)
    registers: tuple[int, ...] = tuple(range(NUM_REGISTERS))
    bits: tuple[int, ...] = tuple(range(32))
    stuck_values: tuple[int, ...] = (0, 1)
    register_side: str = "read"
    memory_side: str = "write"
    memory_range: tuple[int, int] = (0x1000, 0x1100)
    lines: tuple[int, ...] = tuple(range(16))
    modes: tuple[str, ...] = ADDRESS_MODES
    opcode_from: tuple[int, ...] | None = None
    opcode_to: tuple[int, ...] | None = None
    persistence: str = "permanent"
    transient_cycles: tuple[int, int] = (0, 400)
    cores: tuple[int, ...] = (0,)

    def __post_init__(self):
        for k in self.kinds:
            _check(k in KIND_NAMES.values(), f"unknown fault kind {k!r}")
        _check(self.persistence in ("permanent", "transient"), "persistence must be permanent or transient")

    def _blocks(self):
        """(size, decoder) per kind, in a fixed order."""
        blocks = []
        if "register" in self.kinds:
            regs, bits, vals = self.registers, self.bits, self.stuck_values

            def reg(i):
                i, v = divmod(i, len(vals))
                r, b = divmod(i, len(bits))
                return RegisterStuckBit(regs[r], bits[b], vals[v], self.register_side)

            blocks.append((len(regs) * len(bits) * len(vals), reg))
        if "memory" in self.kinds:
            lo, hi = self.memory_range
            bits, vals = self.bits, self.stuck_values

            def mem(i):
                i, v = divmod(i, len(vals))
                a, b = divmod(i, len(bits))
                return MemoryStuckBit(lo + a, bits[b], vals[v], self.memory_side)

            blocks.append((max(0, hi - lo) * len(bits) * len(vals), mem))
        if "address-decoder" in self.kinds:
            lines, modes = self.lines, self.modes

            def adl(i):
                l, m = divmod(i, len(modes))
                return AddressDecoderLine(lines[l], modes[m])

            blocks.append((len(lines) * len(modes), adl))
        if "instruction-decoder" in self.kinds:
            froms = self.opcode_from if self.opcode_from is not None else tuple(range(256))
            tos = self.opcode_to if self.opcode_to is not None else tuple(range(256))
            pairs = [(f, t) for f in froms for t in tos if f != t]

            def sub(i):
                f, t = pairs[i]
                return InstructionDecoderSub(f, t)

            blocks.append((len(pairs), sub))
        return blocks

    @property
    def size(self) -> int:
        return sum(size for size, _ in self._blocks())

    def location(self, index: int) -> FaultKind:
        for size, decode in self._blocks():
            if index < size:
                return decode(index)
            index -= size
        raise IndexError(index)

    def enumerate(self):
        for size, decode in self._blocks():
            for i in range(size):
                yield decode(i)


def sample_faults(seed: int, space: FaultSpace, n: int) -> list[Fault]:
    """Uniform i.i.d. draws over the finite space; same seed, same list."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = space.size
    if total == 0:
        raise EmptySpace("fault-space descriptor matches zero locations")
    rng = random.Random(seed)
    faults = []
    for _ in range(n):
        kind = space.location(rng.randrange(total))
        if space.persistence == "permanent":
            pers: Persistence = Permanent(0)
        else:
            pers = Transient(rng.randrange(*space.transient_cycles))
        faults.append(Fault(kind, pers, rng.choice(space.cores)))
    return faults


def _check(cond: bool, msg: str):
    if not cond:
        raise ValueError(msg)


__all__ = [
    "ADDRESS_MODES",
    "AddressDecoderLine",
    "DEFAULT_MEMORY_SIZE",
    "EMPTY_PLAN",
    "EmptySpace",
    "Fault",
    "FaultDefinition",
    "FaultKind",
    "FaultPlan",
    "FaultSpace",
    "InstructionDecoderSub",
    "MemoryStuckBit",
    "Permanent",
    "RegisterStuckBit",
    "Transient",
    "apply_address_mapping",
    "is_active",
    "kind_name",
    "kind_sort_key",
    "location_key",
    "sample_faults",
    "view_address",
    "view_memory_read",
    "view_memory_write",
    "view_opcode",
    "view_register_read",
    "view_register_write",
]
