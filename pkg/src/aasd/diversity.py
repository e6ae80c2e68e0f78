"""Dynamic and static diversification transforms.

Dynamic parameters change where data lives and how inputs are represented;
static parameters change the code itself (register use, NOP padding and
opcode encoding). Both are pure functions of (program, config).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .faults import DEFAULT_MEMORY_SIZE
from .isa import (
    CONTROL_OPS,
    INSTRUCTION_WORDS,
    NUM_REGISTERS,
    Instruction,
    Opcode,
    Program,
    wrap,
)

DEFAULT_CODE_BASE = 0x0000
DEFAULT_DATA_BASE = 0x1000
MAX_EXCLUDED_REGISTERS = 4


class LayoutOverflow(ValueError):
    pass


class InfeasibleRegisterAllocation(ValueError):
    pass


class UnknownFamily(KeyError):
    pass


@dataclass(frozen=True)
class DynamicParams:
    gap_size: int = 0
    base_offset: int = 0
    variable_order_seed: int | None = None  # None: declaration order
    reexpr_key: int | None = None  # None: no re-expression
    reexpr_family: str | None = None  # None: the program's own family

    def __post_init__(self):
        if self.gap_size < 0 or self.base_offset < 0:
            raise ValueError("gap_size and base_offset must be >= 0")


@dataclass(frozen=True)
class StaticParams:
    excluded_registers: frozenset[int] = frozenset()
    nop_count: int = 0
    opcode_encoding_seed: int | None = None  # None: identity encoding

    def __post_init__(self):
        object.__setattr__(self, "excluded_registers", frozenset(self.excluded_registers))
        if len(self.excluded_registers) > MAX_EXCLUDED_REGISTERS:
            raise ValueError(f"at most {MAX_EXCLUDED_REGISTERS} excluded registers")
        if any(not 0 <= r < NUM_REGISTERS for r in self.excluded_registers):
            raise ValueError("excluded register out of range")
        if self.nop_count < 0:
            raise ValueError("nop_count must be >= 0")


@dataclass(frozen=True)
class DiversityConfig:
    dynamic: DynamicParams = field(default_factory=DynamicParams)
    static_: StaticParams = field(default_factory=StaticParams)

    def with_dynamic(self, **changes) -> DiversityConfig:
        return DiversityConfig(replace(self.dynamic, **changes), self.static_)

    def with_static(self, **changes) -> DiversityConfig:
        return DiversityConfig(self.dynamic, replace(self.static_, **changes))

    def to_dict(self) -> dict:
        d, s = self.dynamic, self.static_
        return {
            "gap_size": d.gap_size,
            "base_offset": d.base_offset,
            "variable_order_seed": d.variable_order_seed,
            "reexpr_key": d.reexpr_key,
            "reexpr_family": d.reexpr_family,
            "excluded_registers": sorted(s.excluded_registers),
            "nop_count": s.nop_count,
            "opcode_encoding_seed": s.opcode_encoding_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> DiversityConfig:
        return cls(
            DynamicParams(
                gap_size=int(data.get("gap_size", 0)),
                base_offset=int(data.get("base_offset", 0)),
                variable_order_seed=data.get("variable_order_seed"),
                reexpr_key=data.get("reexpr_key"),
                reexpr_family=data.get("reexpr_family"),
            ),
            StaticParams(
                excluded_registers=frozenset(data.get("excluded_registers", ())),
                nop_count=int(data.get("nop_count", 0)),
                opcode_encoding_seed=data.get("opcode_encoding_seed"),
            ),
        )

    def describe(self) -> str:
        """Compact one-line form, used in CSV cells."""
        parts = []
        for key, value in self.to_dict().items():
            if value in (None, 0, []):
                continue
            if isinstance(value, list):
                value = "+".join(map(str, value))
            parts.append(f"{key}={value}")
        return ";".join(parts) or "default"


DEFAULT_CONFIG = DiversityConfig()


# --- memory layout ----------------------------------------------------------


@dataclass(frozen=True)
class MemoryLayout:
    code_base: int
    data_base: int
    variable_order: tuple[int, ...]
    gaps: tuple[int, ...]  # gap before each variable, indexed like program.variables
    memory_size: int
    addresses: tuple[int, ...]  # start address per variable, indexed like program.variables
    sizes: tuple[int, ...]
    code_words: int

    def address_of(self, program: Program, name: str) -> int:
        for i, v in enumerate(program.variables):
            if v.name == name:
                return self.addresses[i]
        raise KeyError(name)

    @property
    def data_end(self) -> int:
        return max((a + s for a, s in zip(self.addresses, self.sizes)), default=self.data_base)

    def data_cells(self) -> list[int]:
        cells = []
        for a, s in zip(self.addresses, self.sizes):
            cells.extend(range(a, a + s))
        return cells


def variable_order(n: int, seed: int | None) -> tuple[int, ...]:
    order = list(range(n))
    if seed is not None:
        random.Random(seed).shuffle(order)  # Fisher-Yates
    return tuple(order)


def derive_layout(
    program: Program,
    dynamic: DynamicParams,
    *,
    code_words: int | None = None,
    memory_size: int = DEFAULT_MEMORY_SIZE,
    code_base: int = DEFAULT_CODE_BASE,
) -> MemoryLayout:
    if code_words is None:
        code_words = len(program.instructions) * INSTRUCTION_WORDS
    data_base = DEFAULT_DATA_BASE + dynamic.base_offset
    order = variable_order(len(program.variables), dynamic.variable_order_seed)
    addresses = [0] * len(program.variables)
    cursor = data_base
    for idx in order:
        cursor += dynamic.gap_size
        addresses[idx] = cursor
        cursor += program.variables[idx].size
    if cursor > memory_size:
        raise LayoutOverflow(f"data segment ends at {cursor:#x}, beyond memory size {memory_size:#x}")
    code_end = code_base + code_words
    if code_end > memory_size or (code_base < cursor and data_base < code_end):
        raise LayoutOverflow("code and data segments overlap")
    for addr, _ in program.rom:
        if addr >= memory_size or code_base <= addr < code_end or data_base <= addr < cursor:
            raise LayoutOverflow(f"rom word at {addr:#x} collides with code or data")
    return MemoryLayout(
        code_base=code_base,
        data_base=data_base,
        variable_order=order,
        gaps=tuple(dynamic.gap_size for _ in program.variables),
        memory_size=memory_size,
        addresses=tuple(addresses),
        sizes=tuple(v.size for v in program.variables),
        code_words=code_words,
    )


# --- static transforms ------------------------------------------------------


@dataclass(frozen=True)
class StaticVariant:
    instructions: tuple[Instruction, ...]
    labels: tuple[tuple[str, int], ...]
    register_map: tuple[tuple[int, int], ...]  # logical -> physical, used registers only
    encoding: tuple[tuple[Opcode, int], ...]

    @property
    def encoding_map(self) -> dict[Opcode, int]:
        return dict(self.encoding)


def opcode_encoding(seed: int | None) -> dict[Opcode, int]:
    """Bijection logical opcode -> physical byte. Byte 0 is never assigned."""
    if seed is None:
        return {op: int(op) for op in Opcode}
    bytes_ = random.Random(seed).sample(range(1, 256), len(Opcode))
    return dict(zip(Opcode, bytes_))


def register_map(program: Program, excluded: frozenset[int]) -> dict[int, int]:
    used = sorted(program.registers_used())
    allowed = [r for r in range(NUM_REGISTERS) if r not in excluded]
    if len(used) > len(allowed):
        raise InfeasibleRegisterAllocation(
            f"{program.name} needs {len(used)} registers, only {len(allowed)} available"
        )
    spare = [r for r in allowed if r not in used]
    mapping = {}
    for r in used:
        mapping[r] = spare.pop(0) if r in excluded else r
    return mapping


def block_heads(program: Program) -> set[int]:
    heads = {0}
    heads.update(idx for _, idx in program.labels)
    for i, ins in enumerate(program.instructions):
        if ins.op in CONTROL_OPS:
            heads.add(i + 1)
    return {h for h in heads if h < len(program.instructions)}


def apply_static(program: Program, static_: StaticParams) -> StaticVariant:
    mapping = register_map(program, static_.excluded_registers)
    full = {r: mapping.get(r, r) for r in range(NUM_REGISTERS)}
    heads = block_heads(program) if static_.nop_count else set()
    new_index = {}
    out: list[Instruction] = []
    for i, ins in enumerate(program.instructions):
        new_index[i] = len(out)
        if i in heads:
            out.extend(Instruction(Opcode.NOP) for _ in range(static_.nop_count))
        out.append(ins.remap(full))
    new_index[len(program.instructions)] = len(out)
    labels = tuple((name, new_index[idx]) for name, idx in program.labels)
    return StaticVariant(
        instructions=tuple(out),
        labels=labels,
        register_map=tuple(sorted(mapping.items())),
        encoding=tuple(opcode_encoding(static_.opcode_encoding_seed).items()),
    )


# --- data re-expression -----------------------------------------------------


def _rotl(x: int, k: int) -> int:
    k %= 32
    return wrap((x << k) | (x >> (32 - k))) if k else x


def _bitrotate(values, key):
    return [_rotl(v, key) for v in values]


def _bitrotate_inv(outputs, key, n):
    return list(outputs)


def _add_constant(values, key):
    return [wrap(v + key) for v in values]


def _add_constant_inv(outputs, key, n):
    return [wrap(o - n * key) for o in outputs]


def _matrix_dim(n_inputs: int) -> int:
    d = int(round((n_inputs // 2) ** 0.5))
    if 2 * d * d != n_inputs:
        raise ValueError(f"{n_inputs} inputs do not hold two square matrices")
    return d


def _permutations(key: int, d: int):
    if key == 0:
        return list(range(d)), list(range(d))
    rng = random.Random(key)
    rows, cols = list(range(d)), list(range(d))
    rng.shuffle(rows)
    rng.shuffle(cols)
    return rows, cols


def _rowcol(values, key):
    d = _matrix_dim(len(values))
    a, b = values[: d * d], values[d * d :]
    rows, cols = _permutations(key, d)
    a2 = [a[rows[i] * d + j] for i in range(d) for j in range(d)]
    b2 = [b[i * d + cols[j]] for i in range(d) for j in range(d)]
    return a2 + b2


def _rowcol_inv(outputs, key, n):
    d = _matrix_dim(n)
    rows, cols = _permutations(key, d)
    c = [0] * (d * d)
    for i in range(d):
        for j in range(d):
            c[rows[i] * d + cols[j]] = outputs[i * d + j]
    return c


VALUE_OFFSET_MASK = 0xFFFF


def _value_offset(values, key):
    return [wrap(v + (key & VALUE_OFFSET_MASK)) for v in values]


def _value_offset_inv(outputs, key, n):
    return [wrap(o - (key & VALUE_OFFSET_MASK)) for o in outputs]


FAMILIES = {
    "bitrotate": (_bitrotate, _bitrotate_inv),
    "add-constant": (_add_constant, _add_constant_inv),
    "rowcol-permutation": (_rowcol, _rowcol_inv),
    "value-offset": (_value_offset, _value_offset_inv),
}


def _family(name: str):
    try:
        return FAMILIES[name]
    except KeyError:
        raise UnknownFamily(name) from None


def reexpress(inputs, key: int, family: str) -> list[int]:
    forward, _ = _family(family)
    return forward(list(inputs), wrap(key))


def invert_reexpress(outputs, key: int, family: str, n_inputs: int) -> list[int]:
    _, inverse = _family(family)
    return inverse(list(outputs), wrap(key), n_inputs)


def effective_family(program: Program, config: DiversityConfig) -> str | None:
    """Family applied for this (program, config), or None when re-expression is off."""
    if config.dynamic.reexpr_key is None:
        return None
    return config.dynamic.reexpr_family or program.reexpression


def random_config(rng: random.Random, program: Program | None = None) -> DiversityConfig:
    """A seeded random DiversityConfig within the feasible envelope."""
    excluded = frozenset(rng.sample(range(NUM_REGISTERS), rng.randint(0, MAX_EXCLUDED_REGISTERS)))
    key = rng.randrange(1 << 32) if (program is None or program.reexpression) and rng.random() < 0.7 else None
    return DiversityConfig(
        DynamicParams(
            gap_size=rng.choice([0, 1, 2, 3, 4, 8, 16, 33]),
            base_offset=rng.randrange(0, 0x8000),
            variable_order_seed=rng.choice([None, rng.randrange(1 << 30)]),
            reexpr_key=key,
        ),
        StaticParams(
            excluded_registers=excluded,
            nop_count=rng.randint(0, 3),
            opcode_encoding_seed=rng.choice([None, rng.randrange(1 << 30)]),
        ),
    )


def mirror_base_offset(extent: int, memory_size: int = DEFAULT_MEMORY_SIZE) -> int:
    """Base offset placing an ``extent``-word data segment at the bitwise
    complement of the default placement, so every address line that is low
    in the default layout is high and vice versa."""
    top = (memory_size - 1 - DEFAULT_DATA_BASE) & (memory_size - 1)
    return max(0, top - extent + 1 - DEFAULT_DATA_BASE)


def data_extent(program: Program, gap_size: int) -> int:
    return program.data_words + gap_size * len(program.variables)
