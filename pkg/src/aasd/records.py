"""JSON records shared by spec files, the wire protocol and reports.

Every record is a flat-ish JSON object with fixed field names; words and
addresses are written as hex strings so files diff cleanly.
"""

from __future__ import annotations

import json

from .diversity import DiversityConfig
from .faults import (
    AddressDecoderLine,
    Fault,
    FaultDefinition,
    FaultPlan,
    FaultSpace,
    InstructionDecoderSub,
    MemoryStuckBit,
    Permanent,
    RegisterStuckBit,
    Transient,
    kind_name,
)


class RecordError(ValueError):
    """A record is malformed or names something unknown."""


def dumps(record) -> str:
    return json.dumps(record, sort_keys=True, indent=2) + "\n"


def loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecordError(f"not a JSON record: {exc}") from None


def hexword(value: int) -> str:
    return f"0x{value:08x}"


def parse_word(value) -> int:
    if isinstance(value, int):
        return value
    try:
        return int(value, 0)
    except (TypeError, ValueError):
        raise RecordError(f"bad word {value!r}") from None


# --- faults -----------------------------------------------------------------


def kind_to_dict(kind) -> dict:
    d = {"kind": kind_name(kind)}
    if isinstance(kind, RegisterStuckBit):
        d.update(reg=kind.reg, bit=kind.bit, stuck_value=kind.stuck_value, side=kind.side)
    elif isinstance(kind, MemoryStuckBit):
        d.update(addr=f"0x{kind.addr:04x}", bit=kind.bit, stuck_value=kind.stuck_value, side=kind.side)
    elif isinstance(kind, AddressDecoderLine):
        d.update(line=kind.line, mode=kind.mode)
    else:
        d.update({"from": f"0x{kind.from_:02x}", "to": None if kind.to is None else f"0x{kind.to:02x}"})
    return d


def kind_from_dict(d: dict):
    try:
        k = d["kind"]
        if k == "register":
            return RegisterStuckBit(int(d["reg"]), int(d["bit"]), int(d["stuck_value"]), d.get("side", "read"))
        if k == "memory":
            return MemoryStuckBit(parse_word(d["addr"]), int(d["bit"]), int(d["stuck_value"]), d.get("side", "write"))
        if k == "address-decoder":
            return AddressDecoderLine(int(d["line"]), d["mode"])
        if k == "instruction-decoder":
            to = d.get("to")
            return InstructionDecoderSub(parse_word(d["from"]), None if to is None else parse_word(to))
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordError(f"bad fault record {d!r}: {exc}") from None
    raise RecordError(f"unknown fault kind {d.get('kind')!r}")


def describe_kind(kind) -> str:
    """Location column used in CSV reports."""
    if isinstance(kind, RegisterStuckBit):
        return f"r{kind.reg}:bit{kind.bit}:sa{kind.stuck_value}"
    if isinstance(kind, MemoryStuckBit):
        return f"0x{kind.addr:04x}:bit{kind.bit}:sa{kind.stuck_value}"
    if isinstance(kind, AddressDecoderLine):
        return f"line{kind.line}:{kind.mode}"
    to = "unknown" if kind.to is None else f"0x{kind.to:02x}"
    return f"0x{kind.from_:02x}->{to}"


def fault_to_dict(fault: Fault) -> dict:
    d = kind_to_dict(fault.kind)
    if isinstance(fault.persistence, Transient):
        d["persistence"] = {"transient": fault.persistence.cycle}
    else:
        d["persistence"] = {"permanent": fault.persistence.onset_cycle}
    d["core"] = fault.core
    return d


def fault_from_dict(d: dict) -> Fault:
    pers = d.get("persistence", {"permanent": 0})
    if "transient" in pers:
        persistence = Transient(int(pers["transient"]))
    else:
        persistence = Permanent(int(pers.get("permanent", 0)))
    return Fault(kind_from_dict(d), persistence, int(d.get("core", 0)))


def plan_to_dict(plan: FaultPlan) -> dict:
    return {"core": plan.core, "faults": [fault_to_dict(f) for f in plan]}


def plan_from_dict(d: dict) -> FaultPlan:
    try:
        return FaultPlan([fault_from_dict(f) for f in d.get("faults", [])], core=d.get("core"))
    except ValueError as exc:
        raise RecordError(str(exc)) from None


def definition_to_dict(defn: FaultDefinition) -> dict:
    return {**kind_to_dict(defn.kind), "evidence": defn.evidence}


def definition_from_dict(d: dict) -> FaultDefinition:
    return FaultDefinition(kind_from_dict(d), d.get("evidence", ""))


_SPACE_TUPLES = ("kinds", "registers", "bits", "stuck_values", "lines", "modes", "cores")


def space_to_dict(space: FaultSpace) -> dict:
    d = {name: list(getattr(space, name)) for name in _SPACE_TUPLES}
    d.update(
        register_side=space.register_side,
        memory_side=space.memory_side,
        memory_range=[f"0x{a:04x}" for a in space.memory_range],
        opcode_from=None if space.opcode_from is None else list(space.opcode_from),
        opcode_to=None if space.opcode_to is None else list(space.opcode_to),
        persistence=space.persistence,
        transient_cycles=list(space.transient_cycles),
    )
    return d


def space_from_dict(d: dict) -> FaultSpace:
    kwargs = {name: tuple(d[name]) for name in _SPACE_TUPLES if name in d}
    for name in ("register_side", "memory_side", "persistence"):
        if name in d:
            kwargs[name] = d[name]
    if "memory_range" in d:
        kwargs["memory_range"] = tuple(parse_word(a) for a in d["memory_range"])
    for name in ("opcode_from", "opcode_to"):
        if d.get(name) is not None:
            kwargs[name] = tuple(parse_word(b) for b in d[name])
    if "transient_cycles" in d:
        kwargs["transient_cycles"] = tuple(d["transient_cycles"])
    try:
        return FaultSpace(**kwargs)
    except (TypeError, ValueError) as exc:
        raise RecordError(f"bad fault space: {exc}") from None


def config_to_dict(config: DiversityConfig) -> dict:
    return config.to_dict()


def config_from_dict(d: dict) -> DiversityConfig:
    try:
        return DiversityConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise RecordError(f"bad diversity config: {exc}") from None


def words_to_hex(words) -> list[str]:
    return [hexword(w) for w in words]


def words_from_hex(words) -> list[int]:
    return [parse_word(w) for w in words]
