import pytest
from hypothesis import given
from hypothesis import strategies as st

from aasd import records
from aasd.diversity import DEFAULT_CONFIG
from aasd.faults import (
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
)

KINDS = st.one_of(
    st.builds(RegisterStuckBit, st.integers(0, 15), st.integers(0, 31), st.integers(0, 1),
              st.sampled_from(["read", "write"])),
    st.builds(MemoryStuckBit, st.integers(0, 0xFFFF), st.integers(0, 31), st.integers(0, 1),
              st.sampled_from(["read", "write"])),
    st.builds(AddressDecoderLine, st.integers(0, 15), st.sampled_from(["stuck-0", "stuck-1", "flip"])),
    st.builds(InstructionDecoderSub, st.integers(0, 127), st.one_of(st.none(), st.integers(128, 255))),
)
PERSISTENCE = st.one_of(st.builds(Transient, st.integers(0, 999)), st.builds(Permanent, st.integers(0, 999)))


@given(KINDS, PERSISTENCE, st.integers(0, 4))
def test_fault_roundtrip(kind, persistence, core):
    fault = Fault(kind, persistence, core)
    assert records.fault_from_dict(records.loads(records.dumps(records.fault_to_dict(fault)))) == fault


@given(KINDS)
def test_definition_roundtrip(kind):
    d = FaultDefinition(kind, "walk")
    assert records.definition_from_dict(records.definition_to_dict(d)) == d


def test_memory_address_is_hex():
    d = records.kind_to_dict(MemoryStuckBit(0x1003, 2, 0))
    assert d["addr"] == "0x1003"
    assert records.kind_to_dict(InstructionDecoderSub(4, None))["to"] is None


@pytest.mark.parametrize(
    "kind,text",
    [
        (RegisterStuckBit(5, 3, 1), "r5:bit3:sa1"),
        (MemoryStuckBit(0x1003, 2, 0), "0x1003:bit2:sa0"),
        (AddressDecoderLine(3, "stuck-0"), "line3:stuck-0"),
        (InstructionDecoderSub(4, 5), "0x04->0x05"),
        (InstructionDecoderSub(4, None), "0x04->unknown"),
    ],
)
def test_describe_kind(kind, text):
    assert records.describe_kind(kind) == text


def test_plan_roundtrip():
    plan = FaultPlan([Fault(RegisterStuckBit(1, 2, 1), core=2), Fault(AddressDecoderLine(4, "flip"), core=2)])
    assert records.plan_from_dict(records.plan_to_dict(plan)) == plan
    with pytest.raises(records.RecordError):
        records.plan_from_dict({"faults": [records.fault_to_dict(Fault(RegisterStuckBit(1, 2, 1)))] * 2})


def test_space_roundtrip():
    space = FaultSpace(kinds=("memory", "instruction-decoder"), memory_range=(0x2000, 0x2010),
                       opcode_from=(1, 2), opcode_to=None, persistence="transient")
    assert records.space_from_dict(records.space_to_dict(space)) == space


def test_config_roundtrip():
    config = DEFAULT_CONFIG.with_dynamic(gap_size=2, reexpr_key=7).with_static(excluded_registers=frozenset({3}))
    assert records.config_from_dict(records.config_to_dict(config)) == config


def test_words():
    assert records.words_to_hex([1, 0xFFFFFFFF]) == ["0x00000001", "0xffffffff"]
    assert records.words_from_hex(["0x10", 5]) == [16, 5]
    with pytest.raises(records.RecordError):
        records.parse_word("zz")


@pytest.mark.parametrize(
    "bad",
    [{"kind": "register", "reg": 1}, {"kind": "cosmic-ray"}, {"kind": "memory", "addr": "x", "bit": 0, "stuck_value": 0}],
)
def test_bad_kind_records(bad):
    with pytest.raises(records.RecordError):
        records.kind_from_dict(bad)


def test_loads_rejects_garbage():
    with pytest.raises(records.RecordError):
        records.loads("{not json")


def test_dumps_is_canonical():
    assert records.dumps({"b": 1, "a": 2}) == records.dumps({"a": 2, "b": 1})
