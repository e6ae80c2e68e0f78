import math
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aasd.faults import (
    ADDRESS_MODES,
    AddressDecoderLine,
    EmptySpace,
    Fault,
    FaultPlan,
    FaultSpace,
    InstructionDecoderSub,
    MemoryStuckBit,
    Permanent,
    RegisterStuckBit,
    Transient,
    apply_address_mapping,
    kind_sort_key,
    sample_faults,
    view_address,
    view_memory_read,
    view_memory_write,
    view_opcode,
    view_register_read,
    view_register_write,
)


def plan(kind, persistence=Permanent()):
    return FaultPlan([Fault(kind, persistence)])


def test_register_forcing():
    p = plan(RegisterStuckBit(2, 0, 1))
    assert view_register_read(0b10, 2, p, 5) == 0b11
    assert view_register_read(0b11, 2, p, 5) == 0b11
    assert view_register_read(0b10, 3, p, 5) == 0b10


def test_transient_only_at_its_cycle():
    p = plan(RegisterStuckBit(2, 0, 1), Transient(7))
    assert view_register_read(0b10, 2, p, 6) == 0b10
    assert view_register_read(0b10, 2, p, 7) == 0b11


def test_write_side_faults():
    p = plan(RegisterStuckBit(4, 31, 0, side="write"))
    assert view_register_write(0xFFFFFFFF, 4, p, 1) == 0x7FFFFFFF
    assert view_register_read(0xFFFFFFFF, 4, p, 1) == 0xFFFFFFFF
    m = plan(MemoryStuckBit(0x1000, 3, 1))
    assert view_memory_write(0, 0x1000, m, 1) == 8
    assert view_memory_read(0, 0x1000, m, 1) == 0


@pytest.mark.parametrize(
    "line,mode,expected", [(2, "stuck-0", 0b0000), (1, "flip", 0b0110), (3, "stuck-1", 0b1100)]
)
def test_address_views(line, mode, expected):
    assert view_address(0b0100, plan(AddressDecoderLine(line, mode)), 1) == expected
    assert apply_address_mapping(0b0100, line, mode) == expected


def test_address_without_faults():
    assert view_address(0b0100, FaultPlan(), 1) == 0b0100


def test_opcode_views():
    p = plan(InstructionDecoderSub(0x12, 0x13))
    assert view_opcode(0x12, p, 1) == 0x13
    assert view_opcode(0x14, p, 1) == 0x14
    late = plan(InstructionDecoderSub(0x12, 0x13), Permanent(100))
    assert view_opcode(0x12, late, 50) == 0x12


@given(st.integers(0, 0xFFFF), st.integers(0, 15), st.sampled_from(ADDRESS_MODES))
def test_address_mapping_changes_only_its_line(addr, line, mode):
    mapped = apply_address_mapping(addr, line, mode)
    assert (mapped ^ addr) & ~(1 << line) == 0


def test_plan_rejects_duplicate_locations_and_mixed_cores():
    with pytest.raises(ValueError):
        FaultPlan([Fault(RegisterStuckBit(1, 1, 0)), Fault(RegisterStuckBit(1, 1, 1))])
    with pytest.raises(ValueError):
        FaultPlan([Fault(RegisterStuckBit(1, 1, 0), core=0), Fault(RegisterStuckBit(2, 1, 0), core=1)])
    with pytest.raises(ValueError):
        FaultPlan([Fault(InstructionDecoderSub(3, None))])


def test_without_transients():
    p = FaultPlan([Fault(RegisterStuckBit(1, 1, 0), Transient(3)), Fault(MemoryStuckBit(5, 1, 0))])
    assert list(p.without_transients()) == [Fault(MemoryStuckBit(5, 1, 0))]
    assert p.max_transient_cycle == 3


@pytest.mark.parametrize(
    "bad",
    [
        lambda: RegisterStuckBit(16, 0, 0),
        lambda: RegisterStuckBit(0, 32, 0),
        lambda: RegisterStuckBit(0, 0, 2),
        lambda: MemoryStuckBit(-1, 0, 0),
        lambda: AddressDecoderLine(3, "stuck-2"),
        lambda: InstructionDecoderSub(4, 4),
        lambda: InstructionDecoderSub(256, 4),
    ],
)
def test_kind_validation(bad):
    with pytest.raises(ValueError):
        bad()


def test_sort_key_orders_by_kind_then_location():
    kinds = [InstructionDecoderSub(2, 3), AddressDecoderLine(1, "flip"), MemoryStuckBit(9, 0, 0), RegisterStuckBit(5, 3, 1)]
    ordered = sorted(kinds, key=kind_sort_key)
    assert [type(k) for k in ordered] == [RegisterStuckBit, MemoryStuckBit, AddressDecoderLine, InstructionDecoderSub]


def test_sampling_is_deterministic():
    space = FaultSpace(kinds=("address-decoder",), modes=("flip",))
    first = sample_faults(42, space, 16)
    assert first == sample_faults(42, space, 16)
    assert all(isinstance(f.kind, AddressDecoderLine) and f.kind.line < 16 for f in first)


def test_sampling_ranges():
    (f,) = sample_faults(1, FaultSpace(), 1)
    assert f.kind.reg < 16 and f.kind.bit < 32


def test_register_draws_are_uniform():
    n = 10_000
    counts = Counter(f.kind.reg for f in sample_faults(7, FaultSpace(), n))
    p = 1 / 16
    sigma = math.sqrt(n * p * (1 - p))
    for reg in range(16):
        assert abs(counts[reg] - n * p) <= 3 * sigma, (reg, counts[reg])


def test_space_enumeration_matches_size():
    space = FaultSpace(kinds=("register", "address-decoder", "instruction-decoder"),
                       registers=(1, 2), bits=(0, 31), opcode_from=(1, 2), opcode_to=(1, 2, 3))
    kinds = list(space.enumerate())
    assert len(kinds) == space.size == 2 * 2 * 2 + 16 * 3 + 4
    assert len(set(kinds)) == len(kinds)
    assert [space.location(i) for i in range(space.size)] == kinds


def test_transient_sampling():
    space = FaultSpace(persistence="transient", transient_cycles=(10, 20))
    assert all(10 <= f.persistence.cycle < 20 for f in sample_faults(3, space, 50))


def test_empty_space():
    with pytest.raises(EmptySpace):
        sample_faults(0, FaultSpace(kinds=("memory",), memory_range=(5, 5)), 1)
    with pytest.raises(ValueError):
        FaultSpace(kinds=("gremlin",))
