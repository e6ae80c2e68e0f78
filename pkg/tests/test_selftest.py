import pytest

from aasd.diversity import opcode_encoding
from aasd.faults import (
    AddressDecoderLine,
    Fault,
    FaultDefinition,
    FaultPlan,
    InstructionDecoderSub,
    MemoryStuckBit,
    RegisterStuckBit,
    Transient,
)
from aasd.isa import Opcode
from aasd.selftest import (
    TESTS,
    CoreContext,
    FaultReport,
    march_memory_test,
    opcode_sweep_test,
    register_walk_test,
    run_self_tests,
)


def ctx(*kinds, **kw):
    return CoreContext(FaultPlan([Fault(k) for k in kinds]), **kw)


def test_fault_free_core_reports_nothing():
    report = run_self_tests(CoreContext())
    assert report.found == [] and report.tests_run == list(TESTS)
    assert not report.crashed and not report.inconclusive


def test_register_bit_located():
    fault = RegisterStuckBit(5, 3, 1)
    assert [d.kind for d in register_walk_test(ctx(fault))] == [fault]


def test_two_register_faults():
    a, b = RegisterStuckBit(2, 0, 0), RegisterStuckBit(11, 31, 1)
    assert run_self_tests(ctx(a, b)).kinds() == [a, b]


@pytest.mark.parametrize("addr,bit,value", [(0x1000, 0, 0), (0x1003, 2, 1), (0x10FF, 31, 0)])
def test_memory_bit_located(addr, bit, value):
    fault = MemoryStuckBit(addr, bit, value)
    assert [d.kind for d in march_memory_test(ctx(fault))] == [fault]


def test_two_memory_faults_in_region():
    a, b = MemoryStuckBit(0x1010, 4, 1), MemoryStuckBit(0x1080, 9, 0)
    assert run_self_tests(ctx(a, b)).kinds() == [a, b]


@pytest.mark.parametrize("mode", ["stuck-0", "stuck-1", "flip"])
def test_address_line_located(mode):
    fault = AddressDecoderLine(3, mode)
    assert run_self_tests(ctx(fault)).kinds() == [fault]


def test_add_read_as_sub():
    fault = InstructionDecoderSub(int(Opcode.ADD), int(Opcode.SUB))
    assert [d.kind for d in opcode_sweep_test(ctx(fault))] == [fault]


def test_substitution_to_invalid_byte_has_unknown_target():
    found = run_self_tests(ctx(InstructionDecoderSub(int(Opcode.LOAD), 200))).kinds()
    assert found == [InstructionDecoderSub(int(Opcode.LOAD), None)]


def test_substitution_under_shuffled_encoding():
    enc = opcode_encoding(17)
    fault = InstructionDecoderSub(enc[Opcode.XOR], enc[Opcode.OR])
    assert run_self_tests(ctx(fault, encoding_seed=17)).kinds() == [fault]


def test_expired_transient_is_ignored():
    plan = FaultPlan([Fault(RegisterStuckBit(4, 4, 1), Transient(3))])
    assert run_self_tests(CoreContext(plan)).found == []


def test_report_add_deduplicates():
    report = FaultReport()
    d = FaultDefinition(RegisterStuckBit(1, 1, 1), "walk")
    report.add([d, FaultDefinition(RegisterStuckBit(1, 1, 1), "again")])
    assert report.kinds() == [d.kind]
