import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aasd.benchmarks import BENCHMARKS, get_benchmark
from aasd.diversity import (
    DEFAULT_CONFIG,
    DEFAULT_DATA_BASE,
    DiversityConfig,
    DynamicParams,
    LayoutOverflow,
    StaticParams,
    UnknownFamily,
    apply_static,
    block_heads,
    derive_layout,
    invert_reexpress,
    mirror_base_offset,
    opcode_encoding,
    random_config,
    reexpress,
    variable_order,
)
from aasd.isa import Opcode, parse_program
from aasd.machine import golden_run
from aasd.redundancy import canonical_output

THREE_VARS = parse_program(".out 1\n.var a 1\n.var b 1\nLOADI r1, 0\nSTORE r1, out\nHALT\n")
FIVE_VARS = parse_program(".out 1\n.var a 1\n.var b 2\n.var c 3\n.var d 1\nHALT\n")
WORDS = st.integers(0, 0xFFFFFFFF)


def test_identity_layout():
    layout = derive_layout(THREE_VARS, DynamicParams())
    assert layout.addresses == (DEFAULT_DATA_BASE, DEFAULT_DATA_BASE + 1, DEFAULT_DATA_BASE + 2)
    assert layout.variable_order == (0, 1, 2)


def test_gap_arithmetic():
    layout = derive_layout(THREE_VARS, DynamicParams(gap_size=4))
    base = DEFAULT_DATA_BASE
    assert layout.addresses == (base + 4, base + 9, base + 14)


def test_order_seeds_give_distinct_disjoint_layouts():
    # oracle: the seeded Fisher-Yates shuffle itself
    seeds = (1, 2)
    expected = []
    for s in seeds:
        order = list(range(5))
        random.Random(s).shuffle(order)
        expected.append(tuple(order))
    assert expected[0] != expected[1]
    for seed, order in zip(seeds, expected):
        layout = derive_layout(FIVE_VARS, DynamicParams(variable_order_seed=seed))
        assert layout.variable_order == order
        spans = sorted((a, a + s) for a, s in zip(layout.addresses, layout.sizes))
        assert all(hi <= lo2 for (_, hi), (lo2, _) in zip(spans, spans[1:]))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 40), st.integers(0, 0xE000), st.one_of(st.none(), st.integers(0, 1 << 20)))
def test_layouts_are_disjoint_and_in_bounds(gap, base, seed):
    program = get_benchmark("matmul4x4").program
    try:
        layout = derive_layout(program, DynamicParams(gap_size=gap, base_offset=base, variable_order_seed=seed))
    except LayoutOverflow:
        return
    cells = layout.data_cells()
    assert len(cells) == len(set(cells)) == program.data_words
    assert all(layout.code_words <= c < layout.memory_size for c in cells)


def test_overflow():
    with pytest.raises(LayoutOverflow):
        derive_layout(THREE_VARS, DynamicParams(base_offset=0xF000), memory_size=0x1000)


def test_bitrotate_example():
    assert reexpress([0x1], 7, "bitrotate") == [0x80]
    assert invert_reexpress([5], 7, "bitrotate", 1) == [5]


@settings(max_examples=50, deadline=None)
@given(st.lists(WORDS, min_size=8, max_size=8), WORDS)
def test_add_constant_against_reference_checksum(words, k):
    shifted = reexpress(words, k, "add-constant")
    assert shifted == [(w + k) % 2**32 for w in words]
    checksum = sum(shifted) % 2**32
    assert invert_reexpress([checksum], k, "add-constant", 8) == [sum(words) % 2**32]


@pytest.mark.parametrize("family", ["bitrotate", "add-constant", "value-offset", "rowcol-permutation"])
def test_key_zero_is_identity(family):
    words = list(range(1, 9))
    assert reexpress(words, 0, family) == words
    assert invert_reexpress(words[:4], 0, family, 8) == words[:4]


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_reexpression_is_transparent(name):
    bench = BENCHMARKS[name]
    rng = random.Random(name)
    for inputs in bench.test_inputs(n_random=6):
        key = rng.getrandbits(32)
        config = DEFAULT_CONFIG.with_dynamic(reexpr_key=key)
        assert list(canonical_output(bench.program, config, inputs)) == golden_run(bench.program, inputs)


def test_unknown_family():
    with pytest.raises(UnknownFamily):
        reexpress([1], 1, "rot13")


def test_register_exclusion_remaps_and_keeps_outputs():
    program = get_benchmark("bitcount").program
    static_ = StaticParams(excluded_registers=frozenset({5}))
    variant = apply_static(program, static_)
    assert all(5 not in ins.registers() for ins in variant.instructions)
    config = DEFAULT_CONFIG.with_static(excluded_registers=frozenset({5}))
    for x in (0, 0xFF, 0x12345678):
        assert list(canonical_output(program, config, [x])) == golden_run(program, [x])


def test_nop_insertion_shifts_single_block():
    program = parse_program(".out 1\nLOADI r1, 1\nSTORE r1, out\nHALT\n")
    assert block_heads(program) == {0}
    variant = apply_static(program, StaticParams(nop_count=2))
    assert [i.op for i in variant.instructions[:3]] == [Opcode.NOP, Opcode.NOP, Opcode.LOADI]


def test_nop_insertion_moves_labels():
    program = get_benchmark("checksum32").program
    variant = apply_static(program, StaticParams(nop_count=1))
    heads = sorted(block_heads(program))
    for name, idx in program.labels:
        # a label lands on the padding in front of its block
        new = dict(variant.labels)[name]
        assert new == idx + heads.index(idx)
        assert variant.instructions[new].op is Opcode.NOP
        assert variant.instructions[new + 1] == program.instructions[idx]


def test_encodings():
    assert opcode_encoding(None) == {op: int(op) for op in Opcode}
    enc = opcode_encoding(99)
    assert len(set(enc.values())) == len(Opcode) and 0 not in enc.values()


def test_order_identity_marker():
    assert variable_order(4, None) == (0, 1, 2, 3)
    assert sorted(variable_order(6, 3)) == list(range(6))


def test_config_dict_roundtrip():
    rng = random.Random(1)
    for _ in range(20):
        c = random_config(rng)
        assert DiversityConfig.from_dict(c.to_dict()) == c
    assert DEFAULT_CONFIG.describe() == "default"


def test_mirror_base_complements_address_lines():
    extent = 40
    base = DEFAULT_DATA_BASE + mirror_base_offset(extent)
    # the segment's last word sits at the complement of the default first word
    assert base + extent - 1 == ~DEFAULT_DATA_BASE & 0xFFFF
    assert mirror_base_offset(0x10000) == 0


def test_parameter_validation():
    with pytest.raises(ValueError):
        DynamicParams(gap_size=-1)
    with pytest.raises(ValueError):
        StaticParams(nop_count=-2)
    with pytest.raises(ValueError):
        StaticParams(excluded_registers=frozenset({16}))


def test_all_small_permutations_reachable():
    seen = {variable_order(3, s) for s in range(200)}
    assert seen == set(itertools.permutations(range(3)))
