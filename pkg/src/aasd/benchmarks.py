"""Benchmark kernels and their input generators.

Kernels keep loop state in memory-resident variables, the way unoptimized
compiler output does, so layout changes affect what the core touches.
"""

from __future__ import annotations

import functools
import random
from dataclasses import dataclass
from typing import Callable

from .isa import Program, parse_program
from .machine import watchdog_limit

BITCOUNT = """\
; population count of one word
.name bitcount
.in 1
.out 1
.reexpr bitrotate
.var x 1
.var count 1
.var i 1
.var limit 1 32
    LOAD r1, in
    STORE r1, x
    LOADI r2, 0
    STORE r2, count
    STORE r2, i
loop:
    LOAD r1, x
    LOADI r3, 1
    AND r4, r1, r3
    LOAD r5, count
    ADD r5, r5, r4
    STORE r5, count
    SHR r1, r1, r3
    STORE r1, x
    LOAD r6, i
    ADD r6, r6, r3
    STORE r6, i
    LOAD r7, limit
    BLT r6, r7, loop
    LOAD r5, count
    STORE r5, out
    HALT
"""

CHECKSUM32 = """\
; additive checksum (sum mod 2^32) of eight words
.name checksum32
.in 8
.out 1
.reexpr add-constant
.var sum 1
.var i 1
.var n 1 8
    LOADI r1, 0
    STORE r1, sum
    STORE r1, i
loop:
    LOAD r2, i
    LOAD r3, in[r2]
    LOAD r4, sum
    ADD r4, r4, r3
    STORE r4, sum
    LOADI r5, 1
    ADD r2, r2, r5
    STORE r2, i
    LOAD r6, n
    BLT r2, r6, loop
    LOAD r4, sum
    STORE r4, out
    HALT
"""

ISORT = """\
; insertion sort of eight 16-bit values, ascending
.name isort
.in 8
.out 8
.reexpr value-offset
.var n 1 8
    LOAD r10, n
    LOADI r11, 1
    LOADI r9, 0
    LOADI r1, 0
copy:
    LOAD r2, in[r1]
    STORE r2, out[r1]
    ADD r1, r1, r11
    BLT r1, r10, copy
    LOADI r1, 1
outer:
    LOAD r2, out[r1]
    OR r3, r1, r1
inner:
    BEQ r3, r9, place
    SUB r4, r3, r11
    LOAD r5, out[r4]
    BLT r5, r2, place
    BEQ r5, r2, place
    STORE r5, out[r3]
    OR r3, r4, r4
    JMP inner
place:
    STORE r2, out[r3]
    ADD r1, r1, r11
    BLT r1, r10, outer
    HALT
"""


def matmul_source(d: int) -> str:
    return f"""\
; C = A x B for {d}x{d} matrices; inputs are A then B, row-major
.name matmul{d}x{d}
.in {2 * d * d}
.out {d * d}
.reexpr rowcol-permutation
.var dim 1 {d}
    LOAD r10, dim
    LOADI r11, 1
    LOADI r1, 0
iloop:
    LOADI r2, 0
jloop:
    LOADI r3, 0
    LOADI r4, 0
kloop:
    MUL r5, r1, r10
    ADD r5, r5, r3
    LOAD r6, in[r5]
    MUL r7, r3, r10
    ADD r7, r7, r2
    LOAD r8, in+{d * d}[r7]
    MUL r9, r6, r8
    ADD r4, r4, r9
    ADD r3, r3, r11
    BLT r3, r10, kloop
    MUL r5, r1, r10
    ADD r5, r5, r2
    STORE r4, out[r5]
    ADD r2, r2, r11
    BLT r2, r10, jloop
    ADD r1, r1, r11
    BLT r1, r10, iloop
    HALT
"""


def _words(rng: random.Random, n: int, bits: int = 32) -> list[int]:
    return [rng.getrandbits(bits) for _ in range(n)]


def _identity(d: int) -> list[int]:
    return [1 if i == j else 0 for i in range(d) for j in range(d)]


@dataclass(frozen=True)
class Benchmark:
    name: str
    program: Program
    generate: Callable[[random.Random], list[int]]
    edge_cases: tuple[tuple[int, ...], ...]

    def test_inputs(self, n_random: int = 64, seed: int = 2015) -> list[list[int]]:
        """Default test set: seeded random inputs plus the declared edge cases."""
        rng = random.Random(f"{self.name}:{seed}")
        return [self.generate(rng) for _ in range(n_random)] + [list(e) for e in self.edge_cases]

    @property
    def watchdog(self) -> int:
        return _watchdog(self.name)


def _matmul(d: int) -> Benchmark:
    n = d * d
    edges = (
        tuple(_identity(d) + list(range(1, n + 1))),
        tuple([0] * (2 * n)),
        tuple([0xFFFFFFFF] * (2 * n)),
    )
    return Benchmark(f"matmul{d}x{d}", parse_program(matmul_source(d)), lambda r: _words(r, 2 * n), edges)


BENCHMARKS: dict[str, Benchmark] = {
    b.name: b
    for b in [
        Benchmark(
            "bitcount",
            parse_program(BITCOUNT),
            lambda r: _words(r, 1),
            ((0,), (0xFFFFFFFF,), (0xFF,), (0xF0F0F0F0,), (1,), (0x80000000,)),
        ),
        Benchmark(
            "checksum32",
            parse_program(CHECKSUM32),
            lambda r: _words(r, 8),
            (tuple([0] * 8), tuple([0xFFFFFFFF] * 8), tuple(range(8))),
        ),
        _matmul(2),
        _matmul(4),
        Benchmark(
            "isort",
            parse_program(ISORT),
            lambda r: _words(r, 8, bits=16),
            (tuple(range(8)), tuple(range(7, -1, -1)), tuple([5] * 8), (0xFFFF, 0, 0xFFFF, 1, 0, 7, 7, 3)),
        ),
    ]
}


@functools.lru_cache(maxsize=None)
def _watchdog(name: str) -> int:
    bench = BENCHMARKS[name]
    return watchdog_limit(bench.program, bench.test_inputs())


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; known: {', '.join(BENCHMARKS)}") from None
