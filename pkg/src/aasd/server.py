"""Simulated remote variant generation.

Given a located fault and the program, search static and layout diversity
settings for a variant whose masking coverage on a test set meets the
threshold. The service boundary is a request/response pair that can also
travel over a local socket as length-prefixed JSON.
"""

from __future__ import annotations

import itertools
import random
import socket
import socketserver
import struct
from dataclasses import dataclass

from . import records
from .benchmarks import BENCHMARKS, get_benchmark
from .diversity import (
    DEFAULT_CONFIG,
    DiversityConfig,
    InfeasibleRegisterAllocation,
    LayoutOverflow,
    data_extent,
    mirror_base_offset,
    opcode_encoding,
    random_config,
)
from .faults import (
    AddressDecoderLine,
    Fault,
    FaultDefinition,
    FaultPlan,
    InstructionDecoderSub,
    MemoryStuckBit,
    Permanent,
    RegisterStuckBit,
)
from .isa import INSTRUCTION_WORDS, NUM_REGISTERS, Program, parse_program
from .machine import assemble, golden_run, watchdog_limit
from .redundancy import canonical_output

DEFAULT_BUDGET = 64
DEFAULT_THRESHOLD = 0.95

TECHNIQUES = (
    "register-exclusion",
    "memory-gaps",
    "base-address",
    "layout-randomization",
    "data-randomization",
    "encoding-randomization",
    "nop-insertion",
)

# first families tried per fault class, in order
GUIDED = {
    RegisterStuckBit: ("register-exclusion", "data-randomization"),
    MemoryStuckBit: ("layout-randomization", "memory-gaps", "base-address", "data-randomization"),
    AddressDecoderLine: ("memory-gaps", "base-address", "layout-randomization"),
    InstructionDecoderSub: ("encoding-randomization",),
}


@dataclass(frozen=True)
class VariantRequest:
    program: Program
    fault: FaultDefinition
    test_inputs: tuple[tuple[int, ...], ...]
    coverage_threshold: float = DEFAULT_THRESHOLD
    search_budget: int = DEFAULT_BUDGET
    base_config: DiversityConfig = DEFAULT_CONFIG
    techniques: tuple[str, ...] | None = None  # None: fault-class-guided order plus random tail

    def __post_init__(self):
        object.__setattr__(self, "test_inputs", tuple(tuple(v) for v in self.test_inputs))
        if not self.test_inputs:
            raise ValueError("test_inputs must be non-empty")
        if not 0 < self.coverage_threshold <= 1:
            raise ValueError("coverage_threshold must lie in (0, 1]")
        if self.search_budget < 1:
            raise ValueError("search_budget must be >= 1")
        for t in self.techniques or ():
            if t not in TECHNIQUES:
                raise ValueError(f"unknown technique {t!r}")


@dataclass(frozen=True)
class Generated:
    config: DiversityConfig
    coverage: float
    configs_tried: int


@dataclass(frozen=True)
class Failed:
    best_coverage: float
    configs_tried: int


VariantResponse = Generated | Failed


def default_request(program_name: str, fault: FaultDefinition, **kwargs) -> VariantRequest:
    bench = get_benchmark(program_name)
    return VariantRequest(bench.program, fault, tuple(map(tuple, bench.test_inputs())), **kwargs)


# --- coverage ---------------------------------------------------------------


def fault_plan_for(fault: FaultDefinition) -> FaultPlan:
    """Standing (permanent, onset 0) instance of a reported fault.

    A decoder substitution with an unknown target is evaluated as decoding to
    an invalid opcode; any variant that never emits the faulty byte is immune
    either way.
    """
    kind = fault.kind
    if isinstance(kind, InstructionDecoderSub) and kind.to is None:
        kind = InstructionDecoderSub(kind.from_, 0)
    return FaultPlan([Fault(kind, Permanent(0))])


def estimate_masking_coverage(program: Program, config: DiversityConfig, fault: FaultDefinition, test_inputs) -> float:
    """Fraction of test inputs whose canonical output equals golden under the fault.

    Raises InfeasibleRegisterAllocation or LayoutOverflow when the config cannot
    be built for the program.
    """
    return _masked(program, config, fault, test_inputs) / len(test_inputs)


def _masked(program, config, fault, test_inputs, give_up_at: int = -1) -> int:
    """Count masked runs; stops early (returning a value <= give_up_at) once
    the count provably cannot exceed ``give_up_at``."""
    plan = fault_plan_for(fault)
    image = assemble(program, config)
    limit = watchdog_limit(program, test_inputs)
    masked = 0
    remaining = len(test_inputs)
    for inputs in test_inputs:
        remaining -= 1
        if canonical_output(program, config, inputs, plan, limit, image) == tuple(golden_run(program, inputs)):
            masked += 1
        elif masked + remaining <= give_up_at:
            return masked
    return masked


# --- candidate generation ---------------------------------------------------


def _code_end(program: Program, config: DiversityConfig) -> int:
    try:
        return assemble(program, config).code_range[1]
    except (InfeasibleRegisterAllocation, LayoutOverflow):
        return len(program.instructions) * INSTRUCTION_WORDS


def _family(name: str, program: Program, fault: FaultDefinition, base: DiversityConfig, rng: random.Random):
    kind = fault.kind
    d = base.dynamic
    if name == "register-exclusion":
        if isinstance(kind, RegisterStuckBit):
            yield base.with_static(excluded_registers=base.static_.excluded_registers | {kind.reg})
            used = sorted(program.registers_used())
            for extra in range(NUM_REGISTERS):
                if extra != kind.reg and extra in used:
                    yield base.with_static(excluded_registers=frozenset({kind.reg, extra}))
    elif name == "memory-gaps":
        for gap in itertools.count(max(1, d.gap_size + 1)):
            yield base.with_dynamic(gap_size=gap)
    elif name == "base-address":
        extent = data_extent(program, d.gap_size)
        yield base.with_dynamic(base_offset=mirror_base_offset(extent))
        for step in itertools.count(1):
            yield base.with_dynamic(base_offset=d.base_offset + step * 0x111)
            yield base.with_dynamic(base_offset=d.base_offset + step * 0x1000 + 0x80)
    elif name == "layout-randomization":
        if len(program.variables) > 1:
            for seed in itertools.count(1):
                yield base.with_dynamic(variable_order_seed=seed)
    elif name == "data-randomization":
        if program.reexpression:
            while True:
                yield base.with_dynamic(reexpr_key=rng.randrange(1, 1 << 32))
    elif name == "encoding-randomization":
        avoid = {kind.from_} if isinstance(kind, InstructionDecoderSub) else set()
        for seed in itertools.count(1):
            if not avoid & set(opcode_encoding(seed).values()):
                yield base.with_static(opcode_encoding_seed=seed)
    elif name == "nop-insertion":
        for n in itertools.count(base.static_.nop_count + 1):
            yield base.with_static(nop_count=n)


def _guided_families(program: Program, fault: FaultDefinition, base: DiversityConfig) -> tuple[str, ...]:
    kind = fault.kind
    if isinstance(kind, MemoryStuckBit):
        if kind.addr < _code_end(program, base):
            # code cell: only shifting the code can help
            return GUIDED[MemoryStuckBit][:1] + ("nop-insertion",) + GUIDED[MemoryStuckBit][1:]
    return GUIDED[type(kind)]


def candidates(request: VariantRequest):
    """Deterministic candidate stream: round-robin over the chosen families,
    then (guided mode only) seeded random configurations."""
    program, fault, base = request.program, request.fault, request.base_config
    rng = random.Random(f"{program.name}:{records.describe_kind(fault.kind)}")
    names = request.techniques or _guided_families(program, fault, base)
    streams = [_family(n, program, fault, base, rng) for n in names]
    seen = {base}
    live = list(streams)
    # guided mode leaves half the budget to the random tail
    quota = request.search_budget // 2 if request.techniques is None else request.search_budget
    emitted = 0
    while live and emitted < quota:
        for stream in list(live):
            config = next(stream, None)
            if config is None:
                live.remove(stream)
            elif config not in seen:
                seen.add(config)
                emitted += 1
                yield config
    if request.techniques is None:
        while True:
            config = random_config(rng, program)
            if config not in seen:
                seen.add(config)
                yield config


def _feasible(program: Program, config: DiversityConfig) -> bool:
    try:
        assemble(program, config)
    except (InfeasibleRegisterAllocation, LayoutOverflow):
        return False
    return True


def generate_variant(request: VariantRequest) -> VariantResponse:
    n = len(request.test_inputs)
    best = 0
    tried = 0
    for config in candidates(request):
        if tried >= request.search_budget:
            break
        tried += 1
        if not _feasible(request.program, config):
            continue
        # a candidate that cannot beat the best count so far is abandoned early;
        # the reported best coverage stays exact
        masked = _masked(request.program, config, request.fault, request.test_inputs, give_up_at=best)
        if masked / n >= request.coverage_threshold:
            return Generated(config, masked / n, tried)
        best = max(best, masked)
    return Failed(best / n, tried)


# --- wire format ------------------------------------------------------------


def request_to_dict(request: VariantRequest) -> dict:
    program = request.program
    bench = BENCHMARKS.get(program.name)
    d = {"program": program.name} if bench is not None and bench.program == program else {"program_text": program.text}
    d.update(
        fault=records.definition_to_dict(request.fault),
        coverage_threshold=request.coverage_threshold,
        test_inputs=[records.words_to_hex(v) for v in request.test_inputs],
        search_budget=request.search_budget,
        base_config=records.config_to_dict(request.base_config),
        techniques=None if request.techniques is None else list(request.techniques),
    )
    return d


def request_from_dict(d: dict) -> VariantRequest:
    try:
        if "program" in d:
            program = get_benchmark(d["program"]).program
        else:
            program = parse_program(d["program_text"])
        techniques = d.get("techniques")
        return VariantRequest(
            program=program,
            fault=records.definition_from_dict(d["fault"]),
            test_inputs=tuple(tuple(records.words_from_hex(v)) for v in d["test_inputs"]),
            coverage_threshold=float(d.get("coverage_threshold", DEFAULT_THRESHOLD)),
            search_budget=int(d.get("search_budget", DEFAULT_BUDGET)),
            base_config=records.config_from_dict(d.get("base_config", {})),
            techniques=None if techniques is None else tuple(techniques),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise records.RecordError(f"bad variant request: {exc}") from None


def response_to_dict(response: VariantResponse) -> dict:
    if isinstance(response, Generated):
        return {
            "result": "generated",
            "config": records.config_to_dict(response.config),
            "coverage": response.coverage,
            "configs_tried": response.configs_tried,
        }
    return {"result": "failed", "best_coverage": response.best_coverage, "configs_tried": response.configs_tried}


def response_from_dict(d: dict) -> VariantResponse:
    if d.get("result") == "generated":
        return Generated(records.config_from_dict(d["config"]), float(d["coverage"]), int(d["configs_tried"]))
    if d.get("result") == "failed":
        return Failed(float(d["best_coverage"]), int(d["configs_tried"]))
    raise records.RecordError(f"bad variant response {d!r}")


def _send(sock, record: dict) -> None:
    payload = records.dumps(record).encode()
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            raise ConnectionError("peer closed the connection mid-message")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def _recv(sock) -> dict:
    (length,) = struct.unpack(">I", _recv_exact(sock, 4))
    return records.loads(_recv_exact(sock, length).decode())


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        try:
            request = request_from_dict(_recv(self.request))
            reply = response_to_dict(generate_variant(request))
        except (records.RecordError, ValueError) as exc:
            reply = {"result": "error", "message": str(exc)}
        _send(self.request, reply)


class VariantServer(socketserver.TCPServer):
    allow_reuse_address = True

    def __init__(self, address=("127.0.0.1", 0)):
        super().__init__(address, _Handler)


def serve(host: str = "127.0.0.1", port: int = 0, max_requests: int | None = None, ready=None) -> None:
    with VariantServer((host, port)) as server:
        if ready is not None:
            ready(server.server_address)
        if max_requests is None:
            server.serve_forever()
        else:
            for _ in range(max_requests):
                server.handle_request()


def request_remote(address, request: VariantRequest, timeout: float = 60.0) -> VariantResponse:
    with socket.create_connection(address, timeout=timeout) as sock:
        _send(sock, request_to_dict(request))
        reply = _recv(sock)
    if reply.get("result") == "error":
        raise records.RecordError(reply.get("message", "server error"))
    return response_from_dict(reply)


__all__ = [
    "DEFAULT_BUDGET",
    "Failed",
    "Generated",
    "TECHNIQUES",
    "VariantRequest",
    "VariantResponse",
    "candidates",
    "default_request",
    "estimate_masking_coverage",
    "generate_variant",
    "request_remote",
    "serve",
]
