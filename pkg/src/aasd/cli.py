"""Command-line entry point: ``aasd VERB SPEC [--seed N] [--out PATH]``.

Every verb reads a JSON spec file. Results are JSON on stdout (or in
``--out``); ``campaign`` writes ``trials.csv`` and ``summary.json`` into the
``--out`` directory. Exit status is 0 on success, 1 for a bad spec and 2
for I/O failures.
"""

from __future__ import annotations

import argparse
import sys

from . import records
from .benchmarks import get_benchmark
from .diversity import DEFAULT_CONFIG
from .harness import CampaignSpec, SpecError, emit_report, run_campaign, run_trial
from .isa import AssemblyError
from .machine import GoldenRunFailed, assemble, golden_run, run
from .redundancy import Consensus, NmrConfig, ReplicaFailure, ReplicaSlot, execute_replicas, vote
from .selftest import CoreContext, run_self_tests

EXIT_OK, EXIT_SPEC, EXIT_IO = 0, 1, 2


def _load(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = records.loads(fh.read())
    if not isinstance(data, dict):
        raise records.RecordError(f"{path}: top level must be an object")
    return data


def _emit(payload, out: str | None) -> None:
    text = records.dumps(payload)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _inputs(spec: dict) -> list[int]:
    return records.words_from_hex(spec.get("inputs", []))


def _config(spec: dict):
    return records.config_from_dict(spec["config"]) if "config" in spec else DEFAULT_CONFIG


def _plan(spec: dict):
    return records.plan_from_dict(spec.get("faults", {}))


def _output(value):
    if isinstance(value, ReplicaFailure):
        return {"status": value.status, "reason": value.reason}
    return records.words_to_hex(value)


def cmd_golden(spec: dict, args) -> dict:
    program = get_benchmark(spec["benchmark"]).program
    return {"benchmark": program.name, "inputs": records.words_to_hex(_inputs(spec)),
            "outputs": records.words_to_hex(golden_run(program, _inputs(spec)))}


def cmd_run(spec: dict, args) -> dict:
    program = get_benchmark(spec["benchmark"]).program
    outcome = run(assemble(program, _config(spec)), _inputs(spec), _plan(spec), int(spec.get("cycle_limit", 100_000)))
    return {
        "status": outcome.status,
        "reason": outcome.reason,
        "cycles": outcome.cycles,
        "outputs": None if outcome.outputs is None else records.words_to_hex(outcome.outputs),
    }


def cmd_vote(spec: dict, args) -> dict:
    program = get_benchmark(spec["benchmark"]).program
    nmr = NmrConfig(int(spec.get("n", 3)), spec.get("m"))
    configs = spec.get("configs", {})
    slots = [ReplicaSlot(c, program, records.config_from_dict(configs[str(c)]) if str(c) in configs else DEFAULT_CONFIG)
             for c in range(nmr.n)]
    plan = _plan(spec)
    outputs = execute_replicas(program, _inputs(spec), slots, {plan.core: plan} if plan else {})
    result = vote(outputs, nmr.m)
    payload = {"outputs": {str(c): _output(v) for c, v in outputs.items()}}
    if isinstance(result, Consensus):
        payload.update(result="consensus", value=records.words_to_hex(result.value),
                       dissenters=sorted(result.dissenters))
    else:
        payload["result"] = "no-majority"
    return payload


def cmd_selftest(spec: dict, args) -> dict:
    ctx = CoreContext(_plan(spec), encoding_seed=spec.get("encoding_seed"))
    report = run_self_tests(ctx)
    return {
        "found": [records.definition_to_dict(d) for d in report.found],
        "tests_run": report.tests_run,
        "crashed": report.crashed,
        "inconclusive": report.inconclusive,
    }


def _campaign_spec(spec: dict, args) -> CampaignSpec:
    if args.seed is not None:
        spec = {**spec, "seed": args.seed}
    return CampaignSpec.from_dict(spec)


def cmd_campaign(spec: dict, args):
    campaign = _campaign_spec(spec, args)
    summary, trials = run_campaign(campaign)
    paths = emit_report(summary, trials, args.out or ".")
    return {"written": paths, "summary": summary.to_dict()}


def cmd_recover(spec: dict, args) -> dict:
    campaign = _campaign_spec(spec, args)
    record = run_trial(campaign, int(spec.get("trial", 0)))
    return {
        "trial": record.trial,
        "fault": records.fault_to_dict(record.fault),
        "onset": record.onset,
        "rounds_to_detect": record.rounds_to_detect,
        "dynamic_attempts": record.dynamic_attempts,
        "final_status": record.final_status,
        "variant_config": None if record.variant_config is None else record.variant_config.to_dict(),
        "phases": record.phases,
        "votes": record.votes,
        "events": record.events,
    }


def cmd_serve(spec: dict, args):
    from .server import serve

    def ready(address):
        print(f"serving variant requests on {address[0]}:{address[1]}", file=sys.stderr, flush=True)

    max_requests = spec.get("max_requests")
    serve(spec.get("host", "127.0.0.1"), int(spec.get("port", 0)),
          None if max_requests is None else int(max_requests), ready)
    return None


COMMANDS = {
    "golden": cmd_golden,
    "run": cmd_run,
    "vote": cmd_vote,
    "selftest": cmd_selftest,
    "campaign": cmd_campaign,
    "recover": cmd_recover,
    "serve": cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aasd", description="Adaptive software diversity simulator")
    sub = parser.add_subparsers(dest="verb", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("spec", help="JSON spec file")
        p.add_argument("--seed", type=int, default=None, help="override the spec's seed")
        p.add_argument("--out", default=None, help="output file (directory for campaign)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = _load(args.spec)
        payload = COMMANDS[args.verb](spec, args)
        if payload is not None and args.verb != "campaign":
            _emit(payload, args.out)
        elif payload is not None:
            sys.stdout.write(records.dumps(payload))
    except OSError as exc:
        print(f"aasd: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (records.RecordError, SpecError, AssemblyError, GoldenRunFailed, KeyError, TypeError, ValueError) as exc:
        print(f"aasd: spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
