import csv
import io
import json
from collections import Counter

import pytest

from aasd.faults import FaultSpace
from aasd.harness import (
    CSV_COLUMNS,
    MASKED,
    RECOVERED_STATIC,
    SINGLE_SHOT,
    STATUSES,
    UNDETECTED,
    CampaignSpec,
    SpecError,
    csv_text,
    emit_report,
    run_campaign,
    run_trial,
    summarize,
)

USED = (1, 3, 4, 5, 6)


def spec(**kw):
    base = dict(benchmark="bitcount", fault_space=FaultSpace(kinds=("register",), registers=USED), seed=3)
    base.update(kw)
    return CampaignSpec(**base)


def test_benign_fault_is_undetected():
    # r15 is never touched by bitcount
    record = run_trial(spec(fault_space=FaultSpace(registers=(15,))), 0)
    assert record.final_status == UNDETECTED
    assert record.dynamic_attempts == 0 and record.phases == ["normal"] and record.rounds_to_detect is None


def test_transients_never_leave_normal():
    space = FaultSpace(kinds=("register",), registers=USED, bits=(0, 1), persistence="transient",
                       transient_cycles=(0, 300))
    _, records = run_campaign(spec(fault_space=space, trials=40))
    assert all(r.phases == ["normal"] for r in records)
    detected = [r for r in records if r.detected]
    assert detected and all(r.final_status == MASKED for r in detected)


def test_register_fault_recovers_through_exclusion():
    _, records = run_campaign(spec(trials=6))
    static = [r for r in records if r.final_status == RECOVERED_STATIC]
    assert static
    for r in static:
        assert r.variant_config.static_.excluded_registers == {r.fault.kind.reg}
        assert r.phases == ["normal", "dynamic-adaptation", "self-testing", "awaiting-variant", "normal"]
        assert r.consensus_violations == 0 and r.identification_violations == 0


def test_single_trial_summary():
    s = spec(trials=1)
    summary, records = run_campaign(s)
    assert records == [run_trial(s, 0)]
    assert summary.trials == 1 and summary.counts[records[0].final_status] == 1


def test_prefix_determinism():
    small = run_campaign(spec(trials=4))[1]
    large = run_campaign(spec(trials=8))[1]
    assert [r.csv_row() for r in large[:4]] == [r.csv_row() for r in small]


def test_csv_shapes():
    assert csv_text([]) == ",".join(CSV_COLUMNS) + "\n"
    _, records = run_campaign(spec(trials=1))
    assert len(csv_text(records).splitlines()) == 2


def test_summary_recomputed_from_csv(tmp_path):
    summary, records = run_campaign(spec(trials=10, fault_space=FaultSpace(kinds=("register", "address-decoder"))))
    csv_path, json_path = emit_report(summary, records, str(tmp_path))
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    with open(json_path) as fh:
        saved = json.load(fh)
    counts = Counter(row["final_status"] for row in rows)
    assert saved["trials"] == len(rows)
    for status in STATUSES:
        assert saved["fractions"][status] == counts[status] / len(rows)
    detected = [row for row in rows if row["rounds_to_detect"] != ""]
    expected = (sum(row["final_status"] == "recovered-dynamic" for row in detected) / len(detected)
                if detected else None)
    assert saved["recovered_dynamic_among_detected"] == expected


def test_single_shot_mode():
    summary, records = run_campaign(spec(trials=10, mode=SINGLE_SHOT))
    assert all(r.phases == ["normal"] for r in records)
    assert summary.consensus_violations == 0 and summary.identification_violations == 0


def test_spec_roundtrip_and_errors():
    s = spec(trials=7, seed=11)
    assert CampaignSpec.from_dict(json.loads(json.dumps(s.to_dict()))) == s
    with pytest.raises(SpecError):
        CampaignSpec.from_dict({"benchmark": "nope"})
    with pytest.raises(SpecError):
        spec(trials=0)
    with pytest.raises(SpecError):
        CampaignSpec.from_dict({"benchmark": "bitcount", "thresholds": {"threshold_dynamic": 0}})


def test_empty_summary():
    summary = summarize([])
    assert summary.recovered_dynamic_among_detected is None
    assert summary.to_dict()["counts"] == {s: 0 for s in STATUSES}


def test_report_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(summarize([]), [], str(blocker / "sub"))


def test_csv_is_plain_text():
    _, records = run_campaign(spec(trials=3))
    rows = list(csv.reader(io.StringIO(csv_text(records))))
    assert rows[0] == list(CSV_COLUMNS) and [r[0] for r in rows[1:]] == ["0", "1", "2"]
