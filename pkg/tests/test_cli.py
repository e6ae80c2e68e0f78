import json
import socket
import threading
import time

from aasd import records
from aasd.cli import EXIT_IO, EXIT_OK, EXIT_SPEC, main
from aasd.faults import FaultDefinition, RegisterStuckBit
from aasd.server import Generated, default_request, request_remote


def write(tmp_path, payload, name="spec.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def call(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_golden(tmp_path, capsys):
    code, out = call(capsys, "golden", write(tmp_path, {"benchmark": "bitcount", "inputs": ["0xff"]}))
    assert code == EXIT_OK and json.loads(out.out)["outputs"] == ["0x00000008"]


def test_run_with_fault_to_file(tmp_path, capsys):
    spec = {
        "benchmark": "bitcount",
        "inputs": ["0x0"],
        "faults": {"faults": [{"kind": "memory", "addr": "0x1001", "bit": 31, "stuck_value": 1}]},
    }
    target = tmp_path / "out.json"
    code, _ = call(capsys, "run", write(tmp_path, spec), "--out", str(target))
    result = json.loads(target.read_text())
    assert code == EXIT_OK and result["status"] == "completed"


def test_vote_flags_faulty_core(tmp_path, capsys):
    spec = {
        "benchmark": "bitcount",
        "inputs": ["0x0f0f"],
        "faults": {"core": 1, "faults": [{"kind": "register", "reg": 5, "bit": 4, "stuck_value": 1, "core": 1}]},
    }
    code, out = call(capsys, "vote", write(tmp_path, spec))
    result = json.loads(out.out)
    assert code == EXIT_OK and result["result"] == "consensus" and result["dissenters"] == [1]


def test_selftest(tmp_path, capsys):
    spec = {"faults": {"faults": [{"kind": "address-decoder", "line": 5, "mode": "flip"}]}}
    code, out = call(capsys, "selftest", write(tmp_path, spec))
    found = json.loads(out.out)["found"]
    assert code == EXIT_OK and [(f["kind"], f["line"], f["mode"]) for f in found] == [("address-decoder", 5, "flip")]


def test_campaign_and_recover(tmp_path, capsys):
    spec = {"benchmark": "bitcount", "trials": 3, "seed": 2,
            "fault_space": {"kinds": ["register"], "registers": [1, 5]}}
    path = write(tmp_path, spec)
    code, out = call(capsys, "campaign", path, "--out", str(tmp_path / "run"))
    assert code == EXIT_OK
    assert (tmp_path / "run" / "trials.csv").read_text().count("\n") == 4
    assert json.loads((tmp_path / "run" / "summary.json").read_text())["trials"] == 3
    code, out = call(capsys, "recover", path, "--seed", "2")
    assert code == EXIT_OK and json.loads(out.out)["trial"] == 0


def test_bad_spec_and_missing_file(tmp_path, capsys):
    code, out = call(capsys, "golden", write(tmp_path, {"benchmark": "nope"}))
    assert code == EXIT_SPEC and "spec error" in out.err
    code, _ = call(capsys, "golden", write(tmp_path, [1, 2]))
    assert code == EXIT_SPEC
    code, _ = call(capsys, "golden", str(tmp_path / "absent.json"))
    assert code == EXIT_IO


def test_serve_answers_one_request(tmp_path, capsys):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    path = write(tmp_path, {"port": port, "max_requests": 1})
    worker = threading.Thread(target=main, args=(["serve", path],))
    worker.start()
    request = default_request("bitcount", FaultDefinition(RegisterStuckBit(5, 3, 1)))
    for _ in range(50):
        try:
            response = request_remote(("127.0.0.1", port), request)
            break
        except ConnectionRefusedError:
            time.sleep(0.1)
    worker.join(10)
    assert isinstance(response, Generated)
    assert records.config_to_dict(response.config)["excluded_registers"] == [5]
