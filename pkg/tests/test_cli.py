import json

from pytest import approx, fixture

from cli import EXIT_CONFIG, EXIT_GUARD, EXIT_OK, main
from codebooks import library_from_codewords
from config import settings
from conftest import HAND_A, HAND_B, balanced_params

NOISELESS = {"preset": "noiseless-pair"}
UNIFORM_AUX = {"p_u": [1.0], "p_x_given_u": [[0.5, 0.5]], "p_y_given_u": [[0.5, 0.5]]}
PACKING = {
    "subcommand": "packing",
    "library": {"x_kernels": [[[0.5, 0.5]]], "y_kernels": [[[0.5, 0.5]]], "rates1": [0.125], "rates2": [0.125]},
    "n_list": [8],
}


@fixture
def write_config(tmp_path):
    def write(data, name="config.json"):
        path = tmp_path / name
        path.write_text(data if isinstance(data, str) else json.dumps(data))
        return str(path)

    return write


def error_body(capsys):
    return json.loads(capsys.readouterr().out)["error"]


def test_selftest_passes(tmp_path):
    out = tmp_path / "reports"
    assert main(["selftest", "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "selftest_seed0.json").read_text())
    assert report["seed"] == 0
    assert report["config"]["subcommand"] == "selftest"
    assert all(c["passed"] for c in report["checks"])


def test_malformed_kernel_names_the_row(write_config, capsys, tmp_path):
    kernel = [[[0.5, 0.5], [0.5, 0.5]], [[0.5, 0.47], [0.5, 0.5]]]
    path = write_config({"subcommand": "exponent", "channel": {"kernel": kernel}, "aux": UNIFORM_AUX, "rates": [[0.1, 0.1]]})
    assert main(["exponent", "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG
    body = error_body(capsys)
    assert body["code"] == "CONFIG_ERROR"
    assert "kernel row (x=1, y=0)" in body["details"]
    assert body["details"].startswith("channel")


def test_invalid_json_reports_position(write_config, capsys, tmp_path):
    path = write_config('{"subcommand": "exponent",\n  "rates": [}')
    assert main(["exponent", "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "line 2" in error_body(capsys)["details"]


def test_config_required_and_consistent(write_config, capsys, tmp_path):
    assert main(["packing", "--out", str(tmp_path)]) == EXIT_CONFIG
    capsys.readouterr()
    path = write_config(PACKING)
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG
    capsys.readouterr()
    assert main(["selftest", "--seed", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_packing_is_byte_identical_across_runs(write_config, tmp_path):
    path = write_config(PACKING)
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["packing", "--config", path, "--seed", "5", "--out", str(first)]) == EXIT_OK
    assert main(["packing", "--config", path, "--seed", "5", "--out", str(second)]) == EXIT_OK
    for name in ("packing_seed5.json", "packing_seed5.csv", "library_n8_seed5.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_guard_exit_code(write_config, capsys, monkeypatch, tmp_path):
    monkeypatch.setattr(settings, "audit_guard", 1.0)
    path = write_config(PACKING)
    assert main(["packing", "--config", path, "--out", str(tmp_path)]) == EXIT_GUARD
    assert error_body(capsys)["code"] == "GUARD_EXCEEDED"


def test_decode_from_library_file(write_config, tmp_path):
    lib = library_from_codewords(balanced_params(6, (1 / 6,), (1 / 6,)), HAND_A, HAND_B)
    lib_path = write_config(lib.to_json(), "library.json")
    path = write_config({
        "subcommand": "decode",
        "channel": NOISELESS,
        "library_file": lib_path,
        "message": [0, 1, 0, 0],
        "decoder": {"eta": 0.05, "etaSchedule": "constant"},
    })
    assert main(["decode", "--config", path, "--out", str(tmp_path), "--verify"]) == EXIT_OK
    report = json.loads((tmp_path / "decode_seed0.json").read_text())
    assert report["results"]["output"]["verdict"] == "message"
    assert report["results"]["output"]["message"] == [0, 1, 0, 0]
    assert any(c["name"] == "verify:library_file" and c["passed"] for c in report["checks"])


def test_exponent_run_writes_table(write_config, tmp_path):
    path = write_config({
        "subcommand": "exponent",
        "channel": NOISELESS,
        "aux": UNIFORM_AUX,
        "rates": [[0.5, 0.5], [0.3, 0.2]],
        "solver": {"restarts": 2},
        "expect": "interior-positive",
    })
    assert main(["exponent", "--config", path, "--out", str(tmp_path)]) == EXIT_OK
    rows = (tmp_path / "exponent_seed0.csv").read_text().strip().splitlines()
    assert rows[0].startswith("r1,r2,interior,value")
    assert len(rows) == 3
    report = json.loads((tmp_path / "exponent_seed0.json").read_text())
    assert report["results"]["exponents"][0]["result"]["value"] == approx(0.5, abs=1e-6)
