import csv
import io
import json
import subprocess
import sys

import pytest

from superpaths import cli


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def parse(text):
    head, body = text.split("\n", 1)
    assert head.startswith("# ")
    return json.loads(head[2:]), list(csv.DictReader(io.StringIO(body)))


# catalog --------------------------------------------------------------------

def test_no_arguments_prints_catalog(capsys):
    code, out, _ = run([], capsys)
    assert code == 0
    for name in cli.SCHEMAS:
        assert f"  {name}: " in out


def test_json_catalog(capsys):
    code, out, _ = run(["list", "--format", "json"], capsys)
    cat = json.loads(out)
    assert code == 0 and set(cat) == set(cli.SCHEMAS)
    assert cat["witten-index"]["params"]["h"]["choices"] == ["quad", "cos", "qcos2"]
    assert cat["euler-char"]["params"]["paths"]["default"] == 20000


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as e:
        cli.main(["nonsense"])
    assert e.value.code != 0


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "superpaths.cli", "list"], capture_output=True, text=True)
    assert r.returncode == 0 and "selftest" in r.stdout


# configuration ----------------------------------------------------------------

def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# index density\nm = 2\ncurvature=random\nseed = 3\n")
    code, out, _ = run(["index-density", "--config", str(cfg), "--seed", "4"], capsys)
    meta, rows = parse(out)
    assert code == 0
    assert meta["params"]["m"] == 2 and meta["seed"] == 4
    assert json.loads(rows[0]["param_json"])["curvature"] == "random"


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("m=2\nbogus=1\n")
    code, _, err = run(["index-density", "--config", str(cfg)], capsys)
    assert code == 2 and "bogus" in err


def test_malformed_config_line_rejected(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("m 2\n")
    assert run(["index-density", "--config", str(cfg)], capsys)[0] == 2


@pytest.mark.parametrize("argv", [["witten-index", "--paths", "0"], ["witten-index", "--t", "1,-2"],
                                  ["index-density", "--m", "3"], ["euler-char", "--surface", "klein"],
                                  ["witten-index", "--routes", "mc"]])
def test_invalid_values_are_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2 and "usage error" in err


def test_missing_config_file_is_usage_error(tmp_path, capsys):
    assert run(["selftest", "--config", str(tmp_path / "none.cfg")], capsys)[0] == 2


# experiments -------------------------------------------------------------------------

def test_witten_index_example(capsys):
    code, out, _ = run(["witten-index", "--h", "quad", "--t", "0.5,1,2", "--seed", "7"], capsys)
    meta, rows = parse(out)
    assert code == 0 and len(rows) == 3
    for r in rows:
        assert r["pass"] == "1" and r["stderr"] and float(r["oracle"]) == 1.0
        assert abs(float(r["estimate"]) - 1.0) <= 3 * float(r["stderr"])
        assert json.loads(r["param_json"])["n_paths"] == 20000
    assert list(rows[0]) == cli.COLUMNS


def test_witten_index_grid_route(capsys):
    code, out, _ = run(["witten-index", "--h", "cos", "--routes", "grid", "--t", "1"], capsys)
    _, rows = parse(out)
    assert code == 0 and abs(float(rows[0]["estimate"])) < 1e-6 and rows[0]["stderr"] == ""


def test_euler_char_row_has_stderr(capsys):
    code, out, _ = run(["euler-char", "--surface", "torus", "--paths", "500", "--steps", "20"], capsys)
    _, rows = parse(out)
    assert code == 0 and rows[0]["stderr"] != "" and float(rows[0]["oracle"]) == 0.0


def test_morse_rows(capsys):
    code, out, _ = run(["morse", "--h", "cos", "--m", "2", "--u", "1"], capsys)
    _, rows = parse(out)
    assert code == 0 and all(r["pass"] == "1" for r in rows)


def test_selftest_passes(capsys):
    code, out, _ = run(["selftest"], capsys)
    _, rows = parse(out)
    assert code == 0 and len(rows) >= 10 and all(r["pass"] == "1" for r in rows)


def test_supertime_subcommand(capsys):
    code, out, _ = run(["supertime", "--K", "1", "--functions", "5", "--degree", "3"], capsys)
    _, rows = parse(out)
    assert code == 0 and any(r["experiment"] == "supertime.evolution_identity" for r in rows)


def test_failed_assertion_exits_one(capsys):
    # 50 bridges cannot meet a 0.001% band
    code, _, _ = run(["mehler", "--paths", "50", "--steps", "10", "--rel-tol", "1e-5"], capsys)
    assert code == 1


@pytest.mark.parametrize("argv", [["supertime", "--m", "8"], ["witten-index", "--paths", "100000000"]])
def test_budget_diagnostic(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2 and "budget" in err


# reproducibility --------------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ["witten-index", "--h", "cos", "--paths", "2000", "--steps", "50", "--seed", "3"],
    ["euler-char", "--paths", "1000", "--steps", "20", "--seed", "3"],
    ["mehler", "--paths", "2000", "--steps", "20", "--seed", "3"],
    ["index-density", "--curvature", "random", "--seed", "3"],
])
def test_rerun_is_byte_identical(argv, tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    c1, _, _ = run(argv + ["--output", str(a)], capsys)
    c2, _, _ = run(argv + ["--output", str(b)], capsys)
    assert c1 == c2
    assert a.read_bytes() == b.read_bytes()


def test_worker_count_does_not_change_output(tmp_path, capsys):
    argv = ["witten-index", "--paths", "2000", "--steps", "50", "--t", "0.5,1"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(argv + ["--output", str(a)], capsys)
    run(argv + ["--output", str(b), "--workers", "2"], capsys)
    assert a.read_bytes() == b.read_bytes()
