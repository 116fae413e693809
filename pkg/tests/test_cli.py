import json

import pytest

from ucplab import config as cfg
from ucplab.cli import json_text, main, run

SCAN_1D = ["--weight", "linear rho=(1,)", "--grid", "0:1:81", "--h", "0.4,0.2,0.1,0.05"]


def invoke(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def test_identity_dim2(tmp_path, capsys):
    assert invoke(tmp_path, "identity", "--dim", "2", "--json") == 0
    doc = json.loads(capsys.readouterr().out)
    certs = doc["result"]["certificates"]
    assert len(certs) == 3 and all(c["holds"] is True for c in certs)
    assert doc["seed"] == 0 and (tmp_path / "identity.json").exists()


def test_unknown_key(tmp_path, capsys):
    conf = tmp_path / "run.cfg"
    conf.write_text("command = identity\ndim = 2\nhh = 3\n")
    assert invoke(tmp_path, "identity", "--config", str(conf)) == 1
    assert "unknown key: hh" in capsys.readouterr().err


def test_missing_key_named(tmp_path, capsys):
    assert invoke(tmp_path, "scan", "--weight", "linear rho=(1,)", "--grid", "0:1:81") == 1
    assert "missing key: h" in capsys.readouterr().err


def test_scan_single_h(tmp_path):
    assert invoke(tmp_path, "scan", "--weight", "linear rho=(1,)", "--grid", "0:1:81", "--h", "0.2") == 1


def test_scan_csv_schema(tmp_path):
    assert invoke(tmp_path, "scan", *SCAN_1D) == 0
    lines = (tmp_path / "scan_scan.csv").read_text().splitlines()
    assert lines[0].startswith("# config_sha256=") and lines[1] == "# seed=0"
    assert lines[3].split(",")[:4] == ["op", "h", "sigma_min", "converged"]
    assert len(lines) == 4 + 4


def test_bracket_verdicts(tmp_path, capsys):
    assert invoke(tmp_path, "bracket", "--weight", "parab sign=+ c=1/2", "--box", "-1:1 x -1:1",
                  "--count", "30", "--json") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["result"]["bracket"]["classification"] in ("subelliptic", "limiting")
    assert "min_bracket" in doc["result"]["bracket"]
    # phi = x2 - 3 x1^2 gives a bracket of both signs on the variety
    rc = invoke(tmp_path, "bracket", "--weight", 'poly "x2 - 3*x1^2"', "--box", "-1:1 x -1:1", "--count", "40")
    assert rc == 2


def test_cauchy_csv_schema(tmp_path):
    conf = tmp_path / "c.cfg"
    conf.write_text(
        'command = cauchy\ngrid = "0:1:41"\nweight = \'poly "1 - x1"\'\ndelta = 0.5\n'
        'noise = 1e-1, 1e-2, 1e-3, 1e-4\nu_true = "sin(x1)"\ngamma_faces = "x1-"\nq = 1\ntrials = 2\n')
    assert invoke(tmp_path, "cauchy", "--config", str(conf)) == 0
    lines = (tmp_path / "cauchy_trials.csv").read_text().splitlines()
    assert lines[3] == "noise,trial,F,M,error,converged"


def test_caccioppoli_and_ucp(tmp_path):
    assert invoke(tmp_path, "caccioppoli", "--grid", "-1:1:41 x -1:1:41", "--r", "0.8", "--rho", "0.4",
                  "--utrue", "x1^3") == 0
    assert invoke(tmp_path, "ucp", "--grid", "0:1:61", "--omega", "0.4:0.6") == 0
    assert invoke(tmp_path, "ucp", "--grid", "0:1:61", "--omega", "0.99:1.0") == 1


def test_config_round_trip():
    text = ('command = scan\nweight = "linear rho=(1,)"\ngrid = "0:1:81"\nh = 0.4, 0.2, 0.1, 0.05\n'
            'seed = 11\nop = both\n')
    c = cfg.load(text)
    again = cfg.load(c.to_text())
    assert again.params == c.params and again.seed == c.seed == 11
    assert again.sha256() == c.sha256()


def test_output_embeds_config(tmp_path):
    assert invoke(tmp_path, "scan", *SCAN_1D, "--seed", "4") == 0
    doc = json.loads((tmp_path / "scan.json").read_text())
    c = cfg.load(doc["config"])
    assert c.command == "scan" and c.seed == 4 and c["h"] == (0.4, 0.2, 0.1, 0.05)
    assert c.sha256() == doc["config_sha256"]


@pytest.mark.parametrize("argv", [
    ["identity", "--dim", "3"],
    ["scan", *SCAN_1D, "--op", "both"],
])
def test_byte_identical_outputs(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([*argv, "--out", str(a)]) == main([*argv, "--out", str(b)])
    for pa in sorted(a.iterdir()):
        pb = b / pa.name
        if pa.suffix == ".json":
            da, db = json.loads(pa.read_text()), json.loads(pb.read_text())
            da.pop("generated_at"), db.pop("generated_at")
            assert da == db
        else:
            assert pa.read_bytes() == pb.read_bytes()


def test_json_without_timestamp_is_stable():
    c = cfg.load("command = identity\ndim = 2\n")
    _, out = run(c)
    assert json_text(c, out, timestamp=False) == json_text(c, out, timestamp=False)


def test_bad_seed(tmp_path):
    assert invoke(tmp_path, "identity", "--dim", "2", "--seed", "-1") == 1
