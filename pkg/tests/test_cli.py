import json
import os
import subprocess
import sys

import pytest

from fbdomain.cli import main
from fbdomain.conjugacy import ConjugacyData
from fbdomain.jets import JetMap, coeff_norm

SHEAR = {"k": 2, "diag": [0.5, 0.2], "terms": [[2, [2, 0], 1.0, 0.0]]}


def write_config(path, **sections):
    cfg = {"seed": 0,
           "sequence": {"kind": "perturb", "N": 30, "epsilon": 0.01, "n_samples": 2000,
                        "F": SHEAR},
           "normalization": {"n_samples": 2000},
           "diagnostics": {"grid_n": 5, "R": [1, 10], "slice": {"px": 16, "max_iter": 60}}}
    for key, value in sections.items():
        cfg[key] = {**cfg.get(key, {}), **value} if isinstance(value, dict) else value
    path.write_text(json.dumps(cfg))
    return str(path)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "cfg.json")
    assert main(["solve", "--config", cfg, "--out", str(root / "art")]) == 0
    return root, cfg


def test_solve_outputs(solved):
    root, _ = solved
    art = root / "art"
    for name in ("conjugacy.json", "boundedness.csv", "residuals.csv", "normalization.json",
                 "sequence.json", "manifest.json"):
        assert (art / name).exists(), name
    manifest = json.loads((art / "manifest.json").read_text())
    assert manifest["summary"]["max_residual"] <= 1e-9
    data = ConjugacyData.loads((art / "conjugacy.json").read_text())
    assert data.residuals.max() <= 1e-9


def test_solve_reproducible(solved, tmp_path):
    root, cfg = solved
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    for name in ("conjugacy.json", "boundedness.csv", "residuals.csv", "normalization.json",
                 "sequence.json", "manifest.json"):
        assert (tmp_path / name).read_bytes() == (root / "art" / name).read_bytes(), name


def test_diagnose(solved, capsys):
    root, cfg = solved
    code, out, _ = run(["diagnose", "--config", cfg, "--artifacts", str(root / "art")], capsys)
    assert code == 0
    result = json.loads(out)
    assert result["pass"] and result["convergence"]["ratio"] < 1
    art = root / "art"
    assert (art / "convergence.csv").read_text().startswith("n,sup_delta,ratio")
    cert = json.loads((art / "surjectivity.json").read_text())
    assert [c["R"] for c in cert["certificates"]] == [1, 10]
    assert (art / "slice.ppm").read_bytes().startswith(b"P6")


def test_render(solved, capsys, tmp_path):
    root, _ = solved
    out_path = tmp_path / "s.ppm"
    code, out, _ = run(["render", "--artifacts", str(root / "art"), "--window=-1,1,-1,1",
                        "--px", "12", "--out", str(out_path)], capsys)
    assert code == 0
    counts = json.loads(out)
    assert counts["attracted"] + counts["escaped"] + counts["undecided"] == 144
    assert out_path.read_bytes().split(b"\n")[2] == b"12 12"


def test_stale_artifacts(solved, tmp_path, capsys):
    root, _ = solved
    other = write_config(tmp_path / "other.json", seed=5)
    code, _, err = run(["diagnose", "--config", other, "--artifacts", str(root / "art")],
                       capsys)
    assert code == 50
    assert json.loads(err)["error"] == "StaleArtifactError"


def test_corrupted_artifact(solved, tmp_path, capsys):
    root, _ = solved
    broken = tmp_path / "art"
    broken.mkdir()
    for f in (root / "art").iterdir():
        (broken / f.name).write_bytes(f.read_bytes())
    with open(broken / "residuals.csv", "a") as fh:
        fh.write("tampered\n")
    code, out, _ = run(["check", "--artifacts", str(broken)], capsys)
    assert code == 51
    report = json.loads(out)
    assert report["integrity"]["details"]["files"] == ["residuals.csv"]


def test_autonomous_linear_config(tmp_path, capsys):
    cfg = write_config(tmp_path / "lin.json",
                       sequence={"kind": "autonomous", "N": 20,
                                 "F": {"k": 2, "diag": [0.5, 0.3]}})
    code, _, _ = run(["solve", "--config", cfg, "--out", str(tmp_path / "a")], capsys)
    assert code == 0
    data = ConjugacyData.loads((tmp_path / "a" / "conjugacy.json").read_text())
    for x in data.X:
        assert coeff_norm(JetMap(x.coef - JetMap.identity(2, x.d).coef)) == 0


def test_random_ua_and_file_configs(tmp_path, capsys):
    cfg = write_config(tmp_path / "ua.json",
                       sequence={"kind": "random_ua", "N": 20, "k": 2, "d": 2})
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "ua")], capsys)[0] == 0
    cfg2 = write_config(tmp_path / "file.json",
                        sequence={"kind": "file", "path": "ua/sequence.json"})
    assert run(["solve", "--config", cfg2, "--out", str(tmp_path / "f")], capsys)[0] == 0
    assert ((tmp_path / "f" / "conjugacy.json").read_bytes()
            == (tmp_path / "ua" / "conjugacy.json").read_bytes())


@pytest.mark.parametrize("sequence, field", [
    ({"kind": "random_ua", "a": 0.9, "b": 0.2}, "sequence.a/b"),
    ({"kind": "nope"}, "sequence.kind"),
    ({"N": 0}, "sequence.N"),
    ({"colour": 1}, "sequence.colour"),
])
def test_config_validation(tmp_path, capsys, sequence, field):
    cfg = write_config(tmp_path / "bad.json", sequence=sequence)
    code, _, err = run(["solve", "--config", cfg, "--out", str(tmp_path / "x")], capsys)
    assert code == 2
    assert json.loads(err)["details"]["field"] == field


def test_invalid_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": 0,\n  "sequence": {"N": 5,}\n}')
    code, _, err = run(["solve", "--config", str(path), "--out", str(tmp_path / "x")], capsys)
    assert code == 2
    assert json.loads(err)["details"]["line"] == 3


def test_missing_config(tmp_path, capsys):
    code, _, err = run(["solve", "--config", str(tmp_path / "none.json"), "--out",
                        str(tmp_path)], capsys)
    assert code == 2 and "cannot access" in json.loads(err)["message"]


def test_horizon_too_short(tmp_path, capsys):
    cfg = write_config(tmp_path / "short.json", sequence={"N": 10},
                       diagnostics={"R": [1e12]})
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "s")], capsys)[0] == 0
    code, _, err = run(["diagnose", "--config", cfg, "--artifacts", str(tmp_path / "s")],
                       capsys)
    assert code == 32
    assert json.loads(err)["error"] == "HorizonTooShortError"


def test_check_single_suite(capsys):
    code, out, err = run(["check", "--suite", "bounded_orbit"], capsys)
    assert code == 0
    report = json.loads(out)
    assert [s["name"] for s in report["suites"]] == ["bounded_orbit"]
    assert "[PASS] bounded_orbit" in err


def test_check_unknown_suite(capsys):
    code, _, err = run(["check", "--suite", "nope"], capsys)
    assert code == 2


def test_module_entry_with_threads():
    env = {**os.environ, "FBDOMAIN_THREADS": "1"}
    out = subprocess.run([sys.executable, "-m", "fbdomain", "--version"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "0.1.0"
