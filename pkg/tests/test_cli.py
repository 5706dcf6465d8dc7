import textwrap
from pathlib import Path

import pytest

from stochlab.cli import main
from stochlab.config import ENV_OUT, ConfigError, load_config, parse_fiber, parse_lambdas

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


SMALL = """
    [run]
    suites = verdicts, feller
    lambda = 1

    [manifold:E2]
    dim = 2
    profile = euclidean
    r_max = 64
"""


def test_load_and_overrides(tmp_path):
    p = write(tmp_path, SMALL)
    cfg = load_config(p, {"seed": 5, "lambda": "0.5, 2", "out": str(tmp_path / "o")})
    assert cfg.seed == 5 and cfg.lambdas == (0.5, 2.0)
    assert cfg.out == str(tmp_path / "o")
    assert "E2" in cfg.manifolds


def test_out_dir_precedence(tmp_path, monkeypatch):
    p = write(tmp_path, SMALL)
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "env"))
    assert Path(load_config(p).out) == tmp_path / "env"
    p = write(tmp_path, SMALL.replace("lambda = 1", "lambda = 1\n    out = here"))
    assert Path(load_config(p).out) == tmp_path / "here"
    monkeypatch.delenv(ENV_OUT)


@pytest.mark.parametrize("text, key", [
    ("[run]\nsuites = verdicts, nope\n", "suites"),
    ("[run]\nsuites = verdicts\n[manifold:X]\ndim = two\nprofile = euclidean\n", "dim"),
    ("[run]\nsuites = verdicts\n[manifold:X]\ndim = 2\nprofile = euclidean\ncolour = red\n",
     "colour"),
    ("[run]\nsuites = verdicts\nlambda = 1, -2\n", "lambda"),
    ("[run]\nsuites = submersion\n[submersion:S]\nbase = missing\nfiber = cycle(3)\n", "base"),
])
def test_errors_name_file_section_and_key(tmp_path, text, key):
    p = tmp_path / "bad.ini"
    p.write_text(text)
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    msg = str(exc.value)
    assert str(p) in msg and key in msg


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_parse_helpers():
    assert parse_lambdas("1, 0.5", "x") == (1.0, 0.5)
    assert parse_fiber("cycle(4)", "x").n == 4
    assert parse_fiber("path(2)", "x").n == 2
    with pytest.raises(ConfigError):
        parse_fiber("torus(3)", "x")


def test_verdict_command_writes_outputs(tmp_path, capsys):
    p = write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["verdict", "--config", str(p), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "E2@1.Parabolic.outcome = Holds" in text
    assert (out / "verdicts.csv").read_text().startswith("model,property,outcome")
    assert (out / "report.txt").exists()


def test_strict_inconclusive_exit_code(tmp_path):
    rc = main(["verdict", "--config", str(CONFIGS / "si_strict.ini"), "--out",
               str(tmp_path)])
    assert rc == 2


def test_error_exit_code(tmp_path, capsys):
    p = write(tmp_path, "[run]\nsuites =\n")
    assert main(["all", "--config", str(p), "--out", str(tmp_path)]) == 1
    assert "no suites requested" in capsys.readouterr().err


def test_feller_command_tables(tmp_path):
    p = write(tmp_path, SMALL)
    assert main(["feller", "--config", str(p), "--out", str(tmp_path / "f")]) == 0
    header = (tmp_path / "f" / "feller_E2_lam1.csv").read_text().splitlines()[0]
    assert header.startswith("r,") and header.endswith("h_limit")


def test_immersion_and_submersion_commands(tmp_path):
    p = write(tmp_path, """
        [run]
        suites = submersion, immersion

        [graph:C]
        kind = z2-chain
        horizon = 128

        [submersion:CxC3]
        base = C
        fiber = cycle(3)
        horizon = 128

        [patch:horo]
        kind = horosphere
        R = 1
    """)
    out = tmp_path / "o"
    assert main(["all", "--config", str(p), "--out", str(out)]) == 0
    assert (out / "submersion_CxC3.csv").exists()
    assert (out / "immersion_horo.csv").exists()
    rows = (out / "submersion_verdicts.csv").read_text().splitlines()
    assert len(rows) > 1


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("stochlab ")
