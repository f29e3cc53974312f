import json

import pytest

from diffbridge import bench, cli
from diffbridge.errors import BadConfig

MINIMAL = """
[experiment]
model = birth-death
x0 = 50
T = 1

[bridges]
kinds = MDB
"""

SMALL = """
[experiment]
model = birth-death
x0 = 50
T = 1
m = 10

[conditioning]
value = 24.62

[bridges]
kinds = MDB, LB, GPMDB
lb_gamma = 0.01, 0.3

[mcmc]
iterations = 600
seed = 5
block_size = 200
"""


def test_minimal_document_gets_defaults():
    cfg = bench.parse_config(MINIMAL)
    assert cfg.iterations == 100_000 and cfg.m == 50
    assert cfg.levels == (5, 50, 95) and cfg.regime == "exact"
    assert [k.label for k in cfg.bridge_kinds()] == ["MDB"]


def test_round_trip():
    text = MINIMAL.replace("kinds = MDB", "kinds = MDB, LB, GP[once]\nlb_gamma = 0.1, 0.3") + """
[observation]
regime = noisy
F = 1
sigma = 2.5, 5
[mcmc]
seed = 123
"""
    cfg = bench.parse_config(text)
    again = bench.parse_config(bench.serialise(cfg))
    assert again == cfg
    assert bench.serialise(again) == bench.serialise(cfg)


@pytest.mark.parametrize("path", ["configs/birth-death.cfg", "configs/lotka-volterra.cfg",
                                  "configs/aphid.cfg", "configs/smoke.cfg"])
def test_shipped_configs_parse(path):
    from pathlib import Path
    root = Path(__file__).resolve().parents[1]
    cfg = bench.parse_config((root / path).read_text())
    assert cfg.bridge_kinds()


def test_all_errors_reported_with_lines():
    text = """[experiment]
model = birth-death
x0 = -1
T = 1
m = zero
[bridges]
kinds = MDB, Wiggly
[nonsense]
"""
    with pytest.raises(BadConfig) as info:
        bench.parse_config(text)
    errors = info.value.errors
    assert any(e.startswith("line 5:") for e in errors)
    assert any(e.startswith("line 3:") and "admissible" in e for e in errors)
    assert any(e.startswith("line 7:") and "Wiggly" in e and "MDB" in e for e in errors)
    assert any(e.startswith("line 8:") for e in errors)


def test_empty_bridge_list_rejected():
    with pytest.raises(BadConfig) as info:
        bench.parse_config(MINIMAL.replace("kinds = MDB", "kinds = "))
    assert any("empty" in e for e in info.value.errors)


def test_gps_rejected_for_noisy_config():
    text = MINIMAL.replace("kinds = MDB", "kinds = GPS") + "[observation]\nregime = noisy\nsigma = 1\n"
    with pytest.raises(BadConfig):
        bench.parse_config(text)


def test_scenario_labels():
    cfg = bench.parse_config(MINIMAL + "[observation]\nregime = noisy\nsigma = 5, 10\n")
    labels = [s.label for s in cfg.scenarios()]
    assert labels[:3] == ["T1_sigma5_q5", "T1_sigma5_q50", "T1_sigma5_q95"]
    assert len(labels) == 6


def test_quantile_oracle_small():
    from diffbridge import make_model
    q = bench.generate_endpoint_quantiles(make_model("birth-death"), [50.0], 1.0, 50, 40_000, 0.005, 0)
    assert q[0] == pytest.approx(24.62, abs=0.3)


def test_benchmark_rows_and_footer(tmp_path):
    cfg = bench.parse_config(SMALL)
    rows = bench.run_benchmark(cfg, tmp_path)
    assert [r.bridge for r in rows] == ["MDB", "LB(0.01)", "LB(0.3)", "GPMDB"]
    assert all(not r.error and 0 < r.acceptance_rate <= 1 for r in rows)
    text = (tmp_path / "summary.csv").read_text()
    footer = [line for line in text.splitlines() if line.startswith("#")]
    best = max(rows[1:3], key=lambda r: r.acceptance_rate)
    assert footer == [f"# best_lb_gamma,T1_value,{best.gamma!r},{best.acceptance_rate!r}"]
    assert (tmp_path / "band_GPMDB_T1_value.csv").exists()
    timing = json.loads((tmp_path / "timing.json").read_text())
    assert len(timing) == 4
    resolved = bench.parse_config((tmp_path / "resolved_config.cfg").read_text())
    assert resolved == cfg


def test_benchmark_independent_of_threads(tmp_path):
    cfg = bench.parse_config(SMALL)
    a = bench.run_benchmark(cfg, tmp_path / "a", threads=1)
    b = bench.run_benchmark(cfg, tmp_path / "b", threads=3)
    assert [r.acceptance_rate for r in a] == [r.acceptance_rate for r in b]
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_context_failure_recorded_in_row(tmp_path):
    cfg = bench.parse_config(SMALL.replace("value = 24.62", "value = -3"))
    rows = bench.run_benchmark(cfg, None)
    assert all(r.error for r in rows)


# ---------------------------------------------------------------------------
# command line


def _write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return str(path)


def test_cli_benchmark_ok(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["benchmark", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "summary.csv").exists()


def test_cli_bad_config_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL.replace("kinds = MDB", "kinds = "))
    assert cli.main(["benchmark", "--config", cfg]) == 1
    assert "empty" in capsys.readouterr().err
    assert cli.main(["benchmark", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_cli_all_rows_failed_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL.replace("value = 24.62", "value = -3"))
    assert cli.main(["benchmark", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_cli_bridge_needs_one_kind(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["bridge", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["bridge", "--config", cfg, "--bridge", "RBminus", "--iterations", "300",
                     "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "summary.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].split(",")[1] == "RBminus"


def test_cli_simulate_and_quantiles(tmp_path, capsys):
    text = MINIMAL + "[conditioning]\nreplicates = 10000\nlevels = 50\n"
    cfg = _write(tmp_path, text)
    out = str(tmp_path / "o")
    assert cli.main(["simulate", "--config", cfg, "--paths", "3", "--out", out]) == 0
    lines = (tmp_path / "o" / "paths.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 51
    assert cli.main(["quantiles", "--config", cfg, "--out", out]) == 0
    rows = (tmp_path / "o" / "quantiles.csv").read_text().splitlines()
    assert rows[1].startswith("T1_q50,0,")
    assert float(rows[1].split(",")[2]) == pytest.approx(24.62, abs=1.0)
