import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from revcap.cli import ConfigError, closed_form_constants, main, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASE = """[diffusion]
kind = gbm
mu = 0.0
sigma = 1.4142135623730951
rho = 6.0
d0 = 1.0

[cost]
alpha0 = square
beta0 = identity
q_plus = 1.0
q_minus = {q_minus}

[numerics]
c_min = -5
c_max = 20
grid = {grid}
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_inf_q_minus_means_irreversible(tmp_path):
    spec = parse_config(write(tmp_path, BASE.format(q_minus="inf", grid=20)))
    assert spec.cost.irreversible and spec.numerics.grid == 20
    spec = parse_config(write(tmp_path, BASE.format(q_minus="2.5", grid=20)))
    assert not spec.cost.irreversible and spec.cost.q_minus == 2.5


def test_discount_condition_named_with_line(tmp_path):
    # sigma^2 = 2 and mu = 2 give the bound 2 mu + sigma^2 = 6 = rho
    text = BASE.format(q_minus="inf", grid=20).replace("mu = 0.0", "mu = 2.0")
    with pytest.raises(ConfigError, match=r"run\.ini:5: discount condition"):
        parse_config(write(tmp_path, text))


def test_bad_value_reports_its_line(tmp_path):
    text = BASE.format(q_minus="inf", grid="many")
    with pytest.raises(ConfigError, match=r"run\.ini:17: grid"):
        parse_config(write(tmp_path, text))


def test_negative_cost_reports_its_line(tmp_path):
    text = BASE.format(q_minus="inf", grid=20).replace("q_plus = 1.0", "q_plus = -1")
    with pytest.raises(ConfigError, match=r"run\.ini:11: .*q_plus"):
        parse_config(write(tmp_path, text))


def test_missing_section_and_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match=r"\[cost\]"):
        parse_config(write(tmp_path, "[diffusion]\nmu = 0\nsigma = 1\nrho = 6\n"))
    text = BASE.format(q_minus="inf", grid=20) + "gird = 3\n"
    with pytest.raises(ConfigError, match="unknown numerics key 'gird'"):
        parse_config(write(tmp_path, text))


def test_missing_d0_defaults_with_warning(tmp_path):
    text = BASE.format(q_minus="inf", grid=20).replace("d0 = 1.0\n", "")
    with pytest.warns(UserWarning, match="geometric midpoint"):
        spec = parse_config(write(tmp_path, text))
    assert spec.model.d0 == 1.0
    abm = ("[diffusion]\nkind = abm\nmu = 0\nsigma = 1\nrho = 1\nd_min = 1\nd_max = 100\n"
           "[cost]\nq_plus = 1\nq_minus = 1\n[numerics]\nd_lo = 2\nd_hi = 50\nd_start = 5\n")
    with pytest.warns(UserWarning):
        assert parse_config(write(tmp_path, abm)).model.d0 == pytest.approx(10.0)


def test_tabulated_coefficient(tmp_path):
    d = np.geomspace(1e-3, 1e3, 400)
    rows = "d,beta0\n" + "\n".join(f"{x:.17g},{x:.17g}" for x in d)
    (tmp_path / "beta.csv").write_text(rows)
    text = BASE.format(q_minus="inf", grid=20).replace("beta0 = identity", "beta0 = tabulated:beta.csv")
    spec = parse_config(write(tmp_path, text))
    assert float(spec.cost.beta0(2.5)) == pytest.approx(2.5, rel=1e-12)


def test_closed_form_constants(tmp_path):
    spec = parse_config(write(tmp_path, BASE.format(q_minus="inf", grid=20)))
    m, a, b, A = closed_form_constants(spec.model, spec.cost)
    assert (m, a, b) == pytest.approx((3.0, 2.0 / 3.0, 6.0), rel=1e-14)
    assert float(A(0.0)) == pytest.approx(-1.0 / 243.0, rel=1e-14)


def test_closed_form_command(tmp_path, capsys):
    assert main(["closed-form", "--config", str(CONFIGS / "irreversible.ini"), "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "closed_form.json").read_text())
    assert data["passed"] and data["max_dev_chat_plus"] < 1e-8 and data["m"] == pytest.approx(3.0)
    settings = json.loads((tmp_path / "closed_form_settings.json").read_text())
    assert settings["numerics"]["tolerance"] == 1e-5


def test_closed_form_rejects_reversible(tmp_path):
    assert main(["closed-form", "--config", str(CONFIGS / "reversible.ini"), "--out", str(tmp_path)]) == 2


def test_verify_exit_codes(tmp_path):
    cfg = str(CONFIGS / "irreversible.ini")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path), "--grid", "12"]) == 0
    with open(tmp_path / "verify.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["passed"] == "pass" for r in rows)
    assert float(rows[0]["value"]) < float(rows[0]["tolerance"])
    assert main(["verify", "--config", cfg, "--out", str(tmp_path), "--grid", "12", "--tolerance", "1e-30"]) == 1


def test_boundaries_and_value_outputs(tmp_path):
    cfg = str(CONFIGS / "reversible.ini")
    assert main(["boundaries", "--config", cfg, "--out", str(tmp_path), "--grid", "6"]) == 0
    with open(tmp_path / "boundaries_c.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and all(float(r["x_star"]) < float(r["y_star"]) for r in rows)
    assert main(["value", "--config", cfg, "--out", str(tmp_path), "--grid", "5"]) == 0
    with open(tmp_path / "value_surface.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 25 and all(math.isfinite(float(r["v"])) for r in rows)


def test_simulate_is_deterministic(tmp_path):
    cfg = str(CONFIGS / "irreversible.ini")
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["simulate", "--config", cfg, "--out", str(out), "--paths", "500", "--dt", "0.01"]) == 0
        outs.append((out / "simulate.json").read_text())
    assert outs[0] == outs[1]
    data = json.loads(outs[0])
    assert {"mean", "std_error", "n_paths", "dt", "horizon", "seed"} <= set(data)
    assert data["n_paths"] == 500 and data["seed"] == 7


def test_dynkin_command(tmp_path):
    cfg = str(CONFIGS / "reversible.ini")
    assert main(["dynkin", "--config", cfg, "--out", str(tmp_path), "--paths", "400", "--dt", "0.01",
                 "--grid", "4"]) == 0
    data = json.loads((tmp_path / "dynkin.json").read_text())
    assert data["within_cost_bounds"] and -1.0 <= data["mean"] <= 1.0


def test_config_error_exit_code(tmp_path, capsys):
    p = write(tmp_path, BASE.format(q_minus="0", grid=20))
    assert main(["value", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "run.ini:12" in capsys.readouterr().err
