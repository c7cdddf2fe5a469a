import json
import subprocess
import sys

import numpy as np
import pytest

from erspin.cli import parse_freeze, parse_time, run

SMALL_CCE = ["cce", "--radius-nm", "5", "--two-tau-max-ms", "120", "--n-tau", "40"]


def invoke(tmp_path, *argv, sub="out"):
    out = tmp_path / sub
    code = run(["--out", str(out), *argv])
    return code, out


def report(out, command):
    return json.loads((out / f"{command}.json").read_text(encoding="utf-8"))


def test_cce_then_fit_with_freeze(tmp_path):
    code, out = invoke(tmp_path, *SMALL_CCE)
    assert code == 0
    rep = report(out, "cce")
    assert rep["schema_version"] == 1 and rep["config"]["cce"]["order"] == 2
    assert rep["results"]["fit"]["x"] > 1.0
    csv = out / "coherence.csv"
    assert csv.read_text().splitlines()[0] == "two_tau_s,L_mean,L_std"
    code, fit_out = invoke(tmp_path, "fit", str(csv), sub="fit")
    assert code == 0
    fit = report(fit_out, "fit")["results"]
    assert fit["components"][0]["T2_s"] == pytest.approx(rep["results"]["fit"]["T2_s"], rel=1e-9)
    assert (fit_out / "fit_curve.csv").exists()
    code, fz = invoke(tmp_path, "fit", str(csv), "--averaging", "magnitude", "--freeze", "T2n=27.2ms,xn=2.74",
                      sub="freeze")
    assert code == 0
    assert report(fz, "fit")["results"]["frozen"] == [{"T2_s": 0.0272, "x": 2.74}]


def test_zero_abundance_flat(tmp_path):
    code, out = invoke(tmp_path, "cce", "--radius-nm", "4", "--abundance", "0", "--n-tau", "10")
    assert code == 0
    data = np.loadtxt(out / "coherence.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], 1.0)
    assert "fit_note" in report(out, "cce")["results"]


def test_round_trip_from_embedded_config(tmp_path):
    code, a = invoke(tmp_path, *SMALL_CCE, "--per-config", "--configs", "2", sub="a")
    assert code == 0
    code, b = invoke(tmp_path, "--config", str(a / "cce.json"), sub="b")
    assert code == 0
    assert (a / "coherence.csv").read_bytes() == (b / "coherence.csv").read_bytes()
    assert report(a, "cce")["config"] == {**report(b, "cce")["config"], "out": str(a)}


def test_toml_config_and_override(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('seed = 3\n[stark]\nphi_deg = [47.0]\ndelta_Ec_kV_cm = 0.0\n')
    code, out = invoke(tmp_path, "--config", str(cfg), "stark")
    assert code == 0
    rep = report(out, "stark")
    assert rep["config"]["seed"] == 3
    assert rep["results"]["linewidth_Hz"]["47"] == pytest.approx(1e6)
    code, out = invoke(tmp_path, "--config", str(cfg), "stark", "--delta-Ec-kV-cm", "32", sub="o")
    assert report(out, "stark")["results"]["linewidth_Hz"]["47"] == pytest.approx(11.47e6, rel=0.01)


def test_config_unknown_field(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[cce]\nbogus = 1\n")
    code, _ = invoke(tmp_path, "--config", str(cfg), "cce")
    assert code == 1
    assert "cce.bogus" in capsys.readouterr().err


def test_unknown_flag_is_user_error(tmp_path):
    assert invoke(tmp_path, "cce", "--not-a-flag")[0] == 1


def test_empty_and_malformed_csv(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert invoke(tmp_path, "fit", str(empty))[0] == 1
    bad = tmp_path / "bad.csv"
    rows = ["two_tau_s,L"] + [f"{k * 1e-3},{np.exp(-k / 10)}" for k in range(12)]
    rows[5] = "0.004,abc"
    bad.write_text("\n".join(rows) + "\n")
    capsys.readouterr()
    assert invoke(tmp_path, "fit", str(bad))[0] == 1
    # rows are counted as file lines, header included
    assert "row 6" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path):
    csv = tmp_path / "deg.csv"
    csv.write_text("phi_deg,gamma_Hz\n" + "31,1e6\n" * 6)
    assert invoke(tmp_path, "stark", "--fit", str(csv))[0] == 2


def test_id_reference_point(tmp_path):
    code, out = invoke(tmp_path, "id", "--gamma-MHz", "10", "--bw-kHz", "250")
    assert code == 0
    assert report(out, "id")["results"]["T2_ID_s"] == pytest.approx(0.4, rel=0.1)


def test_stark_minimum(tmp_path):
    code, out = invoke(tmp_path, "stark", "--phi", "31")
    assert report(out, "stark")["results"]["linewidth_Hz"]["31"] == pytest.approx(1e6)


def test_t1_sweep(tmp_path):
    code, out = invoke(tmp_path, "t1", "--beta-sweep", "--n-beta", "6")
    assert code == 0
    data = np.loadtxt(out / "t1_vs_beta.csv", delimiter=",", skiprows=1)
    assert data.shape == (6, 2) and np.all(np.diff(data[:, 1]) > 0)
    assert (out / "coupling_hist.csv").read_text().startswith("g0_Hz,weight")


@pytest.mark.parametrize("argv,files", [
    (["bathgen", "--radius-nm", "3"], ["bath.json"]),
    (["eseem", "--span-us", "50", "--step-ns", "500"], ["eseem_trace.csv", "eseem_spectrum.csv"]),
    (["reflect", "--points", "51"], ["reflection.csv"]),
    (["gens"], []),
    (["t1temp"], ["t1_temperature.csv"]),
    (["anisotropy", "--A-per-s", "0.4", "--B-per-s", "0.1"], ["t1_anisotropy.csv"]),
])
def test_other_subcommands(tmp_path, argv, files):
    code, out = invoke(tmp_path, *argv)
    assert code == 0
    for f in files:
        assert (out / f).exists()
    assert report(out, argv[0])["command"] == argv[0]


def test_eseem_csv_layout(tmp_path):
    code, out = invoke(tmp_path, "eseem", "--span-us", "20", "--step-ns", "1000")
    assert (out / "eseem_trace.csv").read_text().splitlines()[0] == "tau_us,V,V_filtered"
    assert (out / "eseem_spectrum.csv").read_text().splitlines()[0].startswith("freq_kHz,amplitude")


def test_gens_inversion(tmp_path):
    code, out = invoke(tmp_path, "gens")
    assert report(out, "gens")["results"]["rho_cm3"] == pytest.approx(0.7e13, rel=0.3)


def test_help_lists_defaults_with_units(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["cce", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "(mT)" in text and "default: 67.0" in text and "(nm)" in text


def test_parsers():
    assert parse_time("27.2ms") == pytest.approx(0.0272)
    assert parse_time("4us") == pytest.approx(4e-6)
    assert parse_freeze("T2n=27.2ms,xn=2.74") == pytest.approx((0.0272, 2.74))


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "erspin.cli", "--out", str(tmp_path), "id"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "id"
