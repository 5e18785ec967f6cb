import json
import os

import pytest

from bipsdmrg.cli import RunConfig, main, parse_config
from bipsdmrg.errors import ConfigError
from bipsdmrg.hamio import build_hubbard, write_fcidump


def _run(capsys, tmp_path, sub, cfg_text, *extra):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(cfg_text)
    rc = main([sub, "--config", str(cfg), *extra])
    out = capsys.readouterr()
    return rc, out.out, out.err


def _machine(text):
    return json.loads(text.split("# machine-readable\n")[1])


def test_parse_config_converts_types_and_ignores_comments():
    cfg = parse_config("n_sites = 4  # chain\n\nu = 2.5\nscan_t_inter = 0.1, 0.2\nmodel = dimerized_hubbard\n")
    assert cfg.n_sites == 4 and cfg.u == 2.5
    assert cfg.scan_t_inter == (0.1, 0.2)
    assert cfg.model == "dimerized_hubbard"
    assert RunConfig().resolved()["m"] == 64


@pytest.mark.parametrize("text", ["bogus = 1", "m = 4\nm = 5", "m = four", "m = 0", "model = heisenberg",
                                  "threshold = 2", "just words", "fcidump = missing.fcidump"])
def test_bad_config_is_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_fci_on_hubbard_dimer(capsys, tmp_path):
    rc, out, _ = _run(capsys, tmp_path, "fci", "n_sites = 2\nu = 4\n")
    assert rc == 0
    assert "E(FCI root 0) = -0.828427124746" in out
    assert _machine(out)["results"]["energies"][0] == pytest.approx(2 - 2 * 2 ** 0.5, abs=1e-12)


def test_bad_config_exit_code_and_message(capsys, tmp_path):
    rc, out, err = _run(capsys, tmp_path, "fci", "n_sites = 2\nn_sites = 3\n")
    assert rc == 2 and out == ""
    assert "duplicate key 'n_sites'" in err
    rc, _, err = _run(capsys, tmp_path, "fci", "colour = blue\n")
    assert rc == 2 and "unknown key" in err


def test_impossible_target_is_a_config_error(capsys, tmp_path):
    rc, _, err = _run(capsys, tmp_path, "fci", "n_sites = 2\nn_elec = 3\ntwo_sz = 0\n")
    assert rc == 2 and "not possible" in err


def test_missing_config_file(capsys, tmp_path):
    assert main(["fci", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_nonpositive_threads(capsys):
    assert main(["fci", "--threads", "0"]) == 2


def test_threads_sets_blas_variables(capsys, tmp_path, monkeypatch):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    rc, _, _ = _run(capsys, tmp_path, "fci", "n_sites = 2\n", "--threads", "1")
    assert rc == 0
    assert os.environ["OMP_NUM_THREADS"] == "1" and os.environ["OPENBLAS_NUM_THREADS"] == "1"


def test_fcidump_input_matches_model(capsys, tmp_path):
    path = tmp_path / "h4.fcidump"
    path.write_text(write_fcidump(build_hubbard(4, [1.0] * 3, 4.0)))
    rc_a, out_a, _ = _run(capsys, tmp_path, "fci", "fcidump = h4.fcidump\n")
    rc_b, out_b, _ = _run(capsys, tmp_path, "fci", "n_sites = 4\n")
    assert rc_a == rc_b == 0
    assert _machine(out_a)["results"] == _machine(out_b)["results"]


def test_hf_reports_energy(capsys, tmp_path):
    rc, out, _ = _run(capsys, tmp_path, "hf", "n_sites = 4\n")
    assert rc == 0
    res = _machine(out)["results"]
    assert len(res["orbital_energies"]) == 4
    assert res["energy"] > -4.0


def test_bips_with_one_fragment_equals_dmrg(capsys, tmp_path):
    cfg = "n_sites = 4\nu = 3\nm = 32\nn_state = 1\nfragment_size = 4\n"
    _, out_dmrg, _ = _run(capsys, tmp_path, "dmrg", cfg)
    rc, out_bips, _ = _run(capsys, tmp_path, "bips", cfg)
    assert rc == 0
    e_dmrg = _machine(out_dmrg)["results"]["energies"][0]
    assert _machine(out_bips)["results"]["energies"][0] == pytest.approx(e_dmrg, abs=1e-9)


DIMER = "model = dimerized_hubbard\nn_sites = 4\nt_inter = 0.3\nm = 32\nn_state = 4\nthreshold = 0.02\n"


def test_bips_output_is_deterministic_and_written(capsys, tmp_path):
    out_dir = tmp_path / "out"
    rc, first, _ = _run(capsys, tmp_path, "bips", DIMER, "--output", str(out_dir))
    _, second, _ = _run(capsys, tmp_path, "bips", DIMER)
    assert rc == 0
    assert "time " not in first
    # the two runs differ only in the recorded output directory
    strip = [ln for ln in first.splitlines() if "output" not in ln]
    assert strip == [ln for ln in second.splitlines() if "output" not in ln]
    assert (out_dir / "bips.txt").read_text() == first
    saved = json.loads((out_dir / "bips.json").read_text())
    assert saved["subcommand"] == "bips"
    assert saved["config"]["output"] == str(out_dir)


def test_sample_and_effham(capsys, tmp_path):
    rc, out, _ = _run(capsys, tmp_path, "sample", DIMER)
    assert rc == 0
    sampled = _machine(out)["results"]["sampled"][0]
    assert sampled and all(abs(s["coefficient"]) >= 0.02 for s in sampled)
    weight = sum(s["coefficient"] ** 2 for s in sampled)
    assert 0.9 < weight <= 1 + 1e-9
    rc, out, _ = _run(capsys, tmp_path, "effham", DIMER)
    assert rc == 0
    res = _machine(out)["results"]
    n = len(res["basis"])
    assert n == len(sampled)
    assert len(res["matrix"]) == n and len(res["eigenvalues"]) == n
    assert res["eigenvalues"][0] <= res["energies"][0] + 1e-6


def test_scan_rows_follow_grid_order(capsys, tmp_path):
    cfg = "n_sites = 4\nm = 32\nn_state = 4\nscan_t_intra = 1.0\nscan_t_inter = 0.5, 0.1\n"
    rc, out, _ = _run(capsys, tmp_path, "scan", cfg)
    assert rc == 0
    grid = _machine(out)["results"]["grid"]
    assert [g["t_inter"] for g in grid] == [0.5, 0.1]
    assert all(g["error"] >= -1e-9 for g in grid)
    assert grid[1]["error"] < grid[0]["error"]
    rows = [ln for ln in out.splitlines() if ln.startswith("   1.000")]
    assert len(rows) == 2 and "0.500" in rows[0] and "0.100" in rows[1]
