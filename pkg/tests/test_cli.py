import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hillflow import cli
from hillflow import invariants as inv
from hillflow import jacobian as jac
from hillflow.errors import ConfigError

PI2 = np.pi ** 2
#: tau = 1 one-gap edges and Dirichlet value of the untranslated potential
LAM1_MINUS = 6.283185307179588
LAM1_PLUS = 13.158371125199958
GAMMA1 = 6.8751858180203698
EPS_SELECTED = (3.080070288241024e-05, 0.9)


def run(*argv):
    return cli.main(list(argv))


def write_cfg(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    return np.genfromtxt(path, delimiter=",", names=True)


# -- config schema ----------------------------------------------------------

def test_default_config_valid_and_idempotent():
    cfg = cli.ExperimentConfig.from_dict({})
    assert cfg.resolved["grid"] == 256
    assert cfg.resolved["m_max"] == 10
    # resolving is a fixed point: re-validating the resolved dict changes
    # neither the content nor the hash
    cfg2 = cli.ExperimentConfig.from_dict(cfg.resolved)
    assert cfg2.resolved == cfg.resolved
    assert cfg2.config_hash == cfg.config_hash
    assert len(cfg.config_hash) == 12
    assert set(cfg.config_hash) <= set("0123456789abcdef")
    # the default dict itself round-trips through JSON
    again = cli.ExperimentConfig.from_dict(
        json.loads(json.dumps(cli.default_config())))
    assert again.config_hash == cfg.config_hash


def test_output_dir_not_hashed():
    a = cli.ExperimentConfig.from_dict({"output_dir": "a"})
    b = cli.ExperimentConfig.from_dict({"output_dir": "b"})
    assert a.config_hash == b.config_hash
    assert a.output_dir != b.output_dir


@pytest.mark.parametrize("bad", [
    {"nope": 1},
    {"grid": 100},
    {"grid": 0},
    {"m_max": 0},
    {"eps": [0.5, 0.5]},
    {"eps": [2.0, 0.0, 0.0, 0.0]},
    {"eps": [-0.1, 0.0, 0.0, 0.0]},
    {"eps": "strong"},
    {"directions": [[0, 1], [1, 0]]},
    {"index_sets": [[1, 2, 3]]},
    {"index_sets": [[0, 1, 2], [1, 2, 3], [1, 2, 3], [1, 2, 3]]},
    {"base_gaps": [[7.0, 0.8], [6.5, 0.9, 0.3], [1.2, 0.8, 0.5],
                   [0.9, 0.6, 0.3]]},
    {"alpha": [[0.5, 0.5], [0.5, 0.5, 0.5], [0.5, 0.5, 0.5],
               [0.5, 0.5, 0.5]]},
    {"tolerances": {}},
    {"tolerances": {"isospectral": 0.0}},
    {"tolerances": {"isospectral": -1e-6}},
    {"potential": {"kind": "hat"}},
    {"potential": {"kind": "wp"}},
    {"potential": {"kind": "wp", "tau": 0.0}},
    {"potential": {"kind": "cos", "tau": 1.0}},
    {"flow": {"s_count": 0}},
    {"flow": {"potential": {"kind": "zero"},
              "spectrum": {"lambda0": 0.0, "gaps": [[1.0, 2.0]]}}},
    {"flow": {"spectrum": {"lambda0": 0.0, "gaps": [[2.0, 1.0]]}}},
    {"flow": {"spectrum": {"lambda0": 0.0, "gaps": []}}},
    {"flow": {"spectrum": {"lambda0": 5.0, "gaps": [[1.0, 2.0]]}}},
    {"invariants": {"mixed": [[1]]}},
    {"invariants": {"b_table": [[1, 2]]}},
    {"jacobian": {"h_alpha": 0.0}},
    {"scan": {"eps1": 0.5}},
    {"scan": {"eps2": 0.5}},
    {"scan": {"beta": 0.0}},
    {"scan": {"eps3_values": []}},
    {"scan": {"eps_candidates": [0.5, 0.6]}},
    {"scan": {"eps_candidates": [0.5, 0.0]}},
    {"scan": {"alpha_samples": {"x": [[1, 2, 3]]}}},
    {"scan": {"selection_grid": 37}},
])
def test_schema_rejections(bad):
    with pytest.raises(ConfigError):
        cli.ExperimentConfig.from_dict(bad)


def test_bad_directions_rejected_at_point_construction(tmp_path):
    data = {"directions": [[0, 1], [0, 1], [1, 1], [1, -1]]}
    cfg = cli.ExperimentConfig.from_dict(data)     # schema alone is fine
    with pytest.raises(ConfigError):
        cfg.manifold_point()
    path = write_cfg(tmp_path, dict(data, output_dir=str(tmp_path / "o")))
    assert run("jacobian", "--config", path) == 1


def test_parse_potential_arg():
    assert cli.parse_potential_arg("zero") == {"kind": "zero"}
    assert cli.parse_potential_arg("cos") == {
        "kind": "cos", "amplitude": 2.0, "frequency": 1}
    assert cli.parse_potential_arg("wp:2.0") == {"kind": "wp", "tau": 2.0}
    assert cli.parse_potential_arg("lame2:0.8") == {
        "kind": "lame2", "tau": 0.8}
    for bad in ("wp", "lame2:", "wp:abc", "morse:1.0"):
        with pytest.raises(ConfigError):
            cli.parse_potential_arg(bad)


def test_build_potential_lame2_triples_coefficients():
    base, _ = cli.build_potential({"kind": "wp", "tau": 1.0})
    lame, desc = cli.build_potential({"kind": "lame2", "tau": 1.0})
    assert_allclose(lame.cos_coeffs, 3.0 * np.asarray(base.cos_coeffs),
                    rtol=1e-15)
    assert desc == "lame2(tau=1)"


def test_config_file_errors(tmp_path):
    missing = str(tmp_path / "nowhere.json")
    assert run("spectrum", "--config", missing) == 1
    garbled = tmp_path / "broken.json"
    garbled.write_text("{not json")
    assert run("spectrum", "--config", str(garbled)) == 1
    listroot = tmp_path / "list.json"
    listroot.write_text("[1, 2]")
    assert run("spectrum", "--config", str(listroot)) == 1


def test_flag_guards(tmp_path):
    out = str(tmp_path / "o")
    assert run("spectrum", "--grid", "100", "--out", out) == 1
    assert run("spectrum", "--threads", "0", "--out", out) == 1
    with pytest.raises(SystemExit) as ei:
        cli.main([])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        cli.main(["--help"])
    assert ei.value.code == 0


# -- spectrum ---------------------------------------------------------------

def test_spectrum_zero_potential_table(tmp_path):
    out = tmp_path / "o"
    cfgd = {"m_max": 4, "output_dir": str(out)}
    path = write_cfg(tmp_path, cfgd)
    assert run("spectrum", "--config", path, "--potential", "zero") == 0
    tab = read_csv(out / "spectrum.csv")
    assert list(tab["m"]) == [0, 1, 2, 3, 4]
    target = (np.arange(1, 5) * np.pi) ** 2
    assert abs(tab["lambda_minus"][0]) < 1e-8
    assert_allclose(tab["lambda_minus"][1:], target, rtol=1e-8)
    assert_allclose(tab["lambda_plus"][1:], target, rtol=1e-8)
    assert_allclose(tab["mu"][1:], target, rtol=1e-8)
    assert np.all(tab["open_flag"] == 0)
    header = (out / "spectrum.csv").read_text().splitlines()[0]
    assert header.endswith(
        " # config=%s" % cli.ExperimentConfig.from_dict(cfgd).config_hash)


def test_spectrum_one_gap_frozen_edges(tmp_path):
    out = tmp_path / "o"
    path = write_cfg(tmp_path, {"m_max": 6, "output_dir": str(out)})
    assert run("spectrum", "--config", path) == 0   # default wp(tau=1)
    tab = read_csv(out / "spectrum.csv")
    assert tab["lambda_minus"][1] == pytest.approx(LAM1_MINUS, rel=1e-10)
    assert tab["lambda_plus"][1] == pytest.approx(LAM1_PLUS, rel=1e-10)
    assert tab["gamma"][1] == pytest.approx(GAMMA1, rel=1e-9)
    assert tab["mu"][1] == pytest.approx(LAM1_PLUS, rel=1e-9)
    assert tab["open_flag"][1] == 1
    assert np.all(tab["open_flag"][2:] == 0)


def test_spectrum_tol_override_closes_open_set(tmp_path):
    out = tmp_path / "o"
    path = write_cfg(tmp_path, {"m_max": 6, "output_dir": str(out)})
    assert run("spectrum", "--config", path, "--tol", "10") == 0
    tab = read_csv(out / "spectrum.csv")
    assert np.all(tab["open_flag"] == 0)            # gamma_1 < 10


def test_spectrum_byte_determinism(tmp_path):
    path = write_cfg(tmp_path, {"m_max": 4})
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert run("spectrum", "--config", path, "--out", str(out)) == 0
        outs.append((out / "spectrum.csv").read_bytes())
    assert outs[0] == outs[1]


# -- flow -------------------------------------------------------------------

@pytest.fixture(scope="module")
def flow_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("flow")
    cfgd = {"output_dir": str(out),
            "flow": {"potential": {"kind": "wp", "tau": 1.0},
                     "s_count": 8, "s_max": 1.0, "sample_grid": 64,
                     "m_max": 4, "dirichlet_checks": 1}}
    path = out / "cfg.json"
    path.write_text(json.dumps(cfgd))
    code = cli.main(["flow", "--config", str(path)])
    return code, out, cli.ExperimentConfig.from_dict(cfgd)


def test_flow_one_gap_table(flow_run):
    code, out, cfg = flow_run
    assert code == 0
    tab = read_csv(out / "flow.csv")
    assert tab.dtype.names == ("s", "mu_1", "alpha_tilde_1")
    assert len(tab) == 9
    # starts on the upper edge, returns there after one period, and the
    # lifted angle advances by exactly pi
    assert tab["mu_1"][0] == pytest.approx(LAM1_PLUS, abs=1e-9)
    assert abs(tab["mu_1"][-1] - tab["mu_1"][0]) < 1e-8
    assert tab["alpha_tilde_1"][0] == pytest.approx(np.pi / 2, abs=1e-9)
    assert tab["alpha_tilde_1"][-1] - tab["alpha_tilde_1"][0] == \
        pytest.approx(np.pi, abs=1e-8)
    assert np.all(np.diff(tab["alpha_tilde_1"]) > 0)


def test_flow_one_gap_summary(flow_run):
    code, out, cfg = flow_run
    summary = json.loads((out / "flow_summary.json").read_text())
    assert summary["config"] == cfg.config_hash
    assert summary["potential"] == "wp(tau=1)"
    assert summary["open_gaps"] == [1]
    assert summary["tolerance"] == 1e-6
    assert summary["spectrum_drift"] < 1e-6
    assert summary["dirichlet_drift"] < 1e-6
    assert summary["closure_gap"] < 1e-8
    assert math.isfinite(summary["mean_offset"])


def test_flow_closed_gap_constant_potential(tmp_path):
    out = tmp_path / "o"
    path = write_cfg(tmp_path, {
        "output_dir": str(out),
        "flow": {"spectrum": {"lambda0": 0.0, "gaps": [[PI2, PI2]]},
                 "s_count": 4, "sample_grid": 64}})
    assert run("flow", "--config", path) == 0
    tab = read_csv(out / "flow.csv")
    assert tab.dtype.names == ("s",)                # no open gaps
    summary = json.loads((out / "flow_summary.json").read_text())
    assert summary["potential"] == "explicit spectrum"
    assert summary["open_gaps"] == []
    assert summary["spectrum_drift"] < 1e-9
    assert summary["closure_gap"] is None


def test_flow_inconsistent_data_rejected(tmp_path):
    # an arbitrary single-gap triple is generally not realizable by a
    # 1-periodic potential, and the reconstruction check must say so
    out = tmp_path / "o"
    path = write_cfg(tmp_path, {
        "output_dir": str(out),
        "flow": {"spectrum": {"lambda0": 0.0, "gaps": [[9.0, 11.0]]},
                 "s_count": 4, "sample_grid": 64}})
    assert run("flow", "--config", path) == 2
    summary = json.loads((out / "flow_summary.json").read_text())
    assert summary["spectrum_drift"] > summary["tolerance"]


def test_flow_alpha0_length_guard(tmp_path):
    path = write_cfg(tmp_path, {
        "output_dir": str(tmp_path / "o"),
        "flow": {"spectrum": {"lambda0": 0.0, "gaps": [[9.0, 11.0]],
                              "alpha0": [1.0, 2.0]}}})
    assert run("flow", "--config", path) == 1


# -- invariants -------------------------------------------------------------

def test_invariants_csv_matches_library(tmp_path):
    out = tmp_path / "o"
    cfgd = {"grid": 64, "output_dir": str(out)}
    path = write_cfg(tmp_path, cfgd)
    assert run("invariants", "--config", path) == 0
    tab = read_csv(out / "invariants.csv")
    cfg = cli.ExperimentConfig.from_dict(cfgd)
    point = cfg.manifold_point()
    vec = inv.InvariantVector.compute(point, grid=64,
                                      verify_quadrature=True)
    assert [(int(j), int(m)) for j, m in zip(tab["j"], tab["m"])] \
        == list(point.small_gap_set)
    assert_allclose(tab["phi"], vec.values, rtol=1e-13)
    header = (out / "invariants.csv").read_text().splitlines()[0]
    assert header.endswith(" # config=%s" % cfg.config_hash)


def test_invariants_free_point_identically_zero(tmp_path):
    out = tmp_path / "o"
    path = write_cfg(tmp_path, {"grid": 64, "output_dir": str(out),
                                "eps": [0.0, 0.0, 0.0, 0.0]})
    assert run("invariants", "--config", path) == 0
    tab = read_csv(out / "invariants.csv")
    assert np.all(tab["phi"] == 0.0)


def test_invariants_closed_form_fits(tmp_path):
    out = tmp_path / "o"
    path = write_cfg(tmp_path, {"grid": 128, "output_dir": str(out)})
    assert run("invariants", "--config", path) == 0
    fits = json.loads((out / "closed_form.json").read_text())["fits"]
    assert sorted(fits) == ["3,1", "3,2", "3,3", "4,1", "4,2", "4,3"]
    for fit in fits.values():
        assert fit["residual"] < 1e-6
        assert fit["fitted_amplitude"] == pytest.approx(
            abs(fit["coefficient"]), rel=1e-4)


def test_invariants_b_table_and_mixed_blocks(tmp_path):
    out = tmp_path / "o"
    cfgd = {"grid": 128, "output_dir": str(out),
            "eps": [0.05, 0.08, 0.0, 0.0],
            "invariants": {"closed_form": False,
                           "b_table": [[2, 2, 2], [2, 2, 3]],
                           "mixed": [[1, 2]]}}
    path = write_cfg(tmp_path, cfgd)
    assert run("invariants", "--config", path) == 0

    cfg = cli.ExperimentConfig.from_dict(cfgd)
    point = cfg.manifold_point()
    tab = read_csv(out / "b_table.csv")
    assert [tuple(r) for r in zip(tab["j"], tab["m"], tab["n"])] \
        == [(2, 2, 2), (2, 2, 3)]
    for row in np.atleast_1d(tab):
        want = inv.b_coeff(point, int(row["j"]), int(row["m"]),
                           int(row["n"]), grid=128)
        assert row["b"] == pytest.approx(want, rel=1e-12)

    mixed = json.loads((out / "mixed.json").read_text())
    assert mixed["disagreement_budget"] == 1e-4
    row = mixed["rows"]["1,2"]
    scale = max(1.0, abs(row["quadrature"]))
    assert abs(row["quadrature"] - row["finite_difference"]) < 1e-4 * scale
    assert abs(row["normalized"] - row["reference"]) < 0.5
    assert not (out / "closed_form.json").exists()


def test_invariants_quadrature_guard(tmp_path):
    path = write_cfg(tmp_path, {"output_dir": str(tmp_path / "o")})
    assert run("invariants", "--config", path, "--grid", "4") == 2


def test_invariants_dual_route_disagreement(tmp_path):
    path = write_cfg(tmp_path, {
        "grid": 64, "output_dir": str(tmp_path / "o"),
        "eps": [0.05, 0.08, 0.0, 0.0],
        "invariants": {"closed_form": False, "mixed": [[1, 2]]}})
    assert run("invariants", "--config", path, "--tol", "1e-18") == 2


# -- jacobian ---------------------------------------------------------------

@pytest.fixture(scope="module")
def jacobian_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("jacobian")
    cfgd = {"grid": 32, "output_dir": str(out),
            "jacobian": {"structure": True, "reduced": True}}
    path = out / "cfg.json"
    path.write_text(json.dumps(cfgd))
    code = cli.main(["jacobian", "--config", str(path)])
    return code, out, cli.ExperimentConfig.from_dict(cfgd)


def test_jacobian_report_artifacts(jacobian_run):
    code, out, cfg = jacobian_run
    assert code == 0
    rep = json.loads((out / "jacobian.json").read_text())
    assert rep["config"] == cfg.config_hash
    assert rep["n_coupled"] == 4
    assert rep["numerical_rank"] == len(rep["labels"]) - 2 - 4
    assert rep["zero_columns"] == ["1,2", "1,3", "2,2", "2,3"]
    assert rep["structure_flags"] == {"coupled_columns_zero": True,
                                      "tail_single_entry": True}
    assert abs(rep["det"]) <= rep["ztol"]

    tab = read_csv(out / "jacobian.csv")
    assert len(tab) == len(rep["labels"])
    point = cfg.manifold_point()
    again = jac.jacobian(point, 1e-5, grid=32)
    cols = ["d_%d_%d" % lm for lm in again.labels]
    J_csv = np.column_stack([tab[c] for c in cols])
    assert_allclose(J_csv, again.J, rtol=1e-12, atol=1e-15)


def test_jacobian_structure_and_reduced_artifacts(jacobian_run):
    code, out, cfg = jacobian_run
    st = json.loads((out / "structure.json").read_text())
    assert st["coupled_residual"] < 1e-6
    assert st["off_pattern"] < 1e-5
    assert st["closed_form_residual"] < 1e-6
    assert st["i3_block_max"] > 0.1
    assert len(st["mixed_diagonal"]) == 4
    assert_allclose(st["single_entries"], st["closed_form"], rtol=1e-5)

    rd = json.loads((out / "reduced.json").read_text())
    assert rd["rel_gap"] < 1e-3
    assert rd["direct"] == pytest.approx(rd["diagonal_product"],
                                         rel=1e-3, abs=1e-300)
    assert len(rd["diagonal"]) == len(json.loads(
        (out / "jacobian.json").read_text())["labels"])


# -- scan -------------------------------------------------------------------

def test_scan_single_cell_artifacts(tmp_path):
    out = tmp_path / "o"
    cfgd = {"output_dir": str(out),
            "scan": {"eps1": EPS_SELECTED[0], "eps2": EPS_SELECTED[1],
                     "eps3_values": [0.1], "eps4_values": [0.0],
                     "grid": 16}}
    path = write_cfg(tmp_path, cfgd)
    assert run("scan", "--config", path) == 0
    cfg = cli.ExperimentConfig.from_dict(cfgd)

    lines = (out / "scan.csv").read_text().splitlines()
    assert lines[0] == "# config=%s" % cfg.config_hash
    assert lines[1] == "eps3,eps4,alpha_id,abs_det,noise_floor,certified_flag"
    assert len(lines) == 3
    eps3, eps4, alpha_id, abs_det, floor, flag = lines[2].split(",")
    assert (float(eps3), float(eps4)) == (0.1, 0.0)
    assert alpha_id == "config"
    assert flag in ("0", "1")

    summary = json.loads((out / "scan_summary.json").read_text())
    assert summary["feasible"] is True
    assert summary["n_cells"] == 1
    assert summary["eps1"] == EPS_SELECTED[0]
    assert summary["certified_fraction"] == float(flag)
    assert "slacks" not in summary          # couplings given, not selected
    if flag == "0":
        assert summary["zero_set"] == [[0.1, 0.0, "config"]]
    else:
        assert summary["zero_set"] == []


def test_scan_infeasible_selection_reported(tmp_path):
    # a single over-large candidate leaves select_epsilons nothing to
    # certify; the scan reports that and still exits cleanly
    out = tmp_path / "o"
    path = write_cfg(tmp_path, {
        "output_dir": str(out),
        "scan": {"beta": 0.3, "eps_candidates": [0.9],
                 "selection_grid": 32, "eps3_values": [0.1],
                 "eps4_values": [0.0], "grid": 16}})
    assert run("scan", "--config", path) == 0
    summary = json.loads((out / "scan_summary.json").read_text())
    assert summary["feasible"] is False
    assert "error" in summary
    assert not (out / "scan.csv").exists()
    assert not (out / "selection.json").exists()


# -- selftest ---------------------------------------------------------------

def test_selftest_single_criterion(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("selftest", "--criteria", "1", "--out", str(out)) == 0
    report = json.loads((out / "selftest_report.json").read_text())
    assert report["passed"] is True
    assert len(report["criteria"]) == 1
    entry = report["criteria"][0]
    assert entry["number"] == 1
    assert entry["passed"] is True
    assert entry["seconds"] > 0
    assert "[PASS] criterion  1" in capsys.readouterr().out


def test_selftest_rejects_unknown_criteria(tmp_path):
    out = str(tmp_path / "o")
    assert run("selftest", "--criteria", "99", "--out", out) == 1
    assert run("selftest", "--criteria", ",", "--out", out) == 1
    assert run("selftest", "--criteria", "1,x", "--out", out) == 1
    from hillflow import acceptance
    with pytest.raises(ConfigError):
        acceptance.run_criteria([0])
