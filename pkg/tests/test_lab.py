import json

import numpy as np
import pytest

from tubelab import assembly, geometry, lab, oracles
from tubelab.errors import AcceptanceError, ValidationError


def circle():
    return geometry.circle_in_plane(1.0)


def small_cfg(**kw):
    """Desk-size circle study: coarse grids, short ladder."""
    kw.setdefault("epsilons", (0.2, 0.1, 0.05))
    kw.setdefault("k", 2)
    kw.setdefault("n_x", 64)
    kw.setdefault("n_fiber", 8)
    kw.setdefault("limit_n_x", 128)
    kw.setdefault("tol", 1e-6)
    return lab.study_config(circle(), **kw)


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults_per_kind():
    cfg = lab.study_config(circle())
    assert (cfg.n_x, cfg.n_fiber) == (256, 32)
    assert cfg.epsilons == lab.EPS_LADDER
    assert cfg.alpha == "auto"
    sph = lab.study_config(geometry.sphere_in_r3(1.0))
    assert (sph.n_x, sph.n_fiber, sph.limit_n_x) == (48, 12, 512)


def test_config_ladder_autoscale():
    # a narrow tube radius pulls the whole ladder down proportionally
    geom = geometry.space_curve(0.3, 0.2)
    cfg = lab.study_config(geom)
    top = cfg.epsilons[0]
    assert top == pytest.approx(0.5 * geometry.eps_max(geom))
    ratios = np.array(cfg.epsilons) / np.array(lab.EPS_LADDER)
    assert np.allclose(ratios, ratios[0])


def test_config_validation():
    with pytest.raises(ValidationError):
        lab.study_config(circle(), epsilons=(0.2,))
    with pytest.raises(ValidationError):
        lab.study_config(circle(), epsilons=(0.1, 0.2))
    with pytest.raises(ValidationError):
        lab.study_config(circle(), epsilons=(0.5, 0.2))  # above eps_max
    with pytest.raises(ValidationError):
        lab.study_config(circle(), epsilons=(0.2, 0.0))
    with pytest.raises(ValidationError):
        lab.study_config(circle(), k=0)
    with pytest.raises(ValidationError):
        lab.study_config(circle(), k=21)
    with pytest.raises(ValidationError):
        lab.study_config(circle(), alpha=float("nan"))
    with pytest.raises(ValidationError):
        lab.study_config(circle(), refine=1.0)
    with pytest.raises(ValidationError):
        lab.study_config(circle(), threads=0)


# ---------------------------------------------------------------------------
# ladder contract on synthetic rows


def row(eps, k, err, limited=False):
    return lab.EigenRow(
        epsilon=eps, k=k, lambda_eps=0.0, mu_limit=0.0, abs_err=err,
        grid_nx=8, grid_nfiber=4, lambda0_h=0.0, lambda_refined=0.0,
        grid_delta=err / 10, grid_limited=limited, flag_reason="")


def ladder(errs, limited=()):
    eps = (0.2, 0.1, 0.05)[: len(errs)]
    return [row(e, 0, v, i in limited)
            for i, (e, v) in enumerate(zip(eps, errs))]


def test_contract_accepts_decreasing():
    cfg = small_cfg()
    rows = lab._enforce_ladder_contract(cfg, ladder([1e-2, 5e-3, 1e-3]))
    assert all(not r.grid_limited for r in rows)


def test_contract_flags_single_rise():
    cfg = small_cfg()
    rows = lab._enforce_ladder_contract(cfg, ladder([1e-2, 2e-2, 1e-3]))
    assert rows[1].flag_reason == "non-monotone"
    assert rows[0].flag_reason == "" and rows[2].flag_reason == ""


def test_contract_rejects_double_rise():
    cfg = small_cfg(epsilons=(0.2, 0.15, 0.1, 0.05))
    rows = ladder([1e-3, 2e-3, 1e-3, 2e-3])
    rows.append(row(0.04, 0, 3e-3))
    with pytest.raises(AcceptanceError):
        lab._enforce_ladder_contract(cfg, rows)


def test_contract_final_bound():
    cfg = small_cfg(final_abs_err=1e-3)
    with pytest.raises(AcceptanceError, match="final-ladder"):
        lab._enforce_ladder_contract(cfg, ladder([1e-2, 5e-3, 2e-3]))


def test_contract_requires_strict_shrink():
    cfg = small_cfg()
    # one mid-ladder rise is tolerated, but the endpoints must still shrink
    with pytest.raises(AcceptanceError, match="did not shrink"):
        lab._enforce_ladder_contract(cfg, ladder([1e-3, 2e-3, 1e-3]))


def test_contract_skips_grid_limited_rows():
    cfg = small_cfg()
    # the rise sits on a flagged row, the strict check endpoint is flagged
    rows = ladder([1e-3, 2e-3, 1e-3], limited={1, 2})
    out = lab._enforce_ladder_contract(cfg, rows)
    assert out[1].grid_limited


def test_contract_noise_floor_exemption():
    cfg = small_cfg()
    # renormalization-exact mode: errors at solver noise, no trend to assert
    errs = [3e-10, 8e-10, 4e-10]
    out = lab._enforce_ladder_contract(cfg, ladder(errs))
    assert [r.abs_err for r in out] == errs


# ---------------------------------------------------------------------------
# eigenvalue study


@pytest.fixture(scope="module")
def circle_report():
    return lab.eigenvalue_convergence_study(small_cfg())


def test_study_rows_and_limit(circle_report):
    rep = circle_report
    assert len(rep.rows) == 3 * 2
    mu = np.array([r.mu_limit for r in rep.rows[:2]])
    assert np.abs(mu - [-0.25, 0.75]).max() < 1e-6
    assert rep.metadata["limit_oracle"] == "closed-form"
    assert rep.metadata["limit_oracle_deviation"] <= 1e-6


def test_study_errors_shrink(circle_report):
    errs = {j: [r.abs_err for r in circle_report.rows if r.k == j]
            for j in (0, 1)}
    for j, seq in errs.items():
        assert seq[-1] < seq[0]
        assert seq[-1] <= 0.05


def test_study_reports_tube_oracle(circle_report):
    oracle = circle_report.metadata["tube_oracle"]
    assert set(oracle) == {repr(e) for e in (0.2, 0.1, 0.05)}
    for entry in oracle.values():
        assert len(entry["values"]) == 2
        # solver and separable oracle agree to grid scale
        assert max(entry["solver_vs_oracle"]) < 5e-2


def test_study_slopes(circle_report):
    slopes = circle_report.slopes["eigenvalue"]
    assert slopes[0] is not None and slopes[0] > 1.5


def test_study_threaded_matches_serial(circle_report):
    rep2 = lab.eigenvalue_convergence_study(small_cfg(threads=3))
    a = [(r.epsilon, r.k, r.lambda_eps) for r in circle_report.rows]
    b = [(r.epsilon, r.k, r.lambda_eps) for r in rep2.rows]
    assert a == b


def test_limit_side_gate(monkeypatch):
    cfg = small_cfg()
    real = oracles.richardson_limit

    def skewed(geom, n_x, k, alpha=0.0):
        return real(geom, n_x, k, alpha) + 1e-4

    monkeypatch.setattr(oracles, "richardson_limit", skewed)
    with pytest.raises(AcceptanceError, match="closed form"):
        lab.eigenvalue_convergence_study(cfg)


def test_limit_side_self_consistency():
    geom = geometry.space_curve(0.3, 0.2)
    cfg = lab.study_config(geom, k=2, limit_n_x=256)
    mu = oracles.richardson_limit(geom, 256, 2, alpha=0.0)
    meta = {}
    lab._verify_limit_side(cfg, mu, meta)
    assert meta["limit_oracle"] == "self-consistency"
    assert meta["limit_oracle_deviation"] <= 1e-6


# ---------------------------------------------------------------------------
# semigroup study


def test_semigroup_time_domain():
    cfg = small_cfg()
    with pytest.raises(ValidationError):
        lab.semigroup_convergence_study(cfg, times=(0.05, 1.0))
    with pytest.raises(ValidationError):
        lab.semigroup_convergence_study(cfg, datum="bogus")


def test_semigroup_ladder():
    cfg = small_cfg(k=4)
    rep = lab.semigroup_convergence_study(cfg, times=(0.5, 2.0))
    assert len(rep.semigroup_rows) == 3 * 2
    for t in (0.5, 2.0):
        errs = [r["err"] for r in rep.semigroup_rows if r["t"] == t]
        assert errs == sorted(errs, reverse=True)
    assert rep.metadata["perturbation_drift"] <= 1e-3


# ---------------------------------------------------------------------------
# inequality checks


def test_kato_check_passes_on_circle():
    cfg = small_cfg()
    rep = lab.kato_check(cfg, samples=20)
    assert len(rep.kato_rows) == 3
    for r in rep.kato_rows:
        assert np.isfinite(r["ratio"]) and r["ratio"] >= 0
        assert np.isfinite(r["ratio_e0"]) and r["ratio_e0"] >= 0
    assert np.isfinite(rep.metadata["K_hat"])
    assert rep.slopes["kato"] >= -0.2


def test_kato_alpha_precondition():
    cfg = small_cfg(alpha=1.0)  # below the fiber ground eigenvalue pi^2/4
    with pytest.raises(ValidationError):
        lab.kato_check(cfg, samples=3)


def test_kato_gate_precondition():
    base = small_cfg()
    cfg = lab.StudyConfig(**{**base.__dict__, "epsilons": (0.8, 0.76)})
    with pytest.raises(ValidationError, match="gate"):
        lab.kato_check(cfg, samples=3)


def test_coercivity_check_passes_on_circle():
    cfg = small_cfg()
    rep = lab.coercivity_check(cfg, samples=20)
    for r in rep.coercivity_rows:
        assert r["min_margin_induced"] > 0
        assert r["min_margin_reference"] > 0


def test_coercivity_alpha_precondition():
    cfg = small_cfg(alpha=2.0)  # above lambda_0 but below the floor
    with pytest.raises(ValidationError, match="floor"):
        lab.coercivity_check(cfg, samples=3)


# ---------------------------------------------------------------------------
# asymptotic orders


def test_asymptotics_circle():
    rep = lab.asymptotics_check(circle())
    slopes = rep.slopes["asymptotics"]
    assert set(slopes) == {"dual_metric", "density", "log_density_gradient",
                           "potential"}
    for v in slopes.values():
        assert v >= 0.9


def test_asymptotics_flat_tube_identically_zero():
    geom = geometry.plane_curve(np.zeros(8), 5.0)
    rep = lab.asymptotics_check(geom)
    assert all(r["sup_value"] == 0.0 for r in rep.asymptotic_rows)
    assert all(v == np.inf for v in rep.slopes["asymptotics"].values())


# ---------------------------------------------------------------------------
# writers


def test_fmt_round_trip():
    assert lab._fmt(True) == "1" and lab._fmt(False) == "0"
    assert lab._fmt(42) == "42"
    x = 0.1 + 0.2
    assert float(lab._fmt(x)) == x  # 17 significant digits are lossless


def test_csv_schema_and_determinism(circle_report, tmp_path):
    lab.write_table_csv(circle_report, tmp_path / "a.csv")
    lab.write_table_csv(circle_report, tmp_path / "b.csv")
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    assert b"\r" not in a
    header = a.decode().splitlines()[0]
    assert header == "epsilon,k,lambda_eps,mu_limit,abs_err,grid_nx,grid_nfiber,lambda0_h"
    assert len(a.decode().splitlines()) == 1 + len(circle_report.rows)


def test_write_report_files(circle_report, tmp_path):
    written = lab.write_report(circle_report, tmp_path, plot=True)
    assert written == ["table.csv", "report.json", "error_ladder.svg"]
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["metadata"]["geometry"] == "CircleInPlane"
    assert len(payload["rows"]) == len(circle_report.rows)


def test_write_report_serializes_infinite_slope(tmp_path):
    rep = lab.asymptotics_check(geometry.plane_curve(np.zeros(8), 5.0))
    lab.write_report(rep, tmp_path)
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["slopes"]["asymptotics"]["potential"] == "inf"
    assert (tmp_path / "asymptotics.csv").read_bytes().startswith(
        b"quantity,epsilon,sup_value\n")
