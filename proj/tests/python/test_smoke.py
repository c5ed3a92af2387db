import json

import numpy as np
import pytest

import didsnmm


@pytest.fixture(scope="module")
def coarse():
    cfg = didsnmm.gallery("coarse-staggered")
    panel = didsnmm.simulate(cfg, 3000, seed=11)
    return cfg, panel


def test_gallery_lists_shipped_configs():
    names = didsnmm.gallery_names()
    assert "coarse-staggered" in names and "optimal-regime" in names
    assert didsnmm.gallery("null")["effect"]["psi"] == [0.0] * 7


def test_simulate_is_deterministic(coarse):
    cfg, panel = coarse
    again = didsnmm.simulate(cfg, 3000, seed=11)
    assert panel.to_csv() == again.to_csv()
    assert panel.n == 3000 and panel.K == 3
    a = panel.treatment("a")
    assert np.all(np.diff(a, axis=1) >= 0)  # staggered adoption


def test_csv_round_trip(coarse):
    _, panel = coarse
    back = didsnmm.Panel.parse_csv(panel.to_csv())
    np.testing.assert_array_equal(back.outcomes(), panel.outcomes())


def test_closed_form_matches_iterative(coarse):
    cfg, panel = coarse
    a = didsnmm.fit(panel, cfg["analysis_model"], cfg["analysis_nuisance"], "closed-form")
    b = didsnmm.fit(panel, cfg["analysis_model"], cfg["analysis_nuisance"], "iterative")
    np.testing.assert_allclose(a.psi, b.psi, atol=1e-8)
    assert a.covariance.shape == (len(a.psi), len(a.psi))
    assert a.to_dict()["method"] == "closed-form"


def test_fit_recovers_truth_roughly(coarse):
    cfg, panel = coarse
    f = didsnmm.fit(panel, cfg["analysis_model"], cfg["analysis_nuisance"], "crossfit")
    z = (f.psi - np.array(cfg["effect"]["psi"])) / f.se
    assert np.max(np.abs(z)) < 4.5


def test_zero_bias_is_bitwise_unadjusted(coarse):
    cfg, panel = coarse
    a = didsnmm.fit(panel, cfg["analysis_model"], cfg["analysis_nuisance"])
    b = didsnmm.fit(panel, cfg["analysis_model"], cfg["analysis_nuisance"], bias={"family": "constant", "c0": 0.0})
    assert np.array_equal(a.psi, b.psi)


def test_observed_vs_never_decomposes(coarse):
    cfg, panel = coarse
    f = didsnmm.fit(panel, cfg["analysis_model"], cfg["analysis_nuisance"])
    k = panel.K
    never = f.query({"target": "mean_never_treated", "k": k})
    diff = f.query({"target": "observed_vs_never", "k": k})
    observed = panel.outcomes()[:, k].mean()
    assert diff["estimate"] == pytest.approx(observed - never["estimate"], abs=1e-9)


def test_sensitivity_and_regime_run():
    cfg = didsnmm.gallery("coarse-staggered")
    panel = didsnmm.simulate(cfg, 1500, seed=3)
    s = didsnmm.sensitivity(panel, cfg["analysis_model"], cfg["analysis_nuisance"], grid=[-0.5, 0.0, 0.5])
    assert [p["c0"] for p in s["points"]] == [-0.5, 0.0, 0.5]
    assert s["affinity_residual"] < 1e-8

    rcfg = didsnmm.gallery("optimal-regime")
    rp = didsnmm.simulate(rcfg, 1500, seed=5)
    r = didsnmm.optimal_regime(rp, rcfg["analysis_model"], rcfg["analysis_nuisance"])
    assert np.isfinite(r["value"]["estimate"])
    assert len(r["decision_table"]) > 0


def test_config_errors_raise(coarse):
    _, panel = coarse
    with pytest.raises(didsnmm.ConfigError):
        didsnmm.fit(panel, {"flavor": "nope"})
    with pytest.raises(didsnmm.ConfigError):
        didsnmm.simulate("no-such-dgp", 10)
