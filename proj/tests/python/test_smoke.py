import math
import os

import numpy as np
import pytest

import fibsim

REPO = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def test_psf_and_linewidth_conversions():
    assert fibsim.psf_sigma(1.3, 737.0) == pytest.approx(122.8, rel=1e-3)
    assert fibsim.lifetime_limited_linewidth_mhz(1.7) == pytest.approx(93.62, rel=1e-3)
    with pytest.raises(fibsim.DomainError):
        fibsim.psf_sigma(0.0, 737.0)


def test_ion_sampling_is_seeded():
    a = fibsim.sample_ion_positions((0.0, 0.0), 500, seed=3)
    b = fibsim.sample_ion_positions((0.0, 0.0), 500, seed=3)
    assert a.shape == (500, 3)
    assert np.array_equal(a, b)
    assert 15.0 < a[:, 0].std() < 35.0


def test_image_localize_and_register():
    xs, ys = np.meshgrid(np.arange(3) * 1000.0, np.arange(3) * 1000.0)
    truth = np.column_stack([xs.ravel(), ys.ravel()])
    counts, origin, warnings = fibsim.render_confocal(truth, lo=(-800, -800), hi=(2800, 2800), seed=4)
    assert warnings == []
    sites = fibsim.localize_sites(counts, origin, 50.0)
    assert len(sites) == 9
    found = np.array([[s["x_nm"], s["y_nm"]] for s in sites])
    grid = fibsim.fit_affine_grid(found, 1000.0)
    assert max(grid["distances_nm"]) < 30.0


def test_campaign_from_config_file(tmp_path):
    config = os.path.join(REPO, "data", "configs", "fig2.json")
    report = fibsim.run_campaign("array", config_path=config, seed=7, jobs=2)
    assert report.summary["ground_truth"]["sites"] == 196
    report.persist(str(tmp_path / "run"))
    assert fibsim.load_report(str(tmp_path / "run")) == report


def test_g2_round_trip():
    tau, value, sigma = fibsim.synth_g2(total_counts=1e6)
    fit = fibsim.fit_g2(tau, value, sigma)
    assert fit["g2_zero"] == pytest.approx(0.38, abs=0.02)
    assert fit["is_single"]


def test_rayleigh_and_line():
    rng = np.random.default_rng(1)
    d = np.hypot(rng.normal(0, 25.5, 5000), rng.normal(0, 25.5, 5000))
    assert fibsim.fit_rayleigh(d)["sigma_nm"] == pytest.approx(25.5, rel=0.03)
    x = np.linspace(-100, 100, 201)
    y = 1000 * np.exp(-4 * math.log(2) * x**2 / 30.0**2) + 5
    assert fibsim.fit_line(x, y, "gaussian")["fwhm"] == pytest.approx(30.0, rel=1e-6)


def test_protocol():
    s = fibsim.run_conditional_protocol(20.0, eta=0.01, trials=20000, seed=2)
    assert s["exact_given_halted"] == pytest.approx(0.2 * math.exp(-0.2) / (1 - math.exp(-0.2)), abs=0.01)


def test_campaign_persist_and_reload(tmp_path):
    cfg = fibsim.default_config()
    cfg["array"].update(columns=4, rows=4)
    report = fibsim.run_campaign("array", cfg, seed=9)
    assert report.kind == "array"
    assert "sites.csv" in report.tables
    report.persist(str(tmp_path))
    loaded = fibsim.load_report(str(tmp_path))
    assert loaded == report
    assert loaded.summary == report.summary
    again = fibsim.run_campaign("array", cfg, seed=9, jobs=2)
    assert again.manifest(False) == report.manifest(False)


def test_bad_config_raises():
    with pytest.raises(fibsim.ParseError):
        fibsim.run_campaign("array", {"array": {"bogus": 1}})
