import numpy as np
import pytest

from conceptmix.checks import (
    CheckReport,
    builtin_suite,
    check_posterior_mc,
    check_score,
    config_suite,
    fixture_model,
    mc_limit,
    mc_posterior_mean,
)
from conceptmix.config import parse_config
from conceptmix.oracle import ConditionSpec, posterior_mean


def test_mc_limit():
    assert mc_limit(1) == pytest.approx(3.0)
    assert mc_limit(1000) > mc_limit(10) > 3.0


def test_builtin_suite_passes():
    report = builtin_suite(mc_draws=200_000)
    assert report.passed, report.lines()
    assert len(report.results) == 3


def test_mc_estimate_agrees_with_closed_form():
    model = fixture_model((2, 2, 1), 3, 0.1, seed=4)
    z = np.random.default_rng(2).standard_normal(model.shape)
    est, se, ess = mc_posterior_mean(model, z, 30, ConditionSpec.null(), draws=300_000, seed=9)
    exact = posterior_mean(model, z, 30, ConditionSpec.null())
    assert ess > 1000
    assert np.all(np.abs(est - exact) <= 4.5 * se)


def test_checks_detect_a_wrong_score(monkeypatch):
    import conceptmix.checks as checks

    model = fixture_model((4, 4, 1), 3, 0.2, seed=5)
    real = checks.epsilon
    monkeypatch.setattr(checks, "epsilon", lambda m, z, t, c: real(m, z, t, c) * 1.01)
    report = CheckReport()
    check_score(report, model, ConditionSpec.null(), (5, 25))
    assert not report.passed


def test_checks_detect_a_wrong_posterior_mean(monkeypatch):
    import conceptmix.checks as checks

    model = fixture_model((2, 2, 1), 3, 0.1, seed=6)
    real = checks.posterior_mean
    monkeypatch.setattr(checks, "posterior_mean", lambda m, z, t, c: real(m, z, t, c) + 0.02)
    report = CheckReport()
    check_posterior_mc(report, model, ConditionSpec.null(), (20,), draws=200_000)
    assert not report.passed


def test_config_suite_on_small_scene(scene):
    scene["models"]["grid"] = [16, 16, 3]
    cfg = parse_config(scene)
    report = config_suite(cfg, mc_draws=20_000, directions=4)
    assert report.passed, report.lines()
    assert report.warnings == []


def test_config_suite_warns_on_close_signatures(scene):
    scene["segmentation"]["signatures"] = {"cat": [0.5, 0.5, 0.5], "dog": [0.55, 0.5, 0.5]}
    report = config_suite(parse_config(scene), mc_draws=5_000, directions=2)
    assert len(report.warnings) == 1 and "'cat'" in report.warnings[0]


def test_single_template_branch(scene):
    scene["models"]["data_sigma"] = 0.0
    scene["models"]["library"].append({"id": 9, "templates": [scene["models"]["library"][1]["templates"][0]]})
    scene["fusion_bindings"]["concepts"][0]["model"] = 9
    report = config_suite(parse_config(scene), mc_draws=5_000, directions=2)
    names = [r.name for r in report.results]
    assert any(n.startswith("single-template exactness [model 9") for n in names)
    assert all(r.passed for r in report.results if "exactness" in r.name)
