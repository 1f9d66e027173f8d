import math

import numpy as np
import pytest

from conceptmix.errors import ConfigError
from conceptmix.oracle import ConditionSpec, epsilon, posterior_mean
from conceptmix.resample import ResampleConfig, adjusted_denoised, resample_loop, resample_round
from conceptmix.sampler import guided_epsilon, tweedie_denoise


def _cfg(conds, rounds=1, **kw):
    return ResampleConfig(rounds, conds["mul"], (conds["cat"], conds["dog"]), **kw)


def test_config_validation(conds):
    with pytest.raises(ConfigError):
        ResampleConfig(-1, conds["mul"], (conds["cat"],))
    with pytest.raises(ConfigError):
        ResampleConfig(1, conds["mul"], ())


def test_zero_rounds_returns_input_object(models, conds, schedule, rng):
    z = rng.standard_normal(models[0].shape)
    before = z.copy()
    out = resample_loop(z, models[0], _cfg(conds, 0), schedule)
    assert out is z
    np.testing.assert_array_equal(out, before)


def test_identical_conditions_cancel_exactly(models, conds, schedule, rng):
    base = models[0]
    z = rng.standard_normal(base.shape)
    cfg = ResampleConfig(1, conds["cat"], (conds["cat"], conds["cat"]))
    adj, _ = adjusted_denoised(z, base, cfg, schedule)
    assert np.all(adj == 0.0)


def test_adjusted_denoised_formula(models, conds, schedule, rng):
    base = models[0]
    z = rng.standard_normal(base.shape)
    T = schedule.num_steps
    cfg = _cfg(conds, scale=0.6)

    def xhat(cond):
        g, _ = guided_epsilon(base, base, z, T, cond, 0.6)
        return tweedie_denoise(z, T, g, schedule)

    adj, eps_u = adjusted_denoised(z, base, cfg, schedule)
    np.testing.assert_allclose(adj, 2 * xhat(conds["mul"]) - xhat(conds["cat"]) - xhat(conds["dog"]), atol=1e-12)
    np.testing.assert_array_equal(eps_u, epsilon(base, z, T, ConditionSpec.null()))


def test_round_scalar_oracle(models, conds, schedule, rng):
    base = models[0]
    z = rng.standard_normal(base.shape)
    T = schedule.num_steps
    cfg = _cfg(conds)
    adj, eps_u = adjusted_denoised(z, base, cfg, schedule)
    a1, a0 = schedule.alpha_bar(T - 1), schedule.alpha_bar(T)
    z1 = math.sqrt(a1) * adj + math.sqrt(1 - a1) * eps_u
    eu = epsilon(base, z1, T - 1, ConditionSpec.null())
    ec = epsilon(base, z1, T - 1, conds["mul"])
    g = eu + 0.6 * (ec - eu)
    x0 = (z1 - math.sqrt(1 - a1) * g) / math.sqrt(a1)
    expected = math.sqrt(a0) * x0 + math.sqrt(1 - a0) * g
    np.testing.assert_allclose(resample_round(z, base, cfg, schedule), expected, atol=1e-12)


def test_loop_composes_rounds(models, conds, schedule, rng):
    base = models[0]
    z = rng.standard_normal(base.shape)
    twice = resample_round(resample_round(z, base, _cfg(conds), schedule), base, _cfg(conds), schedule)
    np.testing.assert_array_equal(resample_loop(z, base, _cfg(conds, 2), schedule), twice)


def test_fresh_noise_needs_rng_and_is_seeded(models, conds, schedule, rng):
    base = models[0]
    z = rng.standard_normal(base.shape)
    cfg = _cfg(conds, 3, fresh_noise=True)
    with pytest.raises(ValueError):
        resample_loop(z, base, cfg, schedule)
    a = resample_loop(z, base, cfg, schedule, np.random.default_rng(5))
    b = resample_loop(z, base, cfg, schedule, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_rounds_keep_latent_on_noise_scale(models, conds, schedule):
    """After ten rounds z_T still looks like unit-variance noise, not a blown-up array."""
    base = models[0]
    cfg = _cfg(conds, 10)
    for seed in range(5):
        z = resample_loop(np.random.default_rng(seed).standard_normal(base.shape), base, cfg, schedule)
        assert np.isfinite(z).all()
        assert 0.5 < z.std() < 2.0
        assert np.isfinite(posterior_mean(base, z, schedule.num_steps, conds["null"])).all()
