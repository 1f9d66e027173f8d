import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptmix.errors import ConfigError
from conceptmix.oracle import epsilon
from conceptmix.sampler import (
    GuidanceConfig,
    GuidanceMode,
    SamplerState,
    cfg_step,
    cfgpp_step,
    ddim_step,
    guided_denoised,
    guided_epsilon,
    guided_step,
    initial_state,
    renoise,
    tweedie_denoise,
)


def test_initial_state_is_seeded(schedule):
    a = initial_state(schedule, (4, 4, 3), 7)
    b = initial_state(schedule, (4, 4, 3), 7)
    c = initial_state(schedule, (4, 4, 3), 8)
    assert a.t == 50 and a.seed == 7
    np.testing.assert_array_equal(a.z, b.z)
    assert not np.array_equal(a.z, c.z)
    np.testing.assert_array_equal(a.z, np.random.default_rng(7).standard_normal((4, 4, 3)))


def test_tweedie_and_renoise_are_inverse(schedule, rng):
    x0, eps = rng.standard_normal((2, 5, 5, 1))
    for t in (1, 20, 50):
        z = renoise(x0, t, eps, schedule)
        np.testing.assert_allclose(tweedie_denoise(z, t, eps, schedule), x0, atol=1e-10)


def test_ddim_step_scalar_oracle(schedule, rng):
    z, e1, e2 = rng.standard_normal((3, 3, 3, 1))
    t = 31
    ab, abp = schedule.alpha_bar(t), schedule.alpha_bar(t - 1)
    out = ddim_step(z, t, e1, e2, schedule)
    for idx in np.ndindex(z.shape):
        x0 = (z[idx] - math.sqrt(1 - ab) * e1[idx]) / math.sqrt(ab)
        assert out[idx] == pytest.approx(math.sqrt(abp) * x0 + math.sqrt(1 - abp) * e2[idx], abs=1e-13)


def test_ddim_step_to_zero_returns_denoised(schedule, rng):
    z, eps = rng.standard_normal((2, 3, 3, 1))
    np.testing.assert_array_equal(ddim_step(z, 1, eps, eps, schedule), tweedie_denoise(z, 1, eps, schedule))


def test_shape_and_range_errors(schedule, rng):
    z = rng.standard_normal((3, 3, 1))
    with pytest.raises(ValueError):
        tweedie_denoise(z, 3, np.zeros((3, 4, 1)), schedule)
    with pytest.raises(IndexError):
        tweedie_denoise(z, 0, z, schedule)
    with pytest.raises(IndexError):
        ddim_step(z, 0, z, z, schedule)


def test_guidance_config_validation():
    assert GuidanceConfig().mode is GuidanceMode.CFG_PP and GuidanceConfig().scale == 0.6
    with pytest.raises(ConfigError):
        GuidanceConfig("cfg", 0.5)
    with pytest.raises(ConfigError):
        GuidanceConfig("cfg_pp", 1.5)
    with pytest.raises(ConfigError):
        GuidanceConfig("cfg_pp", 0.0)


def test_guided_epsilon_uses_base_for_unconditional(models, conds, rng):
    base, cat, _ = models
    z = rng.standard_normal(base.shape)
    g, u = guided_epsilon(base, cat, z, 10, conds["cat"], 0.4)
    eu = epsilon(base, z, 10, conds["null"])
    ec = epsilon(cat, z, 10, conds["cat"])
    np.testing.assert_array_equal(u, eu)
    np.testing.assert_allclose(g, eu + 0.4 * (ec - eu), atol=1e-14)
    with pytest.raises(ValueError):
        guided_epsilon(base, cat, z, 10, conds["null"], 0.4)


def test_cfg_unit_scale_is_conditional_step(models, conds, rng, schedule):
    base = models[0]
    state = SamplerState(rng.standard_normal(base.shape), 30)
    ec = epsilon(base, state.z, 30, conds["mul"])
    expected = ddim_step(state.z, 30, ec, ec, schedule)
    assert np.abs(cfg_step(state, base, base, conds["mul"], 1.0, schedule).z - expected).max() <= 1e-12


def test_cfgpp_zero_scale_is_unconditional_step(models, conds, rng, schedule):
    base = models[0]
    state = SamplerState(rng.standard_normal(base.shape), 30)
    eu = epsilon(base, state.z, 30, conds["null"])
    expected = ddim_step(state.z, 30, eu, eu, schedule)
    assert np.abs(cfgpp_step(state, base, base, conds["mul"], 0.0, schedule).z - expected).max() <= 1e-12


def test_cfgpp_is_affine_in_scale(models, conds, rng, schedule):
    base = models[0]
    state = SamplerState(rng.standard_normal(base.shape), 25)
    step = lambda lam: cfgpp_step(state, base, base, conds["cat"], lam, schedule).z
    mid = 0.5 * (step(0.2) + step(0.8))
    assert np.abs(step(0.5) - mid).max() <= 1e-10


def test_guided_step_dispatch(models, conds, rng, schedule):
    base, cat, _ = models
    state = SamplerState(rng.standard_normal(base.shape), 12)
    np.testing.assert_array_equal(
        guided_step(state, base, cat, conds["cat"], GuidanceConfig("cfg_pp", 0.6), schedule).z,
        cfgpp_step(state, base, cat, conds["cat"], 0.6, schedule).z,
    )
    np.testing.assert_array_equal(
        guided_step(state, base, cat, conds["cat"], GuidanceConfig("cfg", 3.0), schedule).z,
        cfg_step(state, base, cat, conds["cat"], 3.0, schedule).z,
    )
    ec = epsilon(cat, state.z, 12, conds["cat"])
    none = guided_step(state, base, cat, conds["cat"], GuidanceConfig("none", 1.0), schedule)
    np.testing.assert_array_equal(none.z, ddim_step(state.z, 12, ec, ec, schedule))
    assert none.t == 11


def test_guided_denoised_matches_tweedie(models, conds, rng, schedule):
    base = models[0]
    z = rng.standard_normal(base.shape)
    g, _ = guided_epsilon(base, base, z, 40, conds["mul"], 0.6)
    np.testing.assert_array_equal(guided_denoised(base, base, z, 40, conds["mul"], 0.6, schedule),
                                  tweedie_denoise(z, 40, g, schedule))


def test_full_cfgpp_trajectory_lands_near_a_template(models, conds, schedule):
    base = models[0]
    state = initial_state(schedule, base.shape, 3)
    while state.t > 0:
        state = cfgpp_step(state, base, base, conds["mul"], 1.0, schedule)
    dists = [np.abs(state.z - base.templates[i].image).max() for i in base.select(conds["mul"])]
    assert min(dists) < 0.25


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(0.0, 1.0), mu=st.floats(0.0, 1.0), t=st.integers(2, 50))
def test_cfgpp_affinity_property(schedule, lam, mu, t):
    from .conftest import tiny_models
    from conceptmix.oracle import ConditionSpec

    base = tiny_models(schedule)[0]
    state = SamplerState(np.random.default_rng(t).standard_normal(base.shape), t)
    cond = ConditionSpec.multi(["cat", "dog"])
    step = lambda s: cfgpp_step(state, base, base, cond, s, schedule).z
    mid = step(0.5 * (lam + mu))
    assert np.abs(mid - 0.5 * (step(lam) + step(mu))).max() <= 1e-9
