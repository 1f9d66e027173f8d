"""Independent numerical validations of the analytic denoisers.

These do not reuse the closed-form code paths they test:

* the score is compared with central finite differences of an explicit
  ``logsumexp`` mixture log-density;
* the posterior mean is compared with a self-normalized importance-sampling
  estimate that draws clean images from the prior;
* a one-template library without smearing must return its template exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .oracle import ConditionSpec, Template, TemplateMixtureModel, epsilon, posterior_mean
from .schedule import NoiseSchedule, build_schedule
from .segmentation import signatures_separated

FD_STEP = 1e-5
FD_TOL = 1e-4
MC_DRAWS = 1_000_000
MC_SIGMAS = 3.0
EXACT_TOL = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class CheckReport:
    results: list[CheckResult] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def add(self, name: str, passed: bool, detail: str) -> None:
        self.results.append(CheckResult(name, bool(passed), detail))

    def lines(self) -> list[str]:
        out = [f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}" for r in self.results]
        out += [f"WARN  {w}" for w in self.warnings]
        return out


def _components(model: TemplateMixtureModel, cond: ConditionSpec) -> tuple[np.ndarray, np.ndarray]:
    idx = model.select(cond)
    means = np.stack([model.templates[i].image.reshape(-1) for i in idx])
    w = np.array([model.templates[i].weight for i in idx])
    return means, w / w.sum()


def log_density(model: TemplateMixtureModel, z: np.ndarray, t: int, cond: ConditionSpec) -> float:
    """log p_t(z | cond) of the noised mixture, normalizing constant included."""
    means, w = _components(model, cond)
    abar = model.schedule.alpha_bar(t)
    var = abar * model.data_sigma**2 + (1.0 - abar)
    zf = np.asarray(z, dtype=np.float64).reshape(-1)
    d = zf.size
    sq = ((zf[None, :] - math.sqrt(abar) * means) ** 2).sum(axis=1)
    return float(logsumexp(np.log(w) - sq / (2 * var)) - 0.5 * d * math.log(2 * math.pi * var))


def fd_epsilon(
    model: TemplateMixtureModel,
    z: np.ndarray,
    t: int,
    cond: ConditionSpec,
    step: float = FD_STEP,
    directions: np.ndarray | None = None,
) -> np.ndarray:
    """``-sqrt(1 - abar) * grad log p_t`` by central differences.

    With ``directions`` (rows of unit vectors) the directional derivatives are
    returned instead of the full gradient.
    """
    zf = np.asarray(z, dtype=np.float64).reshape(-1)
    basis = np.eye(zf.size) if directions is None else np.asarray(directions, dtype=np.float64)
    grad = np.empty(len(basis))
    for i, v in enumerate(basis):
        up = log_density(model, (zf + step * v).reshape(z.shape), t, cond)
        down = log_density(model, (zf - step * v).reshape(z.shape), t, cond)
        grad[i] = (up - down) / (2 * step)
    out = -math.sqrt(1.0 - model.schedule.alpha_bar(t)) * grad
    return out.reshape(z.shape) if directions is None else out


def _noisy_sample(model, t, cond, rng):
    means, w = _components(model, cond)
    k = rng.choice(len(w), p=w)
    x0 = means[k] + model.data_sigma * rng.standard_normal(means.shape[1])
    abar = model.schedule.alpha_bar(t)
    z = math.sqrt(abar) * x0 + math.sqrt(1 - abar) * rng.standard_normal(means.shape[1])
    return z.reshape(model.shape)


def check_score(
    report: CheckReport,
    model: TemplateMixtureModel,
    cond: ConditionSpec,
    timesteps: Sequence[int],
    seed: int = 0,
    tol: float = FD_TOL,
    num_directions: int | None = None,
    label: str = "",
) -> float:
    """Finite-difference score check at points drawn from each noisy marginal.

    Returns the worst absolute error seen.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in timesteps:
        z = _noisy_sample(model, t, cond, rng)
        eps = epsilon(model, z, t, cond)
        if num_directions is None:
            err = float(np.abs(fd_epsilon(model, z, t, cond) - eps).max())
        else:
            dirs = rng.standard_normal((num_directions, z.size))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            err = float(np.abs(fd_epsilon(model, z, t, cond, directions=dirs) - dirs @ eps.reshape(-1)).max())
        worst = max(worst, err)
    kind = "full gradient" if num_directions is None else f"{num_directions} directions"
    report.add(f"score {label}".strip(), worst <= tol,
               f"max |eps - fd| = {worst:.2e} over t={list(timesteps)} ({kind}, tol {tol:g})")
    return worst


def mc_posterior_mean(
    model: TemplateMixtureModel,
    z: np.ndarray,
    t: int,
    cond: ConditionSpec,
    draws: int = MC_DRAWS,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Importance-sampling estimate of E[x0 | z_t], its standard error and the effective sample size.

    Proposals are prior draws; weights are the Gaussian likelihood of ``z``.
    Weighted moments are accumulated chunk by chunk with a running log-scale,
    so memory does not grow with ``draws``.
    """
    means, w = _components(model, cond)
    rng = np.random.default_rng(seed)
    abar = model.schedule.alpha_bar(t)
    a, var = math.sqrt(abar), 1.0 - abar
    zf = np.asarray(z, dtype=np.float64).reshape(-1)
    chunk = max(1000, 4_000_000 // zf.size)
    ref = -math.inf
    s_w = s_w2 = 0.0
    s_wx = np.zeros_like(zf)
    s_w2x = np.zeros_like(zf)
    s_w2x2 = np.zeros_like(zf)
    for start in range(0, draws, chunk):
        n = min(chunk, draws - start)
        k = rng.choice(len(w), size=n, p=w)
        x0 = means[k]
        if model.data_sigma > 0:
            x0 = x0 + model.data_sigma * rng.standard_normal(x0.shape)
        logw = -((zf - a * x0) ** 2).sum(axis=1) / (2 * var)
        new_ref = max(ref, float(logw.max()))
        if new_ref > ref:
            r = math.exp(ref - new_ref) if ref > -math.inf else 0.0
            s_w *= r
            s_wx *= r
            s_w2 *= r * r
            s_w2x *= r * r
            s_w2x2 *= r * r
            ref = new_ref
        wt = np.exp(logw - ref)
        s_w += wt.sum()
        s_wx += wt @ x0
        s_w2 += (wt**2).sum()
        s_w2x += (wt**2) @ x0
        s_w2x2 += (wt**2) @ (x0**2)
    est = s_wx / s_w
    # sum_i w_i^2 (x_i - est)^2 / (sum_i w_i)^2
    var_est = np.maximum(s_w2x2 - 2 * est * s_w2x + est**2 * s_w2, 0.0) / s_w**2
    ess = s_w**2 / s_w2
    return est.reshape(z.shape), np.sqrt(var_est).reshape(z.shape), float(ess)


def mc_limit(num_tests: int, sigmas: float = MC_SIGMAS) -> float:
    """Per-coordinate z-score limit with Bonferroni correction over ``num_tests``.

    Equals ``sigmas`` for a single test.
    """
    return float(norm.isf(norm.sf(sigmas) / num_tests))


def check_posterior_mc(
    report: CheckReport,
    model: TemplateMixtureModel,
    cond: ConditionSpec,
    timesteps: Sequence[int],
    draws: int = MC_DRAWS,
    seed: int = 0,
    sigmas: float = MC_SIGMAS,
    label: str = "",
) -> None:
    rng = np.random.default_rng(seed)
    worst, min_ess = 0.0, math.inf
    limit = mc_limit(len(timesteps) * int(np.prod(model.shape)), sigmas)
    for i, t in enumerate(timesteps):
        z = _noisy_sample(model, t, cond, rng)
        est, se, ess = mc_posterior_mean(model, z, t, cond, draws, seed + 1 + i)
        exact = posterior_mean(model, z, t, cond)
        # a floor keeps coordinates where every draw agrees from demanding exact equality
        worst = max(worst, float((np.abs(est - exact) / np.maximum(se, 1e-12)).max()))
        min_ess = min(min_ess, ess)
    report.add(f"posterior mean MC {label}".strip(), worst <= limit,
               f"max error {worst:.2f} SE over t={list(timesteps)} ({draws} draws, min ESS {min_ess:.0f}, "
               f"limit {limit:.2f} SE)")


def check_single_template(report: CheckReport, template: np.ndarray, schedule: NoiseSchedule,
                          seed: int = 0, label: str = "") -> None:
    """K=1, no smearing: the posterior mean is the template at every step."""
    model = TemplateMixtureModel(0, [Template(template, 1.0, frozenset({"x"}))], schedule, data_sigma=0.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(1, schedule.num_steps + 1):
        z = rng.standard_normal(template.shape)
        worst = max(worst, float(np.abs(posterior_mean(model, z, t, ConditionSpec.null()) - template).max()))
    report.add(f"single-template exactness {label}".strip(), worst <= EXACT_TOL,
               f"max |x0 - template| = {worst:.1e} over t=1..{schedule.num_steps}")


def fixture_model(shape=(8, 8, 1), k: int = 3, data_sigma: float = 0.1, seed: int = 0,
                  schedule: NoiseSchedule | None = None) -> TemplateMixtureModel:
    """Random-template mixture used by the built-in suites."""
    rng = np.random.default_rng(seed)
    schedule = schedule or build_schedule("linear", 50, 1e-4, 0.2)
    templates = [
        Template(rng.uniform(0, 1, shape), float(rng.uniform(0.5, 2.0)), frozenset({"x"}), name=f"fixture{i}")
        for i in range(k)
    ]
    return TemplateMixtureModel(0, templates, schedule, data_sigma)


def builtin_suite(report: CheckReport | None = None, mc_draws: int = MC_DRAWS) -> CheckReport:
    """Library-independent checks on small fixture grids."""
    report = report or CheckReport()
    null = ConditionSpec.null()
    fd = fixture_model((8, 8, 1), 3, 0.1)
    check_score(report, fd, null, (1, 10, 25, 40, 50), label="[8x8 K=3]")
    small = fixture_model((2, 2, 1), 3, 0.1, seed=1)
    check_posterior_mc(report, small, null, (10, 30, 50), draws=mc_draws, label="[2x2 K=3]")
    check_single_template(report, fd.templates[0].image, fd.schedule, label="[8x8 K=1]")
    return report


def config_suite(config, report: CheckReport | None = None, mc_draws: int = 50_000,
                 directions: int = 8) -> CheckReport:
    """Checks on every configured library under every condition it resolves."""
    from .errors import ConditionResolutionError

    report = report or CheckReport()
    sigs = list(config.segmentation.signatures)
    report.warnings += signatures_separated(sigs, config.segmentation.tau)
    conds = [config.content_condition] + [b.condition for b in config.bindings]
    T = config.schedule.num_steps
    timesteps = sorted({1, T // 4, T // 2, 3 * T // 4, T})
    for mid, model in sorted(config.models.items()):
        for cond in dict.fromkeys(conds):
            try:
                active = model.select(cond)
            except ConditionResolutionError:
                continue
            label = f"[model {mid}, {cond}]"
            check_score(report, model, cond, timesteps, num_directions=directions, label=label)
            check_posterior_mc(report, model, cond, (T,), draws=mc_draws, label=label)
            if len(active) == 1 and model.data_sigma == 0:
                check_single_template(report, model.templates[active[0]].image, model.schedule, label=label)
    return report

