"""Sampler self-checks: conditional-vs-joint grid oracle, Geweke joint test, MH rig.

These are slow-ish statistical routines shared by the test-suite and the
``check`` subcommand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import _kernels as K
from .diagnostics import mcse_batch_means
from .gibbs import CONDITIONALS, GAMMA, conditional, gibbs_sweep, init_chain_state, set_value
from .model import (
    SCALAR_NAMES,
    CoexModel,
    EnsembleData,
    InadequacyConfig,
    ModelRuns,
    ParameterState,
    PriorConfig,
    ReanalysisData,
)
from .validation import SyntheticTruth, generate_synthetic

GRID_POINTS = 200


@dataclass(frozen=True)
class OracleResult:
    name: str
    index: int | None
    family: str
    max_rel_error: float


def grid_grid(family: str, a: float, b: float, n: int = GRID_POINTS) -> np.ndarray:
    if family == GAMMA:
        dist = stats.gamma(a, scale=1.0 / b)
        return np.linspace(dist.ppf(1e-6), dist.ppf(0.999999), n)
    sd = 1.0 / math.sqrt(b)
    return np.linspace(a - 6 * sd, a + 6 * sd, n)


def closed_form_logpdf(family: str, a: float, b: float, x: np.ndarray) -> np.ndarray:
    if family == GAMMA:
        return stats.gamma.logpdf(x, a, scale=1.0 / b)
    return stats.norm.logpdf(x, a, 1.0 / math.sqrt(b))


def check_conditional(name: str, state: ParameterState, model: CoexModel, j: int | None = None) -> OracleResult:
    """Compare a closed-form conditional with the normalized joint slice on a grid."""
    family, a, b = conditional(name, state, model, j)
    grid = grid_grid(family, a, b)
    cf = closed_form_logpdf(family, a, b, grid)
    lj = np.array([model.log_joint(set_value(state, name, x, j)) for x in grid])
    cf -= logsumexp(cf)
    lj -= logsumexp(lj)
    err = float(np.max(np.abs(np.expm1(lj - cf))))
    return OracleResult(name, j, family, err)


def random_problem(rng: np.random.Generator) -> tuple[CoexModel, ParameterState]:
    """A random design, informative priors, kappas and a plausible state."""
    m = int(rng.integers(3, 9))
    truth = SyntheticTruth(
        mu_h=rng.normal(0, 5),
        mu_f=rng.normal(3, 5),
        beta=rng.normal(1, 0.5),
        tau_h=rng.gamma(4, 0.25),
        tau_f=rng.gamma(4, 0.5),
        psi2=rng.gamma(4, 0.1),
        theta2=rng.gamma(8, 0.125),
        nu_h=rng.uniform(3, 20),
        nu_f=rng.uniform(3, 20),
        tau_w=rng.gamma(4, 0.5),
        kappa=rng.uniform(1.0, 2.0),
        kappa_w=rng.uniform(1.0, 2.0),
        r_hist=tuple(int(v) for v in rng.integers(1, 5, m)),
        r_fut=tuple(int(v) for v in rng.integers(1, 5, m)),
        n_rean=int(rng.integers(1, 6)),
        model_ids=None,
    )
    data, rean, _ = generate_synthetic(truth, rng.integers(2**32))
    priors = PriorConfig(
        a_mu_h=rng.normal(0, 3),
        b_mu_h=rng.uniform(0.05, 2),
        b_mu_f=rng.uniform(0.05, 2),
        a_beta=rng.normal(1, 0.5),
        b_beta=rng.uniform(0.05, 2),
        a_tau_h=rng.uniform(0.5, 3), b_tau_h=rng.uniform(0.5, 3),
        a_tau_f=rng.uniform(0.5, 3), b_tau_f=rng.uniform(0.5, 3),
        a_psi2=rng.uniform(0.5, 3), b_psi2=rng.uniform(0.5, 3),
        a_theta2=rng.uniform(0.5, 3), b_theta2=rng.uniform(0.5, 3),
        a_nu_h=rng.uniform(1, 3), b_nu_h=rng.uniform(0.05, 0.5),
        a_nu_f=rng.uniform(1, 3), b_nu_f=rng.uniform(0.05, 0.5),
        a_tau_w=rng.uniform(0.5, 3), b_tau_w=rng.uniform(0.5, 3),
    )
    model = CoexModel(data, rean, priors, truth.inadequacy())
    state = init_chain_state(model, int(rng.integers(2**31)), 0)
    srng = np.random.default_rng(rng.integers(2**32))
    for _ in range(int(rng.integers(1, 30))):
        state = gibbs_sweep(state, model, srng)
    return model, state


def grid_oracle(n_problems: int = 20, seed: int = 0) -> list[OracleResult]:
    """Run every closed-form conditional against the joint on ``n_problems`` random problems."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_problems):
        model, state = random_problem(rng)
        for name, (_, per_model) in CONDITIONALS.items():
            j = int(rng.integers(model.n_models)) if per_model else None
            out.append(check_conditional(name, state, model, j))
    return out


# ---------------------------------------------------------------- Geweke

GEWEKE_PRIORS = PriorConfig(
    a_mu_h=0.0, b_mu_h=1.0, b_mu_f=1.0, a_beta=1.0, b_beta=4.0,
    a_tau_h=10.0, b_tau_h=10.0, a_tau_f=10.0, b_tau_f=10.0,
    a_psi2=10.0, b_psi2=10.0, a_theta2=10.0, b_theta2=10.0,
    a_nu_h=20.0, b_nu_h=2.0, a_nu_f=20.0, b_nu_f=2.0,
    a_tau_w=10.0, b_tau_w=10.0,
)


def prior_draw(priors: PriorConfig, inadequacy: InadequacyConfig, r_hist, r_fut, n_rean, rng):
    """Draw every unknown from its prior, then data given the draw."""
    p = priors
    mu_h = rng.normal(p.a_mu_h, 1 / math.sqrt(p.b_mu_h))
    truth = SyntheticTruth(
        mu_h=mu_h,
        mu_f=rng.normal(mu_h, 1 / math.sqrt(p.b_mu_f)),
        beta=rng.normal(p.a_beta, 1 / math.sqrt(p.b_beta)),
        tau_h=rng.gamma(p.a_tau_h, 1 / p.b_tau_h),
        tau_f=rng.gamma(p.a_tau_f, 1 / p.b_tau_f),
        psi2=rng.gamma(p.a_psi2, 1 / p.b_psi2),
        theta2=rng.gamma(p.a_theta2, 1 / p.b_theta2),
        nu_h=rng.gamma(p.a_nu_h, 1 / p.b_nu_h),
        nu_f=rng.gamma(p.a_nu_f, 1 / p.b_nu_f),
        tau_w=rng.gamma(p.a_tau_w, 1 / p.b_tau_w),
        kappa=inadequacy.kappa,
        kappa_w=inadequacy.kappa_w,
        r_hist=tuple(r_hist),
        r_fut=tuple(r_fut),
        n_rean=n_rean,
        model_ids=None,
    )
    data, rean, lat = generate_synthetic(truth, rng.integers(2**63))
    state = ParameterState(
        mu_h=truth.mu_h, mu_f=truth.mu_f, beta=truth.beta, tau_h=truth.tau_h, tau_f=truth.tau_f,
        psi2=truth.psi2, theta2=truth.theta2, nu_h=truth.nu_h, nu_f=truth.nu_f,
        y_h=lat["y_h"], y_ha=lat["y_ha"], tau_a=lat["tau_a"], mu_w=lat["mu_w"], tau_w=truth.tau_w,
        x_h=lat["x_h"], x_f=lat["x_f"], tau_m=lat["tau_m"], phi_m=lat["phi_m"],
    )
    return state, data, rean


def redraw_data(state: ParameterState, r_hist, r_fut, n_rean, rng) -> tuple[EnsembleData, ReanalysisData]:
    models = []
    for j in range(state.n_models):
        sd = 1 / math.sqrt(state.tau_m[j])
        models.append(
            ModelRuns(
                f"m{j}",
                rng.normal(state.x_h[j], sd, r_hist[j]),
                rng.normal(state.x_f[j], sd / math.sqrt(state.phi_m[j]), r_fut[j]),
            )
        )
    w = rng.normal(state.mu_w, 1 / math.sqrt(state.tau_w), n_rean)
    return EnsembleData(tuple(models)), ReanalysisData(tuple(w))


@dataclass
class GewekeResult:
    z: dict[str, float]
    n_draws: int
    marginal: np.ndarray = field(repr=False)
    successive: np.ndarray = field(repr=False)

    @property
    def max_abs_z(self) -> float:
        return max(abs(v) for v in self.z.values())


def geweke_test(
    n_draws: int = 10000,
    r_hist=(2, 2, 2),
    r_fut=(2, 2, 2),
    n_rean: int = 2,
    priors: PriorConfig = GEWEKE_PRIORS,
    inadequacy: InadequacyConfig = InadequacyConfig(),
    lam: float = 2.0,
    sweeps_per_draw: int = 1,
    seed: int = 0,
) -> GewekeResult:
    """Marginal-conditional vs successive-conditional simulators.

    Compares first and second moments of the 14 scalar unknowns; z-scores
    use the iid standard error for the first simulator and a batch-means
    error for the second.
    """
    rng = np.random.default_rng(seed)
    mc = np.empty((n_draws, 14))
    for i in range(n_draws):
        state, _, _ = prior_draw(priors, inadequacy, r_hist, r_fut, n_rean, rng)
        mc[i] = state.scalars()

    sc = np.empty((n_draws, 14))
    state, data, rean = prior_draw(priors, inadequacy, r_hist, r_fut, n_rean, rng)
    srng = np.random.default_rng([seed, 1])
    for i in range(n_draws):
        model = CoexModel(data, rean, priors, inadequacy)
        for _ in range(sweeps_per_draw):
            state = gibbs_sweep(state, model, srng, lam, lam)
        sc[i] = state.scalars()
        data, rean = redraw_data(state, r_hist, r_fut, n_rean, rng)

    z = {}
    for k, name in enumerate(SCALAR_NAMES):
        for power, label in ((1, name), (2, f"{name}^2")):
            a, b = mc[:, k] ** power, sc[:, k] ** power
            se = math.sqrt(a.var(ddof=1) / a.size + mcse_batch_means(b) ** 2)
            z[label] = (a.mean() - b.mean()) / se if se > 0 else 0.0
    return GewekeResult(z, n_draws, mc, sc)


# ---------------------------------------------------------------- MH rig

@dataclass
class MHRigResult:
    chi2_pvalue: float
    accept_rate: float
    accept_rate_se: float
    expected_accept_rate: float
    samples: np.ndarray = field(repr=False)


def _rig(shape: float, rate: float):
    """Arrays for a model with no models, so the nu_f target is exactly Gamma(shape, rate)."""
    h = np.zeros(21)
    h[K.A_NU_F], h[K.B_NU_F] = shape, rate
    h[K.KAPPA] = h[K.KAPPA_W] = 1.0
    s = np.zeros(14)
    s[K.THETA2] = 1.0
    mb = np.zeros((4, 0))
    return s, mb, h


def mh_gamma_target_check(
    shape: float = 3.0,
    rate: float = 0.5,
    lam: float = 1.0,
    n_steps: int = 100000,
    thin: int = 10,
    n_bins: int = 20,
    seed: int = 0,
) -> MHRigResult:
    """Run the nu MH kernel against a known Gamma target and test the histogram.

    The expected stationary acceptance rate is estimated independently by
    drawing current values straight from the target.
    """
    s, mb, h = _rig(shape, rate)
    rng = np.random.default_rng(seed)
    s[K.NU_F] = rng.gamma(shape, 1 / rate)
    chain = np.empty(n_steps)
    acc = np.empty(n_steps)
    for t in range(n_steps):
        a, _ = K.mh_nu(s, mb, h, 1, lam, rng)
        acc[t] = a
        chain[t] = s[K.NU_F]
    kept = chain[thin - 1 :: thin]
    edges = stats.gamma.ppf(np.linspace(0, 1, n_bins + 1), shape, scale=1 / rate)
    counts, _ = np.histogram(kept, bins=edges)
    p_chi2 = float(stats.chisquare(counts).pvalue)

    orng = np.random.default_rng([seed, 2])
    nu = orng.gamma(shape, 1 / rate, n_steps)
    nu_star = orng.gamma(nu * lam, 1 / lam)
    log_target = stats.gamma.logpdf(nu_star, shape, scale=1 / rate) - stats.gamma.logpdf(nu, shape, scale=1 / rate)
    log_q = stats.gamma.logpdf(nu, nu_star * lam, scale=1 / lam) - stats.gamma.logpdf(nu_star, nu * lam, scale=1 / lam)
    expected = float(np.mean(np.minimum(1.0, np.exp(log_target + log_q))))
    return MHRigResult(p_chi2, float(acc.mean()), mcse_batch_means(acc), expected, chain)
