"""Synthetic data, cross-validation and the analytic regression oracles."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .diagnostics import QUANTILE_LEVELS
from .gibbs import ChainConfig, ConvergenceFailure, PosteriorSample, run_until_converged
from .model import (
    CoexModel,
    EnsembleData,
    InadequacyConfig,
    ModelRuns,
    PriorConfig,
    ReanalysisData,
)

# Run counts (historical, future) of a 13-model CMIP5 ensemble: 50 and 39 runs.
REFERENCE_DESIGN: tuple[tuple[str, int, int], ...] = (
    ("BCC-CSM1.1(m)", 3, 1),
    ("CanESM2", 5, 5),
    ("CESM1(CAM5)", 3, 3),
    ("EC-EARTH", 8, 9),
    ("FGOALS-g2", 5, 1),
    ("GFDL-ESM2G", 1, 1),
    ("GISS-E2-R", 6, 6),
    ("HadGEM2-ES", 4, 4),
    ("INM-CM4", 1, 1),
    ("IPSL-CM5A-MR", 3, 1),
    ("MIROC5", 5, 3),
    ("MPI-ESM-LR", 3, 3),
    ("MRI-CGCM3", 3, 1),
)

# Reduced chain budget for replicate studies.
STUDY_CHAINS = ChainConfig(iters_initial=4000, burn_in=2000, extend_by=2000, thin=8, max_total_iters=20000)


@dataclass(frozen=True)
class SyntheticTruth:
    """Fixed hyperparameters and design for simulating one gridbox.

    Precisions follow the sampler's parametrization: ``psi2`` sets
    E[tau_m] = 1/psi2, ``theta2`` sets E[phi_m] = 1/theta2.
    """

    mu_h: float = -15.0
    mu_f: float = -8.0
    beta: float = 0.6
    tau_h: float = 1.0 / 9.0
    tau_f: float = 1.0 / 2.25
    psi2: float = 0.25
    theta2: float = 1.0
    nu_h: float = 8.0
    nu_f: float = 8.0
    tau_w: float = 1.0 / 0.49
    kappa: float = 1.2
    kappa_w: float = 1.2
    r_hist: tuple[int, ...] = tuple(r for _, r, _ in REFERENCE_DESIGN)
    r_fut: tuple[int, ...] = tuple(r for _, _, r in REFERENCE_DESIGN)
    n_rean: int = 4
    model_ids: tuple[str, ...] | None = tuple(name for name, _, _ in REFERENCE_DESIGN)

    def __post_init__(self):
        if len(self.r_hist) != len(self.r_fut):
            raise ValueError("r_hist and r_fut must have one entry per model")
        if min(self.r_hist + self.r_fut) < 1 or self.n_rean < 1:
            raise ValueError("run and reanalysis counts must be >= 1")
        for name in ("tau_h", "tau_f", "psi2", "theta2", "nu_h", "nu_f", "tau_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.model_ids is not None and len(self.model_ids) != len(self.r_hist):
            object.__setattr__(self, "model_ids", None)

    @property
    def n_models(self) -> int:
        return len(self.r_hist)

    def ids(self) -> list[str]:
        return list(self.model_ids) if self.model_ids else [f"m{j + 1:02d}" for j in range(self.n_models)]

    def inadequacy(self) -> InadequacyConfig:
        return InadequacyConfig(self.kappa, self.kappa_w)

    def to_dict(self) -> dict:
        return asdict(self)


def generate_synthetic(truth: SyntheticTruth, seed) -> tuple[EnsembleData, ReanalysisData, dict]:
    """Simulate runs and reanalyses top-down from the hierarchy.

    Returns the data and a record of every latent value drawn on the way.
    """
    rng = np.random.default_rng(seed)
    t = truth
    m = t.n_models
    k2, kw2 = t.kappa**2, t.kappa_w**2
    tau_m = rng.gamma(t.nu_h / 2.0, 2.0 / (t.nu_h * t.psi2), size=m)
    phi_m = rng.gamma(t.nu_f / 2.0, 2.0 / (t.nu_f * t.theta2), size=m)
    x_h = rng.normal(t.mu_h, 1.0 / math.sqrt(t.tau_h), size=m)
    x_f = rng.normal(t.mu_f + t.beta * (x_h - t.mu_h), 1.0 / math.sqrt(t.tau_f))
    models = []
    for j, mid in enumerate(t.ids()):
        hist = rng.normal(x_h[j], 1.0 / math.sqrt(tau_m[j]), size=t.r_hist[j])
        fut = rng.normal(x_f[j], 1.0 / math.sqrt(phi_m[j] * tau_m[j]), size=t.r_fut[j])
        models.append(ModelRuns(mid, tuple(hist), tuple(fut)))

    nu_ha, nu_fa = t.nu_h / k2, t.nu_f / k2
    y_h = rng.normal(t.mu_h, math.sqrt(k2 / t.tau_h))
    tau_a = rng.gamma(nu_ha / 2.0, 2.0 / (nu_ha * t.psi2))
    y_ha = rng.normal(y_h, 1.0 / math.sqrt(tau_a))
    mu_w = rng.normal(y_ha, math.sqrt(kw2 / t.tau_w))
    w = rng.normal(mu_w, 1.0 / math.sqrt(t.tau_w), size=t.n_rean)

    y_f = rng.normal(t.mu_f + t.beta * (y_h - t.mu_h), math.sqrt(k2 / t.tau_f))
    phi_a = rng.gamma(nu_fa / 2.0, 2.0 / (nu_fa * t.theta2))
    y_fa = rng.normal(y_f, 1.0 / math.sqrt(phi_a * tau_a))
    latent = dict(
        x_h=x_h, x_f=x_f, tau_m=tau_m, phi_m=phi_m,
        y_h=y_h, y_ha=y_ha, tau_a=tau_a, mu_w=mu_w,
        y_f=y_f, y_fa=y_fa, phi_a=phi_a,
    )
    return EnsembleData(tuple(models)), ReanalysisData(tuple(w)), latent


# ---------------------------------------------------------------- cross-validation

def pit_value(predictive: np.ndarray, observed: float) -> float:
    """(#below + #equal/2 + 1/2) / (S + 1); stays strictly inside (0, 1)."""
    pred = np.asarray(predictive, dtype=float)
    below = np.count_nonzero(pred < observed)
    equal = np.count_nonzero(pred == observed)
    return (below + 0.5 * equal + 0.5) / (pred.size + 1)


def predictive_response(
    sample: PosteriorSample, mode: str, held_out: int | None, rng: np.random.Generator
) -> np.ndarray:
    """Response draws X*_F - X*_H for a new model, one per posterior draw.

    ``mode="all"`` draws a fresh exchangeable model; ``mode="future"``
    conditions on the held-out model's latent historical climate, which was
    fitted from its historical runs only.
    """
    mu_h, mu_f, beta = sample["mu_h"], sample["mu_f"], sample["beta"]
    sd_h = 1.0 / np.sqrt(sample["tau_h"])
    sd_f = 1.0 / np.sqrt(sample["tau_f"])
    if mode == "all":
        x_h = rng.normal(mu_h, sd_h)
    elif mode == "future":
        x_h = sample["x_h"][:, held_out]
    else:
        raise ValueError(f"mode must be 'all' or 'future', got {mode!r}")
    x_f = rng.normal(mu_f + beta * (x_h - mu_h), sd_f)
    return x_f - x_h


def _mode(mode: str) -> str:
    return {"all_data": "all", "all": "all", "future_only": "future", "future": "future"}[mode]


def loo_cv_pit(
    data: EnsembleData,
    rean: ReanalysisData,
    priors: PriorConfig = PriorConfig(),
    inadequacy: InadequacyConfig = InadequacyConfig(),
    chains: ChainConfig = ChainConfig(),
    mode: str = "all_data",
    raise_on_failure: bool = True,
) -> list[tuple[str, float]]:
    """Leave-one-out PIT of each model's observed mean response.

    For ``all_data`` the model is removed entirely; for ``future_only`` only
    its future runs are withheld.  The observed response is the mean of the
    future runs minus the mean of the historical runs.
    """
    mode = _mode(mode)
    if data.n_models < 3:
        raise ValueError("leave-one-out needs at least 3 models")
    out = []
    for j, held in enumerate(data.models):
        if mode == "all":
            reduced = EnsembleData(tuple(m for i, m in enumerate(data.models) if i != j))
        else:
            reduced = EnsembleData(
                tuple(ModelRuns(m.model_id, m.hist_runs, ()) if i == j else m for i, m in enumerate(data.models))
            )
        fit = run_until_converged(
            CoexModel(reduced, rean, priors, inadequacy), chains, raise_on_failure=raise_on_failure
        )
        rng = np.random.default_rng([chains.base_seed, j, 0xC7])
        pred = predictive_response(fit, mode, j, rng)
        observed = float(np.mean(held.fut_runs) - np.mean(held.hist_runs))
        out.append((held.model_id, pit_value(pred, observed)))
    return out


def _kolmogorov_cdf(n: int, d: float) -> float:
    """P(D_n < d) for the one-sample two-sided statistic (Marsaglia, Tsang & Wang)."""
    if d <= 0.0:
        return 0.0
    if d >= 1.0:
        return 1.0
    k = int(n * d) + 1
    m = 2 * k - 1
    h = k - n * d
    H = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i - j + 1 >= 0:
                H[i, j] = 1.0
    for i in range(m):
        H[i, 0] -= h ** (i + 1)
        H[m - 1, i] -= h ** (m - i)
    if 2 * h - 1 > 0:
        H[m - 1, 0] += (2 * h - 1) ** m
    for i in range(m):
        for j in range(m):
            if i - j + 1 > 0:
                H[i, j] /= math.factorial(i - j + 1)
    # H^n by repeated squaring, renormalising to keep entries in range
    log_scale = 0.0
    result = np.eye(m)
    result_scale = 0.0
    base = H.copy()
    e = n
    while e:
        if e & 1:
            result = result @ base
            result_scale += log_scale
            top = np.abs(result).max()
            if top > 0:
                result /= top
                result_scale += math.log(top)
        e >>= 1
        if e:
            base = base @ base
            log_scale *= 2
            top = np.abs(base).max()
            if top > 0:
                base /= top
                log_scale += math.log(top)
    q = result[k - 1, k - 1]
    if q <= 0:
        return 0.0
    log_p = math.log(q) + result_scale + math.lgamma(n + 1) - n * math.log(n)
    return min(1.0, math.exp(log_p))


def ks_statistic(values: Sequence[float]) -> float:
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))


def ks_uniform(pits: Sequence[float]) -> float:
    """Two-sided one-sample Kolmogorov-Smirnov p-value against Uniform(0, 1)."""
    x = np.asarray(pits, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 values")
    if np.any((x < 0) | (x > 1)) or not np.all(np.isfinite(x)):
        raise ValueError("PIT values must lie in [0, 1]")
    d = ks_statistic(x)
    return float(min(1.0, max(0.0, 1.0 - _kolmogorov_cdf(x.size, d))))


# ---------------------------------------------------------------- ensemble regression and oracles

@dataclass(frozen=True)
class ERFit:
    """Least-squares fit of model mean responses on centred mean historical climates."""

    beta_prime_hat: float
    intercept: float
    grand_mean_hist: float
    residual_var: float

    @property
    def mean_response(self) -> float:
        return self.intercept

    def projected_response_at(self, z: float) -> float:
        return self.intercept + self.beta_prime_hat * (z - self.grand_mean_hist)


def ensemble_regression(data: EnsembleData) -> ERFit:
    xh = data.hist_means()
    y = data.fut_means() - xh
    if xh.size < 2:
        raise ValueError("ensemble regression needs at least 2 models")
    xbar = float(xh.mean())
    dx = xh - xbar
    sxx = float(dx @ dx)
    if not sxx > 1e-300 * max(1.0, xbar * xbar):
        raise ValueError("mean historical climates have no spread")
    slope = float(dx @ (y - y.mean())) / sxx
    intercept = float(y.mean())
    resid = y - intercept - slope * dx
    dof = max(xh.size - 2, 1)
    return ERFit(slope, intercept, xbar, float(resid @ resid) / dof)


def dilution_expectation(beta_prime: float, sigma_H2: float, sigma2: float, R: float) -> float:
    """Expected ensemble-regression slope when each model mean averages R noisy runs."""
    noise = sigma2 / R
    return (beta_prime * sigma_H2 - noise) / (sigma_H2 + noise)


def coexchangeable_shrinkage(beta: float, kappa: float, sigma_H2: float, D_H2: float) -> float:
    """Effective slope of Y_F on Y_H when a marginal discrepancy D_H2 is added."""
    k = kappa**2 * sigma_H2
    return k / (k + D_H2) * beta


def simulate_dilution(
    beta_prime: float,
    sigma_H2: float,
    sigma2: float,
    R: int,
    n_models: int = 20,
    n_reps: int = 10000,
    sigma_FH2: float = 1.0,
    seed=0,
) -> tuple[float, float]:
    """Mean ensemble-regression slope over balanced synthetic ensembles, with its MC standard error."""
    rng = np.random.default_rng(seed)
    beta = beta_prime + 1.0
    slopes = np.empty(n_reps)
    for k in range(n_reps):
        x_h = rng.normal(0.0, math.sqrt(sigma_H2), n_models)
        x_f = beta * x_h + rng.normal(0.0, math.sqrt(sigma_FH2), n_models)
        hist = x_h[:, None] + rng.normal(0.0, math.sqrt(sigma2), (n_models, R))
        fut = x_f[:, None] + rng.normal(0.0, math.sqrt(sigma2), (n_models, R))
        data = EnsembleData(tuple(ModelRuns(f"m{j}", hist[j], fut[j]) for j in range(n_models)))
        slopes[k] = ensemble_regression(data).beta_prime_hat
    return float(slopes.mean()), float(slopes.std(ddof=1) / math.sqrt(n_reps))


def simulate_shrinkage(
    beta: float,
    kappa: float,
    sigma_H2: float,
    D_H2: float,
    sigma_FH2: float = 1.0,
    D_F2: float = 0.0,
    n: int = 200000,
    seed=0,
) -> tuple[float, float]:
    """cov(Y_F, Y_H) / var(Y_H) under the marginal-discrepancy construction, with its standard error."""
    rng = np.random.default_rng(seed)
    sigma = np.array([[sigma_H2, beta * sigma_H2], [beta * sigma_H2, beta**2 * sigma_H2 + sigma_FH2]])
    cov = kappa**2 * sigma + np.diag([D_H2, D_F2])
    y = rng.multivariate_normal(np.zeros(2), cov, size=n)
    yh = y[:, 0] - y[:, 0].mean()
    yf = y[:, 1] - y[:, 1].mean()
    slope = float(yh @ yf / (yh @ yh))
    resid = yf - slope * yh
    se = math.sqrt(float(resid @ resid) / (n - 2) / float(yh @ yh))
    return slope, se


# ---------------------------------------------------------------- replicate studies

@dataclass
class CoverageResult:
    hits: dict[str, int]
    n_reps: int
    not_converged: int
    intervals: dict[str, list[tuple[float, float, float]]] = field(repr=False, default_factory=dict)


def coverage_study(
    truth: SyntheticTruth = SyntheticTruth(),
    n_reps: int = 50,
    chains: ChainConfig = STUDY_CHAINS,
    params: Sequence[str] = ("mu_h", "mu_f", "beta"),
    priors: PriorConfig = PriorConfig(),
    seed: int = 0,
) -> CoverageResult:
    """Count how often the 90% equal-tailed intervals cover the truth across replicates."""
    lo_q, hi_q = QUANTILE_LEVELS[0], QUANTILE_LEVELS[-1]
    hits = {p: 0 for p in params}
    intervals: dict[str, list] = {p: [] for p in params}
    failed = 0
    for r in range(n_reps):
        data, rean, _ = generate_synthetic(truth, [seed, r])
        cfg = ChainConfig(**{**asdict(chains), "base_seed": seed * 100003 + r})
        fit = run_until_converged(CoexModel(data, rean, priors, truth.inadequacy()), cfg, raise_on_failure=False)
        failed += not fit.converged
        for p in params:
            lo, hi = np.quantile(fit[p], [lo_q, hi_q])
            value = getattr(truth, p)
            hits[p] += bool(lo <= value <= hi)
            intervals[p].append((float(lo), float(hi), value))
    return CoverageResult(hits, n_reps, failed, intervals)


def cv_calibration_study(
    truth: SyntheticTruth = SyntheticTruth(),
    n_gridboxes: int = 100,
    chains: ChainConfig = STUDY_CHAINS,
    mode: str = "all_data",
    priors: PriorConfig = PriorConfig(),
    seed: int = 0,
) -> list[float]:
    """KS p-values of leave-one-out PIT uniformity over synthetic gridboxes."""
    pvals = []
    for g in range(n_gridboxes):
        data, rean, _ = generate_synthetic(truth, [seed, g, 0xCF])
        cfg = ChainConfig(**{**asdict(chains), "base_seed": seed * 100003 + g})
        pits = loo_cv_pit(data, rean, priors, truth.inadequacy(), cfg, mode, raise_on_failure=False)
        pvals.append(ks_uniform([p for _, p in pits]))
    return pvals


__all__ = [
    "REFERENCE_DESIGN",
    "STUDY_CHAINS",
    "SyntheticTruth",
    "generate_synthetic",
    "pit_value",
    "predictive_response",
    "loo_cv_pit",
    "ks_statistic",
    "ks_uniform",
    "ERFit",
    "ensemble_regression",
    "dilution_expectation",
    "coexchangeable_shrinkage",
    "simulate_dilution",
    "simulate_shrinkage",
    "coverage_study",
    "cv_calibration_study",
    "ConvergenceFailure",
]
