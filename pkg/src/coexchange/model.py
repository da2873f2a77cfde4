"""Domain types, validation and the log joint density of the coexchangeable model.

Everything is held in precision form internally; variances only appear when
results are presented.  The scalar layout of :class:`ParameterState` is shared
with the compiled sampler kernels (see ``SCALAR_NAMES``).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaln

# Order of the scalar block used by the compiled kernels and by chain output.
SCALAR_NAMES: tuple[str, ...] = (
    "mu_h",
    "mu_f",
    "beta",
    "tau_h",
    "tau_f",
    "psi2",
    "theta2",
    "nu_h",
    "nu_f",
    "y_h",
    "y_ha",
    "tau_a",
    "mu_w",
    "tau_w",
)
MODEL_NAMES: tuple[str, ...] = ("x_h", "x_f", "tau_m", "phi_m")
PREDICTIVE_NAMES: tuple[str, ...] = ("y_f", "y_fa", "phi_a")

POSITIVE_SCALARS = ("tau_h", "tau_f", "psi2", "theta2", "nu_h", "nu_f", "tau_a", "tau_w")

HYPER_NAMES: tuple[str, ...] = (
    "a_mu_h",
    "b_mu_h",
    "b_mu_f",
    "a_beta",
    "b_beta",
    "a_tau_h",
    "b_tau_h",
    "a_tau_f",
    "b_tau_f",
    "a_psi2",
    "b_psi2",
    "a_theta2",
    "b_theta2",
    "a_nu_h",
    "b_nu_h",
    "a_nu_f",
    "b_nu_f",
    "a_tau_w",
    "b_tau_w",
    "kappa",
    "kappa_w",
)


class ReanalysisSpreadWarning(UserWarning):
    """A single reanalysis leaves its spread identified by the prior alone."""


@dataclass(frozen=True)
class ModelRuns:
    model_id: str
    hist_runs: tuple[float, ...]
    fut_runs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "hist_runs", tuple(float(v) for v in self.hist_runs))
        object.__setattr__(self, "fut_runs", tuple(float(v) for v in self.fut_runs))


@dataclass(frozen=True)
class EnsembleData:
    """Runs of every model for the historical (H) and future (F) scenarios."""

    models: tuple[ModelRuns, ...]

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))

    @property
    def n_models(self) -> int:
        return len(self.models)

    @property
    def model_ids(self) -> list[str]:
        return [m.model_id for m in self.models]

    def hist_means(self) -> np.ndarray:
        return np.array([np.mean(m.hist_runs) for m in self.models])

    def fut_means(self) -> np.ndarray:
        return np.array([np.mean(m.fut_runs) for m in self.models])

    def subset(self, model_ids: Sequence[str]) -> "EnsembleData":
        keep = set(model_ids)
        return EnsembleData(tuple(m for m in self.models if m.model_id in keep))

    def shifted(self, c: float) -> "EnsembleData":
        return EnsembleData(
            tuple(
                ModelRuns(
                    m.model_id,
                    tuple(v + c for v in m.hist_runs),
                    tuple(v + c for v in m.fut_runs),
                )
                for m in self.models
            )
        )


@dataclass(frozen=True)
class ReanalysisData:
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def n(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the vague conjugate priors.

    Gamma pairs are (shape, rate).  ``b_nu_h``/``b_nu_f`` default to ``None``,
    meaning an exponential prior with rate ``1/M`` resolved once the number
    of models is known (see :meth:`resolved`).
    """

    a_mu_h: float = 0.0
    b_mu_h: float = 1e-6
    b_mu_f: float = 1e-6
    a_beta: float = 1.0
    b_beta: float = 1e-6
    a_tau_h: float = 1e-3
    b_tau_h: float = 1e-3
    a_tau_f: float = 1e-3
    b_tau_f: float = 1e-3
    a_psi2: float = 1e-3
    b_psi2: float = 1e-3
    a_theta2: float = 1e-3
    b_theta2: float = 1e-3
    a_nu_h: float = 1.0
    b_nu_h: float | None = None
    a_nu_f: float = 1.0
    b_nu_f: float | None = None
    a_tau_w: float = 1e-3
    b_tau_w: float = 1e-3

    def resolved(self, n_models: int) -> "PriorConfig":
        return replace(
            self,
            b_nu_h=1.0 / n_models if self.b_nu_h is None else self.b_nu_h,
            b_nu_f=1.0 / n_models if self.b_nu_f is None else self.b_nu_f,
        )

    def violations(self) -> list[str]:
        out = []
        for name in HYPER_NAMES[:19]:
            if name in ("a_mu_h", "a_beta"):
                continue
            v = getattr(self, name)
            if v is None:
                continue
            if not (math.isfinite(v) and v > 0):
                out.append(f"priors.{name}: must be finite and > 0 (got {v})")
        return out


@dataclass(frozen=True)
class InadequacyConfig:
    """Spread inflation of the real system (kappa) and representative reanalysis (kappa_w)."""

    kappa: float = 1.2
    kappa_w: float = 1.2

    def __post_init__(self):
        if not (self.kappa >= 1.0 and self.kappa_w >= 1.0):
            raise ValueError(f"kappa and kappa_w must be >= 1, got {self.kappa}, {self.kappa_w}")


@dataclass(frozen=True)
class ParameterState:
    """One point of the latent space, precision parametrization.

    ``tau_f`` is the conditional precision of future given historical model
    climates; ``phi_m`` multiplies ``tau_m`` to give the future-run precision.
    """

    mu_h: float
    mu_f: float
    beta: float
    tau_h: float
    tau_f: float
    psi2: float
    theta2: float
    nu_h: float
    nu_f: float
    y_h: float
    y_ha: float
    tau_a: float
    mu_w: float
    tau_w: float
    x_h: np.ndarray = field(repr=False)
    x_f: np.ndarray = field(repr=False)
    tau_m: np.ndarray = field(repr=False)
    phi_m: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in MODEL_NAMES:
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in SCALAR_NAMES:
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def n_models(self) -> int:
        return len(self.x_h)

    def scalars(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in SCALAR_NAMES], dtype=np.float64)

    def model_block(self) -> np.ndarray:
        return np.vstack([self.x_h, self.x_f, self.tau_m, self.phi_m]).astype(np.float64)

    @classmethod
    def from_arrays(cls, scalars: np.ndarray, models: np.ndarray) -> "ParameterState":
        kw = {n: float(scalars[i]) for i, n in enumerate(SCALAR_NAMES)}
        kw.update({n: np.array(models[i]) for i, n in enumerate(MODEL_NAMES)})
        return cls(**kw)

    def with_values(self, **kw) -> "ParameterState":
        return replace(self, **kw)

    def is_valid(self) -> bool:
        pos = [getattr(self, n) for n in POSITIVE_SCALARS]
        arrays = np.concatenate([self.tau_m, self.phi_m])
        finite = np.all(np.isfinite(self.scalars())) and np.all(np.isfinite(self.model_block()))
        return bool(finite and all(p > 0 for p in pos) and np.all(arrays > 0))


@dataclass(frozen=True)
class DerivedPrecisions:
    tau_delta_h: float
    tau_delta_f: float
    tau_delta_w: float
    nu_ha: float
    nu_fa: float


@dataclass(frozen=True)
class PredictiveDraw:
    y_f: float
    y_fa: float
    phi_a: float


def validate(data: EnsembleData, rean: ReanalysisData) -> list[str]:
    """Check the ingestion invariants; returns a list of violations (empty if valid)."""
    out: list[str] = []
    if data.n_models < 2:
        out.append(f"models: need M >= 2 models (got {data.n_models})")
    seen = set()
    for m in data.models:
        if m.model_id in seen:
            out.append(f"models[{m.model_id}]: duplicate model_id")
        seen.add(m.model_id)
        if len(m.hist_runs) == 0:
            out.append(f"models[{m.model_id}].hist_runs: hist_runs empty")
        if len(m.fut_runs) == 0:
            out.append(f"models[{m.model_id}].fut_runs: fut_runs empty")
        if not all(math.isfinite(v) for v in m.hist_runs + m.fut_runs):
            out.append(f"models[{m.model_id}]: non-finite run value")
    if rean.n < 1:
        out.append("reanalysis.values: need N >= 1 reanalysis values")
    elif not all(math.isfinite(v) for v in rean.values):
        out.append("reanalysis.values: non-finite value")
    elif rean.n == 1:
        warnings.warn("reanalysis spread prior-dominated (N = 1)", ReanalysisSpreadWarning, stacklevel=2)
    return out


def derived(state: ParameterState, cfg: InadequacyConfig) -> DerivedPrecisions:
    k2 = cfg.kappa**2
    return DerivedPrecisions(
        tau_delta_h=state.tau_h / k2,
        tau_delta_f=state.tau_f / k2,
        tau_delta_w=state.tau_w / cfg.kappa_w**2,
        nu_ha=state.nu_h / k2,
        nu_fa=state.nu_f / k2,
    )


def _normal_kernel(x, mean, prec):
    return 0.5 * np.log(prec) - 0.5 * prec * (x - mean) ** 2


def _gamma_logpdf(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def log_joint(
    state: ParameterState,
    data: EnsembleData,
    rean: ReanalysisData,
    priors: PriorConfig,
    cfg: InadequacyConfig,
) -> float:
    """Un-normalized log posterior density at ``state``.

    Works directly on the individual runs (not on sufficient statistics) so
    that it stays an independent route to the sampler's conditionals.  The
    Gamma normalizers of tau_m, phi_m and tau_a are kept because they depend
    on nu_h, nu_f, psi2 and theta2.  Returns ``-inf`` for states outside the
    support.
    """
    s = state
    if not s.is_valid():
        return -math.inf
    p = priors.resolved(data.n_models)
    d = derived(s, cfg)

    w = np.asarray(rean.values)
    lp_w = float(np.sum(_normal_kernel(w, s.mu_w, s.tau_w)))

    lp_y = (
        _normal_kernel(s.y_h, s.mu_h, d.tau_delta_h)
        + _normal_kernel(s.y_ha, s.y_h, s.tau_a)
        + _gamma_logpdf(s.tau_a, d.nu_ha / 2.0, d.nu_ha * s.psi2 / 2.0)
    )

    lp_x = 0.0
    for j, m in enumerate(data.models):
        lp_x += float(np.sum(_normal_kernel(np.asarray(m.hist_runs), s.x_h[j], s.tau_m[j])))
        lp_x += float(np.sum(_normal_kernel(np.asarray(m.fut_runs), s.x_f[j], s.phi_m[j] * s.tau_m[j])))

    lp_chi = float(
        np.sum(_normal_kernel(s.x_h, s.mu_h, s.tau_h))
        + np.sum(_normal_kernel(s.x_f, s.mu_f + s.beta * (s.x_h - s.mu_h), s.tau_f))
        + np.sum(_gamma_logpdf(s.tau_m, s.nu_h / 2.0, s.nu_h * s.psi2 / 2.0))
        + np.sum(_gamma_logpdf(s.phi_m, s.nu_f / 2.0, s.nu_f * s.theta2 / 2.0))
    )

    lp_theta = (
        -0.5 * p.b_mu_h * (s.mu_h - p.a_mu_h) ** 2
        - 0.5 * p.b_mu_f * (s.mu_f - s.mu_h) ** 2
        - 0.5 * p.b_beta * (s.beta - p.a_beta) ** 2
        + (p.a_tau_h - 1.0) * math.log(s.tau_h) - p.b_tau_h * s.tau_h
        + (p.a_tau_f - 1.0) * math.log(s.tau_f) - p.b_tau_f * s.tau_f
        + (p.a_nu_h - 1.0) * math.log(s.nu_h) - p.b_nu_h * s.nu_h
        + (p.a_nu_f - 1.0) * math.log(s.nu_f) - p.b_nu_f * s.nu_f
        + (p.a_psi2 - 1.0) * math.log(s.psi2) - p.b_psi2 * s.psi2
        + (p.a_theta2 - 1.0) * math.log(s.theta2) - p.b_theta2 * s.theta2
    )

    lp_omega = (
        _normal_kernel(s.mu_w, s.y_ha, d.tau_delta_w)
        + (p.a_tau_w - 1.0) * math.log(s.tau_w) - p.b_tau_w * s.tau_w
    )

    total = lp_w + lp_y + lp_x + lp_chi + lp_theta + lp_omega
    return float(total) if math.isfinite(total) else -math.inf


@dataclass(frozen=True)
class CoexModel:
    """Data, priors and inadequacy settings packed for the compiled sampler.

    ``runs`` rows: hist count, fut count, hist mean, fut mean, hist sum of
    squares about the mean, fut sum of squares.  A model may have zero future
    runs here (used when future runs are withheld for cross-validation);
    :func:`validate` is what enforces the ingestion rules.
    """

    data: EnsembleData
    rean: ReanalysisData
    priors: PriorConfig = PriorConfig()
    inadequacy: InadequacyConfig = InadequacyConfig()
    runs: np.ndarray = field(init=False, repr=False)
    w: np.ndarray = field(init=False, repr=False)
    hyper: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.data.n_models
        runs = np.zeros((6, n))
        for j, m in enumerate(self.data.models):
            h = np.asarray(m.hist_runs, dtype=float)
            f = np.asarray(m.fut_runs, dtype=float)
            runs[0, j] = h.size
            runs[1, j] = f.size
            if h.size:
                runs[2, j] = h.mean()
                runs[4, j] = np.sum((h - h.mean()) ** 2)
            if f.size:
                runs[3, j] = f.mean()
                runs[5, j] = np.sum((f - f.mean()) ** 2)
        w = np.asarray(self.rean.values, dtype=float)
        w_stats = np.array([w.size, w.mean() if w.size else 0.0, np.sum((w - w.mean()) ** 2) if w.size else 0.0])
        p = self.priors.resolved(max(n, 1))
        hyper = np.array(
            [getattr(p, k) for k in HYPER_NAMES[:19]] + [self.inadequacy.kappa, self.inadequacy.kappa_w],
            dtype=np.float64,
        )
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "w", w_stats)
        object.__setattr__(self, "hyper", hyper)

    @property
    def n_models(self) -> int:
        return self.data.n_models

    def log_joint(self, state: ParameterState) -> float:
        return log_joint(state, self.data, self.rean, self.priors, self.inadequacy)
