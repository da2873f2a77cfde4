"""Metropolis-within-Gibbs sampler and the multi-chain convergence protocol.

The per-block functions here (``update_system_block`` and friends) are thin
wrappers that copy a :class:`ParameterState` into arrays and call the
compiled kernels; the chain runner calls the kernels directly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import _kernels as K
from .diagnostics import psrf
from .model import (
    MODEL_NAMES,
    PREDICTIVE_NAMES,
    SCALAR_NAMES,
    CoexModel,
    EnsembleData,
    InadequacyConfig,
    ParameterState,
    PredictiveDraw,
    ReanalysisData,
)

log = logging.getLogger(__name__)

OUTPUT_NAMES: tuple[str, ...] = SCALAR_NAMES + PREDICTIVE_NAMES
MONITORED: tuple[str, ...] = SCALAR_NAMES
PRECISION_BOUNDS = (1e-8, 1e8)


@dataclass(frozen=True)
class ChainConfig:
    """Chain protocol settings: 4 chains, 20000 sweeps, 10000 burn-in, every 40th draw kept."""

    n_chains: int = 4
    iters_initial: int = 20000
    burn_in: int = 10000
    extend_by: int = 10000
    thin: int = 40
    psrf_threshold: float = 1.10
    max_total_iters: int = 200000
    lambda_h: float = 2.0
    lambda_f: float = 2.0
    adapt_lambda: bool = True
    base_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iters_initial:
            raise ValueError("need 0 <= burn_in < iters_initial")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not self.psrf_threshold > 1.0:
            raise ValueError("psrf_threshold must exceed 1")
        if not (self.lambda_h > 0 and self.lambda_f > 0):
            raise ValueError("proposal scales must be positive")
        if self.extend_by < 1:
            raise ValueError("extend_by must be >= 1")

    @property
    def window(self) -> int:
        """Length of the retained (post burn-in) window per chain."""
        return self.iters_initial - self.burn_in


class ConvergenceFailure(RuntimeError):
    """Raised when the iteration cap is reached with some PSRF above threshold.

    The partial :class:`PosteriorSample` is available as ``.sample``.
    """

    def __init__(self, message: str, sample: "PosteriorSample"):
        super().__init__(message)
        self.sample = sample


# ---------------------------------------------------------------- initialisation

def _clamp(x):
    return np.clip(x, *PRECISION_BOUNDS)


def _inv(var):
    with np.errstate(divide="ignore", over="ignore"):
        return _clamp(1.0 / np.asarray(var, dtype=float))


def moment_state(data: EnsembleData, rean: ReanalysisData) -> ParameterState:
    """Moment estimates used as the centre of every chain's starting point."""
    hist = [np.asarray(m.hist_runs, float) for m in data.models]
    fut = [np.asarray(m.fut_runs, float) for m in data.models]
    hist_all = np.concatenate(hist)
    fut_all = np.concatenate([f for f in fut if f.size] or [hist_all])
    xh = np.array([h.mean() for h in hist])
    xf = np.array([f.mean() if f.size else np.nan for f in fut])

    def pooled(groups):
        dof = sum(g.size - 1 for g in groups if g.size > 1)
        if dof == 0:
            return None
        return sum(float(np.sum((g - g.mean()) ** 2)) for g in groups if g.size > 1) / dof

    within_h = pooled(hist)
    within_f = pooled([f for f in fut if f.size])
    between_h = float(np.var(xh, ddof=1)) if xh.size > 1 else 0.0
    if within_h is None:
        within_h = 0.1 * between_h
    if within_f is None:
        within_f = within_h

    ok = ~np.isnan(xf)
    xf = np.where(ok, xf, float(np.mean(xf[ok])) if ok.any() else float(np.mean(xh)))
    dx = xh - xh.mean()
    sxx = float(np.sum(dx[ok] ** 2))
    beta = float(np.sum(dx[ok] * (xf[ok] - xf[ok].mean())) / sxx) if sxx > 0 else 1.0
    resid = xf - xf.mean() - beta * dx
    resid_var = float(np.sum(resid**2) / max(xf.size - 2, 1))

    psi2 = float(_clamp(within_h))
    theta2 = float(_clamp(within_f / within_h)) if within_h > 0 else 1.0
    w = np.asarray(rean.values, float)
    w_var = float(np.var(w, ddof=1)) if w.size > 1 else within_h
    return ParameterState(
        mu_h=float(hist_all.mean()),
        mu_f=float(fut_all.mean()),
        beta=beta,
        tau_h=float(_inv(between_h)),
        tau_f=float(_inv(resid_var)),
        psi2=psi2,
        theta2=theta2,
        nu_h=10.0,
        nu_f=10.0,
        y_h=float(w.mean()),
        y_ha=float(w.mean()),
        tau_a=float(_inv(psi2)),
        mu_w=float(w.mean()),
        tau_w=float(_inv(w_var)),
        x_h=xh,
        x_f=xf,
        tau_m=np.full(xh.size, float(_inv(psi2))),
        phi_m=np.full(xh.size, float(_clamp(1.0 / theta2))),
    )


def init_chain_state(model: CoexModel, seed: int, chain_index: int) -> ParameterState:
    """Over-dispersed starting point for one chain.

    Positive quantities are multiplied by factors in [1/4, 4] and locations
    shifted by up to two spreads of the historical runs, using a stream
    seeded by ``(seed, chain_index)``.
    """
    base = moment_state(model.data, model.rean)
    rng = np.random.default_rng([seed, chain_index, 0x1A17])
    hist_all = np.concatenate([m.hist_runs for m in model.data.models])
    spread = float(np.std(hist_all)) or 1.0

    def scale():
        return math.exp(rng.uniform(math.log(0.25), math.log(4.0)))

    def shift():
        return rng.uniform(-2.0, 2.0) * spread

    s = base
    y_shift = shift()
    return ParameterState(
        mu_h=s.mu_h + shift(),
        mu_f=s.mu_f + shift(),
        beta=s.beta + rng.uniform(-0.5, 0.5),
        tau_h=float(_clamp(s.tau_h * scale())),
        tau_f=float(_clamp(s.tau_f * scale())),
        psi2=float(_clamp(s.psi2 * scale())),
        theta2=float(_clamp(s.theta2 * scale())),
        nu_h=s.nu_h * scale(),
        nu_f=s.nu_f * scale(),
        y_h=s.y_h + y_shift,
        y_ha=s.y_ha + y_shift,
        tau_a=float(_clamp(s.tau_a * scale())),
        mu_w=s.mu_w + shift(),
        tau_w=float(_clamp(s.tau_w * scale())),
        x_h=s.x_h,
        x_f=s.x_f,
        tau_m=_clamp(s.tau_m * scale()),
        phi_m=_clamp(s.phi_m * scale()),
    )


# ---------------------------------------------------------------- single updates

def _arrays(state: ParameterState):
    return state.scalars(), np.ascontiguousarray(state.model_block())


def update_system_block(state: ParameterState, model: CoexModel, rng: np.random.Generator) -> ParameterState:
    """Draw y_ha, y_h then tau_a from their full conditionals."""
    s, mb = _arrays(state)
    K.system_block(s, model.hyper, rng)
    return ParameterState.from_arrays(s, mb)


def update_reanalysis_block(state: ParameterState, model: CoexModel, rng: np.random.Generator) -> ParameterState:
    s, mb = _arrays(state)
    K.reanalysis_block(s, model.hyper, model.w, rng)
    return ParameterState.from_arrays(s, mb)


def update_model_block(state: ParameterState, model: CoexModel, rng: np.random.Generator) -> ParameterState:
    """Per model: x_f, x_h, tau_m, phi_m."""
    s, mb = _arrays(state)
    K.model_block(s, mb, model.runs, rng)
    return ParameterState.from_arrays(s, mb)


def update_ensemble_block(state: ParameterState, model: CoexModel, rng: np.random.Generator) -> ParameterState:
    """mu_h, mu_f, beta, tau_h, tau_f, psi2, theta2 in that order."""
    s, mb = _arrays(state)
    K.ensemble_block(s, mb, model.hyper, rng)
    return ParameterState.from_arrays(s, mb)


def mh_update_nu(
    state: ParameterState, model: CoexModel, which: str, lam: float, rng: np.random.Generator
) -> tuple[ParameterState, bool]:
    """Metropolis-Hastings move for ``nu_h`` (``which="H"``) or ``nu_f`` (``"F"``)."""
    s, mb = _arrays(state)
    accepted, _ = K.mh_nu(s, mb, model.hyper, _which(which), float(lam), rng)
    return ParameterState.from_arrays(s, mb), bool(accepted)


def nu_log_ratio(state: ParameterState, model: CoexModel, which: str, nu_star: float, lam: float) -> float:
    s, mb = _arrays(state)
    idx = K.NU_H if _which(which) == 0 else K.NU_F
    return float(K.nu_log_ratio(s, mb, model.hyper, _which(which), s[idx], float(nu_star), float(lam)))


def _which(which: str) -> int:
    if which.upper() not in ("H", "F"):
        raise ValueError(f"which must be 'H' or 'F', got {which!r}")
    return 0 if which.upper() == "H" else 1


def gibbs_sweep(
    state: ParameterState,
    model: CoexModel,
    rng: np.random.Generator,
    lam_h: float = 2.0,
    lam_f: float = 2.0,
) -> ParameterState:
    """One full sweep: system, reanalysis, model states, ensemble, nu_h, nu_f."""
    s, mb = _arrays(state)
    K.sweep(s, mb, model.runs, model.w, model.hyper, float(lam_h), float(lam_f), rng)
    return ParameterState.from_arrays(s, mb)


def sample_predictive(state: ParameterState, cfg: InadequacyConfig, rng: np.random.Generator) -> PredictiveDraw:
    """Draw phi_a, y_f and y_fa given a state (the state itself is untouched)."""
    h = np.zeros(21)
    h[K.KAPPA] = cfg.kappa
    h[K.KAPPA_W] = cfg.kappa_w
    return PredictiveDraw(*K.predictive(state.scalars(), h, rng))


# ---------------------------------------------------------------- closed-form conditionals

NORMAL, GAMMA = "normal", "gamma"

CONDITIONALS: dict[str, tuple[str, bool]] = {
    # name: (family, per-model)
    "y_ha": (NORMAL, False),
    "y_h": (NORMAL, False),
    "tau_a": (GAMMA, False),
    "mu_w": (NORMAL, False),
    "tau_w": (GAMMA, False),
    "x_f": (NORMAL, True),
    "x_h": (NORMAL, True),
    "tau_m": (GAMMA, True),
    "phi_m": (GAMMA, True),
    "mu_h": (NORMAL, False),
    "mu_f": (NORMAL, False),
    "beta": (NORMAL, False),
    "tau_h": (GAMMA, False),
    "tau_f": (GAMMA, False),
    "psi2": (GAMMA, False),
    "theta2": (GAMMA, False),
}


def conditional(name: str, state: ParameterState, model: CoexModel, j: int | None = None) -> tuple[str, float, float]:
    """Family and parameters of a closed-form full conditional.

    Normals are returned as ``("normal", mean, precision)``, gammas as
    ``("gamma", shape, rate)``.  ``j`` selects the model for per-model states.
    """
    family, per_model = CONDITIONALS[name]
    s, mb = _arrays(state)
    h, w, runs = model.hyper, model.w, model.runs
    if per_model:
        if j is None:
            raise ValueError(f"{name} needs a model index")
        fn = {"x_f": K.cond_x_f, "x_h": K.cond_x_h, "tau_m": K.cond_tau_m, "phi_m": K.cond_phi_m}[name]
        a, b = fn(s, mb, runs, j)
    elif name in ("y_ha", "y_h", "tau_a"):
        a, b = {"y_ha": K.cond_y_ha, "y_h": K.cond_y_h, "tau_a": K.cond_tau_a}[name](s, h)
    elif name in ("mu_w", "tau_w"):
        a, b = {"mu_w": K.cond_mu_w, "tau_w": K.cond_tau_w}[name](s, h, w)
    else:
        fn = {
            "mu_h": K.cond_mu_h,
            "mu_f": K.cond_mu_f,
            "beta": K.cond_beta,
            "tau_h": K.cond_tau_h,
            "tau_f": K.cond_tau_f,
            "psi2": K.cond_psi2,
            "theta2": K.cond_theta2,
        }[name]
        a, b = fn(s, mb, h)
    return family, float(a), float(b)


def set_value(state: ParameterState, name: str, value: float, j: int | None = None) -> ParameterState:
    if name in MODEL_NAMES:
        arr = np.array(getattr(state, name))
        arr[j] = value
        return state.with_values(**{name: arr})
    return state.with_values(**{name: value})


# ---------------------------------------------------------------- chains

def chain_rng(base_seed: int, chain_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([base_seed, chain_index])))


@dataclass
class ChainOutput:
    """Retained window of one chain plus what is needed to extend it.

    ``draws`` has one row per iteration of the window with columns
    ``OUTPUT_NAMES`` (the 14 scalars, then y_f, y_fa, phi_a drawn from the
    state of that iteration); ``model_draws`` has shape ``(n, 4, M)``.
    """

    chain_index: int
    draws: np.ndarray
    model_draws: np.ndarray
    accepted_h: int
    accepted_f: int
    attempts: int
    total_iters: int
    lambdas: np.ndarray
    _state: tuple = field(repr=False)
    _rng: np.random.Generator = field(repr=False)
    _window: int = field(repr=False, default=0)

    @property
    def accept_rate_h(self) -> float:
        return self.accepted_h / self.attempts if self.attempts else 0.0

    @property
    def accept_rate_f(self) -> float:
        return self.accepted_f / self.attempts if self.attempts else 0.0

    def states(self) -> Iterator[tuple[ParameterState, PredictiveDraw]]:
        for row, mb in zip(self.draws, self.model_draws):
            yield ParameterState.from_arrays(row[:14], mb), PredictiveDraw(*row[14:])


def _segment(model: CoexModel, state, lam, n_iter, n_adapt, adapt_start, rng):
    s, mb = state
    out_s = np.empty((n_iter, K.N_OUT))
    out_m = np.empty((n_iter, 4, mb.shape[1]))
    counts = np.zeros(3, dtype=np.int64)
    K.run_segment(s, mb, model.runs, model.w, model.hyper, lam, n_iter, n_adapt, adapt_start, rng, out_s, out_m, counts)
    return out_s, out_m, counts


def run_chain(
    model: CoexModel,
    config: ChainConfig = ChainConfig(),
    chain_index: int = 0,
    seed_index: int | None = None,
) -> ChainOutput:
    """Run ``iters_initial`` sweeps and keep the post burn-in window.

    The proposal scales adapt during burn-in when ``config.adapt_lambda``.
    ``seed_index`` overrides the index used for seeding (test rigs only).
    """
    seed_index = chain_index if seed_index is None else seed_index
    rng = chain_rng(config.base_seed, seed_index)
    init = init_chain_state(model, config.base_seed, seed_index)
    s, mb = init.scalars(), np.ascontiguousarray(init.model_block())
    lam = np.array([config.lambda_h, config.lambda_f], dtype=float)
    n_adapt = config.burn_in if config.adapt_lambda else 0

    burn_s, burn_m, counts = _segment(model, (s, mb), lam, config.burn_in, n_adapt, 0, rng)
    del burn_s, burn_m
    out_s, out_m, c2 = _segment(model, (s, mb), lam, config.window, 0, 0, rng)
    counts += c2
    return ChainOutput(
        chain_index=chain_index,
        draws=out_s,
        model_draws=out_m,
        accepted_h=int(counts[0]),
        accepted_f=int(counts[1]),
        attempts=int(counts[2]),
        total_iters=config.iters_initial,
        lambdas=lam,
        _state=(s, mb),
        _rng=rng,
        _window=config.window,
    )


def extend_chain(model: CoexModel, chain: ChainOutput, n_iter: int) -> ChainOutput:
    """Continue a chain for ``n_iter`` sweeps; the window slides to the newest draws."""
    out_s, out_m, counts = _segment(model, chain._state, chain.lambdas, n_iter, 0, 0, chain._rng)
    w = chain._window
    chain.draws = np.concatenate([chain.draws, out_s])[-w:]
    chain.model_draws = np.concatenate([chain.model_draws, out_m])[-w:]
    chain.accepted_h += int(counts[0])
    chain.accepted_f += int(counts[1])
    chain.attempts += int(counts[2])
    chain.total_iters += n_iter
    return chain


# ---------------------------------------------------------------- posterior sample

DERIVED_QUANTITIES = ("y_f_minus_y_h", "mu_f_minus_mu_h", "constraint_effect")


def derived_columns(draws: np.ndarray) -> dict[str, np.ndarray]:
    col = {n: draws[..., i] for i, n in enumerate(OUTPUT_NAMES)}
    return {
        "y_f_minus_y_h": col["y_f"] - col["y_h"],
        "mu_f_minus_mu_h": col["mu_f"] - col["mu_h"],
        # shift of the projected response attributable to the emergent constraint
        "constraint_effect": (col["beta"] - 1.0) * (col["y_h"] - col["mu_h"]),
    }


@dataclass
class PosteriorSample:
    """Thinned draws merged over chains, with convergence metadata."""

    draws: np.ndarray
    model_draws: np.ndarray
    chain_id: np.ndarray
    model_ids: list[str]
    psrf: dict[str, float]
    converged: bool
    total_iters: int
    n_chains: int
    accept_rate_h: float
    accept_rate_f: float
    windows: np.ndarray = field(repr=False)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        if name in OUTPUT_NAMES:
            return self.draws[:, OUTPUT_NAMES.index(name)]
        if name in DERIVED_QUANTITIES:
            return derived_columns(self.draws)[name]
        if name in MODEL_NAMES:
            return self.model_draws[:, MODEL_NAMES.index(name), :]
        raise KeyError(name)

    def quantities(self) -> list[str]:
        return list(OUTPUT_NAMES) + list(DERIVED_QUANTITIES)

    def window_psrf(self, name: str) -> float:
        """PSRF of any scalar or derived quantity over the final windows."""
        if name in OUTPUT_NAMES:
            x = self.windows[:, :, OUTPUT_NAMES.index(name)]
        else:
            x = derived_columns(self.windows)[name]
        if x.shape[0] < 2:
            return math.nan
        return psrf(list(x))

    def states(self) -> Iterator[ParameterState]:
        for row, mb in zip(self.draws, self.model_draws):
            yield ParameterState.from_arrays(row[:14], mb)


def _monitor(chains: list[ChainOutput]) -> dict[str, float]:
    if len(chains) < 2:
        return {n: math.nan for n in MONITORED}
    out = {}
    for i, name in enumerate(MONITORED):
        out[name] = psrf([c.draws[:, i] for c in chains])
    return out


def run_until_converged(
    model: CoexModel,
    config: ChainConfig = ChainConfig(),
    chain_indices: Sequence[int] | None = None,
    raise_on_failure: bool = True,
) -> PosteriorSample:
    """Run ``n_chains`` chains, extending all of them until every monitored PSRF passes.

    ``chain_indices`` overrides the seed index of each chain (a test rig for
    forcing identical chains).  On hitting ``max_total_iters`` a
    :class:`ConvergenceFailure` carrying the partial sample is raised, or
    the sample is returned with ``converged=False`` when ``raise_on_failure``
    is false.
    """
    seeds = list(range(config.n_chains)) if chain_indices is None else list(chain_indices)
    chains = [run_chain(model, config, chain_index=c, seed_index=k) for c, k in enumerate(seeds)]
    stats = _monitor(chains)
    total = config.iters_initial

    def ok(st):
        return all(not (v > config.psrf_threshold) for v in st.values())

    while not ok(stats) and total + config.extend_by <= config.max_total_iters:
        worst = max(stats, key=lambda k: stats[k])
        log.debug("psrf %s = %.3f after %d iterations; extending", worst, stats[worst], total)
        for c in chains:
            extend_chain(model, c, config.extend_by)
        total += config.extend_by
        stats = _monitor(chains)

    converged = ok(stats)
    sel = slice(config.thin - 1, None, config.thin)
    attempts = sum(c.attempts for c in chains)
    sample = PosteriorSample(
        draws=np.concatenate([c.draws[sel] for c in chains]),
        model_draws=np.concatenate([c.model_draws[sel] for c in chains]),
        chain_id=np.concatenate([np.full(c.draws[sel].shape[0], c.chain_index) for c in chains]),
        model_ids=model.data.model_ids,
        psrf=stats,
        converged=converged,
        total_iters=total,
        n_chains=len(chains),
        accept_rate_h=sum(c.accepted_h for c in chains) / attempts if attempts else 0.0,
        accept_rate_f=sum(c.accepted_f for c in chains) / attempts if attempts else 0.0,
        windows=np.stack([c.draws for c in chains]),
    )
    if not converged and raise_on_failure:
        worst = max(stats, key=lambda k: stats[k])
        raise ConvergenceFailure(
            f"no convergence after {total} iterations per chain (psrf {worst} = {stats[worst]:.3f})", sample
        )
    return sample
