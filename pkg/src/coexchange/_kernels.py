"""Compiled full-conditional updates.

State is split into a scalar vector ``s`` (layout ``model.SCALAR_NAMES``) and a
``(4, M)`` block ``mb`` (x_h, x_f, tau_m, phi_m).  Every ``cond_*`` function
returns the parameters of a closed-form conditional: ``(mean, precision)``
for normals, ``(shape, rate)`` for gammas.  The block updates draw from these
same functions, so the grid oracle checks exactly what the sampler uses.

All draws come from a ``numpy.random.Generator`` passed in by the caller;
numba advances its bit generator exactly as numpy would.
"""
import math

import numpy as np
from numba import njit

MU_H, MU_F, BETA, TAU_H, TAU_F, PSI2, THETA2, NU_H, NU_F, Y_H, Y_HA, TAU_A, MU_W, TAU_W = range(14)
X_H, X_F, TAU_M, PHI_M = range(4)
R_H, R_F, MEAN_H, MEAN_F, SS_H, SS_F = range(6)
W_N, W_MEAN, W_SS = range(3)
(
    A_MU_H, B_MU_H, B_MU_F, A_BETA, B_BETA, A_TAU_H, B_TAU_H, A_TAU_F, B_TAU_F,
    A_PSI2, B_PSI2, A_THETA2, B_THETA2, A_NU_H, B_NU_H, A_NU_F, B_NU_F,
    A_TAU_W, B_TAU_W, KAPPA, KAPPA_W,
) = range(21)

N_OUT = 17  # 14 scalars + y_f, y_fa, phi_a
TINY = 2.2250738585072014e-308
TARGET_ACCEPT = 0.44


@njit(cache=True)
def _positive(x):
    # gamma draws with shape << 1 can underflow to zero
    return x if x > 0.0 else TINY


@njit(cache=True)
def _gamma(rng, shape, rate):
    return _positive(rng.gamma(shape, 1.0 / rate))


@njit(cache=True)
def _normal(rng, mean, prec):
    return rng.normal(mean, 1.0 / math.sqrt(prec))


# ---------------------------------------------------------------- system

@njit(cache=True)
def cond_y_ha(s, h):
    tdw = s[TAU_W] / h[KAPPA_W] ** 2
    prec = s[TAU_A] + tdw
    return (s[TAU_A] * s[Y_H] + tdw * s[MU_W]) / prec, prec


@njit(cache=True)
def cond_y_h(s, h):
    tdh = s[TAU_H] / h[KAPPA] ** 2
    prec = tdh + s[TAU_A]
    return (tdh * s[MU_H] + s[TAU_A] * s[Y_HA]) / prec, prec


@njit(cache=True)
def cond_tau_a(s, h):
    nu_ha = s[NU_H] / h[KAPPA] ** 2
    d = s[Y_HA] - s[Y_H]
    return 0.5 * (nu_ha + 1.0), 0.5 * (nu_ha * s[PSI2] + d * d)


@njit(cache=True)
def system_block(s, h, rng):
    m, p = cond_y_ha(s, h)
    s[Y_HA] = _normal(rng, m, p)
    m, p = cond_y_h(s, h)
    s[Y_H] = _normal(rng, m, p)
    a, b = cond_tau_a(s, h)
    s[TAU_A] = _gamma(rng, a, b)


# ---------------------------------------------------------------- reanalysis

@njit(cache=True)
def cond_mu_w(s, h, w):
    tdw = s[TAU_W] / h[KAPPA_W] ** 2
    prec = s[TAU_W] * w[W_N] + tdw
    return (s[TAU_W] * w[W_N] * w[W_MEAN] + tdw * s[Y_HA]) / prec, prec


@njit(cache=True)
def cond_tau_w(s, h, w):
    dm = w[W_MEAN] - s[MU_W]
    ss = w[W_SS] + w[W_N] * dm * dm
    dy = s[MU_W] - s[Y_HA]
    return (
        h[A_TAU_W] + 0.5 * (w[W_N] + 1.0),
        h[B_TAU_W] + 0.5 * ss + 0.5 * dy * dy / h[KAPPA_W] ** 2,
    )


@njit(cache=True)
def reanalysis_block(s, h, w, rng):
    m, p = cond_mu_w(s, h, w)
    s[MU_W] = _normal(rng, m, p)
    a, b = cond_tau_w(s, h, w)
    s[TAU_W] = _gamma(rng, a, b)


# ---------------------------------------------------------------- latent model states

@njit(cache=True)
def cond_x_f(s, mb, runs, j):
    pf = mb[PHI_M, j] * mb[TAU_M, j]
    prec = s[TAU_F] + pf * runs[R_F, j]
    centre = s[MU_F] + s[BETA] * (mb[X_H, j] - s[MU_H])
    return (s[TAU_F] * centre + pf * runs[R_F, j] * runs[MEAN_F, j]) / prec, prec


@njit(cache=True)
def cond_x_h(s, mb, runs, j):
    b = s[BETA]
    prec = s[TAU_H] + s[TAU_F] * b * b + mb[TAU_M, j] * runs[R_H, j]
    num = (
        s[TAU_H] * s[MU_H]
        + s[TAU_F] * b * (mb[X_F, j] - s[MU_F] + b * s[MU_H])
        + mb[TAU_M, j] * runs[R_H, j] * runs[MEAN_H, j]
    )
    return num / prec, prec


@njit(cache=True)
def _ss_about(runs, j, x, which):
    # sum_r (X_smr - x)^2 from the stored mean and spread
    if which == 0:
        d = runs[MEAN_H, j] - x
        return runs[SS_H, j] + runs[R_H, j] * d * d
    d = runs[MEAN_F, j] - x
    return runs[SS_F, j] + runs[R_F, j] * d * d


@njit(cache=True)
def cond_tau_m(s, mb, runs, j):
    ss_h = _ss_about(runs, j, mb[X_H, j], 0)
    ss_f = _ss_about(runs, j, mb[X_F, j], 1)
    return (
        0.5 * (s[NU_H] + runs[R_H, j] + runs[R_F, j]),
        0.5 * (s[NU_H] * s[PSI2] + ss_h + mb[PHI_M, j] * ss_f),
    )


@njit(cache=True)
def cond_phi_m(s, mb, runs, j):
    ss_f = _ss_about(runs, j, mb[X_F, j], 1)
    return (
        0.5 * (s[NU_F] + runs[R_F, j]),
        0.5 * (s[NU_F] * s[THETA2] + mb[TAU_M, j] * ss_f),
    )


@njit(cache=True)
def model_block(s, mb, runs, rng):
    for j in range(mb.shape[1]):
        m, p = cond_x_f(s, mb, runs, j)
        mb[X_F, j] = _normal(rng, m, p)
        m, p = cond_x_h(s, mb, runs, j)
        mb[X_H, j] = _normal(rng, m, p)
        a, b = cond_tau_m(s, mb, runs, j)
        mb[TAU_M, j] = _gamma(rng, a, b)
        a, b = cond_phi_m(s, mb, runs, j)
        mb[PHI_M, j] = _gamma(rng, a, b)


# ---------------------------------------------------------------- ensemble parameters

@njit(cache=True)
def cond_mu_h(s, mb, h):
    n = mb.shape[1]
    b = s[BETA]
    tdh = s[TAU_H] / h[KAPPA] ** 2
    sum_xh = 0.0
    sum_c = 0.0
    for j in range(n):
        sum_xh += mb[X_H, j]
        sum_c += mb[X_F, j] - s[MU_F] - b * mb[X_H, j]
    prec = h[B_MU_H] + h[B_MU_F] + s[TAU_H] * n + s[TAU_F] * b * b * n + tdh
    num = (
        h[B_MU_H] * h[A_MU_H]
        + h[B_MU_F] * s[MU_F]
        + s[TAU_H] * sum_xh
        - s[TAU_F] * b * sum_c
        + tdh * s[Y_H]
    )
    return num / prec, prec


@njit(cache=True)
def cond_mu_f(s, mb, h):
    n = mb.shape[1]
    acc = 0.0
    for j in range(n):
        acc += mb[X_F, j] - s[BETA] * (mb[X_H, j] - s[MU_H])
    prec = h[B_MU_F] + s[TAU_F] * n
    return (h[B_MU_F] * s[MU_H] + s[TAU_F] * acc) / prec, prec


@njit(cache=True)
def cond_beta(s, mb, h):
    sxy = 0.0
    sxx = 0.0
    for j in range(mb.shape[1]):
        dx = mb[X_H, j] - s[MU_H]
        sxy += dx * (mb[X_F, j] - s[MU_F])
        sxx += dx * dx
    prec = h[B_BETA] + s[TAU_F] * sxx
    return (h[B_BETA] * h[A_BETA] + s[TAU_F] * sxy) / prec, prec


@njit(cache=True)
def cond_tau_h(s, mb, h):
    n = mb.shape[1]
    ss = 0.0
    for j in range(n):
        d = mb[X_H, j] - s[MU_H]
        ss += d * d
    dy = s[Y_H] - s[MU_H]
    return h[A_TAU_H] + 0.5 * (n + 1.0), h[B_TAU_H] + 0.5 * (ss + dy * dy / h[KAPPA] ** 2)


@njit(cache=True)
def cond_tau_f(s, mb, h):
    n = mb.shape[1]
    ss = 0.0
    for j in range(n):
        r = mb[X_F, j] - s[MU_F] - s[BETA] * (mb[X_H, j] - s[MU_H])
        ss += r * r
    return h[A_TAU_F] + 0.5 * n, h[B_TAU_F] + 0.5 * ss


@njit(cache=True)
def cond_psi2(s, mb, h):
    n = mb.shape[1]
    nu_ha = s[NU_H] / h[KAPPA] ** 2
    sum_tau = 0.0
    for j in range(n):
        sum_tau += mb[TAU_M, j]
    return (
        h[A_PSI2] + 0.5 * (s[NU_H] * n + nu_ha),
        h[B_PSI2] + 0.5 * (s[NU_H] * sum_tau + nu_ha * s[TAU_A]),
    )


@njit(cache=True)
def cond_theta2(s, mb, h):
    n = mb.shape[1]
    sum_phi = 0.0
    for j in range(n):
        sum_phi += mb[PHI_M, j]
    return h[A_THETA2] + 0.5 * s[NU_F] * n, h[B_THETA2] + 0.5 * s[NU_F] * sum_phi


@njit(cache=True)
def ensemble_block(s, mb, h, rng):
    m, p = cond_mu_h(s, mb, h)
    s[MU_H] = _normal(rng, m, p)
    m, p = cond_mu_f(s, mb, h)
    s[MU_F] = _normal(rng, m, p)
    m, p = cond_beta(s, mb, h)
    s[BETA] = _normal(rng, m, p)
    a, b = cond_tau_h(s, mb, h)
    s[TAU_H] = _gamma(rng, a, b)
    a, b = cond_tau_f(s, mb, h)
    s[TAU_F] = _gamma(rng, a, b)
    a, b = cond_psi2(s, mb, h)
    s[PSI2] = _gamma(rng, a, b)
    a, b = cond_theta2(s, mb, h)
    s[THETA2] = _gamma(rng, a, b)


# ---------------------------------------------------------------- degrees of freedom

@njit(cache=True)
def _gamma_logpdf(x, shape, rate):
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


@njit(cache=True)
def nu_log_target(s, mb, h, which, nu):
    """log l(nu) + log p(nu); which = 0 for nu_h, 1 for nu_f."""
    if not (nu > 0.0) or not math.isfinite(nu):
        return -np.inf
    n = mb.shape[1]
    if which == 0:
        shape = 0.5 * nu
        rate = 0.5 * nu * s[PSI2]
        sum_log = 0.0
        sum_x = 0.0
        for j in range(n):
            sum_log += math.log(mb[TAU_M, j])
            sum_x += mb[TAU_M, j]
        lp = n * (shape * math.log(rate) - math.lgamma(shape)) + (shape - 1.0) * sum_log - rate * sum_x
        nu_a = nu / h[KAPPA] ** 2
        lp += _gamma_logpdf(s[TAU_A], 0.5 * nu_a, 0.5 * nu_a * s[PSI2])
        lp += (h[A_NU_H] - 1.0) * math.log(nu) - h[B_NU_H] * nu
    else:
        shape = 0.5 * nu
        rate = 0.5 * nu * s[THETA2]
        sum_log = 0.0
        sum_x = 0.0
        for j in range(n):
            sum_log += math.log(mb[PHI_M, j])
            sum_x += mb[PHI_M, j]
        lp = 0.0
        if n > 0:
            lp = n * (shape * math.log(rate) - math.lgamma(shape)) + (shape - 1.0) * sum_log - rate * sum_x
        lp += (h[A_NU_F] - 1.0) * math.log(nu) - h[B_NU_F] * nu
    return lp


@njit(cache=True)
def nu_log_ratio(s, mb, h, which, nu, nu_star, lam):
    """Log Metropolis-Hastings ratio for moving nu -> nu_star.

    Proposal q(x | y) = Gamma(shape y*lam, rate lam); the correction is
    q(nu | nu_star) / q(nu_star | nu).
    """
    if not (nu_star > 0.0) or not math.isfinite(nu_star):
        return -np.inf
    if nu_star == nu:
        return 0.0
    lt = nu_log_target(s, mb, h, which, nu_star) - nu_log_target(s, mb, h, which, nu)
    lq = _gamma_logpdf(nu, nu_star * lam, lam) - _gamma_logpdf(nu_star, nu * lam, lam)
    return lt + lq


@njit(cache=True)
def mh_nu(s, mb, h, which, lam, rng):
    """One MH move for nu_h (which=0) or nu_f (which=1); returns (accepted, accept_prob)."""
    idx = NU_H if which == 0 else NU_F
    nu = s[idx]
    nu_star = rng.gamma(nu * lam, 1.0 / lam)
    log_r = nu_log_ratio(s, mb, h, which, nu, nu_star, lam)
    u = rng.random()
    prob = 1.0 if log_r >= 0.0 else math.exp(log_r)
    if math.log(u) < log_r:
        s[idx] = nu_star
        return True, prob
    return False, prob


# ---------------------------------------------------------------- sweep and predictive

@njit(cache=True)
def sweep(s, mb, runs, w, h, lam_h, lam_f, rng):
    system_block(s, h, rng)
    reanalysis_block(s, h, w, rng)
    model_block(s, mb, runs, rng)
    ensemble_block(s, mb, h, rng)
    acc_h, p_h = mh_nu(s, mb, h, 0, lam_h, rng)
    acc_f, p_f = mh_nu(s, mb, h, 1, lam_f, rng)
    return acc_h, acc_f, p_h, p_f


@njit(cache=True)
def predictive(s, h, rng):
    k2 = h[KAPPA] ** 2
    nu_fa = s[NU_F] / k2
    phi_a = _gamma(rng, 0.5 * nu_fa, 0.5 * nu_fa * s[THETA2])
    y_f = _normal(rng, s[MU_F] + s[BETA] * (s[Y_H] - s[MU_H]), s[TAU_F] / k2)
    y_fa = _normal(rng, y_f, phi_a * s[TAU_A])
    return y_f, y_fa, phi_a


@njit(cache=True)
def run_segment(s, mb, runs, w, h, lam, n_iter, n_adapt, adapt_start, rng, out_s, out_m, counts):
    """Run ``n_iter`` sweeps, writing every state (plus a predictive draw) to the outputs.

    During the first ``n_adapt`` sweeps the log proposal scales in ``lam``
    follow a Robbins-Monro recursion toward TARGET_ACCEPT; afterwards they
    are frozen.  ``counts`` accumulates [acc_h, acc_f, attempts] over the
    non-adaptive sweeps only.
    """
    for t in range(n_iter):
        acc_h, acc_f, p_h, p_f = sweep(s, mb, runs, w, h, lam[0], lam[1], rng)
        if t < n_adapt:
            gain = 1.0 / (adapt_start + t + 1.0) ** 0.6
            lam[0] = min(max(lam[0] * math.exp(gain * (TARGET_ACCEPT - p_h)), 1e-3), 1e6)
            lam[1] = min(max(lam[1] * math.exp(gain * (TARGET_ACCEPT - p_f)), 1e-3), 1e6)
        else:
            counts[0] += 1 if acc_h else 0
            counts[1] += 1 if acc_f else 0
            counts[2] += 1
        y_f, y_fa, phi_a = predictive(s, h, rng)
        for k in range(14):
            out_s[t, k] = s[k]
        out_s[t, 14] = y_f
        out_s[t, 15] = y_fa
        out_s[t, 16] = phi_a
        out_m[t, :, :] = mb
