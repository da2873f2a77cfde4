import math
import warnings

import numpy as np
import pytest
from scipy import stats

from coexchange.model import (
    CoexModel,
    EnsembleData,
    InadequacyConfig,
    ModelRuns,
    ParameterState,
    PriorConfig,
    ReanalysisData,
    ReanalysisSpreadWarning,
    derived,
    log_joint,
    validate,
)


def minimal():
    data = EnsembleData((ModelRuns("a", (1.0,), (2.0,)), ModelRuns("b", (1.5,), (2.5,))))
    return data, ReanalysisData((1.1, 1.2, 0.9, 1.0))


def test_minimal_input_is_valid():
    data, rean = minimal()
    assert validate(data, rean) == []


def test_missing_future_runs_is_reported():
    data = EnsembleData((ModelRuns("a", (1.0,), ()), ModelRuns("b", (1.5,), (2.5,))))
    problems = validate(data, ReanalysisData((1.0,) * 4))
    assert any("fut_runs empty" in p and "models[a]" in p for p in problems)


def test_other_violations():
    one = EnsembleData((ModelRuns("a", (1.0,), (2.0,)),))
    assert any("M >= 2" in p for p in validate(one, ReanalysisData((1.0, 2.0))))
    dup = EnsembleData((ModelRuns("a", (1.0,), (2.0,)), ModelRuns("a", (1.0,), (2.0,))))
    assert any("duplicate" in p for p in validate(dup, ReanalysisData((1.0, 2.0))))
    nan = EnsembleData((ModelRuns("a", (math.nan,), (2.0,)), ModelRuns("b", (1.0,), (2.0,))))
    assert any("non-finite" in p for p in validate(nan, ReanalysisData((1.0, 2.0))))
    data, _ = minimal()
    assert any("N >= 1" in p for p in validate(data, ReanalysisData(())))
    assert any("non-finite" in p for p in validate(data, ReanalysisData((math.inf,))))


def test_single_reanalysis_warns_but_is_valid():
    data, _ = minimal()
    with pytest.warns(ReanalysisSpreadWarning, match="prior-dominated"):
        assert validate(data, ReanalysisData((1.0,))) == []


def test_ensemble_helpers():
    data, _ = minimal()
    assert data.n_models == 2
    assert data.model_ids == ["a", "b"]
    np.testing.assert_allclose(data.hist_means(), [1.0, 1.5])
    np.testing.assert_allclose(data.shifted(10.0).fut_means(), [12.0, 12.5])
    assert data.subset(["b"]).model_ids == ["b"]


def test_prior_defaults():
    p = PriorConfig()
    assert (p.b_mu_h, p.b_mu_f, p.b_beta, p.a_mu_h, p.a_beta) == (1e-6, 1e-6, 1e-6, 0.0, 1.0)
    for name in ("tau_h", "tau_f", "psi2", "theta2", "tau_w"):
        assert getattr(p, f"a_{name}") == getattr(p, f"b_{name}") == 1e-3
    r = p.resolved(13)
    assert (r.a_nu_h, r.b_nu_h, r.a_nu_f, r.b_nu_f) == (1.0, 1 / 13, 1.0, 1 / 13)
    assert p.violations() == []
    assert PriorConfig(b_tau_h=0.0).violations()


def test_inadequacy_defaults_and_bounds():
    assert InadequacyConfig() == InadequacyConfig(1.2, 1.2)
    with pytest.raises(ValueError):
        InadequacyConfig(kappa=0.9)
    with pytest.raises(ValueError):
        InadequacyConfig(kappa_w=0.5)


def test_derived_relations(state):
    d = derived(state, InadequacyConfig(1.0, 1.0))
    assert d.tau_delta_h == state.tau_h and d.nu_ha == state.nu_h
    s = state.with_values(tau_h=1.44)
    assert derived(s, InadequacyConfig(1.2, 1.2)).tau_delta_h == pytest.approx(1.0, rel=1e-15)
    s = state.with_values(nu_f=8.0)
    assert derived(s, InadequacyConfig(2.0, 1.0)).nu_fa == 2.0
    d1 = derived(state, InadequacyConfig(1.3, 1.7))
    assert d1 == derived(state, InadequacyConfig(1.3, 1.7))
    assert d1.tau_delta_w == state.tau_w / 1.7**2
    assert d1.tau_delta_f == state.tau_f / 1.3**2


def test_state_arrays_are_read_only(state):
    with pytest.raises(ValueError):
        state.x_h[0] = 1.0
    back = ParameterState.from_arrays(state.scalars(), state.model_block())
    assert back.scalars().tolist() == state.scalars().tolist()
    assert back.is_valid()


def test_log_joint_invalid_state_is_minus_inf(model, state):
    assert log_joint(state, model.data, model.rean, model.priors, model.inadequacy) > -math.inf
    for bad in (dict(tau_h=-1.0), dict(nu_f=0.0), dict(mu_h=math.nan), dict(tau_m=-state.tau_m)):
        assert model.log_joint(state.with_values(**bad)) == -math.inf


def test_log_joint_reanalysis_permutation(model, state):
    rev = CoexModel(model.data, ReanalysisData(model.rean.values[::-1]), model.priors, model.inadequacy)
    assert rev.log_joint(state) == pytest.approx(model.log_joint(state), rel=1e-13)


def test_log_joint_translation(model, state):
    c = 7.25
    priors = PriorConfig(a_mu_h=model.priors.a_mu_h + c)
    shifted = CoexModel(model.data.shifted(c), ReanalysisData(tuple(v + c for v in model.rean.values)), priors)
    s2 = state.with_values(
        mu_h=state.mu_h + c, mu_f=state.mu_f + c, y_h=state.y_h + c, y_ha=state.y_ha + c,
        mu_w=state.mu_w + c, x_h=state.x_h + c, x_f=state.x_f + c,
    )
    assert shifted.log_joint(s2) == pytest.approx(model.log_joint(state), rel=1e-10)


def _reference_log_joint(s, data, rean, p, cfg):
    """Term-by-term transcription of the joint with scipy densities (normalizers included)."""
    p = p.resolved(data.n_models)
    k2, kw2 = cfg.kappa**2, cfg.kappa_w**2
    nu_ha, nu_fa = s.nu_h / k2, s.nu_f / k2
    n = stats.norm.logpdf
    g = lambda x, a, b: stats.gamma.logpdf(x, a, scale=1 / b)
    sd = lambda prec: 1 / math.sqrt(prec)
    out = 0.0
    # reanalyses
    out += sum(n(w, s.mu_w, sd(s.tau_w)) for w in rean.values)
    out += n(s.mu_w, s.y_ha, sd(s.tau_w / kw2))
    # real system
    out += n(s.y_ha, s.y_h, sd(s.tau_a))
    out += g(s.tau_a, nu_ha / 2, nu_ha * s.psi2 / 2)
    out += n(s.y_h, s.mu_h, sd(s.tau_h / k2))
    # runs and model climates
    for j, m in enumerate(data.models):
        out += sum(n(x, s.x_h[j], sd(s.tau_m[j])) for x in m.hist_runs)
        out += sum(n(x, s.x_f[j], sd(s.tau_m[j] * s.phi_m[j])) for x in m.fut_runs)
        out += n(s.x_h[j], s.mu_h, sd(s.tau_h))
        out += n(s.x_f[j], s.mu_f + s.beta * (s.x_h[j] - s.mu_h), sd(s.tau_f))
        out += g(s.tau_m[j], s.nu_h / 2, s.nu_h * s.psi2 / 2)
        out += g(s.phi_m[j], s.nu_f / 2, s.nu_f * s.theta2 / 2)
    # priors
    out += n(s.mu_h, p.a_mu_h, sd(p.b_mu_h))
    out += n(s.mu_f, s.mu_h, sd(p.b_mu_f))
    out += n(s.beta, p.a_beta, sd(p.b_beta))
    for name in ("tau_h", "tau_f", "psi2", "theta2", "nu_h", "nu_f", "tau_w"):
        out += g(getattr(s, name), getattr(p, f"a_{name}"), getattr(p, f"b_{name}"))
    return out


def test_log_joint_matches_independent_transcription(model, state):
    """Differences between two states cancel every state-independent constant."""
    rng = np.random.default_rng(3)
    ref0 = _reference_log_joint(state, model.data, model.rean, model.priors, model.inadequacy)
    lj0 = model.log_joint(state)
    for _ in range(10):
        other = state.with_values(
            mu_h=state.mu_h + rng.normal(), beta=state.beta + rng.normal(0, 0.2),
            psi2=state.psi2 * rng.uniform(0.5, 2), nu_h=state.nu_h * rng.uniform(0.5, 2),
            nu_f=state.nu_f * rng.uniform(0.5, 2), tau_a=state.tau_a * rng.uniform(0.5, 2),
            x_h=state.x_h + rng.normal(0, 0.3, state.n_models),
            phi_m=state.phi_m * rng.uniform(0.5, 2, state.n_models),
            tau_w=state.tau_w * rng.uniform(0.5, 2), mu_w=state.mu_w + rng.normal(0, 0.3),
        )
        ref = _reference_log_joint(other, model.data, model.rean, model.priors, model.inadequacy)
        assert model.log_joint(other) - lj0 == pytest.approx(ref - ref0, rel=1e-9, abs=1e-8)


def test_coexmodel_allows_withheld_future_runs(data_rean):
    data, rean = data_rean
    models = list(data.models)
    models[0] = ModelRuns(models[0].model_id, models[0].hist_runs, ())
    m = CoexModel(EnsembleData(tuple(models)), rean)
    assert m.runs[1, 0] == 0 and m.runs[3, 0] == 0
