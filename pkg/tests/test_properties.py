import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coexchange.diagnostics import correlations, psrf, summarize
from coexchange.gibbs import init_chain_state
from coexchange.model import CoexModel, EnsembleData, ModelRuns, PriorConfig, ReanalysisData
from coexchange.validation import dilution_expectation, ensemble_regression, ks_uniform, pit_value

finite = st.floats(-50, 50, allow_nan=False, width=64)
settings.register_profile("ci", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@st.composite
def datasets(draw):
    m = draw(st.integers(2, 5))
    models = []
    for j in range(m):
        h = draw(st.lists(finite, min_size=1, max_size=4))
        f = draw(st.lists(finite, min_size=1, max_size=4))
        models.append(ModelRuns(f"m{j}", tuple(h), tuple(f)))
    w = draw(st.lists(finite, min_size=2, max_size=5))
    return EnsembleData(tuple(models)), ReanalysisData(tuple(w))


@given(datasets(), st.integers(0, 3), st.floats(-100, 100))
def test_log_joint_translation_invariance(dr, chain, c):
    data, rean = dr
    model = CoexModel(data, rean, PriorConfig(a_mu_h=1.5))
    s = init_chain_state(model, 0, chain)
    shifted = CoexModel(data.shifted(c), ReanalysisData(tuple(v + c for v in rean.values)), PriorConfig(a_mu_h=1.5 + c))
    s2 = s.with_values(mu_h=s.mu_h + c, mu_f=s.mu_f + c, y_h=s.y_h + c, y_ha=s.y_ha + c, mu_w=s.mu_w + c,
                       x_h=s.x_h + c, x_f=s.x_f + c)
    a, b = model.log_joint(s), shifted.log_joint(s2)
    assert b == pytest.approx(a, rel=1e-7, abs=1e-6)


@given(datasets(), st.randoms(use_true_random=False))
def test_log_joint_permutations(dr, rnd):
    data, rean = dr
    model = CoexModel(data, rean)
    s = init_chain_state(model, 1, 0)
    w = list(rean.values)
    rnd.shuffle(w)
    assert CoexModel(data, ReanalysisData(tuple(w))).log_joint(s) == pytest.approx(model.log_joint(s), rel=1e-10)
    order = list(range(data.n_models))
    rnd.shuffle(order)
    pdata = EnsembleData(tuple(data.models[j] for j in order))
    ps = s.with_values(**{n: getattr(s, n)[order] for n in ("x_h", "x_f", "tau_m", "phi_m")})
    assert CoexModel(pdata, rean).log_joint(ps) == pytest.approx(model.log_joint(s), rel=1e-10)


@given(arrays(float, (3, 12), elements=st.floats(-10, 10)), st.floats(0.01, 100), st.floats(-1e3, 1e3))
def test_psrf_affine_invariance(x, a, b):
    base = psrf(x)
    if np.isfinite(base) and base < 1e6:
        assert psrf(a * x + b) == pytest.approx(base, rel=1e-6)
        assert psrf(-a * x) == pytest.approx(base, rel=1e-6)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.floats(-1e3, 1e3))
def test_summarize_shift(xs, c):
    s, t = summarize(xs), summarize(np.asarray(xs) + c)
    assert s.q05 <= s.q25 <= s.q50 <= s.q75 <= s.q95 and s.sd >= 0 and s.mcse >= 0
    for q in ("mean", "q05", "q25", "q50", "q75", "q95"):
        assert getattr(t, q) == pytest.approx(getattr(s, q) + c, abs=1e-8)
    assert t.sd == pytest.approx(s.sd, abs=1e-8)
    assert t.mcse == pytest.approx(s.mcse, abs=1e-8)


@given(arrays(float, (20, 3), elements=st.floats(-10, 10)),
       arrays(float, 3, elements=st.floats(0.1, 10)), arrays(float, 3, elements=st.floats(-10, 10)))
def test_correlations_affine_invariance(x, scale, shift):
    c1, k1 = correlations(x)
    c2, k2 = correlations(x * scale + shift)
    assert np.all(np.abs(c1) <= 1) and np.allclose(np.diag(c1), 1)
    if np.array_equal(k1, k2):
        assert np.allclose(c1, c2, atol=1e-6)


@given(st.lists(st.floats(0, 1), min_size=3, max_size=40), st.randoms(use_true_random=False))
def test_ks_permutation(pits, rnd):
    p = ks_uniform(pits)
    shuffled = list(pits)
    rnd.shuffle(shuffled)
    assert 0 <= p <= 1 and ks_uniform(shuffled) == p


@given(arrays(float, st.integers(0, 50), elements=st.floats(-5, 5)), st.floats(-5, 5))
def test_pit_is_open_interval(pred, obs):
    assert 0 < pit_value(pred, obs) < 1


@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=8, unique_by=lambda t: t[0]), st.floats(-100, 100))
def test_regression_invariant_to_hist_shift(pairs, c):
    data = EnsembleData(tuple(ModelRuns(f"m{j}", (h,), (h + r,)) for j, (h, r) in enumerate(pairs)))
    hs = [h for h, _ in pairs]
    if np.ptp(hs) < 1e-3:
        return
    shifted = EnsembleData(tuple(ModelRuns(m.model_id, (m.hist_runs[0] + c,), m.fut_runs) for m in data.models))
    assert ensemble_regression(shifted).beta_prime_hat == pytest.approx(
        ensemble_regression(data).beta_prime_hat, rel=1e-6, abs=1e-6)


@given(st.floats(-0.9, 2), st.floats(0.1, 10), st.floats(0.01, 10), st.integers(1, 50))
def test_dilution_monotone_in_r(bp, sh2, s2, r):
    assert dilution_expectation(bp, sh2, s2, r) < dilution_expectation(bp, sh2, s2, r + 1) <= bp
