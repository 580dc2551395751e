"""Meta-learners: pseudo-outcome identities, stage wiring, learner behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catebias.architectures import NetworkSpec
from catebias.data import Dataset
from catebias.metalearners import (DegenerateResidualError, EmptyArmError, fit_net_regressor,
                                   fit_propensity, fit_pseudo_learner, fit_r_learner,
                                   fit_s_learner, fit_t_learner, fit_x_learner,
                                   pseudo_dr, pseudo_outcome, pseudo_pw, pseudo_ra,
                                   r_stage2_loss, SEED_MU0, SEED_MU1)
from catebias.layers import build_stack
from catebias.training import TrainConfig

SPEC = NetworkSpec(d_r=1, n_r=8, d_h=1, n_h=4)
FAST = TrainConfig(batch_size=64, step_size=3e-3, max_steps=600, patience=10, seed=5)


# -- pseudo-outcome values ---------------------------------------------------------


def test_pseudo_ra_direct_values():
    assert pseudo_ra(y=3.0, w=1.0, mu0=1.0, mu1=99.0) == pytest.approx(2.0)
    assert pseudo_ra(y=1.5, w=1.0, mu0=1.5, mu1=0.0) == pytest.approx(0.0)
    assert pseudo_ra(y=0.0, w=0.0, mu0=7.0, mu1=5.0) == pytest.approx(5.0)


def test_pseudo_pw_direct_values():
    assert pseudo_pw(y=1.0, w=1.0, pi=0.5) == pytest.approx(2.0)
    assert pseudo_pw(y=2.0, w=0.0, pi=0.5) == pytest.approx(-4.0)
    assert pseudo_pw(y=0.0, w=1.0, pi=0.123) == pytest.approx(0.0)


def test_pseudo_pw_rejects_unclamped_propensity():
    with pytest.raises(ValueError, match="clamp"):
        pseudo_pw(np.array([1.0]), np.array([1.0]), np.array([1.0]))


def test_pseudo_dr_direct_value():
    assert pseudo_dr(y=1.0, w=1.0, pi=0.5, mu0=0.0, mu1=0.0) == pytest.approx(2.0)


def test_pseudo_dr_identity_at_truth_noiseless():
    # with perfect nuisances and y = mu_w exactly, DR returns tau for both arms
    mu0, mu1, pi = 1.3, 2.9, 0.37
    for w in (0.0, 1.0):
        y = mu1 if w == 1.0 else mu0
        assert pseudo_dr(y, w, pi, mu0, mu1) == pytest.approx(mu1 - mu0)


# -- brute-force expectation oracle -------------------------------------------------


def expectation_oracle(kind, pi, mu0, mu1, mu0_hat, mu1_hat, pi_hat):
    """E[pseudo | X=x] by enumerating W (Y = mu_w, pseudo-outcomes are
    linear in Y so mean-zero noise cannot change the expectation)."""
    total = 0.0
    for w, prob in ((1.0, pi), (0.0, 1.0 - pi)):
        y = mu1 if w == 1.0 else mu0
        total += prob * float(pseudo_outcome(kind, np.array([y]), np.array([w]),
                                             np.array([pi_hat]), np.array([mu0_hat]),
                                             np.array([mu1_hat]))[0])
    return total


FINITE_DGP = {
    (0, 0): {"pi": 0.3, "mu0": 1.0, "mu1": 2.5},
    (0, 1): {"pi": 0.6, "mu0": -1.0, "mu1": 0.2},
    (1, 0): {"pi": 0.5, "mu0": 0.7, "mu1": 0.7},
    (1, 1): {"pi": 0.7, "mu0": 2.0, "mu1": -3.0},
}


@pytest.mark.parametrize("kind", ["ra", "pw", "dr"])
def test_pseudo_outcomes_unbiased_at_true_nuisances(kind):
    for point in FINITE_DGP.values():
        tau = point["mu1"] - point["mu0"]
        value = expectation_oracle(kind, point["pi"], point["mu0"], point["mu1"],
                                   point["mu0"], point["mu1"], point["pi"])
        assert abs(value - tau) < 1e-10


def test_dr_double_robustness_on_finite_support():
    for point in FINITE_DGP.values():
        tau = point["mu1"] - point["mu0"]
        # outcome regressions wrong, propensity right
        value = expectation_oracle("dr", point["pi"], point["mu0"], point["mu1"],
                                   point["mu0"] + 1.7, point["mu1"] - 2.3, point["pi"])
        assert abs(value - tau) < 1e-10
        # propensity wrong, outcome regressions right
        value = expectation_oracle("dr", point["pi"], point["mu0"], point["mu1"],
                                   point["mu0"], point["mu1"], 0.11)
        assert abs(value - tau) < 1e-10


@given(pi=st.floats(0.05, 0.95), mu0=st.floats(-5, 5), mu1=st.floats(-5, 5),
       wrong_mu0=st.floats(-5, 5), wrong_mu1=st.floats(-5, 5),
       wrong_pi=st.floats(0.05, 0.95))
@settings(max_examples=200)
def test_dr_double_robustness_property(pi, mu0, mu1, wrong_mu0, wrong_mu1, wrong_pi):
    tau = mu1 - mu0
    with_wrong_mu = expectation_oracle("dr", pi, mu0, mu1, wrong_mu0, wrong_mu1, pi)
    with_wrong_pi = expectation_oracle("dr", pi, mu0, mu1, mu0, mu1, wrong_pi)
    assert abs(with_wrong_mu - tau) < 1e-9
    assert abs(with_wrong_pi - tau) < 1e-9


@given(pi=st.floats(0.05, 0.95), mu0=st.floats(-5, 5), mu1=st.floats(-5, 5))
@settings(max_examples=100)
def test_ra_pw_unbiased_property(pi, mu0, mu1):
    tau = mu1 - mu0
    assert abs(expectation_oracle("ra", pi, mu0, mu1, mu0, mu1, pi) - tau) < 1e-9
    assert abs(expectation_oracle("pw", pi, mu0, mu1, mu0, mu1, pi) - tau) < 1e-9


def test_pw_known_half_propensity_closed_form():
    y = np.array([1.0, 2.0, -3.0, 0.5])
    w = np.array([1.0, 0.0, 1.0, 0.0])
    expected = 2.0 * (2.0 * w - 1.0) * y
    assert np.allclose(pseudo_pw(y, w, np.full(4, 0.5)), expected)


# -- datasets -----------------------------------------------------------------------


def toy_dataset(seed=0, n=260, d=3, effect=1.0, noise=0.0, pi=0.5):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w = (rng.random(n) < pi).astype(float)
    if w.sum() in (0, n):
        w[0], w[1] = 0.0, 1.0
    mu0 = 0.6 * X[:, 0]
    mu1 = mu0 + effect
    y = np.where(w == 1, mu1, mu0) + noise * rng.standard_normal(n)
    return Dataset(X=X, w=w, y=y, mu0=mu0, mu1=mu1, tau=mu1 - mu0, pi=pi)


def test_s_learner_input_width():
    data = toy_dataset()
    fitted = fit_s_learner(data, SPEC, FAST)
    assert fitted.net.layers[0].in_dim == data.d + 1


def test_s_learner_null_effect():
    data = toy_dataset(seed=1, effect=0.0)
    # outcome independent of w: pull the effect toward zero with a firm penalty
    fitted = fit_s_learner(data, SPEC,
                           TrainConfig(batch_size=64, step_size=5e-3, max_steps=1200,
                                       patience=30, seed=2), lam=1e-2)
    pred = fitted.predict(np.random.default_rng(3).standard_normal((40, 3)))
    assert np.max(np.abs(pred.tau)) < 0.05


def test_t_learner_decomposes_into_independent_fits():
    data = toy_dataset(seed=4)
    fitted = fit_t_learner(data, SPEC, FAST)
    from dataclasses import replace
    arm0, arm1 = data.arm(0), data.arm(1)
    solo0 = fit_net_regressor(arm0.X, arm0.y, SPEC,
                              replace(FAST, seed=FAST.seed + SEED_MU0))
    solo1 = fit_net_regressor(arm1.X, arm1.y, SPEC,
                              replace(FAST, seed=FAST.seed + SEED_MU1))
    Xq = np.random.default_rng(5).standard_normal((30, 3))
    pred = fitted.predict(Xq)
    assert np.array_equal(pred.mu0, solo0.predict(Xq))
    assert np.array_equal(pred.mu1, solo1.predict(Xq))


def test_t_learner_requires_both_arms():
    data = toy_dataset(seed=6)
    data.w[:] = 0.0
    with pytest.raises(EmptyArmError, match="treated arm is empty"):
        fit_t_learner(data, SPEC, FAST)


def test_propensity_fit_recovers_random_assignment():
    data = toy_dataset(seed=7, n=400, pi=0.5)
    data.pi = None
    # Bernoulli MLE oracle for W independent of X: the sample treated share
    mle = float(data.w.mean())
    assert abs(mle - 0.5) < 0.05
    cfg = TrainConfig(batch_size=100, step_size=5e-3, max_steps=1500, patience=30, seed=5)
    prop = fit_propensity(data, SPEC, cfg, lam=1e-2)
    scores = prop.predict(np.random.default_rng(8).standard_normal((60, 3)))
    assert np.all(scores >= 0.01) and np.all(scores <= 0.99)
    assert np.max(np.abs(scores - mle)) < 0.05
    again = fit_propensity(data, SPEC, cfg, lam=1e-2)
    assert np.array_equal(scores, again.predict(
        np.random.default_rng(8).standard_normal((60, 3))))


def test_pseudo_learner_known_pi_skips_propensity():
    data = toy_dataset(seed=9)
    fitted = fit_pseudo_learner("pw", data, SPEC, FAST, known_pi=0.5)
    assert fitted.propensity is None
    assert fitted.known_pi == 0.5
    pred = fitted.predict(data.X[:10])
    assert pred.mu0 is None and pred.mu1 is None
    assert len(pred.tau) == 10


def test_pseudo_learner_dr_has_mu_estimates():
    data = toy_dataset(seed=10)
    fitted = fit_pseudo_learner("dr", data, SPEC, FAST, known_pi=0.5)
    pred = fitted.predict(data.X[:10])
    assert pred.mu0 is not None and pred.mu1 is not None


def test_pseudo_learner_dr_targets_equal_tau_at_true_nuisances():
    data = toy_dataset(seed=11, noise=0.0)

    class Oracle:
        def predict(self, X):
            from catebias.data import PredictionTriple
            mu0 = 0.6 * X[:, 0]
            return PredictionTriple(mu0=mu0, mu1=mu0 + 1.0, tau=np.full(len(X), 1.0))

    targets = pseudo_outcome("dr", data.y, data.w, np.full(data.n, 0.5),
                             data.mu0, data.mu1)
    assert np.allclose(targets, data.tau, atol=1e-12)
    fitted = fit_pseudo_learner("dr", data, SPEC, FAST, known_pi=0.5,
                                first_stage=lambda ds, sp, tc: Oracle())
    assert np.max(np.abs(fitted.predict(data.X[:20]).tau - 1.0)) < 0.1


def test_pseudo_learner_cross_fit_runs():
    data = toy_dataset(seed=12, noise=0.3)
    fitted = fit_pseudo_learner("dr", data, SPEC, FAST, known_pi=0.5, cross_fit=2)
    assert fitted.first_stage is None  # fold-local nuisances are not kept
    assert np.all(np.isfinite(fitted.predict(data.X[:10]).tau))


def test_x_learner_boundary_weights():
    data = toy_dataset(seed=13)
    g1 = fit_x_learner(data, SPEC, FAST, g=1.0)
    g0 = fit_x_learner(data, SPEC, FAST, g=0.0)
    half = fit_x_learner(data, SPEC, FAST, g=0.5)
    Xq = np.random.default_rng(14).standard_normal((25, 3))
    assert np.array_equal(g1.predict(Xq).tau, g1.tau1.predict(Xq))
    assert np.array_equal(g0.predict(Xq).tau, g0.tau0.predict(Xq))
    assert np.allclose(half.predict(Xq).tau,
                       0.5 * half.tau1.predict(Xq) + 0.5 * half.tau0.predict(Xq))


def test_x_learner_propensity_weighting_uses_known_constant():
    data = toy_dataset(seed=15, pi=0.3)
    data.pi = 0.3
    fitted = fit_x_learner(data, SPEC, FAST, g="propensity")
    assert fitted.known_pi == 0.3
    Xq = data.X[:12]
    expected = 0.3 * fitted.tau1.predict(Xq) + 0.7 * fitted.tau0.predict(Xq)
    assert np.allclose(fitted.predict(Xq).tau, expected)


def test_x_learner_imputed_effects_exact_at_truth():
    # noiseless outcomes + exact first-stage fits make both imputed-effect
    # vectors equal the true effect on their arms
    data = toy_dataset(seed=16, noise=0.0)
    arm0, arm1 = data.arm(0), data.arm(1)
    imputed_treated = arm1.y - arm1.mu0
    imputed_control = arm0.mu1 - arm0.y
    assert np.allclose(imputed_treated, arm1.tau, atol=1e-12)
    assert np.allclose(imputed_control, arm0.tau, atol=1e-12)


def test_r_learner_stage2_recovers_constant_effect_with_exact_nuisances():
    effect = 1.5
    data = toy_dataset(seed=17, n=500, effect=effect, noise=0.0, pi=0.5)
    # closed-form weighted-least-squares oracle: with the exact pooled fit
    # mu(x) = mu0(x) + pi * effect, the constant minimizing the
    # residual-on-residual loss is sum((w-pi) y_res) / sum((w-pi)^2) = effect
    resid_w = data.w - 0.5
    y_res = data.y - (data.mu0 + 0.5 * effect)
    tau_wls = float(np.sum(resid_w * y_res) / np.sum(resid_w ** 2))
    assert tau_wls == pytest.approx(effect, abs=1e-10)

    from catebias.layers import stack_params
    from catebias.training import train
    layers = build_stack(np.random.default_rng(18), [3, 8, 4, 1], "identity")
    train(stack_params(layers), (data.X, y_res, resid_w),
          lambda Xb, yr, wr: r_stage2_loss(layers, Xb, yr, wr, lam=1e-4),
          TrainConfig(batch_size=100, step_size=5e-3, max_steps=2500,
                      patience=50, seed=18))
    from catebias.layers import forward
    tau_hat = forward(layers, np.random.default_rng(19).standard_normal((40, 3)))
    assert abs(float(np.mean(tau_hat.data)) - tau_wls) < 0.05


def test_r_learner_end_to_end_close_to_constant_effect():
    # fitted (not exact) pooled regression absorbs a little of the treatment
    # signal without cross-fitting, so the bar is looser here
    data = toy_dataset(seed=17, n=500, effect=1.5, noise=0.0, pi=0.5)
    fitted = fit_r_learner(data, SPEC,
                           TrainConfig(batch_size=100, step_size=5e-3, max_steps=3000,
                                       patience=50, seed=18), known_pi=0.5)
    pred = fitted.predict(np.random.default_rng(19).standard_normal((40, 3)))
    assert abs(float(np.mean(pred.tau)) - 1.5) < 0.15


def test_r_learner_flags_degenerate_residual():
    data = toy_dataset(seed=20)
    with pytest.raises(DegenerateResidualError):
        fit_r_learner(data, SPEC, FAST, known_pi=data.w)


def test_r_stage2_loss_sign_symmetry():
    rng = np.random.default_rng(21)
    X = rng.standard_normal((30, 3))
    y_res = rng.standard_normal(30)
    w_res = rng.standard_normal(30) * 0.5
    layers = build_stack(np.random.default_rng(22), [3, 4, 1], "identity")
    negated = build_stack(np.random.default_rng(22), [3, 4, 1], "identity")
    negated[-1].W.data *= -1.0  # negate the network output
    negated[-1].b.data *= -1.0
    a = float(r_stage2_loss(layers, X, y_res, w_res, lam=0.0).data)
    b = float(r_stage2_loss(negated, X, y_res, -w_res, lam=0.0).data)
    assert a == pytest.approx(b, rel=1e-12)


def test_r_stage2_loss_zero_residuals_leaves_penalty_only():
    layers = build_stack(np.random.default_rng(23), [3, 4, 1], "identity")
    for layer in layers:
        layer.W.data[:] = 0.0
        layer.b.data[:] = 0.0
    X = np.random.default_rng(24).standard_normal((10, 3))
    value = float(r_stage2_loss(layers, X, np.zeros(10), np.ones(10), lam=5.0).data)
    assert value == 0.0  # zero weights: no penalty mass, zero prediction
    layers[0].W.data[0, 0] = 2.0
    value = float(r_stage2_loss(layers, X, np.zeros(10), np.zeros(10), lam=5.0).data)
    assert value == pytest.approx(20.0)  # penalty only: 5 * 2^2


def test_learners_deterministic():
    data = toy_dataset(seed=25, noise=0.2)
    for fit in (lambda: fit_s_learner(data, SPEC, FAST),
                lambda: fit_x_learner(data, SPEC, FAST, g=0.5),
                lambda: fit_pseudo_learner("ra", data, SPEC, FAST)):
        Xq = data.X[:15]
        assert np.array_equal(fit().predict(Xq).tau, fit().predict(Xq).tau)
