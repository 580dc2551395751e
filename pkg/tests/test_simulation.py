"""Data-generating processes: surfaces, knobs, assignment, CSV interchange."""

import numpy as np
import pytest

from catebias.simulation import (CovariateFileError, DGPConfigAB, DGPConfigIHDP,
                                 InsufficientPoolError, assign_treatment_random,
                                 export_dataset_csv, gen_covariates_synthetic,
                                 infer_column_types, load_covariates_csv,
                                 load_dataset_csv, simulate_ab, simulate_ihdp_c,
                                 simulate_ihdp_d, simulate_setup_a, simulate_setup_b)


def replay_surfaces_ab(coeffs, X, setup):
    """Row-by-row oracle recomputing the surfaces from the coefficient record."""
    n, d = X.shape
    mu0 = np.zeros(n)
    mu1 = np.zeros(n)
    for i in range(n):
        base = coeffs["intercept"]
        for j in range(d):
            base += coeffs["beta_linear"][j] * X[i, j]
        for k, (j, l) in enumerate(coeffs["interaction_pairs"]):
            base += coeffs["beta_interaction"][k] * X[i, j] * X[i, l]
        mu0[i] = base
        if setup == "A":
            mu1[i] = base + sum(coeffs["gamma"][j] * X[i, j] for j in range(d))
        else:
            top = coeffs["intercept"]
            for j in range(d):
                top += coeffs["beta_linear"][j] * (1 - coeffs["omega_linear"][j]) * X[i, j]
            for k, (j, l) in enumerate(coeffs["interaction_pairs"]):
                top += coeffs["beta_interaction"][k] * \
                    (1 - coeffs["omega_interaction"][k]) * X[i, j] * X[i, l]
            mu1[i] = top
    return mu0, mu1


def pool(seed=0, n=260, d_cont=5, d_bin=3):
    return gen_covariates_synthetic(n, d_cont, d_bin, seed)


def ab_config(**kwargs):
    defaults = dict(setup="A", rho=0.3, n0=100, n1=80, n_test=60, seed=3)
    defaults.update(kwargs)
    return DGPConfigAB(**defaults)


# -- covariate loading -----------------------------------------------------------


def test_load_covariates_binary_typing(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n0,1\n1,0\n0,1\n")
    X, types = load_covariates_csv(path)
    assert X.shape == (3, 2)
    assert types == ["binary", "binary"]


def test_load_covariates_three_values_is_continuous(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a\n0\n0.5\n1\n")
    _, types = load_covariates_csv(path)
    assert types == ["continuous"]


def test_load_covariates_missing_file():
    with pytest.raises(CovariateFileError, match="not found"):
        load_covariates_csv("/nonexistent/covariates.csv")


def test_load_covariates_ragged_and_nonnumeric(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("a,b\n1,2\n3\n")
    with pytest.raises(CovariateFileError, match="line 3"):
        load_covariates_csv(ragged)
    alpha = tmp_path / "alpha.csv"
    alpha.write_text("a\nx\n")
    with pytest.raises(CovariateFileError, match="line 2"):
        load_covariates_csv(alpha)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(CovariateFileError, match="empty"):
        load_covariates_csv(empty)


def test_gen_covariates_deterministic_and_typed():
    a = gen_covariates_synthetic(50, 3, 2, seed=9)
    b = gen_covariates_synthetic(50, 3, 2, seed=9)
    assert np.array_equal(a, b)
    assert infer_column_types(a) == ["continuous"] * 3 + ["binary"] * 2


def test_gen_covariates_no_binaries():
    X = gen_covariates_synthetic(40, 4, 0, seed=1)
    assert X.shape == (40, 4)
    assert infer_column_types(X) == ["continuous"] * 4


def test_gen_covariates_standardized_within_clt_bound():
    n = 400
    X = gen_covariates_synthetic(n, 6, 0, seed=2)
    assert np.all(np.abs(X.mean(axis=0)) <= 3.0 / np.sqrt(n))
    assert np.allclose(X.std(axis=0), 1.0, atol=1e-12)


# -- setup A ------------------------------------------------------------------------


def test_setup_a_rho_zero_is_exact_null():
    data = simulate_setup_a(pool(), ab_config(rho=0.0))
    assert np.array_equal(data.train.tau, np.zeros(data.train.n))
    assert np.array_equal(data.test.tau, np.zeros(data.test.n))


def test_setup_a_rho_one_effect_is_full_row_sum():
    data = simulate_setup_a(pool(), ab_config(rho=1.0))
    assert np.allclose(data.train.tau, data.train.X.sum(axis=1))


def test_setup_a_replay_oracle():
    data = simulate_setup_a(pool(), ab_config())
    for split in (data.train, data.test):
        mu0, mu1 = replay_surfaces_ab(data.coefficients, split.X, "A")
        assert np.max(np.abs(mu0 - split.mu0)) < 1e-12
        assert np.max(np.abs((mu1 - mu0) - split.tau)) < 1e-12


def test_setup_a_ground_truth_consistency():
    data = simulate_setup_a(pool(), ab_config(rho=0.7))
    for split in (data.train, data.test):
        assert np.max(np.abs(split.tau - (split.mu1 - split.mu0))) <= 1e-12


# -- setup B ------------------------------------------------------------------------


def test_setup_b_rho_zero_is_null():
    data = simulate_setup_b(pool(), ab_config(setup="B", rho=0.0))
    assert np.array_equal(data.train.tau, np.zeros(data.train.n))


def test_setup_b_rho_one_cancels_everything():
    cfg = ab_config(setup="B", rho=1.0, intercept=1.5)
    data = simulate_setup_b(pool(), cfg)
    assert np.allclose(data.train.mu1, 1.5)
    assert np.allclose(data.train.tau, 1.5 - data.train.mu0)


def test_setup_b_replay_oracle():
    data = simulate_setup_b(pool(seed=5), ab_config(setup="B", rho=0.4, seed=11))
    mu0, mu1 = replay_surfaces_ab(data.coefficients, data.test.X, "B")
    assert np.max(np.abs(mu0 - data.test.mu0)) < 1e-12
    assert np.max(np.abs(mu1 - data.test.mu1)) < 1e-12


def test_setup_b_effect_support_is_subset_of_control_surface():
    for seed in range(5):
        data = simulate_setup_b(pool(seed=seed), ab_config(setup="B", rho=0.5, seed=seed))
        c = data.coefficients
        # every monomial appearing in tau (beta * omega != 0) appears in mu0
        assert np.all(c["beta_linear"][(c["beta_linear"] * c["omega_linear"]) != 0] != 0)
        inter_tau = c["beta_interaction"] * c["omega_interaction"]
        assert np.all(c["beta_interaction"][inter_tau != 0] != 0)


def test_setup_ab_knob_monotonicity():
    rho, d = 0.3, 8
    draws = 100
    count = 0
    for seed in range(draws):
        data = simulate_setup_a(pool(seed=seed, n=30, d_cont=5, d_bin=3),
                                ab_config(rho=rho, n0=10, n1=10, n_test=10, seed=seed))
        count += int(np.sum(data.coefficients["gamma"] != 0))
    expected = draws * d * rho
    sd = np.sqrt(draws * d * rho * (1 - rho))
    assert abs(count - expected) <= 3 * sd


def test_noise_variance_contract():
    residuals = []
    for seed in range(10):
        data = simulate_setup_a(pool(seed=seed, n=700),
                                ab_config(rho=0.5, n0=100, n1=100, n_test=500, seed=seed))
        split = data.test
        mu_w = np.where(split.w == 1, split.mu1, split.mu0)
        residuals.append(split.y - mu_w)
    variance = np.var(np.concatenate(residuals), ddof=1)
    assert 0.9 <= variance <= 1.1


def test_insufficient_pool_raises():
    with pytest.raises(InsufficientPoolError):
        simulate_setup_a(pool(n=50), ab_config())


def test_config_validation():
    with pytest.raises(ValueError, match="n1 <= n0"):
        DGPConfigAB(setup="A", n0=100, n1=200, n_test=10)
    with pytest.raises(ValueError, match="rho"):
        DGPConfigAB(setup="A", rho=1.5)
    with pytest.raises(ValueError, match="setup"):
        DGPConfigAB(setup="E")


# -- treatment assignment --------------------------------------------------------------


def test_assignment_partition_contract():
    control, treated, test, pi = assign_treatment_random(np.arange(100), 40, 30, 20, seed=5)
    assert len(control) == 40 and len(treated) == 30 and len(test) == 20
    combined = np.concatenate([control, treated, test])
    assert len(np.unique(combined)) == 90
    assert pi == pytest.approx(30 / 70)


def test_assignment_balanced_pi():
    *_, pi = assign_treatment_random(np.arange(50), 20, 20, 5, seed=0)
    assert pi == 0.5


def test_assignment_deterministic():
    a = assign_treatment_random(np.arange(60), 20, 20, 10, seed=9)
    b = assign_treatment_random(np.arange(60), 20, 20, 10, seed=9)
    for u, v in zip(a[:3], b[:3]):
        assert np.array_equal(u, v)


# -- setups C and D ----------------------------------------------------------------------


def ihdp_inputs(seed=0, n=300, d=6):
    rng = np.random.default_rng(seed)
    X = gen_covariates_synthetic(n, d - 2, 2, seed)
    w = (rng.random(n) < 0.2).astype(float)
    w[0] = 1.0
    return X, w


def test_ihdp_d_treated_mean_effect_is_four():
    X, w = ihdp_inputs()
    data = simulate_ihdp_d(X, w, DGPConfigIHDP(setup="D", seed=4))
    combined = data.all_rows()
    treated_mean = float(np.mean(combined.tau[combined.w == 1.0]))
    assert abs(treated_mean - 4.0) < 1e-12


def test_ihdp_c_treated_mean_effect_is_four():
    X, w = ihdp_inputs(seed=1)
    data = simulate_ihdp_c(X, w, DGPConfigIHDP(setup="C", seed=5))
    combined = data.all_rows()
    treated_mean = float(np.mean(combined.tau[combined.w == 1.0]))
    assert abs(treated_mean - 4.0) < 1e-12


def test_ihdp_replay_oracle():
    X, w = ihdp_inputs(seed=2)
    cfg = DGPConfigIHDP(setup="D", seed=6)
    data = simulate_ihdp_d(X, w, cfg)
    beta, omega = data.coefficients["beta"], data.coefficients["omega"]
    split = data.test
    mu0 = np.exp((split.X + 0.5) @ beta)
    mu1 = mu0 + split.X @ beta - omega
    assert np.max(np.abs(split.mu0 - mu0)) < 1e-12
    assert np.max(np.abs(split.tau - (mu1 - mu0))) < 1e-12


def test_ihdp_c_surfaces():
    X, w = ihdp_inputs(seed=3)
    data = simulate_ihdp_c(X, w, DGPConfigIHDP(setup="C", seed=7))
    beta, omega = data.coefficients["beta"], data.coefficients["omega"]
    split = data.train
    assert np.allclose(split.mu0, np.exp((split.X + 0.5) @ beta))
    assert np.allclose(split.mu1, split.X @ beta - omega)


def test_ihdp_all_zero_beta_gives_unit_mu0():
    X, w = ihdp_inputs(seed=4)
    cfg = DGPConfigIHDP(setup="D", seed=8, beta_support=(0.0,), beta_probs=(1.0,))
    data = simulate_ihdp_d(X, w, cfg)
    assert np.allclose(data.train.mu0, 1.0)


def test_ihdp_requires_treatment_vector():
    X, _ = ihdp_inputs()
    with pytest.raises(ValueError, match="treatment vector"):
        simulate_ihdp_c(X, None, DGPConfigIHDP(setup="C"))


def test_ihdp_beta_drawn_from_stated_support():
    X, w = ihdp_inputs(seed=5, n=200, d=30)
    data = simulate_ihdp_d(X, w, DGPConfigIHDP(setup="D", seed=9))
    assert np.all(np.isin(data.coefficients["beta"], (0.0, 0.1, 0.2, 0.3, 0.4)))


# -- CSV interchange -----------------------------------------------------------------------


def test_dataset_csv_round_trip(tmp_path):
    data = simulate_setup_a(pool(seed=8), ab_config(seed=13))
    path = tmp_path / "ds.csv"
    export_dataset_csv(data, path)
    loaded = load_dataset_csv(path)
    assert np.array_equal(loaded.train.X, data.train.X)
    assert np.array_equal(loaded.train.y, data.train.y)
    assert np.array_equal(loaded.test.tau, data.test.tau)
    assert loaded.train.pi == pytest.approx(data.train.pi)


def test_dataset_csv_header_schema(tmp_path):
    data = simulate_setup_a(pool(seed=9), ab_config(seed=14))
    path = tmp_path / "ds.csv"
    export_dataset_csv(data, path)
    header = path.read_text().splitlines()[0].split(",")
    d = data.train.d
    assert header == ["id"] + [f"x_{j + 1}" for j in range(d)] + \
        ["w", "y", "mu0", "mu1", "tau", "split"]
