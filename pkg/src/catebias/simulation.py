"""Semi-synthetic data generation.

Setups A and B lay polynomial response surfaces (linear terms, squares of
continuous covariates, one random pairwise interaction per variable) over a
covariate pool, with binary coefficients so outcome scales stay comparable
across draws. A sparsity knob rho controls effect heterogeneity: in A it
adds treated-only linear terms, in B it cancels prognostic terms for the
treated, so the effect's support is always a subset of the control surface's.
Setups C and D are IHDP-style: an exponential control surface
exp((X + 0.5) beta) and a linear treated surface X beta - omega, with omega
calibrated so the average effect on the treated equals 4; D makes the effect
additive on top of the control surface.

Treatment assignment in A/B is random (no confounding) with the implied
constant propensity recorded on the dataset; C/D take the treatment vector
as given, since it is part of the original study design.

Generators are pure functions of (inputs, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Dataset

Array = np.ndarray


class CovariateFileError(ValueError):
    """The covariate CSV is missing, ragged, empty or non-numeric."""


class InsufficientPoolError(ValueError):
    """The covariate pool has fewer rows than n0 + n1 + n_test."""


@dataclass
class DGPConfigAB:
    setup: str = "A"
    rho: float = 0.0
    n0: int = 2000
    n1: int = 200
    n_test: int = 500
    p_beta: float = 0.6
    p_inter: float = 0.3
    noise_sd: float = 1.0
    intercept: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.setup = self.setup.upper()
        if self.setup not in ("A", "B"):
            raise ValueError("setup must be 'A' or 'B'")
        for name in ("rho", "p_beta", "p_inter"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if min(self.n0, self.n1, self.n_test) < 1:
            raise ValueError("sample sizes must be positive")
        if self.n1 > self.n0:
            raise ValueError("imbalance designs require n1 <= n0")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")


@dataclass
class DGPConfigIHDP:
    setup: str = "C"
    noise_sd: float = 1.0
    offset_shift: float = 0.5
    att_target: float = 4.0
    beta_support: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4)
    beta_probs: Sequence[float] = (0.6, 0.1, 0.1, 0.1, 0.1)
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.setup = self.setup.upper()
        if self.setup not in ("C", "D"):
            raise ValueError("setup must be 'C' or 'D'")
        if len(self.beta_support) != len(self.beta_probs):
            raise ValueError("beta support and probabilities must align")
        if abs(sum(self.beta_probs) - 1.0) > 1e-9:
            raise ValueError("beta probabilities must sum to 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass
class SimulatedDataset:
    """Train and test partitions with ground-truth surfaces and the
    coefficient record needed to replay them."""

    train: Dataset
    test: Dataset
    coefficients: dict
    setup: str
    seed: int = 0

    def all_rows(self) -> Dataset:
        def cat(name: str):
            a, b = getattr(self.train, name), getattr(self.test, name)
            return np.concatenate([a, b]) if a is not None and b is not None else None

        return Dataset(
            X=np.vstack([self.train.X, self.test.X]),
            w=cat("w"),
            y=cat("y"),
            mu0=cat("mu0"),
            mu1=cat("mu1"),
            tau=cat("tau"),
            pi=self.train.pi,
        )


# -- covariates -----------------------------------------------------------------


def infer_column_types(X: Array) -> list[str]:
    """'binary' for columns with at most two distinct values, else 'continuous'."""
    return ["binary" if len(np.unique(X[:, j])) <= 2 else "continuous"
            for j in range(X.shape[1])]


def load_covariates_csv(path) -> tuple[Array, list[str]]:
    """Read a processed numeric covariate matrix (header row required)."""
    path = Path(path)
    if not path.exists():
        raise CovariateFileError(f"covariate file not found: {path}")
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CovariateFileError(f"covariate file is empty: {path}") from None
        width = len(header)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != width:
                raise CovariateFileError(
                    f"{path}: line {line_no} has {len(row)} cells, expected {width}"
                )
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise CovariateFileError(f"{path}: line {line_no}: {exc}") from None
    if not rows:
        raise CovariateFileError(f"covariate file has a header but no rows: {path}")
    X = np.asarray(rows, dtype=np.float64)
    return X, infer_column_types(X)


def gen_covariates_synthetic(n: int, d_cont: int, d_bin: int, seed: int) -> Array:
    """Standardized continuous columns followed by Bernoulli(0.5) binaries.

    Stands in for the competition covariates, which ship preprocessed the
    same way (standardized continuous, binarized counts).
    """
    if n < 1 or d_cont < 0 or d_bin < 0 or d_cont + d_bin < 1:
        raise ValueError("need n >= 1 and at least one column")
    rng = np.random.default_rng(seed)
    blocks = []
    if d_cont:
        cont = rng.standard_normal((n, d_cont))
        cont = (cont - cont.mean(axis=0)) / cont.std(axis=0, ddof=0)
        blocks.append(cont)
    if d_bin:
        blocks.append(rng.binomial(1, 0.5, size=(n, d_bin)).astype(np.float64))
    return np.hstack(blocks)


# -- treatment assignment ---------------------------------------------------------


def assign_treatment_random(pool_indices: Array, n0: int, n1: int, n_test: int,
                            seed: int) -> tuple[Array, Array, Array, float]:
    """Disjoint control/treated/test index sets drawn without confounding.

    Returns (control, treated, test, pi) where pi = n1 / (n0 + n1) is the
    constant propensity implied by the design.
    """
    pool = np.asarray(pool_indices)
    needed = n0 + n1 + n_test
    if len(pool) < needed:
        raise InsufficientPoolError(
            f"pool has {len(pool)} rows; need n0 + n1 + n_test = {needed}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(pool))
    control = pool[perm[:n0]]
    treated = pool[perm[n0:n0 + n1]]
    test = pool[perm[n0 + n1:needed]]
    pi = n1 / (n0 + n1)
    return control, treated, test, pi


# -- setups A and B ----------------------------------------------------------------


def interaction_pairs(d: int, col_types: Sequence[str],
                      rng: np.random.Generator) -> list[tuple[int, int]]:
    """Squares of continuous columns plus a random perfect matching of all
    variables (an odd leftover pairs with itself)."""
    pairs = [(j, j) for j in range(d) if col_types[j] == "continuous"]
    order = rng.permutation(d)
    for k in range(0, d - 1, 2):
        pairs.append((int(order[k]), int(order[k + 1])))
    if d % 2 == 1:
        pairs.append((int(order[d - 1]), int(order[d - 1])))
    return pairs


def _interaction_features(X: Array, pairs: Sequence[tuple[int, int]]) -> Array:
    if not pairs:
        return np.zeros((X.shape[0], 0))
    return np.column_stack([X[:, j] * X[:, l] for j, l in pairs])


def _simulate_ab(X_pool: Array, cfg: DGPConfigAB,
                 col_types: Optional[Sequence[str]] = None) -> SimulatedDataset:
    X_pool = np.asarray(X_pool, dtype=np.float64)
    n_pool, d = X_pool.shape
    if col_types is None:
        col_types = infer_column_types(X_pool)
    rng = np.random.default_rng(cfg.seed)

    beta_lin = rng.binomial(1, cfg.p_beta, size=d).astype(np.float64)
    pairs = interaction_pairs(d, col_types, rng)
    beta_inter = rng.binomial(1, cfg.p_inter, size=len(pairs)).astype(np.float64)

    coefficients = {
        "intercept": cfg.intercept,
        "beta_linear": beta_lin,
        "interaction_pairs": pairs,
        "beta_interaction": beta_inter,
    }
    if cfg.setup == "A":
        gamma = rng.binomial(1, cfg.rho, size=d).astype(np.float64)
        coefficients["gamma"] = gamma
    else:
        omega_lin = rng.binomial(1, cfg.rho, size=d).astype(np.float64)
        omega_inter = rng.binomial(1, cfg.rho, size=len(pairs)).astype(np.float64)
        coefficients["omega_linear"] = omega_lin
        coefficients["omega_interaction"] = omega_inter

    control, treated, test, pi = assign_treatment_random(
        np.arange(n_pool), cfg.n0, cfg.n1, cfg.n_test, cfg.seed + 1)
    train_rows = np.concatenate([control, treated])
    w_train = np.concatenate([np.zeros(cfg.n0), np.ones(cfg.n1)])
    w_test = rng.binomial(1, pi, size=cfg.n_test).astype(np.float64)

    def surfaces(X: Array) -> tuple[Array, Array]:
        inter = _interaction_features(X, pairs)
        mu0 = cfg.intercept + X @ beta_lin + inter @ beta_inter
        if cfg.setup == "A":
            mu1 = mu0 + X @ coefficients["gamma"]
        else:
            mu1 = cfg.intercept + X @ (beta_lin * (1.0 - omega_lin)) \
                + inter @ (beta_inter * (1.0 - omega_inter))
        return mu0, mu1

    def build_split(rows: Array, w: Array) -> Dataset:
        X = X_pool[rows]
        mu0, mu1 = surfaces(X)
        noise = cfg.noise_sd * rng.standard_normal(len(rows))
        y = np.where(w == 1.0, mu1, mu0) + noise
        return Dataset(X=X, w=w, y=y, mu0=mu0, mu1=mu1, tau=mu1 - mu0, pi=pi)

    return SimulatedDataset(
        train=build_split(train_rows, w_train),
        test=build_split(test, w_test),
        coefficients=coefficients,
        setup=cfg.setup,
        seed=cfg.seed,
    )


def simulate_setup_a(X_pool: Array, cfg: DGPConfigAB,
                     col_types: Optional[Sequence[str]] = None) -> SimulatedDataset:
    """Sparse control surface plus treated-only linear terms drawn with
    probability rho (heterogeneity by addition)."""
    if cfg.setup != "A":
        raise ValueError("config setup must be 'A'")
    return _simulate_ab(X_pool, cfg, col_types)


def simulate_setup_b(X_pool: Array, cfg: DGPConfigAB,
                     col_types: Optional[Sequence[str]] = None) -> SimulatedDataset:
    """Control surface as in A; treated surface cancels each prognostic term
    with probability rho (heterogeneity by removal), so every effect monomial
    also appears in the control surface."""
    if cfg.setup != "B":
        raise ValueError("config setup must be 'B'")
    return _simulate_ab(X_pool, cfg, col_types)


def simulate_ab(X_pool: Array, cfg: DGPConfigAB,
                col_types: Optional[Sequence[str]] = None) -> SimulatedDataset:
    return _simulate_ab(X_pool, cfg, col_types)


# -- setups C and D (IHDP-style) -----------------------------------------------------


def _simulate_ihdp(X: Array, w_assign, cfg: DGPConfigIHDP) -> SimulatedDataset:
    if w_assign is None:
        raise ValueError("setups C/D require the study's treatment vector (w_assign)")
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(w_assign, dtype=np.float64).reshape(-1)
    if len(w) != X.shape[0]:
        raise ValueError("w_assign must align with X rows")
    if w.sum() == 0:
        raise ValueError("calibration needs at least one treated row")
    rng = np.random.default_rng(cfg.seed)
    beta = rng.choice(np.asarray(cfg.beta_support, float), size=X.shape[1],
                      p=np.asarray(cfg.beta_probs, float))

    mu0 = np.exp((X + cfg.offset_shift) @ beta)
    linear = X @ beta
    treated = w == 1.0
    if cfg.setup == "C":
        omega = float(np.mean(linear[treated] - mu0[treated])) - cfg.att_target
        mu1 = linear - omega
    else:
        omega = float(np.mean(linear[treated])) - cfg.att_target
        mu1 = mu0 + linear - omega
    y = np.where(treated, mu1, mu0) + cfg.noise_sd * rng.standard_normal(len(w))

    n = X.shape[0]
    n_test = max(1, int(round(cfg.test_fraction * n)))
    perm = rng.permutation(n)
    test_rows, train_rows = perm[:n_test], perm[n_test:]

    def split(rows: Array) -> Dataset:
        return Dataset(X=X[rows], w=w[rows], y=y[rows], mu0=mu0[rows],
                       mu1=mu1[rows], tau=(mu1 - mu0)[rows], pi=None)

    coefficients = {"beta": beta, "omega": omega, "offset_shift": cfg.offset_shift}
    return SimulatedDataset(train=split(train_rows), test=split(test_rows),
                            coefficients=coefficients, setup=cfg.setup, seed=cfg.seed)


def simulate_ihdp(X: Array, w_assign, cfg: DGPConfigIHDP) -> SimulatedDataset:
    """Dispatch to setup C or D according to the config."""
    return _simulate_ihdp(X, w_assign, cfg)


def simulate_ihdp_c(X: Array, w_assign, cfg: DGPConfigIHDP) -> SimulatedDataset:
    """Exponential control surface, linear treated surface; strong
    non-additive heterogeneity."""
    if cfg.setup != "C":
        raise ValueError("config setup must be 'C'")
    return _simulate_ihdp(X, w_assign, cfg)


def simulate_ihdp_d(X: Array, w_assign, cfg: DGPConfigIHDP) -> SimulatedDataset:
    """As C but the treated surface adds the linear effect on top of the
    control surface, making the effect additive."""
    if cfg.setup != "D":
        raise ValueError("config setup must be 'D'")
    return _simulate_ihdp(X, w_assign, cfg)


# -- CSV interchange -------------------------------------------------------------------


DATASET_CSV_FIXED = ("id", "w", "y", "mu0", "mu1", "tau", "split")


def export_dataset_csv(sim: SimulatedDataset, path) -> None:
    """Write [id, x_1..x_d, w, y, mu0, mu1, tau, split] rows."""
    d = sim.train.d
    header = ["id"] + [f"x_{j + 1}" for j in range(d)] + \
        ["w", "y", "mu0", "mu1", "tau", "split"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        row_id = 0
        for name, split in (("train", sim.train), ("test", sim.test)):
            for i in range(split.n):
                writer.writerow(
                    [row_id] + [repr(float(v)) for v in split.X[i]]
                    + [int(split.w[i]), repr(float(split.y[i])),
                       repr(float(split.mu0[i])) if split.mu0 is not None else "",
                       repr(float(split.mu1[i])) if split.mu1 is not None else "",
                       repr(float(split.tau[i])) if split.tau is not None else "",
                       name]
                )
                row_id += 1


def load_dataset_csv(path) -> SimulatedDataset:
    """Read a dataset written by export_dataset_csv.

    The constant propensity is recovered as the treated fraction of the
    training split.
    """
    path = Path(path)
    if not path.exists():
        raise CovariateFileError(f"dataset file not found: {path}")
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if header[0] != "id" or header[-1] != "split":
            raise CovariateFileError(f"{path}: not a dataset CSV (bad header)")
        d = len(header) - len(DATASET_CSV_FIXED)
        splits: dict[str, list] = {"train": [], "test": []}
        for row in reader:
            splits[row[-1]].append(row)

    def parse(rows: list) -> Optional[Dataset]:
        if not rows:
            return None
        X = np.array([[float(c) for c in r[1:1 + d]] for r in rows])
        w = np.array([float(r[1 + d]) for r in rows])
        y = np.array([float(r[2 + d]) for r in rows])

        def column(k: int) -> Optional[Array]:
            cells = [r[k] for r in rows]
            if any(c == "" for c in cells):
                return None
            return np.array([float(c) for c in cells])

        return Dataset(X=X, w=w, y=y, mu0=column(3 + d), mu1=column(4 + d),
                       tau=column(5 + d))

    train = parse(splits["train"])
    test = parse(splits["test"])
    if train is None:
        raise CovariateFileError(f"{path}: no training rows")
    train.pi = float(train.w.mean())
    if test is None:
        test = Dataset(X=np.zeros((0, d)), w=np.zeros(0), y=np.zeros(0))
    else:
        test.pi = train.pi
    return SimulatedDataset(train=train, test=test, coefficients={}, setup="csv")
