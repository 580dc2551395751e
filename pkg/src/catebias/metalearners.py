"""Model-agnostic direct and indirect meta-learners over dense networks.

Indirect learners (S, T) regress outcomes and difference the fits. Direct
learners target the effect itself: RA/PW/DR regress a pseudo-outcome whose
conditional expectation is the true effect at true nuisance values, the
X-learner regresses imputed arm-specific effects, and the R-learner minimizes
an orthogonalized residual-on-residual loss. Nuisances are fit on the full
sample by default (no cross-fitting); ``cross_fit`` switches to out-of-fold
nuisance predictions.

Component trainings derive their seeds from ``train_cfg.seed`` by fixed
offsets (documented per learner) so every fit is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .architectures import EstimatorConfig, NetworkSpec, fit_estimator
from .autodiff import Tensor, loss_bce, loss_mse
from .data import Dataset, PredictionTriple
from .layers import DenseLayer, build_stack, forward, stack_params, stack_weights
from .training import TrainConfig, TrainReport, train

Array = np.ndarray

PSEUDO_KINDS = ("ra", "pw", "dr")

# Seed offsets for component fits, relative to train_cfg.seed.
SEED_MU0 = 0
SEED_MU1 = 1
SEED_PROPENSITY = 2
SEED_STAGE2 = 3
SEED_TAU0 = 4
SEED_TAU1 = 5
SEED_MU_POOLED = 6
SEED_CROSSFIT_BASE = 100

PROPENSITY_CLAMP = 0.01


class DegenerateResidualError(ValueError):
    """The treatment residual W - pi_hat is identically zero."""


# -- pseudo-outcome transformations -------------------------------------------


def pseudo_ra(y: Array, w: Array, mu0: Array, mu1: Array) -> Array:
    """Regression-adjusted pseudo-outcome: W(Y - mu0) + (1 - W)(mu1 - Y)."""
    y, w = np.asarray(y, float), np.asarray(w, float)
    return w * (y - np.asarray(mu0, float)) + (1.0 - w) * (np.asarray(mu1, float) - y)


def pseudo_pw(y: Array, w: Array, pi: Array) -> Array:
    """Horvitz-Thompson pseudo-outcome: (W/pi - (1-W)/(1-pi)) Y."""
    y, w = np.asarray(y, float), np.asarray(w, float)
    pi = np.asarray(pi, float)
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise ValueError("propensities must lie strictly inside (0, 1); clamp first")
    return (w / pi - (1.0 - w) / (1.0 - pi)) * y


def pseudo_dr(y: Array, w: Array, pi: Array, mu0: Array, mu1: Array) -> Array:
    """AIPW pseudo-outcome, unbiased if either the propensity or both
    outcome regressions are correct."""
    y, w = np.asarray(y, float), np.asarray(w, float)
    pi, mu0, mu1 = np.asarray(pi, float), np.asarray(mu0, float), np.asarray(mu1, float)
    ht = (w / pi - (1.0 - w) / (1.0 - pi)) * y
    return ht + (1.0 - w / pi) * mu1 - (1.0 - (1.0 - w) / (1.0 - pi)) * mu0


def pseudo_outcome(kind: str, y: Array, w: Array, pi: Optional[Array],
                   mu0: Optional[Array], mu1: Optional[Array]) -> Array:
    kind = kind.lower()
    if kind == "ra":
        return pseudo_ra(y, w, mu0, mu1)
    if kind == "pw":
        return pseudo_pw(y, w, pi)
    if kind == "dr":
        return pseudo_dr(y, w, pi, mu0, mu1)
    raise ValueError(f"unknown pseudo-outcome kind {kind!r}; expected one of {PSEUDO_KINDS}")


# -- single-network regressors -------------------------------------------------


@dataclass
class NetRegressor:
    """One dense stack (the standard d_r + d_h shape) fit to a target."""

    layers: list[DenseLayer]
    binary: bool = False
    report: Optional[TrainReport] = None

    def predict(self, X: Array) -> Array:
        return forward(self.layers, np.asarray(X, dtype=np.float64)).data.reshape(-1)


def fit_net_regressor(X: Array, target: Array, spec: NetworkSpec, train_cfg: TrainConfig,
                      binary: bool = False, lam: float = 1e-4) -> NetRegressor:
    """Train a full-stack network on (X, target) with an L2 weight penalty."""
    X = np.asarray(X, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    rng = np.random.default_rng(train_cfg.seed)
    dims = spec.head_dims(X.shape[1])
    layers = build_stack(rng, dims, "sigmoid" if binary else "identity")
    params = stack_params(layers)
    data_loss = loss_bce if binary else loss_mse

    def objective(Xb, yb):
        pred = forward(layers, Xb)
        loss = data_loss(pred, yb.reshape(-1, 1))
        if lam > 0:
            penalty = Tensor(0.0)
            for wt in stack_weights(layers):
                penalty = penalty + (wt * wt).sum()
            loss = loss + lam * penalty
        return loss

    def monitor(Xb, yb):
        return data_loss(forward(layers, Xb), yb.reshape(-1, 1))

    report = train(params, (X, target), objective, train_cfg, val_loss_builder=monitor)
    return NetRegressor(layers=layers, binary=binary, report=report)


class EmptyArmError(ValueError):
    """A learner that needs both arms was given single-arm data."""


@dataclass
class PropensityFit:
    """Sigmoid-output network for P(W=1|X), clamped away from 0 and 1."""

    net: NetRegressor
    clamp: float = PROPENSITY_CLAMP

    def predict(self, X: Array) -> Array:
        return np.clip(self.net.predict(X), self.clamp, 1.0 - self.clamp)


def fit_propensity(dataset: Dataset, spec: NetworkSpec, train_cfg: TrainConfig,
                   clamp: float = PROPENSITY_CLAMP, lam: float = 1e-4) -> PropensityFit:
    """BCE-trained propensity network; requires both treatment classes."""
    if dataset.n_treated == 0 or dataset.n_control == 0:
        raise EmptyArmError("propensity fitting needs both treatment classes")
    cfg = replace(train_cfg, seed=train_cfg.seed + SEED_PROPENSITY)
    net = fit_net_regressor(dataset.X, dataset.w, spec, cfg, binary=True, lam=lam)
    return PropensityFit(net=net, clamp=clamp)


def _require_both_arms(dataset: Dataset, learner: str):
    if dataset.n_control == 0 or dataset.n_treated == 0:
        empty = "control" if dataset.n_control == 0 else "treated"
        raise EmptyArmError(f"{learner} requires both arms; the {empty} arm is empty")


def _resolve_pi(dataset: Dataset, known_pi, spec: NetworkSpec, train_cfg: TrainConfig,
                clamp: bool = True) -> tuple[Array, Optional[PropensityFit], Optional[float]]:
    """Propensity values on the training rows: known constant, known per-row
    values, the dataset's recorded constant, or a fitted network.

    ``clamp=False`` passes explicit values through unchanged (safe where no
    inverse weighting happens, e.g. the residual-on-residual loss).
    """
    if known_pi is None and dataset.pi is not None:
        known_pi = dataset.pi
    if known_pi is not None:
        if np.isscalar(known_pi):
            const = float(known_pi)
            if clamp:
                const = float(np.clip(const, PROPENSITY_CLAMP, 1 - PROPENSITY_CLAMP))
            return np.full(dataset.n, const), None, const
        values = np.asarray(known_pi, float).reshape(-1)
        if clamp:
            values = np.clip(values, PROPENSITY_CLAMP, 1 - PROPENSITY_CLAMP)
        if len(values) != dataset.n:
            raise ValueError("known_pi vector must align with the dataset rows")
        return values, None, None
    prop = fit_propensity(dataset, spec, train_cfg)
    return prop.predict(dataset.X), prop, None


# -- indirect learners ---------------------------------------------------------


@dataclass
class SLearnerFit:
    """Single net on [X, W]; effects are read off by toggling the treatment column."""

    net: NetRegressor

    def predict(self, X: Array) -> PredictionTriple:
        X = np.asarray(X, dtype=np.float64)
        zeros = np.zeros((X.shape[0], 1))
        ones = np.ones((X.shape[0], 1))
        mu0 = self.net.predict(np.hstack([X, zeros]))
        mu1 = self.net.predict(np.hstack([X, ones]))
        return PredictionTriple(mu0=mu0, mu1=mu1, tau=mu1 - mu0)

    @property
    def stop_step(self):
        return self.net.report.stop_step if self.net.report else None


def fit_s_learner(dataset: Dataset, spec: NetworkSpec, train_cfg: TrainConfig,
                  lam: float = 1e-4) -> SLearnerFit:
    Xw = np.hstack([dataset.X, dataset.w.reshape(-1, 1)])
    net = fit_net_regressor(Xw, dataset.y, spec, train_cfg, binary=spec.binary_y, lam=lam)
    return SLearnerFit(net=net)


@dataclass
class TLearnerFit:
    """Two independent arm-restricted regressions (seeds: seed+0, seed+1)."""

    net0: NetRegressor
    net1: NetRegressor

    def predict(self, X: Array) -> PredictionTriple:
        mu0 = self.net0.predict(X)
        mu1 = self.net1.predict(X)
        return PredictionTriple(mu0=mu0, mu1=mu1, tau=mu1 - mu0)

    @property
    def stop_step(self):
        return self.net1.report.stop_step if self.net1.report else None


def fit_t_learner(dataset: Dataset, spec: NetworkSpec, train_cfg: TrainConfig,
                  lam: float = 1e-4) -> TLearnerFit:
    _require_both_arms(dataset, "t_learner")
    arm0, arm1 = dataset.arm(0), dataset.arm(1)
    net0 = fit_net_regressor(arm0.X, arm0.y, spec,
                             replace(train_cfg, seed=train_cfg.seed + SEED_MU0),
                             binary=spec.binary_y, lam=lam)
    net1 = fit_net_regressor(arm1.X, arm1.y, spec,
                             replace(train_cfg, seed=train_cfg.seed + SEED_MU1),
                             binary=spec.binary_y, lam=lam)
    return TLearnerFit(net0=net0, net1=net1)


# -- pseudo-outcome learners ----------------------------------------------------


FirstStageFactory = Callable[[Dataset, NetworkSpec, TrainConfig], object]


def default_first_stage(dataset: Dataset, spec: NetworkSpec,
                        train_cfg: TrainConfig):
    """TNet nuisance fit, matching the two-stage baselines in the experiments."""
    return fit_estimator(EstimatorConfig(strategy="tnet"), spec, dataset, train_cfg)


@dataclass
class PseudoOutcomeLearnerFit:
    """Two-stage learner: nuisances, then a direct regression of the
    pseudo-outcome on X. ``tau`` comes from stage 2; mu0/mu1 are the stage-1
    estimates when the transformation uses them (None for PW and under
    cross-fitting, where nuisances are fold-local)."""

    kind: str
    stage2: NetRegressor
    first_stage: Optional[object] = None
    propensity: Optional[PropensityFit] = None
    known_pi: Optional[float] = None

    def predict(self, X: Array) -> PredictionTriple:
        tau = self.stage2.predict(X)
        mu0 = mu1 = None
        if self.first_stage is not None:
            stage1 = self.first_stage.predict(X)
            mu0, mu1 = stage1.mu0, stage1.mu1
        return PredictionTriple(mu0=mu0, mu1=mu1, tau=tau)

    @property
    def stop_step(self):
        return self.stage2.report.stop_step if self.stage2.report else None


def _crossfit_folds(n: int, folds: int, seed: int) -> list[Array]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [perm[i::folds] for i in range(folds)]


def fit_pseudo_learner(kind: str, dataset: Dataset, spec: NetworkSpec,
                       train_cfg: TrainConfig,
                       first_stage: Optional[FirstStageFactory] = None,
                       known_pi=None, lam: float = 1e-4,
                       cross_fit: int = 0) -> PseudoOutcomeLearnerFit:
    """RA-, PW- or DR-learner with network stages.

    Stage 1 fits nuisances on the full sample (the protocol used throughout
    the experiments); pass ``cross_fit >= 2`` for out-of-fold nuisance
    predictions instead. ``known_pi`` (or a propensity recorded on the
    dataset) skips propensity fitting in randomized designs.
    """
    kind = kind.lower()
    if kind not in PSEUDO_KINDS:
        raise ValueError(f"unknown pseudo-outcome kind {kind!r}")
    _require_both_arms(dataset, f"{kind}_learner")
    factory = first_stage if first_stage is not None else default_first_stage
    needs_mu = kind in ("ra", "dr")
    needs_pi = kind in ("pw", "dr")

    pi_values = prop = fitted_first = None
    known_const = None
    if needs_pi:
        pi_values, prop, known_const = _resolve_pi(dataset, known_pi, spec, train_cfg)

    if cross_fit >= 2:
        mu0_hat = np.zeros(dataset.n)
        mu1_hat = np.zeros(dataset.n)
        pi_hat = pi_values if needs_pi else None
        for fold_idx, fold in enumerate(_crossfit_folds(dataset.n, cross_fit,
                                                        train_cfg.seed + SEED_CROSSFIT_BASE)):
            mask = np.ones(dataset.n, dtype=bool)
            mask[fold] = False
            sub = Dataset(X=dataset.X[mask], w=dataset.w[mask], y=dataset.y[mask],
                          pi=dataset.pi)
            fold_cfg = replace(train_cfg,
                               seed=train_cfg.seed + SEED_CROSSFIT_BASE + 1 + fold_idx)
            if needs_mu:
                stage1 = factory(sub, spec, fold_cfg)
                triple = stage1.predict(dataset.X[fold])
                mu0_hat[fold] = triple.mu0
                mu1_hat[fold] = triple.mu1
            if needs_pi and known_const is None and known_pi is None and dataset.pi is None:
                fold_prop = fit_propensity(sub, spec, fold_cfg)
                pi_hat[fold] = fold_prop.predict(dataset.X[fold])
        targets = pseudo_outcome(kind, dataset.y, dataset.w, pi_hat,
                                 mu0_hat if needs_mu else None,
                                 mu1_hat if needs_mu else None)
        fitted_first = None
    else:
        mu0_hat = mu1_hat = None
        if needs_mu:
            fitted_first = factory(dataset, spec, train_cfg)
            triple = fitted_first.predict(dataset.X)
            mu0_hat, mu1_hat = triple.mu0, triple.mu1
        targets = pseudo_outcome(kind, dataset.y, dataset.w, pi_values, mu0_hat, mu1_hat)

    stage2 = fit_net_regressor(dataset.X, targets, spec,
                               replace(train_cfg, seed=train_cfg.seed + SEED_STAGE2),
                               binary=False, lam=lam)
    return PseudoOutcomeLearnerFit(kind=kind, stage2=stage2, first_stage=fitted_first,
                                   propensity=prop, known_pi=known_const)


# -- X-learner -------------------------------------------------------------------


@dataclass
class XLearnerFit:
    """Arm-specific imputed-effect regressions combined by a weighting function.

    ``g_kind`` is "propensity", "one_minus_propensity" or "constant"; the
    arm estimates are exposed for inspection.
    """

    net_mu0: NetRegressor
    net_mu1: NetRegressor
    tau0: NetRegressor
    tau1: NetRegressor
    g_kind: str = "propensity"
    g_constant: Optional[float] = None
    propensity: Optional[PropensityFit] = None
    known_pi: Optional[float] = None

    def weight(self, X: Array) -> Array:
        n = np.asarray(X).shape[0]
        if self.g_kind == "constant":
            return np.full(n, float(self.g_constant))
        if self.known_pi is not None:
            pi = np.full(n, self.known_pi)
        else:
            pi = self.propensity.predict(X)
        return 1.0 - pi if self.g_kind == "one_minus_propensity" else pi

    def predict(self, X: Array) -> PredictionTriple:
        mu0 = self.net_mu0.predict(X)
        mu1 = self.net_mu1.predict(X)
        g = self.weight(X)
        tau = g * self.tau1.predict(X) + (1.0 - g) * self.tau0.predict(X)
        return PredictionTriple(mu0=mu0, mu1=mu1, tau=tau)

    @property
    def stop_step(self):
        return self.tau1.report.stop_step if self.tau1.report else None


def fit_x_learner(dataset: Dataset, spec: NetworkSpec, train_cfg: TrainConfig,
                  g: Union[str, float] = "propensity", known_pi=None,
                  lam: float = 1e-4) -> XLearnerFit:
    """Two arm-specific effect regressions: on the treated, Y - mu0_hat(X);
    on controls, mu1_hat(X) - Y; combined as g * tau1 + (1 - g) * tau0.

    ``g`` may be "propensity" (default), "one_minus_propensity", or a
    constant in [0, 1].
    """
    _require_both_arms(dataset, "x_learner")
    arm0, arm1 = dataset.arm(0), dataset.arm(1)
    net_mu0 = fit_net_regressor(arm0.X, arm0.y, spec,
                                replace(train_cfg, seed=train_cfg.seed + SEED_MU0),
                                binary=spec.binary_y, lam=lam)
    net_mu1 = fit_net_regressor(arm1.X, arm1.y, spec,
                                replace(train_cfg, seed=train_cfg.seed + SEED_MU1),
                                binary=spec.binary_y, lam=lam)
    imputed_treated = arm1.y - net_mu0.predict(arm1.X)
    imputed_control = net_mu1.predict(arm0.X) - arm0.y
    tau1 = fit_net_regressor(arm1.X, imputed_treated, spec,
                             replace(train_cfg, seed=train_cfg.seed + SEED_TAU1), lam=lam)
    tau0 = fit_net_regressor(arm0.X, imputed_control, spec,
                             replace(train_cfg, seed=train_cfg.seed + SEED_TAU0), lam=lam)

    if isinstance(g, str):
        g_kind = g.lower()
        if g_kind not in ("propensity", "one_minus_propensity"):
            raise ValueError(f"unknown weighting choice {g!r}")
        g_constant = None
    else:
        g_kind = "constant"
        g_constant = float(g)
        if not 0.0 <= g_constant <= 1.0:
            raise ValueError("constant g must lie in [0, 1]")

    prop = None
    known_const = None
    if g_kind != "constant":
        if known_pi is None and dataset.pi is not None:
            known_pi = dataset.pi
        if known_pi is not None and np.isscalar(known_pi):
            known_const = float(known_pi)
        else:
            prop = fit_propensity(dataset, spec, train_cfg)
    return XLearnerFit(net_mu0=net_mu0, net_mu1=net_mu1, tau0=tau0, tau1=tau1,
                       g_kind=g_kind, g_constant=g_constant, propensity=prop,
                       known_pi=known_const)


# -- R-learner --------------------------------------------------------------------


@dataclass
class RLearnerFit:
    """Outcome- and treatment-residualized effect network."""

    mu_pooled: NetRegressor
    tau_net: NetRegressor
    propensity: Optional[PropensityFit] = None
    known_pi: Optional[float] = None

    def predict(self, X: Array) -> PredictionTriple:
        return PredictionTriple(mu0=None, mu1=None, tau=self.tau_net.predict(X))

    @property
    def stop_step(self):
        return self.tau_net.report.stop_step if self.tau_net.report else None


def r_stage2_loss(layers: Sequence[DenseLayer], X: Array, y_residual: Array,
                  w_residual: Array, lam: float) -> Tensor:
    """Mean of [(Y - mu_hat) - (W - pi_hat) tau(X)]^2 plus an L2 weight penalty."""
    pred = forward(layers, X)
    resid = Tensor(np.asarray(y_residual, float).reshape(-1, 1)) \
        - Tensor(np.asarray(w_residual, float).reshape(-1, 1)) * pred
    loss = (resid * resid).mean()
    if lam > 0:
        penalty = Tensor(0.0)
        for wt in stack_weights(layers):
            penalty = penalty + (wt * wt).sum()
        loss = loss + lam * penalty
    return loss


def fit_r_learner(dataset: Dataset, spec: NetworkSpec, train_cfg: TrainConfig,
                  known_pi=None, lam: float = 1e-4) -> RLearnerFit:
    """Orthogonalized direct learner: residualize the outcome on a pooled
    regression and the treatment on the propensity, then fit the effect
    network to the residual-on-residual objective."""
    _require_both_arms(dataset, "r_learner")
    mu_pooled = fit_net_regressor(dataset.X, dataset.y, spec,
                                  replace(train_cfg, seed=train_cfg.seed + SEED_MU_POOLED),
                                  binary=spec.binary_y, lam=lam)
    pi_values, prop, known_const = _resolve_pi(dataset, known_pi, spec, train_cfg,
                                               clamp=False)
    w_residual = dataset.w - pi_values
    if np.max(np.abs(w_residual)) == 0.0:
        raise DegenerateResidualError(
            "treatment residual W - pi_hat is identically zero; "
            "the effect is unidentified under this propensity"
        )
    y_residual = dataset.y - mu_pooled.predict(dataset.X)

    rng = np.random.default_rng(train_cfg.seed + SEED_STAGE2)
    layers = build_stack(rng, spec.head_dims(dataset.d), "identity")
    params = stack_params(layers)

    def objective(Xb, yres, wres):
        return r_stage2_loss(layers, Xb, yres, wres, lam)

    def monitor(Xb, yres, wres):
        return r_stage2_loss(layers, Xb, yres, wres, 0.0)

    report = train(params, (dataset.X, y_residual, w_residual), objective,
                   replace(train_cfg, seed=train_cfg.seed + SEED_STAGE2),
                   val_loss_builder=monitor)
    tau_net = NetRegressor(layers=layers, binary=False, report=report)
    return RLearnerFit(mu_pooled=mu_pooled, tau_net=tau_net, propensity=prop,
                       known_pi=known_const)
