"""End-to-end potential-outcome estimators and their inductive-bias losses.

Four architectures are implemented as (model, loss builder) pairs over the
autodiff core:

* TNet: two fully separate outcome heads, one per treatment arm.
* TARNet: a shared representation feeding two arm-specific heads.
* Soft variants of both: the heads start from one random initialization and
  the squared difference of their weights is penalized, so treatment effect
  heterogeneity is shrunk rather than encouraged.
* OffsetModel: the treated response is reparametrized as the control head
  plus an explicitly regularized offset head, which is read out directly as
  the effect estimate.
* FlexTENet: every layer carries a shared subspace and two arm-private
  subspaces, with information flowing shared-to-private only; private weights
  are penalized more heavily and pushed orthogonal to the shared ones so the
  network learns what to share.

All regularizers act on weight matrices only, never on biases, so constant
effects are never penalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .autodiff import Tensor, concat_columns, loss_bce, loss_mse
from .data import Dataset, PredictionTriple
from .layers import DenseLayer, apply_layer, build_stack, copy_stack, forward, init_dense, \
    stack_params, stack_weights
from .training import TrainConfig, TrainReport, train

Array = np.ndarray

STRATEGIES = (
    "tnet",
    "tarnet",
    "tnet_soft",
    "tarnet_soft",
    "offset",
    "flextenet",
    "flextenet_ablated",
)


class EmptyTreatmentArmError(ValueError):
    """A strategy with arm-specific parameters got data from a single arm."""


@dataclass
class NetworkSpec:
    """Layer counts and widths shared by every estimator in an experiment.

    ``d_r`` representation layers of ``n_r`` units feed ``d_h`` head layers
    of ``n_h`` units plus a scalar output layer. For FlexTENet each layer is
    split into a shared and two private subspaces whose widths sum to the
    matched width (shared gets the extra unit when the width is odd).
    """

    d_r: int = 1
    n_r: int = 200
    d_h: int = 1
    n_h: int = 100
    binary_y: bool = False

    def __post_init__(self):
        for name in ("d_r", "n_r", "d_h", "n_h"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def head_dims(self, in_dim: int) -> list[int]:
        """Full-stack dims used by TNet heads, offset heads and stage regressors."""
        return [in_dim] + [self.n_r] * self.d_r + [self.n_h] * self.d_h + [1]

    def flex_subspace_widths(self) -> tuple[list[int], list[int]]:
        shared = [(self.n_r + 1) // 2] * self.d_r + [(self.n_h + 1) // 2] * self.d_h
        private = [self.n_r // 2] * self.d_r + [self.n_h // 2] * self.d_h
        return shared, private


@dataclass
class EstimatorConfig:
    """Strategy selector plus penalty strengths.

    ``lam1`` scales the L2 penalty on baseline/shared weights, ``lam2`` the
    penalty on difference/offset/private weights (default 100x lam1 to favor
    shared structure), ``lam_o`` the shared-private orthogonality penalty.
    """

    strategy: str = "tnet"
    lam1: float = 1e-4
    lam2: float = 1e-2
    lam_o: float = 0.1
    penalize_bias: bool = False
    reg_shared_rep: bool = True
    reverse_offset: bool = False

    def __post_init__(self):
        self.strategy = self.strategy.lower()
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        for name in ("lam1", "lam2", "lam_o"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.penalize_bias:
            raise ValueError("penalize_bias must stay False: regularizers act on weights only")

    def effective_penalties(self) -> tuple[float, float, float]:
        if self.strategy == "flextenet_ablated":
            return self.lam1, self.lam1, 0.0
        return self.lam1, self.lam2, self.lam_o


# -- model containers ---------------------------------------------------------


@dataclass
class TNetModel:
    head0: list[DenseLayer]
    head1: list[DenseLayer]
    binary_y: bool = False

    def parameters(self) -> list[Tensor]:
        return stack_params(self.head0) + stack_params(self.head1)


@dataclass
class TARNetModel:
    rep: list[DenseLayer]
    head0: list[DenseLayer]
    head1: list[DenseLayer]
    binary_y: bool = False

    def parameters(self) -> list[Tensor]:
        return stack_params(self.rep) + stack_params(self.head0) + stack_params(self.head1)


@dataclass
class OffsetModel:
    """Control head plus additive effect head; both stacks end linearly.

    With ``reverse=True`` the base head models the treated response and the
    offset is subtracted for controls instead.
    """

    base: list[DenseLayer]
    offset: list[DenseLayer]
    binary_y: bool = False
    reverse: bool = False

    def parameters(self) -> list[Tensor]:
        return stack_params(self.base) + stack_params(self.offset)


@dataclass
class FlexLayer:
    shared: DenseLayer
    private0: DenseLayer
    private1: DenseLayer


@dataclass
class FlexTENetModel:
    """Shared/private subspace stack; see flextenet_forward for the dataflow.

    ``communicate=False`` severs the shared-to-private input concatenation
    (used by the structural special cases).
    """

    layers: list[FlexLayer]
    binary_y: bool = False
    communicate: bool = True

    def parameters(self) -> list[Tensor]:
        params = []
        for layer in self.layers:
            params.extend(stack_params([layer.shared, layer.private0, layer.private1]))
        return params

    def shared_weights(self) -> list[Tensor]:
        return [layer.shared.W for layer in self.layers]

    def private_weights(self, arm: int) -> list[Tensor]:
        return [(layer.private0 if arm == 0 else layer.private1).W for layer in self.layers]


Model = Union[TNetModel, TARNetModel, OffsetModel, FlexTENetModel]


# -- builders -----------------------------------------------------------------


def _head_output_activation(binary_y: bool) -> str:
    return "sigmoid" if binary_y else "identity"


def make_model(strategy: str, spec: NetworkSpec, in_dim: int,
               rng: np.random.Generator, reverse_offset: bool = False) -> Model:
    """Freshly initialized model for a strategy; soft variants share head init."""
    out_act = _head_output_activation(spec.binary_y)
    if strategy in ("tnet", "tnet_soft"):
        dims = spec.head_dims(in_dim)
        head0 = build_stack(rng, dims, out_act)
        head1 = copy_stack(head0) if strategy == "tnet_soft" else build_stack(rng, dims, out_act)
        return TNetModel(head0=head0, head1=head1, binary_y=spec.binary_y)
    if strategy in ("tarnet", "tarnet_soft"):
        rep = build_stack(rng, [in_dim] + [spec.n_r] * spec.d_r, output_activation="elu")
        head_dims = [spec.n_r] + [spec.n_h] * spec.d_h + [1]
        head0 = build_stack(rng, head_dims, out_act)
        head1 = copy_stack(head0) if strategy == "tarnet_soft" else build_stack(rng, head_dims, out_act)
        return TARNetModel(rep=rep, head0=head0, head1=head1, binary_y=spec.binary_y)
    if strategy == "offset":
        dims = spec.head_dims(in_dim)
        return OffsetModel(
            base=build_stack(rng, dims, "identity"),
            offset=build_stack(rng, dims, "identity"),
            binary_y=spec.binary_y,
            reverse=reverse_offset,
        )
    if strategy in ("flextenet", "flextenet_ablated"):
        shared_w, private_w = spec.flex_subspace_widths()
        return make_flextenet(in_dim, shared_w, private_w, rng, binary_y=spec.binary_y)
    raise ValueError(f"unknown strategy {strategy!r}")


def make_flextenet(in_dim: int, shared_widths: Sequence[int], private_widths: Sequence[int],
                   rng: np.random.Generator, binary_y: bool = False,
                   communicate: bool = True,
                   private_init_scale: float = 0.3) -> FlexTENetModel:
    """Build a FlexTENet with explicit per-layer subspace widths.

    ``shared_widths``/``private_widths`` cover the hidden layers; a final
    layer of scalar outputs per subspace is appended. Zero widths are legal
    and yield the structural special cases (e.g. all-zero shared widths with
    severed communication is a TNet).

    Private weights start at a fraction of the usual scale so the shared
    subspace fits the common structure first and the private paths only pick
    up what it cannot explain; starting them at full scale lets a private
    path capture the majority arm's surface early, which then leaks into the
    effect estimate.
    """
    if len(shared_widths) != len(private_widths):
        raise ValueError("subspace width lists must have equal length")
    layers: list[FlexLayer] = []
    prev_s, prev_p = in_dim, in_dim
    all_shared = list(shared_widths) + [1]
    all_private = list(private_widths) + [1]
    for i, (m_s, m_p) in enumerate(zip(all_shared, all_private)):
        act = "identity" if i == len(all_shared) - 1 else "elu"
        first = i == 0
        private_in = prev_p if first or not communicate else prev_s + prev_p
        private0 = init_dense(rng, private_in, m_p, act)
        private1 = init_dense(rng, private_in, m_p, act)
        private0.W.data *= private_init_scale
        private1.W.data *= private_init_scale
        layers.append(FlexLayer(
            shared=init_dense(rng, prev_s if not first else in_dim, m_s, act),
            private0=private0,
            private1=private1,
        ))
        prev_s, prev_p = m_s, m_p
    return FlexTENetModel(layers=layers, binary_y=binary_y, communicate=communicate)


# -- forward passes -----------------------------------------------------------


def flextenet_forward(model: FlexTENetModel, X) -> tuple[Tensor, Tensor]:
    """Run the shared/private stack: layer 1 feeds the raw input to all three
    subspaces, deeper private layers see [shared, own private] while the
    shared path sees only itself; the outputs are summed per arm (sigmoid
    linked for binary outcomes)."""
    x = X if isinstance(X, Tensor) else Tensor(np.asarray(X, dtype=np.float64))
    x_shared = x
    x_p0 = x
    x_p1 = x
    for i, layer in enumerate(model.layers):
        if i == 0:
            new_p0 = apply_layer(layer.private0, x, index=i)
            new_p1 = apply_layer(layer.private1, x, index=i)
        else:
            in0 = concat_columns([x_shared, x_p0]) if model.communicate else x_p0
            in1 = concat_columns([x_shared, x_p1]) if model.communicate else x_p1
            new_p0 = apply_layer(layer.private0, in0, index=i)
            new_p1 = apply_layer(layer.private1, in1, index=i)
        x_shared = apply_layer(layer.shared, x_shared, index=i)
        x_p0, x_p1 = new_p0, new_p1
    y0 = x_shared + x_p0
    y1 = x_shared + x_p1
    if model.binary_y:
        y0 = y0.sigmoid()
        y1 = y1.sigmoid()
    return y0, y1


def _head_outputs(model: Model, X) -> tuple[Tensor, Tensor]:
    """Per-arm predictions (post link) for any architecture."""
    if isinstance(model, TNetModel):
        return forward(model.head0, X), forward(model.head1, X)
    if isinstance(model, TARNetModel):
        rep = forward(model.rep, X)
        return forward(model.head0, rep), forward(model.head1, rep)
    if isinstance(model, OffsetModel):
        base = forward(model.base, X)
        off = forward(model.offset, X)
        if model.reverse:
            lin0, lin1 = base - off, base
        else:
            lin0, lin1 = base, base + off
        if model.binary_y:
            return lin0.sigmoid(), lin1.sigmoid()
        return lin0, lin1
    if isinstance(model, FlexTENetModel):
        return flextenet_forward(model, X)
    raise TypeError(f"unknown model type {type(model).__name__}")


def predict_pos(model: Model, X: Array) -> PredictionTriple:
    """Potential-outcome predictions and the implied effect on query rows.

    For the offset reparametrization with continuous outcomes the effect is
    read directly from the offset head; everywhere else it is mu1 - mu0.
    """
    out0, out1 = _head_outputs(model, X)
    mu0 = out0.data.reshape(-1)
    mu1 = out1.data.reshape(-1)
    if isinstance(model, OffsetModel) and not model.binary_y:
        tau = forward(model.offset, X).data.reshape(-1)
    else:
        tau = mu1 - mu0
    return PredictionTriple(mu0=mu0, mu1=mu1, tau=tau)


# -- losses -------------------------------------------------------------------


def _sq_norm(tensors: Sequence[Tensor]) -> Tensor:
    total = Tensor(0.0)
    for t in tensors:
        total = total + (t * t).sum()
    return total


def _sq_norm_diff(a: Sequence[Tensor], b: Sequence[Tensor]) -> Tensor:
    if len(a) != len(b) or any(x.data.shape != y.data.shape for x, y in zip(a, b)):
        raise ValueError("head weight stacks are not shape-identical")
    total = Tensor(0.0)
    for x, y in zip(a, b):
        diff = x - y
        total = total + (diff * diff).sum()
    return total


def _data_loss(pred: Tensor, y: Array, binary_y: bool) -> Tensor:
    target = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    return loss_bce(pred, target) if binary_y else loss_mse(pred, target)


def _check_batch(batch) -> tuple[Array, Array, Array]:
    X, y, w = batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if X.shape[0] == 0:
        raise ValueError("batch contains no samples")
    return X, y, w


def factual_loss(model: Model, batch) -> Tensor:
    """Unpenalized loss of each sample against its own arm's prediction.

    This is the term shared by every strategy's objective and is what the
    early-stopping monitor tracks.
    """
    X, y, w = _check_batch(batch)
    wcol = w.reshape(-1, 1)
    if isinstance(model, OffsetModel):
        base = forward(model.base, X)
        off = forward(model.offset, X)
        if model.reverse:
            pred = base - Tensor(1.0 - wcol) * off
        else:
            pred = base + Tensor(wcol) * off
        if model.binary_y:
            pred = pred.sigmoid()
        return _data_loss(pred, y, model.binary_y)
    out0, out1 = _head_outputs(model, X)
    pred = Tensor(1.0 - wcol) * out0 + Tensor(wcol) * out1
    return _data_loss(pred, y, model.binary_y)


def loss_standard(model: Union[TNetModel, TARNetModel], batch,
                  cfg: EstimatorConfig) -> Tensor:
    """Baseline objective: factual loss plus a separate L2 penalty per head.

    Separate penalties implicitly encourage effect heterogeneity, which is
    exactly what the other losses here counteract.
    """
    lam1, _, _ = cfg.effective_penalties()
    loss = factual_loss(model, batch)
    penalty = _sq_norm(stack_weights(model.head0)) + _sq_norm(stack_weights(model.head1))
    if isinstance(model, TARNetModel) and cfg.reg_shared_rep:
        penalty = penalty + _sq_norm(stack_weights(model.rep))
    return loss + lam1 * penalty


def loss_soft(model: Union[TNetModel, TARNetModel], batch,
              cfg: EstimatorConfig) -> Tensor:
    """Similarity-regularized objective: penalize head 0 plus the layerwise
    difference between the two heads' weights (biases exempt)."""
    lam1, lam2, _ = cfg.effective_penalties()
    loss = factual_loss(model, batch)
    w0 = stack_weights(model.head0)
    w1 = stack_weights(model.head1)
    penalty = lam1 * _sq_norm(w0) + lam2 * _sq_norm_diff(w1, w0)
    if isinstance(model, TARNetModel) and cfg.reg_shared_rep:
        penalty = penalty + lam1 * _sq_norm(stack_weights(model.rep))
    return loss + penalty


def loss_offset(model: OffsetModel, batch, cfg: EstimatorConfig) -> Tensor:
    """Reparametrized objective: fit base(x) + w * offset(x) to the factual
    outcome, shrinking the offset head harder than the base head."""
    lam1, lam2, _ = cfg.effective_penalties()
    loss = factual_loss(model, batch)
    return loss + lam1 * _sq_norm(stack_weights(model.base)) \
        + lam2 * _sq_norm(stack_weights(model.offset))


def orthogonal_reg(model: FlexTENetModel) -> Tensor:
    """Squared Frobenius norm of shared-weights^T private-weights per layer.

    Only the private rows that multiply shared inputs enter; at layer 1 all
    three subspaces read the raw input, so the whole private matrix counts.
    """
    total = Tensor(0.0)
    prev_shared_dim = None
    for i, layer in enumerate(model.layers):
        for private in (layer.private0, layer.private1):
            if i == 0:
                rows = private.W
            elif not model.communicate:
                continue
            else:
                rows = private.W.first_rows(prev_shared_dim)
            product = layer.shared.W.T @ rows
            total = total + (product * product).sum()
        prev_shared_dim = layer.shared.out_dim
    return total


def loss_flextenet(model: FlexTENetModel, batch, cfg: EstimatorConfig) -> Tensor:
    """Flexible objective: factual loss, light penalty on shared weights,
    heavier penalty on private weights, plus the orthogonality term.

    The ablated strategy drops the orthogonality term and equalizes the
    penalties, isolating the architecture's own contribution.
    """
    lam1, lam2, lam_o = cfg.effective_penalties()
    loss = factual_loss(model, batch)
    loss = loss + lam1 * _sq_norm(model.shared_weights())
    loss = loss + lam2 * (_sq_norm(model.private_weights(0)) + _sq_norm(model.private_weights(1)))
    if lam_o > 0:
        loss = loss + lam_o * orthogonal_reg(model)
    return loss


_LOSS_BY_STRATEGY = {
    "tnet": loss_standard,
    "tarnet": loss_standard,
    "tnet_soft": loss_soft,
    "tarnet_soft": loss_soft,
    "offset": loss_offset,
    "flextenet": loss_flextenet,
    "flextenet_ablated": loss_flextenet,
}


def loss_for(cfg: EstimatorConfig):
    return _LOSS_BY_STRATEGY[cfg.strategy]


# -- fitting ------------------------------------------------------------------


@dataclass
class FittedEstimator:
    """A trained architecture wrapped with its prediction interface."""

    strategy: str
    spec: NetworkSpec
    config: EstimatorConfig
    model: Model
    report: Optional[TrainReport] = None

    def predict(self, X: Array) -> PredictionTriple:
        return predict_pos(self.model, X)

    @property
    def stop_step(self) -> Optional[int]:
        return self.report.stop_step if self.report is not None else None


def fit_estimator(cfg: EstimatorConfig, spec: NetworkSpec, dataset: Dataset,
                  train_cfg: TrainConfig) -> FittedEstimator:
    """Train one architecture on a dataset, deterministically from the seed.

    Model initialization, the validation split and minibatch shuffling all
    derive from ``train_cfg.seed``. Early stopping monitors the unpenalized
    factual loss on the held-out split.
    """
    if dataset.n_control == 0:
        raise EmptyTreatmentArmError(
            f"control arm is empty (all {dataset.n} samples treated); "
            f"cannot fit {cfg.strategy}"
        )
    if dataset.n_treated == 0:
        raise EmptyTreatmentArmError(
            f"treated arm is empty (all {dataset.n} samples control); "
            f"cannot fit {cfg.strategy}"
        )
    rng = np.random.default_rng(train_cfg.seed)
    model = make_model(cfg.strategy, spec, dataset.d, rng, reverse_offset=cfg.reverse_offset)
    loss_fn = loss_for(cfg)
    params = model.parameters()
    report = train(
        params,
        (dataset.X, dataset.y, dataset.w),
        lambda X, y, w: loss_fn(model, (X, y, w), cfg),
        train_cfg,
        val_loss_builder=lambda X, y, w: factual_loss(model, (X, y, w)),
    )
    return FittedEstimator(strategy=cfg.strategy, spec=spec, config=cfg,
                           model=model, report=report)


# -- introspection ------------------------------------------------------------


def head_weight_gap(model: Union[TNetModel, TARNetModel]) -> float:
    """Max over layers of the max-abs entrywise difference between head weights."""
    gaps = [
        float(np.max(np.abs(l1.W.data - l0.W.data))) if l0.W.data.size else 0.0
        for l0, l1 in zip(model.head0, model.head1)
    ]
    return max(gaps)


def weight_norm_report(model: FlexTENetModel) -> list[dict]:
    """Mean incoming-weight L2 norm per hidden unit, by layer and subspace."""
    rows = []
    for i, layer in enumerate(model.layers, start=1):
        for subspace, dense in (("shared", layer.shared),
                                ("private0", layer.private0),
                                ("private1", layer.private1)):
            w = dense.W.data
            if w.size == 0:
                mean_norm = 0.0
            else:
                mean_norm = float(np.mean(np.linalg.norm(w, axis=0)))
            rows.append({
                "layer": i,
                "subspace": subspace,
                "mean_unit_norm": mean_norm,
                "n_units": w.shape[1],
            })
    return rows
