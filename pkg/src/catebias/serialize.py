"""JSON parameter dumps for fitted estimators.

Every model reduces to named dense stacks; a layer is stored as a shape
header plus row-major weights and a bias vector. Dumps round-trip through
``save_estimator``/``load_estimator`` and restore objects exposing the same
``predict`` interface (training reports are not persisted).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import architectures as arch
from . import metalearners as meta
from .autodiff import Tensor
from .layers import DenseLayer

FORMAT_NAME = "catebias-model"
FORMAT_VERSION = 1


def layer_to_dict(layer: DenseLayer) -> dict:
    return {
        "in": layer.in_dim,
        "out": layer.out_dim,
        "activation": layer.activation,
        "W": layer.W.data.reshape(-1).tolist(),
        "b": layer.b.data.tolist(),
    }


def layer_from_dict(d: dict) -> DenseLayer:
    weights = np.asarray(d["W"], dtype=np.float64).reshape(d["in"], d["out"])
    return DenseLayer(
        W=Tensor(weights, requires_grad=True),
        b=Tensor(np.asarray(d["b"], dtype=np.float64), requires_grad=True),
        activation=d["activation"],
    )


def stack_to_dict(layers) -> list:
    return [layer_to_dict(layer) for layer in layers]


def stack_from_dict(data) -> list[DenseLayer]:
    return [layer_from_dict(d) for d in data]


def _net_to_dict(net: meta.NetRegressor) -> dict:
    return {"layers": stack_to_dict(net.layers), "binary": net.binary}


def _net_from_dict(d: dict) -> meta.NetRegressor:
    return meta.NetRegressor(layers=stack_from_dict(d["layers"]), binary=d["binary"])


def _spec_to_dict(spec: arch.NetworkSpec) -> dict:
    return {"d_r": spec.d_r, "n_r": spec.n_r, "d_h": spec.d_h, "n_h": spec.n_h,
            "binary_y": spec.binary_y}


def _model_parts(model) -> dict:
    if isinstance(model, arch.TNetModel):
        return {"head0": stack_to_dict(model.head0), "head1": stack_to_dict(model.head1)}
    if isinstance(model, arch.TARNetModel):
        return {"rep": stack_to_dict(model.rep), "head0": stack_to_dict(model.head0),
                "head1": stack_to_dict(model.head1)}
    if isinstance(model, arch.OffsetModel):
        return {"base": stack_to_dict(model.base), "offset": stack_to_dict(model.offset),
                "reverse": model.reverse}
    if isinstance(model, arch.FlexTENetModel):
        return {
            "communicate": model.communicate,
            "layers": [
                {"shared": layer_to_dict(l.shared),
                 "private0": layer_to_dict(l.private0),
                 "private1": layer_to_dict(l.private1)}
                for l in model.layers
            ],
        }
    raise TypeError(f"cannot serialize model type {type(model).__name__}")


def _model_from_parts(strategy: str, parts: dict, binary_y: bool):
    if strategy in ("tnet", "tnet_soft"):
        return arch.TNetModel(head0=stack_from_dict(parts["head0"]),
                              head1=stack_from_dict(parts["head1"]), binary_y=binary_y)
    if strategy in ("tarnet", "tarnet_soft"):
        return arch.TARNetModel(rep=stack_from_dict(parts["rep"]),
                                head0=stack_from_dict(parts["head0"]),
                                head1=stack_from_dict(parts["head1"]), binary_y=binary_y)
    if strategy == "offset":
        return arch.OffsetModel(base=stack_from_dict(parts["base"]),
                                offset=stack_from_dict(parts["offset"]),
                                binary_y=binary_y, reverse=parts.get("reverse", False))
    if strategy in ("flextenet", "flextenet_ablated"):
        layers = [
            arch.FlexLayer(shared=layer_from_dict(l["shared"]),
                           private0=layer_from_dict(l["private0"]),
                           private1=layer_from_dict(l["private1"]))
            for l in parts["layers"]
        ]
        return arch.FlexTENetModel(layers=layers, binary_y=binary_y,
                                   communicate=parts.get("communicate", True))
    raise ValueError(f"unknown strategy {strategy!r}")


def estimator_to_dict(fitted) -> dict:
    """Serializable description of any fitted estimator."""
    base = {"format": FORMAT_NAME, "version": FORMAT_VERSION}
    if isinstance(fitted, arch.FittedEstimator):
        base.update({
            "kind": "architecture",
            "strategy": fitted.strategy,
            "spec": _spec_to_dict(fitted.spec),
            "parts": _model_parts(fitted.model),
        })
        return base
    if isinstance(fitted, meta.SLearnerFit):
        base.update({"kind": "s_learner", "net": _net_to_dict(fitted.net)})
        return base
    if isinstance(fitted, meta.TLearnerFit):
        base.update({"kind": "t_learner", "net0": _net_to_dict(fitted.net0),
                     "net1": _net_to_dict(fitted.net1)})
        return base
    if isinstance(fitted, meta.PropensityFit):
        base.update({"kind": "propensity", "net": _net_to_dict(fitted.net),
                     "clamp": fitted.clamp})
        return base
    if isinstance(fitted, meta.PseudoOutcomeLearnerFit):
        base.update({
            "kind": "pseudo_learner",
            "pseudo_kind": fitted.kind,
            "stage2": _net_to_dict(fitted.stage2),
            "first_stage": estimator_to_dict(fitted.first_stage)
            if fitted.first_stage is not None else None,
            "known_pi": fitted.known_pi,
        })
        return base
    if isinstance(fitted, meta.XLearnerFit):
        base.update({
            "kind": "x_learner",
            "net_mu0": _net_to_dict(fitted.net_mu0),
            "net_mu1": _net_to_dict(fitted.net_mu1),
            "tau0": _net_to_dict(fitted.tau0),
            "tau1": _net_to_dict(fitted.tau1),
            "g_kind": fitted.g_kind,
            "g_constant": fitted.g_constant,
            "known_pi": fitted.known_pi,
            "propensity": estimator_to_dict(fitted.propensity)
            if fitted.propensity is not None else None,
        })
        return base
    if isinstance(fitted, meta.RLearnerFit):
        base.update({
            "kind": "r_learner",
            "mu_pooled": _net_to_dict(fitted.mu_pooled),
            "tau_net": _net_to_dict(fitted.tau_net),
            "known_pi": fitted.known_pi,
            "propensity": estimator_to_dict(fitted.propensity)
            if fitted.propensity is not None else None,
        })
        return base
    raise TypeError(f"cannot serialize estimator type {type(fitted).__name__}")


def estimator_from_dict(data: dict):
    """Rebuild a predict-capable estimator from its dump."""
    if data.get("format") != FORMAT_NAME:
        raise ValueError("not a catebias model dump")
    kind = data["kind"]
    if kind == "architecture":
        spec = arch.NetworkSpec(**data["spec"])
        model = _model_from_parts(data["strategy"], data["parts"], spec.binary_y)
        return arch.FittedEstimator(
            strategy=data["strategy"], spec=spec,
            config=arch.EstimatorConfig(strategy=data["strategy"]),
            model=model, report=None,
        )
    if kind == "s_learner":
        return meta.SLearnerFit(net=_net_from_dict(data["net"]))
    if kind == "t_learner":
        return meta.TLearnerFit(net0=_net_from_dict(data["net0"]),
                                net1=_net_from_dict(data["net1"]))
    if kind == "propensity":
        return meta.PropensityFit(net=_net_from_dict(data["net"]), clamp=data["clamp"])
    if kind == "pseudo_learner":
        first = data.get("first_stage")
        return meta.PseudoOutcomeLearnerFit(
            kind=data["pseudo_kind"],
            stage2=_net_from_dict(data["stage2"]),
            first_stage=estimator_from_dict(first) if first else None,
            known_pi=data.get("known_pi"),
        )
    if kind == "x_learner":
        prop = data.get("propensity")
        return meta.XLearnerFit(
            net_mu0=_net_from_dict(data["net_mu0"]),
            net_mu1=_net_from_dict(data["net_mu1"]),
            tau0=_net_from_dict(data["tau0"]),
            tau1=_net_from_dict(data["tau1"]),
            g_kind=data["g_kind"],
            g_constant=data.get("g_constant"),
            known_pi=data.get("known_pi"),
            propensity=estimator_from_dict(prop) if prop else None,
        )
    if kind == "r_learner":
        prop = data.get("propensity")
        return meta.RLearnerFit(
            mu_pooled=_net_from_dict(data["mu_pooled"]),
            tau_net=_net_from_dict(data["tau_net"]),
            known_pi=data.get("known_pi"),
            propensity=estimator_from_dict(prop) if prop else None,
        )
    raise ValueError(f"unknown model kind {kind!r}")


def save_estimator(fitted, path) -> None:
    Path(path).write_text(json.dumps(estimator_to_dict(fitted)))


def load_estimator(path):
    return estimator_from_dict(json.loads(Path(path).read_text()))
