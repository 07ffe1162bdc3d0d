"""Desk-scale neural components over the finding graph.

Node features are initialized from an ingested backbone feature map through
per-class spatial attention, propagated by graph convolution layers, and
classified by a sigmoid head with a per-node auxiliary head. Everything runs
on the in-package autodiff so each path is verifiable against finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, grad_check, tensor
from .chestkg import PropagationMatrix

__all__ = [
    "Tape", "Tensor", "grad_check", "tensor",
    "NodeAttentionParams", "GraphConvParams", "ClassifierParams", "ModelParams",
    "DivergenceError", "FitStep", "init_model", "node_attention_init",
    "graph_conv", "classify", "weighted_bce", "aux_loss", "concat_views",
    "forward_classifier", "compute_pos_weights", "fit",
    "make_synthetic_classification_set", "NORM_FEATURE", "NORM_IDENTITY",
]

NORM_FEATURE = "feature"
NORM_IDENTITY = "identity"


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss at step {step}: {value}")
        self.step = step


@dataclass
class NodeAttentionParams:
    """1x1 projection producing one spatial attention map per category."""

    weight: Tensor  # (classes, channels)
    bias: Tensor    # (classes, 1)

    @staticmethod
    def init(rng: np.random.Generator, n_classes: int, channels: int) -> "NodeAttentionParams":
        scale = 1.0 / np.sqrt(channels)
        return NodeAttentionParams(
            weight=Tensor(rng.standard_normal((n_classes, channels)) * scale),
            bias=Tensor(np.zeros((n_classes, 1))),
        )

    def named_tensors(self, prefix: str = "attention"):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


@dataclass
class GraphConvParams:
    """Message map, update map over [features | messages], and norm state."""

    msg_weight: Tensor   # (msg_width, in_width)
    msg_bias: Tensor     # (1, msg_width)
    upd_weight: Tensor   # (out_width, in_width + msg_width)
    upd_bias: Tensor     # (1, out_width)
    msg_gamma: Tensor
    msg_beta: Tensor
    upd_gamma: Tensor
    upd_beta: Tensor
    norm: str = NORM_FEATURE
    residual: bool = True

    def __post_init__(self):
        msg_width, in_width = self.msg_weight.shape
        if self.upd_weight.shape[1] != in_width + msg_width:
            raise ValueError(
                f"update input width {self.upd_weight.shape[1]} != "
                f"feature width {in_width} + message width {msg_width}")

    @property
    def in_width(self) -> int:
        return self.msg_weight.shape[1]

    @property
    def out_width(self) -> int:
        return self.upd_weight.shape[0]

    @staticmethod
    def init(rng: np.random.Generator, in_width: int, msg_width: int,
             out_width: int, norm: str = NORM_FEATURE) -> "GraphConvParams":
        return GraphConvParams(
            msg_weight=Tensor(rng.standard_normal((msg_width, in_width)) / np.sqrt(in_width)),
            msg_bias=Tensor(np.zeros((1, msg_width))),
            upd_weight=Tensor(rng.standard_normal((out_width, in_width + msg_width))
                              / np.sqrt(in_width + msg_width)),
            upd_bias=Tensor(np.zeros((1, out_width))),
            msg_gamma=Tensor(np.ones((1, msg_width))),
            msg_beta=Tensor(np.zeros((1, msg_width))),
            upd_gamma=Tensor(np.ones((1, out_width))),
            upd_beta=Tensor(np.zeros((1, out_width))),
            norm=norm,
        )

    def named_tensors(self, prefix: str):
        names = ["msg_weight", "msg_bias", "upd_weight", "upd_bias",
                 "msg_gamma", "msg_beta", "upd_gamma", "upd_beta"]
        return [(f"{prefix}.{n}", getattr(self, n)) for n in names]


@dataclass
class ClassifierParams:
    main_weight: Tensor  # (classes, node_width)
    main_bias: Tensor    # (1, classes)
    aux_weight: Tensor   # (1, initial_node_width)
    aux_bias: Tensor     # (1, 1)

    @staticmethod
    def init(rng: np.random.Generator, n_classes: int, node_width: int,
             initial_width: int) -> "ClassifierParams":
        return ClassifierParams(
            main_weight=Tensor(rng.standard_normal((n_classes, node_width))
                               / np.sqrt(node_width)),
            main_bias=Tensor(np.zeros((1, n_classes))),
            aux_weight=Tensor(rng.standard_normal((1, initial_width))
                              / np.sqrt(initial_width)),
            aux_bias=Tensor(np.zeros((1, 1))),
        )

    def named_tensors(self, prefix: str = "classifier"):
        names = ["main_weight", "main_bias", "aux_weight", "aux_bias"]
        return [(f"{prefix}.{n}", getattr(self, n)) for n in names]


@dataclass
class ModelParams:
    attention: NodeAttentionParams
    conv_layers: list[GraphConvParams]
    classifier: ClassifierParams
    aux_loss_weight: float = 1.0

    def named_tensors(self):
        out = list(self.attention.named_tensors())
        for i, layer in enumerate(self.conv_layers):
            out.extend(layer.named_tensors(f"conv{i}"))
        out.extend(self.classifier.named_tensors())
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]


def init_model(rng: np.random.Generator, channels: int, n_classes: int,
               hidden: int = 64, conv_layers: int = 2,
               norm: str = NORM_FEATURE) -> ModelParams:
    layers = []
    in_width = channels
    for _ in range(conv_layers):
        layers.append(GraphConvParams.init(rng, in_width, hidden, hidden, norm=norm))
        in_width = hidden
    return ModelParams(
        attention=NodeAttentionParams.init(rng, n_classes, channels),
        conv_layers=layers,
        classifier=ClassifierParams.init(rng, n_classes, in_width, channels),
    )


# ---------------------------------------------------------------------------
# forward operations


def node_attention_init(feature_map: Tensor, params: NodeAttentionParams):
    """Per-class attention-weighted sums of the backbone activation.

    Returns ((classes+1) x channels node features with the spatially averaged
    global node last, and the classes x H x W attention maps (each summing
    to 1 over locations).
    """
    if len(feature_map.shape) != 3:
        raise ValueError(f"feature map must be rank 3, got {feature_map.shape}")
    channels, height, width = feature_map.shape
    if params.weight.shape[1] != channels:
        raise ValueError(
            f"attention expects {params.weight.shape[1]} channels, got {channels}")
    flat = ad.reshape(feature_map, (channels, height * width))
    logits = ad.add(ad.matmul(params.weight, flat), params.bias)
    alpha = ad.softmax(logits, axis=1)                      # (classes, H*W)
    class_feats = ad.matmul(alpha, ad.transpose(flat))      # (classes, channels)
    global_feat = ad.transpose(ad.mean(flat, axis=1, keepdims=True))  # (1, channels)
    node_feats = ad.concat([class_feats, global_feat], axis=0)
    return node_feats, ad.reshape(alpha, (params.weight.shape[0], height, width))


def _norm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str) -> Tensor:
    if mode == NORM_IDENTITY:
        return x
    if mode == NORM_FEATURE:
        return ad.feature_norm(x, gamma, beta)
    raise ValueError(f"unknown norm mode {mode!r}")


def graph_conv(features: Tensor, prop: PropagationMatrix | Tensor,
               params: GraphConvParams) -> Tensor:
    """One propagation layer: transformed features are mixed through the
    propagation matrix, normalized and rectified into messages, then fused
    with the current features by the update map. A residual join applies
    when widths agree."""
    prop_values = prop.values if isinstance(prop, PropagationMatrix) else prop
    n = features.shape[0]
    if prop_values.shape[0] != n:
        raise ValueError(f"propagation is {prop_values.shape[0]}-node, features are {n}-node")
    if features.shape[1] != params.in_width:
        raise ValueError(f"expected width {params.in_width}, got {features.shape[1]}")
    prop_t = prop_values if isinstance(prop_values, Tensor) else Tensor(prop_values)
    msg = ad.linear(features, params.msg_weight, params.msg_bias)
    msg = ad.matmul(prop_t, msg)
    msg = ad.relu(_norm(msg, params.msg_gamma, params.msg_beta, params.norm))
    fused = ad.concat([features, msg], axis=1)
    out = ad.linear(fused, params.upd_weight, params.upd_bias)
    out = ad.relu(_norm(out, params.upd_gamma, params.upd_beta, params.norm))
    if params.residual and params.in_width == params.out_width:
        out = ad.add(out, features)
    return out


def classify(node_features: Tensor, params: ClassifierParams) -> Tensor:
    """Sigmoid class probabilities from the node-averaged graph feature."""
    pooled = ad.mean(node_features, axis=0, keepdims=True)
    return ad.sigmoid(ad.linear(pooled, params.main_weight, params.main_bias))


def weighted_bce(pred: Tensor, target: Tensor, pos_weight: Tensor | None = None,
                 eps: float = 1e-7) -> Tensor:
    """Mean over classes of -[w*t*log(p) + (1-t)*log(1-p)]."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pos_weight is None:
        pos_weight = Tensor(np.ones(pred.shape))
    p = ad.clip(pred, eps, 1.0 - eps)
    one = Tensor(np.ones(pred.shape))
    pos_term = ad.mul(ad.mul(pos_weight, target), ad.log(p))
    neg_term = ad.mul(ad.sub(one, target), ad.log(ad.sub(one, p)))
    return ad.neg(ad.mean(ad.add(pos_term, neg_term)))


def aux_loss(initial_node_features: Tensor, targets: Tensor,
             params: ClassifierParams, pos_weight: Tensor | None = None) -> Tensor:
    """Per-node auxiliary objective on the pre-convolution features.

    The shared one-logit head scores every category node against its own
    label; the global node contributes nothing.
    """
    n_classes = targets.shape[1] if len(targets.shape) == 2 else targets.shape[0]
    if initial_node_features.shape[0] not in (n_classes, n_classes + 1):
        raise ValueError(
            f"{initial_node_features.shape[0]} nodes vs {n_classes} targets")
    class_nodes = ad.slice_rows(initial_node_features, 0, n_classes)
    logits = ad.linear(class_nodes, params.aux_weight, params.aux_bias)  # (classes, 1)
    preds = ad.transpose(ad.sigmoid(logits))                             # (1, classes)
    target_row = targets if len(targets.shape) == 2 else ad.reshape(targets, (1, n_classes))
    return weighted_bce(preds, target_row, pos_weight)


def concat_views(frontal: Tensor, lateral: Tensor) -> Tensor:
    """Frontal-first feature concatenation; doubles the node width."""
    if frontal.shape != lateral.shape:
        raise ValueError(f"view shapes differ: {frontal.shape} vs {lateral.shape}")
    return ad.concat([frontal, lateral], axis=1)


def forward_classifier(model: ModelParams, prop: PropagationMatrix, feature_map: Tensor):
    node_feats, attention = node_attention_init(feature_map, model.attention)
    hidden = node_feats
    for layer in model.conv_layers:
        hidden = graph_conv(hidden, prop, layer)
    probs = classify(hidden, model.classifier)
    return probs, node_feats, attention


def compute_pos_weights(labels: np.ndarray, floor: float = 1.0,
                        cap: float = 50.0) -> np.ndarray:
    """Per-class negative/positive ratio over a dataset, clipped to
    [floor, cap]; classes with no positives sit at the cap."""
    labels = np.asarray(labels, dtype=np.float64)
    pos = labels.sum(axis=0)
    neg = labels.shape[0] - pos
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pos > 0, neg / np.maximum(pos, 1e-12), cap)
    return np.clip(ratio, floor, cap)


# ---------------------------------------------------------------------------
# training


@dataclass
class FitStep:
    total: float
    main: float
    aux: float


def fit(model: ModelParams, prop: PropagationMatrix,
        dataset: list[tuple[np.ndarray, np.ndarray]], steps: int,
        learning_rate: float, momentum: float = 0.0,
        pos_weight: np.ndarray | None = None) -> list[FitStep]:
    """Full-batch gradient descent on main + aux weighted BCE.

    Deterministic for fixed parameters and data; aborts with the failing
    step index when the loss leaves the finite range.
    """
    if not dataset:
        raise ValueError("empty dataset")
    n_classes = model.classifier.main_weight.shape[0]
    if pos_weight is None:
        pos_weight = compute_pos_weights(np.stack([lab for _, lab in dataset]))
    weight_row = Tensor(pos_weight.reshape(1, n_classes))
    samples = [(Tensor(fmap), Tensor(np.asarray(lab, dtype=np.float64).reshape(1, n_classes)))
               for fmap, lab in dataset]
    params = model.tensors()
    velocity = [np.zeros_like(p.values) for p in params]
    inv_count = Tensor(np.array(1.0 / len(samples)))
    lam = Tensor(np.array(model.aux_loss_weight))
    trace: list[FitStep] = []
    for step in range(steps):
        for p in params:
            p.zero_grad()
        with Tape() as tape:
            main_sum = None
            aux_sum = None
            for fmap, target in samples:
                probs, node_feats, _ = forward_classifier(model, prop, fmap)
                main = weighted_bce(probs, target, weight_row)
                aux = aux_loss(node_feats, target, model.classifier, weight_row)
                main_sum = main if main_sum is None else ad.add(main_sum, main)
                aux_sum = aux if aux_sum is None else ad.add(aux_sum, aux)
            main_mean = ad.mul(main_sum, inv_count)
            aux_mean = ad.mul(aux_sum, inv_count)
            total = ad.add(main_mean, ad.mul(lam, aux_mean))
            tape.backward(total)
        total_v = float(total.values)
        if not np.isfinite(total_v):
            raise DivergenceError(step, total_v)
        trace.append(FitStep(total=total_v, main=float(main_mean.values),
                             aux=float(aux_mean.values)))
        for p, v in zip(params, velocity):
            grad = p.grad if p.grad is not None else np.zeros_like(p.values)
            v *= momentum
            v += grad
            p.values -= learning_rate * v
    return trace


def make_synthetic_classification_set(
        rng: np.random.Generator, n_samples: int = 8, n_classes: int = 20,
        channels: int = 16, height: int = 4, width: int = 4,
        noise: float = 0.05) -> list[tuple[np.ndarray, np.ndarray]]:
    """Separable toy set: each class adds its own channel signature."""
    patterns = rng.standard_normal((n_classes, channels))
    dataset = []
    for _ in range(n_samples):
        labels = (rng.random(n_classes) < 0.35).astype(np.float64)
        signal = patterns.T @ labels  # (channels,)
        fmap = np.tile(signal[:, None, None], (1, height, width))
        fmap = fmap + rng.standard_normal((channels, height, width)) * noise
        dataset.append((fmap, labels))
    return dataset
