# Copyright (c) 2025 tasktree authors
#
# tasktree is licensed under Mulan PSL v2.
# You can use this software according to the terms and conditions of the Mulan PSL v2.
# You may obtain a copy of Mulan PSL v2 at:
#          http://license.coscl.org.cn/MulanPSL2
#
# THIS SOFTWARE IS PROVIDED ON AN "AS IS" BASIS, WITHOUT WARRANTIES OF ANY KIND,
# EITHER EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO NON-INFRINGEMENT,
# MERCHANTABILITY OR FIT FOR A PARTICULAR PURPOSE.
#
# See the Mulan PSL v2 for more details.

"""
Mean-aggregation message-passing encoder.

Layer update (standard form):

    z_i <- act(W1 z_i + W2 * mean_{j in N(i)} z_j)

Computation-tree form (tree_form=True) feeds the raw features into every
layer and starts from z = 0, so an L-layer encoder reads subtree levels
0..L-1 of every root:

    z_i <- act(W1 x_i + W2 * mean_{j in N(i)} z_j)
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from tasktree.config.run_config import ACTIVATIONS, EncoderConfig
from tasktree.errors import ConfigError, DimensionError, NumericError
from tasktree.graph.core import Graph, sample_mean_operator
from tasktree.model.heads import project
from tasktree.model.tape import Tape, Var
from tasktree.tree.task_tree import TaskInstance, pooling_matrix
from tasktree.utils.seeding import STREAM_INIT, substream

logger = logging.getLogger(__name__)

MODES = ("train", "eval")


@dataclass
class EncoderParams:
    layers: List[Tuple[np.ndarray, np.ndarray]]
    projector_weight: np.ndarray
    projector_bias: np.ndarray
    head_weights: Tuple[np.ndarray, np.ndarray]
    head_biases: Tuple[np.ndarray, np.ndarray]
    num_layers: int
    activation: str = "relu"
    head_activation: str = "relu"
    tied_weights: bool = False
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be at least 1, got {self.num_layers}")
        for key in ("activation", "head_activation"):
            if getattr(self, key) not in ACTIVATIONS:
                raise ConfigError(f"{key} must be one of {ACTIVATIONS}, got {getattr(self, key)!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

        expected = 1 if self.tied_weights else self.num_layers
        if len(self.layers) != expected:
            raise DimensionError(f"expected {expected} weight pair(s), got {len(self.layers)}")
        for l, (w1, w2) in enumerate(self.layers):
            if w1.shape != w2.shape:
                raise DimensionError(f"layer {l}: W1 {w1.shape} and W2 {w2.shape} differ")
            if l and w1.shape[1] != self.layers[l - 1][0].shape[0]:
                raise DimensionError(f"layer {l} input {w1.shape[1]} does not chain from {self.layers[l - 1][0].shape[0]}")
        if self.tied_weights and self.layers[0][0].shape[0] != self.layers[0][0].shape[1]:
            raise DimensionError("tied weights need square layer matrices")

        h = self.hidden_dim
        for name, w in (("projector", self.projector_weight), ("head layer 1", self.head_weights[0]),
                        ("head layer 2", self.head_weights[1])):
            if w.shape != (h, h):
                raise DimensionError(f"{name} must be {h}x{h}, got {w.shape}")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def layer(self, l: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.layers[0 if self.tied_weights else l]

    def tensors(self) -> Dict[str, np.ndarray]:
        """Every trainable tensor under a stable name, in checkpoint order"""
        out: Dict[str, np.ndarray] = {}
        for l, (w1, w2) in enumerate(self.layers):
            out[f"layer{l}.W1"] = w1
            out[f"layer{l}.W2"] = w2
        out["projector.W"] = self.projector_weight
        out["projector.b"] = self.projector_bias
        out["head.W1"], out["head.W2"] = self.head_weights
        out["head.b1"], out["head.b2"] = self.head_biases
        return out

    def replace_tensors(self, tensors: Dict[str, np.ndarray]) -> 'EncoderParams':
        merged = {**self.tensors(), **{k: v for k, v in tensors.items() if k in self.tensors()}}
        return dataclasses.replace(
            self,
            layers=[(np.array(merged[f"layer{l}.W1"]), np.array(merged[f"layer{l}.W2"]))
                    for l in range(len(self.layers))],
            projector_weight=np.array(merged["projector.W"]),
            projector_bias=np.array(merged["projector.b"]),
            head_weights=(np.array(merged["head.W1"]), np.array(merged["head.W2"])),
            head_biases=(np.array(merged["head.b1"]), np.array(merged["head.b2"])),
        )

    def copy(self) -> 'EncoderParams':
        return self.replace_tensors({})


@dataclass
class GradientSet:
    """d loss / d theta, keyed like EncoderParams.tensors() (plus any extra tensors)"""
    grads: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def __contains__(self, name: str) -> bool:
        return name in self.grads

    def items(self):
        return self.grads.items()

    def check_finite(self):
        for name, grad in self.grads.items():
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient for {name}", term=name)


@dataclass
class LossTerms:
    """Scalar tape nodes of one loss: the total plus its named parts"""
    total: Var
    parts: Dict[str, Var]

    def values(self) -> Dict[str, float]:
        return {name: float(var.value) for name, var in self.parts.items()}

    def check_finite(self):
        for name, var in self.parts.items():
            if not np.isfinite(var.value):
                raise NumericError(f"non-finite {name} loss term: {float(var.value)}", term=name)
        if not np.isfinite(total := float(self.total.value)):
            raise NumericError(f"non-finite total loss: {total}", term="total")


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def init_params(feature_dim: int, hidden_dim: int, num_layers: int, seed: int,
                activation: str = "relu", head_activation: str = "relu",
                tied_weights: bool = False, dropout: float = 0.15) -> EncoderParams:
    """
    Glorot-uniform initialization from the "init" sub-stream of `seed`.

    Args:
        feature_dim: input feature width d
        hidden_dim: width h of every layer, the projector and the head
        num_layers: message-passing depth
        seed: root seed
        tied_weights: share one (W1, W2) pair across layers (requires d == h)

    Returns:
        EncoderParams: weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases
    """
    if min(feature_dim, hidden_dim, num_layers) < 1:
        raise ConfigError(f"encoder dims must be positive, got d={feature_dim} h={hidden_dim} L={num_layers}")
    if tied_weights and feature_dim != hidden_dim:
        raise ConfigError(f"tied weights need feature_dim == hidden_dim, got {feature_dim} and {hidden_dim}")

    rng = substream(seed, STREAM_INIT)
    layers = []
    for l in range(1 if tied_weights else num_layers):
        fan_in = feature_dim if l == 0 else hidden_dim
        layers.append((_glorot(rng, hidden_dim, fan_in), _glorot(rng, hidden_dim, fan_in)))

    return EncoderParams(
        layers=layers,
        projector_weight=_glorot(rng, hidden_dim, hidden_dim),
        projector_bias=np.zeros(hidden_dim),
        head_weights=(_glorot(rng, hidden_dim, hidden_dim), _glorot(rng, hidden_dim, hidden_dim)),
        head_biases=(np.zeros(hidden_dim), np.zeros(hidden_dim)),
        num_layers=num_layers,
        activation=activation,
        head_activation=head_activation,
        tied_weights=tied_weights,
        dropout_rate=dropout,
    )


def init_from_config(feature_dim: int, cfg: EncoderConfig, seed: int) -> EncoderParams:
    return init_params(feature_dim, cfg.hidden_dim, cfg.num_layers, seed,
                       activation=cfg.activation, head_activation=cfg.head_activation,
                       tied_weights=cfg.tied_weights, dropout=cfg.dropout)


def bind(tape: Tape, params: EncoderParams, extra: Optional[Dict[str, np.ndarray]] = None) -> Dict[str, Var]:
    """Register every tensor (and any extra trainable tensors) as tape leaves"""
    tensors = {**params.tensors(), **(extra or {})}
    return {name: tape.leaf(value, name=name) for name, value in tensors.items()}


def _check_input(params: EncoderParams, g: Graph, mode: str, tree_form: bool):
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if g.feature_dim != params.input_dim:
        raise ConfigError(f"encoder expects feature dim {params.input_dim}, graph has {g.feature_dim}")
    if tree_form and params.input_dim != params.hidden_dim:
        raise ConfigError("computation-tree form needs input dim == hidden dim")


def encode_nodes(tape: Tape, bound: Dict[str, Var], params: EncoderParams, g: Graph,
                 mode: str = "eval", rng: Optional[np.random.Generator] = None,
                 fanout: Optional[int] = None, tree_form: bool = False) -> Var:
    """Node embeddings as a tape node; train mode applies seeded dropout and neighbor sampling"""
    _check_input(params, g, mode, tree_form)
    train = mode == "train"
    if train and rng is None and (params.dropout_rate > 0 or fanout):
        raise ConfigError("train mode needs an explicit rng")
    keep = 1.0 - params.dropout_rate

    def dropout(v: Var) -> Var:
        if not train or params.dropout_rate == 0:
            return v
        mask = (rng.random(v.value.shape) < keep) / keep
        return tape.scale(v, mask)

    x = tape.constant(g.features)
    z = tape.constant(np.zeros((g.num_nodes, params.hidden_dim))) if tree_form else x
    for l in range(params.num_layers):
        w1 = bound[f"layer{0 if params.tied_weights else l}.W1"]
        w2 = bound[f"layer{0 if params.tied_weights else l}.W2"]
        operator = sample_mean_operator(g, fanout, rng) if train and fanout else g.mean_operator
        if tree_form:
            self_term, neighbor_in = dropout(x), z
        else:
            self_term = neighbor_in = dropout(z)
        pre = tape.add(tape.linear(self_term, w1), tape.linear(tape.spmm(operator, neighbor_in), w2))
        z = tape.activation(pre, params.activation)
    return z


def encode_tasks(tape: Tape, bound: Dict[str, Var], params: EncoderParams, g: Graph,
                 tasks: Sequence[TaskInstance], **kwargs) -> Var:
    """Task-tree embeddings (mean over relevant roots) as a tape node"""
    return tape.spmm(pooling_matrix(g, tasks), encode_nodes(tape, bound, params, g, **kwargs))


def forward(params: EncoderParams, g: Graph, mode: str = "eval",
            rng: Optional[np.random.Generator] = None, fanout: Optional[int] = None,
            tree_form: bool = False) -> np.ndarray:
    """Node embedding matrix num_nodes x h; eval mode is a pure function of its inputs"""
    tape = Tape(enabled=False)
    bound = bind(tape, params)
    return encode_nodes(tape, bound, params, g, mode=mode, rng=rng, fanout=fanout, tree_form=tree_form).value


LossFn = Callable[[Tape, Dict[str, Var], EncoderParams, Var], LossTerms]


def collect_gradients(bound: Dict[str, Var]) -> GradientSet:
    return GradientSet({name: np.zeros_like(var.value) if var.grad is None else var.grad
                        for name, var in bound.items()})


def backward(params: EncoderParams, g: Graph, tasks: Sequence[TaskInstance], loss_fn: LossFn,
             mode: str = "eval", rng: Optional[np.random.Generator] = None,
             fanout: Optional[int] = None,
             extra: Optional[Dict[str, np.ndarray]] = None) -> Tuple[float, GradientSet]:
    """
    Exact reverse-mode gradients of a task-tree loss.

    Args:
        params: encoder parameters
        g: graph the tasks live on
        tasks: task instances whose task-tree embeddings feed the loss
        loss_fn: callable (tape, bound, params, task_embeddings) -> LossTerms
        extra: additional trainable tensors (e.g. a linear head) exposed to loss_fn

    Returns:
        Tuple: (loss value, GradientSet over params and extra tensors)
    """
    tape = Tape()
    bound = bind(tape, params, extra)
    z = encode_tasks(tape, bound, params, g, tasks, mode=mode, rng=rng, fanout=fanout)
    terms = loss_fn(tape, bound, params, z)
    terms.check_finite()
    tape.backward(terms.total)
    return float(terms.total.value), collect_gradients(bound)


def param_norms(params: EncoderParams) -> Tuple[float, float]:
    """Spectral norms (B_W1, B_W2), each the max over layers"""
    b_w1 = max(float(np.linalg.norm(w1, 2)) for w1, _ in params.layers)
    b_w2 = max(float(np.linalg.norm(w2, 2)) for _, w2 in params.layers)
    return b_w1, b_w2


def embed_tasks(params: EncoderParams, g: Graph, tasks: Sequence[TaskInstance]) -> np.ndarray:
    """Post-projector task-tree embeddings in eval mode (prototype space)"""
    return project(params, pooling_matrix(g, tasks) @ forward(params, g))
