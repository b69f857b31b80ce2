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

"""Projector, predictor head and the linear classifier used for fine-tuning."""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from tasktree.errors import DimensionError
from tasktree.model.tape import Tape, Var

LINEAR_HEAD_WEIGHT = "clf.W"
LINEAR_HEAD_BIAS = "clf.b"


def _check_width(name: str, embeddings: np.ndarray, width: int):
    if embeddings.ndim != 2 or embeddings.shape[1] != width:
        raise DimensionError(f"{name} expects rows of width {width}, got shape {embeddings.shape}")


def project(params, embeddings) -> np.ndarray:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    _check_width("projector", embeddings, params.projector_weight.shape[1])
    return embeddings @ params.projector_weight.T + params.projector_bias


def head_g(params, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    _check_width("predictor head", z, params.head_weights[0].shape[1])
    hidden = z @ params.head_weights[0].T + params.head_biases[0]
    if params.head_activation == "relu":
        hidden = np.maximum(hidden, 0.0)
    return hidden @ params.head_weights[1].T + params.head_biases[1]


def project_var(tape: Tape, bound: Dict[str, Var], z: Var) -> Var:
    return tape.linear(z, bound["projector.W"], bound["projector.b"])


def head_g_var(tape: Tape, bound: Dict[str, Var], z: Var, activation: str) -> Var:
    hidden = tape.activation(tape.linear(z, bound["head.W1"], bound["head.b1"]), activation)
    return tape.linear(hidden, bound["head.W2"], bound["head.b2"])


@dataclass
class LinearHead:
    """Linear classifier appended to the projector output"""
    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int, dim: int) -> 'LinearHead':
        return cls(np.zeros((num_classes, dim)), np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def logits(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        _check_width("linear head", z, self.weight.shape[1])
        return z @ self.weight.T + self.bias

    def tensors(self) -> Dict[str, np.ndarray]:
        return {LINEAR_HEAD_WEIGHT: self.weight, LINEAR_HEAD_BIAS: self.bias}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> 'LinearHead':
        return cls(np.array(tensors[LINEAR_HEAD_WEIGHT]), np.array(tensors[LINEAR_HEAD_BIAS]))

    @staticmethod
    def logits_var(tape: Tape, bound: Dict[str, Var], z: Var) -> Var:
        return tape.linear(z, bound[LINEAR_HEAD_WEIGHT], bound[LINEAR_HEAD_BIAS])
