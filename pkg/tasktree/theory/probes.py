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
Diagnostic probes for transfer and generalization.

These are directional readings only: the constants of the underlying
bounds are not estimated, so nothing here passes or fails on its own.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from tasktree.config.run_config import CorruptionConfig
from tasktree.errors import ConfigError, DimensionError
from tasktree.graph.core import Graph
from tasktree.model.encoder import EncoderParams, embed_tasks
from tasktree.train.pretrain import corrupt
from tasktree.tree.task_tree import TaskInstance, encode_task_trees
from tasktree.utils.seeding import STREAM_CORRUPTION, substream

logger = logging.getLogger(__name__)

RIDGE = 1e-8


@dataclass
class TaskSample:
    graph: Graph
    tasks: Sequence[TaskInstance]

    def __post_init__(self):
        if len(self.tasks) == 0:
            raise ConfigError("task sample is empty")

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.tasks], dtype=np.int64)


@dataclass(frozen=True)
class TransferProbeReport:
    lhs: float
    rhs: float
    ratio: float

    def line(self) -> str:
        return f"lhs={self.lhs:.6e} rhs={self.rhs:.6e} ratio={self.ratio:.6e}"


@dataclass(frozen=True)
class DistributionGapReport:
    gap: float

    def line(self) -> str:
        return f"gap={self.gap:.6e}"


def least_squares_risk(inputs: np.ndarray, targets: np.ndarray, ridge: float = RIDGE) -> float:
    """Mean squared residual of the best affine map inputs -> targets (ridge-regularized normal equations)"""
    design = np.hstack([inputs, np.ones((inputs.shape[0], 1))])
    gram = design.T @ design + ridge * np.eye(design.shape[1])
    weights = scipy.linalg.solve(gram, design.T @ targets, assume_a="pos")
    residual = design @ weights - targets
    return float(np.mean(np.sum(residual * residual, axis=1)))


def _unit_rows(z: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return np.divide(z, norms, out=np.zeros_like(z), where=norms > 0)


def downstream_risk(phi: EncoderParams, data: TaskSample, num_classes: Optional[int] = None) -> float:
    """min over linear heads of the squared loss against one-hot labels"""
    labels = data.labels
    num_classes = num_classes or int(labels.max()) + 1
    targets = np.eye(num_classes)[labels]
    return least_squares_risk(encode_task_trees(phi, data.graph, data.tasks), targets)


def reconstruction_risk(phi: EncoderParams, data: TaskSample, view: Graph) -> float:
    """min over linear g of ||g(phi(T_hat)) - rho(phi(T))||^2, T_hat encoded on the corrupted view"""
    clean = _unit_rows(encode_task_trees(phi, data.graph, data.tasks))
    return least_squares_risk(encode_task_trees(phi, view, data.tasks), clean)


def transfer_probe(phi_a: EncoderParams, phi_b: EncoderParams, pretrain_data: TaskSample,
                   downstream_data: TaskSample, corruption: Optional[CorruptionConfig] = None,
                   seed: int = 0) -> TransferProbeReport:
    """
    Downstream risk gap against pretraining loss gap between two encoders.

    lhs = R(phi_a) - R(phi_b), rhs = L(phi_a) - L(phi_b), each with its best
    linear head; ratio = lhs / sqrt(rhs) for rhs > 0, nan otherwise. Both
    encoders see the same corrupted view.
    """
    if phi_a.hidden_dim != phi_b.hidden_dim:
        raise DimensionError(f"encoders differ in output dim: {phi_a.hidden_dim} vs {phi_b.hidden_dim}")
    view = corrupt(pretrain_data.graph, corruption or CorruptionConfig(), substream(seed, STREAM_CORRUPTION))

    num_classes = int(downstream_data.labels.max()) + 1
    lhs = downstream_risk(phi_a, downstream_data, num_classes) - downstream_risk(phi_b, downstream_data, num_classes)
    rhs = reconstruction_risk(phi_a, pretrain_data, view) - reconstruction_risk(phi_b, pretrain_data, view)
    ratio = lhs / np.sqrt(rhs) if rhs > 0 else float("nan")
    report = TransferProbeReport(lhs=float(lhs), rhs=float(rhs), ratio=float(ratio))
    logger.debug(f"Transfer probe: {report.line()}")
    return report


def distribution_gap(phi: EncoderParams, data_p: TaskSample, data_t: TaskSample) -> DistributionGapReport:
    """Distance between the mean post-projector task-tree embeddings of two samples"""
    mean_p = embed_tasks(phi, data_p.graph, data_p.tasks).mean(axis=0)
    mean_t = embed_tasks(phi, data_t.graph, data_t.tasks).mean(axis=0)
    return DistributionGapReport(gap=float(np.linalg.norm(mean_p - mean_t)))
