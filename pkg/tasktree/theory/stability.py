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
Stability bound for task-tree embeddings.

For a shared-weight encoder in computation-tree form, the distance between
two task-tree embeddings satisfies

    delta <= sum_{i,j} sum_{l<L} C1 * C2^l * ||x_i^(l) - x_j^(l)|| / (n m)
          <= 2 * B_x * C1 * (C2^L - 1) / (C2 - 1)

with C1 = C_sigma * ||W1||, C2 = C_sigma * ||W2|| (spectral norms) and
B_x the largest feature row norm over both graphs.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.spatial.distance import cdist

from tasktree.errors import ContractError
from tasktree.graph.core import Graph, feature_stats
from tasktree.model.encoder import EncoderParams, forward, param_norms
from tasktree.tree.task_tree import TaskInstance, relevant_nodes, subtree_info

logger = logging.getLogger(__name__)

# 1-Lipschitz activations accepted by the check
C_SIGMA = {"relu": 1.0, "identity": 1.0}
RTOL = 1e-12


@dataclass(frozen=True)
class StabilityConstants:
    c_sigma: float
    b_w1: float
    b_w2: float
    b_x: float
    depth: int


@dataclass(frozen=True)
class StabilityReport:
    delta: float
    pairwise_bound: float
    global_bound: float
    constants: StabilityConstants
    layer_terms: List[float]

    def holds(self, rtol: float = RTOL) -> bool:
        """delta <= pairwise_bound <= global_bound, up to floating-point rounding"""
        def within(value: float, bound: float) -> bool:
            return value <= bound * (1.0 + rtol) + rtol

        return within(self.delta, self.pairwise_bound) and within(self.pairwise_bound, self.global_bound)

    def line(self) -> str:
        c = self.constants
        return (f"L={c.depth} delta={self.delta:.6e} pairwise={self.pairwise_bound:.6e} "
                f"global={self.global_bound:.6e} B_W1={c.b_w1:.4f} B_W2={c.b_w2:.4f} B_x={c.b_x:.4f}")


def global_bound(b_x: float, c1: float, c2: float, depth: int) -> float:
    """2 B_x C1 (C2^L - 1) / (C2 - 1), taking the limit 2 B_x C1 L at C2 = 1"""
    if c2 == 1.0:
        return 2.0 * b_x * c1 * depth
    return 2.0 * b_x * c1 * (c2 ** depth - 1.0) / (c2 - 1.0)


def _check_contract(params: EncoderParams):
    if not params.tied_weights:
        raise ContractError("stability check needs shared (tied) layer weights")
    if params.activation not in C_SIGMA:
        raise ContractError(f"activation {params.activation!r} has no known Lipschitz constant")
    if params.dropout_rate > 0:
        raise ContractError(f"stability check needs dropout 0, got {params.dropout_rate}")
    if params.input_dim != params.hidden_dim:
        raise ContractError("stability check needs feature dim == hidden dim")


def _mean_pair_distance(a: np.ndarray, b: np.ndarray) -> float:
    # exact summation keeps the value independent of argument order
    return math.fsum(cdist(a, b).ravel()) / (a.shape[0] * b.shape[0])


def stability_check(g1: Graph, task1: TaskInstance, g2: Graph, task2: TaskInstance,
                    params: EncoderParams, depth: Optional[int] = None) -> StabilityReport:
    """
    Exact task-tree distance against the layerwise and global bounds.

    Args:
        g1, task1: first graph and task
        g2, task2: second graph and task
        params: tied-weight encoder with relu or identity activation and no dropout
        depth: number of layers L (defaults to params.num_layers)

    Returns:
        StabilityReport

    Raises:
        ContractError: params violate the assumptions of the bound
    """
    _check_contract(params)
    depth = depth or params.num_layers
    params = dataclasses.replace(params, num_layers=depth)

    nodes1, nodes2 = relevant_nodes(task1, g1), relevant_nodes(task2, g2)
    emb1 = forward(params, g1, tree_form=True)[nodes1].mean(axis=0)
    emb2 = forward(params, g2, tree_form=True)[nodes2].mean(axis=0)
    delta = float(np.linalg.norm(emb1 - emb2))

    b_w1, b_w2 = param_norms(params)
    c_sigma = C_SIGMA[params.activation]
    c1, c2 = c_sigma * b_w1, c_sigma * b_w2
    b_x = max(feature_stats(g1).max_row_norm, feature_stats(g2).max_row_norm)

    levels1 = subtree_info(g1, depth).of_nodes(nodes1)
    levels2 = subtree_info(g2, depth).of_nodes(nodes2)
    layer_terms = [c1 * c2 ** l * _mean_pair_distance(levels1[l], levels2[l]) for l in range(depth)]

    report = StabilityReport(
        delta=delta,
        pairwise_bound=float(sum(layer_terms)),
        global_bound=global_bound(b_x, c1, c2, depth),
        constants=StabilityConstants(c_sigma=c_sigma, b_w1=b_w1, b_w2=b_w2, b_x=b_x, depth=depth),
        layer_terms=layer_terms,
    )
    if not report.holds():
        logger.error(f"Stability chain violated: {report.line()}")
    return report
