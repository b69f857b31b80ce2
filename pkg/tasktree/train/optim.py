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
AdamW with decoupled weight decay.

    m_t = b1 * m_{t-1} + (1 - b1) * g_t
    v_t = b2 * v_{t-1} + (1 - b2) * g_t^2
    theta_t = theta_{t-1} - lr * (m_hat_t / (sqrt(v_hat_t) + eps) + wd * theta_{t-1})
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from tasktree.errors import ConfigError, NumericError

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(tensors: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float,
               weight_decay: float, state: AdamWState) -> Dict[str, np.ndarray]:
    """
    One AdamW update.

    Args:
        tensors: current parameter tensors by name
        grads: gradients by name; tensors without a gradient are left unchanged
        lr: learning rate
        weight_decay: decoupled decay coefficient
        state: moment estimates, updated in place

    Returns:
        Dict: new tensors (inputs are not modified)

    Raises:
        NumericError: a gradient holds a non-finite value
    """
    if lr < 0 or weight_decay < 0:
        raise ConfigError(f"invalid AdamW hyperparameters lr={lr} weight_decay={weight_decay}")
    for name, grad in grads.items():
        if name in tensors and not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {name}", term=name)

    state.step += 1
    bias1 = 1.0 - BETA1 ** state.step
    bias2 = 1.0 - BETA2 ** state.step

    updated = {}
    for name, theta in tensors.items():
        if name not in grads:
            updated[name] = theta
            continue
        grad = grads[name]
        m = state.exp_avg.get(name, np.zeros_like(theta))
        v = state.exp_avg_sq.get(name, np.zeros_like(theta))
        m = BETA1 * m + (1.0 - BETA1) * grad
        v = BETA2 * v + (1.0 - BETA2) * grad * grad
        state.exp_avg[name], state.exp_avg_sq[name] = m, v
        m_hat, v_hat = m / bias1, v / bias2
        updated[name] = theta - lr * (m_hat / (np.sqrt(v_hat) + EPS) + weight_decay * theta)
    return updated


class AdamW:
    """Stateful wrapper around adamw_step for training loops"""

    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = AdamWState()

    def step(self, tensors: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        return adamw_step(tensors, grads, self.lr, self.weight_decay, self.state)
