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
Training objectives.

Each objective comes in two shapes: a tape builder used by the training
loops (returns LossTerms so gradients flow), and a plain function returning
the loss value.
"""

from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from tasktree.errors import ConfigError, DimensionError
from tasktree.graph.core import Graph
from tasktree.model.encoder import EncoderParams, LossTerms, bind, encode_tasks
from tasktree.model.heads import LinearHead, head_g_var, project_var
from tasktree.model.tape import Tape, Var
from tasktree.tree.task_tree import TaskInstance


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    kl: float
    total: float

    def line(self, epoch: int) -> str:
        """Training log record: "epoch recon kl total" """
        return f"{epoch} {self.recon:.17g} {self.kl:.17g} {self.total:.17g}"


def reconstruction_terms(tape: Tape, bound: Dict[str, Var], params: EncoderParams,
                         z_hat: Var, z_tilde: Var) -> Var:
    """
    (1/2n) sum_i ||rho(g(z_hat_i)) - sg[rho(z_tilde_i)]||^2 + ||rho(g(z_tilde_i)) - sg[rho(z_hat_i)]||^2
    """
    if z_hat.shape != z_tilde.shape:
        raise DimensionError(f"view shapes differ: {z_hat.shape} vs {z_tilde.shape}")
    n = z_hat.shape[0]
    if n == 0:
        raise ConfigError("reconstruction loss needs at least one task")
    target_tilde = tape.stop_gradient(tape.normalize_rows(z_tilde))
    target_hat = tape.stop_gradient(tape.normalize_rows(z_hat))
    pred_hat = tape.normalize_rows(head_g_var(tape, bound, z_hat, params.head_activation))
    pred_tilde = tape.normalize_rows(head_g_var(tape, bound, z_tilde, params.head_activation))
    scale = 1.0 / (2 * n)
    return tape.add(tape.sq_distance(pred_hat, target_tilde, scale),
                    tape.sq_distance(pred_tilde, target_hat, scale))


def reconstruction_loss(params: EncoderParams, z_hat, z_tilde) -> float:
    tape = Tape(enabled=False)
    bound = bind(tape, params)
    return float(reconstruction_terms(tape, bound, params, tape.constant(np.asarray(z_hat, dtype=np.float64)),
                                      tape.constant(np.asarray(z_tilde, dtype=np.float64))).value)


def domain_regularizer(batch_z) -> float:
    """Mean KL(H || Z_i) between the softmax of the batch-mean row and each row's softmax"""
    batch_z = np.asarray(batch_z, dtype=np.float64)
    if batch_z.ndim != 2 or batch_z.shape[0] == 0:
        raise ConfigError("domain regularizer needs a non-empty batch")
    tape = Tape(enabled=False)
    return float(tape.softmax_kl_to_mean(tape.constant(batch_z)).value)


def pretrain_terms(tape: Tape, bound: Dict[str, Var], params: EncoderParams,
                   z_hat: Var, z_tilde: Var, lam: float) -> LossTerms:
    """recon + lam * KL over the concatenated post-projector embeddings of both views"""
    recon = reconstruction_terms(tape, bound, params, z_hat, z_tilde)
    kl = tape.softmax_kl_to_mean(tape.vstack([z_hat, z_tilde]))
    total = tape.add(recon, tape.scale(kl, lam))
    return LossTerms(total=total, parts={"recon": recon, "kl": kl})


class SFTObjective:
    """(1/n) sum_i ||phi(T_i) - psi(T_i)||^2 on post-projector task-tree embeddings"""

    def __init__(self, instructions, labels):
        self.instructions = np.asarray(instructions, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.labels.size and self.labels.max() >= self.instructions.shape[0]:
            missing = int(self.labels.max())
            raise ConfigError(f"no instruction row for class {missing} "
                              f"({self.instructions.shape[0]} rows available)")

    def __call__(self, tape: Tape, bound: Dict[str, Var], params: EncoderParams, z: Var) -> LossTerms:
        if self.instructions.shape[1] != params.hidden_dim:
            raise DimensionError(f"instruction width {self.instructions.shape[1]} "
                                 f"does not match encoder output {params.hidden_dim}")
        n = z.shape[0]
        if n == 0:
            raise ConfigError("SFT loss needs at least one task")
        target = tape.constant(self.instructions[self.labels])
        loss = tape.sq_distance(project_var(tape, bound, z), target, 1.0 / n)
        return LossTerms(total=loss, parts={"sft": loss})


class CrossEntropyObjective:
    """Linear head on post-projector embeddings, mean cross-entropy"""

    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=np.int64)

    def __call__(self, tape: Tape, bound: Dict[str, Var], params: EncoderParams, z: Var) -> LossTerms:
        logits = LinearHead.logits_var(tape, bound, project_var(tape, bound, z))
        loss = tape.softmax_cross_entropy(logits, self.labels)
        return LossTerms(total=loss, parts={"cross_entropy": loss})


class RegularizerObjective:
    """Domain regularizer alone, on post-projector embeddings of one task batch"""

    def __call__(self, tape: Tape, bound: Dict[str, Var], params: EncoderParams, z: Var) -> LossTerms:
        kl = tape.softmax_kl_to_mean(project_var(tape, bound, z))
        return LossTerms(total=kl, parts={"kl": kl})


def sft_loss(params: EncoderParams, g: Graph, tasks: Sequence[TaskInstance], instructions) -> float:
    """SFT loss value under the current params (eval mode)"""
    objective = SFTObjective(instructions, [t.label for t in tasks])
    tape = Tape(enabled=False)
    bound = bind(tape, params)
    z = encode_tasks(tape, bound, params, g, tasks)
    return float(objective(tape, bound, params, z).total.value)
