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

"""Instruction tuning: regress task-tree embeddings onto per-class instruction vectors."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from tasktree.config.run_config import SFTConfig
from tasktree.errors import ConfigError, FormatError
from tasktree.graph.dataset import Dataset
from tasktree.model.encoder import EncoderParams, backward
from tasktree.train.objectives import SFTObjective
from tasktree.train.optim import AdamW
from tasktree.utils.seeding import STREAM_BATCHES, substream

logger = logging.getLogger(__name__)


@dataclass
class InstructionSet:
    vectors: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise FormatError(f"instruction vectors must be a matrix, got shape {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise FormatError(f"non-finite instruction vector in {self.source or 'input'}")

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> 'InstructionSet':
        if dataset.class_vectors is None:
            raise ConfigError(f"dataset {dataset.name} has no class vectors to use as instructions")
        return cls(dataset.class_vectors, source=f"{dataset.name}/class_vectors.txt")


@dataclass
class SFTResult:
    params: EncoderParams
    losses: List[float] = field(default_factory=list)


def run_sft(pretrained: EncoderParams, dataset: Dataset, cfg: SFTConfig,
            instructions: Optional[InstructionSet] = None) -> SFTResult:
    """
    Full-parameter SFT with AdamW over mini-batches of the training split.

    The pretrained params are never modified; every update produces new
    arrays. losses[e] is the task-weighted mean batch loss of epoch e + 1.
    """
    instructions = instructions or InstructionSet.from_dataset(dataset)
    if instructions.vectors.shape[1] != pretrained.hidden_dim:
        raise ConfigError(f"instruction width {instructions.vectors.shape[1]} "
                          f"does not match encoder output {pretrained.hidden_dim}")
    tasks = dataset.split_tasks("train") if "train" in dataset.splits else list(dataset.tasks)
    if not tasks:
        raise ConfigError(f"dataset {dataset.name} has no tasks to specialize on")
    # fail before training when a class has no instruction row
    SFTObjective(instructions.vectors, [t.label for t in tasks])

    params = pretrained
    optimizer = AdamW(cfg.learning_rate, cfg.weight_decay)
    result = SFTResult(params=pretrained)
    for epoch in tqdm(range(1, cfg.epochs + 1), desc="SFT", unit="epoch", leave=False):
        order = substream(cfg.seed, STREAM_BATCHES, epoch).permutation(len(tasks))
        epoch_loss = 0.0
        for start in range(0, len(tasks), cfg.batch_size):
            batch = [tasks[i] for i in order[start:start + cfg.batch_size]]
            objective = SFTObjective(instructions.vectors, [t.label for t in batch])
            loss, grads = backward(params, dataset.graph, batch, objective)
            params = params.replace_tensors(optimizer.step(params.tensors(), grads.grads))
            epoch_loss += loss * len(batch)
        result.losses.append(epoch_loss / len(tasks))
        logger.info(f"SFT epoch {epoch}: loss={result.losses[-1]:.6f}")

    result.params = params
    return result


def specialize(pretrained: EncoderParams, dataset: Dataset, cfg: SFTConfig) -> EncoderParams:
    return run_sft(pretrained, dataset, cfg).params
