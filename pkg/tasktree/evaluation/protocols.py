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
Downstream protocols: fine-tuning with a linear head, k-shot prototype
in-context learning, and zero-shot classification against class vectors.

Prototype protocols work on post-projector task-tree embeddings and share
one episode sampler; episode e draws from substream(seed, "episodes", e),
so the (seed, episode) pair fixes every class and instance choice.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax
from tqdm import tqdm

from tasktree.config.run_config import DISTANCES
from tasktree.errors import ConfigError, SamplingError
from tasktree.graph.dataset import Dataset
from tasktree.model.encoder import EncoderParams, backward, embed_tasks
from tasktree.model.heads import LinearHead
from tasktree.evaluation.metrics import accuracy, auc
from tasktree.train.objectives import CrossEntropyObjective
from tasktree.train.optim import AdamW
from tasktree.utils.seeding import STREAM_EPISODES, STREAM_HEAD, substream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalReport:
    protocol: str
    metric: str
    value: float
    num_tasks: int
    seed: int

    def line(self) -> str:
        """One-line record: "protocol metric value num_tasks seed" """
        return f"{self.protocol} {self.metric} {self.value:.6f} {self.num_tasks} {self.seed}"


@dataclass
class PrototypeSet:
    vectors: np.ndarray
    class_ids: np.ndarray

    def classify(self, queries: np.ndarray, distance: str = "euclidean") -> np.ndarray:
        """Class id of the nearest prototype for every query row (first prototype wins ties)"""
        if distance not in DISTANCES:
            raise ConfigError(f"distance must be one of {DISTANCES}, got {distance!r}")
        return self.class_ids[np.argmin(cdist(queries, self.vectors, metric=distance), axis=1)]


@dataclass
class FinetuneResult:
    params: EncoderParams
    head: LinearHead
    report: EvalReport
    best_epoch: int = 0


def _score(params: EncoderParams, head: LinearHead, dataset: Dataset, split: str) -> float:
    tasks = dataset.split_tasks(split)
    if not tasks:
        raise ConfigError(f"dataset {dataset.name}: split '{split}' is empty")
    logits = head.logits(embed_tasks(params, dataset.graph, tasks))
    labels = np.array([t.label for t in tasks])
    if dataset.metric == "auc":
        return auc(softmax(logits, axis=1)[:, 1], labels)
    return accuracy(np.argmax(logits, axis=1), labels)


def finetune(pretrained: EncoderParams, dataset: Dataset, epochs: int, lr: float, seed: int,
             patience: int = 200, weight_decay: float = 0.0) -> FinetuneResult:
    """
    Joint full-batch training of the encoder and a zero-initialized linear head.

    Args:
        pretrained: starting encoder (left untouched)
        dataset: needs train, val and test splits
        epochs: maximum number of epochs
        lr: AdamW learning rate for encoder and head
        seed: root seed; dropout masks come from its "head" sub-stream
        patience: epochs without validation improvement before stopping

    Returns:
        FinetuneResult: best-validation params and head, report on the test split
    """
    for split in ("train", "val", "test"):
        dataset.split_index(split)
    if dataset.metric == "auc" and dataset.num_classes != 2:
        raise ConfigError(f"dataset {dataset.name}: auc needs a binary task, got {dataset.num_classes} classes")

    train_tasks = dataset.split_tasks("train")
    objective = CrossEntropyObjective([t.label for t in train_tasks])
    params, head = pretrained, LinearHead.zeros(dataset.num_classes, pretrained.hidden_dim)
    best = (_score(params, head, dataset, "val"), params, head, 0)
    optimizer = AdamW(lr, weight_decay)
    waited = 0

    for epoch in tqdm(range(1, epochs + 1), desc="Finetuning", unit="epoch", leave=False):
        _, grads = backward(params, dataset.graph, train_tasks, objective, mode="train",
                            rng=substream(seed, STREAM_HEAD, epoch), extra=head.tensors())
        updated = optimizer.step({**params.tensors(), **head.tensors()}, grads.grads)
        params, head = params.replace_tensors(updated), LinearHead.from_tensors(updated)

        val = _score(params, head, dataset, "val")
        if val > best[0]:
            best, waited = (val, params, head, epoch), 0
        else:
            waited += 1
            if waited >= patience:
                logger.info(f"Early stopping at epoch {epoch} (best epoch {best[3]})")
                break

    _, params, head, best_epoch = best
    test_tasks = dataset.split_tasks("test")
    report = EvalReport("finetune", dataset.metric, _score(params, head, dataset, "test"), len(test_tasks), seed)
    logger.info(f"Finetune on {dataset.name}: {report.line()}")
    return FinetuneResult(params=params, head=head, report=report, best_epoch=best_epoch)


def _task_pool(dataset: Dataset, split: Optional[str]):
    tasks = dataset.split_tasks(split) if split else list(dataset.tasks)
    if not tasks:
        raise ConfigError(f"dataset {dataset.name} has no tasks to evaluate")
    return tasks, np.array([t.label for t in tasks], dtype=np.int64)


def _members_by_class(labels: np.ndarray) -> Dict[int, np.ndarray]:
    return {int(c): np.nonzero(labels == c)[0] for c in np.unique(labels)}


def _clamp_ways(ways: int, num_classes: int, protocol: str) -> int:
    if ways > num_classes:
        logger.info(f"{protocol}: {ways}-way clamped to the {num_classes} available classes")
        return num_classes
    return ways


def _run_episodes(embeddings: np.ndarray, labels: np.ndarray, members: Dict[int, np.ndarray],
                  ways: int, num_tasks: int, seed: int, distance: str,
                  shots: Optional[int] = None, class_vectors: Optional[np.ndarray] = None,
                  desc: str = "Episodes") -> List[float]:
    """Per-episode accuracies; support-set prototypes when shots is set, class vectors otherwise"""
    classes = np.array(sorted(members))
    accuracies = []
    for episode in tqdm(range(num_tasks), desc=desc, unit="episode", leave=False):
        rng = substream(seed, STREAM_EPISODES, episode)
        chosen = np.sort(rng.choice(classes, size=ways, replace=False))
        queries, query_labels, prototypes = [], [], []
        for c in chosen:
            pool = members[int(c)]
            if shots is None:
                queries.append(pool)
                prototypes.append(class_vectors[c])
                continue
            picked = rng.permutation(pool.shape[0])
            prototypes.append(embeddings[pool[picked[:shots]]].mean(axis=0))
            queries.append(pool[np.sort(picked[shots:])])
        query_index = np.concatenate(queries)
        prototype_set = PrototypeSet(np.vstack(prototypes), chosen)
        preds = prototype_set.classify(embeddings[query_index], distance)
        accuracies.append(accuracy(preds, labels[query_index]))
    return accuracies


def in_context_eval(params: EncoderParams, dataset: Dataset, ways: int = 5, shots: int = 3,
                    num_tasks: int = 500, seed: int = 0, distance: str = "euclidean",
                    split: Optional[str] = None) -> EvalReport:
    """
    k-shot prototype classification averaged over num_tasks episodes.

    Each episode samples `ways` classes, `shots` support instances per class
    whose mean embedding is the class prototype, and classifies every other
    instance of those classes by nearest prototype.

    Raises:
        SamplingError: a class has fewer than shots + 1 instances
    """
    tasks, labels = _task_pool(dataset, split)
    members = _members_by_class(labels)
    for c, pool in members.items():
        if pool.shape[0] < shots + 1:
            raise SamplingError(f"class {c} has {pool.shape[0]} instance(s), needs at least {shots + 1}",
                                class_id=c)
    ways = _clamp_ways(ways, len(members), "incontext")
    embeddings = embed_tasks(params, dataset.graph, tasks)
    accuracies = _run_episodes(embeddings, labels, members, ways, num_tasks, seed, distance,
                               shots=shots, desc="In-context")
    report = EvalReport("incontext", "accuracy", float(np.mean(accuracies)), num_tasks, seed)
    logger.info(f"In-context {ways}-way {shots}-shot on {dataset.name}: {report.line()}")
    return report


def zero_shot_eval(params: EncoderParams, dataset: Dataset, class_vectors=None, num_tasks: int = 500,
                   ways: int = 5, seed: int = 0, distance: str = "euclidean",
                   split: Optional[str] = None) -> EvalReport:
    """Episode protocol of in_context_eval with class vectors as prototypes and no support set"""
    class_vectors = dataset.class_vectors if class_vectors is None else np.asarray(class_vectors, dtype=np.float64)
    if class_vectors is None:
        raise ConfigError(f"dataset {dataset.name} has no class vectors for zero-shot evaluation")
    if class_vectors.ndim != 2 or class_vectors.shape[1] != params.hidden_dim:
        raise ConfigError(f"class vector width {class_vectors.shape[-1]} does not match "
                          f"embedding dim {params.hidden_dim}")
    tasks, labels = _task_pool(dataset, split)
    members = _members_by_class(labels)
    if max(members) >= class_vectors.shape[0]:
        raise ConfigError(f"no class vector for class {max(members)}")

    ways = _clamp_ways(ways, len(members), "zeroshot")
    embeddings = embed_tasks(params, dataset.graph, tasks)
    accuracies = _run_episodes(embeddings, labels, members, ways, num_tasks, seed, distance,
                               class_vectors=class_vectors, desc="Zero-shot")
    report = EvalReport("zeroshot", "accuracy", float(np.mean(accuracies)), num_tasks, seed)
    logger.info(f"Zero-shot {ways}-way on {dataset.name}: {report.line()}")
    return report
