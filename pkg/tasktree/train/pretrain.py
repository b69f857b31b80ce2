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

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from tasktree.config.run_config import CorruptionConfig, EncoderConfig, PretrainConfig
from tasktree.errors import ConfigError, NumericError
from tasktree.graph.core import Graph
from tasktree.graph.dataset import Dataset
from tasktree.model.encoder import (EncoderParams, GradientSet, bind, collect_gradients, encode_tasks,
                                    init_from_config)
from tasktree.model.heads import project_var
from tasktree.model.tape import Tape
from tasktree.train.objectives import LossBreakdown, pretrain_terms
from tasktree.train.optim import AdamW
from tasktree.tree.task_tree import TaskInstance
from tasktree.utils.seeding import STREAM_BATCHES, STREAM_CORRUPTION, STREAM_SAMPLING, substream

logger = logging.getLogger(__name__)


@dataclass
class ViewPair:
    """Two corrupted views of one graph plus the tasks encoded on both"""
    g_hat: Graph
    g_tilde: Graph
    tasks: List[TaskInstance]


@dataclass
class PretrainResult:
    params: EncoderParams
    log: List[LossBreakdown] = field(default_factory=list)

    def log_lines(self) -> List[str]:
        return [entry.line(epoch) for epoch, entry in enumerate(self.log, 1)]


def corrupt(g: Graph, cfg: CorruptionConfig, rng: np.random.Generator) -> Graph:
    """
    Random edge masking and attribute masking.

    Each undirected edge is dropped (both directions together) with
    probability edge_drop_rate, each feature row zeroed with probability
    feature_mask_rate. The input graph is left untouched.
    """
    edges = g.edge_list()
    keep = rng.random(edges.shape[0]) >= cfg.edge_drop_rate
    masked = rng.random(g.num_nodes) < cfg.feature_mask_rate
    features = np.where(masked[:, None], 0.0, g.features)
    return Graph.from_edges(g.num_nodes, edges[keep], features, g.graph_id_of_node)


def batch_loss_and_gradients(params: EncoderParams, views: Sequence[ViewPair], lam: float,
                             mode: str = "eval", rngs: Optional[Sequence[Tuple]] = None,
                             fanout: Optional[int] = None) -> Tuple[LossBreakdown, GradientSet]:
    """
    Pretraining loss of one mixed batch and its exact gradients.

    Args:
        params: encoder parameters
        views: one ViewPair per dataset present in the batch
        lam: regularizer weight
        mode: "train" for dropout + neighbor sampling, "eval" for the deterministic pass
        rngs: per view pair (rng_hat, rng_tilde), required in train mode
        fanout: neighbor sampling fanout (train mode)

    Returns:
        Tuple: (LossBreakdown, GradientSet)
    """
    tape = Tape()
    bound = bind(tape, params)
    hats, tildes = [], []
    for k, view in enumerate(views):
        rng_hat, rng_tilde = rngs[k] if rngs is not None else (None, None)
        hats.append(project_var(tape, bound, encode_tasks(tape, bound, params, view.g_hat, view.tasks,
                                                          mode=mode, rng=rng_hat, fanout=fanout)))
        tildes.append(project_var(tape, bound, encode_tasks(tape, bound, params, view.g_tilde, view.tasks,
                                                            mode=mode, rng=rng_tilde, fanout=fanout)))
    z_hat = tape.vstack(hats) if len(hats) > 1 else hats[0]
    z_tilde = tape.vstack(tildes) if len(tildes) > 1 else tildes[0]

    terms = pretrain_terms(tape, bound, params, z_hat, z_tilde, lam)
    terms.check_finite()
    tape.backward(terms.total)
    values = terms.values()
    breakdown = LossBreakdown(recon=values["recon"], kl=values["kl"], total=float(terms.total.value))
    return breakdown, collect_gradients(bound)


def _mixed_batches(sizes: Sequence[int], batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Global shuffle of (dataset, task) pairs so each batch mixes datasets by size"""
    pairs = np.concatenate([np.stack([np.full(n, d), np.arange(n)], axis=1) for d, n in enumerate(sizes)])
    pairs = pairs[rng.permutation(pairs.shape[0])]
    return [pairs[i:i + batch_size] for i in range(0, pairs.shape[0], batch_size)]


def pretrain(datasets: Sequence[Dataset], cfg: PretrainConfig, corruption: CorruptionConfig,
             encoder_cfg: Optional[EncoderConfig] = None,
             params: Optional[EncoderParams] = None) -> PretrainResult:
    """
    Two-view reconstruction pretraining with the domain regularizer.

    Args:
        datasets: one or more datasets sharing a feature dimension
        cfg: optimization settings (epochs, batch size, lr, decay, lam, fanout, seed)
        corruption: edge / feature masking rates for the two views
        encoder_cfg: architecture for fresh parameters (ignored when params is given)
        params: starting parameters

    Returns:
        PretrainResult: trained params and one LossBreakdown per epoch
    """
    if not datasets:
        raise ConfigError("pretraining needs at least one dataset")
    dims = {d.graph.feature_dim for d in datasets}
    if len(dims) != 1:
        raise ConfigError(f"datasets disagree on feature dim {sorted(dims)}; align them first")
    sizes = [len(d) for d in datasets]
    if sum(sizes) == 0:
        raise ConfigError("pretraining batch would be empty: datasets hold no tasks")

    if params is None:
        params = init_from_config(dims.pop(), encoder_cfg or EncoderConfig(), cfg.seed)
    result = PretrainResult(params=params)
    optimizer = AdamW(cfg.learning_rate, cfg.weight_decay)

    for epoch in tqdm(range(1, cfg.epochs + 1), desc="Pretraining", unit="epoch", leave=False):
        batches = _mixed_batches(sizes, cfg.batch_size, substream(cfg.seed, STREAM_BATCHES, epoch))
        totals = np.zeros(3)
        for b, batch in enumerate(batches):
            views, rngs = [], []
            for d in np.unique(batch[:, 0]):
                dataset = datasets[d]
                tasks = [dataset.tasks[i] for i in batch[batch[:, 0] == d, 1]]
                views.append(ViewPair(
                    g_hat=corrupt(dataset.graph, corruption, substream(cfg.seed, STREAM_CORRUPTION, epoch, b, d, 0)),
                    g_tilde=corrupt(dataset.graph, corruption, substream(cfg.seed, STREAM_CORRUPTION, epoch, b, d, 1)),
                    tasks=tasks))
                rngs.append((substream(cfg.seed, STREAM_SAMPLING, epoch, b, d, 0),
                             substream(cfg.seed, STREAM_SAMPLING, epoch, b, d, 1)))
            try:
                breakdown, grads = batch_loss_and_gradients(params, views, cfg.lam, mode="train",
                                                            rngs=rngs, fanout=cfg.fanout)
            except NumericError as e:
                logger.error(f"Pretraining aborted at epoch {epoch} batch {b}: {e} (term: {e.term})")
                raise
            params = params.replace_tensors(optimizer.step(params.tensors(), grads.grads))
            totals += len(batch) * np.array([breakdown.recon, breakdown.kl, breakdown.total])

        recon, kl, total = totals / sum(sizes)
        entry = LossBreakdown(recon=float(recon), kl=float(kl), total=float(total))
        result.log.append(entry)
        logger.info(f"epoch {epoch}: recon={entry.recon:.6f} kl={entry.kl:.6f} total={entry.total:.6f}")

    result.params = params
    return result
