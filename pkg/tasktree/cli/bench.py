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
Task-tree vs ego-subgraph pipeline timing.

Both pipelines see the same root batch in every repetition:

    subgraph   extract the `hops`-hop ego graph of every root, encode each
               ego graph separately and read the root row
    task-tree  append one virtual node per root (augmentation only), encode
               the graph once and pool the relevant rows

Phase times are medians over repetitions.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import psutil
from tqdm import tqdm

from tasktree.config.run_config import BenchConfig
from tasktree.graph.core import Graph
from tasktree.model.encoder import EncoderParams, forward
from tasktree.tree.task_tree import (TaskInstance, augment_with_task_nodes, encode_task_trees,
                                     extract_ego_subgraph)
from tasktree.utils.seeding import STREAM_SAMPLING, substream

logger = logging.getLogger(__name__)

PHASES = ("sampling", "extraction", "encoding")
PIPELINES = ("subgraph", "tasktree")


@dataclass
class PipelineTiming:
    phases: Dict[str, List[float]] = field(default_factory=lambda: {p: [] for p in PHASES})
    rss_growth: List[int] = field(default_factory=list)

    def median(self, phase: str) -> float:
        return float(np.median(self.phases[phase]))

    @property
    def total(self) -> float:
        return sum(self.median(p) for p in PHASES)


@dataclass
class BenchReport:
    timings: Dict[str, PipelineTiming]
    reps: int
    batch_size: int
    hops: int
    # max |subgraph - task-tree| root embedding difference
    agreement: float = 0.0

    def lines(self) -> List[str]:
        out = [f"reps={self.reps} batch={self.batch_size} hops={self.hops}",
               "pipeline sampling_s extraction_s encoding_s total_s rss_growth_mb"]
        for name in PIPELINES:
            t = self.timings[name]
            rss = max(t.rss_growth, default=0) / 2 ** 20
            out.append(f"{name} {t.median('sampling'):.6f} {t.median('extraction'):.6f} "
                       f"{t.median('encoding'):.6f} {t.total:.6f} {rss:.2f}")
        out.append(f"speedup {self.speedup:.2f}x, root embedding agreement {self.agreement:.3e}")
        return out

    @property
    def speedup(self) -> float:
        tree = self.timings["tasktree"].total
        return self.timings["subgraph"].total / tree if tree > 0 else float("inf")


def _sample_roots(g: Graph, batch_size: int, seed: int, rep: int) -> np.ndarray:
    return np.sort(substream(seed, STREAM_SAMPLING, rep).choice(g.num_nodes, size=batch_size, replace=False))


def _subgraph_pipeline(params: EncoderParams, g: Graph, roots: np.ndarray, hops: int, timing: PipelineTiming):
    extracted = []
    start = time.perf_counter()
    for root in roots:
        extracted.append(extract_ego_subgraph(g, [root], hops, return_nodes=True))
    timing.phases["extraction"].append(time.perf_counter() - start)

    start = time.perf_counter()
    rows = [forward(params, sub)[np.searchsorted(nodes, root)] for (sub, nodes), root in zip(extracted, roots)]
    timing.phases["encoding"].append(time.perf_counter() - start)
    return np.vstack(rows)


def _tasktree_pipeline(params: EncoderParams, g: Graph, roots: np.ndarray, timing: PipelineTiming):
    tasks = [TaskInstance.node(int(v), 0) for v in roots]
    start = time.perf_counter()
    augment_with_task_nodes(g, tasks)
    timing.phases["extraction"].append(time.perf_counter() - start)

    start = time.perf_counter()
    embeddings = encode_task_trees(params, g, tasks)
    timing.phases["encoding"].append(time.perf_counter() - start)
    return embeddings


def bench(g: Graph, params: EncoderParams, cfg: BenchConfig, seed: int) -> BenchReport:
    """
    Time both pipelines on identical root batches.

    Args:
        g: graph to sample roots from
        params: encoder; its depth should equal cfg.hops so both pipelines see the same receptive field
        cfg: batch size, hops and repetitions
        seed: root seed; repetition r samples its roots from substream(seed, "sampling", r)

    Returns:
        BenchReport
    """
    if params.num_layers != cfg.hops:
        logger.warning(f"encoder depth {params.num_layers} differs from hops {cfg.hops}; "
                       f"root embeddings of the two pipelines will not agree")
    process = psutil.Process()
    timings = {name: PipelineTiming() for name in PIPELINES}
    agreement = 0.0

    for rep in tqdm(range(cfg.reps), desc="Bench", unit="rep", leave=False):
        outputs = {}
        for name in PIPELINES:
            timing = timings[name]
            rss_before = process.memory_info().rss
            start = time.perf_counter()
            roots = _sample_roots(g, cfg.batch_size, seed, rep)
            timing.phases["sampling"].append(time.perf_counter() - start)
            if name == "subgraph":
                outputs[name] = _subgraph_pipeline(params, g, roots, cfg.hops, timing)
            else:
                outputs[name] = _tasktree_pipeline(params, g, roots, timing)
            timing.rss_growth.append(max(0, process.memory_info().rss - rss_before))
        agreement = max(agreement, float(np.max(np.abs(outputs["subgraph"] - outputs["tasktree"]))))

    report = BenchReport(timings=timings, reps=cfg.reps, batch_size=cfg.batch_size, hops=cfg.hops,
                         agreement=agreement)
    logger.info(f"Bench: subgraph {timings['subgraph'].total:.4f}s vs task-tree {timings['tasktree'].total:.4f}s")
    return report
