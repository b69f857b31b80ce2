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
Randomized verification suites behind `verify --suite`.

stability  stability chain on random graphs, tasks and tied encoders (gating)
encoding   mean-of-roots vs virtual-node embeddings (gating)
transfer   transfer probe ensemble, pretrained vs random encoders (diagnostic)
gap        zero-shot accuracy and distribution gap before/after SFT (diagnostic)

Trial t draws everything from substream(seed, "trials", t).
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import networkx as nx
import numpy as np
from tqdm import tqdm

from tasktree.config.run_config import RunConfig, SUITES, VerifyConfig
from tasktree.data.synthetic import make_benchmark, make_domain_a
from tasktree.errors import ConfigError
from tasktree.evaluation.protocols import zero_shot_eval
from tasktree.graph.core import Graph
from tasktree.model.encoder import EncoderParams, init_from_config, init_params
from tasktree.theory.probes import TaskSample, distribution_gap, transfer_probe
from tasktree.theory.stability import stability_check
from tasktree.train.pretrain import pretrain
from tasktree.train.specialize import specialize
from tasktree.tree.task_tree import TaskInstance, TaskKind, encode_task_trees, encode_virtual_nodes
from tasktree.utils.seeding import STREAM_TRIALS, derive_seed, substream

logger = logging.getLogger(__name__)

ENCODING_TOLERANCE = 1e-9
GATING_SUITES = ("stability", "encoding")
TASK_KINDS = (TaskKind.NODE, TaskKind.EDGE, TaskKind.GRAPH)


@dataclass
class TrialOutcome:
    index: int
    passed: bool
    line: str


@dataclass
class SuiteResult:
    suite: str
    trials: List[TrialOutcome] = field(default_factory=list)
    summary: List[str] = field(default_factory=list)

    @property
    def gating(self) -> bool:
        return self.suite in GATING_SUITES

    @property
    def passed(self) -> int:
        return sum(t.passed for t in self.trials)

    @property
    def failed(self) -> int:
        return len(self.trials) - self.passed

    @property
    def ok(self) -> bool:
        """False only when a gating suite saw a violating trial"""
        return not self.gating or self.failed == 0

    def lines(self) -> List[str]:
        return [f"{t.index} {'ok' if t.passed else 'VIOLATED'} {t.line}" for t in self.trials] + self.summary


def random_graph(rng: np.random.Generator, num_nodes: int, feature_dim: int) -> Graph:
    """G(n, p) graph with p ~ U[0.15, 0.6] and standard normal features"""
    p = rng.uniform(0.15, 0.6)
    nx_graph = nx.gnp_random_graph(num_nodes, p, seed=int(rng.integers(2 ** 31)))
    features = rng.normal(size=(num_nodes, feature_dim))
    return Graph.from_edges(num_nodes, list(nx_graph.edges()), features)


def random_task(rng: np.random.Generator, g: Graph, kind: Optional[TaskKind] = None) -> TaskInstance:
    kind = kind or TASK_KINDS[int(rng.integers(len(TASK_KINDS)))]
    if kind is TaskKind.NODE:
        return TaskInstance.node(int(rng.integers(g.num_nodes)), 0)
    if kind is TaskKind.EDGE:
        edges = g.edge_list()
        edges = edges[edges[:, 0] != edges[:, 1]]
        if edges.shape[0] > 0:
            u, v = edges[int(rng.integers(edges.shape[0]))]
            return TaskInstance.edge(int(u), int(v), 1)
        u, v = rng.choice(g.num_nodes, size=2, replace=False)
        return TaskInstance.edge(int(u), int(v), 0)
    size = int(rng.integers(1, g.num_nodes + 1))
    return TaskInstance.graph(np.sort(rng.choice(g.num_nodes, size=size, replace=False)), 0)


def random_tied_params(rng: np.random.Generator, dim: int, depth: int, activation: str = "relu") -> EncoderParams:
    """Tied, dropout-free encoder whose layer weights are rescaled so C2 lands on both sides of 1"""
    params = init_params(dim, dim, depth, seed=int(rng.integers(2 ** 31)), activation=activation,
                         tied_weights=True, dropout=0.0)
    w1, w2 = params.layer(0)
    return params.replace_tensors({"layer0.W1": w1 * rng.uniform(0.5, 2.0),
                                   "layer0.W2": w2 * rng.uniform(0.5, 2.0)})


def run_stability_suite(cfg: VerifyConfig, seed: int, activation: str = "relu") -> SuiteResult:
    result = SuiteResult("stability")
    for trial in tqdm(range(cfg.trials), desc="Stability", unit="trial", leave=False):
        rng = substream(seed, STREAM_TRIALS, trial)
        depth = 1 + trial % cfg.max_layers
        n1, n2 = (int(n) for n in rng.integers(2, cfg.num_nodes + 1, size=2))
        g1, g2 = random_graph(rng, n1, cfg.feature_dim), random_graph(rng, n2, cfg.feature_dim)
        task1, task2 = random_task(rng, g1), random_task(rng, g2)
        params = random_tied_params(rng, cfg.feature_dim, depth, activation)
        report = stability_check(g1, task1, g2, task2, params, depth)
        result.trials.append(TrialOutcome(trial, report.holds(),
                                          f"{task1.kind.value}/{task2.kind.value} {report.line()}"))
    result.summary.append(f"violations={result.failed} of {len(result.trials)} trials")
    return result


def run_encoding_suite(cfg: VerifyConfig, seed: int, hidden_dim: int = 8) -> SuiteResult:
    result = SuiteResult("encoding")
    worst = 0.0
    for trial in tqdm(range(cfg.trials), desc="Encoding", unit="trial", leave=False):
        rng = substream(seed, STREAM_TRIALS, trial)
        g = random_graph(rng, int(rng.integers(2, cfg.num_nodes + 1)), cfg.feature_dim)
        task = random_task(rng, g, TASK_KINDS[trial % len(TASK_KINDS)])
        params = init_params(cfg.feature_dim, hidden_dim, 1 + trial % cfg.max_layers,
                             seed=int(rng.integers(2 ** 31)), dropout=0.0)
        gap = float(np.max(np.abs(encode_task_trees(params, g, [task]) - encode_virtual_nodes(params, g, [task]))))
        worst = max(worst, gap)
        result.trials.append(TrialOutcome(trial, gap <= ENCODING_TOLERANCE,
                                          f"{task.kind.value} n={g.num_nodes} max_abs_diff={gap:.3e}"))
    result.summary.append(f"max discrepancy {worst:.3e} (tolerance {ENCODING_TOLERANCE:.0e})")
    return result


def run_transfer_suite(run_cfg: RunConfig, seed: int) -> SuiteResult:
    """Pretrained encoder (phi_b) against its own starting point (phi_a) on one synthetic domain per trial"""
    result = SuiteResult("transfer")
    ratios = []
    for trial in tqdm(range(run_cfg.verify.trials), desc="Transfer", unit="trial", leave=False):
        trial_seed = derive_seed(seed, STREAM_TRIALS, trial)
        dataset = make_domain_a(run_cfg.synth, trial_seed)
        phi_a = init_from_config(dataset.graph.feature_dim, run_cfg.encoder, derive_seed(trial_seed, STREAM_TRIALS))
        phi_b = pretrain([dataset], dataclasses.replace(run_cfg.pretrain, seed=trial_seed),
                         run_cfg.corruption, run_cfg.encoder, params=phi_a).params
        report = transfer_probe(phi_a, phi_b,
                                TaskSample(dataset.graph, dataset.split_tasks("train")),
                                TaskSample(dataset.graph, dataset.split_tasks("test")),
                                run_cfg.corruption, seed=trial_seed)
        ratios.append(report.ratio)
        result.trials.append(TrialOutcome(trial, report.lhs >= 0 and report.rhs >= 0, report.line()))
    fraction = result.passed / max(len(result.trials), 1)
    finite = [r for r in ratios if np.isfinite(r)]
    median = float(np.median(finite)) if finite else float("nan")
    result.summary.append(f"lhs>=0 and rhs>=0 in {fraction:.2%} of trials; median ratio {median:.4e}")
    return result


def run_gap_suite(run_cfg: RunConfig, seed: int) -> SuiteResult:
    """SFT toward domain_a: zero-shot on its test split and the gap to domain_b, before and after"""
    result = SuiteResult("gap")
    for trial in tqdm(range(run_cfg.verify.trials), desc="Gap", unit="trial", leave=False):
        trial_seed = derive_seed(seed, STREAM_TRIALS, trial)
        target, other = make_benchmark(run_cfg.synth, trial_seed, run_cfg.encoder)
        general = pretrain([target, other], dataclasses.replace(run_cfg.pretrain, seed=trial_seed),
                           run_cfg.corruption, run_cfg.encoder).params
        specialized = specialize(general, target, dataclasses.replace(run_cfg.sft, seed=trial_seed))

        data_p, data_t = TaskSample(other.graph, other.tasks), TaskSample(target.graph, target.tasks)
        readings = []
        for params in (general, specialized):
            zs = zero_shot_eval(params, target, num_tasks=run_cfg.eval.num_tasks, ways=run_cfg.eval.ways,
                                seed=trial_seed, distance=run_cfg.eval.distance, split="test")
            readings.append((zs.value, distribution_gap(params, data_p, data_t).gap))
        (zs_before, gap_before), (zs_after, gap_after) = readings
        passed = zs_after > zs_before and gap_after < gap_before
        result.trials.append(TrialOutcome(trial, passed,
                                          f"zeroshot {zs_before:.4f}->{zs_after:.4f} "
                                          f"gap {gap_before:.6e}->{gap_after:.6e}"))
    result.summary.append(f"zero-shot up and gap down in {result.passed} of {len(result.trials)} seeds")
    return result


def run_suite(run_cfg: RunConfig) -> SuiteResult:
    if run_cfg.seed is None:
        raise ConfigError("verification needs a seed")
    suite = run_cfg.verify.suite
    if suite == "stability":
        result = run_stability_suite(run_cfg.verify, run_cfg.seed)
    elif suite == "encoding":
        result = run_encoding_suite(run_cfg.verify, run_cfg.seed)
    elif suite == "transfer":
        result = run_transfer_suite(run_cfg, run_cfg.seed)
    elif suite == "gap":
        result = run_gap_suite(run_cfg, run_cfg.seed)
    else:
        raise ConfigError(f"suite must be one of {SUITES}, got {suite!r}")

    for trial in result.trials:
        if not trial.passed and result.gating:
            logger.error(f"{suite} trial {trial.index} violated: {trial.line}")
    logger.info(f"{suite}: {result.passed}/{len(result.trials)} trials passed")
    return result
