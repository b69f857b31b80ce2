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

import os
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional

import yaml

from tasktree.config.logger_config import get_global_logger
from tasktree.errors import ConfigError

config_logger = get_global_logger(__name__)

ACTIVATIONS = ("relu", "identity")
PROTOCOLS = ("finetune", "incontext", "zeroshot")
SUITES = ("stability", "encoding", "transfer", "gap")
DISTANCES = ("euclidean", "cosine")


def _check_rate(name: str, value: float, upper_inclusive: bool = True):
    ok = 0.0 <= value <= 1.0 if upper_inclusive else 0.0 <= value < 1.0
    if not ok:
        bound = "[0, 1]" if upper_inclusive else "[0, 1)"
        raise ConfigError(f"{name} must be in {bound}, got {value}")


def _check_positive(name: str, value, allow_zero: bool = False):
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value}")


# encoder architecture, full-scale defaults
@dataclass
class EncoderConfig:
    hidden_dim: int = 768
    num_layers: int = 2
    dropout: float = 0.15
    activation: str = "relu"
    head_activation: str = "relu"
    tied_weights: bool = False

    def __post_init__(self):
        _check_positive("encoder.hidden_dim", self.hidden_dim)
        _check_positive("encoder.num_layers", self.num_layers)
        _check_rate("encoder.dropout", self.dropout, upper_inclusive=False)
        for key in ("activation", "head_activation"):
            if getattr(self, key) not in ACTIVATIONS:
                raise ConfigError(f"encoder.{key} must be one of {ACTIVATIONS}, got {getattr(self, key)!r}")


@dataclass
class CorruptionConfig:
    edge_drop_rate: float = 0.2
    feature_mask_rate: float = 0.2

    def __post_init__(self):
        _check_rate("corruption.edge_drop_rate", self.edge_drop_rate)
        _check_rate("corruption.feature_mask_rate", self.feature_mask_rate)


@dataclass
class PretrainConfig:
    epochs: int = 10
    batch_size: int = 4096
    learning_rate: float = 1e-7
    weight_decay: float = 1e-8
    # regularizer weight (lambda is a keyword)
    lam: float = 10.0
    fanout: int = 10
    seed: int = 0

    def __post_init__(self):
        _check_positive("pretrain.epochs", self.epochs, allow_zero=True)
        _check_positive("pretrain.batch_size", self.batch_size)
        _check_positive("pretrain.learning_rate", self.learning_rate, allow_zero=True)
        _check_positive("pretrain.weight_decay", self.weight_decay, allow_zero=True)
        _check_positive("pretrain.lam", self.lam, allow_zero=True)
        _check_positive("pretrain.fanout", self.fanout)


@dataclass
class SFTConfig:
    epochs: int = 20
    learning_rate: float = 1e-4
    batch_size: int = 256
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        _check_positive("sft.epochs", self.epochs, allow_zero=True)
        _check_positive("sft.learning_rate", self.learning_rate, allow_zero=True)
        _check_positive("sft.batch_size", self.batch_size)
        _check_positive("sft.weight_decay", self.weight_decay, allow_zero=True)


@dataclass
class EvalConfig:
    protocol: str = "incontext"
    ways: int = 5
    shots: int = 3
    num_tasks: int = 500
    # finetune protocol
    epochs: int = 100
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    patience: int = 200
    distance: str = "euclidean"

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"eval.protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.distance not in DISTANCES:
            raise ConfigError(f"eval.distance must be one of {DISTANCES}, got {self.distance!r}")
        _check_positive("eval.ways", self.ways)
        _check_positive("eval.shots", self.shots)
        _check_positive("eval.num_tasks", self.num_tasks)
        _check_positive("eval.epochs", self.epochs, allow_zero=True)
        _check_positive("eval.patience", self.patience)


@dataclass
class VerifyConfig:
    suite: str = "stability"
    trials: int = 200
    max_layers: int = 3
    num_nodes: int = 12
    feature_dim: int = 4

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ConfigError(f"verify.suite must be one of {SUITES}, got {self.suite!r}")
        _check_positive("verify.trials", self.trials)
        _check_positive("verify.max_layers", self.max_layers)
        if self.num_nodes < 2:
            raise ConfigError(f"verify.num_nodes must be at least 2, got {self.num_nodes}")
        _check_positive("verify.feature_dim", self.feature_dim)


@dataclass
class BenchConfig:
    num_nodes: int = 5000
    avg_degree: float = 8.0
    feature_dim: int = 16
    batch_size: int = 512
    hops: int = 2
    reps: int = 5

    def __post_init__(self):
        for key in ("num_nodes", "avg_degree", "feature_dim", "batch_size", "hops", "reps"):
            _check_positive(f"bench.{key}", getattr(self, key))
        if self.batch_size > self.num_nodes:
            raise ConfigError(f"bench.batch_size ({self.batch_size}) exceeds bench.num_nodes ({self.num_nodes})")


@dataclass
class SynthConfig:
    nodes_per_class: int = 100
    num_classes: int = 2
    feature_dim: int = 16
    separation: float = 5.0
    noise_std: float = 1.0
    p_in: float = 0.1
    p_out: float = 0.01
    motif_graphs_per_class: int = 100
    # windmill blades / star arms per motif graph
    motif_size: int = 3

    def __post_init__(self):
        _check_positive("synth.nodes_per_class", self.nodes_per_class)
        if self.num_classes < 2:
            raise ConfigError(f"synth.num_classes must be at least 2, got {self.num_classes}")
        _check_positive("synth.feature_dim", self.feature_dim)
        _check_positive("synth.separation", self.separation, allow_zero=True)
        _check_positive("synth.noise_std", self.noise_std)
        _check_rate("synth.p_in", self.p_in)
        _check_rate("synth.p_out", self.p_out)
        _check_positive("synth.motif_graphs_per_class", self.motif_graphs_per_class)
        if self.motif_size < 2:
            raise ConfigError(f"synth.motif_size must be at least 2, got {self.motif_size}")
        if self.feature_dim < 2 * self.motif_size + 1:
            raise ConfigError(
                f"synth.feature_dim ({self.feature_dim}) must hold a degree one-hot up to {2 * self.motif_size}")


_SECTIONS = {
    "encoder": EncoderConfig,
    "corruption": CorruptionConfig,
    "pretrain": PretrainConfig,
    "sft": SFTConfig,
    "eval": EvalConfig,
    "verify": VerifyConfig,
    "bench": BenchConfig,
    "synth": SynthConfig,
}


def build_section(name: str, cls, values: Optional[Dict]):
    """Instantiate one config section, rejecting unknown keys by name"""
    values = dict(values or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section '{name}': {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"invalid section '{name}': {e}") from e


# main config parser
@dataclass
class RunConfig:
    seed: Optional[int] = None
    out_dir: str = "outputs"
    datasets: List[str] = field(default_factory=list)
    target_dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    svd_dim: Optional[int] = None
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    sft: SFTConfig = field(default_factory=SFTConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        self.out_dir = os.path.expanduser(self.out_dir)
        self.datasets = [os.path.expanduser(p) for p in self.datasets]
        if self.target_dataset:
            self.target_dataset = os.path.expanduser(self.target_dataset)
        if self.svd_dim is not None:
            _check_positive("svd_dim", self.svd_dim)
        if self.seed is not None:
            self.sync_seed(self.seed)

    def sync_seed(self, seed: int):
        """Propagate the root seed into the sections that carry their own"""
        self.seed = int(seed)
        self.pretrain.seed = self.seed
        self.sft.seed = self.seed

    @classmethod
    def from_dict(cls, config_dict: Optional[Dict]) -> 'RunConfig':
        """ create a RunConfig object from a dictionary """
        config_dict = dict(config_dict or {})
        top_level = {f.name for f in fields(cls)} - set(_SECTIONS)
        unknown = sorted(set(config_dict) - top_level - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")

        kwargs = {key: config_dict[key] for key in top_level if key in config_dict}
        for name, section_cls in _SECTIONS.items():
            kwargs[name] = build_section(name, section_cls, config_dict.get(name))
        if isinstance(kwargs.get("datasets"), str):
            kwargs["datasets"] = [kwargs["datasets"]]
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, file_path: str) -> 'RunConfig':
        """ create a RunConfig object from a yaml file """
        with open(file_path, 'r') as f:
            try:
                config_dict = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError(f"cannot parse config file {file_path}: {e}") from e
        if config_dict is not None and not isinstance(config_dict, dict):
            raise ConfigError(f"config file {file_path} must contain a mapping")
        config_logger.debug(f"Loaded run config from {file_path}")
        return cls.from_dict(config_dict)
