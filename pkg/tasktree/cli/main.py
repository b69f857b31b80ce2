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
Command dispatcher.

    python -m tasktree synth --seed 7 --out outputs/synth
    python -m tasktree pretrain --config configs/desk.yaml
    python -m tasktree eval --config configs/desk.yaml --checkpoint outputs/desk/general.ckpt \
        --protocol incontext --ways 5 --shots 3 --tasks 500
    python -m tasktree verify --suite stability --trials 200 --seed 7

Exit codes: 0 success, 1 validation failure, 2 numeric failure, 64 usage error.
"""

import dataclasses
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Tuple

from tasktree.cli.bench import bench
from tasktree.cli.cli_parser import parse_args
from tasktree.config.logger_config import create_run_logger, get_global_logger, setup_logging
from tasktree.config.run_config import RunConfig
from tasktree.data.synthetic import make_bench_graph, synth
from tasktree.errors import EXIT_OK, EXIT_VALIDATION, ConfigError, TaskTreeError, UsageError, exit_code_for
from tasktree.evaluation.protocols import finetune, in_context_eval, zero_shot_eval
from tasktree.graph.core import align_features
from tasktree.graph.dataset import Dataset, load_dataset
from tasktree.model.checkpoint import load_checkpoint, save_checkpoint
from tasktree.model.encoder import EncoderParams, init_params
from tasktree.theory.suites import run_suite
from tasktree.train.pretrain import pretrain
from tasktree.train.specialize import run_sft
from tasktree.utils.results_reporter import (ResultType, RunResult, format_duration, generate_result_report,
                                             generate_summary_report)

logger = get_global_logger(__name__)

CommandResult = Tuple[List[str], bool]


def _require_path(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} {path} does not exist")
    return path


def _override(section, **changes):
    """Copy of a config section with the given non-None values (re-validated)"""
    changes = {k: v for k, v in changes.items() if v is not None}
    return dataclasses.replace(section, **changes) if changes else section


def build_run_config(args) -> RunConfig:
    """Config file values with command-line flags on top"""
    if args.config is not None:
        run_cfg = RunConfig.from_yaml(str(_require_path(args.config, "config file")))
    else:
        run_cfg = RunConfig()

    if args.seed is not None:
        run_cfg.sync_seed(args.seed)
    if run_cfg.seed is None:
        raise UsageError("a seed is required (--seed or 'seed:' in the config)")
    if args.out is not None:
        run_cfg.out_dir = str(args.out)
    if args.datasets:
        run_cfg.datasets = [str(p) for p in args.datasets]
    if args.target is not None:
        run_cfg.target_dataset = str(args.target)
    if args.checkpoint is not None:
        run_cfg.checkpoint = str(args.checkpoint)
    if args.svd_dim is not None:
        if args.svd_dim < 1:
            raise ConfigError(f"svd_dim must be positive, got {args.svd_dim}")
        run_cfg.svd_dim = args.svd_dim

    run_cfg.encoder = _override(run_cfg.encoder, hidden_dim=args.hidden, num_layers=args.layers)
    run_cfg.eval = _override(run_cfg.eval, protocol=args.protocol, ways=args.ways, shots=args.shots,
                             num_tasks=args.tasks, distance=args.distance)
    run_cfg.verify = _override(run_cfg.verify, suite=args.suite, trials=args.trials)
    run_cfg.pretrain = _override(run_cfg.pretrain, lam=args.lam)

    # --epochs / --lr address the optimizer of the selected command
    section = {"pretrain": "pretrain", "specialize": "sft", "eval": "eval"}.get(args.command)
    if section is not None:
        setattr(run_cfg, section, _override(getattr(run_cfg, section), epochs=args.epochs, learning_rate=args.lr))
    return run_cfg


def load_datasets(run_cfg: RunConfig) -> List[Dataset]:
    if not run_cfg.datasets:
        raise UsageError("no dataset given (--dataset or 'datasets:' in the config)")
    datasets = [load_dataset(_require_path(p, "dataset")) for p in run_cfg.datasets]
    if run_cfg.svd_dim is not None:
        graphs = align_features([d.graph for d in datasets], run_cfg.svd_dim)
        datasets = [dataclasses.replace(d, graph=g) for d, g in zip(datasets, graphs)]
    return datasets


def load_target(run_cfg: RunConfig) -> Dataset:
    """The target dataset, or the first configured dataset"""
    path = run_cfg.target_dataset or (run_cfg.datasets[0] if run_cfg.datasets else None)
    dataset = load_dataset(_require_path(path, "target dataset"))
    if run_cfg.svd_dim is not None:
        dataset = dataclasses.replace(dataset, graph=align_features([dataset.graph], run_cfg.svd_dim)[0])
    return dataset


def load_encoder(run_cfg: RunConfig, feature_dim: int) -> EncoderParams:
    params, _ = load_checkpoint(_require_path(run_cfg.checkpoint, "checkpoint"), expected_input_dim=feature_dim)
    return params


def _write_lines(path: Path, lines: List[str]):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{line}\n" for line in lines))


def cmd_synth(run_cfg: RunConfig, run_logger) -> CommandResult:
    paths = synth(run_cfg.synth, run_cfg.seed, run_cfg.out_dir, run_cfg.encoder)
    for name, path in paths.items():
        run_logger.info(f"Wrote bundle {name} to {path}")
    return [f"{name}: {path}" for name, path in paths.items()], True


def cmd_pretrain(run_cfg: RunConfig, run_logger) -> CommandResult:
    datasets = load_datasets(run_cfg)
    start = None
    if run_cfg.checkpoint is not None:
        start = load_encoder(run_cfg, datasets[0].graph.feature_dim)
        run_logger.info(f"Resuming from {run_cfg.checkpoint}")
    result = pretrain(datasets, run_cfg.pretrain, run_cfg.corruption, run_cfg.encoder, params=start)

    out = Path(run_cfg.out_dir)
    save_checkpoint(out / "general.ckpt", result.params)
    _write_lines(out / "pretrain_loss.txt", result.log_lines())
    for line in result.log_lines():
        run_logger.info(f"epoch recon kl total: {line}")

    lines = [f"datasets: {', '.join(d.name for d in datasets)}",
             f"checkpoint: {out / 'general.ckpt'}",
             f"loss log: {out / 'pretrain_loss.txt'}"]
    if result.log:
        first, last = result.log[0], result.log[-1]
        lines.append(f"recon {first.recon:.6f} -> {last.recon:.6f}, kl {first.kl:.6f} -> {last.kl:.6f}")
    return lines, True


def cmd_specialize(run_cfg: RunConfig, run_logger) -> CommandResult:
    dataset = load_target(run_cfg)
    params = load_encoder(run_cfg, dataset.graph.feature_dim)
    result = run_sft(params, dataset, run_cfg.sft)

    out = Path(run_cfg.out_dir)
    save_checkpoint(out / "specialized.ckpt", result.params)
    loss_lines = [f"{epoch} {loss:.17g}" for epoch, loss in enumerate(result.losses, 1)]
    _write_lines(out / "sft_loss.txt", loss_lines)
    run_logger.info(f"SFT on {dataset.name}: {len(result.losses)} epoch(s)")

    lines = [f"target: {dataset.name}", f"checkpoint: {out / 'specialized.ckpt'}"]
    if result.losses:
        lines.append(f"sft loss {result.losses[0]:.6f} -> {result.losses[-1]:.6f}")
    return lines, True


def cmd_eval(run_cfg: RunConfig, run_logger) -> CommandResult:
    dataset = load_target(run_cfg)
    params = load_encoder(run_cfg, dataset.graph.feature_dim)
    cfg = run_cfg.eval
    out = Path(run_cfg.out_dir)

    if cfg.protocol == "finetune":
        result = finetune(params, dataset, cfg.epochs, cfg.learning_rate, run_cfg.seed,
                          patience=cfg.patience, weight_decay=cfg.weight_decay)
        save_checkpoint(out / "finetuned.ckpt", result.params, result.head)
        report = result.report
        run_logger.info(f"Best validation epoch: {result.best_epoch}")
    elif cfg.protocol == "incontext":
        report = in_context_eval(params, dataset, ways=cfg.ways, shots=cfg.shots, num_tasks=cfg.num_tasks,
                                 seed=run_cfg.seed, distance=cfg.distance)
    else:
        report = zero_shot_eval(params, dataset, num_tasks=cfg.num_tasks, ways=cfg.ways,
                                seed=run_cfg.seed, distance=cfg.distance)

    _write_lines(out / "eval_report.txt", [report.line()])
    run_logger.info(report.line())
    return [f"dataset: {dataset.name}", report.line()], True


def cmd_verify(run_cfg: RunConfig, run_logger) -> CommandResult:
    result = run_suite(run_cfg)
    _write_lines(Path(run_cfg.out_dir) / f"verify_{result.suite}.txt", result.lines())
    for line in result.lines():
        run_logger.info(line)
    generate_summary_report(f"verify {result.suite}", len(result.trials), result.passed, result.failed, logger)
    return list(result.summary), result.ok


def cmd_bench(run_cfg: RunConfig, run_logger) -> CommandResult:
    cfg = run_cfg.bench
    if run_cfg.datasets:
        graph = load_datasets(run_cfg)[0].graph
    else:
        graph = make_bench_graph(cfg, run_cfg.seed)
    if cfg.batch_size > graph.num_nodes:
        raise ConfigError(f"bench batch {cfg.batch_size} exceeds the {graph.num_nodes} graph nodes")
    params = init_params(graph.feature_dim, run_cfg.encoder.hidden_dim, cfg.hops, run_cfg.seed,
                         activation=run_cfg.encoder.activation, dropout=0.0)
    report = bench(graph, params, cfg, run_cfg.seed)

    _write_lines(Path(run_cfg.out_dir) / "bench_report.txt", report.lines())
    for line in report.lines():
        run_logger.info(line)
    return report.lines(), True


COMMANDS: Dict[str, Callable[[RunConfig, object], CommandResult]] = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "specialize": cmd_specialize,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def run(argv=None) -> int:
    """Parse argv, run one command and return its exit code"""
    start = time.perf_counter()
    try:
        args = parse_args(argv)
        run_cfg = build_run_config(args)
    except TaskTreeError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return exit_code_for(e)

    run_name = args.command if args.command != "verify" else f"verify-{run_cfg.verify.suite}"
    with create_run_logger(run_name, run_cfg.out_dir) as (run_logger, log_path):
        run_logger.info(f"Command: {args.command}")
        run_logger.info(f"Run config: {dataclasses.asdict(run_cfg)}")
        try:
            lines, ok = COMMANDS[args.command](run_cfg, run_logger)
            code = EXIT_OK if ok else EXIT_VALIDATION
            result_type = ResultType.SUCCESS if ok else ResultType.FAILURE
        except TaskTreeError as e:
            run_logger.exception(f"{args.command} failed")
            lines, code, result_type = [f"{type(e).__name__}: {e}"], exit_code_for(e), ResultType.ERROR

        lines.append(f"Duration: {format_duration(time.perf_counter() - start)}")
        generate_result_report(RunResult(command=f"tasktree {args.command}", result_type=result_type,
                                         lines=lines, log_path=log_path), logger)
    return code


def main():
    setup_logging()
    sys.exit(run())


if __name__ == "__main__":
    main()
