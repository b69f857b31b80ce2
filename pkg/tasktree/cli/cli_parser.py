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

import argparse
from pathlib import Path

from tasktree.config.run_config import DISTANCES, PROTOCOLS, SUITES
from tasktree.errors import UsageError

COMMANDS = ("pretrain", "specialize", "eval", "verify", "bench", "synth")


class TaskTreeArgumentParser(argparse.ArgumentParser):
    """argparse parser that raises UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


CONFIG_EPILOG = ('Run configs are sectioned YAML rather than flat "key = value" lines: top-level seed, out_dir, '
                 'datasets and target_dataset, then one mapping per section (encoder, corruption, pretrain, sft, '
                 'eval, verify, bench, synth) holding the same keys. See configs/desk.yaml.')


def create_parser():
    parser = TaskTreeArgumentParser(
        prog='tasktree',
        description='Task-tree graph pretraining: pretrain, specialize, evaluate, verify and benchmark.',
        epilog=CONFIG_EPILOG,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )

    parser.add_argument('command', choices=COMMANDS,
                        help='Pipeline to run'
    )

    # -- run configuration --
    parser.add_argument('--config', type=Path, default=None,
                        help='Sectioned YAML run config (not key = value); flags override its values'
    )
    parser.add_argument('--seed', type=int, default=None,
                        help='Root seed (mandatory, here or in the config)'
    )
    parser.add_argument('--out', type=Path, default=None,
                        help='Output directory for checkpoints, reports and logs'
    )

    # -- inputs --
    parser.add_argument('--dataset', dest='datasets', action='append', default=None, metavar='DIR',
                        help='Dataset bundle directory (repeatable); replaces the config list'
    )
    parser.add_argument('--target', type=Path, default=None, metavar='DIR',
                        help='Target dataset for specialize / eval (default: first dataset)'
    )
    parser.add_argument('--checkpoint', type=Path, default=None,
                        help='Encoder checkpoint to start from'
    )
    parser.add_argument('--svd-dim', type=int, default=None, metavar='K',
                        help='Project every dataset onto K SVD components before use'
    )

    # -- model / optimization --
    parser.add_argument('--hidden', type=int, default=None,
                        help='Encoder hidden dimension'
    )
    parser.add_argument('--layers', type=int, default=None,
                        help='Number of message-passing layers'
    )
    parser.add_argument('--epochs', type=int, default=None,
                        help='Epochs for the selected command (pretrain, specialize or finetune)'
    )
    parser.add_argument('--lr', type=float, default=None,
                        help='Learning rate for the selected command'
    )
    parser.add_argument('--lambda', dest='lam', type=float, default=None,
                        help='Domain regularizer weight'
    )

    # -- evaluation --
    parser.add_argument('--protocol', choices=PROTOCOLS, default=None,
                        help='Evaluation protocol'
    )
    parser.add_argument('--ways', type=int, default=None,
                        help='Classes per episode'
    )
    parser.add_argument('--shots', type=int, default=None,
                        help='Support instances per class'
    )
    parser.add_argument('--tasks', type=int, default=None,
                        help='Number of episodes'
    )
    parser.add_argument('--distance', choices=DISTANCES, default=None,
                        help='Prototype distance'
    )

    # -- verification --
    parser.add_argument('--suite', choices=SUITES, default=None,
                        help='Verification suite'
    )
    parser.add_argument('--trials', type=int, default=None,
                        help='Randomized trials (seeds for the transfer and gap suites)'
    )

    return parser


def parse_args(argv=None):
    return create_parser().parse_args(argv)
