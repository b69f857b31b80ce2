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
import os
from contextlib import contextmanager
from pathlib import Path

from tqdm import tqdm

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class TqdmConsoleHandler(logging.Handler):
    """Console handler that prints through tqdm so open progress bars are redrawn below the record"""

    def emit(self, record):
        try:
            tqdm.write(self.format(record))
        except Exception:
            self.handleError(record)


def setup_logging(level=logging.INFO):
    """
    Route every tasktree logger to the console.

    Args:
        level (int): Logging level of the root logger
    """
    root = logging.getLogger()
    root.setLevel(level)
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        handler.close()

    console_handler = TqdmConsoleHandler()
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    console_handler.setLevel(level)
    root.addHandler(console_handler)


@contextmanager
def create_run_logger(run_name, out_dir="outputs"):
    """
    Dedicated per-command logger writing ``<out_dir>/<run_name>.log``.

    The logger does not propagate, so epoch and trial records stay out of the console.

    Yields:
        Tuple: (logger_object, log_file_path)
    """
    safe_run_name = str(run_name).replace(" ", "_").replace(os.sep, "_")
    output_dir = Path(out_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    log_path = output_dir / f"{safe_run_name}.log"

    run_logger = logging.getLogger(f"tasktree.run.{safe_run_name}")
    run_logger.setLevel(logging.DEBUG)
    run_logger.propagate = False
    file_handler = logging.FileHandler(log_path, mode='w')
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    run_logger.addHandler(file_handler)
    try:
        yield run_logger, str(log_path)
    finally:
        run_logger.removeHandler(file_handler)
        file_handler.close()


def get_global_logger(name=None):
    return logging.getLogger(name or "tasktree")
