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
import re
import sys
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import List


class ResultType(Enum):
    SUCCESS = auto()
    FAILURE = auto()
    ERROR = auto()

# ANSI Color Codes


class TermColor:
    HEADER = '\033[95m'
    BLUE = '\033[94m'
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    ENDC = '\033[0m'
    BOLD = '\033[1m'
    UNDERLINE = '\033[4m'

    @staticmethod
    def colorize(text, color_code):
        """Add color to text (if supported)"""
        # Only colorize interactive terminals so log files stay plain
        if sys.stdout.isatty():
            return f"{color_code}{text}{TermColor.ENDC}"
        return text

    @staticmethod
    def success(text):
        return TermColor.colorize(text, TermColor.GREEN + TermColor.BOLD)

    @staticmethod
    def warning(text):
        return TermColor.colorize(text, TermColor.YELLOW + TermColor.BOLD)

    @staticmethod
    def error(text):
        return TermColor.colorize(text, TermColor.RED + TermColor.BOLD)

    @staticmethod
    def info(text):
        return TermColor.colorize(text, TermColor.BLUE)

    @staticmethod
    def header(text):
        return TermColor.colorize(text, TermColor.HEADER + TermColor.BOLD)

    @staticmethod
    def underline(text):
        return TermColor.colorize(text, TermColor.UNDERLINE)


def strip_ansi_codes(s) -> str:
    """Remove ANSI color codes from a string"""
    ansi_escape = re.compile(r'\x1B(?:[@-Z\\-_]|\[[0-?]*[ -/]*[@-~])')
    return ansi_escape.sub('', s)


@dataclass
class RunResult:
    """Outcome of one CLI command, rendered by generate_result_report"""
    command: str
    result_type: ResultType
    lines: List[str] = field(default_factory=list)
    log_path: str = ""


def generate_report_block(content_lines, color):
    """Generate a complete report block with borders"""
    MAX_WIDTH = 78

    max_line_len = max((len(strip_ansi_codes(str(line)))
                       for line in content_lines), default=0)
    box_width = min(MAX_WIDTH, max_line_len + 4)

    border = color(f"+{'-' * (box_width - 2)}+")

    box_lines = []
    for line in content_lines:
        line = str(line)
        visible_len = len(strip_ansi_codes(line))
        # Subtract | and the spaces on both sides
        padding_len = box_width - visible_len - 4
        if padding_len < 0:
            line = strip_ansi_codes(line)[:box_width - 7] + "..."
            padding_len = box_width - len(line) - 4

        box_lines.append(color("| ") + line + (" " * padding_len) + color(" |"))

    return [border] + box_lines + [border]


def generate_result_report(result: RunResult, logger):
    """Log a boxed report for one command result"""
    color_map = {
        ResultType.SUCCESS: TermColor.success,
        ResultType.FAILURE: TermColor.error,
        ResultType.ERROR: TermColor.error,
    }
    colorize = color_map.get(result.result_type, TermColor.info)

    if result.result_type == ResultType.SUCCESS:
        status_line = TermColor.success("✓ Passed!")
    else:
        status_line = TermColor.error("✗ Failed!")

    content_lines = [
        TermColor.header(result.command),
        "=" * 72,
        status_line,
        *[f"  {line}" for line in result.lines],
    ]
    if result.log_path:
        content_lines.extend(["", f"  Log: {TermColor.underline(result.log_path)}"])

    report = "\n".join(generate_report_block(content_lines, colorize))
    logger.info(f"\n{report}")

    level = logging.INFO if result.result_type == ResultType.SUCCESS else logging.ERROR
    if result.log_path:
        logger.log(level, f"Detailed log saved to: {TermColor.underline(result.log_path)}")


def generate_summary_report(title, total, passed, failed, logger):
    """
    Generate a trial summary report (verification suites)

    Args:
        title: Name of the suite
        total: Total number of trials
        passed: Number of trials that satisfied the check
        failed: Number of violating trials
        logger: Logger for logging the report
    """
    pass_percent = (passed / total) * 100 if total > 0 else 0

    progress_width = 50
    passed_width = int(progress_width * passed / total) if total > 0 else 0
    failed_width = progress_width - passed_width if failed > 0 else 0

    progress_bar = (
        TermColor.success('=' * passed_width) +
        TermColor.error('=' * failed_width)
    )
    progress = f"[{progress_bar}] {pass_percent:.1f}% ({passed}/{total})"

    if failed > 0:
        overall_line = f"{TermColor.error('✗')} Overall: {failed} trial(s) violated the check"
    elif total == 0:
        overall_line = f"{TermColor.warning('⚠')} Overall: No trials were executed"
    else:
        overall_line = f"{TermColor.success('✓')} Overall: All trials passed"

    content_lines = [
        "",
        TermColor.header(f"{title.upper()} SUMMARY"),
        "",
        progress,
        "",
        f"  {TermColor.success(str(passed) + ' passed')}, {TermColor.error(str(failed) + ' failed')}.",
        "",
        overall_line,
    ]

    report = "\n".join(generate_report_block(content_lines, TermColor.header))
    logger.info('\n' + report)


def format_duration(seconds: float) -> str:
    """Render a wall-clock duration given in seconds"""
    milliseconds = int(round((seconds - int(seconds)) * 1000))
    whole = int(seconds)
    if milliseconds == 1000:
        whole += 1
        milliseconds = 0
    duration_text = f"{whole}.{milliseconds:03d} s"

    if whole >= 60:
        minutes, remaining_seconds = divmod(whole, 60)
        duration_text = f"{minutes} min {remaining_seconds}.{milliseconds:03d} s"
        if minutes >= 60:
            hours, remaining_minutes = divmod(minutes, 60)
            duration_text = f"{hours} h {remaining_minutes} min {remaining_seconds}.{milliseconds:03d} s"

    return duration_text
