from __future__ import annotations

import logging
import sys
from copy import copy
from typing import Literal

import click

TRACE_LOG_LEVEL = 5

LEVEL_COLORS = {
    TRACE_LOG_LEVEL: "blue",
    logging.DEBUG: "cyan",
    logging.INFO: "green",
    logging.WARNING: "yellow",
    logging.ERROR: "red",
    logging.CRITICAL: "bright_red",
}
SUBDOMAIN_COLORS = {"B": "blue", "S": "magenta"}


class ColourizedFormatter(logging.Formatter):
    """
    Level-prefixed formatter for run and solver logs.

    * `%(levelprefix)s` is the level name padded to a fixed width, coloured when enabled.
    * `%(subdomain)s` is `"[B] "` or `"[S] "` for calls made with
      `extra={"subdomain": label}`, and empty otherwise.
    * If a log call includes an `extra={"color_message": ...}` it will be used
      for formatting the output, instead of the plain text message.
    """

    level_colors = LEVEL_COLORS
    subdomain_colors = SUBDOMAIN_COLORS

    def __init__(
        self,
        fmt: str | None = None,
        datefmt: str | None = None,
        style: Literal["%", "{", "$"] = "%",
        use_colors: bool | None = None,
    ):
        if use_colors in (True, False):
            self.use_colors = use_colors
        else:
            self.use_colors = sys.stdout.isatty()
        super().__init__(fmt=fmt, datefmt=datefmt, style=style)

    def color_level_name(self, level_name: str, level_no: int) -> str:
        color = self.level_colors.get(level_no)
        return click.style(level_name, fg=color) if color else level_name

    def subdomain_tag(self, subdomain: object) -> str:
        if not subdomain:
            return ""
        tag = f"[{subdomain}]"
        if self.use_colors:
            tag = click.style(tag, fg=self.subdomain_colors.get(str(subdomain)), bold=True)
        return tag + " "

    def formatMessage(self, record: logging.LogRecord) -> str:
        recordcopy = copy(record)
        levelname = recordcopy.levelname
        separator = " " * (8 - len(recordcopy.levelname))
        if self.use_colors:
            levelname = self.color_level_name(levelname, recordcopy.levelno)
            if "color_message" in recordcopy.__dict__:
                recordcopy.msg = recordcopy.__dict__["color_message"]
                recordcopy.__dict__["message"] = recordcopy.getMessage()
        recordcopy.__dict__["levelprefix"] = levelname + ":" + separator
        recordcopy.__dict__["subdomain"] = self.subdomain_tag(recordcopy.__dict__.get("subdomain"))
        return super().formatMessage(recordcopy)


class DefaultFormatter(ColourizedFormatter):
    pass


class SolverFormatter(ColourizedFormatter):
    """
    Renders Newton trace records, logged with the arguments
    `(subdomain, iteration, energy, gradient_norm, step_size)`.
    Any other record is formatted like `DefaultFormatter` would.
    """

    def is_trace_record(self, record: logging.LogRecord) -> bool:
        return record.levelno == TRACE_LOG_LEVEL and isinstance(record.args, tuple) and len(record.args) == 5

    def formatMessage(self, record: logging.LogRecord) -> str:
        if not self.is_trace_record(record):
            return super().formatMessage(record)
        recordcopy = copy(record)
        subdomain, iteration, energy, gradient_norm, step_size = recordcopy.args  # type: ignore[misc]
        label = f"{self.subdomain_tag(subdomain)}newton {iteration}"
        message = f"{label} energy={float(energy):.17g} gradient={float(gradient_norm):.3e} step={float(step_size):.3e}"
        recordcopy.__dict__["message"] = message
        recordcopy.__dict__.pop("color_message", None)
        return super().formatMessage(recordcopy)
