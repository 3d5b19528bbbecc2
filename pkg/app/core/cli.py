import argparse
import logging
from typing import Callable, Dict, List, Optional, Tuple
from app.core.exceptions import UsageError
from app.schemas.training import TrainConfig

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, Optional[TrainConfig]], int]


class UsageParser(argparse.ArgumentParser):
    """argparse parser that reports bad syntax as a UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(f"{message}\n{self.format_help()}")


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Run configuration file (key = value lines)")
    parser.add_argument("--seed", type=int, help="Root seed; overrides the config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key, e.g. --set scale.channel_div=8 (repeatable)")


class CommandRouter:
    """One sub-command: its flags, the config defaults it implies and its handler."""

    def __init__(self, name: str, help: str, uses_config: bool = True,
                 config_defaults: Optional[Dict[str, str]] = None):
        self.name = name
        self.help = help
        self.uses_config = uses_config
        self.config_defaults = config_defaults or {}
        self.handler: Optional[Handler] = None
        self._arguments: List[Tuple[tuple, dict]] = []

    def argument(self, *flags, **kwargs) -> "CommandRouter":
        self._arguments.append((flags, kwargs))
        return self

    def command(self, handler: Handler) -> Handler:
        self.handler = handler
        return handler

    def register(self, subparsers) -> argparse.ArgumentParser:
        if self.handler is None:
            raise RuntimeError(f"Command '{self.name}' has no handler")
        parser = subparsers.add_parser(self.name, help=self.help, description=self.help)
        if self.uses_config:
            add_config_arguments(parser)
        for flags, kwargs in self._arguments:
            parser.add_argument(*flags, **kwargs)
        parser.set_defaults(router=self)
        return parser


def checkpoint_output(flag: Optional[str], config: TrainConfig) -> str:
    path = flag or config.checkpoint_path
    if not path:
        raise UsageError("No checkpoint path: pass --out or set checkpoint_path in the config")
    return path
