from typing import Callable, List, Optional, Sequence, Tuple, Type
from pydantic import ValidationError
from app.core.cli import UsageParser
from app.core.config import dump_run_config, get_settings, load_run_config, parse_overrides
from app.core.error_handlers import (
    generic_exception_handler,
    toolkit_exception_handler,
    usage_error_handler,
    validation_exception_handler,
)
from app.core.exceptions import EXIT_OK, EXIT_USAGE, ToolkitError, UsageError
from app.core.logging_config import get_logger, set_log_level
from app.core.metrics import reset_metrics
from app.routers import evaluate, experiment, export_log, finetune, gen_data, pretrain, transform_preview, verify
from app.services.tensor_service import set_float64

logger = get_logger(__name__)

ROUTERS = [
    gen_data.router,
    pretrain.router,
    finetune.router,
    evaluate.router,
    transform_preview.router,
    verify.router,
    export_log.router,
    experiment.router,
]

# checked in order; the first matching type handles the error
EXCEPTION_HANDLERS: List[Tuple[Type[BaseException], Callable[..., int]]] = [
    (UsageError, usage_error_handler),
    (ValidationError, validation_exception_handler),
    (ToolkitError, toolkit_exception_handler),
    (Exception, generic_exception_handler),
]


def create_parser() -> UsageParser:
    parser = UsageParser(prog="mtvideo",
                         description="Self-supervised video features from multi-transformation classification")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for router in ROUTERS:
        router.register(subparsers)
    return parser


def effective_config(args, router):
    """Config file, then --set overrides, then --seed; echoed to the log in .cfg syntax."""
    overrides = parse_overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    config = load_run_config(args.config, overrides, router.config_defaults)
    logger.info(f"Effective configuration:\n{dump_run_config(config)}")
    return config


def handle_exception(exc: Exception) -> int:
    for exc_type, handler in EXCEPTION_HANDLERS:
        if isinstance(exc, exc_type):
            return handler(exc)
    return generic_exception_handler(exc)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run one command and return its exit code."""
    metrics = reset_metrics()
    settings = None
    try:
        settings = get_settings()
        set_log_level(settings.LOG_LEVEL)
        set_float64(settings.FLOAT64)
        args = create_parser().parse_args(argv)
        router = args.router
        config = effective_config(args, router) if router.uses_config else None
        code = router.handler(args, config)
    except SystemExit as e:
        # --help
        code = e.code if isinstance(e.code, int) else (EXIT_OK if e.code is None else EXIT_USAGE)
    except Exception as e:
        code = handle_exception(e)
    if settings is not None:
        try:
            metrics.write(settings.METRICS_PATH)
        except OSError as e:
            logger.error(f"Cannot write metrics to {settings.METRICS_PATH}: {e}")
    return code
