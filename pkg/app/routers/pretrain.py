import logging
from app.core.cli import CommandRouter, checkpoint_output
from app.core.exceptions import UsageError
from app.schemas.training import Phase
from app.services.checkpoint_service import save_checkpoint
from app.services.pipeline_service import load_dataset, pretrain as run_pretrain, write_train_log
from app.services.tensor_service import Rng

logger = logging.getLogger(__name__)

router = CommandRouter("pretrain", help="Train the multi-transformation pretext task",
                       config_defaults={"phase": Phase.PRETEXT.value})
router.argument("--out", help="Checkpoint path (default: checkpoint_path from the config)")
router.argument("--log", help="Train log path (default: log_path from the config)")


@router.command
def pretrain(args, config) -> int:
    if config.phase != Phase.PRETEXT:
        raise UsageError(f"pretrain runs phase 'pretext'; the config says '{config.phase.value}'")
    out = checkpoint_output(args.out, config)
    dataset = load_dataset(config, "train")
    checkpoint, log = run_pretrain(config, dataset, Rng(config.seed).child("pretrain"))
    save_checkpoint(checkpoint, out)
    log_path = args.log or config.log_path
    if log_path:
        write_train_log(log, log_path)
        logger.info(f"Train log written to {log_path}")
    logger.info(f"Pretext training finished in {log.wall_clock_seconds:.1f}s")
    return 0
