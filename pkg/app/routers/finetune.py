import logging
from app.core.cli import CommandRouter, checkpoint_output
from app.core.exceptions import UsageError
from app.schemas.training import Phase
from app.services.checkpoint_service import load_checkpoint, restore_network, save_checkpoint
from app.services.pipeline_service import (
    finetune as run_finetune,
    load_dataset,
    num_actions_of,
    transfer_weights,
    write_train_log,
)
from app.services.tensor_service import Rng

logger = logging.getLogger(__name__)

router = CommandRouter("finetune", help="Train action recognition, optionally from a pretext checkpoint",
                       config_defaults={"phase": Phase.DOWNSTREAM.value})
router.argument("--init", help="Starting checkpoint (default: init_checkpoint from the config; none = scratch)")
router.argument("--out", help="Checkpoint path (default: checkpoint_path from the config)")
router.argument("--log", help="Train log path (default: log_path from the config)")


@router.command
def finetune(args, config) -> int:
    """
    A pretext checkpoint gets a fresh head sized to the dataset's actions;
    a downstream checkpoint continues training as-is.
    """
    if config.phase != Phase.DOWNSTREAM:
        raise UsageError(f"finetune runs phase 'downstream'; the config says '{config.phase.value}'")
    out = checkpoint_output(args.out, config)
    dataset = load_dataset(config, "train")
    rng = Rng(config.seed)
    init_path = args.init or config.init_checkpoint
    init = None
    if init_path:
        checkpoint = load_checkpoint(init_path)
        if checkpoint.meta.phase == Phase.PRETEXT.value:
            init = transfer_weights(checkpoint, num_actions_of(dataset), rng.child("transfer"))
        else:
            init = restore_network(checkpoint)
        config = config.model_copy(update={"init_checkpoint": str(init_path)})
    else:
        logger.info("No initial checkpoint; training from random weights")
    checkpoint, log = run_finetune(config, dataset, init, rng.child("finetune"))
    save_checkpoint(checkpoint, out)
    log_path = args.log or config.log_path
    if log_path:
        write_train_log(log, log_path)
        logger.info(f"Train log written to {log_path}")
    return 0
