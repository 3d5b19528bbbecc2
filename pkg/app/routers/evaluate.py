from pathlib import Path
import logging
from app.core.cli import CommandRouter
from app.services.checkpoint_service import load_checkpoint, restore_network
from app.services.pipeline_service import evaluate_dataset, load_dataset

logger = logging.getLogger(__name__)

router = CommandRouter("eval", help="Video-level top-1 accuracy of a downstream checkpoint")
router.argument("--checkpoint", required=True, help="Downstream checkpoint to evaluate")
router.argument("--split", choices=["train", "test"], default="test")
router.argument("--out", help="Also write the result as JSON to this path")


@router.command
def evaluate(args, config) -> int:
    """Mean clip softmax per video; prints accuracy and the confusion matrix as JSON."""
    net = restore_network(load_checkpoint(args.checkpoint))
    dataset = load_dataset(config, args.split)
    result = evaluate_dataset(net, dataset, net.scale.frames, net.scale.crop, config.short_edge, config.eval_stride)
    text = result.model_dump_json(indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0
