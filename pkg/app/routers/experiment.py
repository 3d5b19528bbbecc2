from pathlib import Path
import logging
from app.core.cli import CommandRouter
from app.core.exceptions import InvalidParameterError, UsageError
from app.schemas.training import Phase
from app.services.experiments_service import ablation_study, transfer_study
from app.services.transforms_service import transform_by_name

logger = logging.getLogger(__name__)

router = CommandRouter("experiment", help="Multi-seed transfer or single-transform ablation study",
                       config_defaults={"phase": Phase.PRETEXT.value})
router.argument("--kind", choices=["transfer", "ablation"], required=True)
router.argument("--seeds", default="0,1,2", help="Comma-separated seeds, one full run each")
router.argument("--transforms", help="Comma-separated slugs for the ablation (default: allowed from the config)")
router.argument("--out", help="Also write the summary as JSON to this path")


def parse_seeds(text: str):
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise UsageError("--seeds needs at least one seed")
    return seeds


@router.command
def experiment(args, config) -> int:
    """Runs the config's pretext settings; the downstream phase reuses them at the downstream learning rate."""
    if config.phase != Phase.PRETEXT:
        raise UsageError(f"experiment starts from a pretext config; the config says '{config.phase.value}'")
    seeds = parse_seeds(args.seeds)
    if args.kind == "transfer":
        summary = transfer_study(config, seeds)
    else:
        try:
            kinds = [transform_by_name(s) for s in args.transforms.split(",")] if args.transforms else None
        except InvalidParameterError as e:
            raise UsageError(e.detail)
        summary = ablation_study(config, seeds, kinds)
    text = summary.model_dump_json(indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    logger.info(f"{summary.kind} study verdict: {'holds' if summary.verdict else 'fails'} ({summary.notes})")
    return 0
