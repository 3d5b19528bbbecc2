from pathlib import Path
import logging
from app.core.cli import CommandRouter
from app.services.export_service import EXPORT_FORMATS, export_train_log
from app.services.pipeline_service import read_train_log

logger = logging.getLogger(__name__)

router = CommandRouter("export-log", help="Convert a train log to CSV or XLSX for plotting", uses_config=False)
router.argument("--log", required=True, help="Train log written by pretrain or finetune")
router.argument("--format", dest="fmt", choices=EXPORT_FORMATS, default="csv")
router.argument("--out", required=True)


@router.command
def export_log(args, config) -> int:
    content = export_train_log(read_train_log(args.log), args.fmt)
    Path(args.out).write_bytes(content)
    logger.info(f"Wrote {args.out}")
    return 0
