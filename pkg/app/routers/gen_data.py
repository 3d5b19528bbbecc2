from pathlib import Path
import logging
from app.core.cli import CommandRouter
from app.schemas.data import FrameLayout
from app.services.data_service import generate_synthetic, write_dataset

logger = logging.getLogger(__name__)

router = CommandRouter("gen-data", help="Generate the synthetic moving-shape dataset")
router.argument("--out", required=True, help="Output directory; gets train/ and test/ sub-directories")
router.argument("--split", choices=["train", "test", "both"], default="both")
router.argument("--layout", choices=["sslv", "ppm", "png"], default="sslv",
                help="One clip file per video, or one directory of numbered frames per video")


@router.command
def gen_data(args, config) -> int:
    """
    Write each requested split as clip files plus manifest.tsv.

    Point `manifest` / `test_manifest` at the printed paths to train from disk.
    """
    layout = None if args.layout == "sslv" else FrameLayout(args.layout)
    splits = ["train", "test"] if args.split == "both" else [args.split]
    for split in splits:
        records = generate_synthetic(config.synthetic, split)
        manifest = write_dataset(records, Path(args.out) / split, layout)
        print(manifest)
    return 0
