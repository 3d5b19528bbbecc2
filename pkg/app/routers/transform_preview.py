from pathlib import Path
import logging
from app.core.cli import CommandRouter
from app.core.exceptions import InvalidParameterError, UsageError
from app.schemas.transforms import ALL_TRANSFORMS, LabelMode, TransformKind, TransformLabel
from app.services.data_service import load_clip, save_clip
from app.services.tensor_service import Rng
from app.services.transforms_service import apply_specs, sample_parameters, sample_specs, transform_by_name

logger = logging.getLogger(__name__)

router = CommandRouter("transform-preview", help="Apply pretext transforms to one clip file", uses_config=False)
router.argument("--in", dest="input", required=True, help="Input .sslv clip")
router.argument("--out", required=True, help="Output .sslv clip")
router.argument("--transform", help="Transform slug; omitted = sampled as in training for --mode")
router.argument("--mode", choices=[m.value for m in LabelMode], default=LabelMode.MULTI_CLASS.value)
router.argument("--partner", help="Second clip for split_join")
router.argument("--manifest", help="Side-car manifest; one line is appended per preview")
router.argument("--seed", type=int, default=0)


def manifest_line(clip_file: str, label: TransformLabel, specs) -> str:
    spec_text = "[" + ",".join(spec.to_text() for spec in specs) + "]"
    return f"{clip_file}\t{label.mode.value}\t{label.to_text()}\t{spec_text}"


@router.command
def transform_preview(args, config) -> int:
    clip = load_clip(args.input)
    mode = LabelMode(args.mode)
    partners = [clip]
    if args.partner:
        partners.append(load_clip(args.partner))
    rng = Rng(args.seed)
    frames, square = clip.shape[0], clip.shape[1] == clip.shape[2]

    if args.transform:
        try:
            kind = transform_by_name(args.transform)
        except InvalidParameterError as e:
            raise UsageError(e.detail)
        if kind == TransformKind.SPLIT_JOIN and not args.partner:
            raise UsageError("split_join needs --partner")
        specs = [sample_parameters(kind, rng.child("specs"), frames, square=square,
                                   num_partners=len(partners), self_index=0)]
    else:
        allowed = [k for k in ALL_TRANSFORMS if args.partner or k != TransformKind.SPLIT_JOIN]
        specs = sample_specs(rng.child("specs"), mode, frames, allowed, square=square,
                             num_partners=len(partners), self_index=0)

    out, label = apply_specs(clip, specs, rng.child("apply"), mode, partners)
    save_clip(out, args.out)
    logger.info(f"Wrote {args.out} with {', '.join(s.kind.slug for s in specs) or 'no transform'}")
    if args.manifest:
        with open(args.manifest, "a", encoding="utf-8") as f:
            f.write(manifest_line(Path(args.out).name, label, specs) + "\n")
    return 0
