import logging
from app.core.cli import CommandRouter
from app.schemas.verification import SUITES
from app.services.verify_service import TRANSFORM_CLIPS, raise_on_failure, run_verification

logger = logging.getLogger(__name__)

router = CommandRouter("verify", help="Run the transform, gradient, oracle and shape self-checks", uses_config=False)
router.argument("--suite", choices=("all",) + SUITES, default="all")
router.argument("--cases", type=int, default=1, help="Random cases per check")
router.argument("--clips", type=int, default=TRANSFORM_CLIPS, help="Random clips per transforms check")
router.argument("--seed", type=int, default=0)


@router.command
def verify(args, config) -> int:
    """Prints one PASS/FAIL line per check; any failure exits with code 3."""
    suites = SUITES if args.suite == "all" else (args.suite,)
    report = run_verification(suites, args.cases, args.seed, args.clips)
    for check in report.checks:
        print(f"{'PASS' if check.passed else 'FAIL'}\t{check.suite}\t{check.name}\t{check.detail}")
    raise_on_failure(report)
    logger.info(f"All {len(report.checks)} checks passed")
    return 0
