"""Multi-seed transfer and single-transform ablation studies."""
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import numpy as np
from app.core.exceptions import InvalidParameterError
from app.schemas.data import VideoRecord
from app.schemas.training import ExperimentRow, ExperimentSummary, Phase, TrainConfig
from app.schemas.transforms import TransformKind
from app.services import pipeline_service
from app.services.checkpoint_service import restore_network
from app.services.network_service import Network
from app.services.tensor_service import Rng

logger = logging.getLogger(__name__)


def derive_downstream(config: TrainConfig) -> TrainConfig:
    """Same run settings with phase = downstream and the downstream default learning rate."""
    data = config.model_dump()
    data.update(phase=Phase.DOWNSTREAM.value, lr=None)
    return TrainConfig.model_validate(data)


def _with(config: TrainConfig, **changes) -> TrainConfig:
    data = config.model_dump()
    data.update(changes)
    return TrainConfig.model_validate(data)


def _evaluate(net: Network, config: TrainConfig, test_set: Sequence[VideoRecord]) -> float:
    result = pipeline_service.evaluate_dataset(net, test_set, config.scale.frames, config.scale.crop,
                                               config.short_edge, config.eval_stride)
    return result.accuracy


def _finetune_top1(downstream: TrainConfig, train_set, test_set, init: Optional[Network], rng: Rng) -> float:
    checkpoint, _ = pipeline_service.finetune(downstream, train_set, init, rng.child("finetune"))
    return _evaluate(restore_network(checkpoint), downstream, test_set)


def _pretrained_top1(pretext: TrainConfig, downstream: TrainConfig, train_set, test_set, rng: Rng,
                     finetune_rng: Optional[Rng] = None) -> float:
    """Pretrain on `rng`; fine-tune on `finetune_rng` (default `rng`) so variants can share a data stream."""
    checkpoint, _ = pipeline_service.pretrain(pretext, train_set, rng.child("pretrain"))
    net = pipeline_service.transfer_weights(checkpoint, pipeline_service.num_actions_of(train_set),
                                            rng.child("transfer"))
    return _finetune_top1(downstream, train_set, test_set, net, rng if finetune_rng is None else finetune_rng)


def _summarise(rows: List[ExperimentRow]) -> Tuple[Dict[str, float], Dict[str, float]]:
    by_variant: Dict[str, List[float]] = {}
    for row in rows:
        by_variant.setdefault(row.variant, []).append(row.top1)
    means = {variant: float(np.mean(v)) for variant, v in by_variant.items()}
    ranges = {variant: float(np.max(v) - np.min(v)) for variant, v in by_variant.items()}
    return means, ranges


def _load(pretext: TrainConfig):
    return pipeline_service.load_dataset(pretext, "train"), pipeline_service.load_dataset(pretext, "test")


def transfer_study(pretext: TrainConfig, seeds: Sequence[int],
                   downstream: Optional[TrainConfig] = None) -> ExperimentSummary:
    """Pretrain-then-finetune against random init per seed; both fine-tunes share settings and data order."""
    if not seeds:
        raise InvalidParameterError("transfer_study needs at least one seed")
    downstream = downstream or derive_downstream(pretext)
    train_set, test_set = _load(pretext)
    rows = []
    for seed in seeds:
        rng = Rng(seed)
        p, d = _with(pretext, seed=seed), _with(downstream, seed=seed)
        pretrained = _pretrained_top1(p, d, train_set, test_set, rng)
        scratch = _finetune_top1(d, train_set, test_set, None, rng)
        rows += [ExperimentRow(seed=seed, variant="pretrained", top1=pretrained),
                 ExperimentRow(seed=seed, variant="scratch", top1=scratch)]
        logger.info(f"Seed {seed}: pretrained {pretrained:.4f} vs scratch {scratch:.4f}")
    means, ranges = _summarise(rows)
    verdict = means["pretrained"] >= means["scratch"]
    return ExperimentSummary(kind="transfer", rows=rows, means=means, ranges=ranges, verdict=verdict,
                             notes="pretrained >= scratch" if verdict else "pretrained < scratch")


def ablation_study(pretext: TrainConfig, seeds: Sequence[int], kinds: Optional[Sequence[TransformKind]] = None,
                   downstream: Optional[TrainConfig] = None) -> ExperimentSummary:
    """Downstream top-1 after each single-transform pretext and after the combined pretext."""
    if not seeds:
        raise InvalidParameterError("ablation_study needs at least one seed")
    kinds = sorted(kinds or pretext.allowed)
    downstream = downstream or derive_downstream(pretext)
    train_set, test_set = _load(pretext)
    variants = [(kind.slug, [kind]) for kind in kinds] + [("multi", list(pretext.allowed))]
    rows = []
    for seed in seeds:
        rng = Rng(seed)
        d = _with(downstream, seed=seed)
        for variant, allowed in variants:
            p = _with(pretext, seed=seed, allowed=[k.slug for k in allowed])
            top1 = _pretrained_top1(p, d, train_set, test_set, rng.child(variant), rng)
            rows.append(ExperimentRow(seed=seed, variant=variant, top1=top1))
            logger.info(f"Seed {seed}: {variant} pretext -> top-1 {top1:.4f}")
    means, ranges = _summarise(rows)
    single_median = float(np.median([means[kind.slug] for kind in kinds]))
    verdict = means["multi"] >= single_median
    return ExperimentSummary(kind="ablation", rows=rows, means=means, ranges=ranges, verdict=verdict,
                             notes=f"median single-transform top-1 {single_median:.4f}")
