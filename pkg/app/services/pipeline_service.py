"""Pretext training, weight transfer, fine-tuning and video-level evaluation.

Every random draw derives from the rng handed in: "split" for the hold-out,
"init"/"head" for weights, "shuffle".fork(epoch) for batch order,
"sample".fork(epoch, video) for clip offset, crop and transforms, and
"val".fork(video) for the fixed validation clips.
"""
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union
import logging
import math
import time
import numpy as np
from app.core.config import get_settings
from app.core.exceptions import (
    FormatError,
    InsufficientDataError,
    InvalidDatasetError,
    InvalidLabelError,
    InvalidParameterError,
    UsageError,
)
from app.core.metrics import get_metrics
from app.schemas.data import VideoRecord
from app.schemas.network import Checkpoint, CheckpointMeta
from app.schemas.training import (
    DataSource,
    EpochRecord,
    EvaluationResult,
    LossValue,
    Phase,
    StepRecord,
    TrainConfig,
    TrainLog,
)
from app.schemas.transforms import NUM_TRANSFORMS, LabelMode
from app.services import data_service, loss_service, network_service
from app.services.network_service import Network, backward, build_network, forward, sgd_step
from app.services.tensor_service import Rng
from app.services.transforms_service import apply_specs, class_index_map, preprocess, sample_specs

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Targets = np.ndarray
BatchFn = Callable[[List[Tuple[VideoRecord, Rng]], bool], Tuple[np.ndarray, Targets]]
LossFn = Callable[[np.ndarray, Targets], Tuple[LossValue, np.ndarray]]

# clip scorer used by evaluate_video
predict_proba = network_service.predict_proba

EVAL_CHUNK = 16


def pretext_outputs(config: TrainConfig) -> int:
    """8 classes for the full multiclass set, |allowed| + 1 when restricted, 7 bits for multilabel."""
    if config.label_mode == LabelMode.MULTI_LABEL:
        return NUM_TRANSFORMS
    return len(config.allowed) + 1


def _prepare_clip(config: TrainConfig, video: VideoRecord, rng: Rng, center: bool) -> np.ndarray:
    raw = data_service.sample_clip(video, config.scale.frames, rng.child("offset"))
    mode = "center" if center else "random"
    return preprocess(raw, config.short_edge, config.scale.crop, mode, rng.child("crop"))


def _pretext_batch(config: TrainConfig) -> BatchFn:
    index_map = class_index_map(config.allowed)

    def make(items: List[Tuple[VideoRecord, Rng]], center: bool) -> Tuple[np.ndarray, Targets]:
        clips = [_prepare_clip(config, video, rng, center) for video, rng in items]
        transformed, targets = [], []
        for j, (clip, (_, rng)) in enumerate(zip(clips, items)):
            specs = sample_specs(rng.child("specs"), config.label_mode, config.scale.frames, config.allowed,
                                 num_partners=len(clips), self_index=j)
            out, label = apply_specs(clip, specs, rng.child("apply"), config.label_mode, partners=clips)
            transformed.append(out)
            if config.label_mode == LabelMode.MULTI_LABEL:
                targets.append(label.indicator)
            else:
                targets.append(index_map[label.class_id])
        return np.stack(transformed), np.asarray(targets, dtype=np.int64)

    return make


def _downstream_batch(config: TrainConfig) -> BatchFn:
    def make(items: List[Tuple[VideoRecord, Rng]], center: bool) -> Tuple[np.ndarray, Targets]:
        clips = [_prepare_clip(config, video, rng, center) for video, rng in items]
        return np.stack(clips), np.asarray([video.label for video, _ in items], dtype=np.int64)

    return make


def _loss_fn(config: TrainConfig) -> LossFn:
    if config.phase == Phase.DOWNSTREAM:
        return loss_service.downstream_loss
    if config.label_mode == LabelMode.MULTI_LABEL:
        return loss_service.pretext_loss_multilabel
    return loss_service.pretext_loss_multiclass


def _batches(items: Sequence, size: int) -> List[List]:
    """Consecutive chunks; a trailing chunk of one clip is dropped for batch norm."""
    chunks = [list(items[i:i + size]) for i in range(0, len(items), size)]
    if chunks and len(chunks[-1]) < 2:
        logger.debug(f"Dropping trailing batch of {len(chunks[-1])} clip")
        chunks.pop()
    return chunks


def _eval_chunks(items: Sequence, size: int) -> List[List]:
    """Consecutive chunks; a trailing chunk of one clip joins the previous one so split-join has a partner."""
    chunks = [list(items[i:i + size]) for i in range(0, len(items), size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2].extend(chunks.pop())
    return chunks


def _validate(config: TrainConfig, net: Network, val_set: Sequence[VideoRecord], rng: Rng,
              make_batch: BatchFn, loss_fn: LossFn) -> Tuple[float, float, Optional[List[float]]]:
    if not val_set:
        return math.nan, math.nan, None
    mode = LabelMode.MULTI_CLASS if config.phase == Phase.DOWNSTREAM else config.label_mode
    items = [(video, rng.child("val").fork(k)) for k, video in enumerate(val_set)]
    total_loss, total_acc = 0.0, 0.0
    per_transform = np.zeros(NUM_TRANSFORMS) if mode == LabelMode.MULTI_LABEL else None
    for chunk in _eval_chunks(items, config.batch_size):
        batch, targets = make_batch(chunk, True)
        logits, _ = forward(net, batch, train=False)
        loss, _ = loss_fn(logits, targets)
        total_loss += loss.value * len(chunk)
        total_acc += loss_service.accuracy(logits, targets, mode) * len(chunk)
        if per_transform is not None:
            per_transform += np.asarray(loss.per_transform) * len(chunk)
    n = len(items)
    return (total_loss / n, total_acc / n,
            None if per_transform is None else [float(v) for v in per_transform / n])


def _train(config: TrainConfig, net: Network, dataset: Sequence[VideoRecord], rng: Rng,
           make_batch: BatchFn, loss_fn: LossFn) -> TrainLog:
    train_set, val_set = data_service.split_train_val(dataset, config.val_fraction, rng.child("split"))
    if len(train_set) < config.batch_size:
        raise InsufficientDataError(
            f"{len(train_set)} training videos cannot fill one batch of {config.batch_size}")
    phase = config.phase.value
    settings = get_settings()
    metrics = get_metrics()
    log = TrainLog()
    started = time.perf_counter()
    step = 0
    logger.info(f"[{phase}] {len(train_set)} training / {len(val_set)} validation videos, "
                f"{config.epochs} epochs, batch {config.batch_size}, lr {config.lr}")

    for epoch in range(config.epochs):
        order = rng.child("shuffle").fork(epoch).permutation(len(train_set))
        sample_rng = rng.child("sample")
        epoch_losses = []
        for chunk in _batches(order, config.batch_size):
            step_started = time.perf_counter()
            items = [(train_set[i], sample_rng.fork(epoch, i)) for i in chunk]
            batch, targets = make_batch(items, False)
            logits, caches = forward(net, batch, train=True)
            loss, grad_logits = loss_fn(logits, targets)
            grads = backward(net, caches, grad_logits)
            sgd_step(net.params, grads, config.lr, config.momentum)
            step += 1
            epoch_losses.append(loss.value)
            log.steps.append(StepRecord(step=step, loss=loss.value))
            metrics.record_step(phase, loss.value, time.perf_counter() - step_started)
            if step % settings.PROGRESS_EVERY == 0:
                logger.info(f"[{phase}] epoch {epoch} step {step} loss {loss.value:.4f}")

        if (epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs:
            val_loss, val_acc, per_transform = _validate(config, net, val_set, rng, make_batch, loss_fn)
        else:
            val_loss, val_acc, per_transform = math.nan, math.nan, None
        record = EpochRecord(epoch=epoch, train_loss=float(np.mean(epoch_losses)), val_loss=val_loss,
                             val_acc=val_acc, per_transform=per_transform)
        log.epochs.append(record)
        logger.info(f"[{phase}] epoch {epoch} train_loss {record.train_loss:.4f} "
                    f"val_loss {record.val_loss:.4f} val_acc {record.val_acc:.4f}")

    log.wall_clock_seconds = time.perf_counter() - started
    return log


def _checkpoint(net: Network, config: TrainConfig, log: TrainLog) -> Checkpoint:
    meta = CheckpointMeta(
        phase=config.phase.value,
        label_mode=config.label_mode.value if config.phase == Phase.PRETEXT else None,
        allowed=[kind.slug for kind in config.allowed] if config.phase == Phase.PRETEXT else [],
        epochs=len(log.epochs),
        steps=len(log.steps),
        seed=config.seed,
        source_checkpoint=config.init_checkpoint,
    )
    return Checkpoint(arch=net.arch, scale=net.scale, num_outputs=net.num_outputs,
                      tensors=dict(net.params.values), meta=meta)


def pretrain(config: TrainConfig, dataset: Sequence[VideoRecord], rng: Rng) -> Tuple[Checkpoint, TrainLog]:
    """Multi-transformation classification on unlabeled clips."""
    if config.phase != Phase.PRETEXT:
        raise InvalidParameterError(f"pretrain needs phase 'pretext', got '{config.phase.value}'")
    net = build_network(config.arch, config.scale, pretext_outputs(config), rng.child("init"))
    logger.info(f"Pretext task: {config.label_mode.value} over "
                f"{', '.join(kind.slug for kind in config.allowed)} ({net.num_outputs} outputs)")
    log = _train(config, net, dataset, rng, _pretext_batch(config), _loss_fn(config))
    return _checkpoint(net, config, log), log


def transfer_weights(checkpoint: Checkpoint, num_actions: int, rng: Rng) -> Network:
    """Copy every tensor except the classification head; the new head has `num_actions` outputs."""
    net = build_network(checkpoint.arch, checkpoint.scale, num_actions, rng.child("head"))
    head = f"{net.head_name}."
    for name in net.params:
        if name.startswith(head):
            continue
        if name not in checkpoint.tensors:
            raise FormatError(f"Checkpoint has no tensor '{name}' for a {checkpoint.arch.name} backbone")
        tensor = checkpoint.tensors[name]
        net.params[name] = tensor.astype(net.params[name].dtype, copy=True)
    copied = sum(1 for name in net.params if not name.startswith(head))
    logger.info(f"Transferred {copied} tensors; new head '{net.head_name}' with {num_actions} outputs")
    return net


def _check_labels(dataset: Sequence[VideoRecord], num_actions: int) -> None:
    unlabeled = [video.id for video in dataset if video.label is None]
    if unlabeled:
        raise InvalidDatasetError(f"{len(unlabeled)} videos have no action label (e.g. '{unlabeled[0]}')")
    for video in dataset:
        if video.label >= num_actions:
            raise InvalidLabelError(f"Video '{video.id}' has label {video.label}; the head has {num_actions} classes")


def num_actions_of(dataset: Sequence[VideoRecord]) -> int:
    _check_labels(dataset, num_actions=2**31)
    return max(video.label for video in dataset) + 1


def finetune(config: TrainConfig, dataset: Sequence[VideoRecord], init: Optional[Network],
             rng: Rng) -> Tuple[Checkpoint, TrainLog]:
    """Supervised action recognition from `init`, or from random weights when None."""
    if config.phase != Phase.DOWNSTREAM:
        raise InvalidParameterError(f"finetune needs phase 'downstream', got '{config.phase.value}'")
    net = init if init is not None else build_network(
        config.arch, config.scale, num_actions_of(dataset), rng.child("init"))
    _check_labels(dataset, net.num_outputs)
    if config.freeze_backbone:
        net.params.freeze(keep=[f"{net.head_name}."])
        logger.info(f"Backbone frozen; training '{net.head_name}' only")
    log = _train(config, net, dataset, rng, _downstream_batch(config), _loss_fn(config))
    return _checkpoint(net, config, log), log


def evaluate_video(net: Network, video: VideoRecord, frames: int, crop: int, short_edge: Optional[int] = None,
                   stride: Optional[int] = None) -> Tuple[int, np.ndarray]:
    """Mean of the per-clip softmax vectors over non-overlapping clips; argmax keeps the first maximum."""
    clips = data_service.enumerate_clips(video, frames, stride or frames)
    short_edge = short_edge or crop
    prepared = np.stack([preprocess(clip, short_edge, crop, "center") for clip in clips])
    probabilities = np.concatenate([
        predict_proba(net, prepared[i:i + EVAL_CHUNK]) for i in range(0, len(prepared), EVAL_CHUNK)
    ])
    scores = probabilities.mean(axis=0)
    return int(np.argmax(scores)), scores


def evaluate_dataset(net: Network, dataset: Sequence[VideoRecord], frames: int, crop: int,
                     short_edge: Optional[int] = None, stride: Optional[int] = None) -> EvaluationResult:
    if not dataset:
        raise InsufficientDataError("Cannot evaluate an empty dataset")
    _check_labels(dataset, net.num_outputs)
    confusion = np.zeros((net.num_outputs, net.num_outputs), dtype=np.int64)
    for video in dataset:
        predicted, _ = evaluate_video(net, video, frames, crop, short_edge, stride)
        confusion[video.label, predicted] += 1
    accuracy = float(np.trace(confusion) / len(dataset))
    logger.info(f"Top-1 accuracy {accuracy:.4f} over {len(dataset)} videos")
    return EvaluationResult(accuracy=accuracy, confusion=confusion.tolist(), num_videos=len(dataset))


# train logs

def _fmt(value: float) -> str:
    return repr(float(value))


def format_train_log(log: TrainLog) -> str:
    lines = [f"step\t{s.step}\tloss\t{_fmt(s.loss)}" for s in log.steps]
    for e in log.epochs:
        line = (f"epoch\t{e.epoch}\ttrain_loss\t{_fmt(e.train_loss)}\tval_loss\t{_fmt(e.val_loss)}"
                f"\tval_acc\t{_fmt(e.val_acc)}")
        if e.per_transform is not None:
            line += "\tper_transform\t" + "\t".join(_fmt(v) for v in e.per_transform)
        lines.append(line)
    return "".join(line + "\n" for line in lines)


def write_train_log(log: TrainLog, path: PathLike) -> Path:
    """Line-oriented log without wall-clock time, so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_train_log(log), encoding="utf-8")
    return path


def parse_train_log(text: str, source: str = "<log>") -> TrainLog:
    log = TrainLog()
    for number, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        fields = line.split("\t")
        try:
            if fields[0] == "step" and len(fields) == 4 and fields[2] == "loss":
                log.steps.append(StepRecord(step=int(fields[1]), loss=float(fields[3])))
            elif fields[0] == "epoch" and len(fields) in (8, 9 + NUM_TRANSFORMS):
                if fields[2::2][:3] != ["train_loss", "val_loss", "val_acc"]:
                    raise ValueError("unexpected field names")
                per_transform = None
                if len(fields) > 8:
                    if fields[8] != "per_transform":
                        raise ValueError("unexpected field names")
                    per_transform = [float(v) for v in fields[9:]]
                log.epochs.append(EpochRecord(epoch=int(fields[1]), train_loss=float(fields[3]),
                                              val_loss=float(fields[5]), val_acc=float(fields[7]),
                                              per_transform=per_transform))
            else:
                raise ValueError(f"unknown record '{fields[0]}'")
        except ValueError as e:
            raise InvalidDatasetError(f"{source}:{number}: malformed train log line ({e})")
    return log


def read_train_log(path: PathLike) -> TrainLog:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Error reading train log {path}: {e}")
        raise InvalidDatasetError(f"Cannot read train log {path}: {e.strerror}")
    return parse_train_log(text, str(path))


def load_dataset(config: TrainConfig, split: str = "train") -> List[VideoRecord]:
    """Synthetic generation or manifest loading for the train or test split."""
    if config.data_source == DataSource.SYNTHETIC:
        return data_service.generate_synthetic(config.synthetic, split)
    manifest = config.manifest if split == "train" else config.test_manifest
    if not manifest:
        raise UsageError(f"data_source = manifest needs {'manifest' if split == 'train' else 'test_manifest'}")
    records = data_service.load_manifest(manifest)
    if not records:
        raise InsufficientDataError(f"Manifest {manifest} lists no videos")
    return records
