from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile
from typing import Optional
import logging

logger = logging.getLogger(__name__)


class RunMetrics:
    """Per-run prometheus registry; kept out of checkpoints and train logs."""

    def __init__(self):
        self.registry = CollectorRegistry()
        self.steps = Counter('train_steps', 'Completed optimizer steps', ['phase'], registry=self.registry)
        self.loss = Gauge('train_loss', 'Most recent training loss', ['phase'], registry=self.registry)
        self.step_seconds = Histogram('train_step_seconds', 'Wall-clock seconds per optimizer step',
                                      ['phase'], registry=self.registry)
        self.clips_transformed = Counter('clips_transformed', 'Clips passed through each transform',
                                         ['kind'], registry=self.registry)

    def record_step(self, phase: str, loss: float, seconds: float) -> None:
        self.steps.labels(phase=phase).inc()
        self.loss.labels(phase=phase).set(loss)
        self.step_seconds.labels(phase=phase).observe(seconds)

    def write(self, path: Optional[str]) -> None:
        if not path:
            return
        write_to_textfile(path, self.registry)
        logger.info(f"Metrics written to {path}")


_metrics: Optional[RunMetrics] = None


def get_metrics() -> RunMetrics:
    global _metrics
    if _metrics is None:
        _metrics = RunMetrics()
    return _metrics


def reset_metrics() -> RunMetrics:
    global _metrics
    _metrics = RunMetrics()
    return _metrics
