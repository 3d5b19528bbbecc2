import pytest
from app.core.exceptions import InvalidParameterError
from app.schemas.training import Phase
from app.schemas.transforms import TransformKind
from app.services import experiments_service as es


def test_derive_downstream(pretext_config):
    downstream = es.derive_downstream(pretext_config)
    assert downstream.phase == Phase.DOWNSTREAM and downstream.lr == 0.001
    assert downstream.scale == pretext_config.scale and downstream.synthetic == pretext_config.synthetic


def test_studies_need_seeds(pretext_config):
    with pytest.raises(InvalidParameterError):
        es.transfer_study(pretext_config, [])
    with pytest.raises(InvalidParameterError):
        es.ablation_study(pretext_config, [])


def _record_finetunes(monkeypatch):
    calls = []

    def finetune_top1(downstream, train_set, test_set, init, rng):
        calls.append((init, rng.seed, rng.path))
        return 0.5

    monkeypatch.setattr(es.pipeline_service, "pretrain", lambda config, data, rng: (config.allowed, None))
    monkeypatch.setattr(es.pipeline_service, "transfer_weights", lambda checkpoint, n, rng: checkpoint)
    monkeypatch.setattr(es, "_finetune_top1", finetune_top1)
    return calls


def test_transfer_study_pairs_fine_tune_streams(monkeypatch, pretext_config):
    calls = _record_finetunes(monkeypatch)
    summary = es.transfer_study(pretext_config, [0, 1])
    assert [init is None for init, _, _ in calls] == [False, True, False, True]
    assert calls[0][1:] == calls[1][1:] and calls[2][1:] == calls[3][1:]
    assert calls[0][1:] != calls[2][1:]
    assert summary.verdict and summary.ranges == {"pretrained": 0.0, "scratch": 0.0}


def test_ablation_variants_share_the_fine_tune_stream(monkeypatch, pretext_config):
    calls = _record_finetunes(monkeypatch)
    kinds = [TransformKind.ROTATION, TransformKind.CLIP_INVERSION]
    es.ablation_study(pretext_config, [3], kinds)
    assert [init for init, _, _ in calls] == [[TransformKind.ROTATION], [TransformKind.CLIP_INVERSION],
                                              pretext_config.allowed]
    assert len({(seed, path) for _, seed, path in calls}) == 1


@pytest.mark.slow
def test_transfer_study_rows_and_verdict(pretext_config):
    summary = es.transfer_study(pretext_config, [0, 1])
    assert [(r.seed, r.variant) for r in summary.rows] == [(0, "pretrained"), (0, "scratch"),
                                                            (1, "pretrained"), (1, "scratch")]
    assert set(summary.means) == {"pretrained", "scratch"}
    assert summary.verdict == (summary.means["pretrained"] >= summary.means["scratch"])
    assert all(0.0 <= r.top1 <= 1.0 for r in summary.rows)
    assert es.transfer_study(pretext_config, [0, 1]) == summary


@pytest.mark.slow
def test_ablation_study_variants(pretext_config):
    kinds = [TransformKind.ROTATION, TransformKind.CLIP_INVERSION]
    summary = es.ablation_study(pretext_config, [0], kinds)
    assert [r.variant for r in summary.rows] == ["rotation", "inversion", "multi"]
    assert set(summary.ranges.values()) == {0.0}
    assert "median single-transform" in summary.notes
