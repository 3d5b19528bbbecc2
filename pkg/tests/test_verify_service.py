import pytest
from app.core.exceptions import UsageError, VerificationError
from app.schemas.verification import SUITES
from app.services import nn_service, transforms_service, verify_service
from app.services.tensor_service import Rng, get_dtype
import numpy as np


def corrupt_conv_backward(monkeypatch):
    original = nn_service.conv3d_backward

    def skewed(*args, **kwargs):
        gx, gw, gb = original(*args, **kwargs)
        return gx, gw * 1.01, gb

    monkeypatch.setattr(nn_service, "conv3d_backward", skewed)


@pytest.mark.parametrize("suite", SUITES)
def test_every_suite_passes(suite):
    report = verify_service.run_verification([suite])
    assert report.checks and all(c.suite == suite for c in report.checks)
    assert report.passed, [c.detail for c in report.failures]


def test_checks_run_in_64_bit_mode_and_restore():
    verify_service.run_verification(["shapes"])
    assert get_dtype() == np.float32


def test_several_cases_use_independent_streams():
    report = verify_service.run_verification(["transforms"], cases=3, seed=11, clips=30)
    assert report.passed and len(report.checks) == 3


def test_corrupted_conv_backward_is_caught(monkeypatch):
    corrupt_conv_backward(monkeypatch)
    report = verify_service.run_verification(["gradients"])
    failed = {c.name for c in report.failures}
    assert "conv3d" in failed
    assert "relu" not in failed and "losses" not in failed
    with pytest.raises(VerificationError):
        verify_service.raise_on_failure(report)


def test_errors_inside_a_check_become_failures(monkeypatch):
    def broken(rng):
        raise VerificationError("boom")

    monkeypatch.setitem(verify_service.CHECKS, "oracles", [("broken", broken)])
    report = verify_service.run_verification(["oracles"])
    assert not report.passed
    assert report.failures[0].detail.startswith("case 0: VerificationError")


def test_relative_error_and_numeric_gradient():
    assert verify_service.relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert verify_service.relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)
    x = np.array([1.0, -2.0])
    grad = verify_service.numeric_gradient(lambda: float(np.sum(x ** 2)), x, 1e-4)
    np.testing.assert_allclose(grad, [2.0, -4.0], atol=1e-6)
    assert x.tolist() == [1.0, -2.0]


def test_transform_clips_cover_every_frame_count():
    shapes = {clip.shape for clip in verify_service.clip_cases(Rng(0), 9)}
    assert {s[0] for s in shapes} == {4, 8, 16}
    assert {s[1] for s in shapes} == {4, 8, 32}
    assert all(s[1] == s[2] and s[3] == 3 for s in shapes)


def test_clip_count_reaches_the_report():
    report = verify_service.run_verification(["transforms"], clips=12)
    assert report.passed, [c.detail for c in report.failures]
    assert all(c.detail.startswith("12 clips") for c in report.checks)
    assert [c.name for c in report.checks] == ["involutions", "conservation", "label soundness"]


def test_transforms_suite_needs_a_clip():
    with pytest.raises(UsageError):
        verify_service.transform_checks(0)


def test_leaky_frame_replacement_is_caught(monkeypatch):
    original = transforms_service.replace_frame

    def leaky(clip, t, rng):
        out = original(clip, t, rng)
        out[(t + 1) % clip.shape[0]] = 0.5
        return out

    monkeypatch.setattr(transforms_service, "replace_frame", leaky)
    report = verify_service.run_verification(["transforms"], clips=6)
    assert "conservation" in {c.name for c in report.failures}


def test_lossy_inversion_is_caught(monkeypatch):
    monkeypatch.setattr(transforms_service, "invert_clip", lambda clip: clip[::-1] * 0.5)
    report = verify_service.run_verification(["transforms"], clips=6)
    failed = {c.name for c in report.failures}
    assert {"involutions", "conservation"} <= failed


def test_oracles_run_fifty_cases():
    report = verify_service.run_verification(["oracles"])
    details = {c.name: c.detail for c in report.checks}
    assert details["naive conv3d"].startswith("50 cases")
    assert details["naive maxpool3d"].startswith("50 cases")
    assert "padded" in details["naive maxpool3d"]


def test_broken_maxpool_is_caught_by_the_oracle(monkeypatch):
    original = nn_service.maxpool3d_forward

    def shifted(x, spec):
        out, argmax = original(x, spec)
        return out + 1e-3, argmax

    monkeypatch.setattr(nn_service, "maxpool3d_forward", shifted)
    report = verify_service.run_verification(["oracles"])
    assert "naive maxpool3d" in {c.name for c in report.failures}
    assert "naive conv3d" not in {c.name for c in report.failures}
