import numpy as np
import pytest
from app.core.exceptions import (
    FormatError,
    InsufficientDataError,
    InsufficientFramesError,
    InvalidDatasetError,
    MissingFrameError,
    ShapeError,
)
from app.schemas.data import FrameLayout, ManifestEntry, SyntheticConfig, VideoRecord
from app.services import data_service as ds
from app.services.tensor_service import Rng


def _video(length=10, size=4, label=1, video_id="v"):
    frames = np.random.default_rng(length).random((length, size, size, 3)).astype(np.float32)
    return VideoRecord(id=video_id, frames=frames, label=label)


def test_clip_offsets_tile_without_overlap():
    assert ds.clip_offsets(32, 16, 16) == [0, 16]
    assert ds.clip_offsets(16, 16, 16) == [0]
    assert ds.clip_offsets(40, 16, 8) == [0, 8, 16, 24]
    assert ds.clip_offsets(47, 16, 16) == [0, 16]


def test_enumerate_clips():
    video = _video(length=9)
    clips = ds.enumerate_clips(video, 4, 4)
    assert len(clips) == 2
    assert np.array_equal(clips[1], video.frames[4:8])


def test_sample_clip_is_contiguous_and_seeded():
    video = _video(length=12)
    a = ds.sample_clip(video, 5, Rng(3))
    b = ds.sample_clip(video, 5, Rng(3))
    assert np.array_equal(a, b)
    offsets = [i for i in range(8) if np.array_equal(video.frames[i:i + 5], a)]
    assert len(offsets) == 1


def test_sample_offsets_are_uniform():
    counts = np.bincount([ds.sample_offset(12, 5, Rng(3).fork(i)) for i in range(8000)], minlength=8)
    assert len(counts) == 8
    np.testing.assert_allclose(counts / 8000, 1 / 8, atol=0.015)


def test_short_video_is_rejected():
    with pytest.raises(InsufficientFramesError):
        ds.sample_clip(_video(length=3), 4, Rng(0))
    with pytest.raises(InsufficientFramesError):
        ds.enumerate_clips(_video(length=3), 4, 4)


def test_synthetic_is_a_pure_function_of_the_config(synthetic_config):
    a = ds.generate_synthetic(synthetic_config)
    b = ds.generate_synthetic(synthetic_config)
    assert [v.id for v in a] == [f"train_{i:05d}" for i in range(8)]
    assert all(np.array_equal(x.frames, y.frames) for x, y in zip(a, b))
    assert [v.label for v in a] == [0, 1, 2, 3, 0, 1, 2, 3]
    test = ds.generate_synthetic(synthetic_config, "test")
    assert len(test) == 4 and test[0].id == "test_00000"
    assert not np.array_equal(test[0].frames, a[0].frames)


@pytest.mark.parametrize("classes", [2, 4, 8])
def test_synthetic_directions_are_recoverable(classes):
    config = SyntheticConfig(num_videos=2 * classes, test_videos=0, frames_per_video=5, height=24, width=24,
                             num_classes=classes, shape_size=6.0, speed_min=1.0, speed_max=2.0, seed=5)
    for video in ds.generate_synthetic(config):
        assert video.frames.min() >= 0 and video.frames.max() <= 1
        assert ds.classify_direction(video.frames, classes, config.background) == video.label


def test_square_centroid_is_exact():
    mask = ds.render_square(20, 20, 3.25, 7.5, 4.0)
    frame = np.repeat(mask[..., None], 3, axis=2)
    y, x = ds.shape_centroid(frame, 0.0)
    assert y == pytest.approx(3.25 + 2.0) and x == pytest.approx(7.5 + 2.0)


def test_synthetic_path_must_fit():
    with pytest.raises(ValueError):
        SyntheticConfig(height=10, width=10, shape_size=8.0, frames_per_video=16)


def test_clip_file_round_trip(tmp_path):
    clip = np.random.default_rng(0).random((3, 4, 5, 3)).astype(np.float32)
    path = tmp_path / "clip.sslv"
    ds.save_clip(clip, path)
    assert path.read_bytes()[:4] == b"SSLV"
    assert np.array_equal(ds.load_clip(path), clip)


def test_clip_decode_errors():
    clip = np.zeros((2, 2, 2, 3), dtype=np.float32)
    header = ds._CLIP_HEADER.pack(ds.CLIP_MAGIC, ds.CLIP_VERSION, *clip.shape)
    good = header + clip.tobytes()
    with pytest.raises(FormatError) as e:
        ds.decode_clip(b"XXXX" + good[4:])
    assert e.value.offset == 0
    with pytest.raises(FormatError) as e:
        ds.decode_clip(good[:10])
    assert e.value.offset == 10
    with pytest.raises(FormatError) as e:
        ds.decode_clip(ds._CLIP_HEADER.pack(ds.CLIP_MAGIC, 9, *clip.shape) + clip.tobytes())
    assert e.value.offset == 4
    with pytest.raises(FormatError) as e:
        ds.decode_clip(ds._CLIP_HEADER.pack(ds.CLIP_MAGIC, 1, 2, 0, 2, 3))
    assert e.value.offset == 8
    with pytest.raises(FormatError) as e:
        ds.decode_clip(good[:-4])
    assert e.value.offset == len(good) - 4


def test_huge_clip_dims_do_not_wrap_around():
    header = ds._CLIP_HEADER.pack(ds.CLIP_MAGIC, ds.CLIP_VERSION, 65536, 65536, 65536, 65536)
    with pytest.raises(FormatError) as e:
        ds.decode_clip(header)
    assert e.value.offset == len(header)
    header = ds._CLIP_HEADER.pack(ds.CLIP_MAGIC, ds.CLIP_VERSION, 2**32 - 1, 2**32 - 1, 2**32 - 1, 3)
    with pytest.raises(FormatError):
        ds.decode_clip(header + bytes(16))


def test_missing_clip_file(tmp_path):
    with pytest.raises(InvalidDatasetError):
        ds.load_clip(tmp_path / "absent.sslv")


def test_frame_directory_round_trip(tmp_path):
    video = _video(length=3)
    ds.save_frame_dir(video, tmp_path / "v", FrameLayout.PPM)
    assert sorted(p.name for p in (tmp_path / "v").iterdir()) == ["000000.ppm", "000001.ppm", "000002.ppm"]
    loaded = ds.load_frame_dir(tmp_path / "v", label=4)
    assert loaded.id == "v" and loaded.label == 4
    np.testing.assert_allclose(loaded.frames, ds.to_uint8(video.frames) / 255.0, atol=1e-6)


def test_frame_directory_gap(tmp_path):
    ds.save_frame_dir(_video(length=3), tmp_path / "v", FrameLayout.PNG)
    (tmp_path / "v" / "000001.png").unlink()
    with pytest.raises(MissingFrameError):
        ds.load_frame_dir(tmp_path / "v", FrameLayout.PNG)


def test_frame_directory_problems(tmp_path):
    with pytest.raises(InvalidDatasetError):
        ds.load_frame_dir(tmp_path / "absent")
    (tmp_path / "empty").mkdir()
    with pytest.raises(InsufficientFramesError):
        ds.load_frame_dir(tmp_path / "empty")
    ds.save_frame_dir(_video(length=2, size=4), tmp_path / "mixed")
    ds.save_frame_dir(_video(length=3, size=5), tmp_path / "other")
    (tmp_path / "other" / "000002.ppm").rename(tmp_path / "mixed" / "000002.ppm")
    with pytest.raises(ShapeError):
        ds.load_frame_dir(tmp_path / "mixed")
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "000000.ppm").write_bytes(b"not an image")
    with pytest.raises(FormatError):
        ds.load_frame_dir(tmp_path / "bad")


def test_dataset_and_manifest(tmp_path):
    records = [_video(length=4, video_id="a", label=0), _video(length=5, video_id="b", label=None)]
    manifest = ds.write_dataset(records, tmp_path / "data")
    assert manifest.read_text() == "a\ta.sslv\t0\nb\tb.sslv\t-\n"
    loaded = ds.load_manifest(manifest)
    assert [(r.id, r.label, r.length) for r in loaded] == [("a", 0, 4), ("b", None, 5)]
    frames_manifest = ds.write_dataset(records, tmp_path / "frames", FrameLayout.PPM)
    assert [r.length for r in ds.load_manifest(frames_manifest)] == [4, 5]


def test_manifest_append_and_errors(tmp_path):
    path = tmp_path / "m.tsv"
    ds.write_manifest([ManifestEntry(id="a", path="a.sslv", label=1)], path)
    ds.write_manifest([ManifestEntry(id="b", path="/abs/b.sslv")], path, append=True)
    entries = ds.read_manifest(path)
    assert entries[0].path == str(tmp_path / "a.sslv")
    assert entries[1].path == "/abs/b.sslv" and entries[1].label is None
    path.write_text("a\ta.sslv\n")
    with pytest.raises(InvalidDatasetError):
        ds.read_manifest(path)
    path.write_text("a\ta.sslv\tx\n")
    with pytest.raises(InvalidDatasetError):
        ds.read_manifest(path)
    with pytest.raises(ValueError):
        ManifestEntry(id="a\tb", path="p")


def test_split_train_val():
    records = [_video(length=2, video_id=f"v{i}") for i in range(20)]
    train, val = ds.split_train_val(records, 0.1, Rng(0))
    assert len(val) == 2 and len(train) == 18
    assert {r.id for r in train} | {r.id for r in val} == {r.id for r in records}
    assert [r.id for r in train] == sorted((r.id for r in train), key=lambda s: int(s[1:]))
    again, _ = ds.split_train_val(records, 0.1, Rng(0))
    assert [r.id for r in again] == [r.id for r in train]
    assert ds.split_train_val(records, 0.0, Rng(0))[1] == []
    with pytest.raises(InsufficientDataError):
        ds.split_train_val([], 0.1, Rng(0))
    with pytest.raises(InsufficientDataError):
        ds.split_train_val(records[:1], 0.9, Rng(0))
