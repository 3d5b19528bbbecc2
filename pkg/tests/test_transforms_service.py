import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st
from hypothesis.extra.numpy import arrays
from app.core.exceptions import FrameIndexError, InvalidParameterError, InvalidShapeError, ShapeError
from app.core.metrics import get_metrics
from app.schemas.transforms import ALL_TRANSFORMS, LabelMode, TransformKind, TransformSpec
from app.services import transforms_service as tf
from app.services.tensor_service import Rng, rand_uniform


def clips(frames=st.integers(3, 8), size=st.integers(2, 6)):
    """Square float32 clips in [0, 1]."""
    return st.tuples(frames, size).flatmap(
        lambda fs: arrays(np.float32, (fs[0], fs[1], fs[1], 3), elements=st.floats(0, 1, width=32)))


@given(clips())
def test_inversion_is_an_involution(clip):
    assert np.array_equal(tf.invert_clip(tf.invert_clip(clip)), clip)


@given(clips())
def test_rotations_compose_to_identity(clip):
    assert np.array_equal(tf.rotate(tf.rotate(clip, 180), 180), clip)
    assert np.array_equal(tf.rotate(tf.rotate(clip, 90), 270), clip)
    four = clip
    for _ in range(4):
        four = tf.rotate(four, 90)
    assert np.array_equal(four, clip)


@given(clips(), st.sampled_from(tf.COLOR_PERMUTATIONS))
def test_color_switch_inverse(clip, perm):
    inverse = list(np.argsort(perm))
    assert np.array_equal(tf.color_switch(tf.color_switch(clip, perm), inverse), clip)


@given(clips(), st.integers(0, 2**31))
def test_permutation_inverse(clip, seed):
    perm = tf._sample_frame_perm(Rng(seed), clip.shape[0])
    assert np.array_equal(tf.permute_frames(tf.permute_frames(clip, perm), list(np.argsort(perm))), clip)


@given(clips(), st.sampled_from(["rotation", "color", "inversion"]))
def test_pixel_multiset_is_conserved(clip, which):
    out = {"rotation": lambda c: tf.rotate(c, 90),
           "color": lambda c: tf.color_switch(c, (2, 1, 0)),
           "inversion": tf.invert_clip}[which](clip)
    assert np.array_equal(np.sort(out, axis=None), np.sort(clip, axis=None))


def test_rotation_is_clockwise():
    clip = np.zeros((2, 2, 2, 3), dtype=np.float32)
    clip[:, 0, 0, :] = 1.0  # top-left
    rotated = tf.rotate(clip, 90)
    assert rotated[0, 0, 1, 0] == 1.0  # top-right


def test_rotation_90_needs_square_frames():
    clip = np.zeros((2, 4, 6, 3), dtype=np.float32)
    with pytest.raises(ShapeError):
        tf.rotate(clip, 90)
    assert tf.rotate(clip, 180).shape == clip.shape
    with pytest.raises(InvalidParameterError):
        tf.rotate(clip, 45)


def test_color_switch_semantics(clip):
    out = tf.color_switch(clip, (2, 1, 0))
    assert np.array_equal(out[..., 0], clip[..., 2])
    with pytest.raises(InvalidParameterError):
        tf.color_switch(clip, (0, 1, 2))
    with pytest.raises(InvalidParameterError):
        tf.color_switch(clip, (0, 0, 1))


def test_noise_stays_in_unit_range(clip, rng):
    out = tf.add_noise(clip, 0.3, rng)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out.shape == clip.shape
    with pytest.raises(InvalidParameterError):
        tf.add_noise(clip, 0.5, rng)


def test_frame_replacement_touches_one_frame(clip, rng):
    out = tf.replace_frame(clip, 2, rng)
    changed = [t for t in range(clip.shape[0]) if not np.array_equal(out[t], clip[t])]
    assert changed == [2]
    with pytest.raises(FrameIndexError):
        tf.replace_frame(clip, clip.shape[0], rng)


def test_split_join_halves(clip):
    partner = 1.0 - clip
    first = tf.split_join(clip, partner, "first")
    assert np.array_equal(first[:4], partner[:4]) and np.array_equal(first[4:], clip[4:])
    second = tf.split_join(clip, partner, "second")
    assert np.array_equal(second[:4], clip[:4]) and np.array_equal(second[4:], partner[4:])
    with pytest.raises(ShapeError):
        tf.split_join(clip, partner[:, :4], "first")
    with pytest.raises(InvalidShapeError):
        tf.split_join(clip[:7], partner[:7], "first")


def test_permutation_rejects_identity_and_reversal(clip):
    with pytest.raises(InvalidParameterError):
        tf.permute_frames(clip, list(range(8)))
    with pytest.raises(InvalidParameterError):
        tf.permute_frames(clip, list(range(8))[::-1])
    with pytest.raises(InvalidParameterError):
        tf.permute_frames(clip, [0, 0, 1, 2, 3, 4, 5, 6])


def test_clip_shape_is_checked():
    with pytest.raises(InvalidShapeError):
        tf.invert_clip(np.zeros((4, 4, 4, 1), dtype=np.float32))
    with pytest.raises(InvalidShapeError):
        tf.invert_clip(np.zeros((1, 4, 4, 3), dtype=np.float32))


def test_multiclass_no_transform_rate():
    draws = [tf.sample_specs(Rng(9).fork(i), LabelMode.MULTI_CLASS, 8, ALL_TRANSFORMS, num_partners=4)
             for i in range(4000)]
    empty = sum(1 for specs in draws if not specs) / len(draws)
    assert empty == pytest.approx(1 / 8, abs=0.02)
    assert all(len(specs) <= 1 for specs in draws)


def test_multiclass_restricted_rate():
    allowed = [TransformKind.ROTATION]
    draws = [tf.sample_specs(Rng(2).fork(i), LabelMode.MULTI_CLASS, 8, allowed) for i in range(2000)]
    empty = sum(1 for specs in draws if not specs) / len(draws)
    assert empty == pytest.approx(1 / 2, abs=0.04)


def test_multilabel_draws():
    sizes = []
    for i in range(100000):
        specs = tf.sample_specs(Rng(4).fork(i), LabelMode.MULTI_LABEL, 8, ALL_TRANSFORMS, num_partners=4)
        if i < 1000:
            kinds = [s.kind for s in specs]
            assert len(set(kinds)) == len(kinds) <= 3
        sizes.append(len(specs))
    counts = np.bincount(sizes, minlength=4)
    assert counts[0] / len(sizes) == pytest.approx(1 / 8, abs=0.01)
    np.testing.assert_allclose(counts[1:] / counts[1:].sum(), 1 / 3, atol=0.02)


def test_split_join_is_never_drawn_without_a_partner():
    for mode in LabelMode:
        for i in range(300):
            specs = tf.sample_specs(Rng(8).fork(i), mode, 8, ALL_TRANSFORMS)
            assert TransformKind.SPLIT_JOIN not in [s.kind for s in specs]
            assert tf.sample_specs(Rng(8).fork(i), mode, 8, [TransformKind.SPLIT_JOIN]) == []
    with pytest.raises(InvalidParameterError):
        tf.sample_specs(Rng(0), LabelMode.MULTI_CLASS, 8, [TransformKind.SPLIT_JOIN], force_transform=True)
    with pytest.raises(InvalidParameterError):
        tf.sample_parameters(TransformKind.SPLIT_JOIN, Rng(0), 8, num_partners=1, self_index=0)
    drawn = [tf.sample_specs(Rng(8).fork(i), LabelMode.MULTI_CLASS, 8, [TransformKind.SPLIT_JOIN],
                             num_partners=2, self_index=1) for i in range(50)]
    assert all(spec.partner_id == 0 for specs in drawn for spec in specs)
    assert any(drawn)


@given(st.integers(0, 2**31), st.sampled_from([4, 8, 16]), st.sampled_from(list(LabelMode)))
def test_every_sampled_transform_changes_the_clip(seed, frames, mode):
    rng = Rng(seed)
    batch = rand_uniform(rng.child("batch"), (3, frames, 6, 6, 3), 0.0, 1.0)
    clip, partners = batch[0], list(batch)
    specs = tf.sample_specs(rng.child("specs"), mode, frames, ALL_TRANSFORMS, num_partners=3, self_index=0,
                            force_transform=True)
    assert specs
    for spec in specs:
        out = tf.apply_spec(clip, spec, rng.child(spec.kind.slug), partners)
        assert not np.array_equal(out, clip), spec
    out, label = tf.apply_specs(clip, specs, rng.child("apply"), mode, partners)
    assert not np.array_equal(out, clip)
    kinds = sorted(int(spec.kind) for spec in specs)
    if mode == LabelMode.MULTI_CLASS:
        assert [label.class_id] == kinds
    else:
        assert [i + 1 for i, bit in enumerate(label.indicator) if bit] == kinds


def test_sampling_rules():
    with pytest.raises(InvalidParameterError):
        tf.sample_specs(Rng(0), LabelMode.MULTI_CLASS, 8, [])
    with pytest.raises(InvalidParameterError):
        tf.sample_specs(Rng(0), LabelMode.MULTI_CLASS, 7, [TransformKind.SPLIT_JOIN])
    forced = tf.sample_specs(Rng(0), LabelMode.MULTI_CLASS, 8, ALL_TRANSFORMS, force_transform=True)
    assert len(forced) == 1
    rotations = {tf.sample_parameters(TransformKind.ROTATION, Rng(i), 8, square=False).angle for i in range(20)}
    assert rotations == {180}


def test_split_join_partner_is_another_item():
    for i in range(50):
        spec = tf.sample_parameters(TransformKind.SPLIT_JOIN, Rng(i), 8, num_partners=4, self_index=2)
        assert spec.partner_id in (0, 1, 3)


def test_labels():
    label = tf.make_label([TransformKind.CLIP_INVERSION], LabelMode.MULTI_CLASS)
    assert label.class_id == 5
    assert tf.make_label([], LabelMode.MULTI_CLASS).class_id == 0
    z = tf.make_label([TransformKind.ROTATION, TransformKind.PERMUTATION], LabelMode.MULTI_LABEL)
    assert z.indicator == [1, 0, 0, 0, 0, 0, 1]
    assert tf.make_label([], LabelMode.MULTI_LABEL).indicator == [0] * 7


def test_apply_specs_order_and_label(clip, rng):
    specs = [TransformSpec(kind=TransformKind.CLIP_INVERSION),
             TransformSpec(kind=TransformKind.ROTATION, angle=90)]
    out, label = tf.apply_specs(clip, specs, rng, LabelMode.MULTI_LABEL)
    assert np.array_equal(out, tf.invert_clip(tf.rotate(clip, 90)))
    assert label.indicator == [1, 0, 0, 0, 1, 0, 0]
    counter = get_metrics().clips_transformed
    assert counter.labels(kind="rotation")._value.get() == 1


def test_apply_specs_rejects_bad_combinations(clip, rng):
    inversion = TransformSpec(kind=TransformKind.CLIP_INVERSION)
    with pytest.raises(InvalidParameterError):
        tf.apply_specs(clip, [inversion, inversion], rng, LabelMode.MULTI_LABEL)
    rotation = TransformSpec(kind=TransformKind.ROTATION, angle=180)
    with pytest.raises(InvalidParameterError):
        tf.apply_specs(clip, [inversion, rotation], rng, LabelMode.MULTI_CLASS)
    split = TransformSpec(kind=TransformKind.SPLIT_JOIN, partner_id=3, replaced_half="first")
    with pytest.raises(InvalidParameterError):
        tf.apply_specs(clip, [split], rng, LabelMode.MULTI_CLASS, partners=[clip])


def test_empty_specs_is_identity(clip, rng):
    out, label = tf.apply_specs(clip, [], rng)
    assert np.array_equal(out, clip)
    assert label.class_id == 0


def test_transform_by_name():
    assert tf.transform_by_name("inversion") == TransformKind.CLIP_INVERSION
    assert tf.transform_by_name("NOISE") == TransformKind.NOISE_ADDITION
    with pytest.raises(InvalidParameterError):
        tf.transform_by_name("identity")
    with pytest.raises(InvalidParameterError):
        tf.transform_by_name("blur")


def test_class_index_map():
    assert tf.class_index_map(ALL_TRANSFORMS) == {i: i for i in range(8)}
    assert tf.class_index_map([TransformKind.PERMUTATION, TransformKind.ROTATION]) == {0: 0, 1: 1, 7: 2}


def test_resize_short_edge_keeps_aspect(rng):
    clip = np.random.default_rng(0).random((2, 20, 30, 3)).astype(np.float32)
    out = tf.resize_short_edge(clip, 10)
    assert out.shape == (2, 10, 15, 3)
    assert out.min() >= 0 and out.max() <= 1
    assert tf.resize_short_edge(clip, 20) is clip


def test_preprocess_crops(rng):
    clip = np.random.default_rng(0).random((4, 20, 30, 3)).astype(np.float32)
    centre = tf.preprocess(clip, 20, 16, "center")
    assert centre.shape == (4, 16, 16, 3)
    assert np.array_equal(centre, clip[:, 2:18, 7:23])
    random_a = tf.preprocess(clip, 20, 16, "random", Rng(1))
    random_b = tf.preprocess(clip, 20, 16, "random", Rng(1))
    assert np.array_equal(random_a, random_b)
    with pytest.raises(InvalidParameterError):
        tf.preprocess(clip, 12, 16)
    with pytest.raises(InvalidParameterError):
        tf.preprocess(clip, 20, 16, "random")
