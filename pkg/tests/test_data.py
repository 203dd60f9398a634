import numpy as np
import pytest

from fcf.exceptions import InsufficientDataError, InvalidInputError
from fcf.services.channels import ChannelOptions, compute_channels, resize_image
from fcf.services.data import (
    NEGATIVE,
    POSITIVE,
    Corpus,
    CorpusEntry,
    WindowSample,
    crop_window,
    extract_features,
    extract_patches,
    sample_negatives,
    sample_positives,
)
from fcf.services.detector import BoundingBox
from fcf.services.evaluation import Annotation
from fcf.services.featuremap import FeatureLayout, apply_bank, window_features
from fcf.services.synthetic import SynthSpec, make_synthetic, render_image, save_synthetic, target_mask
from fcf.storage.manifests import load_corpus

from .conftest import SMALL_WINDOW


def _noise_corpus(rng, annotations=()):
    entry = CorpusEntry("a", "a.png", tuple(annotations), pixels=rng.random((60, 80, 3)))
    return Corpus(id="noise", split="train", entries=(entry,))


def test_synthetic_corpus_is_reproducible(small_synth):
    a = make_synthetic(small_synth, seed=7)
    b = make_synthetic(small_synth, seed=7)
    assert a == b
    for ea, eb in zip(a.entries, b.entries):
        np.testing.assert_array_equal(ea.pixels, eb.pixels)
    other = make_synthetic(small_synth, seed=7, split="test")
    assert other.entries[0].image_id == "test/00000"
    assert not np.array_equal(other.entries[0].pixels, a.entries[0].pixels)


def test_synthetic_targets_fit_and_do_not_overlap(small_corpus, small_synth):
    for entry in small_corpus.entries:
        assert small_synth.targets_min <= len(entry.annotations) <= small_synth.targets_max
        boxes = [a.box for a in entry.annotations]
        for i, box in enumerate(boxes):
            assert small_synth.min_height <= box.h <= small_synth.max_height
            assert box.w == pytest.approx(box.h * small_synth.aspect)
            assert box.x >= 0 and box.y >= 0
            assert box.x2 <= small_synth.width and box.y2 <= small_synth.height
            assert all(box.intersection(other) == 0 for other in boxes[i + 1 :])


def test_synthetic_pixels_are_eight_bit(small_corpus):
    img = small_corpus.entries[0].pixels
    assert img.shape == (96, 96, 3)
    np.testing.assert_allclose(img * 255.0, np.round(img * 255.0), atol=1e-9)


def test_targets_are_painted_warm(small_synth):
    img, annos = render_image(small_synth, seed=3, index=0)
    for anno in annos:
        mask = target_mask(small_synth, anno.box)
        assert mask.sum() > 0
        assert (img[mask, 0] - img[mask, 2]).mean() > 0.3


def test_synthetic_spec_validation():
    with pytest.raises(InvalidInputError):
        SynthSpec(width=64, height=64, max_height=100.0)
    with pytest.raises(InvalidInputError):
        SynthSpec(targets_min=3, targets_max=1)


def test_saved_synthetic_corpus_reads_back(tmp_path, small_corpus):
    manifest = save_synthetic(small_corpus, tmp_path, header=["fcf synth"])
    assert manifest.name == "train.manifest"
    loaded = load_corpus(manifest)
    assert loaded == small_corpus
    for entry, original in zip(loaded.entries, small_corpus.entries):
        np.testing.assert_allclose(loaded.image(entry), original.pixels, atol=1e-12)


def test_positives_follow_the_model_aspect(small_corpus, small_spec):
    samples = sample_positives(small_corpus, small_spec, mirror=True)
    n_targets = sum(len(e.positives) for e in small_corpus.entries)
    assert 0 < len(samples) <= 2 * n_targets
    assert len(samples) % 2 == 0
    for plain, mirrored in zip(samples[::2], samples[1::2]):
        assert not plain.mirrored and mirrored.mirrored
        assert plain.window == mirrored.window
        assert plain.label == POSITIVE
        assert plain.window.w / plain.window.h == pytest.approx(0.5)
    assert len(sample_positives(small_corpus, small_spec, mirror=False)) == len(samples) // 2


def test_positives_too_far_outside_are_skipped(rng, small_spec):
    annos = [Annotation(BoundingBox(-20, 10, 10, 40)), Annotation(BoundingBox(30, 10, 10, 40))]
    corpus = _noise_corpus(rng, annos)
    samples = sample_positives(corpus, small_spec, mirror=False)
    assert len(samples) == 1
    assert samples[0].window.h == 40


def test_ignored_annotations_give_no_positives(rng, small_spec):
    corpus = _noise_corpus(rng, [Annotation(BoundingBox(30, 10, 10, 40), ignore=True)])
    assert sample_positives(corpus, small_spec) == []


def test_negatives_stay_clear_of_annotations(small_corpus, small_spec):
    samples = sample_negatives(small_corpus, 50, small_spec, seed=2, exclusion_iou=0.1)
    assert len(samples) == 50
    for s in samples:
        assert s.label == NEGATIVE
        entry = small_corpus.entry(s.image_id)
        obj = small_spec.object_box(s.window)
        assert all(obj.iou(a.box) <= 0.1 for a in entry.annotations)
    again = sample_negatives(small_corpus, 50, small_spec, seed=2, exclusion_iou=0.1)
    assert [(s.image_id, s.window) for s in samples] == [(s.image_id, s.window) for s in again]


def test_crop_at_unit_scale_reads_pixels(rng):
    img = rng.random((30, 40))
    crop = crop_window(img, BoundingBox(5, 7, 12, 10), 12, 10)
    np.testing.assert_allclose(crop, img[7:17, 5:17], atol=1e-12)


def test_window_features_match_a_full_image_pass(rng, small_bank):
    corpus = _noise_corpus(rng)
    layout = FeatureLayout.build(small_bank, SMALL_WINDOW)
    samples = [WindowSample("a", BoundingBox(10, 6, 12, 24), POSITIVE), WindowSample("a", BoundingBox(40, 20, 12, 24), NEGATIVE)]
    features = extract_features(corpus, samples, small_bank, layout, SMALL_WINDOW)
    assert features.shape == (2, len(layout)) and features.dtype == np.float32

    resp = apply_bank(compute_channels(corpus.entries[0].pixels), small_bank)
    for row, sample in zip(features, samples):
        origin = (int(sample.window.x) // 2, int(sample.window.y) // 2)
        np.testing.assert_allclose(row, window_features(resp, layout, origin), rtol=1e-5, atol=1e-5)


def test_crop_matches_resize_of_the_whole_image(rng):
    img = rng.random((11, 13, 3))
    crop = crop_window(img, BoundingBox(0, 0, 13, 11), 17, 7)
    np.testing.assert_allclose(crop, resize_image(img, 17, 7), atol=1e-12)


def test_crop_outside_the_image_repeats_the_edge_pixel_first(rng):
    img = rng.random((12, 16))
    crop = crop_window(img, BoundingBox(-2, 3, 8, 6), 8, 6)
    np.testing.assert_allclose(crop[:, 2:], img[3:9, 0:6], atol=1e-12)
    np.testing.assert_allclose(crop[:, 1], img[3:9, 0], atol=1e-12)
    np.testing.assert_allclose(crop[:, 0], img[3:9, 1], atol=1e-12)


@pytest.mark.parametrize("pre_smooth", ["off", "triangle1"])
def test_windows_on_the_image_edge_match_a_full_image_pass(rng, small_bank, pre_smooth):
    corpus = _noise_corpus(rng)
    opts = ChannelOptions(pre_smooth=pre_smooth)
    layout = FeatureLayout.build(small_bank, SMALL_WINDOW)
    boxes = [BoundingBox(0, 0, 12, 24), BoundingBox(68, 36, 12, 24), BoundingBox(0, 36, 12, 24)]
    samples = [WindowSample("a", box, POSITIVE) for box in boxes]
    features = extract_features(corpus, samples, small_bank, layout, SMALL_WINDOW, opts)

    resp = apply_bank(compute_channels(corpus.entries[0].pixels, opts), small_bank)
    for row, box in zip(features, boxes):
        origin = (int(box.x) // 2, int(box.y) // 2)
        np.testing.assert_allclose(row, window_features(resp, layout, origin), rtol=1e-5, atol=1e-5)


def test_mirrored_windows_see_the_flipped_image(rng, small_bank):
    corpus = _noise_corpus(rng)
    flipped = Corpus(
        id="flipped",
        split="train",
        entries=(CorpusEntry("a", "a.png", pixels=corpus.entries[0].pixels[:, ::-1].copy()),),
    )
    layout = FeatureLayout.build(small_bank, SMALL_WINDOW)
    box = BoundingBox(20, 10, 12, 24)
    mirrored = extract_features(corpus, [WindowSample("a", box, POSITIVE, mirrored=True)], small_bank, layout, SMALL_WINDOW)
    mirror_box = BoundingBox(80 - box.x2, box.y, box.w, box.h)
    direct = extract_features(flipped, [WindowSample("a", mirror_box, POSITIVE)], small_bank, layout, SMALL_WINDOW)
    np.testing.assert_allclose(mirrored, direct, rtol=1e-5, atol=1e-5)


def test_patches_have_the_requested_shape(small_corpus):
    patches = extract_patches(small_corpus, 30, origin="all", seed=1)
    assert sorted(patches) == list(range(10))
    assert all(p.shape == (30, 10, 10) for p in patches.values())
    again = extract_patches(small_corpus, 30, origin="all", seed=1)
    np.testing.assert_array_equal(patches[3], again[3])


def test_foreground_patches_need_large_boxes(rng):
    corpus = _noise_corpus(rng, [Annotation(BoundingBox(10, 10, 5, 5))])
    with pytest.raises(InsufficientDataError):
        extract_patches(corpus, 10, origin="foreground")
    with pytest.raises(InvalidInputError):
        extract_patches(corpus, 10, origin="sky")


def test_foreground_and_background_patches(small_corpus):
    fg = extract_patches(small_corpus, 20, origin="foreground", seed=4)
    bg = extract_patches(small_corpus, 20, origin="background", seed=4)
    assert fg[0].shape[1:] == bg[0].shape[1:] == (10, 10)
    assert 0 < len(fg[0]) <= 20 and 0 < len(bg[0]) <= 20
    # warm targets raise the U channel
    assert fg[1].mean() > bg[1].mean()


def test_corpus_subsample(small_corpus):
    assert [e.image_id for e in small_corpus.subsample(2).entries] == ["train/00000", "train/00002"]
    with pytest.raises(InvalidInputError):
        small_corpus.subsample(0)
    with pytest.raises(InvalidInputError):
        small_corpus.entry("nope")
