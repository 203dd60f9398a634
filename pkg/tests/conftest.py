import numpy as np
import pytest

from fcf.services.detector import BoundingBox, PyramidSpec
from fcf.services.evaluation import Annotation
from fcf.services.featuremap import FeatureLayout
from fcf.services.filterbank import make_checkerboards, make_uniform
from fcf.services.forest import TrainData, boost
from fcf.services.synthetic import SynthSpec, make_synthetic
from fcf.services.training import MiningOptions
from fcf.storage.images import write_image
from fcf.utils.rng import make_rng

# Scaled-down model for fast pipeline tests: 12x24 window, 2 px cells.
SMALL_WINDOW = (12, 24)


@pytest.fixture
def rng():
    return make_rng(1234, "tests")


@pytest.fixture
def small_spec():
    return PyramidSpec(
        scales_per_octave=4,
        min_object_height=30.0,
        max_object_height=90.0,
        window=SMALL_WINDOW,
    )


@pytest.fixture
def small_synth():
    return SynthSpec(
        width=96,
        height=96,
        n_images=4,
        targets_min=1,
        targets_max=2,
        min_height=40.0,
        max_height=60.0,
        distractors=2,
        occlusion_prob=0.0,
    )


@pytest.fixture
def small_corpus(small_synth):
    return make_synthetic(small_synth, seed=7, split="train")


@pytest.fixture
def small_bank():
    return make_checkerboards(2, 2, cell_px=2)


@pytest.fixture
def small_mining():
    return MiningOptions(initial_negatives=40, negatives_per_round=20, stride=2)


@pytest.fixture
def uniform_forest(rng):
    """A 10-tree forest over the features of a uniform bank and a 60x120 window."""
    bank = make_uniform()
    layout = FeatureLayout.build(bank, (60, 120))
    features = rng.normal(size=(80, len(layout)))
    labels = np.where(np.arange(80) < 40, 1.0, -1.0)
    features[:40, :50] += 1.0
    data = TrainData.from_matrix(features, labels, layout.indices)
    return boost(data, 10, depth=2, bank=bank, window=(60, 120))


@pytest.fixture
def perfect_fixture(tmp_path):
    """Two annotated images on disk plus a manifest; returns (manifest path, annotations by image)."""
    boxes = {
        "a": [BoundingBox(10, 20, 30, 60), BoundingBox(80, 10, 40, 80)],
        "b": [BoundingBox(50, 30, 25, 70)],
    }
    lines = ["fcf-manifest 1", "id perfect", "split test"]
    for name, items in boxes.items():
        write_image(tmp_path / f"{name}.png", np.full((120, 160, 3), 0.5))
        lines.append(f"image {name}.png")
        lines.extend(f"box {b.x:g} {b.y:g} {b.w:g} {b.h:g} 0 0" for b in items)
    manifest = tmp_path / "test.manifest"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    annos = {name: [Annotation(box=b) for b in items] for name, items in boxes.items()}
    return manifest, annos
