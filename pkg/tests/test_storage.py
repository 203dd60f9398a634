import numpy as np
import pytest

from fcf.exceptions import ParseError
from fcf.services.data import Corpus, CorpusEntry
from fcf.services.detector import BoundingBox, Detection
from fcf.services.evaluation import Annotation
from fcf.services.featuremap import FeatureLayout
from fcf.services.filterbank import learn_pca, make_checkerboards, make_random
from fcf.services.forest import matrix_fetch
from fcf.storage.banks import dump_bank, load_bank, parse_bank, save_bank
from fcf.storage.detections import load_detections, save_detections
from fcf.storage.grids import load_grid, parse_grid, save_grid
from fcf.storage.images import image_size, read_image, write_image
from fcf.storage.manifests import dump_manifest, load_corpus, parse_manifest
from fcf.storage.models import dump_model, load_model, parse_model, save_model

BANK_TEXT = """\
# generated by hand
fcf-bank 1
family informed
cell_px 6
eval_stride_px 6
per_channel 0
filters 2
filter a 1 2 -
1 -1
filter b 2 2 -
1 0
0 -1 1
"""


@pytest.mark.parametrize("bank", [make_checkerboards(4, 4), make_random(20, seed=5)], ids=["checkerboards", "random"])
def test_bank_files_read_back(tmp_path, bank):
    path = tmp_path / "bank.txt"
    save_bank(bank, path, header=["fcf filters generate"])
    loaded = load_bank(path)
    assert loaded == bank
    assert loaded.bank_id == bank.bank_id


def test_pca_bank_reads_back(rng):
    patches = {c: rng.normal(size=(1000, 10, 10)) for c in range(10)}
    bank = learn_pca({"all": patches}, k=2)
    text = dump_bank(bank)
    assert parse_bank(text) == bank
    assert dump_bank(parse_bank(text)) == text


def test_bank_errors_name_line_and_filter():
    with pytest.raises(ParseError) as info:
        parse_bank(BANK_TEXT, path="bank.txt")
    err = info.value
    assert err.line == 12
    assert err.filter_id == "b"
    assert "dimension mismatch" in str(err)
    assert "bank.txt:line 12:filter b" in str(err)


def test_bank_rejects_unknown_family():
    with pytest.raises(ParseError, match="unknown family"):
        parse_bank(BANK_TEXT.replace("informed", "gabor"))


def test_bank_rejects_missing_header():
    with pytest.raises(ParseError):
        parse_bank("family informed\n")


def test_model_files_score_identically(tmp_path, uniform_forest, rng):
    path = tmp_path / "model.txt"
    save_model(uniform_forest, path, header=["fcf train", "SEED=1"])
    loaded = load_model(path)
    assert dump_model(loaded) == dump_model(uniform_forest)

    layout = FeatureLayout.build(uniform_forest.bank, uniform_forest.window)
    column_of = {idx: col for col, idx in enumerate(layout.indices)}
    features = rng.normal(size=(50, len(layout)))
    np.testing.assert_array_equal(
        loaded.score(matrix_fetch(features, column_of), 50),
        uniform_forest.score(matrix_fetch(features, column_of), 50),
    )


def test_model_cascade_reads_back(uniform_forest):
    forest = uniform_forest.with_cascade([-0.5] * len(uniform_forest))
    loaded = parse_model(dump_model(forest))
    assert loaded.cascade == tuple([-0.5] * len(uniform_forest))


def test_truncated_model_is_rejected(uniform_forest):
    lines = dump_model(uniform_forest).splitlines()
    with pytest.raises(ParseError):
        parse_model("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ParseError):
        parse_model("\n".join(lines + ["leaf 1"]) + "\n")


def test_model_rejects_unknown_filters(uniform_forest):
    text = dump_model(uniform_forest)
    first_split = next(line for line in text.splitlines() if line.startswith("split "))
    parts = first_split.split()
    parts[2] = "5"
    with pytest.raises(ParseError, match="unknown feature"):
        parse_model(text.replace(first_split, " ".join(parts), 1))


def test_detection_files_group_by_image(tmp_path):
    dets = [
        Detection(BoundingBox(1.5, 2, 30, 60), 0.123456789, image_id="b"),
        Detection(BoundingBox(3, 4, 30, 60), -0.5, image_id="a"),
        Detection(BoundingBox(5, 6, 30, 60), 0.25, image_id="b"),
    ]
    path = tmp_path / "dets.txt"
    save_detections(dets, path, header=["fcf detect"])
    loaded = load_detections(path)
    assert list(loaded) == ["b", "a"]
    assert [d.score for d in loaded["b"]] == [0.123457, 0.25]
    assert loaded["a"][0].box == BoundingBox(3, 4, 30, 60)


def test_detection_file_errors(tmp_path):
    path = tmp_path / "dets.txt"
    path.write_text("a 1 2 3\n", encoding="utf-8")
    with pytest.raises(ParseError, match="line 1"):
        load_detections(path)
    path.write_text("a 1 2 0 4 0.5\n", encoding="utf-8")
    with pytest.raises(ParseError):
        load_detections(path)


def test_grids_read_back(tmp_path):
    grid = np.arange(12, dtype=float).reshape(3, 4) / 4
    path = tmp_path / "g.grid"
    save_grid(grid, path, header=["CHANNEL=3"])
    np.testing.assert_array_equal(load_grid(path), grid)
    with pytest.raises(ParseError):
        parse_grid("fcf-grid 1\n2 2\n1 2\n")


def test_images_read_back(tmp_path, rng):
    img = np.round(rng.random((7, 9, 3)) * 255) / 255
    write_image(tmp_path / "x.png", img)
    assert image_size(tmp_path / "x.png") == (9, 7)
    np.testing.assert_allclose(read_image(tmp_path / "x.png"), img, atol=1e-12)
    gray = np.round(rng.random((5, 4)) * 255) / 255
    write_image(tmp_path / "g.png", gray)
    assert read_image(tmp_path / "g.png").shape == (5, 4)


def test_unreadable_image(tmp_path):
    path = tmp_path / "bad.png"
    path.write_bytes(b"not a png")
    with pytest.raises(ParseError):
        read_image(path)


def test_manifest_text_round_trip():
    corpus = Corpus(
        id="c",
        split="val",
        entries=(
            CorpusEntry("set00/a", "set00/a.png", (Annotation(BoundingBox(1, 2, 3.5, 7), occlusion=0.25),)),
            CorpusEntry("b", "b.png", (Annotation(BoundingBox(0, 0, 1, 1), ignore=True),)),
        ),
    )
    text = dump_manifest(corpus)
    parsed, numbers = parse_manifest(text)
    assert parsed == corpus
    assert numbers == [4, 6]


@pytest.mark.parametrize(
    "body,message",
    [
        ("box 1 2 3 4 0 0\n", "before any 'image'"),
        ("image a.png\nimage a.png\n", "duplicate"),
        ("image a.png\nbox 1 2 3 4 0 2\n", "ignore flag"),
        ("image a.png\nbox 1 2 3\n", "expected 'box"),
        ("image a.png\nbox 1 2 0 4 0 0\n", "positive"),
        ("picture a.png\n", "unknown line"),
    ],
)
def test_manifest_errors(body, message):
    with pytest.raises(ParseError, match=message):
        parse_manifest("fcf-manifest 1\nid x\nsplit test\n" + body)


def test_manifest_rejects_unknown_split():
    with pytest.raises(ParseError, match="split"):
        parse_manifest("fcf-manifest 1\nid x\nsplit holdout\n")


def test_loading_clamps_boxes_and_checks_images(tmp_path):
    write_image(tmp_path / "a.png", np.zeros((50, 40)))
    manifest = tmp_path / "m.manifest"
    manifest.write_text(
        "fcf-manifest 1\nid m\nsplit test\nimage a.png\nbox 30 10 20 20 0 0\nbox 60 10 5 5 0 0\n",
        encoding="utf-8",
    )
    corpus = load_corpus(manifest)
    first, second = corpus.entries[0].annotations
    assert first.box == BoundingBox(30, 10, 10, 20) and not first.ignore
    assert second.ignore

    manifest.write_text("fcf-manifest 1\nid m\nsplit test\nimage missing.png\n", encoding="utf-8")
    with pytest.raises(ParseError, match="missing image"):
        load_corpus(manifest)
