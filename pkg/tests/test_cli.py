import pytest

from fcf.main import main
from fcf.services.detector import Detection
from fcf.storage.banks import load_bank, parse_bank
from fcf.storage.detections import load_detections, save_detections
from fcf.storage.models import load_model, save_model


def _settings(**values):
    args = []
    for key, value in values.items():
        args += ["--set", f"{key}={value}"]
    return args


SMALL_SYNTH = _settings(
    SEED=5,
    SYNTH_WIDTH=96,
    SYNTH_HEIGHT=96,
    SYNTH_MIN_HEIGHT=40,
    SYNTH_MAX_HEIGHT=60,
    SYNTH_TARGETS_MAX=2,
    SYNTH_DISTRACTORS=2,
)

SMALL_MODEL = _settings(
    TRAINING_WINDOW_WIDTH=12,
    TRAINING_WINDOW_HEIGHT=24,
    TRAINING_INITIAL_NEGATIVES=40,
    TRAINING_NEGATIVES_PER_ROUND=20,
    DETECTOR_STRIDE=2,
    DETECTOR_SCALES_PER_OCTAVE=4,
    DETECTOR_MIN_OBJECT_HEIGHT=30,
    DETECTOR_MAX_OBJECT_HEIGHT=90,
)


def _synth(out_dir, train=3, test=2):
    return main(["synth", "--out-dir", str(out_dir), "--train-images", str(train), "--test-images", str(test)] + SMALL_SYNTH)


def test_generate_writes_a_bank_with_header(tmp_path):
    path = tmp_path / "cb.bank"
    assert main(["filters", "generate", "--family", "checkerboards", "--max", "4x4", "-o", str(path)]) == 0
    text = path.read_text(encoding="utf-8")
    assert text.startswith("# fcf filters generate\n")
    assert "# FILTERBANK_FAMILY=checkerboards" in text
    assert len(load_bank(path)) == 61


def test_generate_prints_without_output(capsys):
    assert main(["filters", "generate", "--family", "uniform"]) == 0
    bank = parse_bank(capsys.readouterr().out)
    assert len(bank) == 1


def test_inspect_lists_filters(tmp_path, capsys):
    path = tmp_path / "cb.bank"
    main(["filters", "generate", "--max", "2x2", "-o", str(path)])
    capsys.readouterr()
    assert main(["filters", "inspect", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# family=checkerboards filters=7 ")
    for filter_id in ("u1x1", "h1x2s1", "c2x2"):
        assert filter_id in out


def test_preview_writes_svg(tmp_path):
    path = tmp_path / "preview.svg"
    assert main(["filters", "preview", "--set", "FILTERBANK_MAX_ROWS=2", "--set", "FILTERBANK_MAX_COLS=2", "-o", str(path)]) == 0
    assert b"<svg" in path.read_bytes()


def test_bad_size_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["filters", "generate", "--max", "4by4"])
    assert info.value.code == 2


def test_unknown_keys_fail_the_command(tmp_path):
    assert main(["eval", "--detections", str(tmp_path / "d.txt"), "--set", "BOGUS=1"]) == 1


def test_perfect_detections_score_zero_miss_rate(tmp_path, perfect_fixture, capsys):
    manifest, annos = perfect_fixture
    dets = [Detection(a.box, 1.0, image_id=name) for name, items in annos.items() for a in items]
    path = tmp_path / "dets.txt"
    save_detections(dets, path)
    out_dir = tmp_path / "curve"
    assert main(["eval", "--detections", str(path), "--manifest", str(manifest), "--out-dir", str(out_dir)]) == 0
    assert capsys.readouterr().out.strip() == "caltech-mr 0.0"
    assert (out_dir / "curve.csv").is_file() and (out_dir / "curve.svg").is_file()

    assert main(["eval", "--detections", str(path), "--manifest", str(manifest), "--protocol", "kitti-ap"]) == 0
    assert capsys.readouterr().out.strip() == "kitti-ap 1.0"


def test_eval_needs_ground_truth(tmp_path):
    path = tmp_path / "dets.txt"
    save_detections([], path)
    assert main(["eval", "--detections", str(path)]) == 1


def test_stats_counts_split_nodes(tmp_path, uniform_forest, capsys):
    model = tmp_path / "m.model"
    save_model(uniform_forest, model, header=["fcf train"])
    out_dir = tmp_path / "stats"
    assert main(["stats", "--model", str(model), "--out-dir", str(out_dir)]) == 0

    n_splits = sum(1 for line in model.read_text(encoding="utf-8").splitlines() if line.startswith("split "))
    assert f"split_nodes={n_splits}" in capsys.readouterr().out
    usage = (out_dir / "usage.txt").read_text(encoding="utf-8")
    assert f"# split_nodes={n_splits}" in usage
    for channel in range(10):
        assert (out_dir / f"influence_c{channel}.grid").is_file()
    for name in ("influence_total.grid", "influence_channels.svg", "influence_total.svg"):
        assert (out_dir / name).is_file()


def test_detect_without_images(tmp_path, uniform_forest):
    model = tmp_path / "m.model"
    save_model(uniform_forest, model)
    assert main(["detect", "--model", str(model), "-o", str(tmp_path / "d.txt")]) == 1


def test_synth_is_reproducible(tmp_path):
    first, second = tmp_path / "one", tmp_path / "two"
    assert _synth(first, train=2, test=1) == 0
    assert _synth(second, train=2, test=1) == 0
    names = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert len(names) == 2 + 2 + 1
    assert names == sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_learn_writes_a_pca_bank(tmp_path):
    data = tmp_path / "data"
    _synth(data, train=2, test=1)
    path = tmp_path / "pca.bank"
    args = ["filters", "learn", "--manifest", str(data / "train.manifest"), "--k", "2", "--patches", "1000", "-o", str(path)]
    assert main(args) == 0
    bank = load_bank(path)
    assert bank.per_channel
    assert len(bank) == 20


def test_train_detect_eval_pipeline(tmp_path, capsys):
    data = tmp_path / "data"
    assert _synth(data) == 0
    bank = tmp_path / "cb.bank"
    assert main(["filters", "generate", "--max", "2x2", "--cell-px", "2", "-o", str(bank)]) == 0

    model = tmp_path / "m.model"
    stages = tmp_path / "stages"
    train = ["train", "--manifest", str(data / "train.manifest"), "--bank", str(bank), "--schedule", "4,8"]
    assert main(train + ["--stage-dir", str(stages), "-o", str(model)] + SMALL_MODEL) == 0
    forest = load_model(model)
    assert 0 < len(forest) <= 8
    assert forest.window == (12, 24)
    assert sorted(p.name for p in stages.iterdir()) == ["stage0.model", "stage1.model"]
    assert "# BANK_ID=" in model.read_text(encoding="utf-8")

    dets = tmp_path / "dets.txt"
    assert main(["detect", "--model", str(model), "--manifest", str(data / "test.manifest"), "-o", str(dets)] + SMALL_MODEL) == 0
    for image_id, found in load_detections(dets).items():
        assert image_id.startswith("test/")
        assert all(d.score >= -1.0 for d in found)

    capsys.readouterr()
    assert main(["eval", "--detections", str(dets), "--manifest", str(data / "test.manifest"), "--subset", "all"]) == 0
    protocol, value = capsys.readouterr().out.split()
    assert protocol == "caltech-mr"
    assert 0.0 <= float(value) <= 1.0

    reduced = tmp_path / "reduced.bank"
    assert main(["filters", "reduce", "--model", str(model), "--n", "3", "-o", str(reduced)]) == 0
    assert 1 <= len(load_bank(reduced)) <= 3
