"""
Module provides tests to test the command line interface.
"""
import os
import json
import pytest

from pathomil.exceptions import UsageError, LeakageError, FormatError, ManifestError, \
    TrainingError
from pathomil.models import MilModel, KIND_CLAM_SB
from pathomil.data import FeatureBag, load_manifest
from pathomil.harness import TrainConfig
from pathomil.gbdt import GBDTConfig, TreeEnsemble
from pathomil.wsi import read_ppm
from pathomil.cli import main, parse_invocation, exit_code, EXIT_OK, EXIT_USAGE, EXIT_IO, \
    EXIT_NUMERIC

from .utils import get_temp_folder


def _synth(folder: str, seed: int = 7) -> str:
    assert main(["synth", "--out", folder, "--n-per-class", "5,5,5", "--feature-dim", "8",
                 "--min-instances", "10", "--max-instances", "20", "--test-fraction", ".2",
                 "--seed", str(seed)]) == EXIT_OK
    return os.path.join(folder, "manifest.json")


def _write_test_manifest(f_manifest: str) -> str:
    with open(f_manifest, "r", encoding="utf-8") as f:
        records = [r for r in json.load(f) if r.get("split") == "test"]
    f_out = os.path.join(os.path.dirname(f_manifest), "test_manifest.json")
    with open(f_out, "w", encoding="utf-8") as f:
        json.dump(records, f)
    return f_out


def test_unknown_command(capsys):
    assert main(["bogus"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert err.startswith("pathomil: error: UsageError:")
    assert "bogus" in err

    assert main([]) == EXIT_USAGE
    assert main(["train", "--out", "model.pmd"]) == EXIT_USAGE
    assert "--manifest" in capsys.readouterr().err


def test_exit_codes():
    assert exit_code(UsageError("x")) == EXIT_USAGE
    assert exit_code(LeakageError("x")) == EXIT_USAGE
    assert exit_code(ValueError("x")) == EXIT_USAGE
    assert exit_code(FileNotFoundError("x")) == EXIT_IO
    assert exit_code(FormatError("x")) == EXIT_IO
    assert exit_code(ManifestError("x")) == EXIT_IO
    assert exit_code(TrainingError("x", fold=2)) == EXIT_NUMERIC
    assert exit_code(FloatingPointError("x")) == EXIT_NUMERIC


def test_parse_invocation():
    inv = parse_invocation(["synth", "--out", "data", "--seed", "7"])
    assert inv.command == "synth"
    assert inv["seed"] == 7
    assert inv["n_per_class"] == [105, 21, 84]
    assert inv["feature_dim"] == 64
    assert inv.explicit == {"out", "seed"}

    f_config = os.path.join(get_temp_folder(), "config.toml")
    with open(f_config, "w", encoding="utf-8") as f:
        f.write("seed = 3\nlr = 0.5\n\n[train]\nmax-epochs = 4\n\n[cv]\nfolds = 3\n")

    inv = parse_invocation(["train", "--config", f_config, "--manifest", "m.json",
                            "--out", "model.pmd"])
    assert inv["lr"] == .5 and inv["seed"] == 3 and inv["max_epochs"] == 4

    inv = parse_invocation(["train", "--config", f_config, "--manifest", "m.json",
                            "--out", "model.pmd", "--lr", "0.001"])
    assert inv["lr"] == .001

    with open(f_config, "w", encoding="utf-8") as f:
        f.write("learning_speed = 3\n")
    with pytest.raises(UsageError):
        parse_invocation(["train", "--config", f_config, "--manifest", "m.json",
                          "--out", "model.pmd"])

    with open(f_config, "w", encoding="utf-8") as f:
        f.write("seed = [")
    with pytest.raises(FormatError):
        parse_invocation(["synth", "--config", f_config, "--out", "data"])

    with pytest.raises(UsageError):
        parse_invocation(["cv", "--manifest", "m.json", "--out", "cv.json", "--model", "vit"])


def test_train_and_eval(capsys):
    folder = os.path.join(get_temp_folder(), "cli-train")
    f_manifest = _synth(folder)
    assert len(load_manifest(f_manifest)) == 15

    f_model = os.path.join(folder, "model.pmd")
    assert main(["train", "--manifest", f_manifest, "--out", f_model, "--max-epochs", "2",
                 "--lr", "0.001"]) == EXIT_OK
    assert MilModel.load(f_model).kind == KIND_CLAM_SB
    assert os.path.isfile(os.path.join(folder, "model_history.csv"))

    # The full manifest contains development entries
    f_metrics = os.path.join(folder, "metrics.json")
    assert main(["eval", "--model", f_model, "--manifest", f_manifest,
                 "--out", f_metrics]) == EXIT_USAGE
    assert "LeakageError" in capsys.readouterr().err
    assert not os.path.exists(f_metrics)

    f_test_manifest = _write_test_manifest(f_manifest)
    assert main(["eval", "--model", f_model, "--manifest", f_test_manifest,
                 "--out", f_metrics]) == EXIT_OK
    with open(f_metrics, "r", encoding="utf-8") as f:
        metrics = json.load(f)
    assert metrics["n_samples"] == 3
    assert 0. <= metrics["accuracy"] <= 1.

    f_gbdt = os.path.join(folder, "model.pgb")
    assert main(["gbdt-train", "--mil-model", f_model, "--manifest", f_manifest,
                 "--out", f_gbdt, "--n-rounds", "5", "--max-depth", "2"]) == EXIT_OK
    assert main(["gbdt-eval", "--mil-model", f_model, "--gbdt", f_gbdt,
                 "--manifest", f_test_manifest, "--out", f_metrics]) == EXIT_OK
    assert main(["gbdt-eval", "--mil-model", f_model, "--gbdt", f_gbdt,
                 "--manifest", f_test_manifest, "--out", f_metrics,
                 "--concat-embedding"]) == EXIT_USAGE

    assert main(["eval", "--model", os.path.join(folder, "missing.pmd"),
                 "--manifest", f_test_manifest, "--out", f_metrics]) == EXIT_IO


def test_saved_configs(capsys):
    folder = os.path.join(get_temp_folder(), "cli-configs")
    f_manifest = _synth(folder)

    f_model = os.path.join(folder, "model.pmd")
    assert main(["train", "--manifest", f_manifest, "--out", f_model, "--max-epochs", "2",
                 "--lr", "0.001", "--seed", "9"]) == EXIT_OK
    f_train_config = os.path.join(folder, "model.pmil_train")
    config = TrainConfig.load_from_file(f_train_config)
    assert config.max_epochs == 2 and config.lr == .001 and config.seed == 9

    f_cv = os.path.join(folder, "cv.json")
    assert main(["cv", "--manifest", f_manifest, "--out", f_cv, "--folds", "3",
                 "--train-config", f_train_config]) == EXIT_OK
    with open(f_cv, "r", encoding="utf-8") as f:
        report = json.load(f)
    assert report["config"]["max_epochs"] == 2 and report["config"]["seed"] == 9

    assert main(["cv", "--manifest", f_manifest, "--out", f_cv, "--folds", "3",
                 "--train-config", f_train_config, "--seed", "4"]) == EXIT_OK
    with open(f_cv, "r", encoding="utf-8") as f:
        assert json.load(f)["config"]["seed"] == 4

    assert main(["cv", "--manifest", f_manifest, "--out", f_cv, "--folds", "3",
                 "--train-config", f_train_config, "--lr", "0.1"]) == EXIT_USAGE
    assert "--lr" in capsys.readouterr().err

    f_gbdt = os.path.join(folder, "trees.pgb")
    assert main(["gbdt-train", "--mil-model", f_model, "--manifest", f_manifest,
                 "--out", f_gbdt, "--n-rounds", "4", "--max-depth", "2"]) == EXIT_OK
    f_gbdt_config = os.path.join(folder, "trees.pmil_gbdt")
    assert GBDTConfig.load_from_file(f_gbdt_config) == TreeEnsemble.load(f_gbdt).config

    f_again = os.path.join(folder, "trees_again.pgb")
    assert main(["gbdt-train", "--mil-model", f_model, "--manifest", f_manifest,
                 "--out", f_again, "--gbdt-config", f_gbdt_config]) == EXIT_OK
    assert TreeEnsemble.load(f_again) == TreeEnsemble.load(f_gbdt)

    assert main(["gbdt-train", "--mil-model", f_model, "--manifest", f_manifest,
                 "--out", f_again, "--gbdt-config", f_gbdt_config,
                 "--n-rounds", "2"]) == EXIT_USAGE
    assert main(["train", "--manifest", f_manifest, "--out", f_model,
                 "--train-config", f_gbdt_config]) == EXIT_IO
    assert "FormatError" in capsys.readouterr().err


def test_cv_determinism():
    folder = os.path.join(get_temp_folder(), "cli-cv")
    f_manifest = _synth(folder)

    reports = []
    for name in ("cv_a.json", "cv_b.json"):
        f_out = os.path.join(folder, name)
        assert main(["cv", "--manifest", f_manifest, "--out", f_out, "--folds", "3",
                     "--max-epochs", "1", "--seed", "11"]) == EXIT_OK
        with open(f_out, "rb") as f:
            reports.append(f.read())
    assert reports[0] == reports[1]

    report = json.loads(reports[0])
    assert report["k"] == 3 and report["seed"] == 11
    assert sum(fold["n_samples"] for fold in report["folds"]) == 12


def test_manifest_errors(capsys):
    folder = os.path.join(get_temp_folder(), "cli-manifest")
    os.makedirs(folder, exist_ok=True)
    f_manifest = os.path.join(folder, "manifest.json")
    with open(f_manifest, "w", encoding="utf-8") as f:
        json.dump([{"slide_id": "a", "bag_path": "a.bag", "label": 0}], f)

    assert main(["train", "--manifest", f_manifest,
                 "--out", os.path.join(folder, "model.pmd")]) == EXIT_IO
    assert "ManifestError" in capsys.readouterr().err


@pytest.mark.slow
def test_slide_pipeline():
    folder = os.path.join(get_temp_folder(), "cli-slide")
    assert main(["synth", "--out", folder, "--n-per-class", "2,2,2", "--feature-dim", "4",
                 "--with-slide", "--slide-width", "1024", "--slide-height", "768"]) == EXIT_OK
    f_slide = os.path.join(folder, "slide.ppm")
    f_mask = os.path.join(folder, "slide_mask.pgm")
    assert main(["segment", "--slide", f_slide, "--mask-out", f_mask,
                 "--overlay-out", os.path.join(folder, "slide_mask.ppm"),
                 "--target-downsample", "4", "--min-area", "50"]) == EXIT_OK

    f_bag = os.path.join(folder, "slide.bag")
    assert main(["patch", "--slide", f_slide, "--mask", f_mask, "--out", f_bag,
                 "--label", "2", "--patch-size", "128",
                 "--grid-out", os.path.join(folder, "grid.txt")]) == EXIT_OK
    bag = FeatureBag.load(f_bag)
    assert bag.slide_id == "slide" and bag.label == 2
    assert bag.n_instances > 0 and bag.feature_dim == 30

    f_model = os.path.join(folder, "descriptor_model.pmd")
    MilModel.create(KIND_CLAM_SB, 30, seed=3, embed_dim=16, attn_hidden=8,
                    cls_hidden=8).save(f_model)
    f_overlay = os.path.join(folder, "heatmap.ppm")
    f_side = os.path.join(folder, "heatmap.txt")
    assert main(["heatmap", "--model", f_model, "--bag", f_bag, "--slide", f_slide,
                 "--out", f_overlay, "--patch-size", "128", "--max-side", "512",
                 "--side-file", f_side]) == EXIT_OK
    overlay, comments = read_ppm(f_overlay)
    assert (overlay.width, overlay.height) == (512, 384)
    assert "level=1" in comments
    with open(f_side, "r", encoding="utf-8") as f:
        assert "level 1" in f.read()
