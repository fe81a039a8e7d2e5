"""
Module provides the command line interface of pathomil.

Every option can be given as flag or in a TOML configuration file (`--config`) -- either
at the top level or in a table named after the subcommand. Flags override the file, the
file overrides the built-in defaults.
"""
import sys
import os
import argparse
import logging
import numpy as np
import matplotlib
import matplotlib.pyplot as plt

from .exceptions import FormatError, ManifestError, LeakageError, TrainingError, \
    NumericalError, UsageError
from .serialization import atomic_write, to_stable_json
from .utils import create_parent_if_not_exist, slide_id_from_path
from .wsi.raster import RasterImage, build_pyramid, read_ppm, read_pgm, write_ppm, write_pgm
from .wsi.segmentation import SegmentationConfig, BinaryMask, segment_tissue, \
    render_mask_overlay
from .wsi.patching import extract_patch_grid
from .wsi.synthetic_slide import generate_synthetic_slide
from .data.bag import FeatureBag
from .data.manifest import load_manifest, assert_split, SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST, \
    SPLIT_UNASSIGNED
from .data.synthetic import SyntheticSpec, generate_synthetic_dataset
from .data.descriptors import handcrafted_patch_features
from .models.mil_model import MilModel, MODEL_KINDS
from .models.clam import KIND_CLAM_SB
from .harness.train_config import TrainConfig
from .harness.training import train_model, predict_bags, write_history_csv, \
    plot_learning_curves
from .harness.cross_validation import cross_validate, DEVELOPMENT_SPLITS
from .metrics import evaluate_metrics, plot_confusion_matrix
from .gbdt.ensemble import GBDTConfig, TreeEnsemble, train_ensemble, top_features
from .gbdt.enhanced_features import build_gbdt_inputs
from .heatmap import OverlayConfig, RESAMPLE_MODES, render_heatmap

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


def _int_list(value) -> list[int]:
    if isinstance(value, str):
        try:
            return [int(v) for v in value.split(",")]
        except ValueError as ex:
            raise argparse.ArgumentTypeError(f"invalid integer list '{value}'") from ex
    if isinstance(value, (list, tuple)) and all(isinstance(v, int) for v in value):
        return list(value)
    raise argparse.ArgumentTypeError(f"invalid integer list '{value}'")


class Option():
    """
    Option of a subcommand.

    Parameters
    ----------
    name : `str`
        Name -- the flag is "--<name>" with underscores replaced by dashes.
    kind : `type` or `callable`
        Conversion of the value -- `bool` options are switches.
    default : `Any`
        Built-in default.
    help : `str`
        Help text.
    required : `bool`, optional
        If True, the option must be set by a flag or the configuration file.

        The default is False.
    choices : `list`, optional
        Admissible values.

        The default is None.
    """
    def __init__(self, name: str, kind, default, help: str, required: bool = False,
                 choices: list = None):
        self.name = name
        self.kind = kind
        self.default = default
        self.help = help
        self.required = required
        self.choices = choices

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    def convert(self, value):
        """
        Converts a value taken from the configuration file.
        """
        if self.kind is bool:
            if not isinstance(value, bool):
                raise UsageError(f"{self.flag} must be a boolean but not '{value}'")
            return value
        try:
            value = self.kind(value)
        except (TypeError, ValueError, argparse.ArgumentTypeError) as ex:
            raise UsageError(f"{self.flag}: invalid value '{value}'") from ex
        if self.choices is not None and value not in self.choices:
            raise UsageError(f"{self.flag}: invalid choice '{value}' (choose from " +
                             f"{', '.join(map(str, self.choices))})")
        return value

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        if self.required:
            default = "required"
        elif self.default is None:
            default = "none"
        else:
            default = self.default
        help_text = f"{self.help} (default: {default})".replace("%", "%%")
        if self.kind is bool:
            parser.add_argument(self.flag, dest=self.name, action="store_true",
                                default=argparse.SUPPRESS, help=help_text)
        else:
            parser.add_argument(self.flag, dest=self.name, type=self.kind,
                                choices=self.choices, default=argparse.SUPPRESS,
                                help=help_text)


COMMON_OPTIONS = [Option("config", str, None, "TOML configuration file"),
                  Option("seed", int, 42, "seed of all random decisions"),
                  Option("verbose", bool, False, "log progress information")]

MODEL_OPTIONS = [Option("model", str, KIND_CLAM_SB, "model kind", choices=list(MODEL_KINDS)),
                 Option("lr", float, None, "learning rate (model-specific if none)"),
                 Option("reg", float, None, "L2 regularization (model-specific if none)"),
                 Option("dropout", float, None, "dropout rate (model-specific if none)"),
                 Option("max_epochs", int, None, "maximum number of epochs " +
                        "(model-specific if none)"),
                 Option("warmup_epochs", int, None, "learning rate warmup epochs " +
                        "(model-specific if none)"),
                 Option("patience", int, None, "early stopping patience " +
                        "(model-specific if none)"),
                 Option("bag_weight", float, .5, "weight of the bag loss (CLAM-SB)"),
                 Option("n_pseudo", int, 8, "pseudo-labeled instances per side (CLAM-SB)"),
                 Option("focal_gamma", float, 2., "focusing exponent of the focal loss"),
                 Option("smoothing", float, .1, "label smoothing factor"),
                 Option("standardize", bool, False, "standardize features with statistics " +
                        "of the training bags"),
                 Option("plot_dir", str, None, "folder for learning curve plots"),
                 Option("train_config", str, None, "saved training configuration " +
                        "(.pmil_train) used instead of the model options")]

GBDT_OPTIONS = [Option("n_rounds", int, 200, "number of boosting rounds"),
                Option("learning_rate", float, .1, "shrinkage of every tree"),
                Option("max_depth", int, 6, "maximum tree depth"),
                Option("reg_lambda", float, 1., "L2 penalty on leaf weights"),
                Option("gamma_leaf", float, 0., "penalty per leaf"),
                Option("min_child_hessian", float, 1., "minimum hessian sum of a child"),
                Option("concat_embedding", bool, False, "append the bag embedding to the " +
                       "enhanced features"),
                Option("gbdt_config", str, None, "saved tree configuration (.pmil_gbdt) " +
                       "used instead of the tree options")]

COMMANDS = {
    "segment": ("segment the tissue of a slide",
                [Option("slide", str, None, "slide PPM file", required=True),
                 Option("mask_out", str, None, "output mask PGM file", required=True),
                 Option("overlay_out", str, None, "output overlay PPM file"),
                 Option("target_downsample", float, 32., "downsample factor of the " +
                        "segmentation level"),
                 Option("min_area", int, 500, "minimum tissue component area in pixels"),
                 Option("min_saturation", int, 20, "lower bound on the saturation threshold"),
                 Option("min_gradient", int, 10, "lower bound on the gradient threshold")]),
    "patch": ("extract patches and store their features as BAG1 file",
              [Option("slide", str, None, "slide PPM file", required=True),
               Option("mask", str, None, "tissue mask PGM file", required=True),
               Option("out", str, None, "output BAG1 file", required=True),
               Option("label", int, None, "slide label", required=True, choices=[0, 1, 2]),
               Option("slide_id", str, None, "slide ID (file name of the slide if none)"),
               Option("patch_size", int, 256, "patch side in level-0 pixels"),
               Option("coverage_threshold", float, .5, "minimum tissue fraction of a patch"),
               Option("features", str, None, "BAG1 file with external features of the " +
                      "same patches (handcrafted descriptors if none)"),
               Option("grid_out", str, None, "output text file of the patch grid")]),
    "synth": ("generate a synthetic dataset",
              [Option("out", str, None, "output folder", required=True),
               Option("n_per_class", _int_list, [105, 21, 84], "number of bags per class"),
               Option("feature_dim", int, 64, "feature dimensionality"),
               Option("min_instances", int, 50, "minimum number of instances per bag"),
               Option("max_instances", int, 200, "maximum number of instances per bag"),
               Option("signal_fraction", float, .2, "fraction of signal instances"),
               Option("noise_sigma", float, 1., "standard deviation of the noise"),
               Option("test_fraction", float, 0., "fraction of bags per class marked test"),
               Option("with_slide", bool, False, "also write a synthetic slide and its " +
                      "ground-truth tissue mask"),
               Option("slide_width", int, 4096, "width of the synthetic slide"),
               Option("slide_height", int, 3072, "height of the synthetic slide")]),
    "train": ("train a MIL model",
              [Option("manifest", str, None, "dataset manifest", required=True),
               Option("out", str, None, "output PMD1 model file", required=True),
               Option("history_out", str, None, "output history CSV file " +
                      "(<out>_history.csv if none)")] + MODEL_OPTIONS),
    "cv": ("cross-validate a MIL model",
           [Option("manifest", str, None, "dataset manifest", required=True),
            Option("out", str, None, "output report JSON file", required=True),
            Option("folds", int, 5, "number of folds"),
            Option("jobs", int, 1, "number of folds trained in parallel (-1: all CPUs)"),
            Option("history_dir", str, None, "folder for per-fold history CSV files")] +
           MODEL_OPTIONS),
    "eval": ("evaluate a MIL model on the test split",
             [Option("model", str, None, "PMD1 model file", required=True),
              Option("manifest", str, None, "manifest of test entries", required=True),
              Option("out", str, None, "output metrics JSON file", required=True),
              Option("plot_out", str, None, "output confusion matrix plot")]),
    "heatmap": ("render the attention heatmap of a slide",
                [Option("model", str, None, "PMD1 model file", required=True),
                 Option("bag", str, None, "BAG1 file of the slide", required=True),
                 Option("slide", str, None, "slide PPM file", required=True),
                 Option("out", str, None, "output overlay PPM file", required=True),
                 Option("alpha", float, .4, "opacity of the heatmap"),
                 Option("mode", str, None, "resampling (gaussian for CLAM-SB and " +
                        "bilinear for ABMIL if none)", choices=list(RESAMPLE_MODES)),
                 Option("sigma", float, 1., "Gaussian smoothing in grid cells"),
                 Option("class_index", int, None, "attention branch of ABMIL " +
                        "(predicted class if none)"),
                 Option("patch_size", int, 256, "patch side in level-0 pixels"),
                 Option("max_side", int, 4096, "longest side of the overlay"),
                 Option("side_file", str, None, "output text file with normalization " +
                        "range and rendering level"),
                 Option("heat_out", str, None, "output PPM file of the colored heat image")]),
    "gbdt-train": ("train the tree classifier on enhanced MIL features",
                   [Option("mil_model", str, None, "PMD1 model file", required=True),
                    Option("manifest", str, None, "dataset manifest", required=True),
                    Option("out", str, None, "output PGB1 file", required=True)] +
                   GBDT_OPTIONS),
    "gbdt-eval": ("evaluate the tree classifier on the test split",
                  [Option("mil_model", str, None, "PMD1 model file", required=True),
                   Option("gbdt", str, None, "PGB1 file", required=True),
                   Option("manifest", str, None, "manifest of test entries", required=True),
                   Option("out", str, None, "output metrics JSON file", required=True),
                   Option("concat_embedding", bool, False, "append the bag embedding to " +
                          "the enhanced features")])
}


class ArgumentParser(argparse.ArgumentParser):
    """
    Argument parser raising :class:`~pathomil.exceptions.UsageError` instead of exiting.
    """
    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> ArgumentParser:
    """
    Builds the argument parser of all subcommands.
    """
    parser = ArgumentParser(prog="pathomil",
                            description="Multiple instance learning for slide-level risk " +
                            "classification")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    for name, (description, options) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=description, description=description)
        for option in COMMON_OPTIONS + options:
            option.add_to(sub)
    return parser


class CommandInvocation():
    """
    Parsed and resolved command line.

    Parameters
    ----------
    command : `str`
        Subcommand.
    options : `dict`
        Resolved value of every option of the subcommand.
    explicit : `set[str]`
        Names of the options given as flags.
    """
    def __init__(self, command: str, options: dict, explicit: set[str]):
        self.__command = command
        self.__options = options
        self.__explicit = explicit

    @property
    def command(self) -> str:
        return self.__command

    @property
    def options(self) -> dict:
        return dict(self.__options)

    @property
    def explicit(self) -> set[str]:
        return set(self.__explicit)

    def __getitem__(self, name: str):
        return self.__options[name]

    def __str__(self) -> str:
        return f"{self.__command} " + \
            " ".join(f"{key}={value}" for key, value in sorted(self.__options.items()))


def _read_config_file(f_in: str, command: str, options: dict[str, Option]) -> dict:
    with open(f_in, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as ex:
            raise FormatError(f"'{f_in}' is not valid TOML: {ex}") from ex

    values = {}
    sections = [{k: v for k, v in data.items() if not isinstance(v, dict)}]
    if isinstance(data.get(command), dict):
        sections.append(data[command])
    for section in sections:
        for key, value in section.items():
            name = key.replace("-", "_")
            if name not in options or name == "config":
                raise UsageError(f"unknown option '{key}' in configuration file '{f_in}'")
            values[name] = options[name].convert(value)
    return values


def parse_invocation(argv: list[str]) -> CommandInvocation:
    """
    Parses a command line and resolves all options -- built-in defaults, overridden by the
    configuration file, overridden by flags.

    Parameters
    ----------
    argv : `list[str]`
        Arguments (without the program name).

    Returns
    -------
    :class:`~pathomil.cli.CommandInvocation`
        Invocation.
    """
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command", None)
    if command is None:
        raise UsageError("missing command (choose from " + ", ".join(COMMANDS) + ")")

    options = {o.name: o for o in COMMON_OPTIONS + COMMANDS[command][1]}
    resolved = {name: o.default for name, o in options.items()}
    if args.get("config") is not None:
        resolved.update(_read_config_file(args["config"], command, options))
    resolved.update(args)

    missing = [options[name].flag for name, o in options.items()
               if o.required and resolved[name] is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s) {', '.join(missing)}")

    return CommandInvocation(command, resolved, set(args.keys()))


def _reject_overrides(inv: CommandInvocation, options: list[Option], f_config: str) -> None:
    overridden = sorted(o.flag for o in options if o.name in inv.explicit)
    if overridden:
        raise UsageError(f"{', '.join(overridden)} can not be combined with the saved " +
                         f"configuration '{f_config}'")


def _train_config(inv: CommandInvocation) -> TrainConfig:
    if inv["train_config"] is not None:
        _reject_overrides(inv, [o for o in MODEL_OPTIONS
                                if o.name not in ("plot_dir", "train_config")],
                          inv["train_config"])
        config = TrainConfig.load_from_file(inv["train_config"])
        if "seed" in inv.explicit:
            config = config.with_seed(inv["seed"])
        return config

    return TrainConfig(model_kind=inv["model"], lr=inv["lr"], reg=inv["reg"],
                       dropout_rate=inv["dropout"], max_epochs=inv["max_epochs"],
                       warmup_epochs=inv["warmup_epochs"], patience=inv["patience"],
                       bag_weight=inv["bag_weight"], B=inv["n_pseudo"],
                       focal_gamma=inv["focal_gamma"], smoothing_eps=inv["smoothing"],
                       standardize=inv["standardize"], seed=inv["seed"])


def _gbdt_config(inv: CommandInvocation, n_classes: int) -> GBDTConfig:
    if inv["gbdt_config"] is None:
        return GBDTConfig(n_rounds=inv["n_rounds"], learning_rate=inv["learning_rate"],
                          max_depth=inv["max_depth"], reg_lambda=inv["reg_lambda"],
                          gamma_leaf=inv["gamma_leaf"],
                          min_child_hessian=inv["min_child_hessian"], n_classes=n_classes)

    _reject_overrides(inv, [o for o in GBDT_OPTIONS
                            if o.name not in ("concat_embedding", "gbdt_config")],
                      inv["gbdt_config"])
    config = GBDTConfig.load_from_file(inv["gbdt_config"])
    if config.n_classes != n_classes:
        raise UsageError(f"'{inv['gbdt_config']}' is configured for {config.n_classes} " +
                         f"classes but the MIL model predicts {n_classes}")
    return config


def _save_plot(ax, f_out: str) -> None:
    create_parent_if_not_exist(f_out)
    ax.figure.savefig(f_out)
    plt.close(ax.figure)


def _mask_level(comments: list[str], f_in: str) -> int:
    for comment in comments:
        if comment.startswith("level="):
            try:
                return int(comment[len("level="):])
            except ValueError:
                break
    raise FormatError(f"'{f_in}' does not record the level of the mask")


def _write_metrics(report, f_out: str) -> None:
    create_parent_if_not_exist(f_out)
    atomic_write(f_out, to_stable_json(report.to_dict()) + "\n")


def _load_test_bags(f_manifest: str) -> list[FeatureBag]:
    manifest = load_manifest(f_manifest)
    if len(manifest) == 0:
        raise ManifestError(f"'{f_manifest}' contains no entries")
    assert_split(manifest.entries, (SPLIT_TEST,))
    return manifest.load_bags()


def run_segment(inv: CommandInvocation) -> int:
    img, _ = read_ppm(inv["slide"])
    pyr = build_pyramid(img)
    cfg = SegmentationConfig(target_downsample=inv["target_downsample"],
                             min_component_area_px=inv["min_area"],
                             min_saturation=inv["min_saturation"],
                             min_gradient=inv["min_gradient"])
    mask = segment_tissue(pyr, cfg)
    logger.info("Tissue mask at level %d covers %.4f of the slide", mask.level, mask.coverage)

    create_parent_if_not_exist(inv["mask_out"])
    write_pgm(inv["mask_out"], mask.to_image(), [f"level={mask.level}"])
    if inv["overlay_out"] is not None:
        create_parent_if_not_exist(inv["overlay_out"])
        write_ppm(inv["overlay_out"], render_mask_overlay(pyr.level(mask.level), mask),
                  [f"level={mask.level}"])
    return EXIT_OK


def run_patch(inv: CommandInvocation) -> int:
    img, _ = read_ppm(inv["slide"])
    mask_img, comments = read_pgm(inv["mask"])
    mask = BinaryMask.from_image(mask_img, _mask_level(comments, inv["mask"]), img.width,
                                 img.height)
    grid = extract_patch_grid(mask, inv["patch_size"], inv["coverage_threshold"])
    if len(grid) == 0:
        raise ValueError(f"No patch of '{inv['slide']}' reaches the coverage threshold")
    logger.info("Extracted %d patches", len(grid))

    slide_id = inv["slide_id"] or slide_id_from_path(inv["slide"])
    if inv["features"] is None:
        features = handcrafted_patch_features(img, grid, mask)
    else:
        external = FeatureBag.load(inv["features"])
        if not np.array_equal(external.coords, grid.coords):
            raise FormatError(f"Patch coordinates of '{inv['features']}' do not match " +
                              "the extracted grid")
        features = external.features

    create_parent_if_not_exist(inv["out"])
    FeatureBag(slide_id, inv["label"], grid.coords, features).save(inv["out"])
    if inv["grid_out"] is not None:
        create_parent_if_not_exist(inv["grid_out"])
        grid.save_text(inv["grid_out"])
    return EXIT_OK


def run_synth(inv: CommandInvocation) -> int:
    spec = SyntheticSpec(n_bags_per_class=inv["n_per_class"], feature_dim=inv["feature_dim"],
                         min_instances=inv["min_instances"],
                         max_instances=inv["max_instances"],
                         signal_fraction=inv["signal_fraction"],
                         noise_sigma=inv["noise_sigma"], seed=inv["seed"],
                         test_fraction=inv["test_fraction"])
    dataset = generate_synthetic_dataset(spec, verbose=inv["verbose"])
    f_manifest = dataset.save(inv["out"])
    logger.info("Wrote %d bags and %s", len(dataset), f_manifest)

    if inv["with_slide"]:
        slide, truth = generate_synthetic_slide(inv["slide_width"], inv["slide_height"],
                                                seed=inv["seed"])
        write_ppm(os.path.join(inv["out"], "slide.ppm"), slide)
        write_pgm(os.path.join(inv["out"], "slide_truth.pgm"),
                  RasterImage(np.asarray(truth, dtype=np.uint8) * 255), ["level=0"])
    return EXIT_OK


def run_train(inv: CommandInvocation) -> int:
    config = _train_config(inv)
    manifest = load_manifest(inv["manifest"])
    train_entries = manifest.by_split(SPLIT_TRAIN, SPLIT_UNASSIGNED)
    val_entries = manifest.by_split(SPLIT_VAL)
    assert_split(train_entries + val_entries, DEVELOPMENT_SPLITS)
    if len(train_entries) == 0:
        raise ManifestError(f"'{inv['manifest']}' contains no training entries")

    result = train_model(manifest.load_bags(train_entries), manifest.load_bags(val_entries),
                         config, verbose=inv["verbose"])
    logger.info("Training finished: %s", result)

    create_parent_if_not_exist(inv["out"])
    result.model.save(inv["out"])
    f_config = config.save_to_file(os.path.splitext(inv["out"])[0])
    logger.info("Training configuration written to %s", f_config)
    f_history = inv["history_out"] or os.path.splitext(inv["out"])[0] + "_history.csv"
    create_parent_if_not_exist(f_history)
    write_history_csv(result.history, f_history)
    if inv["plot_dir"] is not None:
        _save_plot(plot_learning_curves(result.history, show=False),
                   os.path.join(inv["plot_dir"], "learning_curves.png"))
    return EXIT_OK


def run_cv(inv: CommandInvocation) -> int:
    config = _train_config(inv)
    manifest = load_manifest(inv["manifest"])
    report = cross_validate(manifest, config, k=inv["folds"], n_jobs=inv["jobs"],
                            history_dir=inv["history_dir"], verbose=inv["verbose"])
    logger.info("Cross-validation results:\n%s", report)

    create_parent_if_not_exist(inv["out"])
    report.save(inv["out"])
    if inv["plot_dir"] is not None:
        for result in report.results:
            _save_plot(plot_learning_curves(result.history, show=False),
                       os.path.join(inv["plot_dir"], f"fold_{result.fold}_learning_curves.png"))
    return EXIT_OK


def run_eval(inv: CommandInvocation) -> int:
    model = MilModel.load(inv["model"])
    bags = _load_test_bags(inv["manifest"])
    report = evaluate_metrics(predict_bags(model, bags), np.array([bag.label for bag in bags]))
    logger.info("Test metrics: %s", report)

    _write_metrics(report, inv["out"])
    if inv["plot_out"] is not None:
        _save_plot(plot_confusion_matrix(report, show=False), inv["plot_out"])
    return EXIT_OK


def run_heatmap(inv: CommandInvocation) -> int:
    model = MilModel.load(inv["model"])
    bag = FeatureBag.load(inv["bag"])
    img, _ = read_ppm(inv["slide"])
    config = OverlayConfig(alpha=inv["alpha"], mode=inv["mode"], sigma=inv["sigma"],
                           class_index=inv["class_index"], max_side=inv["max_side"])
    rendering = render_heatmap(model, bag, build_pyramid(img), config, inv["patch_size"])

    for f_out in (inv["out"], inv["side_file"], inv["heat_out"]):
        if f_out is not None:
            create_parent_if_not_exist(f_out)
    rendering.save(inv["out"], inv["side_file"], inv["heat_out"])
    return EXIT_OK


def run_gbdt_train(inv: CommandInvocation) -> int:
    mil = MilModel.load(inv["mil_model"])
    manifest = load_manifest(inv["manifest"])
    entries = manifest.by_split(*DEVELOPMENT_SPLITS)
    assert_split(entries, DEVELOPMENT_SPLITS)
    if len(entries) == 0:
        raise ManifestError(f"'{inv['manifest']}' contains no training entries")
    bags = manifest.load_bags(entries)

    X, names = build_gbdt_inputs(mil, [bag.features for bag in bags], inv["concat_embedding"])
    config = _gbdt_config(inv, mil.n_classes)
    ensemble = train_ensemble(X, np.array([bag.label for bag in bags]), config, names,
                              verbose=inv["verbose"])
    logger.info("Most important features: %s", top_features(ensemble, 5))

    create_parent_if_not_exist(inv["out"])
    ensemble.save(inv["out"])
    config.save_to_file(os.path.splitext(inv["out"])[0])
    return EXIT_OK


def run_gbdt_eval(inv: CommandInvocation) -> int:
    mil = MilModel.load(inv["mil_model"])
    ensemble = TreeEnsemble.load(inv["gbdt"])
    bags = _load_test_bags(inv["manifest"])

    X, _ = build_gbdt_inputs(mil, [bag.features for bag in bags], inv["concat_embedding"])
    if X.shape[1] != ensemble.n_features:
        raise UsageError(f"The tree classifier expects {ensemble.n_features} features " +
                         f"but got {X.shape[1]} -- check --concat-embedding")
    report = evaluate_metrics(ensemble.predict_proba(X), np.array([bag.label for bag in bags]))
    logger.info("Test metrics: %s", report)

    _write_metrics(report, inv["out"])
    return EXIT_OK


RUNNERS = {"segment": run_segment, "patch": run_patch, "synth": run_synth,
           "train": run_train, "cv": run_cv, "eval": run_eval, "heatmap": run_heatmap,
           "gbdt-train": run_gbdt_train, "gbdt-eval": run_gbdt_eval}


def execute(inv: CommandInvocation) -> int:
    """
    Runs a parsed command.

    Parameters
    ----------
    inv : :class:`~pathomil.cli.CommandInvocation`
        Invocation.

    Returns
    -------
    `int`
        Exit code -- 0 on success.
    """
    logger.debug("Running %s", inv)
    return RUNNERS[inv.command](inv)


def exit_code(ex: BaseException) -> int:
    """
    Maps an exception to an exit code -- 1 for usage errors (including leakage refusals
    and invalid option values), 2 for I/O and format errors, 3 for numerical and training
    failures.
    """
    if isinstance(ex, (TrainingError, NumericalError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(ex, (OSError, FormatError, ManifestError)):
        return EXIT_IO
    return EXIT_USAGE


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)


def main(argv: list[str] = None) -> int:
    """
    Entry point of the command line interface.

    Parameters
    ----------
    argv : `list[str]`, optional
        Arguments (without the program name) -- `sys.argv[1:]` if None.

        The default is None.

    Returns
    -------
    `int`
        Exit code.
    """
    argv = sys.argv[1:] if argv is None else argv
    matplotlib.use("Agg")
    try:
        inv = parse_invocation(argv)
        _configure_logging(inv["verbose"])
        return execute(inv)
    except (UsageError, LeakageError, ManifestError, FormatError, OSError, TrainingError,
            NumericalError, FloatingPointError, ValueError, TypeError) as ex:
        msg = " ".join(str(ex).split())
        print(f"pathomil: error: {type(ex).__name__}: {msg}", file=sys.stderr)
        return exit_code(ex)
