"""Command-line entry point: one subcommand per pipeline stage.

Every stage reads and writes fixed artifact names inside a run directory
(``--out``), so later stages find earlier results by path. ``--in`` overrides
a stage's primary input. The resolved configuration of each invocation is
written to ``<run>/config-<command>.json`` and a one-line JSON summary is
printed on stdout.

Exit status: 0 success, 1 data/IO/check failure, 2 usage or configuration error.
"""

import argparse
import copy
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import formats
from .descriptor import DescriptorPipeline, contribution_map
from .errors import ConfigurationError, S2ICAError, StateError
from .imageio import load_image, save_image, to_grayscale
from .network import (
    MetricsLog,
    TrainConfig,
    TransferNetSpec,
    build_network,
    extract_conv_features,
    finetune,
    graft,
    load_model,
    pretrain,
    save_model,
    toy_spec,
    train_transfernet,
)
from .pipeline import image_patches
from .pyramid import PatchSpec, PyramidSpec
from .su import shuffle_alg1
from .svm import evaluate, load_svm, predict_many, save_confusion_csv, save_svm, train_svm
from .synth import SynthConfig, generate_dataset, generate_glyph_dataset, load_dataset, save_dataset

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "synth": {"canvas": 96, "train_per_class": 50, "test_per_class": 25, "layout_stress": True,
              "source_per_class": 60},
    "network": {"width": [8, 16], "hidden": 64},
    "pretrain": {"lr": 3e-4, "epochs": 20, "batch_size": 16},
    "transfer": {"lr": 1e-3, "epochs": 10, "batch_size": 32},
    "finetune": {"lr": 3e-4, "epochs": 5, "batch_size": 32},
    "su": {"blocks": 4, "prob": 0.5, "enabled": True},
    "patches": {"size": 32, "stride": 8, "train_stride": 16},
    "pyramid": {"base": 96, "scales": [0.75, 1.0, 1.25], "enabled": True},
    "pool": "max",
    "svm": {"C": 2000.0, "epochs": 1000, "normalize": True, "center": True},
    "heatmap": {"true_class": None},
}

# stage whose hyperparameters --epochs / --lr override
TRAIN_SECTION = {"pretrain": "pretrain", "train-transfernet": "transfer", "finetune": "finetune", "train-svm": "svm"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- configuration -------------------------------------------------------------------------


def _merge(base, override, path=""):
    for key, value in override.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {path + key!r} must be an object")
            _merge(base[key], value, path + key + ".")
        else:
            base[key] = value


def _scales(text):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("scales must be positive")
    return values


def resolve_config(command, args):
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigurationError(f"{args.config}: top level must be an object")
        _merge(cfg, user)
    flags = vars(args)

    def given(name):
        return flags.get(name) is not None

    section = TRAIN_SECTION.get(command)
    for key in ("seed", "threads"):
        if given(key):
            cfg[key] = flags[key]
    if given("epochs"):
        cfg[section]["epochs"] = flags["epochs"]
    if given("lr"):
        cfg[section]["lr"] = flags["lr"]
    if given("C"):
        cfg["svm"]["C"] = flags["C"]
    if given("blocks"):
        cfg["su"]["blocks"] = flags["blocks"]
    if given("su_prob"):
        cfg["su"]["prob"] = flags["su_prob"]
    if flags.get("no_su"):
        cfg["su"]["enabled"] = False
    if given("scales"):
        cfg["pyramid"]["scales"] = flags["scales"]
    if flags.get("no_pyramid"):
        cfg["pyramid"]["enabled"] = False
    if given("patch_size"):
        cfg["patches"]["size"] = flags["patch_size"]
    if given("stride"):
        cfg["patches"]["stride"] = flags["stride"]
    if given("pool"):
        cfg["pool"] = flags["pool"]
    if cfg["threads"] < 1:
        raise ConfigurationError("--threads must be at least 1")
    return cfg


def _train_config(cfg, section, seed_offset):
    s = cfg[section]
    return TrainConfig(lr=s["lr"], epochs=s["epochs"], batch_size=s["batch_size"], seed=cfg["seed"] + seed_offset)


def _patch_spec(cfg, stride_key="stride"):
    return PatchSpec(cfg["patches"]["size"], cfg["patches"][stride_key])


# -- artifacts -------------------------------------------------------------------------------


def _path(out, name):
    return os.path.join(out, name)


def _write_labels(path, labels):
    formats.atomic_write(path, "".join(f"{int(v)}\n" for v in labels).encode("ascii"))


def _read_labels(path):
    with open(path) as fh:
        try:
            return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)
        except ValueError:
            raise formats.FormatError(f"{path}: labels must be one integer per line") from None


def _read_table(path):
    table = formats.load_descriptors(path)
    labels = _read_labels(os.path.splitext(path)[0] + ".labels")
    if len(labels) != len(table):
        raise formats.FormatError(f"{path}: {len(table)} rows but {len(labels)} labels")
    return table, labels


def _load_images(root):
    ds = load_dataset(root)
    if len(ds.labels) == 0:
        raise formats.FormatError(f"{root}: no images found")
    return ds


def _log(out, name):
    return MetricsLog(_path(out, f"metrics-{name}.csv"), sys.stderr, prefix=f"{name} ")


# -- subcommands -----------------------------------------------------------------------------


def cmd_synth_gen(cfg, args):
    s = cfg["synth"]
    synth = SynthConfig(canvas=s["canvas"], train_per_class=s["train_per_class"], test_per_class=s["test_per_class"],
                        layout_stress=s["layout_stress"], seed=cfg["seed"])
    train, test = generate_dataset(synth)
    source = generate_glyph_dataset(s["source_per_class"], size=cfg["patches"]["size"],
                                    scale_range=synth.scale_range, glyph_size=synth.glyph_size,
                                    intensity_range=synth.intensity_range, noise_std=synth.noise_std,
                                    seed=cfg["seed"] + 1000)
    for name, ds in (("train", train), ("test", test), ("source", source)):
        save_dataset(ds, _path(args.out, os.path.join("data", name)))
    return {"train": len(train), "test": len(test), "source": len(source), "classes": train.n_classes}


def cmd_pretrain(cfg, args):
    ds = _load_images(args.inp or _path(args.out, "data/source"))
    size = ds.images.shape[1]
    spec = toy_spec(ds.n_classes, size=size, width=tuple(cfg["network"]["width"]), hidden=cfg["network"]["hidden"])
    net = build_network(spec, seed=cfg["seed"])
    net, records = pretrain(net, ds.images, ds.labels, _train_config(cfg, "pretrain", 0), _log(args.out, "pretrain"))
    save_model(_path(args.out, "pretrained.s2ic"), net)
    return {"loss": records[-1].loss, "accuracy": records[-1].accuracy}


def cmd_extract_conv(cfg, args):
    net = load_model(_path(args.out, "pretrained.s2ic"))
    ds = _load_images(args.inp or _path(args.out, "data/train"))
    patches, labels = image_patches(ds.images, ds.labels, _patch_spec(cfg, "train_stride"))
    feats = extract_conv_features(net, patches)
    path = _path(args.out, "conv-features.s2fv")
    formats.save_descriptors(path, feats)
    _write_labels(_path(args.out, "conv-features.labels"), labels)
    return {"patches": len(feats), "length": feats.shape[1]}


def cmd_train_transfernet(cfg, args):
    feats, labels = _read_table(args.inp or _path(args.out, "conv-features.s2fv"))
    n_classes = int(labels.max()) + 1
    tspec = TransferNetSpec(feats.shape[1], n_classes, hidden=cfg["network"]["hidden"])
    net, records = train_transfernet(feats, labels, tspec, _train_config(cfg, "transfer", 1), _log(args.out, "transfer"))
    save_model(_path(args.out, "transfernet.s2ic"), net)
    return {"loss": records[-1].loss, "accuracy": records[-1].accuracy}


def cmd_graft(cfg, args):
    base = load_model(args.inp or _path(args.out, "pretrained.s2ic"))
    tnet = load_model(_path(args.out, "transfernet.s2ic"))
    net = graft(base, tnet)
    save_model(_path(args.out, "grafted.s2ic"), net)
    return {"census": net.census()}


def cmd_finetune(cfg, args):
    net = load_model(_path(args.out, "grafted.s2ic"))
    ds = _load_images(args.inp or _path(args.out, "data/train"))
    patches, labels = image_patches(ds.images, ds.labels, _patch_spec(cfg, "train_stride"))
    tc = _train_config(cfg, "finetune", 2)
    summary = {}
    w, rec = finetune(net, patches, labels, tc, with_su=False, log=_log(args.out, "finetune-W"))
    save_model(_path(args.out, "W.s2ic"), w)
    summary["W_accuracy"] = rec[-1].accuracy
    if cfg["su"]["enabled"]:
        su = cfg["su"]
        w_su, rec = finetune(net, patches, labels, tc, with_su=True, su_n=su["blocks"], su_p=su["prob"],
                             log=_log(args.out, "finetune-W_su"))
        save_model(_path(args.out, "W_su.s2ic"), w_su)
        summary["W_su_accuracy"] = rec[-1].accuracy
    return summary


def _pipeline(cfg, out):
    net_w = load_model(_path(out, "W.s2ic"))
    if cfg["su"]["enabled"]:
        net_su = load_model(_path(out, "W_su.s2ic"))
    else:
        net_su = None
    pyramid = PyramidSpec(cfg["pyramid"]["base"], tuple(cfg["pyramid"]["scales"]))
    return DescriptorPipeline(net_w, net_su, pyramid, _patch_spec(cfg), cfg["pool"], cfg["pyramid"]["enabled"])


def cmd_describe(cfg, args):
    pipe = _pipeline(cfg, args.out)
    sources = [("custom", args.inp)] if args.inp else [("train", _path(args.out, "data/train")),
                                                       ("test", _path(args.out, "data/test"))]
    summary = {}
    for name, root in sources:
        ds = _load_images(root)
        table = pipe.describe_many(ds.images)
        base = _path(args.out, f"descriptors-{name}")
        formats.save_descriptors(base + ".s2fv", table)
        _write_labels(base + ".labels", ds.labels)
        formats.save_descriptors_csv(base + ".csv", table, ds.labels)
        summary[name] = list(table.shape)
    return summary


def cmd_train_svm(cfg, args):
    table, labels = _read_table(args.inp or _path(args.out, "descriptors-train.s2fv"))
    s = cfg["svm"]
    model = train_svm(table, labels, C=s["C"], epochs=s["epochs"], seed=cfg["seed"], normalize=s["normalize"],
                      center=s["center"])
    save_svm(_path(args.out, "svm.s2sv"), model)
    return {"train_accuracy": evaluate(model, table, labels)[0]}


def cmd_evaluate(cfg, args):
    model = load_svm(_path(args.out, "svm.s2sv"))
    table, labels = _read_table(args.inp or _path(args.out, "descriptors-test.s2fv"))
    acc, cm = evaluate(model, table, labels)
    save_confusion_csv(_path(args.out, "confusion.csv"), cm)
    _write_labels(_path(args.out, "predictions.labels"), predict_many(model, table))
    return {"accuracy": acc, "images": len(labels)}


def cmd_heatmap(cfg, args):
    if not args.inp:
        raise UsageError("heatmap: --in IMAGE is required")
    pipe = _pipeline(cfg, args.out)
    try:
        model = load_svm(_path(args.out, "svm.s2sv"))
    except FileNotFoundError:
        raise StateError("heatmap needs a trained SVM (run train-svm first)") from None
    image = to_grayscale(load_image(args.inp))
    cls = cfg["heatmap"]["true_class"]
    if cls is None:
        cls = int(predict_many(model, pipe.describe(image)[None])[0])
    cmap = contribution_map(image, pipe, model, cls)
    save_image(_path(args.out, "heatmap.pgm"), cmap.render())
    np.savetxt(_path(args.out, "heatmap-grid.csv"), cmap.grid, delimiter=",", fmt="%.6g")
    return {"class": cls, "grid": list(cmap.grid.shape)}


def cmd_shuffle_demo(cfg, args):
    if not args.inp:
        raise UsageError("shuffle-demo: --in IMAGE is required")
    image = load_image(args.inp)
    fmap = image[:, :, None, None] if image.ndim == 2 else image[:, :, :, None]
    out, _ = shuffle_alg1(fmap, cfg["su"]["blocks"])
    out = out[:, :, 0, 0] if image.ndim == 2 else out[:, :, :, 0]
    name = "shuffled" + os.path.splitext(args.inp)[1]
    save_image(_path(args.out, name), out)
    return {"blocks": cfg["su"]["blocks"], "shape": list(image.shape), "file": name}


def cmd_gradcheck(cfg, args):
    from .gradcheck import THRESHOLD, run_suite

    results = run_suite(cfg["seed"])
    with open(_path(args.out, "gradcheck.csv"), "w") as fh:
        fh.write("check,max_relative_error,passed\n")
        for name, err in results.items():
            fh.write(f"{name},{err:.3e},{int(err <= THRESHOLD)}\n")
    failed = [k for k, v in results.items() if not v <= THRESHOLD]
    summary = {"threshold": THRESHOLD, "worst": max(results.values()), "failed": failed}
    if failed:
        summary["status"] = "failed"
    return summary


COMMANDS = {
    "synth-gen": (cmd_synth_gen, "generate train/test scenes and the single-glyph source set", ()),
    "pretrain": (cmd_pretrain, "train the toy CNN on the source set", ("in", "epochs", "lr")),
    "extract-conv": (cmd_extract_conv, "last-conv features of dense training patches", ("in", "patch")),
    "train-transfernet": (cmd_train_transfernet, "train the FC stack on frozen conv features", ("in", "epochs", "lr")),
    "graft": (cmd_graft, "combine pretrained conv layers with the TransferNet", ("in",)),
    "finetune": (cmd_finetune, "fine-tune the grafted network with and without the SU layer",
                 ("in", "epochs", "lr", "patch", "su")),
    "describe": (cmd_describe, "compute image descriptors", ("in", "patch", "su", "pyramid")),
    "train-svm": (cmd_train_svm, "train the one-vs-rest linear SVM", ("in", "epochs", "C")),
    "evaluate": (cmd_evaluate, "score descriptors and write the confusion matrix", ("in",)),
    "heatmap": (cmd_heatmap, "per-patch contribution map of one image", ("in", "patch", "su", "pyramid")),
    "shuffle-demo": (cmd_shuffle_demo, "apply the block shuffle to one image", ("in", "blocks")),
    "gradcheck": (cmd_gradcheck, "finite-difference gradient suite", ()),
}


def build_parser():
    parser = _Parser(prog="s2ica", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text, groups) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON file overriding default settings")
        p.add_argument("--seed", type=int, help="base random seed (default 0)")
        p.add_argument("--threads", type=int, help="maximum BLAS worker threads (default 1)")
        p.add_argument("--out", default="run", help="run directory for artifacts (default ./run)")
        if "in" in groups or name in ("heatmap", "shuffle-demo"):
            p.add_argument("--in", dest="inp", help="primary input overriding the run-directory default")
        if "epochs" in groups:
            p.add_argument("--epochs", type=int, help="training epochs for this stage")
        if "lr" in groups:
            p.add_argument("--lr", type=float, help="learning rate for this stage")
        if "C" in groups:
            p.add_argument("--C", type=float, help="SVM regularisation constant")
        if "patch" in groups:
            p.add_argument("--patch-size", type=int, help="patch side length in pixels")
            p.add_argument("--stride", type=int, help="patch stride in pixels")
        if "blocks" in groups or "su" in groups:
            p.add_argument("--blocks", type=int, help="SU block count n (perfect square)")
        if "su" in groups:
            p.add_argument("--su-prob", type=float, help="SU Bernoulli probability p")
            p.add_argument("--no-su", action="store_true", help="use only the plain network")
        if "pyramid" in groups:
            p.add_argument("--scales", type=_scales, help='pyramid scales (default "0.75,1.0,1.25")')
            p.add_argument("--no-pyramid", action="store_true", help="describe at the base scale only")
            p.add_argument("--pool", choices=("max", "mean"), help="pooling across patches and scales")
    return parser


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return round(float(value), 6)
    return value


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    command = args.command
    func = COMMANDS[command][0]
    try:
        cfg = resolve_config(command, args)
        os.makedirs(args.out, exist_ok=True)
        with open(_path(args.out, f"config-{command}.json"), "w") as fh:
            json.dump(cfg, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with threadpool_limits(limits=cfg["threads"]):
            summary = func(cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (S2ICAError, OSError) as exc:
        kind = type(exc).__name__
        print(f"error ({kind}): {exc}", file=sys.stderr)
        return 1
    status = summary.pop("status", "ok")
    print(json.dumps({"command": command, "status": status, **_jsonable(summary)}, sort_keys=True))
    return 0 if status == "ok" else 1


if __name__ == "__main__":
    sys.exit(main())
