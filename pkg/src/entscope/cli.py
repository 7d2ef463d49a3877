"""Command-line interface.

Every option can also come from an INI file given with ``--config``; the
section is the subcommand name and keys are option names with dashes or
underscores, e.g.::

    [train]
    epochs = 20
    lambda = 0.003

Precedence is flag > config file > built-in default (the seed additionally
falls back to ``ENTSCOPE_SEED``). The fully resolved options are written as
``config.ini`` into each output directory.

Exit status: 0 on success, 1 on runtime failure, 2 on usage errors.
"""

import argparse
import configparser
import json
import logging
import os
import sys

import numpy as np

from . import dataset as ds
from . import kplan
from ._seeds import resolve_seed
from .mvnet import (LossConfig, TrainConfig, evaluate, history_table, load_checkpoint,
                    predict_proba, save_checkpoint, train)

log = logging.getLogger("entscope")

CHECKPOINT_FILE = "checkpoint.bin"
HISTORY_FILE = "history.tsv"
CONFIG_FILE = "config.ini"


class UsageError(Exception):
    pass


def _bool(text):
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name, type, default, help; default None means "unset"
_COMMON = [("format", str, "table", "report format: table or json")]
COMMANDS = {
    "gen-dataset": [
        ("n", int, None, "qubit count"),
        ("samples-per-class", int, 100, "records per class"),
        ("pool-size", int, None, "measurement pool size (default: 3^n for n<=8, else 500/1000)"),
        ("k", int, None, "views per record (default: the budget formula)"),
        ("classes", int, None, "number of sampled classes (default: all for n<=8, else 100)"),
        ("shots", int, 0, "shots per view; 0 keeps exact probabilities"),
        ("seed", int, None, "master seed"),
        ("out", str, None, "output directory"),
        ("workers", int, 1, "worker processes"),
    ],
    "train": [
        ("data", str, None, "dataset directory"),
        ("out", str, None, "output directory"),
        ("epochs", int, 50, "training epochs"),
        ("lr", float, 1e-3, "initial learning rate"),
        ("clip", float, 1.0, "global gradient-norm limit"),
        ("lambda", float, 0.003, "contrastive weight"),
        ("margin", float, 1.0, "contrastive margin"),
        ("dropout", float, 0.5, "dropout rate"),
        ("batch-size", int, 64, "minibatch size"),
        ("hidden1", int, 256, "view encoder width"),
        ("hidden2", int, 128, "fusion width"),
        ("seed", int, None, "training seed (default: the dataset master seed)"),
        ("float32", _bool, False, "train in binary32"),
    ],
    "eval": [
        ("data", str, None, "dataset directory"),
        ("checkpoint", str, None, "checkpoint file or training output directory"),
        ("split", str, "test", "train, val, test or all"),
    ],
    "predict": [
        ("data", str, None, "dataset directory"),
        ("checkpoint", str, None, "checkpoint file or training output directory"),
        ("split", str, "all", "train, val, test or all"),
        ("out", str, None, "write predictions here instead of stdout"),
    ],
    "k-sweep": [
        ("n", int, None, "qubit count"),
        ("k", str, "1:5", "budgets as lo:hi (inclusive) or a comma list"),
        ("threshold", float, 0.975, "accuracy threshold defining k_min"),
        ("samples-per-class", int, 100, "records per class"),
        ("pool-size", int, None, "measurement pool size"),
        ("classes", int, None, "number of sampled classes"),
        ("shots", int, 0, "shots per view; 0 keeps exact probabilities"),
        ("seed", int, None, "master seed"),
        ("epochs", int, 50, "training epochs"),
        ("out", str, None, "write the sweep CSV here"),
        ("workers", int, 1, "worker processes for generation"),
    ],
    "fit-k": [
        ("points", str, None, "CSV with columns n,k or a sweep CSV (n,...,k_min)"),
    ],
    "resources": [
        ("n-range", str, "4:19", "qubit counts as lo:hi (inclusive)"),
        ("rank", int, 1, "state rank for the CS-QST curve"),
    ],
    "lambda-sweep": [
        ("data", str, None, "dataset directory"),
        ("lambdas", str, "0.001:0.01:0.001", "values as start:stop:step (inclusive) or a comma list"),
        ("epochs", int, 50, "training epochs per value"),
        ("seed", int, None, "training seed"),
    ],
}
REQUIRED = {
    "gen-dataset": ("n", "out"),
    "train": ("data", "out"),
    "eval": ("data", "checkpoint"),
    "predict": ("data", "checkpoint"),
    "k-sweep": ("n",),
    "fit-k": ("points",),
    "resources": (),
    "lambda-sweep": ("data",),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="entscope", description="Entanglement-structure detection from global Pauli measurements.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with a [%s] section" % name)
        for opt, typ, default, helptext in opts + _COMMON:
            kwargs = {"default": None, "help": f"{helptext} (default: {default})"}
            if typ is _bool:
                kwargs.update(action="store_const", const=True)
            else:
                kwargs["type"] = typ
            p.add_argument(f"--{opt}", dest=opt.replace("-", "_"), **kwargs)
    return parser


def resolve(args):
    """Merge flags over the config file over defaults; returns a dict."""
    section = {}
    if args.config:
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise UsageError(f"cannot read config file {args.config}")
        if cp.has_section(args.command):
            section = {k.replace("_", "-"): v for k, v in cp.items(args.command)}
    out = {}
    for opt, typ, default, _ in COMMANDS[args.command] + _COMMON:
        flag = getattr(args, opt.replace("-", "_"))
        if flag is not None:
            out[opt] = flag
        elif section.get(opt, "").strip():
            try:
                out[opt] = typ(section[opt])
            except ValueError as exc:
                raise UsageError(f"config option {opt}: {exc}") from None
        else:
            out[opt] = default
    missing = [f"--{o}" for o in REQUIRED[args.command] if out[o] is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")
    if out["format"] not in ("table", "json"):
        raise UsageError("--format must be 'table' or 'json'")
    return out


def write_config(directory, command, opts):
    cp = configparser.ConfigParser()
    cp[command] = {k: "" if v is None else str(v) for k, v in opts.items()}
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, CONFIG_FILE), "w") as f:
        cp.write(f)


def parse_int_range(text):
    """``"4:19"`` -> 4..19 inclusive; ``"1,2,5"`` -> [1, 2, 5]."""
    try:
        if ":" in text:
            lo, hi = (int(p) for p in text.split(":"))
            values = list(range(lo, hi + 1))
        else:
            values = [int(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"malformed range {text!r}") from None
    if not values or any(b <= a for a, b in zip(values, values[1:])) or values[0] < 1:
        raise UsageError(f"malformed range {text!r}: need ascending positive integers")
    return values


def parse_float_range(text):
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            count = int(round((stop - start) / step)) + 1
            return [round(start + i * step, 12) for i in range(count)]
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"malformed range {text!r}") from None


def _emit(text, out=None):
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _train_config(opts, seed):
    return TrainConfig(lr=opts["lr"], clip_norm=opts["clip"], epochs=opts["epochs"],
                       batch_size=opts["batch-size"], dropout=opts["dropout"],
                       hidden=(opts["hidden1"], opts["hidden2"]), float32=bool(opts["float32"]),
                       seed=seed)


def _load_split(data, split):
    manifest, records = ds.read_dataset(data)
    if split == "all":
        return manifest, records
    parts = dict(zip(("train", "val", "test"),
                     ds.split_dataset(records, manifest.split_ratios, manifest.master_seed)))
    if split not in parts:
        raise UsageError(f"--split must be train, val, test or all, got {split!r}")
    return manifest, parts[split]


def _checkpoint_path(path):
    return os.path.join(path, CHECKPOINT_FILE) if os.path.isdir(path) else path


# ---------------------------------------------------------------------------


def cmd_gen_dataset(opts):
    n = opts["n"]
    k = opts["k"] if opts["k"] is not None else kplan.k_formula(n)
    try:
        manifest = ds.make_manifest(n, k, opts["samples-per-class"], opts["pool-size"],
                                    opts["classes"], opts["shots"], opts["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    opts = dict(opts, k=k, seed=manifest.master_seed, classes=manifest.num_classes,
                **{"pool-size": len(manifest.pool)})
    records = ds.generate_dataset(manifest, workers=max(1, opts["workers"]))
    ds.write_dataset(opts["out"], manifest, records)
    write_config(opts["out"], "gen-dataset", opts)
    summary = {"records": len(records), "classes": manifest.num_classes, "n": n, "k": k,
               "pool_size": len(manifest.pool), "views": manifest.pool[:k], "out": opts["out"]}
    if opts["format"] == "json":
        _emit(json.dumps(summary, indent=2) + "\n")
    else:
        _emit(f"wrote {len(records)} records ({manifest.num_classes} classes, n={n}, K={k}) "
              f"to {opts['out']}\npool: {len(manifest.pool)} strings, views: "
              f"{' '.join(manifest.pool[:k])}\n")
    return 0


def cmd_train(opts):
    manifest, records = ds.read_dataset(opts["data"])
    seed = resolve_seed(opts["seed"]) if opts["seed"] is not None else manifest.master_seed
    opts = dict(opts, seed=seed)
    cfg = _train_config(opts, seed)
    loss_cfg = LossConfig(lam=opts["lambda"], margin=opts["margin"])
    tr, va, _ = ds.split_dataset(records, manifest.split_ratios, manifest.master_seed)
    fit = train(ds.to_arrays(tr, cfg.dtype), ds.to_arrays(va, cfg.dtype), cfg, loss_cfg,
                n=manifest.n, num_classes=manifest.num_classes)
    os.makedirs(opts["out"], exist_ok=True)
    save_checkpoint(os.path.join(opts["out"], CHECKPOINT_FILE), fit.params,
                    manifest.class_table_hash(), manifest.n,
                    meta={"best_epoch": fit.best_epoch, "k": manifest.k})
    with open(os.path.join(opts["out"], HISTORY_FILE), "w") as f:
        f.write(history_table(fit.history))
    write_config(opts["out"], "train", opts)
    last = fit.history[-1]
    if opts["format"] == "json":
        _emit(json.dumps({"epochs": len(fit.history), "best_epoch": fit.best_epoch,
                          "best_val_acc": max(h["val_acc"] for h in fit.history),
                          "final": last}, indent=2) + "\n")
    else:
        _emit(f"trained {len(fit.history)} epochs; best val_acc "
              f"{max(h['val_acc'] for h in fit.history):.4f} at epoch {fit.best_epoch}\n")
    return 0


def cmd_eval(opts):
    manifest, records = _load_split(opts["data"], opts["split"])
    params = load_checkpoint(_checkpoint_path(opts["checkpoint"]), manifest.class_table_hash())
    x, y = ds.to_arrays(records, params.dtype)
    m = evaluate(params, x, y, manifest.class_table)
    present = m.present_classes()
    prec = m.per_class_precision
    support = m.confusion.sum(axis=1)
    rows = [{"class_id": c, "structure": manifest.class_table[c],
             "precision": prec[manifest.class_table[c]], "support": int(support[c])}
            for c in present]
    if opts["format"] == "json":
        _emit(json.dumps({"accuracy": m.accuracy, "total": m.total, "classes": rows,
                          "confusion": m.confusion.tolist()}, indent=2) + "\n")
    else:
        body = kplan.format_rows(rows, ("class_id", "structure", "precision", "support"))
        _emit(f"accuracy\t{m.accuracy:.6f}\nsamples\t{m.total}\n{body}")
    return 0


def cmd_predict(opts):
    manifest, records = _load_split(opts["data"], opts["split"])
    params = load_checkpoint(_checkpoint_path(opts["checkpoint"]), manifest.class_table_hash())
    x, _ = ds.to_arrays(records, params.dtype)
    proba = predict_proba(params, x)
    pred = np.argmax(proba, axis=1)
    rows = []
    for r, p, c in zip(records, proba, pred):
        rows.append({"sample_seed": r.sample_seed, "true": r.label,
                     "predicted": manifest.class_table[int(c)],
                     "probabilities": [float(v) for v in p]})
    if opts["format"] == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        cols = ["sample_seed", "true", "predicted"] + [f"p{c}" for c in range(manifest.num_classes)]
        lines = ["\t".join(cols)]
        for row in rows:
            lines.append("\t".join([str(row["sample_seed"]), row["true"], row["predicted"]]
                                   + [repr(v) for v in row["probabilities"]]))
        text = "\n".join(lines) + "\n"
    _emit(text, opts["out"])
    return 0


def cmd_k_sweep(opts):
    ks = parse_int_range(opts["k"])
    cfg = TrainConfig(epochs=opts["epochs"], seed=resolve_seed(opts["seed"]))

    def progress(n, k, acc):
        log.info("n=%d K=%d test_accuracy=%.4f", n, k, acc)

    res = kplan.k_sweep(opts["n"], ks, opts["threshold"], opts["samples-per-class"],
                        opts["pool-size"], opts["classes"], opts["shots"], opts["seed"],
                        train_cfg=cfg, workers=max(1, opts["workers"]), progress=progress)
    csv_text = res.to_csv()
    if opts["out"]:
        _emit(csv_text, opts["out"])
        write_config(os.path.dirname(os.path.abspath(opts["out"])), "k-sweep", opts)
    if opts["format"] == "json":
        _emit(json.dumps({"n": res.n, "threshold": res.threshold, "k_min": res.k_min,
                          "entries": [{"K": k, "test_accuracy": a} for k, a in res.entries]},
                         indent=2) + "\n")
    else:
        _emit(csv_text)
    return 0


def cmd_fit_k(opts):
    with open(opts["points"]) as f:
        try:
            points = kplan.read_points(f.read())
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    fit = kplan.fit_power_law(points)
    ns = [n for n, _ in points]
    out = {"a": fit.a, "b": fit.b, "c": fit.c, "residual_norm": fit.residual_norm,
           "converged": fit.converged,
           "k_table": dict(zip((str(n) for n in ns), fit.k_values(ns)))}
    if opts["format"] == "json":
        _emit(json.dumps(out, indent=2) + "\n")
    else:
        _emit("".join(f"{key}\t{out[key]!r}\n" for key in ("a", "b", "c", "residual_norm", "converged"))
              + "n\tK\n" + "".join(f"{n}\t{k}\n" for n, k in out["k_table"].items()))
    return 0


def cmd_resources(opts):
    ns = parse_int_range(opts["n-range"])
    rows = kplan.resource_table(ns, opts["rank"])
    _emit(kplan.format_rows(rows, kplan.RESOURCE_COLUMNS, opts["format"]))
    return 0


def cmd_lambda_sweep(opts):
    manifest, records = ds.read_dataset(opts["data"])
    seed = resolve_seed(opts["seed"]) if opts["seed"] is not None else manifest.master_seed
    tr, va, _ = ds.split_dataset(records, manifest.split_ratios, manifest.master_seed)
    train_arr, val_arr = ds.to_arrays(tr), ds.to_arrays(va)
    rows = []
    for lam in parse_float_range(opts["lambdas"]):
        fit = train(train_arr, val_arr, TrainConfig(epochs=opts["epochs"], seed=seed),
                    LossConfig(lam=lam), n=manifest.n, num_classes=manifest.num_classes)
        rows.append({"lambda": lam, "best_val_acc": max(h["val_acc"] for h in fit.history)})
        log.info("lambda=%g best_val_acc=%.4f", lam, rows[-1]["best_val_acc"])
    _emit(kplan.format_rows(rows, ("lambda", "best_val_acc"), opts["format"]))
    return 0


HANDLERS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "k-sweep": cmd_k_sweep,
    "fit-k": cmd_fit_k,
    "resources": cmd_resources,
    "lambda-sweep": cmd_lambda_sweep,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        opts = resolve(args)
        return HANDLERS[args.command](opts)
    except UsageError as exc:
        parser.exit(2, f"{parser.prog} {args.command}: error: {exc}\n")
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
