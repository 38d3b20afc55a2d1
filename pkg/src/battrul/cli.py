"""Command-line interface: ``battrul {synth,train,evaluate,grid,predict,compare}``.

Exit codes: 0 success, 1 usage error, 2 data or model-file error, 3 training
diverged. Diagnostics are a single line on stderr. Outputs are written to a
temp file and renamed into place, so a failing command leaves nothing behind.
Every primary output gets a sidecar ``<output>.manifest.json`` holding the
resolved flags, input digests and a timestamp; the outputs themselves carry
no timestamps and are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import io
import json
import os
import sys

import numpy as np

from battrul import __version__
from battrul.dataset import FadeModel, concat, read_battery_csv, synthesize_fade_series
from battrul.errors import DataError, DivergedError, ModelFormatError
from battrul.estimators import ForestRegressor, LinearRegressor, NetRegressor, TreeRegressor
from battrul.evaluation import GridSpec, accuracy_table, compare_models, compute_metrics, grid_search
from battrul.features import (
    DEFAULT_EOL_THRESHOLD,
    DEFAULT_RATED_CAPACITY_AH,
    SplitSpec,
    build_supervised_set,
    decode_targets,
    fit_on_train,
    holdout_indices,
)
from battrul.modelio import atomic_write_text, dumps, load_model, save_model
from battrul.net import Network, layer_param_counts, make_spec, param_count
from battrul.net import predict as net_predict
from battrul.seeding import derive_seed

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def _list_of(conv):
    def parse(text):
        items = [t.strip() for t in text.split(",") if t.strip()]
        try:
            return [conv(t) for t in items]
        except ValueError:
            raise argparse.ArgumentTypeError(f"cannot parse list {text!r}") from None
    return parse


def _layers_item(text):
    return tuple(int(u) for u in text.split("-"))


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _add_common(p, data=True):
    if data:
        p.add_argument("--data", required=True, help="battery-cycle CSV")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--rated-capacity", type=float, default=DEFAULT_RATED_CAPACITY_AH, help="Ah (default 2.0)")
    p.add_argument("--eol-threshold", type=float, default=DEFAULT_EOL_THRESHOLD, help="fraction of rated capacity (default 0.7)")
    p.add_argument("--out", required=True)


def _add_net_flags(p):
    p.add_argument("--layers", type=_int_list, default=[10, 7, 3], help="units per dense layer (default 10,7,3)")
    p.add_argument("--activation", choices=["tanh", "sigmoid", "relu"], default="relu")
    p.add_argument("--output-activation", choices=["identity", "sigmoid"], default="identity")
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=200)


def _add_baseline_flags(p):
    p.add_argument("--max-depth", type=int, default=8)
    p.add_argument("--min-samples-leaf", type=int, default=2)
    p.add_argument("--n-trees", type=int, default=50)
    p.add_argument("--feature-fraction", type=float, default=0.6)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="battrul", description="Battery SOH / RUL toolkit")
    parser.add_argument("--version", action="version", version=f"battrul {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic capacity-fade CSV")
    _add_common(p, data=False)
    p.add_argument("--n-cycles", type=int, default=200)
    p.add_argument("--c0", type=float, default=2.0, help="initial capacity, Ah")
    p.add_argument("--rate", type=float, default=0.004, help="per-cycle fade fraction")
    p.add_argument("--noise", type=float, default=0.0, help="capacity noise std-dev, Ah")
    p.add_argument("--shape", choices=["linear", "exponential"], default="linear")
    p.add_argument("--batteries", type=int, default=1, help="number of independent series")
    p.add_argument("--battery-id", default="SYN", help="id prefix")

    p = sub.add_parser("train", help="train a model and write it with its curves")
    _add_common(p)
    p.add_argument("--model-kind", choices=["net", "linear", "tree", "forest"], default="net")
    _add_net_flags(p)
    _add_baseline_flags(p)
    p.add_argument("--val-fraction", type=float, default=0.2, help="holdout fraction; 0 trains on every row")
    p.add_argument("--curves", help="per-epoch curves CSV (net only)")

    p = sub.add_parser("evaluate", help="score a model file on a data CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("grid", help="grid search over network hyperparameters")
    _add_common(p)
    p.add_argument("--layers-list", type=_list_of(_layers_item), default=[(10, 7, 3)],
                   help="comma-separated layer configs, units joined by '-', e.g. 10-7-3,16-8-3")
    p.add_argument("--activations", type=_list_of(str), default=["relu"])
    p.add_argument("--lrs", type=_list_of(float), default=[0.001])
    p.add_argument("--batch-sizes", type=_list_of(int), default=[32])
    p.add_argument("--epochs-list", type=_list_of(int), default=[200])
    p.add_argument("--dropouts", type=_list_of(float), default=[0.2])
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--cv", type=int, default=0, help="score each combination by k-fold CV instead of holdout")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("predict", help="write per-row predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", help="also write an SVG of capacity vs cycle")

    p = sub.add_parser("compare", help="net vs linear / tree / forest on one holdout split")
    _add_common(p)
    _add_net_flags(p)
    _add_baseline_flags(p)
    p.add_argument("--val-fraction", type=float, default=0.2)
    return parser


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _flags(args) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())}


def write_manifest(output_path, args, inputs=(), outputs=(), extra=None) -> None:
    doc = {
        "command": args.command,
        "flags": _flags(args),
        "seed": getattr(args, "seed", None),
        "inputs": {os.fspath(p): _digest(p) for p in inputs},
        "outputs": [os.fspath(p) for p in outputs],
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra:
        doc.update(extra)
    atomic_write_text(f"{output_path}.manifest.json", json.dumps(doc, indent=1, default=str) + "\n")


def _load_data(path):
    if not os.path.isfile(path):
        raise DataError(f"data file not found: {path}")
    return read_battery_csv(path)


def _load_model(path):
    if not os.path.isfile(path):
        raise ModelFormatError("<root>", f"model file not found: {path}")
    return load_model(path)


def _check_fraction(value, name, allow_zero=False):
    lo_ok = value >= 0 if allow_zero else value > 0
    if not (lo_ok and value < 1):
        raise UsageError(f"{name} must lie in {'[0' if allow_zero else '(0'}, 1), got {value}")


def _net_factory(args):
    return lambda s: NetRegressor(tuple(args.layers), args.activation, args.dropout, args.output_activation,
                                  args.lr, args.batch_size, args.epochs, s)


def _baseline_factory(kind, args):
    if kind == "linear":
        return lambda s: LinearRegressor(seed=s)
    if kind == "tree":
        return lambda s: TreeRegressor(args.max_depth, args.min_samples_leaf, s)
    return lambda s: ForestRegressor(args.n_trees, args.max_depth, args.feature_fraction, args.min_samples_leaf, s)


def _check_net_flags(args):
    if not 0 <= args.dropout < 1:
        raise UsageError(f"--dropout must lie in [0, 1), got {args.dropout}")
    if args.lr <= 0 or args.batch_size < 1 or args.epochs < 0:
        raise UsageError("--lr must be > 0, --batch-size >= 1 and --epochs >= 0")


def cmd_synth(args) -> int:
    if args.n_cycles < 1 or args.batteries < 1:
        raise UsageError("--n-cycles and --batteries must be >= 1")
    try:
        parts = []
        for b in range(args.batteries):
            seed = args.seed if args.batteries == 1 else derive_seed(args.seed, b)
            model = FadeModel(args.c0, args.rate, args.noise, args.shape, seed)
            parts.append(synthesize_fade_series(model, args.n_cycles, f"{args.battery_id}{b + 1:02d}"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = concat(*parts, source="synthetic")
    atomic_write_text(args.out, ds.to_csv())
    write_manifest(args.out, args, outputs=[args.out])
    print(f"wrote {len(ds)} rows for {len(parts)} batter{'y' if len(parts) == 1 else 'ies'} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    _check_fraction(args.val_fraction, "--val-fraction", allow_zero=True)
    if args.model_kind == "net":
        _check_net_flags(args)
    ds = _load_data(args.data)
    data = build_supervised_set(ds, args.rated_capacity, args.eol_threshold)
    if args.val_fraction > 0:
        try:
            tr, va = holdout_indices(len(data), args.val_fraction, args.seed)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        train_set, val_set = fit_on_train(data, tr, va)
    else:
        train_set, val_set = data, None

    if args.model_kind == "net":
        spec = make_spec(args.layers, args.activation, args.dropout, args.output_activation)
        counts = layer_param_counts(spec)
        print(f"trainable parameters: {param_count(spec)} ({' + '.join(map(str, counts))})")
        est = _net_factory(args)(args.seed)
    else:
        est = _baseline_factory(args.model_kind, args)(args.seed)
    est.fit(train_set, val_set)

    model = est.model
    final = {"train": compute_metrics(est.predict(train_set.features), train_set.targets).to_dict()}
    if val_set is not None:
        final["validation"] = compute_metrics(est.predict(val_set.features), val_set.targets).to_dict()
    model.training = {**model.training, "seed": args.seed, "final_metrics": final,
                      "flags": {k: v for k, v in _flags(args).items() if k not in ("out", "curves", "command")}}
    if isinstance(model, Network):
        model.training.update(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr)

    outputs = [args.out]
    save_model(model, args.out)
    if args.curves:
        if est.history is None:
            raise UsageError("--curves is only available for --model-kind net")
        atomic_write_text(args.curves, est.history.to_csv())
        outputs.append(args.curves)
    write_manifest(args.out, args, inputs=[args.data], outputs=outputs)
    acc = final.get("validation", final["train"])["accuracy"]
    print(f"saved {args.model_kind} model to {args.out}; accuracy (capacity r2) = {acc:.4f}")
    return EXIT_OK


def _model_set(model, ds):
    if model.normalizer is None or model.labels is None:
        raise ModelFormatError("normalizer", "model file lacks the normalizer or label constants")
    labels = model.labels
    return build_supervised_set(ds, labels["rated_capacity_ah"], labels["eol_threshold"],
                                normalizer=model.normalizer, rul_denominator=labels["rul_denominator"])


def _model_width(model):
    return model.spec.input_dim if isinstance(model, Network) else model.n_features


def _model_predict(model, features):
    if isinstance(model, Network):
        return net_predict(model, features).outputs
    return model.predict(features)


def cmd_evaluate(args) -> int:
    model = _load_model(args.model)
    ds = _load_data(args.data)
    data = _model_set(model, ds)
    if data.features.shape[1] != _model_width(model):
        raise ModelFormatError("spec.input_dim", "feature width does not match the data")
    out = _model_predict(model, data.features)
    metrics = compute_metrics(out, data.targets)
    cap_pred = decode_targets(out, model.labels)[:, 0]
    report = {
        "report_kind": "evaluation",
        "model_kind": ("sequential_net" if isinstance(model, Network) else type(model).__name__),
        "accuracy_definition": "r2 of the capacity head (capacity_norm)",
        "accuracy": metrics.accuracy,
        "metrics": metrics.to_dict(),
        "capacity_mae_ah": float(np.mean(np.abs(cap_pred - data.capacity_ah))),
        "training": model.training,
        "rows": len(data),
    }
    atomic_write_text(args.out, dumps(report))
    write_manifest(args.out, args, inputs=[args.model, args.data], outputs=[args.out])
    print(f"accuracy (capacity r2) = {metrics.accuracy:.4f} on {len(data)} rows")
    return EXIT_OK


def cmd_grid(args) -> int:
    _check_fraction(args.val_fraction, "--val-fraction")
    try:
        grid = GridSpec(tuple(tuple(u) for u in args.layers_list), tuple(args.activations), tuple(args.lrs),
                        tuple(args.batch_sizes), tuple(args.epochs_list), tuple(args.dropouts), args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for act in grid.activations:
        if act not in ("tanh", "sigmoid", "relu"):
            raise UsageError(f"unknown activation {act!r}")
    if any(not 0 <= d < 1 for d in grid.dropouts) or any(lr <= 0 for lr in grid.learning_rates) \
            or any(b < 1 for b in grid.batch_sizes) or any(e < 0 for e in grid.epochs) \
            or any(u < 1 for cfg in grid.layer_configs for u in cfg) or any(len(c) == 0 for c in grid.layer_configs):
        raise UsageError("grid axis contains an out-of-range value")
    ds = _load_data(args.data)
    data = build_supervised_set(ds, args.rated_capacity, args.eol_threshold)
    split = SplitSpec("kfold", k=args.cv, seed=args.seed) if args.cv else SplitSpec("holdout", args.val_fraction, seed=args.seed)
    try:
        split.indices(data)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    report = grid_search(grid, data, split, use_cv=bool(args.cv), workers=args.workers)
    doc = report.to_dict()
    doc["grid"] = {a: [list(x) if isinstance(x, tuple) else x for x in getattr(grid, a)] for a in GridSpec.AXES}
    doc["combinations"] = len(grid)
    atomic_write_text(args.out, dumps(doc))
    write_manifest(args.out, args, inputs=[args.data], outputs=[args.out], extra={"wall_time_s": report.timings()})
    best = report.best
    print(json.dumps({"best_index": best.index, "accuracy": best.accuracy, "diverged": best.diverged,
                      "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in best.config.items()}}))
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    ds = _load_data(args.data)
    data = _model_set(model, ds)
    if data.features.shape[1] != _model_width(model):
        raise DataError("model feature width does not match the data schema")
    dec = decode_targets(_model_predict(model, data.features), model.labels)
    buf = io.StringIO()
    buf.write("SampleId,Cycle,capacity_actual_ah,capacity_pred_ah,soh_pred,rul_pred_cycles\n")
    for i in range(len(data)):
        buf.write(f"{data.battery_ids[i]},{int(data.cycles[i])},{float(data.capacity_ah[i])!r},"
                  f"{float(dec[i, 0])!r},{float(dec[i, 1])!r},{float(dec[i, 2])!r}\n")
    outputs = [args.out]
    if args.plot:
        atomic_write_text(args.plot, render_capacity_svg(data, dec[:, 0]))
        outputs.append(args.plot)
    atomic_write_text(args.out, buf.getvalue())
    write_manifest(args.out, args, inputs=[args.model, args.data], outputs=outputs)
    print(f"wrote {len(data)} predictions to {args.out}")
    return EXIT_OK


def render_capacity_svg(data, capacity_pred) -> str:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "battrul"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ids = np.asarray(data.battery_ids)
    for bid in dict.fromkeys(data.battery_ids):
        m = ids == bid
        line, = ax.plot(data.cycles[m], data.capacity_ah[m], label=f"{bid} actual")
        ax.plot(data.cycles[m], capacity_pred[m], "--", color=line.get_color(), label=f"{bid} predicted")
    ax.set_xlabel("Cycle")
    ax.set_ylabel("Capacity (Ah)")
    ax.set_title("Capacity vs cycle")
    ax.legend(fontsize="small")
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def cmd_compare(args) -> int:
    _check_fraction(args.val_fraction, "--val-fraction")
    _check_net_flags(args)
    ds = _load_data(args.data)
    data = build_supervised_set(ds, args.rated_capacity, args.eol_threshold)
    split = SplitSpec("holdout", args.val_fraction, seed=args.seed)
    try:
        split.indices(data)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    configs = [("sequential_net", _net_factory(args))] + [(k, _baseline_factory(k, args)) for k in ("linear", "tree", "forest")]
    report = compare_models(data, split, configs, seed=args.seed)
    atomic_write_text(args.out, dumps(report.to_dict()))
    write_manifest(args.out, args, inputs=[args.data], outputs=[args.out], extra={"wall_time_s": report.timings()})
    print(accuracy_table(report))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate, "grid": cmd_grid,
            "predict": cmd_predict, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"battrul: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError) as exc:
        print(f"battrul: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergedError as exc:
        print(f"battrul: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"battrul: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
