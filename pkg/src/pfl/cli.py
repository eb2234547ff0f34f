"""Command line driver for the simulation and classification pipeline.

Subcommands::

    pfl simulate    run one tensile case, write series.csv / curve.csv
    pfl label       turn curves or series into labels.csv (+ sidecar JSON)
    pfl train-eval  train a classifier, write confusion.json / model.json
    pfl uq          Monte Carlo accuracy study, write uq_report.csv
    pfl report      plot-ready CSVs and a plotting script from artifacts

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
failure (assembly, stepping, training, Monte Carlo), 4 data error.  Every
command writes a ``manifest.json`` listing its configuration hash, seeds,
wall time, and a checksum per emitted artifact.  All file writes go
through a temp-file-and-rename so partial artifacts never appear.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .classify import (
    AnnConfig,
    SplitSpec,
    ann_train,
    confusion,
    fit_knn,
    knn_predict,
    save_ann_model,
    save_knn_model,
    split,
    write_confusion,
)
from .constitutive import MaterialParams
from .errors import (
    AssemblyError,
    ConfigurationError,
    DataError,
    PflError,
    StepError,
    TrainingError,
    UqError,
)
from .geometry import (
    _atomic_write_text,
    build_specimen,
    default_sensor_grid,
    read_mesh,
    select_sensors,
    write_mesh,
)
from .labeling import (
    LabelVector,
    label_binary,
    label_location9,
    label_multi3,
    label_multi4,
    load_curve_csv,
    read_labels,
    write_labels,
)
from .sensing import load_series, patterns_from_phi, write_patterns
from .timestepper import (
    CaseConfig,
    case_config,
    default_specimen,
    production_target_edge,
    run_case,
)
from .uq import UqSpec, features_from_phi, mc_accuracy

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_DATA = 4

LABEL_SCHEMES = ("bin1", "bin2", "bin3", "multi3", "multi4", "location9")


# =====================================================================
# Manifest
# =====================================================================

def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, command, config, seeds, started, artifacts):
    canonical = json.dumps(config, sort_keys=True, default=str)
    doc = {
        "command": command,
        "version": __version__,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seeds": seeds,
        "wall_time_s": round(time.monotonic() - started, 3),
        "artifacts": {os.path.basename(p): _sha256(p) for p in artifacts},
    }
    _atomic_write_text(os.path.join(out_dir, "manifest.json"), json.dumps(doc, indent=2) + "\n")


def _ensure_out(path):
    os.makedirs(path, exist_ok=True)
    return path


# =====================================================================
# simulate
# =====================================================================

def _config_from_args(args):
    if args.config:
        with open(args.config) as f:
            doc = json.load(f)
        material = MaterialParams(**doc.pop("material"))
        base = CaseConfig(material=material, **doc)
    elif args.case is not None:
        base = case_config(args.case)
    else:
        raise ConfigurationError("simulate needs --case or --config")
    overrides = {}
    for name in ("dt", "pull_rate", "t_max", "solver"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if not overrides:
        return base
    from dataclasses import replace

    return replace(base, **overrides)


def cmd_simulate(args):
    started = time.monotonic()
    out = _ensure_out(args.out)
    config = _config_from_args(args)
    specimen = default_specimen()
    if args.mesh:
        mesh, _ = read_mesh(args.mesh)
    else:
        target = args.target_edge if args.target_edge else production_target_edge()
        mesh = build_specimen(specimen, target)
    sensors = select_sensors(mesh, default_sensor_grid(specimen))

    record = run_case(config, mesh, sensors)

    series_path = os.path.join(out, "series.csv")
    curve_path = os.path.join(out, "curve.csv")
    mesh_path = os.path.join(out, "mesh.txt")
    record.write_series(series_path)
    record.write_curve(curve_path)
    write_mesh(mesh, mesh_path)
    artifacts = [series_path, curve_path, mesh_path]

    config_doc = {
        "case_id": config.case_id,
        "dt": config.dt,
        "pull_rate": config.pull_rate,
        "t_max": config.t_max,
        "solver": config.solver,
        "material": {
            k: getattr(config.material, k)
            for k in (
                "E", "nu", "rho", "damping", "fatigue_rate", "layer_width",
                "gc", "damage_rate", "rate_exponent", "delta", "thickness",
            )
        },
        "mesh_nodes": mesh.n_nodes,
        "mesh_elements": mesh.n_elements,
        "min_edge": mesh.min_edge,
        "n_sensors": len(sensors),
        "failure_time": record.failure_time,
    }
    _write_manifest(out, "simulate", config_doc, {}, started, artifacts)
    print(
        f"simulated case={config.case_id} steps={record.times.size - 1} "
        f"failure_time={record.failure_time} -> {out}"
    )
    return EXIT_OK


# =====================================================================
# label
# =====================================================================

def cmd_label(args):
    started = time.monotonic()
    out = _ensure_out(args.out)
    scheme = args.scheme

    base = scheme.split(":")[0]
    if base not in LABEL_SCHEMES:
        raise ConfigurationError(f"unknown scheme {args.scheme!r}; choose from {LABEL_SCHEMES}")

    if base in ("bin1", "bin2", "bin3", "multi3"):
        if not args.curve or len(args.curve) != 1:
            raise ConfigurationError(f"scheme {scheme} needs exactly one --curve file")
        curve = load_curve_csv(args.curve[0])
        lv = label_multi3(curve) if base == "multi3" else label_binary(curve, scheme)
    elif base == "multi4":
        if not args.series or len(args.series) != 1:
            raise ConfigurationError("scheme multi4 needs exactly one --series file")
        times, ids, phi = load_series(args.series[0])
        lv = label_multi4(patterns_from_phi(phi, times, ids))
    else:  # location9
        if not args.series or len(args.series) != 3:
            raise ConfigurationError("scheme location9 needs three --series files (cases 1..3)")
        case_ids = args.cases or [1, 2, 3]
        if len(case_ids) != len(args.series):
            raise ConfigurationError("--cases must match --series in length")
        per_case = []
        for cid, path in zip(case_ids, args.series):
            times, ids, phi = load_series(path)
            per_case.append((cid, label_multi4(patterns_from_phi(phi, times, ids))))
        lv = label_location9(per_case)

    labels_path = os.path.join(out, "labels.csv")
    write_labels(lv, labels_path)
    artifacts = [labels_path, labels_path + ".json"]
    config_doc = {
        "scheme": scheme,
        "series": args.series,
        "curve": args.curve,
        "cases": args.cases,
    }
    _write_manifest(out, "label", config_doc, {}, started, artifacts)
    print(f"labeled {len(lv)} rows under scheme {scheme} -> {labels_path}")
    return EXIT_OK


# =====================================================================
# train-eval
# =====================================================================

def _load_task_data(args):
    """Feature matrix, labels and class domain for a train-eval/uq task.

    Presence: one series + one labels file.  Location: three series of
    cases 1..3; per-case labels default to multi4 computed on the fly and
    are recoded to the nine location classes.
    Returns (phi_matrix, labels, classes).
    """
    if not args.series:
        raise ConfigurationError("need --series input(s)")
    if args.task == "presence":
        if len(args.series) != 1:
            raise ConfigurationError("presence task takes exactly one --series")
        if not args.labels or len(args.labels) != 1:
            raise ConfigurationError("presence task needs exactly one --labels file")
        times, ids, phi = load_series(args.series[0])
        lv = read_labels(args.labels[0])
        if len(lv) != phi.shape[0]:
            raise DataError(
                f"labels ({len(lv)}) and series rows ({phi.shape[0]}) disagree"
            )
        return phi, lv.labels, tuple(lv.classes)

    case_ids = args.cases or [1, 2, 3]
    if len(args.series) != 3 or len(case_ids) != 3:
        raise ConfigurationError("location task needs three --series files (cases 1..3)")
    if args.labels and len(args.labels) != 3:
        raise ConfigurationError("location task needs three --labels files when given")
    blocks = []
    per_case = []
    for j, (cid, path) in enumerate(zip(case_ids, args.series)):
        times, ids, phi = load_series(path)
        blocks.append(phi)
        if args.labels:
            lv = read_labels(args.labels[j])
            if len(lv) != phi.shape[0]:
                raise DataError(f"case {cid}: labels and series rows disagree")
        else:
            lv = label_multi4(patterns_from_phi(phi, times, ids))
        per_case.append((cid, lv))
    widths = {b.shape[1] for b in blocks}
    if len(widths) != 1:
        raise DataError(f"series files disagree in sensor count: {sorted(widths)}")
    lv9 = label_location9(per_case)
    return np.vstack(blocks), lv9.labels, tuple(lv9.classes)


def cmd_train_eval(args):
    started = time.monotonic()
    out = _ensure_out(args.out)
    phi, labels, classes = _load_task_data(args)
    features = features_from_phi(phi)

    spec = SplitSpec(comb=args.comb, val_fraction=args.val_fraction, seed=args.seed)
    train, val, test = split(labels, spec)

    model_path = os.path.join(out, "model.json")
    if args.model == "knn":
        pool = np.concatenate([train, val])
        model = fit_knn(features[pool], labels[pool], k=args.k, metric=args.metric)
        preds = knn_predict(model, features[test])
        save_knn_model(model, model_path, data_ref=args.series)
    else:
        config = AnnConfig(
            hidden=args.hidden,
            learning_rate=args.learning_rate,
            batch_size=args.batch_size,
            max_epochs=args.max_epochs,
            patience=args.patience,
        )
        model = ann_train(
            features[train], labels[train], features[val], labels[val],
            config=config, seed=args.seed,
        )
        preds = model.predict(features[test])
        save_ann_model(model, model_path)

    cm = confusion(preds, labels[test], classes)
    confusion_path = os.path.join(out, "confusion.json")
    write_confusion(cm, confusion_path)

    config_doc = {
        "model": args.model,
        "task": args.task,
        "comb": args.comb,
        "seed": args.seed,
        "k": args.k if args.model == "knn" else None,
        "metric": args.metric if args.model == "knn" else None,
        "series": args.series,
        "labels": args.labels,
        "split_sizes": [int(train.size), int(val.size), int(test.size)],
        "total_accuracy": cm.total_accuracy,
    }
    _write_manifest(out, "train-eval", config_doc, {"seed": args.seed}, started,
                    [model_path, confusion_path])
    print(f"{args.model} {args.task} accuracy={cm.total_accuracy:.4f} -> {confusion_path}")
    return EXIT_OK


# =====================================================================
# uq
# =====================================================================

def cmd_uq(args):
    started = time.monotonic()
    out = _ensure_out(args.out)
    phi, labels, _classes = _load_task_data(args)

    spec = UqSpec(
        runs=args.runs,
        noise_stds=tuple(args.noise_std),
        algorithms=tuple(args.algorithms),
        task=args.task,
        base_seed=args.seed,
        comb=args.comb,
        val_fraction=args.val_fraction,
        knn_k=args.k,
        knn_metric=args.metric,
        ann=AnnConfig(
            hidden=args.hidden,
            learning_rate=args.learning_rate,
            batch_size=args.batch_size,
            max_epochs=args.max_epochs,
            patience=args.patience,
        ),
        workers=args.workers,
    )
    result = mc_accuracy(spec, phi, labels)

    report_path = os.path.join(out, "uq_report.csv")
    raw_path = os.path.join(out, "uq_raw.csv")
    result.write_report(report_path)
    result.write_raw(raw_path)

    config_doc = {
        "runs": args.runs,
        "noise_stds": list(args.noise_std),
        "algorithms": list(args.algorithms),
        "task": args.task,
        "comb": args.comb,
        "seed": args.seed,
        "series": args.series,
        "labels": args.labels,
        "failures": len(result.failures),
    }
    _write_manifest(out, "uq", config_doc, {"base_seed": args.seed}, started,
                    [report_path, raw_path])
    for row in result.rows():
        print(
            f"{row['algorithm']} noise={row['noise_std']:g} "
            f"mean={row['mean_acc']:.4f} std={row['std_acc']:.4f} runs={row['runs']}"
        )
    return EXIT_OK


# =====================================================================
# report
# =====================================================================

_PLOT_SCRIPT = '''"""Plot the CSV artifacts sitting next to this script."""
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read_csv(name):
    path = os.path.join(HERE, name)
    if not os.path.exists(path):
        return None, None
    with open(path) as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def main():
    made = []
    header, rows = read_csv("sensor_series.csv")
    if rows:
        t = [float(r[0]) for r in rows]
        plt.figure(figsize=(8, 4))
        for j in range(1, len(header)):
            plt.plot(t, [float(r[j]) for r in rows], lw=0.6)
        plt.xlabel("t (s)")
        plt.ylabel("degradation g")
        plt.tight_layout()
        plt.savefig(os.path.join(HERE, "sensor_series.png"), dpi=150)
        made.append("sensor_series.png")
    header, rows = read_csv("load_curve.csv")
    if rows:
        plt.figure(figsize=(6, 4))
        plt.plot([float(r[1]) for r in rows], [float(r[2]) for r in rows])
        plt.xlabel("u (m)")
        plt.ylabel("f (N)")
        plt.tight_layout()
        plt.savefig(os.path.join(HERE, "load_curve.png"), dpi=150)
        made.append("load_curve.png")
    header, rows = read_csv("accuracy_vs_noise.csv")
    if rows:
        plt.figure(figsize=(6, 4))
        algs = sorted({r[0] for r in rows})
        for alg in algs:
            pts = [(float(r[1]), float(r[2]), float(r[3])) for r in rows if r[0] == alg]
            pts.sort()
            plt.errorbar([p[0] for p in pts], [p[1] for p in pts],
                         yerr=[p[2] for p in pts], marker="o", label=alg)
        plt.xlabel("noise std")
        plt.ylabel("mean accuracy")
        plt.legend()
        plt.tight_layout()
        plt.savefig(os.path.join(HERE, "accuracy_vs_noise.png"), dpi=150)
        made.append("accuracy_vs_noise.png")
    print("wrote", ", ".join(made) if made else "nothing (no inputs)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
'''


def cmd_report(args):
    started = time.monotonic()
    src = args.in_dir
    out = _ensure_out(args.out)
    artifacts = []

    series_path = os.path.join(src, "series.csv")
    if os.path.exists(series_path):
        times, ids, phi = load_series(series_path)
        tsm = patterns_from_phi(phi, times, ids)
        dest = os.path.join(out, "sensor_series.csv")
        write_patterns(tsm, dest)
        artifacts.append(dest)

    curve_path = os.path.join(src, "curve.csv")
    if os.path.exists(curve_path):
        curve = load_curve_csv(curve_path)
        dest = os.path.join(out, "load_curve.csv")
        lines = ["t,u,f"] + [
            f"{t:.17g},{u:.17g},{f:.17g}" for t, u, f in zip(curve.t, curve.u, curve.f)
        ]
        _atomic_write_text(dest, "\n".join(lines) + "\n")
        artifacts.append(dest)

    uq_path = os.path.join(src, "uq_report.csv")
    if os.path.exists(uq_path):
        with open(uq_path) as f:
            header = f.readline().strip()
            if header != "algorithm,noise_std,mean_acc,std_acc,runs":
                raise DataError(f"{uq_path}: unexpected header")
            rows = [line.strip() for line in f if line.strip()]
        dest = os.path.join(out, "accuracy_vs_noise.csv")
        _atomic_write_text(dest, "algorithm,noise_std,mean_acc,std_acc,runs\n" + "\n".join(rows) + "\n")
        artifacts.append(dest)

    if not artifacts:
        raise ConfigurationError(
            f"no reportable artifacts (series.csv, curve.csv, uq_report.csv) in {src}"
        )

    script_path = os.path.join(out, "plot_artifacts.py")
    _atomic_write_text(script_path, _PLOT_SCRIPT)
    artifacts.append(script_path)
    _write_manifest(out, "report", {"in": src}, {}, started, artifacts)
    print(f"report artifacts -> {out}")
    return EXIT_OK


# =====================================================================
# Parser / entry point
# =====================================================================

def _add_classifier_flags(p):
    p.add_argument("--comb", type=int, default=2, help="split preset 1..5 (default 2)")
    p.add_argument("--val-fraction", type=float, default=0.15, dest="val_fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=2, help="k-NN neighbor count")
    p.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine")
    p.add_argument("--hidden", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.5, dest="learning_rate")
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--max-epochs", type=int, default=2000, dest="max_epochs")
    p.add_argument("--patience", type=int, default=50)


def _add_task_inputs(p):
    p.add_argument("--task", choices=("presence", "location"), required=True)
    p.add_argument("--series", nargs="+", help="raw damage series.csv file(s)")
    p.add_argument("--labels", nargs="+", help="labels.csv file(s); optional for location")
    p.add_argument("--cases", nargs="+", type=int, help="case ids matching --series")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pfl",
        description="Phase-field fatigue fracture simulation and failure classification.",
    )
    parser.add_argument("--version", action="version", version=f"pfl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one tensile case")
    p.add_argument("--case", type=int, choices=range(1, 7), help="benchmark case 1..6")
    p.add_argument("--config", help="JSON case configuration file")
    p.add_argument("--mesh", help="mesh text file (default: build the specimen mesh)")
    p.add_argument("--target-edge", type=float, dest="target_edge",
                   help="element size for the built mesh (m)")
    p.add_argument("--dt", type=float)
    p.add_argument("--pull-rate", type=float, dest="pull_rate")
    p.add_argument("--t-max", type=float, dest="t_max")
    p.add_argument("--solver", choices=("direct", "cg"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("label", help="generate labels from artifacts")
    p.add_argument("--scheme", required=True,
                   help="bin1 | bin2 | bin3[:85|90|95] | multi3 | multi4 | location9")
    p.add_argument("--series", nargs="+")
    p.add_argument("--curve", nargs="+")
    p.add_argument("--cases", nargs="+", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train-eval", help="train and evaluate a classifier")
    p.add_argument("--model", choices=("knn", "ann"), required=True)
    _add_task_inputs(p)
    _add_classifier_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("uq", help="Monte Carlo accuracy study")
    _add_task_inputs(p)
    _add_classifier_flags(p)
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--noise-std", nargs="+", type=float, default=[0.0], dest="noise_std")
    p.add_argument("--algorithms", nargs="+", choices=("knn", "ann"), default=["knn", "ann"])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_uq)

    p = sub.add_parser("report", help="plot-ready CSVs from pipeline artifacts")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AssemblyError, StepError, TrainingError, UqError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PflError as exc:  # any anticipated failure not mapped above
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
