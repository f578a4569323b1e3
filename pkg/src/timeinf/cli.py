"""Command-line entry point: ``timeinf {synth,detect,eval,prune,plot}``.

Exit codes: 0 success, 1 numerical/internal failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .anomaly import METHODS, detect, evaluate, label_runs
from .ar import ArConfig
from .datagen import SynthSpec, SynthSpecError, generate, parse_anomaly, parse_base
from .io import (
    InputError,
    atomic_write_bytes,
    file_digest,
    read_column,
    read_labels,
    read_series,
    write_csv,
    write_manifest,
)
from .pruning import PruneConfig, run_prune
from .series import SeriesError, WindowSpec
from .solvers import SolverChoice

log = logging.getLogger("timeinf")

SOLVER_FLAGS = {"direct": "direct", "cg": "conjugate_gradient", "hessian-free": "hessian_free"}


class UsageError(ValueError):
    pass


def _thread_limit():
    n = os.environ.get("TIMEINF_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def _manifest(args, started: float, inputs: list[str], outputs: list[str], seed=None) -> None:
    params = {k: v for k, v in vars(args).items() if k not in ("func",)}
    record = {
        "command": args.command,
        "params": params,
        "inputs": {p: file_digest(p) for p in inputs if p},
        "outputs": {p: file_digest(p) for p in outputs},
        "seed": seed,
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    for out in outputs:
        write_manifest(out, record)


def _solver(args) -> SolverChoice:
    return SolverChoice(SOLVER_FLAGS[args.solver], cg_tol=args.cg_tol)


# -- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.perf_counter()
    spec = SynthSpec(
        length=args.length,
        base=parse_base(args.base),
        anomalies=tuple(parse_anomaly(a) for a in args.anomaly),
        seed=args.seed,
    )
    series, labels = generate(spec)
    labels_out = args.labels_out or str(Path(args.out).with_suffix("")) + "_labels.csv"
    write_csv(args.out, ["value"], ([v] for v in series.values[:, 0]))
    write_csv(labels_out, ["label"], ([int(v)] for v in labels))
    _manifest(args, started, [], [args.out, labels_out], seed=args.seed)
    return 0


def cmd_detect(args) -> int:
    started = time.perf_counter()
    series = read_series(args.input, args.timestamp_column)
    spec = WindowSpec(args.block_len, args.stride)
    cfg = ArConfig(args.block_len, args.ridge, args.intercept)
    labels = read_labels(args.labels) if args.labels else None
    if labels is not None and len(labels) != series.length:
        raise InputError("labels and series differ in length")
    scores, pred, coverage = detect(series, args.method, spec, cfg, _solver(args))
    write_csv(
        args.out,
        ["index", "score", "coverage", "label_pred"],
        zip(range(series.length), scores.scores, coverage, pred.labels),
    )
    outputs = [args.out]
    if labels is not None:
        report = evaluate(scores.scores, labels, best_of_topk=args.best_of_topk).as_dict()
        line = json.dumps(report, sort_keys=True)
        if args.metrics_out:
            atomic_write_bytes(args.metrics_out, (line + "\n").encode())
            outputs.append(args.metrics_out)
        else:
            print(line)
    _manifest(args, started, [args.input, args.labels], outputs)
    return 0


def cmd_eval(args) -> int:
    scores = read_column(args.scores, "score")
    labels = read_labels(args.labels)
    if len(scores) != len(labels):
        raise InputError(f"length mismatch: {len(scores)} scores vs {len(labels)} labels")
    report = evaluate(scores, labels, best_of_topk=args.best_of_topk)
    if report.auc is None:
        log.warning("labels contain a single class; AUC reported as null")
    print(json.dumps(report.as_dict(), sort_keys=True))
    return 0


def _parse_order(text: str) -> tuple[str, int]:
    if text in ("descending", "ascending"):
        return text, 0
    if text.startswith("random"):
        _, _, seed = text.partition(":")
        try:
            return "random", int(seed or 0)
        except ValueError:
            pass
    raise UsageError(f"bad --order {text!r}; use descending, ascending or random:<seed>")


def cmd_prune(args) -> int:
    started = time.perf_counter()
    series = read_series(args.input, args.timestamp_column)
    order, seed = _parse_order(args.order)
    cfg = PruneConfig(
        train_size=args.train,
        val_size=args.val,
        test_size=args.test,
        block_len=args.block_len,
        prune_block_size=args.prune_block_size,
        num_steps=args.steps,
        removal_order=order,
        seed=seed,
        ridge=args.ridge,
        solver=_solver(args),
    )
    curve = run_prune(series.column(args.dim), cfg)
    last = len(curve.records) - 1
    write_csv(
        args.out,
        ["step", "fraction_removed", "r2", "rmse", "truncated"],
        (
            [r.step, r.fraction_removed, r.r2, r.rmse, int(curve.truncated and i == last)]
            for i, r in enumerate(curve.records)
        ),
    )
    _manifest(args, started, [args.input], [args.out], seed=seed)
    return 0


def cmd_plot(args) -> int:
    started = time.perf_counter()
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    series = read_series(args.series, args.timestamp_column)
    score_sets = [read_column(p, "score") for p in args.scores]
    for p, s in zip(args.scores, score_sets):
        if len(s) != series.length:
            raise InputError(f"{p}: length {len(s)} differs from series length {series.length}")
    labels = read_labels(args.labels) if args.labels else None
    if labels is not None and len(labels) != series.length:
        raise InputError("labels and series differ in length")

    plt.rcParams["svg.hashsalt"] = "timeinf"
    n_panels = 1 + len(score_sets)
    fig, axes = plt.subplots(n_panels, 1, figsize=(10, 1.8 * n_panels), sharex=True, squeeze=False)
    axes = axes[:, 0]
    t = np.arange(series.length)
    for j in range(series.n_dims):
        axes[0].plot(t, series.values[:, j], lw=0.8, label=series.dim_names[j])
    axes[0].set_ylabel("series")
    for ax, path, s in zip(axes[1:], args.scores, score_sets):
        ax.plot(t, s, lw=0.8, color="tab:blue")
        ax.set_ylabel(Path(path).stem, fontsize=8)
    if labels is not None:
        for k, (a, b) in enumerate(label_runs(labels)):
            for ax in axes:
                ax.axvspan(a - 0.5, b - 0.5, color="red", alpha=0.25, lw=0,
                           gid=f"label-span-{k}" if ax is axes[0] else None)
    axes[-1].set_xlabel("time index")
    fig.tight_layout()
    buf_path = Path(args.out)
    buf_path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_bytes(buf_path, buf.getvalue())
    _manifest(args, started, [args.series, args.labels, *args.scores], [args.out])
    return 0


# -- parser -----------------------------------------------------------------


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--block-len", type=int, default=100)
    p.add_argument("--ridge", type=float, default=1e-8, help="relative ridge strength")
    p.add_argument("--solver", choices=sorted(SOLVER_FLAGS), default="direct")
    p.add_argument("--cg-tol", type=float, default=1e-10)
    p.add_argument("--timestamp-column", action="store_true",
                   help="first CSV column is a timestamp and is ignored")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timeinf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic series with injected anomalies")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--base", required=True, help="ar1:<phi>:<sigma> or sine:<period>:<amp>[:<noise>]")
    p.add_argument("--anomaly", action="append", default=[], help="<kind>:<start>:<span>:<magnitude>")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="score time points and flag anomalies")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=METHODS, default="timeinf")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--labels")
    p.add_argument("--best-of-topk", action="store_true",
                   help="report the better F1 of k-means and top-k (k = true count)")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics-out")
    _add_model_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="AUC/F1 of a scores file against labels")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--best-of-topk", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prune", help="block-wise data pruning curve")
    p.add_argument("--input", required=True)
    p.add_argument("--dim", type=int, default=0)
    p.add_argument("--train", type=int, default=3000)
    p.add_argument("--val", type=int, default=1000)
    p.add_argument("--test", type=int, default=1000)
    p.add_argument("--prune-block-size", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--order", default="descending", help="descending | ascending | random:<seed>")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("plot", help="SVG of the series and score traces")
    p.add_argument("--series", required=True)
    p.add_argument("--scores", action="append", default=[])
    p.add_argument("--labels")
    p.add_argument("--timestamp-column", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        with _thread_limit():
            return args.func(args)
    except (InputError, UsageError, SeriesError, SynthSpecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
