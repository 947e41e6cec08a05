"""Command-line entry points: make-data, train, evaluate, ablate, bench-ad."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import RunConfig, default_config, load_config, parse_grid
from .fileio import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .metrics import error_metrics, write_report
from .model import evaluate_on_mesh
from .networks import ConfigurationError, init_dense, net_jet
from .physics import get_problem, generate_snapshots
from .pod import SnapshotSet
from .sampling import ablation_subsets
from .training import run_pipeline

log = logging.getLogger("ptpi")

__all__ = ["main", "bench_ad", "make_datasets", "predict", "train_run", "ablate"]


# ---------------------------------------------------------------------------
# library-level commands


def make_datasets(cfg: RunConfig) -> tuple[SnapshotSet, SnapshotSet]:
    problem = get_problem(cfg.problem)
    mesh = problem.mesh(cfg.mesh_n)
    sup = generate_snapshots(problem, parse_grid(cfg.sup_params), parse_grid(cfg.sup_times)[:, 0], mesh)
    test = generate_snapshots(problem, parse_grid(cfg.test_params), parse_grid(cfg.test_times)[:, 0], mesh)
    return sup, test


def predict(model, data: SnapshotSet) -> np.ndarray:
    """Model fields laid out like ``data.fields``."""
    mu, t = data.pairs()
    return evaluate_on_mesh(model, mu, None if model.stationary else t).T


def train_run(cfg: RunConfig, sup: SnapshotSet, test: SnapshotSet | None, out: Path, strategy: str | None = None):
    """Train, then write checkpoint, history, seeds, config and test metrics to ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    problem = get_problem(cfg.problem)
    tc = cfg.train_config(strategy)
    result = run_pipeline(tc, sup, problem)
    text = cfg.to_text()
    (out / "config.ini").write_text(text)
    (out / "seeds.txt").write_text(f"seed = {tc.seed}\n")
    result.history.to_csv(out / "history.csv")
    save_checkpoint(result.model, out / "model.ptpc", text)
    report = None
    if test is not None:
        report = error_metrics(predict(result.model, test), test, strategy=tc.strategy, N_data=sup.n_s)
        write_report(report, out)
    return result, report


def ablate(cfg: RunConfig, sup: SnapshotSet, test: SnapshotSet, out: Path, strategies=("ptpi", "pod-dl-rom")):
    """Train every strategy on each nested supervised subset; one report per pair."""
    reports = []
    for idx in ablation_subsets(sup.params, cfg.seed):
        sub = sup.subset(idx)
        for strategy in strategies:
            _, rep = train_run(cfg, sub, test, out / f"{strategy}_N{len(idx)}", strategy)
            reports.append((strategy, len(idx), rep))
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "N_data", "global_E"])
        for strategy, n, rep in reports:
            w.writerow([strategy, n, f"{rep.global_E:.7e}"])
    return reports


def bench_ad(
    depths=range(3, 11),
    widths=tuple(5 + 3 * k for k in range(9)),
    batch: int = 100,
    repeats: int = 10,
    d: int = 3,
    N: int = 10,
    fixed_width: int = 10,
    fixed_depth: int = 10,
    inner: int = 50,
    seed: int = 0,
) -> list[dict]:
    """Time first- and second-order input derivatives of a trunk-like net.

    A net of depth ``l`` has ``l - 1`` hidden layers.  Each timing is the
    mean wall time of ``inner`` jet sweeps carrying all ``d`` coordinate
    directions, after one untimed warm-up sweep; ``repeats`` timings give
    min/mean/max.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, (batch, d))
    dirs = np.eye(d)
    configs = [("depth", l, fixed_width) for l in depths] + [("width", fixed_depth, w) for w in widths]
    rows = []
    for scenario, depth, width in configs:
        net = init_dense([d] + [width] * (depth - 1) + [N], "elu", seed)
        row = {"scenario": scenario, "depth": depth, "width": width}
        for order in (1, 2):
            net_jet(net, ad.seed_jet(x, dirs, order))
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                for _ in range(inner):
                    net_jet(net, ad.seed_jet(x, dirs, order))
                times.append((time.perf_counter() - t0) / inner)
            row[f"d{order}_min"], row[f"d{order}_mean"], row[f"d{order}_max"] = min(times), float(np.mean(times)), max(times)
        rows.append(row)
    return rows


BENCH_COLUMNS = ("scenario", "depth", "width", "d1_min", "d1_mean", "d1_max", "d2_min", "d2_mean", "d2_max")


def write_bench(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r["scenario"], r["depth"], r["width"]] + [f"{r[c]:.7e}" for c in BENCH_COLUMNS[3:]])


# ---------------------------------------------------------------------------
# argument handling


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config(args.problem)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _datasets(cfg: RunConfig, out: Path):
    train, test = out / "train.ptpi", out / "test.ptpi"
    if not train.exists():
        raise FileNotFoundError(f"{train} not found; run make-data first")
    return load_dataset(train), (load_dataset(test) if test.exists() else None)


def cmd_make_data(args):
    cfg = _config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sup, test = make_datasets(cfg)
    save_dataset(sup, out / "train.ptpi")
    save_dataset(test, out / "test.ptpi")
    print(f"wrote {out / 'train.ptpi'} ({sup.fields.shape[1]} columns), {out / 'test.ptpi'} ({test.fields.shape[1]} columns)")


def cmd_train(args):
    cfg = _config(args)
    out = Path(cfg.out)
    sup, test = _datasets(cfg, out)
    _, report = train_run(cfg, sup, test, out)
    if report is not None:
        print(f"global_E = {report.global_E:.7e}")


def cmd_evaluate(args):
    model, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    report = error_metrics(predict(model, data), data)
    out = Path(args.out or Path(args.checkpoint).parent)
    write_report(report, out, prefix=args.prefix)
    print(f"global_E = {report.global_E:.7e}")


def cmd_ablate(args):
    cfg = _config(args)
    out = Path(cfg.out)
    sup, test = _datasets(cfg, out)
    if test is None:
        raise FileNotFoundError("ablation needs a test set; run make-data first")
    for strategy, n, rep in ablate(cfg, sup, test, out / "ablation"):
        print(f"{strategy} N_data={n} global_E={rep.global_E:.7e}")


def cmd_bench_ad(args):
    rows = bench_ad(args.depths, args.widths, args.batch, args.repeats)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_bench(rows, out / "bench_ad.csv")
    print(f"wrote {out / 'bench_ad.csv'}")


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--problem", default="eikonal", help="defaults to use when no config is given")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ptpi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("make-data", parents=[common], help="write supervised and test datasets").set_defaults(func=cmd_make_data)
    sub.add_parser("train", parents=[common], help="train and write a run directory").set_defaults(func=cmd_train)
    ev = sub.add_parser("evaluate", parents=[common], help="error indicators of a checkpoint on a dataset")
    ev.add_argument("checkpoint")
    ev.add_argument("data")
    ev.add_argument("--prefix", default="")
    ev.set_defaults(func=cmd_evaluate)
    sub.add_parser("ablate", parents=[common], help="nested-subset study for ptpi and pod-dl-rom").set_defaults(func=cmd_ablate)
    b = sub.add_parser("bench-ad", parents=[common], help="time input derivatives against depth and width")
    b.add_argument("--depths", type=_ints, default=list(range(3, 11)))
    b.add_argument("--widths", type=_ints, default=[5 + 3 * k for k in range(9)])
    b.add_argument("--batch", type=int, default=100)
    b.add_argument("--repeats", type=int, default=10)
    b.set_defaults(func=cmd_bench_ad)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # surfaced as one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigurationError, FileNotFoundError)) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
