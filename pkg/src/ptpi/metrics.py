"""Relative error indicators over a test set."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .networks import ShapeError
from .pod import SnapshotSet

log = logging.getLogger(__name__)

__all__ = ["ErrorReport", "ZeroTruthWarning", "error_metrics", "write_report"]


class ZeroTruthWarning(UserWarning):
    pass


@dataclass
class ErrorReport:
    """``E_of_t`` per test time, ``e_of_mu`` per test parameter and the global mean ``global_E``."""

    E_of_t: np.ndarray
    e_of_mu: np.ndarray
    global_E: float
    times: np.ndarray
    params: np.ndarray
    metadata: dict = field(default_factory=dict)


def _fields(x) -> np.ndarray:
    return x.fields if isinstance(x, SnapshotSet) else np.asarray(x, dtype=np.float64)


def error_metrics(pred, truth: SnapshotSet, **metadata) -> ErrorReport:
    """Time-wise, per-parameter and global relative errors of ``pred`` against ``truth``.

    ``pred`` is a snapshot set or an array laid out like ``truth.fields``.
    Snapshots whose truth norm is zero are left out of every average.
    """
    P, U = _fields(pred), truth.fields
    if P.shape != U.shape:
        raise ShapeError(f"prediction shape {P.shape} != truth shape {U.shape}")
    n_s, n_t = truth.n_s, truth.n_t
    # (n_s, n_t) squared norms; columns are parameter-major
    err2 = np.sum((P - U) ** 2, axis=0).reshape(n_s, n_t)
    ref2 = np.sum(U * U, axis=0).reshape(n_s, n_t)
    ok = ref2 > 0
    n_zero = int(np.sum(~ok))
    if n_zero:
        warnings.warn(f"{n_zero} zero-norm truth snapshots excluded", ZeroTruthWarning, stacklevel=2)
    rel = np.full((n_s, n_t), np.nan)
    rel[ok] = np.sqrt(err2[ok] / ref2[ok])
    with np.errstate(invalid="ignore"):
        E_t = np.array([np.mean(rel[ok[:, k], k]) if ok[:, k].any() else np.nan for k in range(n_t)])
        den = np.sum(np.where(ok, ref2, 0.0), axis=1)
        num = np.sum(np.where(ok, err2, 0.0), axis=1)
        e_mu = np.where(den > 0, np.sqrt(num / np.where(den > 0, den, 1.0)), np.nan)
    global_E = float(np.mean(rel[ok])) if ok.any() else float("nan")
    meta = {"n_params": n_s, "n_times": n_t, "excluded": n_zero, **metadata}
    return ErrorReport(E_t, e_mu, global_E, truth.times.copy(), truth.params.copy(), meta)


def _fmt(x: float) -> str:
    return f"{x:.7e}"  # 8 significant digits


def write_report(report: ErrorReport, directory, prefix: str = "") -> list[Path]:
    """One CSV per indicator: ``E_of_t.csv``, ``e_of_mu.csv`` and ``global_E.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    p = directory / f"{prefix}E_of_t.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "E"])
        for t, e in zip(report.times, report.E_of_t):
            w.writerow([_fmt(t), _fmt(e)])
    paths.append(p)
    p = directory / f"{prefix}e_of_mu.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"mu{i}" for i in range(report.params.shape[1])] + ["e"])
        for mu, e in zip(report.params, report.e_of_mu):
            w.writerow([_fmt(m) for m in mu] + [_fmt(e)])
    paths.append(p)
    p = directory / f"{prefix}global_E.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["global_E", "n_params", "n_times", "excluded"])
        m = report.metadata
        w.writerow([_fmt(report.global_E), m["n_params"], m["n_times"], m["excluded"]])
    paths.append(p)
    return paths
