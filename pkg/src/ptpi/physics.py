"""PDE problems: strong-form residuals and analytic ground truth.

Residuals operate on a :class:`FieldBundle` evaluated on a batch of ``B``
parameter/time samples and ``M`` spatial points; every entry has shape
``(B, M)`` and may be a tape variable.  Coordinates ``x`` have shape
``(M, d)`` (shared points) or ``(B, M, d)`` (points per sample), ``mu`` is
``(B, p)`` and ``t`` is ``(B,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import autodiff as ad
from .pod import SnapshotSet

__all__ = [
    "FieldBundle",
    "PDEProblem",
    "Eikonal",
    "ADR2D",
    "DomainError",
    "PlacementError",
    "get_problem",
    "grid_mesh",
    "generate_snapshots",
]

EIKONAL_EPS = 1e-8


class DomainError(ValueError):
    """Evaluation outside the problem's valid space-time window."""


class PlacementError(ValueError):
    """A boundary point does not lie on its boundary segment."""


@dataclass
class FieldBundle:
    """Field value and derivatives per channel, each ``(B, M)``.

    ``grad[c][i]`` is the derivative of channel ``c`` along coordinate ``i``.
    Unrequested quantities are ``None``.
    """

    value: list[Any]
    grad: list[list[Any]] | None = None
    lap: list[Any] | None = None
    dt: list[Any] | None = None


def grid_mesh(lo, hi, n: int) -> np.ndarray:
    """Tensor grid with ``n`` equispaced points per axis; the last axis varies fastest."""
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _split(x):
    x = np.asarray(x, dtype=np.float64)
    return [x[..., i] for i in range(x.shape[-1])]


def _bmu(mu):
    # (B, p) -> list of p arrays shaped (B, 1) so they broadcast over points
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    return [mu[:, i : i + 1] for i in range(mu.shape[1])]


def _bt(t, B):
    if t is None:
        return np.zeros((B, 1))
    return np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (B, 1))


@dataclass(frozen=True)
class PDEProblem:
    name: str
    d: int
    p: int
    channels: int
    stationary: bool
    box_lo: tuple[float, ...]
    box_hi: tuple[float, ...]
    time_range: tuple[float, float] | None = None
    # derivative quantities the interior residual consumes
    needs: frozenset = field(default_factory=frozenset)
    boundary_kind: str = "box"

    # -- domain -------------------------------------------------------------
    def in_domain(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = np.array(self.box_lo), np.array(self.box_hi)
        return np.all((x > lo) & (x < hi), axis=-1)

    def on_box_boundary(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = np.array(self.box_lo), np.array(self.box_hi)
        inside = np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)
        touching = np.any((np.abs(x - lo) <= tol) | (np.abs(x - hi) <= tol), axis=-1)
        return inside & touching

    def check_time(self, t):
        if self.stationary or t is None or self.time_range is None:
            return
        t = np.asarray(t)
        lo, hi = self.time_range
        if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
            raise DomainError(f"t outside valid window [{lo}, {hi}]")

    def mesh(self, n: int) -> np.ndarray:
        return grid_mesh(self.box_lo, self.box_hi, n)

    # -- residuals ------------------------------------------------------------
    def interior_residual(self, bundle: FieldBundle, x, mu, t=None) -> list:
        raise NotImplementedError

    def boundary_value(self, x, mu, t=None) -> np.ndarray:
        """Dirichlet datum ``g`` with shape ``(B, M, C)``."""
        raise NotImplementedError

    def on_boundary(self, x, mu) -> np.ndarray:
        raise NotImplementedError

    def boundary_residual(self, bundle: FieldBundle, x, mu, t=None, check: bool = True) -> list:
        """Dirichlet residual ``u - g`` per channel."""
        if check and not np.all(self.on_boundary(x, mu)):
            raise PlacementError(f"{self.name}: boundary point off its segment")
        g = self.boundary_value(x, mu, t)
        return [bundle.value[c] - g[..., c] for c in range(self.channels)]

    def initial_value(self, x, mu) -> np.ndarray:
        raise NotImplementedError(f"{self.name} is stationary")

    def initial_residual(self, bundle: FieldBundle, x, mu) -> list:
        if self.stationary:
            raise NotImplementedError(f"{self.name} is stationary; no initial condition")
        u0 = self.initial_value(x, mu)
        return [bundle.value[c] - u0[..., c] for c in range(self.channels)]

    # -- truth --------------------------------------------------------------
    def exact_solution(self, x, mu, t=None) -> np.ndarray:
        """Closed-form solution with shape ``(B, M, C)``."""
        raise NotImplementedError(f"{self.name} has no analytic solution")

    def exact_bundle(self, x, mu, t=None) -> FieldBundle:
        raise NotImplementedError(f"{self.name} has no analytic solution")


class Eikonal(PDEProblem):
    """``|grad u| = 1`` in ``(-1, 1)^2``, ``u = 0`` on the circle of radius ``mu``."""

    def __init__(self):
        super().__init__(
            name="eikonal",
            d=2,
            p=1,
            channels=1,
            stationary=True,
            box_lo=(-1.0, -1.0),
            box_hi=(1.0, 1.0),
            needs=frozenset({"grad"}),
            boundary_kind="circle",
        )

    def interior_residual(self, bundle, x=None, mu=None, t=None):
        gx, gy = bundle.grad[0]
        return [ad.sqrt(gx * gx + gy * gy + EIKONAL_EPS**2) - 1.0]

    def on_boundary(self, x, mu, tol: float = 1e-12):
        x1, x2 = _split(x)
        (m,) = _bmu(mu)
        return np.abs(x1 * x1 + x2 * x2 - m * m) <= tol * np.maximum(1.0, m * m)

    def boundary_value(self, x, mu, t=None):
        x1, _ = _split(x)
        B = np.atleast_2d(mu).shape[0]
        return np.zeros(np.broadcast_shapes((B, 1), x1.shape) + (1,))

    def circle_points(self, mu, count: int) -> tuple[np.ndarray, np.ndarray]:
        """``count`` equispaced points on each circle, with a mask of those inside the box.

        Returns ``(B, count, 2)`` points and a ``(B, count)`` float mask.
        """
        r = np.asarray(mu, dtype=np.float64).reshape(-1, 1)
        theta = 2.0 * np.pi * np.arange(count) / count
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
        lo, hi = np.array(self.box_lo), np.array(self.box_hi)
        mask = np.all((pts >= lo) & (pts <= hi), axis=-1).astype(np.float64)
        return pts, mask

    def exact_solution(self, x, mu, t=None):
        x1, x2 = _split(x)
        (m,) = _bmu(mu)
        return (m - np.sqrt(x1 * x1 + x2 * x2))[..., None]

    def exact_bundle(self, x, mu, t=None):
        x1, x2 = _split(x)
        (m,) = _bmu(mu)
        r = np.sqrt(x1 * x1 + x2 * x2)
        u = m - r
        gx = np.broadcast_to(-x1 / r, u.shape)
        gy = np.broadcast_to(-x2 / r, u.shape)
        lap = np.broadcast_to(-1.0 / r, u.shape)
        return FieldBundle([u], [[gx, gy]], [lap], None)


ADR_DIFFUSION = 0.05
ADR_REACTION = 0.05


def advection_speed(t):
    """``a(t) = log(0.1 t)``."""
    return np.log(0.1 * np.asarray(t, dtype=np.float64))


class ADR2D(PDEProblem):
    """Manufactured advection-diffusion-reaction problem on the unit square.

    ``u_t - 0.05 lap u + 0.05 u + a(t) u_x = f`` with ``a(t) = log(0.1 t)`` and
    ``u*(x, y, mu, t) = sin(pi mu1 x) sin(pi mu2 y) (1 - exp(-t))``.  The
    forcing is ``f = L u*``; the Dirichlet datum is the trace of ``u*`` (zero on
    ``x = 0`` and ``y = 0``); the initial datum is ``u0 = 0``.
    """

    def __init__(self, t_min: float = 0.1, t_max: float = 2.2):
        super().__init__(
            name="adr2d",
            d=2,
            p=2,
            channels=1,
            stationary=False,
            box_lo=(0.0, 0.0),
            box_hi=(1.0, 1.0),
            time_range=(t_min, t_max),
            needs=frozenset({"grad", "lap", "dt"}),
            boundary_kind="box",
        )

    def _parts(self, x, mu, t):
        x1, x2 = _split(x)
        m1, m2 = _bmu(mu)
        tt = _bt(t, m1.shape[0])
        sx, cx = np.sin(np.pi * m1 * x1), np.cos(np.pi * m1 * x1)
        sy, cy = np.sin(np.pi * m2 * x2), np.cos(np.pi * m2 * x2)
        return m1, m2, tt, sx, cx, sy, cy

    def forcing(self, x, mu, t):
        m1, m2, tt, sx, cx, sy, cy = self._parts(x, mu, t)
        S = sx * sy
        E = 1.0 - np.exp(-tt)
        return (
            S * np.exp(-tt)
            + ADR_DIFFUSION * np.pi**2 * (m1 * m1 + m2 * m2) * S * E
            + ADR_REACTION * S * E
            + advection_speed(tt) * np.pi * m1 * cx * sy * E
        )

    def interior_residual(self, bundle, x, mu, t):
        self.check_time(t)
        a = advection_speed(_bt(t, np.atleast_2d(mu).shape[0]))
        u, ux, lap, ut = bundle.value[0], bundle.grad[0][0], bundle.lap[0], bundle.dt[0]
        return [ut - ADR_DIFFUSION * lap + ADR_REACTION * u + a * ux - self.forcing(x, mu, t)]

    def on_boundary(self, x, mu=None):
        return self.on_box_boundary(x)

    def boundary_value(self, x, mu, t=None):
        return self.exact_solution(x, mu, t)

    def initial_value(self, x, mu):
        x1, _ = _split(x)
        B = np.atleast_2d(mu).shape[0]
        return np.zeros(np.broadcast_shapes((B, 1), x1.shape) + (1,))

    def exact_solution(self, x, mu, t=None):
        m1, m2, tt, sx, cx, sy, cy = self._parts(x, mu, t)
        return (sx * sy * (1.0 - np.exp(-tt)))[..., None]

    def exact_bundle(self, x, mu, t=None):
        m1, m2, tt, sx, cx, sy, cy = self._parts(x, mu, t)
        E = 1.0 - np.exp(-tt)
        u = sx * sy * E
        gx = np.pi * m1 * cx * sy * E
        gy = np.pi * m2 * sx * cy * E
        lap = -np.pi**2 * (m1 * m1 + m2 * m2) * u
        dt = sx * sy * np.exp(-tt)
        return FieldBundle([u], [[gx, gy]], [lap], [dt])


_PROBLEMS = {"eikonal": Eikonal, "adr2d": ADR2D}


def get_problem(name: str) -> PDEProblem:
    try:
        return _PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(_PROBLEMS)}") from None


def generate_snapshots(problem: PDEProblem, params, times, mesh) -> SnapshotSet:
    """Evaluate the analytic solution on ``mesh`` for every (parameter, time) pair."""
    params = np.asarray(params, dtype=np.float64).reshape(-1, problem.p)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if params.shape[0] == 0 or times.size == 0:
        raise ValueError("empty parameter or time list")
    n_h = mesh.shape[0]
    cols = []
    for mu in params:
        for t in times:
            u = problem.exact_solution(mesh, mu[None, :], None if problem.stationary else np.array([t]))
            # channel-major stacking of (N_h, C)
            cols.append(u[0].T.reshape(-1))
    fields = np.stack(cols, axis=1).reshape(n_h * problem.channels, -1)
    return SnapshotSet(mesh, params, times, fields, problem.channels)
