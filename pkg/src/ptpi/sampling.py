"""Seeded samplers for residual sets, collocation points and ablation subsets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .networks import ConfigurationError
from .physics import PDEProblem

log = logging.getLogger(__name__)

__all__ = [
    "BoxSampler",
    "SamplerError",
    "sample_residual_set",
    "ablation_subsets",
    "ablation_sizes",
    "Collocation",
    "collocation_points",
]


class SamplerError(RuntimeError):
    pass


@dataclass
class BoxSampler:
    """Uniform sampler over an axis-aligned box.

    Each draw is generated from ``(seed, counter)`` alone, so the same
    seed and stream position always reproduce the same points.
    """

    bounds: np.ndarray  # (k, 2)
    seed: int = 0
    counter: int = 0

    def __post_init__(self):
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=np.float64))
        if np.any(self.bounds[:, 1] < self.bounds[:, 0]):
            raise ConfigurationError(f"inverted bounds {self.bounds.tolist()}")

    def draw(self, n: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, self.counter])
        self.counter += 1
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + (hi - lo) * rng.random((n, lo.size))


def sample_residual_set(bounds, n: int, seed: int, counter: int = 0, cover=None) -> np.ndarray:
    """``n`` i.i.d. uniform (mu, t) samples from the residual box.

    A box of zero volume is refused unless every side is degenerate (a
    single point), which returns that point ``n`` times.  ``cover`` is an
    optional box that the residual box is expected to contain.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=np.float64))
    if n < 1:
        raise ConfigurationError("residual set size must be positive")
    widths = bounds[:, 1] - bounds[:, 0]
    if np.any(widths == 0) and not np.all(widths == 0):
        raise ConfigurationError(f"degenerate residual bounds {bounds.tolist()}")
    if cover is not None:
        cover = np.atleast_2d(np.asarray(cover, dtype=np.float64))
        if np.any(cover[:, 0] < bounds[:, 0]) or np.any(cover[:, 1] > bounds[:, 1]):
            log.warning("residual bounds %s do not cover %s", bounds.tolist(), cover.tolist())
    return BoxSampler(bounds, seed, counter).draw(n)


def ablation_sizes(total: int, first: int = 5) -> list[int]:
    sizes = [first]
    while sizes[-1] * 2 <= total:
        sizes.append(sizes[-1] * 2)
    return sizes


def ablation_subsets(P_sup, seed: int, first: int = 5) -> list[np.ndarray]:
    """Nested index sets of sizes 5, 10, 20, 40, ... into the sorted ``P_sup``.

    The first set takes the ``ceil(5/2)`` smallest and ``floor(5/2)`` largest
    values; each later set doubles the previous one with uniformly random
    picks from the complement.  Every set contains both extremes.
    """
    P = np.asarray(P_sup, dtype=np.float64).reshape(len(P_sup), -1)
    if P.shape[0] < first:
        raise ConfigurationError(f"need at least {first} supervised parameters")
    order = np.lexsort(P.T[::-1])
    lo, hi = (first + 1) // 2, first // 2
    current = list(order[:lo]) + list(order[len(order) - hi :])
    rng = np.random.default_rng(seed)
    subsets = [np.sort(np.array(current))]
    for size in ablation_sizes(P.shape[0], first)[1:]:
        rest = np.setdiff1d(np.arange(P.shape[0]), current)
        extra = rng.choice(rest, size=size - len(current), replace=False)
        current = current + list(extra)
        subsets.append(np.sort(np.array(current)))
    return subsets


@dataclass
class Collocation:
    """Spatial part of a residual set for one training stage.

    ``boundary`` is ``None`` when boundary points depend on the parameter
    (circle boundaries are generated per residual sample).
    """

    interior: np.ndarray
    boundary: np.ndarray | None = None
    initial: np.ndarray | None = None
    boundary_per_sample: int = 0
    meta: dict = field(default_factory=dict)


def _uniform_interior(problem: PDEProblem, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo, hi = np.array(problem.box_lo), np.array(problem.box_hi)
    out = np.empty((0, problem.d))
    for _ in range(1000):
        cand = lo + (hi - lo) * rng.random((n, problem.d))
        out = np.concatenate([out, cand[problem.in_domain(cand)]])
        if len(out) >= n:
            return out[:n]
    raise SamplerError(f"could not place {n} interior points in {problem.name}")


def collocation_points(
    problem: PDEProblem,
    stage: str,
    mesh: np.ndarray,
    interior_count: int = 1000,
    boundary_count: int = 100,
    seed: int = 0,
) -> Collocation:
    """Collocation points for ``stage`` in ``{"pretrain", "finetune"}``.

    Pretraining uses the interior mesh vertices.  Fine-tuning draws
    ``interior_count`` uniform interior points.  Box boundaries use the
    boundary mesh vertices in both stages; circle boundaries get
    ``boundary_count`` equispaced points per residual sample.
    """
    if stage not in ("pretrain", "finetune"):
        raise ConfigurationError(f"unknown stage {stage!r}")
    if interior_count < 1 or boundary_count < 1:
        raise ConfigurationError("collocation counts must be positive")
    if stage == "pretrain":
        interior = mesh[problem.in_domain(mesh)]
    else:
        interior = _uniform_interior(problem, interior_count, seed)
    if problem.boundary_kind == "box":
        boundary = mesh[problem.on_box_boundary(mesh)]
        per_sample = 0
    else:
        boundary = None
        per_sample = boundary_count
    initial = None if problem.stationary else mesh[problem.in_domain(mesh)]
    return Collocation(interior, boundary, initial, per_sample, {"stage": stage, "seed": seed})
