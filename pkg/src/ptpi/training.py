"""Losses, Adam and the staged training pipeline.

Every loss term is a mean over its batch, points and channels.  Fields are
compared in normalized units (divided by the per-channel scale) for the
data terms; residuals are evaluated in physical units.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .model import (
    PTPIModel,
    TrunkModes,
    assemble_bundle,
    bind,
    branch_coefficients,
    build_model,
    combine,
    mesh_modes,
    normalize_fields,
    trunk_forward,
    trunk_modes,
    Normalization,
)
from .networks import ConfigurationError, FourierEmbedding
from .physics import PDEProblem
from .pod import SnapshotSet, pod_basis
from .sampling import BoxSampler, Collocation, collocation_points

log = logging.getLogger(__name__)

__all__ = [
    "LossWeights",
    "StageConfig",
    "ArchConfig",
    "TrainConfig",
    "AdamState",
    "DivergedLossError",
    "StageDivergence",
    "FrozenTrunkError",
    "adam_step",
    "trunk_pretrain_loss",
    "total_loss",
    "precompute_frozen_trunk",
    "run_pipeline",
    "History",
    "STRATEGIES",
]

STRATEGIES = ("ptpi", "vanilla", "none", "pod-dl-rom")
TERMS = ("L_N", "L_n", "L_Omega", "L_bOmega", "L_IC")
HISTORY_COLUMNS = ("epoch", "stage", *TERMS, "total", "validation_L_N")


class DivergedLossError(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term} is not finite ({value})")
        self.term = term


class StageDivergence(RuntimeError):
    def __init__(self, stage: str, epoch: int, cause: Exception):
        super().__init__(f"stage {stage} diverged at epoch {epoch}: {cause}")
        self.stage, self.epoch, self.cause = stage, epoch, cause


class FrozenTrunkError(RuntimeError):
    """Frozen-trunk caches requested while the trunk is trainable."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class LossWeights:
    data: float = 0.5  # omega_N
    latent: float = 0.5  # omega_n
    interior: float | np.ndarray = 0.5  # omega_Omega, scalar or per channel
    boundary: float | np.ndarray = 100.0  # omega_dOmega
    initial: float = 0.0  # omega_IC

    def __post_init__(self):
        vals = [self.data, self.latent, self.initial, *np.atleast_1d(self.interior), *np.atleast_1d(self.boundary)]
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ConfigurationError("loss weights must be finite and non-negative")
        if self.data <= 0 and np.all(np.atleast_1d(self.interior) <= 0):
            raise ConfigurationError("one of omega_N and omega_Omega must be positive")


@dataclass
class StageConfig:
    epochs: int
    lr: float
    batch_sup: int = 1
    batch_res: int = 10


@dataclass
class ArchConfig:
    N: int = 2
    n: int = 2
    trunk_hidden: list[int] = field(default_factory=lambda: [50] * 4)
    branch_hidden: list[int] = field(default_factory=lambda: [50] * 4)
    trunk_activation: str = "elu"
    branch_activation: str = "elu"
    fourier_m: int = 0
    fourier_sigma: float = 1.0
    pod_method: str = "exact"


def _default_stages():
    return {
        "trunk": StageConfig(3000, 1e-3, batch_sup=10),
        "branch": StageConfig(1000, 3e-4, 1, 10),
        "finetune": StageConfig(500, 1e-4, 1, 10),
        "vanilla_pretrain": StageConfig(1000, 1e-3, 1, 10),
        "vanilla_finetune": StageConfig(500, 1e-4, 1, 10),
        "scratch": StageConfig(1500, 1e-4, 1, 10),
        "poddlrom": StageConfig(600, 1e-3, 1, 10),
    }


@dataclass
class TrainConfig:
    strategy: str = "ptpi"
    stages: dict[str, StageConfig] = field(default_factory=_default_stages)
    weights: LossWeights = field(default_factory=LossWeights)
    arch: ArchConfig = field(default_factory=ArchConfig)
    res_bounds: np.ndarray | None = None  # (p[+1], 2); defaults to the data hull
    n_res: int = 1000
    resample_every: int = 5
    interior_count: int = 1000
    boundary_count: int = 100
    val_fraction: float = 0.1
    clip_norm: float | None = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not 0.1 <= self.val_fraction <= 0.2:
            raise ConfigurationError("validation fraction must lie in [0.1, 0.2]")
        if self.resample_every < 1 or self.n_res < 1:
            raise ConfigurationError("resample period and N_res must be positive")
        for name, st in self.stages.items():
            if st.epochs < 0 or st.lr <= 0 or st.batch_sup < 1 or st.batch_res < 1:
                raise ConfigurationError(f"invalid settings for stage {name}")

    def stage_names(self) -> list[str]:
        return {
            "ptpi": ["trunk", "branch", "finetune"],
            "vanilla": ["vanilla_pretrain", "vanilla_finetune"],
            "none": ["scratch"],
            "pod-dl-rom": ["poddlrom"],
        }[self.strategy]


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def create(cls, params: Sequence[np.ndarray], lr: float = 1e-3) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr)


def adam_step(state: AdamState, params: list[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Bias-corrected Adam update, in place on ``params`` (also returned)."""
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match parameters")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise ad.DivergedGradientError(f"non-finite gradient for parameter {i}; step aborted")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def _clip(grads: list[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    if max_norm is None:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        return [g * (max_norm / norm) for g in grads]
    return grads


# ---------------------------------------------------------------------------
# data


@dataclass
class SupBatch:
    """Supervised samples: normalized fields ``u`` ``(B, N_h C)`` and POD coefficients ``q``."""

    mu: np.ndarray
    t: np.ndarray | None
    u: np.ndarray
    q: np.ndarray

    def take(self, idx) -> "SupBatch":
        return SupBatch(self.mu[idx], None if self.t is None else self.t[idx], self.u[idx], self.q[idx])

    def __len__(self):
        return self.mu.shape[0]


@dataclass
class ResBatch:
    """Residual samples plus spatial points.

    ``boundary`` is ``(M, d)`` for shared points or ``(B, M, d)`` with a
    matching ``boundary_mask`` when the boundary depends on the parameter.
    """

    mu: np.ndarray
    t: np.ndarray | None
    interior: np.ndarray
    boundary: np.ndarray | None = None
    boundary_mask: np.ndarray | None = None
    initial: np.ndarray | None = None
    index: np.ndarray | None = None  # rows of the residual set, used to look up caches


def supervised_batch(model: PTPIModel, data: SnapshotSet, columns=None) -> SupBatch:
    mu, t = data.pairs()
    U = data.fields.T
    if columns is not None:
        mu, t, U = mu[columns], t[columns], U[columns]
    u = normalize_fields(model, U)
    return SupBatch(mu, None if model.stationary else t, u, u @ model.pod.V)


# ---------------------------------------------------------------------------
# losses


def trunk_targets(model: PTPIModel) -> np.ndarray:
    """POD rows arranged like the trunk output: ``(N_h, N C)``."""
    C, N, n_h = model.channels, model.n_modes, model.n_h
    V = model.pod.V
    return np.concatenate([V[c * n_h : (c + 1) * n_h, c * N : (c + 1) * N] for c in range(C)], axis=1)


def trunk_pretrain_loss(model: PTPIModel, rows, P=None, targets=None):
    """Mean over ``rows`` and modes of ``(v(x_i) - V[i, :])^2``."""
    rows = np.asarray(rows, dtype=int)
    if rows.size == 0:
        raise ValueError("empty trunk batch")
    T = trunk_targets(model) if targets is None else targets
    diff = trunk_forward(model, model.mesh[rows], P) - T[rows]
    return ad.mean(diff * diff)


@dataclass
class FrozenCache:
    """Trunk quantities at fixed points, constant while the trunk is frozen."""

    mesh: np.ndarray  # (N_h, NC) mesh modes
    interior: TrunkModes
    boundary: np.ndarray | None = None  # shared boundary modes (M, NC)
    initial: np.ndarray | None = None
    boundary_per_sample: np.ndarray | None = None  # (N_res, M, NC) for parameter-dependent boundaries
    version: int = -1


def precompute_frozen_trunk(model: PTPIModel, colloc: Collocation, problem: PDEProblem) -> FrozenCache:
    if model.trunk.trainable:
        raise FrozenTrunkError("trunk must be frozen before caching its modes")
    need = {"value"} | set(problem.needs) - {"dt"}
    return FrozenCache(
        mesh=trunk_forward(model, model.mesh),
        interior=trunk_modes(model, colloc.interior, need),
        boundary=None if colloc.boundary is None else trunk_forward(model, colloc.boundary),
        initial=None if colloc.initial is None else trunk_forward(model, colloc.initial),
        version=model.trunk.version,
    )


def cache_boundary(model: PTPIModel, cache: FrozenCache, points: np.ndarray):
    """Modes on parameter-dependent boundary points for the whole residual set."""
    cache.boundary_per_sample = trunk_forward(model, points)


def _sq_mean(r):
    return ad.mean(r * r)


def _check(name, value):
    v = float(ad.value_of(value))
    if not np.isfinite(v):
        raise DivergedLossError(name, v)
    return v


def _per_channel(w, C):
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    return np.broadcast_to(w, (C,))


def _channel_term(residuals, weights, mask=None):
    """Mean residual square per channel, combined with per-channel weights.

    Returns ``(unweighted mean over channels, weighted sum / C)``.
    """
    C = len(residuals)
    parts = []
    for r in residuals:
        if mask is None:
            parts.append(_sq_mean(r))
        else:
            parts.append(ad.sum(r * r * mask) * (1.0 / float(np.sum(mask))))
    plain = parts[0] if C == 1 else sum(parts[1:], parts[0]) * (1.0 / C)
    weighted = parts[0] * float(weights[0])
    for c in range(1, C):
        weighted = weighted + parts[c] * float(weights[c])
    return plain, weighted * (1.0 / C)


def _lifted_data_loss(model, q, u, modes):
    preds = combine(q, modes, model.channels)
    n_h = model.n_h
    total = None
    for c, pred in enumerate(preds):
        diff = pred - u[:, c * n_h : (c + 1) * n_h]
        term = _sq_mean(diff)
        total = term if total is None else total + term
    return total * (1.0 / model.channels)


def total_loss(
    model: PTPIModel,
    sup: SupBatch | None,
    res: ResBatch | None,
    weights: LossWeights,
    problem: PDEProblem,
    stage: str = "finetune",
    P=None,
    cache: FrozenCache | None = None,
):
    """Weighted loss and its unweighted breakdown.

    ``stage`` selects the formulation: ``"branch"`` (frozen-trunk caches),
    ``"finetune"`` (live trunk), ``"deeponet"`` (data term only, live trunk)
    and ``"poddlrom"`` (coefficient-space data term plus latent term).
    """
    if stage == "branch" and cache is None:
        raise FrozenTrunkError("branch stage needs frozen-trunk caches")
    if stage not in ("branch", "finetune", "deeponet", "poddlrom"):
        raise ConfigurationError(f"unknown loss stage {stage!r}")
    C = model.channels
    terms: dict = {}
    weighted: dict = {}
    use_cache = stage == "branch"

    if sup is not None and len(sup):
        q, _, phi = branch_coefficients(model, sup.mu, sup.t, P=P)
        if stage == "poddlrom":
            diff = q - sup.q
            # coefficient error scaled to match the field-space mean
            terms["L_N"] = _sq_mean(diff) * (model.n_modes / model.n_h)
        else:
            modes = cache.mesh if use_cache else trunk_forward(model, model.mesh, P)
            terms["L_N"] = _lifted_data_loss(model, q, sup.u, modes)
        weighted["L_N"] = terms["L_N"] * (1.0 if stage == "deeponet" else weights.data)
        if stage != "deeponet" and weights.latent > 0:
            from .networks import net_forward

            enc_p = model.encoder.params() if P is None else P["encoder"]
            enc = net_forward(model.encoder, sup.q / model.mode_scale, enc_p)
            terms["L_n"] = _sq_mean(enc - phi)
            weighted["L_n"] = terms["L_n"] * weights.latent

    physics = stage in ("branch", "finetune") and res is not None
    if physics:
        needs = set(problem.needs)
        with_dt = "dt" in needs
        q, dq, _ = branch_coefficients(model, res.mu, res.t, with_dt=with_dt, P=P)
        w_int = _per_channel(weights.interior, C)
        if np.any(w_int > 0):
            if use_cache:
                modes = cache.interior
            else:
                modes = trunk_modes(model, res.interior, {"value"} | needs - {"dt"}, P)
            bundle = assemble_bundle(model, q, dq, modes, needs)
            R = problem.interior_residual(bundle, res.interior, res.mu, res.t)
            terms["L_Omega"], weighted["L_Omega"] = _channel_term(R, w_int)
        w_b = _per_channel(weights.boundary, C)
        if res.boundary is not None and np.any(w_b > 0):
            paired = res.boundary.ndim == 3
            if use_cache:
                bmodes = cache.boundary_per_sample[res.index] if paired else cache.boundary
            else:
                bmodes = trunk_forward(model, res.boundary, P)
            bundle = assemble_bundle(model, q, None, TrunkModes(bmodes), {"value"}, paired=paired)
            R = problem.boundary_residual(bundle, res.boundary, res.mu, res.t, check=False)
            terms["L_bOmega"], weighted["L_bOmega"] = _channel_term(R, w_b, res.boundary_mask)
        if weights.initial > 0 and not model.stationary and res.initial is not None:
            t0 = np.full(res.mu.shape[0], problem.time_range[0])
            q0, _, _ = branch_coefficients(model, res.mu, t0, P=P)
            imodes = cache.initial if use_cache else trunk_forward(model, res.initial, P)
            bundle = assemble_bundle(model, q0, None, TrunkModes(imodes), {"value"})
            R = problem.initial_residual(bundle, res.initial, res.mu)
            terms["L_IC"], _ = _channel_term(R, np.ones(C))
            weighted["L_IC"] = terms["L_IC"] * weights.initial

    if not weighted:
        raise ValueError("no loss terms for this batch")
    for name, value in terms.items():
        _check(name, value)
    names = list(weighted)
    total = weighted[names[0]]
    for name in names[1:]:
        total = total + weighted[name]
    breakdown = {name: float(ad.value_of(v)) for name, v in terms.items()}
    breakdown["weighted"] = {name: float(ad.value_of(v)) for name, v in weighted.items()}
    return total, breakdown


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def add(self, row: dict, seconds: float):
        self.rows.append(row)
        self.seconds.append(seconds)

    def stage(self, name: str) -> list[dict]:
        return [r for r in self.rows if r["stage"] == name]

    def stage_seconds(self, name: str) -> list[float]:
        return [s for r, s in zip(self.rows, self.seconds) if r["stage"] == name]

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"], r["stage"]] + [f"{r[c]:.8e}" for c in HISTORY_COLUMNS[2:]])


@dataclass
class PipelineResult:
    model: PTPIModel
    history: History
    snapshots: dict[str, dict] = field(default_factory=dict)  # parameter copies after each stage
    train_columns: np.ndarray | None = None
    val_columns: np.ndarray | None = None


def split_validation(data: SnapshotSet, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random validation parameters, never the extreme ones (extremes stay in training)."""
    n = data.n_s
    k = max(1, int(round(fraction * n))) if n > 2 else 0
    order = np.lexsort(data.params.T[::-1])
    inner = order[1:-1]
    rng = np.random.default_rng([seed, 7])
    val_params = np.sort(rng.choice(inner, size=min(k, inner.size), replace=False)) if k else np.array([], int)
    train_params = np.setdiff1d(np.arange(n), val_params)
    cols = lambda idx: (idx[:, None] * data.n_t + np.arange(data.n_t)).ravel()
    return cols(train_params), cols(val_params)


def make_normalization(problem: PDEProblem, data: SnapshotSet, res_bounds: np.ndarray) -> Normalization:
    mu, t = data.pairs()
    z = mu if problem.stationary else np.column_stack([mu, t])
    lo = np.minimum(z.min(axis=0), res_bounds[:, 0])
    hi = np.maximum(z.max(axis=0), res_bounds[:, 1])
    C, n_h = data.channels, data.n_h
    scale = np.array([np.max(np.abs(data.fields[c * n_h : (c + 1) * n_h])) for c in range(C)])
    scale[scale == 0] = 1.0
    return Normalization(np.array(problem.box_lo), np.array(problem.box_hi), lo, hi, scale)


def default_res_bounds(problem: PDEProblem, data: SnapshotSet) -> np.ndarray:
    b = np.column_stack([data.params.min(axis=0), data.params.max(axis=0)])
    if not problem.stationary:
        b = np.vstack([b, [data.times.min(), data.times.max()]])
    return b


class Trainer:
    """Runs the stages of one strategy on one model."""

    def __init__(self, config: TrainConfig, data: SnapshotSet, problem: PDEProblem):
        if data.n_s * data.n_t == 0:
            raise ValueError("empty supervised set")
        if data.d != problem.d or data.p != problem.p:
            raise ConfigurationError("dataset does not match the problem dimensions")
        self.cfg = config
        self.data = data
        self.problem = problem
        self.history = History()
        self.seeds = np.random.SeedSequence(config.seed).generate_state(8)
        a = config.arch
        self.res_bounds = (
            default_res_bounds(problem, data) if config.res_bounds is None else np.atleast_2d(config.res_bounds)
        )
        if self.res_bounds.shape[0] != problem.p + (0 if problem.stationary else 1):
            raise ConfigurationError("residual bounds must cover mu (and t for time-dependent problems)")
        self.train_cols, self.val_cols = split_validation(data, config.val_fraction, int(self.seeds[0]))
        # the POD basis uses the training columns only
        pod = pod_basis(data.fields[:, self.train_cols], a.N, method=a.pod_method, seed=int(self.seeds[1]), channels=data.channels)
        norm = make_normalization(problem, data, self.res_bounds)
        fourier = FourierEmbedding.sample(a.fourier_m, problem.d, a.fourier_sigma, int(self.seeds[2])) if a.fourier_m else None
        self.model = build_model(
            pod, data.coords, norm, problem.p, problem.stationary, a.n,
            a.trunk_hidden, a.branch_hidden, a.trunk_activation, a.branch_activation,
            int(self.seeds[3]), fourier, data.channels,
        )
        if config.strategy == "pod-dl-rom":
            self.model.lifting = "pod"
        self.train = supervised_batch(self.model, data, self.train_cols)
        self.val = supervised_batch(self.model, data, self.val_cols) if self.val_cols.size else None
        self.res_sampler = BoxSampler(self.res_bounds, int(self.seeds[4]))
        self.colloc = {
            "pretrain": collocation_points(problem, "pretrain", data.coords, config.interior_count, config.boundary_count, int(self.seeds[5])),
            "finetune": collocation_points(problem, "finetune", data.coords, config.interior_count, config.boundary_count, int(self.seeds[5])),
        }
        self.snapshots: dict[str, dict] = {}

    # -- helpers ----------------------------------------------------------
    def validation_loss(self) -> float:
        batch = self.val if self.val is not None else self.train
        q, _, _ = branch_coefficients(self.model, batch.mu, batch.t)
        pred = q @ mesh_modes(self.model).T
        return float(np.mean((pred - batch.u) ** 2))

    def _draw_residual_set(self):
        z = self.res_sampler.draw(self.cfg.n_res)
        p = self.problem.p
        return z[:, :p], (None if self.problem.stationary else z[:, p])

    def _residual_batch(self, res_mu, res_t, idx, colloc: Collocation, circle) -> ResBatch:
        mu = res_mu[idx]
        t = None if res_t is None else res_t[idx]
        if circle is not None:
            pts, mask = circle
            boundary, bmask = pts[idx], mask[idx]
        else:
            boundary, bmask = colloc.boundary, None
        return ResBatch(mu, t, colloc.interior, boundary, bmask, colloc.initial, idx)

    def _circle(self, res_mu, colloc):
        if colloc.boundary_per_sample and hasattr(self.problem, "circle_points"):
            return self.problem.circle_points(res_mu, colloc.boundary_per_sample)
        return None

    # -- stages -----------------------------------------------------------
    def run_trunk(self, st: StageConfig):
        m = self.model
        m.trunk.unfreeze()
        targets = trunk_targets(m)
        rng = np.random.default_rng(int(self.seeds[6]))
        opt = AdamState.create(m.trunk.params(), st.lr)
        for epoch in range(st.epochs):
            t0 = time.perf_counter()
            perm = rng.permutation(m.n_h)
            losses = []
            try:
                for s in range(0, m.n_h, st.batch_sup):
                    tape = ad.Tape()
                    P = {"trunk": tape.leaves(m.trunk.params(), prefix="trunk.")}
                    loss = trunk_pretrain_loss(m, perm[s : s + st.batch_sup], P, targets)
                    v = _check("L_trunk", loss)
                    g = _clip(ad.grad(loss, P["trunk"]), self.cfg.clip_norm)
                    params = m.trunk.params()
                    adam_step(opt, params, g)
                    m.trunk.set_params(params)
                    losses.append(v)
            except (FloatingPointError, ad.DivergedGradientError) as exc:
                raise StageDivergence("trunk", epoch, exc) from exc
            row = {"epoch": epoch, "stage": "trunk", "L_N": np.nan, "L_n": np.nan, "L_Omega": np.nan,
                   "L_bOmega": np.nan, "L_IC": np.nan, "total": float(np.mean(losses)), "validation_L_N": np.nan}
            self.history.add(row, time.perf_counter() - t0)

    def run_stage(self, name: str, st: StageConfig, loss_stage: str, nets: tuple[str, ...], colloc_kind: str):
        m, cfg = self.model, self.cfg
        for net_name in ("trunk", "encoder", "reduced", "decoder"):
            net = getattr(m, net_name)
            net.unfreeze() if net_name in nets else net.freeze()
        active = [n for n in nets]
        opt = AdamState.create([a for n in active for a in getattr(m, n).params()], st.lr)
        colloc = self.colloc[colloc_kind]
        physics = loss_stage in ("branch", "finetune")
        cache = None
        if loss_stage == "branch":
            cache = precompute_frozen_trunk(m, colloc, self.problem)
        rng = np.random.default_rng([int(self.seeds[7]), len(self.history.rows)])
        n_train = len(self.train)
        best = (self.validation_loss(), m.copy_params())
        res_mu = res_t = circle = None
        res_ptr = 0
        weights = cfg.weights
        for epoch in range(st.epochs):
            t0 = time.perf_counter()
            if physics and epoch % cfg.resample_every == 0:
                res_mu, res_t = self._draw_residual_set()
                circle = self._circle(res_mu, colloc)
                if cache is not None and circle is not None:
                    cache_boundary(m, cache, circle[0])
                res_ptr = 0
            perm = rng.permutation(n_train)
            sums: dict[str, float] = {}
            wsums: dict[str, float] = {}
            steps = 0
            try:
                for s in range(0, n_train, st.batch_sup):
                    sup = self.train.take(perm[s : s + st.batch_sup])
                    res = None
                    if physics:
                        idx = (res_ptr + np.arange(st.batch_res)) % cfg.n_res
                        res_ptr = (res_ptr + st.batch_res) % cfg.n_res
                        res = self._residual_batch(res_mu, res_t, idx, colloc, circle)
                    tape = ad.Tape()
                    P = bind(m, tape, active)
                    loss, parts = total_loss(m, sup, res, weights, self.problem, loss_stage, P, cache)
                    leaves = [a for n in active for a in P[n]]
                    g = _clip(ad.grad(loss, leaves), cfg.clip_norm)
                    params = [a for n in active for a in getattr(m, n).params()]
                    adam_step(opt, params, g)
                    k = 0
                    for n in active:
                        net = getattr(m, n)
                        cnt = len(net.params())
                        net.set_params(params[k : k + cnt])
                        k += cnt
                    for key in TERMS:
                        if key in parts:
                            sums[key] = sums.get(key, 0.0) + parts[key]
                    for key, v in parts["weighted"].items():
                        wsums[key] = wsums.get(key, 0.0) + v
                    steps += 1
            except (FloatingPointError, ad.DivergedGradientError) as exc:
                raise StageDivergence(name, epoch, exc) from exc
            val = self.validation_loss()
            if not np.isfinite(val):
                raise StageDivergence(name, epoch, DivergedLossError("validation_L_N", val))
            if val < best[0]:
                best = (val, m.copy_params())
            row = {"epoch": epoch, "stage": name}
            for key in TERMS:
                row[key] = sums[key] / steps if key in sums else np.nan
            row["total"] = sum(v / steps for v in wsums.values())
            row["weighted"] = {k: v / steps for k, v in wsums.items()}
            row["validation_L_N"] = val
            self.history.add(row, time.perf_counter() - t0)
            log.debug("%s epoch %d total %.3e val %.3e", name, epoch, row["total"], val)
        if st.epochs:
            m.load_params(best[1])

    def run(self) -> PipelineResult:
        cfg = self.cfg
        m = self.model
        S = cfg.stages
        strategy = cfg.strategy
        if strategy == "ptpi":
            self.run_trunk(S["trunk"])
            self.snapshots["trunk"] = m.copy_params()
            m.trunk.freeze()
            self.run_stage("branch", S["branch"], "branch", ("encoder", "reduced", "decoder"), "pretrain")
            self.snapshots["branch"] = m.copy_params()
            m.trunk.unfreeze()
            self.run_stage("finetune", S["finetune"], "finetune", ("trunk", "encoder", "reduced", "decoder"), "finetune")
            self.snapshots["finetune"] = m.copy_params()
        elif strategy == "vanilla":
            self.run_stage("vanilla_pretrain", S["vanilla_pretrain"], "deeponet", ("trunk", "reduced", "decoder"), "finetune")
            self.snapshots["vanilla_pretrain"] = m.copy_params()
            self.run_stage("vanilla_finetune", S["vanilla_finetune"], "finetune", ("trunk", "encoder", "reduced", "decoder"), "finetune")
            self.snapshots["vanilla_finetune"] = m.copy_params()
        elif strategy == "none":
            self.run_stage("scratch", S["scratch"], "finetune", ("trunk", "encoder", "reduced", "decoder"), "finetune")
            self.snapshots["scratch"] = m.copy_params()
        else:
            m.trunk.freeze()
            self.run_stage("poddlrom", S["poddlrom"], "poddlrom", ("encoder", "reduced", "decoder"), "finetune")
            self.snapshots["poddlrom"] = m.copy_params()
        for net in m.nets().values():
            net.unfreeze()
        return PipelineResult(m, self.history, self.snapshots, self.train_cols, self.val_cols)


def run_pipeline(config: TrainConfig, data: SnapshotSet, problem: PDEProblem) -> PipelineResult:
    """Build the model from ``data`` and train it with ``config.strategy``."""
    return Trainer(config, data, problem).run()
