"""Sectioned ``key = value`` run configuration.

Grids are written per parameter axis, axes separated by ``;``: an axis is
either ``lo:hi:count`` (equispaced, endpoints included) or a comma list.
Bounds are ``lo:hi`` per axis.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

import numpy as np

from .networks import ConfigurationError
from .training import STRATEGIES, ArchConfig, LossWeights, StageConfig, TrainConfig, _default_stages

__all__ = ["RunConfig", "parse_config", "load_config", "default_config", "parse_grid", "parse_bounds"]

# key -> (type, unit/description) per section; order is the serialization order
SCHEMA = {
    "run": {
        "problem": (str, "eikonal | adr2d"),
        "strategy": (str, "ptpi | vanilla | none | pod-dl-rom"),
        "seed": (int, "master seed"),
        "out": (str, "output directory"),
    },
    "mesh": {"n": (int, "vertices per axis of the tensor grid")},
    "data": {
        "sup_params": (str, "supervised parameter grid"),
        "sup_times": (str, "supervised times (0 for stationary problems)"),
        "test_params": (str, "test parameter grid"),
        "test_times": (str, "test times"),
        "res_params": (str, "residual parameter box, lo:hi per axis"),
        "res_times": (str, "residual time interval lo:hi (empty for stationary problems)"),
    },
    "arch": {
        "N": (int, "POD modes per channel"),
        "n": (int, "latent dimension"),
        "trunk_hidden": (list, "hidden widths of the trunk net"),
        "branch_hidden": (list, "hidden widths of encoder, reduced net and decoder"),
        "trunk_activation": (str, "elu | silu | sine"),
        "branch_activation": (str, "elu | silu | sine"),
        "fourier_m": (int, "Fourier features (0 disables)"),
        "fourier_sigma": (float, "std of the Fourier frequency matrix"),
        "pod_method": (str, "exact | randomized"),
    },
    "train": {
        "n_res": (int, "residual samples per draw"),
        "resample_every": (int, "epochs between residual draws"),
        "interior_count": (int, "fine-tune interior collocation points"),
        "boundary_count": (int, "points per parameter-dependent boundary"),
        "val_fraction": (float, "share of supervised parameters held out"),
        "clip_norm": (float, "global gradient norm cap, none disables"),
        "w_N": (float, "weight of the data term"),
        "w_n": (float, "weight of the latent term"),
        "w_Omega": (float, "weight of the interior residual"),
        "w_bOmega": (float, "weight of the boundary residual"),
        "w_IC": (float, "weight of the initial-condition residual"),
    },
}
STAGE_KEYS = {
    "epochs": (int, "passes over the supervised set"),
    "lr": (float, "Adam learning rate"),
    "batch_sup": (int, "supervised (or trunk-row) batch size"),
    "batch_res": (int, "residual batch size"),
}


def parse_axis(text: str) -> np.ndarray:
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"grid axis {text!r} must be lo:hi:count")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise ConfigurationError(f"grid axis {text!r} has no points")
        return np.linspace(lo, hi, n) if n > 1 else np.array([lo])
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise ConfigurationError("empty grid axis")
    return np.array(vals)


def parse_grid(text: str) -> np.ndarray:
    """Tensor grid ``(n, p)``; the last axis varies fastest."""
    axes = [parse_axis(a) for a in text.split(";")]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def parse_bounds(text: str) -> np.ndarray:
    rows = []
    for a in text.split(";"):
        if not a.strip():
            continue
        parts = a.split(":")
        if len(parts) != 2:
            raise ConfigurationError(f"bounds {a!r} must be lo:hi")
        lo, hi = float(parts[0]), float(parts[1])
        if hi < lo:
            raise ConfigurationError(f"inverted bounds {a!r}")
        rows.append([lo, hi])
    return np.array(rows).reshape(-1, 2)


@dataclass
class RunConfig:
    problem: str = "eikonal"
    strategy: str = "ptpi"
    seed: int = 0
    out: str = "runs/eikonal"
    mesh_n: int = 30
    sup_params: str = "0.1:0.5:41"
    sup_times: str = "0"
    test_params: str = "0.13:0.98:18"
    test_times: str = "0"
    res_params: str = "0.1:1.1"
    res_times: str = ""
    arch: ArchConfig = field(default_factory=ArchConfig)
    n_res: int = 1000
    resample_every: int = 5
    interior_count: int = 1000
    boundary_count: int = 100
    val_fraction: float = 0.1
    clip_norm: float | None = 10.0
    weights: LossWeights = field(default_factory=LossWeights)
    stages: dict = field(default_factory=_default_stages)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")

    def res_bounds(self) -> np.ndarray:
        b = parse_bounds(self.res_params)
        if self.res_times.strip():
            b = np.vstack([b, parse_bounds(self.res_times)])
        return b

    def train_config(self, strategy: str | None = None, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            strategy=strategy or self.strategy,
            stages={k: StageConfig(**vars(v)) for k, v in self.stages.items()},
            weights=LossWeights(**vars(self.weights)),
            arch=ArchConfig(**{k: (list(v) if isinstance(v, list) else v) for k, v in vars(self.arch).items()}),
            res_bounds=self.res_bounds(),
            n_res=self.n_res,
            resample_every=self.resample_every,
            interior_count=self.interior_count,
            boundary_count=self.boundary_count,
            val_fraction=self.val_fraction,
            clip_norm=self.clip_norm,
            seed=self.seed if seed is None else seed,
        )

    # -- text -------------------------------------------------------------
    def _values(self) -> dict:
        a, w = self.arch, self.weights
        return {
            "run": {"problem": self.problem, "strategy": self.strategy, "seed": self.seed, "out": self.out},
            "mesh": {"n": self.mesh_n},
            "data": {k: getattr(self, k) for k in SCHEMA["data"]},
            "arch": {k: getattr(a, k) for k in SCHEMA["arch"]},
            "train": {
                "n_res": self.n_res,
                "resample_every": self.resample_every,
                "interior_count": self.interior_count,
                "boundary_count": self.boundary_count,
                "val_fraction": self.val_fraction,
                "clip_norm": self.clip_norm,
                "w_N": w.data,
                "w_n": w.latent,
                "w_Omega": w.interior,
                "w_bOmega": w.boundary,
                "w_IC": w.initial,
            },
        }

    def to_text(self) -> str:
        def fmt(v):
            if v is None:
                return "none"
            if isinstance(v, list):
                return ", ".join(str(x) for x in v)
            if isinstance(v, float):
                return repr(v)
            return str(v)

        out = io.StringIO()
        for section, values in self._values().items():
            out.write(f"[{section}]\n")
            for key, value in values.items():
                out.write(f"# {SCHEMA[section][key][1]}\n{key} = {fmt(value)}\n")
            out.write("\n")
        for name, st in self.stages.items():
            out.write(f"[stage.{name}]\n")
            for key in STAGE_KEYS:
                out.write(f"{key} = {fmt(getattr(st, key))}\n")
            out.write("\n")
        return out.getvalue()


def _convert(kind, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return None if raw.lower() == "none" else float(raw)
        if kind is list:
            return [int(v) for v in raw.split(",") if v.strip()]
        return raw
    except ValueError:
        raise ConfigurationError(f"{where}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys are case sensitive (N vs n)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config syntax: {exc}") from exc
    cfg = RunConfig()
    values: dict = {}
    stages = dict(cfg.stages)
    for section in cp.sections():
        if section.startswith("stage."):
            name = section[len("stage.") :]
            base = vars(stages.get(name, StageConfig(0, 1e-3)))
            upd = dict(base)
            for key, raw in cp.items(section):
                if key not in STAGE_KEYS:
                    raise ConfigurationError(f"unknown key {key!r} in [{section}]")
                upd[key] = _convert(STAGE_KEYS[key][0], raw, f"[{section}] {key}")
            stages[name] = StageConfig(**upd)
            continue
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            values[(section, key)] = _convert(SCHEMA[section][key][0], raw, f"[{section}] {key}")

    def get(section, key, default):
        return values.get((section, key), default)

    arch = ArchConfig(**{k: get("arch", k, getattr(cfg.arch, k)) for k in SCHEMA["arch"]})
    w = cfg.weights
    weights = LossWeights(
        get("train", "w_N", w.data),
        get("train", "w_n", w.latent),
        get("train", "w_Omega", w.interior),
        get("train", "w_bOmega", w.boundary),
        get("train", "w_IC", w.initial),
    )
    return RunConfig(
        problem=get("run", "problem", cfg.problem),
        strategy=get("run", "strategy", cfg.strategy),
        seed=get("run", "seed", cfg.seed),
        out=get("run", "out", cfg.out),
        mesh_n=get("mesh", "n", cfg.mesh_n),
        **{k: get("data", k, getattr(cfg, k)) for k in SCHEMA["data"]},
        arch=arch,
        **{k: get("train", k, getattr(cfg, k)) for k in ("n_res", "resample_every", "interior_count", "boundary_count", "val_fraction", "clip_norm")},
        weights=weights,
        stages=stages,
    )


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def default_config(problem: str = "eikonal") -> RunConfig:
    """Reference settings for the shipped problems."""
    if problem == "eikonal":
        return RunConfig()
    if problem == "adr2d":
        stages = _default_stages()
        stages.update(
            trunk=StageConfig(300, 1e-3, batch_sup=100),
            branch=StageConfig(100, 1e-3, 10, 10),
            finetune=StageConfig(100, 1e-4, 10, 10),
            vanilla_pretrain=StageConfig(300, 1e-3, 10, 10),
            vanilla_finetune=StageConfig(100, 1e-4, 10, 10),
            scratch=StageConfig(400, 1e-4, 10, 10),
            poddlrom=StageConfig(300, 1e-3, 10, 10),
        )
        return RunConfig(
            problem="adr2d",
            out="runs/adr2d",
            mesh_n=20,
            sup_params="1.0:1.6:4; 1.0:1.6:4",
            sup_times="0.1:2.2:8",
            test_params="1.1:1.9:3; 1.1:1.9:3",
            test_times="0.4:2.2:4",
            res_params="1.0:2.0; 1.0:2.0",
            res_times="0.1:2.2",
            arch=ArchConfig(N=10, n=3, trunk_hidden=[40] * 3, branch_hidden=[40] * 3),
            n_res=100,
            interior_count=300,
            weights=LossWeights(0.5, 0.5, 0.5, 50.0, 0.0),
            stages=stages,
        )
    raise ConfigurationError(f"no defaults for problem {problem!r}")
