"""Trunk/branch low-rank model ``u(x, mu, t) = sum_k v_k(x) q_k(mu, t)``.

Internal scaling: the trunk net output is ``sqrt(N_h)`` times the mode
values and the decoder output is ``1 / sqrt(N_h)`` times the coefficients,
so both networks work with O(1) numbers while ``v`` approximates rows of the
orthonormal POD matrix.  Fields are divided by a per-channel max-abs scale
before compression and multiplied back on output.

Network parameters enter every function through a *binding*: a mapping from
sub-network name to its flat parameter list, holding tape leaves for nets
being differentiated and plain arrays otherwise.  ``None`` means "the
model's own arrays".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import autodiff as ad
from .networks import DenseNet, FourierEmbedding, ShapeError, ConfigurationError, init_dense, net_forward, net_jet
from .pod import PODBasis

__all__ = [
    "Normalization",
    "PTPIModel",
    "TrunkModes",
    "UnsupportedTimeDerivative",
    "build_model",
    "bind",
    "trunk_forward",
    "trunk_modes",
    "branch_coefficients",
    "combine",
    "field_eval",
    "latent_encode",
    "evaluate_on_mesh",
]

NETS = ("trunk", "encoder", "reduced", "decoder")


class UnsupportedTimeDerivative(ValueError):
    pass


@dataclass
class Normalization:
    """Affine maps of inputs to ``[-1, 1]`` and the output scale."""

    x_lo: np.ndarray
    x_hi: np.ndarray
    in_lo: np.ndarray  # branch inputs (mu[, t])
    in_hi: np.ndarray
    field_scale: np.ndarray  # (C,)

    def __post_init__(self):
        for name in ("x_lo", "x_hi", "in_lo", "in_hi", "field_scale"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        span = np.concatenate([self.x_hi - self.x_lo, self.in_hi - self.in_lo])
        if np.any(span <= 0):
            raise ConfigurationError("normalization bounds must have positive width")

    @property
    def x_jac(self) -> np.ndarray:
        return 2.0 / (self.x_hi - self.x_lo)

    @property
    def in_jac(self) -> np.ndarray:
        return 2.0 / (self.in_hi - self.in_lo)

    def x(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_lo) * self.x_jac - 1.0

    def branch_input(self, mu, t=None):
        mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
        z = mu if t is None else np.column_stack([mu, np.asarray(t, dtype=np.float64).reshape(-1)])
        return (z - self.in_lo) * self.in_jac - 1.0


@dataclass
class PTPIModel:
    trunk: DenseNet
    encoder: DenseNet
    reduced: DenseNet
    decoder: DenseNet
    pod: PODBasis
    mesh: np.ndarray
    norm: Normalization
    p: int
    stationary: bool
    channels: int = 1
    fourier: FourierEmbedding | None = None
    # "trunk": predictions lift with the trunk net; "pod": with the POD matrix
    lifting: str = "trunk"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        N, n = self.n_modes, self.latent_dim
        lo = self.p + (0 if self.stationary else 1)  # inputs are mu, plus t when time-dependent
        if not (lo <= n <= N):
            raise ConfigurationError(f"latent dim n={n} must satisfy {lo} <= n <= N={N}")
        if self.trunk.output_dim != N * self.channels or self.decoder.output_dim != N * self.channels:
            raise ConfigurationError("trunk and decoder widths must equal N * C")
        if self.encoder.input_dim != N * self.channels or self.encoder.output_dim != n:
            raise ConfigurationError("encoder must map N * C -> n")
        if self.reduced.input_dim != self.branch_inputs or self.reduced.output_dim != n:
            raise ConfigurationError("reduced net must map (mu[, t]) -> n")
        if self.pod.V.shape != (self.n_h * self.channels, N * self.channels):
            raise ConfigurationError("POD basis shape does not match mesh and N")

    @property
    def n_h(self) -> int:
        return self.mesh.shape[0]

    @property
    def d(self) -> int:
        return self.mesh.shape[1]

    @property
    def n_modes(self) -> int:
        return self.pod.n

    @property
    def latent_dim(self) -> int:
        return self.reduced.output_dim

    @property
    def branch_inputs(self) -> int:
        return self.p + (0 if self.stationary else 1)

    @property
    def mode_scale(self) -> float:
        return float(np.sqrt(self.n_h))

    def nets(self) -> dict[str, DenseNet]:
        return {name: getattr(self, name) for name in NETS}

    def copy_params(self) -> dict[str, list[np.ndarray]]:
        return {name: [a.copy() for a in net.params()] for name, net in self.nets().items()}

    def load_params(self, params: dict[str, list[np.ndarray]]):
        for name, arrays in params.items():
            getattr(self, name).set_params(arrays)


def build_model(
    pod: PODBasis,
    mesh: np.ndarray,
    norm: Normalization,
    p: int,
    stationary: bool,
    latent_dim: int,
    trunk_hidden: list[int],
    branch_hidden: list[int],
    trunk_activation: str = "elu",
    branch_activation: str = "elu",
    seed: int = 0,
    fourier: FourierEmbedding | None = None,
    channels: int = 1,
) -> PTPIModel:
    NC = pod.V.shape[1]
    n_in = p + (0 if stationary else 1)
    trunk_in = mesh.shape[1] if fourier is None else fourier.output_dim
    ss = np.random.SeedSequence(seed).generate_state(4)
    trunk = init_dense([trunk_in, *trunk_hidden, NC], trunk_activation, int(ss[0]))
    encoder = init_dense([NC, *branch_hidden, latent_dim], branch_activation, int(ss[1]))
    reduced = init_dense([n_in, *branch_hidden, latent_dim], branch_activation, int(ss[2]))
    decoder = init_dense([latent_dim, *branch_hidden, NC], branch_activation, int(ss[3]))
    return PTPIModel(trunk, encoder, reduced, decoder, pod, np.asarray(mesh, float), norm, p, stationary, channels, fourier)


def bind(model: PTPIModel, tape: ad.Tape | None = None, nets=NETS) -> dict[str, list]:
    """Parameter binding: tape leaves for trainable nets in ``nets``, arrays otherwise."""
    out = {}
    for name, net in model.nets().items():
        if tape is not None and net.trainable and name in nets:
            out[name] = tape.leaves(net.params(), prefix=f"{name}.")
        else:
            out[name] = net.params()
    return out


def _p(P, name, model):
    return getattr(model, name).params() if P is None else P[name]


# ---------------------------------------------------------------------------
# trunk


def trunk_forward(model: PTPIModel, x, P=None):
    """Mode values ``v(x)`` with shape ``(..., N * C)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.d:
        raise ShapeError(f"expected {model.d} coordinates, got shape {x.shape}")
    h = model.norm.x(x)
    if model.fourier is not None:
        h = model.fourier(h)
    return net_forward(model.trunk, h, _p(P, "trunk", model)) * (1.0 / model.mode_scale)


@dataclass
class TrunkModes:
    """Mode values ``(M, NC)``, gradients ``grad[i]`` ``(M, NC)`` and Laplacian ``(M, NC)``."""

    value: Any
    grad: list[Any] | None = None
    lap: Any = None


def trunk_modes(model: PTPIModel, x, need=("value", "grad", "lap"), P=None) -> TrunkModes:
    """Trunk modes and their derivatives with respect to physical coordinates.

    Derivatives come from one jet sweep carrying all ``d`` coordinate
    directions; first-order jets suffice when the Laplacian is not needed.
    """
    need = set(need)
    if not need & {"grad", "lap"}:
        return TrunkModes(trunk_forward(model, x, P))
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.d:
        raise ShapeError(f"expected {model.d} coordinates, got shape {x.shape}")
    order = 2 if "lap" in need else 1
    jet = ad.seed_jet(model.norm.x(x), np.eye(model.d), order)
    if model.fourier is not None:
        jet = model.fourier.jet(jet)
    out = net_jet(model.trunk, jet, _p(P, "trunk", model))
    c = 1.0 / model.mode_scale
    jac = model.norm.x_jac
    d1 = out.d1
    grad = [d1[i] * (jac[i] * c) for i in range(model.d)]
    lap = None
    if order == 2:
        w = (jac * jac * c).reshape((-1,) + (1,) * (np.ndim(ad.value_of(out.d2)) - 1))
        lap = (out.d2 * w).sum(axis=0)
    return TrunkModes(out.value * c, grad, lap)


# ---------------------------------------------------------------------------
# branch


def branch_coefficients(model: PTPIModel, mu, t=None, with_dt: bool = False, P=None):
    """Coefficients ``q(mu, t)`` ``(B, NC)``, optionally ``dq/dt``, and the latent ``phi``.

    Returns ``(q, dq_dt or None, phi)``.
    """
    if model.stationary:
        if with_dt:
            raise UnsupportedTimeDerivative("stationary problem has no time derivative")
        t = None
    elif t is None:
        raise ShapeError("time-dependent model needs t")
    z = model.norm.branch_input(mu, t)
    if z.shape[-1] != model.branch_inputs:
        raise ShapeError(f"expected {model.p} parameters, got {np.shape(mu)}")
    s = model.mode_scale
    if not with_dt:
        phi = net_forward(model.reduced, z, _p(P, "reduced", model))
        q = net_forward(model.decoder, phi, _p(P, "decoder", model)) * s
        return q, None, phi
    direction = np.zeros(model.branch_inputs)
    direction[-1] = 1.0
    jet = ad.seed_jet(z, direction, order=1)
    jphi = net_jet(model.reduced, jet, _p(P, "reduced", model))
    jq = net_jet(model.decoder, jphi, _p(P, "decoder", model))
    q = jq.value * s
    dq = jq.d1[0] * (s * model.norm.in_jac[-1])
    return q, dq, jphi.value


def latent_encode(model: PTPIModel, u_h, P=None):
    """Encoder applied to the POD coefficients of (physical) fields ``u_h`` ``(B, N_h C)``."""
    u = np.atleast_2d(np.asarray(u_h, dtype=np.float64))
    if u.shape[-1] != model.n_h * model.channels:
        raise ShapeError(f"field length {u.shape[-1]} != {model.n_h * model.channels}")
    q = normalize_fields(model, u) @ model.pod.V / model.mode_scale
    return net_forward(model.encoder, q, _p(P, "encoder", model))


def normalize_fields(model: PTPIModel, u: np.ndarray) -> np.ndarray:
    scale = np.repeat(model.norm.field_scale, model.n_h)
    return u / scale


# ---------------------------------------------------------------------------
# assembly


def combine(q, modes, channels: int, paired: bool = False) -> list:
    """``sum_k v_k q_k`` per channel.

    Shared points: ``q`` ``(B, NC)``, ``modes`` ``(M, NC)`` -> ``(B, M)``.
    Paired points: ``modes`` ``(B, M, NC)`` -> ``(B, M)``.
    """
    NC = np.shape(ad.value_of(q))[-1]
    N = NC // channels
    out = []
    for c in range(channels):
        sl = slice(c * N, (c + 1) * N)
        qc = q if channels == 1 else q[:, sl]
        if paired:
            vc = modes if channels == 1 else modes[:, :, sl]
            out.append((vc * qc.reshape(qc.shape[0], 1, N)).sum(axis=-1))
        else:
            vc = modes if channels == 1 else modes[:, sl]
            out.append(ad.matmul(qc, vc.T) if isinstance(qc, ad.Var) or isinstance(vc, ad.Var) else qc @ vc.T)
    return out


def field_eval(model: PTPIModel, x, mu, t=None, need=("value",), P=None):
    """Field bundle in physical units at shared points ``x`` for each (mu, t)."""
    from .physics import FieldBundle

    need = set(need)
    with_dt = "dt" in need
    q, dq, _ = branch_coefficients(model, mu, t, with_dt=with_dt, P=P)
    modes = trunk_modes(model, x, need=need, P=P)
    return assemble_bundle(model, q, dq, modes, need)


def assemble_bundle(model: PTPIModel, q, dq, modes: TrunkModes, need, paired: bool = False):
    from .physics import FieldBundle

    C = model.channels
    s = model.norm.field_scale
    value = [v * s[c] for c, v in enumerate(combine(q, modes.value, C, paired))]
    grad = lap = dt = None
    if "grad" in need or "lap" in need:
        per_dir = [combine(q, g, C, paired) for g in modes.grad]
        grad = [[per_dir[i][c] * s[c] for i in range(model.d)] for c in range(C)]
    if "lap" in need:
        lap = [v * s[c] for c, v in enumerate(combine(q, modes.lap, C, paired))]
    if "dt" in need:
        dt = [v * s[c] for c, v in enumerate(combine(dq, modes.value, C, paired))]
    return FieldBundle(value, grad, lap, dt)


def mesh_modes(model: PTPIModel) -> np.ndarray:
    """Lifting matrix at the mesh vertices, recomputed whenever the trunk changes."""
    if model.lifting == "pod":
        return model.pod.V
    key = (id(model.trunk), model.trunk.version, id(model.fourier))
    if model._cache.get("key") != key:
        model._cache["key"] = key
        model._cache["Vhat"] = _mesh_modes_channel_major(model, trunk_forward(model, model.mesh))
    return model._cache["Vhat"]


def _mesh_modes_channel_major(model: PTPIModel, v: np.ndarray) -> np.ndarray:
    # (N_h, NC) trunk values -> (N_h C, NC) block layout matching the POD matrix
    C, N, n_h = model.channels, model.n_modes, model.n_h
    if C == 1:
        return v
    out = np.zeros((n_h * C, N * C))
    for c in range(C):
        out[c * n_h : (c + 1) * n_h, c * N : (c + 1) * N] = v[:, c * N : (c + 1) * N]
    return out


def evaluate_on_mesh(model: PTPIModel, mu, t=None) -> np.ndarray:
    """Predicted physical fields ``(B, N_h C)`` on the model mesh."""
    q, _, _ = branch_coefficients(model, mu, t)
    u = q @ mesh_modes(model).T
    return u * np.repeat(model.norm.field_scale, model.n_h)
