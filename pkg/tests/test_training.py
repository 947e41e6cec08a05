import numpy as np
import pytest

from ptpi import autodiff as ad
from ptpi.model import bind, branch_coefficients, trunk_modes
from ptpi.networks import ConfigurationError
from ptpi.physics import ADR2D, Eikonal, FieldBundle, PDEProblem, generate_snapshots
from ptpi.sampling import collocation_points
from ptpi.training import (
    AdamState,
    ArchConfig,
    DivergedLossError,
    FrozenTrunkError,
    LossWeights,
    ResBatch,
    StageConfig,
    StageDivergence,
    TrainConfig,
    Trainer,
    adam_step,
    precompute_frozen_trunk,
    run_pipeline,
    split_validation,
    supervised_batch,
    total_loss,
    trunk_pretrain_loss,
    trunk_targets,
)

from conftest import small_model


def tiny_config(strategy="ptpi", epochs=(3, 2, 2), **kw):
    stages = {
        "trunk": StageConfig(epochs[0], 1e-3, batch_sup=16),
        "branch": StageConfig(epochs[1], 1e-3, 2, 4),
        "finetune": StageConfig(epochs[2], 1e-4, 2, 4),
        "vanilla_pretrain": StageConfig(epochs[1], 1e-3, 2, 4),
        "vanilla_finetune": StageConfig(epochs[2], 1e-4, 2, 4),
        "scratch": StageConfig(epochs[2], 1e-4, 2, 4),
        "poddlrom": StageConfig(epochs[1], 1e-3, 2, 4),
    }
    arch = ArchConfig(N=2, n=1, trunk_hidden=[10, 10], branch_hidden=[8, 8])
    base = dict(strategy=strategy, stages=stages, arch=arch, n_res=20, interior_count=30, boundary_count=12,
                res_bounds=np.array([[0.1, 1.1]]))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def eik_tiny():
    pr = Eikonal()
    data = generate_snapshots(pr, np.linspace(0.1, 0.5, 11)[:, None], [0.0], pr.mesh(10))
    return pr, data


# -- trunk loss ----------------------------------------------------------------


def test_trunk_loss_zero_and_delta(eik_small):
    m, _ = eik_small
    T = trunk_targets(m)
    # replace the trunk with a lookup that returns the targets exactly
    import ptpi.training as tr

    rows = np.arange(m.n_h)
    orig = tr.trunk_forward
    try:
        tr.trunk_forward = lambda model, x, P=None: T[rows[: len(x)]]
        assert float(trunk_pretrain_loss(m, rows, targets=T)) == 0.0
        delta = 0.3
        bumped = T.copy()
        bumped[0, 0] += delta
        tr.trunk_forward = lambda model, x, P=None: bumped[[0]]
        assert np.isclose(float(trunk_pretrain_loss(m, [0], targets=T)), delta**2 / m.n_modes)
    finally:
        tr.trunk_forward = orig
    with pytest.raises(ValueError):
        trunk_pretrain_loss(m, [])


def test_trunk_loss_decreases(eik_tiny):
    pr, data = eik_tiny
    cfg = tiny_config(epochs=(40, 0, 0))
    t = Trainer(cfg, data, pr)
    t.run_trunk(cfg.stages["trunk"])
    totals = [r["total"] for r in t.history.rows]
    assert np.all(np.isfinite(totals)) and totals[-1] < totals[0]


# -- total loss ----------------------------------------------------------------


class _Laplace(PDEProblem):
    def __init__(self):
        super().__init__("laplace", 2, 1, 1, True, (-1.0, -1.0), (1.0, 1.0), None, frozenset({"grad", "lap"}), "box")

    def interior_residual(self, bundle, x=None, mu=None, t=None):
        return [bundle.lap[0] + bundle.grad[0][0] * 0.0]

    def on_boundary(self, x, mu=None):
        return self.on_box_boundary(x)

    def boundary_value(self, x, mu, t=None):
        B = np.atleast_2d(mu).shape[0]
        return np.zeros((B, np.shape(x)[-2], 1))


def test_exact_model_has_zero_loss(eik_small):
    m, data = eik_small
    pr = _Laplace()
    for net in (m.decoder,):
        net.weights[-1][:] = 0
        net.biases[-1][:] = 0
    for net in (m.encoder, m.reduced):
        net.weights[-1][:] = 0
        net.biases[-1][:] = 0.4
    sup = supervised_batch(m, data)
    sup.u[:] = 0
    sup.q[:] = 0
    col = collocation_points(pr, "finetune", m.mesh, 20, 5, 0)
    res = ResBatch(np.array([[0.3], [0.6]]), None, col.interior, col.boundary)
    total, parts = total_loss(m, sup, res, LossWeights(), pr, "finetune")
    assert float(total) == 0.0
    assert all(parts[k] == 0.0 for k in ("L_N", "L_n", "L_Omega", "L_bOmega"))


def test_paper_weights():
    w = LossWeights()
    assert (w.data, w.latent, w.interior, w.boundary) == (0.5, 0.5, 0.5, 100.0)
    from ptpi.config import default_config

    a = default_config("adr2d").weights
    assert (a.data, a.latent, a.interior, a.boundary) == (0.5, 0.5, 0.5, 50.0)
    with pytest.raises(ConfigurationError):
        LossWeights(0.0, 0.5, 0.0, 1.0)
    with pytest.raises(ConfigurationError):
        LossWeights(-1.0)


def _res_batch(m, pr, n=5, seed=0):
    rng = np.random.default_rng(seed)
    col = collocation_points(pr, "finetune", m.mesh, 40, 10, seed)
    if pr.stationary:
        mu = rng.uniform(0.1, 1.1, (n, 1))
        pts, mask = pr.circle_points(mu, 10)
        return ResBatch(mu, None, col.interior, pts, mask, None, np.arange(n))
    mu = rng.uniform(1.0, 2.0, (n, 2))
    t = rng.uniform(0.1, 2.2, n)
    return ResBatch(mu, t, col.interior, col.boundary, None, col.initial, np.arange(n))


def test_breakdown_sums_to_total(adr_small):
    m, data = adr_small
    pr = ADR2D()
    w = LossWeights(0.5, 0.5, 0.5, 50.0, 2.0)
    total, parts = total_loss(m, supervised_batch(m, data, [0, 5]), _res_batch(m, pr), w, pr, "finetune")
    assert set(parts) >= {"L_N", "L_n", "L_Omega", "L_bOmega", "L_IC"}
    expected = 0.5 * parts["L_N"] + 0.5 * parts["L_n"] + 0.5 * parts["L_Omega"] + 50 * parts["L_bOmega"] + 2 * parts["L_IC"]
    assert abs(float(total) - expected) <= 1e-12 * max(1.0, expected)


def test_nonfinite_term_named(adr_small, monkeypatch):
    m, data = adr_small
    pr = ADR2D()
    monkeypatch.setattr(ADR2D, "forcing", lambda self, x, mu, t: np.full((len(mu), len(x)), np.inf))
    with pytest.raises(DivergedLossError, match="L_Omega"):
        total_loss(m, supervised_batch(m, data, [0]), _res_batch(m, pr), LossWeights(), pr, "finetune")


@pytest.mark.parametrize("problem", ["eikonal", "adr"])
def test_loss_term_gradients_match_fd(problem, eik_small, adr_small):
    m, data = eik_small if problem == "eikonal" else adr_small
    pr = Eikonal() if problem == "eikonal" else ADR2D()
    sup = supervised_batch(m, data, [0, 1])
    res = _res_batch(m, pr, n=3)
    for term in ("L_N", "L_n", "L_Omega", "L_bOmega"):
        # a negligible data weight keeps the weight set valid
        ws = [1.0 if term == k else 0.0 for k in ("L_N", "L_n", "L_Omega", "L_bOmega")]
        ws[0] = max(ws[0], 1e-300)
        w = LossWeights(*ws, 0.0)
        tape = ad.Tape()
        P = bind(m, tape)
        loss, _ = total_loss(m, sup, res, w, pr, "finetune", P)
        names = [(n, i) for n in ("trunk", "encoder", "reduced", "decoder") for i in range(len(P[n]))]
        grads = ad.grad(loss, [P[n][i] for n, i in names])
        rng = np.random.default_rng(0)
        for (n, i), g in zip(names, grads):
            base = getattr(m, n).params()
            if not np.any(g) and n == "encoder" and term != "L_n":
                continue
            for _ in range(2):
                idx = tuple(rng.integers(0, s) for s in base[i].shape)
                step = 1e-6 * max(1.0, abs(base[i][idx]))
                vals = []
                for s in (step, -step):
                    Q = {k: [a.copy() for a in getattr(m, k).params()] for k in P}
                    Q[n][i][idx] += s
                    vals.append(float(total_loss(m, sup, res, w, pr, "finetune", Q)[0]))
                fd = (vals[0] - vals[1]) / (2 * step)
                assert abs(g[idx] - fd) / max(abs(fd), 1e-4) <= 1e-5, (term, n, i)


# -- optimizer -----------------------------------------------------------------


def test_adam_first_step():
    p = [np.array([1.0])]
    adam_step(AdamState.create(p, 1e-3), p, [np.array([2.0])])
    assert np.isclose(p[0][0] - 1.0, -1e-3, rtol=1e-6)


def test_adam_zero_gradient():
    p = [np.array([1.0, -2.0])]
    adam_step(AdamState.create(p), p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_deterministic_and_moment_shapes():
    def run():
        rng = np.random.default_rng(3)
        p = [rng.normal(size=(3, 2)), rng.normal(size=4)]
        st = AdamState.create(p, 1e-2)
        traj = []
        for k in range(5):
            adam_step(st, p, [np.sin(a + k) for a in p])
            traj.append(np.concatenate([a.ravel() for a in p]))
        assert [m.shape for m in st.m] == [(3, 2), (4,)] and st.step == 5
        return np.array(traj)

    assert run().tobytes() == run().tobytes()


def test_adam_rejects_nonfinite():
    p = [np.ones(2)]
    st = AdamState.create(p)
    with pytest.raises(ad.DivergedGradientError):
        adam_step(st, p, [np.array([np.nan, 1.0])])
    np.testing.assert_array_equal(p[0], 1.0)
    assert st.step == 0


# -- frozen trunk ----------------------------------------------------------------


def test_cache_requires_frozen_trunk(eik_small):
    m, _ = eik_small
    col = collocation_points(Eikonal(), "pretrain", m.mesh)
    with pytest.raises(FrozenTrunkError):
        precompute_frozen_trunk(m, col, Eikonal())


@pytest.mark.parametrize("problem", ["eikonal", "adr"])
def test_cache_matches_live(problem, eik_small, adr_small):
    m, data = eik_small if problem == "eikonal" else adr_small
    pr = Eikonal() if problem == "eikonal" else ADR2D()
    m.trunk.freeze()
    rng = np.random.default_rng(1)
    lo, hi = np.array(pr.box_lo), np.array(pr.box_hi)
    col = collocation_points(pr, "finetune", m.mesh, 100, 10, 0)
    col.interior = lo + (hi - lo) * rng.random((100, 2))
    cache = precompute_frozen_trunk(m, col, pr)
    live = trunk_modes(m, col.interior, {"value"} | set(pr.needs) - {"dt"})
    assert cache.interior.value.tobytes() == live.value.tobytes()
    assert cache.interior.grad[0].tobytes() == live.grad[0].tobytes()
    res = _res_batch(m, pr, 4)
    res.interior = col.interior
    if pr.stationary:
        from ptpi.training import cache_boundary

        cache_boundary(m, cache, res.boundary)
    sup = supervised_batch(m, data, [0])
    _, a = total_loss(m, sup, res, LossWeights(), pr, "branch", cache=cache)
    _, b = total_loss(m, sup, res, LossWeights(), pr, "finetune")
    for k in ("L_N", "L_Omega", "L_bOmega"):
        assert abs(a[k] - b[k]) <= 1e-12 * max(1.0, abs(b[k]))


# -- pipeline --------------------------------------------------------------------


def test_zero_epochs_returns_initial_model(eik_tiny):
    pr, data = eik_tiny
    cfg = tiny_config(epochs=(0, 0, 0))
    init = Trainer(cfg, data, pr).model.copy_params()
    res = run_pipeline(cfg, data, pr)
    after = res.model.copy_params()
    for k in init:
        assert all(a.tobytes() == b.tobytes() for a, b in zip(init[k], after[k]))
    assert res.history.rows == []


def test_branch_stage_keeps_trunk_and_history_consistent(eik_tiny):
    pr, data = eik_tiny
    cfg = tiny_config(epochs=(2, 3, 2))
    t = Trainer(cfg, data, pr)
    res = t.run()
    trunk_after_pretrain = res.snapshots["trunk"]["trunk"]
    trunk_after_branch = res.snapshots["branch"]["trunk"]
    assert all(a.tobytes() == b.tobytes() for a, b in zip(trunk_after_pretrain, trunk_after_branch))
    for row in res.history.rows:
        if row["stage"] == "trunk":
            continue
        assert abs(row["total"] - sum(row["weighted"].values())) <= 1e-12 * max(1.0, row["total"])
        assert np.isfinite(row["validation_L_N"])
    stages = [r["stage"] for r in res.history.rows]
    assert stages == ["trunk"] * 2 + ["branch"] * 3 + ["finetune"] * 2


def test_pipeline_deterministic(eik_tiny):
    pr, data = eik_tiny
    a = run_pipeline(tiny_config(epochs=(2, 2, 1)), data, pr)
    b = run_pipeline(tiny_config(epochs=(2, 2, 1)), data, pr)
    for r1, r2 in zip(a.history.rows, b.history.rows):
        assert r1["total"] == r2["total"]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.model.trunk.params(), b.model.trunk.params()))


@pytest.mark.parametrize("strategy,stages", [
    ("vanilla", ["vanilla_pretrain", "vanilla_finetune"]),
    ("none", ["scratch"]),
    ("pod-dl-rom", ["poddlrom"]),
])
def test_strategies_run(eik_tiny, strategy, stages):
    pr, data = eik_tiny
    res = run_pipeline(tiny_config(strategy), data, pr)
    assert sorted(set(r["stage"] for r in res.history.rows)) == sorted(stages)
    if strategy == "pod-dl-rom":
        assert res.model.lifting == "pod"
        assert all(np.isnan(r["L_Omega"]) for r in res.history.rows)


def test_time_dependent_pipeline_runs():
    pr = ADR2D()
    g = np.linspace(1.0, 1.6, 3)
    data = generate_snapshots(pr, np.array([[a, b] for a in g for b in g]), np.linspace(0.2, 2.0, 3), pr.mesh(6))
    cfg = tiny_config(arch=ArchConfig(N=3, n=3, trunk_hidden=[8], branch_hidden=[8]),
                      res_bounds=np.array([[1.0, 2.0], [1.0, 2.0], [0.1, 2.2]]),
                      weights=LossWeights(0.5, 0.5, 0.5, 50.0, 1.0))
    res = run_pipeline(cfg, data, pr)
    assert all(np.isfinite(r["L_IC"]) for r in res.history.stage("finetune"))


def test_divergence_reports_stage_and_epoch(eik_tiny, monkeypatch):
    pr, data = eik_tiny
    monkeypatch.setattr(Eikonal, "interior_residual", lambda self, b, x=None, mu=None, t=None: [b.value[0] * np.nan])
    with pytest.raises(StageDivergence) as info:
        run_pipeline(tiny_config(epochs=(1, 2, 1)), data, pr)
    assert info.value.stage == "branch" and info.value.epoch == 0
    assert "L_Omega" in str(info.value)


def test_validation_split(eik_tiny):
    _, data = eik_tiny
    tr, va = split_validation(data, 0.1, 0)
    assert len(va) == 1 and len(tr) == 10
    assert 0 not in va and 10 not in va
    with pytest.raises(ConfigurationError):
        TrainConfig(val_fraction=0.3)
    with pytest.raises(ConfigurationError):
        TrainConfig(strategy="magic")


def test_residual_set_resampled_every_period(eik_tiny, monkeypatch):
    pr, data = eik_tiny
    cfg = tiny_config(epochs=(0, 7, 0), resample_every=3)
    t = Trainer(cfg, data, pr)
    draws = []
    orig = t.res_sampler.draw
    t.res_sampler.draw = lambda n: draws.append(n) or orig(n)
    t.run()
    assert len(draws) == 3  # epochs 0, 3, 6


def test_history_csv(tmp_path, eik_tiny):
    pr, data = eik_tiny
    res = run_pipeline(tiny_config(epochs=(1, 1, 1)), data, pr)
    path = tmp_path / "h.csv"
    res.history.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,stage,L_N,L_n,L_Omega,L_bOmega,L_IC,total,validation_L_N"
    assert len(lines) == 4
