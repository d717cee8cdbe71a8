import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asyncpipe.pipeline import DelayProfile, Mode, PipelineSpec, compute_delay_profile
from asyncpipe.sim import (MLP, SGD, AdamW, ConstantLR, HogwildDelays, LeastSquares, MomentumSGD,
                           Quadratic, StepDecayLR, TrainSchedule, WarmupInverseSqrtLR,
                           partition_units, run_experiment, sample_hogwild_delays,
                           sweep_delayed_gd, t1_lr, truncated_delay_mean)
from asyncpipe.stability import StabilityProblem, gamma_for_decay, lemma1_threshold, radius_at


# --- schedules -----------------------------------------------------------------

def test_t1_examples():
    assert t1_lr(0.7, 7, 0, 100) == pytest.approx(0.1)
    assert t1_lr(0.7, 7, 100, 100) == 0.7
    assert t1_lr(0.7, 7, 5000, 100) == 0.7
    assert t1_lr(0.1, 16, 50, 100) == pytest.approx(0.025)
    assert t1_lr(0.1, 0, 0, 100) == 0.1
    assert t1_lr(0.1, 9, 0, 0) == 0.1


@given(base=st.floats(1e-6, 10), tau=st.integers(1, 500), K=st.integers(1, 10_000), data=st.data())
def test_t1_is_monotone_and_bounded(base, tau, K, data):
    k = data.draw(st.integers(0, 2 * K))
    lr = t1_lr(base, tau, k, K)
    assert base / tau * (1 - 1e-12) <= lr <= base * (1 + 1e-12)
    assert t1_lr(base, tau, k + 1, K) >= lr * (1 - 1e-12)


def test_base_schedules():
    assert StepDecayLR(1.0, 10, 0.5)(25) == 0.25
    sched = WarmupInverseSqrtLR(1e-3, 100, init=0.0)
    assert sched(0) == 0.0
    assert sched(50) == pytest.approx(5e-4)
    assert sched(100) == pytest.approx(1e-3)
    assert sched(400) == pytest.approx(5e-4)


def test_train_schedule_warmup_then_rescaling():
    sched = TrainSchedule(ConstantLR(0.8), K=10, warmup_epochs=2, steps_per_epoch=5)
    assert sched.warmup_steps == 10
    assert sched.stage_lr(9, 8) == 0.8
    # annealing restarts when warmup ends
    assert sched.stage_lr(10, 8) == pytest.approx(0.1)
    assert sched.stage_lr(20, 8) == 0.8
    with pytest.raises(ValueError):
        TrainSchedule(ConstantLR(0.1), K=-1)
    with pytest.raises(ValueError):
        TrainSchedule(ConstantLR(0.1), correction_decay=1.0)


# --- optimizers ------------------------------------------------------------------

def test_sgd_step():
    assert SGD().update(np.array([1.0]), np.array([0.5]), 0.1, {})[0] == pytest.approx(0.95)


def test_momentum_two_steps():
    opt = MomentumSGD(0.9)
    w = np.array([2.0])
    st_ = opt.init_state(w)
    for _ in range(2):
        w = opt.update(w, np.array([1.0]), 0.1, st_)
    assert w[0] == pytest.approx(2.0 - 0.1 - 0.19, abs=1e-15)


def scalar_adamw(w, grads, lr, b1, b2, eps, wd):
    """Reference AdamW on Python floats."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        w = w - lr * wd * w
        w = w - lr * mh / (math.sqrt(vh) + eps)
    return w


@given(g=st.lists(st.floats(-5, 5).filter(lambda x: abs(x) > 1e-6), min_size=1, max_size=8),
       wd=st.sampled_from([0.0, 0.01]))
def test_adamw_matches_scalar_reference(g, wd):
    opt = AdamW(0.9, 0.98, 1e-8, wd)
    w = np.array([0.3])
    state = opt.init_state(w)
    for gi in g:
        w = opt.update(w, np.array([gi]), 0.01, state)
    assert w[0] == pytest.approx(scalar_adamw(0.3, g, 0.01, 0.9, 0.98, 1e-8, wd), rel=1e-12, abs=1e-15)


# --- objectives ------------------------------------------------------------------

def test_quadratic_gradient_cancels_discrepancy_when_reads_agree():
    q = Quadratic(lam=2.0, sigma=0.0, delta=7.0)
    w = np.array([1.5])
    assert q.grad(w, w, np.random.default_rng(0))[0] == pytest.approx(3.0)
    assert q.grad(np.array([1.0]), np.array([0.0]), np.random.default_rng(0))[0] == pytest.approx(9.0)
    with pytest.raises(ValueError):
        q.grad(np.zeros(1), np.zeros(2), np.random.default_rng(0))


def test_uniform_noise_has_requested_spread():
    q = Quadratic(lam=1.0, sigma=2.0, noise="uniform")
    rng = np.random.default_rng(0)
    eta = np.array([-q.grad(np.zeros(1), np.zeros(1), rng)[0] for _ in range(20000)])
    assert np.max(np.abs(eta)) <= 2.0 * math.sqrt(3)
    assert eta.std() == pytest.approx(2.0, rel=0.03)


def test_least_squares_gradients():
    rng = np.random.default_rng(1)
    X, y = rng.standard_normal((40, 3)), rng.standard_normal(40)
    w = rng.standard_normal(3)
    full = LeastSquares(X, y)
    assert np.allclose(full.grad(w, w, rng), X.T @ (X @ w - y) / 40, rtol=0, atol=1e-12)
    assert full.loss(w) == pytest.approx(0.5 * np.mean((X @ w - y) ** 2), rel=1e-12)
    mini = LeastSquares(X, y, batch_size=8)
    idx = np.random.default_rng(5).integers(0, 40, size=8)
    expected = X[idx].T @ (X[idx] @ w - y[idx]) / 8
    assert np.allclose(mini.grad(w, w, np.random.default_rng(5)), expected, rtol=0, atol=1e-12)


def small_mlp(activation="tanh", batch_size=None):
    rng = np.random.default_rng(2)
    X = rng.standard_normal((16, 4))
    y = rng.standard_normal((16, 2))
    return MLP([4, 8, 6, 2], X, y, activation, batch_size)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_mlp_gradient_matches_finite_differences(activation):
    net = small_mlp(activation)
    assert net.dim <= 200
    w = net.init_weights(np.random.default_rng(0))
    w += 0.1 * np.random.default_rng(1).standard_normal(net.dim)
    g = net.grad(w, w, np.random.default_rng(0))
    h = 1e-4
    fd = np.empty_like(w)
    for j in range(net.dim):
        e = np.zeros_like(w)
        e[j] = h
        fd[j] = (net.loss(w + e) - net.loss(w - e)) / (2 * h)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_mlp_backward_weights_only_route_errors():
    net = small_mlp()
    w = net.init_weights(np.random.default_rng(0))
    rng = np.random.default_rng(0)
    base = net.grad(w, w, rng)
    # the first layer's matrix never carries an error signal backwards
    alt = w.copy()
    ws, bs, _, _ = net.layers[0]
    alt[ws] += 1.0
    assert np.array_equal(net.grad(w, alt, rng), base)
    # the last layer's matrix feeds the errors of every earlier layer, but not its own gradient
    alt = w.copy()
    ws, bs, _, _ = net.layers[-1]
    alt[ws] += 1.0
    g = net.grad(w, alt, rng)
    assert np.array_equal(g[ws], base[ws])
    assert not np.allclose(g[net.layers[0][0]], base[net.layers[0][0]])


def test_partition_is_even_and_keeps_layers_whole():
    net = small_mlp()
    stages = partition_units(net.unit_sizes, 2)
    assert stages[0] == slice(0, 4 * 8 + 8 + 8 * 6 + 6)
    assert stages[1].stop == net.dim
    assert [s.stop - s.start for s in partition_units([1] * 10, 4)] == [3, 3, 2, 2]
    with pytest.raises(ValueError):
        partition_units([1, 1], 3)


# --- stochastic delays -------------------------------------------------------------

def truncated_geometric_mean(tau_max, mean):
    """Closed-form mean of floor(Exp(mean)) conditioned on being <= tau_max."""
    q = math.exp(-1.0 / mean)
    n = tau_max + 1
    return q / (1 - q) - n * q ** n / (1 - q ** n)


def test_hogwild_zero_cap():
    assert not sample_hogwild_delays(np.random.default_rng(0), 0, [3.0, 1.0], size=100).any()


@pytest.mark.parametrize("tau_max,mean", [(20, 5.0), (3, 10.0), (50, 1.0), (7, 0.3)])
def test_hogwild_sample_mean(tau_max, mean):
    draws = sample_hogwild_delays(np.random.default_rng(0), tau_max, [mean], size=100_000)[:, 0]
    assert draws.min() >= 0 and draws.max() <= tau_max
    analytic = truncated_geometric_mean(tau_max, mean)
    assert truncated_delay_mean(tau_max, mean) == pytest.approx(analytic, rel=1e-12)
    assert abs(draws.mean() - analytic) <= 0.02 * analytic


@given(tau_max=st.integers(0, 100), means=st.lists(st.floats(0.05, 200), min_size=1, max_size=6),
       seed=st.integers(0, 2 ** 32 - 1))
def test_hogwild_draws_respect_cap(tau_max, means, seed):
    d = sample_hogwild_delays(np.random.default_rng(seed), tau_max, means, size=50)
    assert d.shape == (50, len(means))
    assert d.min() >= 0 and d.max() <= tau_max


def test_hogwild_nominal_delay():
    assert HogwildDelays(20, (5.0, 0.1)).nominal_delays() == [5, 1]


# --- engine: degeneracies -------------------------------------------------------------

def reference_update(kind, w, g, lr, state):
    """Synchronous optimizer step written out by hand, same operation order."""
    if kind == "sgd":
        return w - lr * g
    if kind == "momentum":
        state["v"] = 0.9 * state.get("v", np.zeros_like(w)) - lr * g
        return w + state["v"]
    t = state.get("t", 0) + 1
    m = 0.9 * state.get("m", np.zeros_like(w)) + (1 - 0.9) * g
    v = 0.98 * state.get("v", np.zeros_like(w)) + (1 - 0.98) * g * g
    state.update(m=m, v=v, t=t)
    mh, vh = m / (1 - 0.9 ** t), v / (1 - 0.98 ** t)
    w = w - lr * 0.01 * w
    return w - lr * mh / (np.sqrt(vh) + 1e-8)


OPTIMIZERS = {"sgd": SGD(), "momentum": MomentumSGD(0.9), "adamw": AdamW(0.9, 0.98, 1e-8, 0.01)}


def make_objective(kind):
    rng = np.random.default_rng(4)
    if kind == "quadratic":
        return Quadratic(lam=1.0, sigma=1.0, delta=3.0), 1.0
    X, y = rng.standard_normal((30, 6)), rng.standard_normal(30)
    if kind == "least_squares":
        return LeastSquares(X, y, batch_size=5), 0.5
    return MLP([6, 5, 4, 1], X, y, batch_size=5), None


@pytest.mark.parametrize("obj_kind", ["quadratic", "least_squares", "mlp"])
@pytest.mark.parametrize("opt_kind", ["sgd", "momentum", "adamw"])
def test_zero_delay_equals_synchronous_loop(obj_kind, opt_kind):
    obj, w0 = make_objective(obj_kind)
    steps, lr, seed = 60, 0.01, 11
    P = 1 if obj_kind == "quadratic" else 2
    profile = DelayProfile([0] * P, [0] * P)
    traj = run_experiment(obj, TrainSchedule(ConstantLR(lr)), OPTIMIZERS[opt_kind], steps, seed,
                          profile=profile, w0=w0)
    rng = np.random.default_rng(seed)
    w = obj.init_weights(rng) if w0 is None else obj.init_weights(rng, w0)
    state = {}
    for _ in range(steps):
        w = reference_update(opt_kind, w, obj.grad(w, w, rng), lr, state)
    assert np.array_equal(traj.final_w, w)


def test_pipedream_reads_agree_every_step():
    obj, _ = make_objective("mlp")
    profile = compute_delay_profile(PipelineSpec(P=3, mode=Mode.PIPEDREAM, N=2))
    seen = []

    def observe(t, u_fwd, u_bkwd):
        seen.append(np.array_equal(u_fwd, u_bkwd))

    run_experiment(obj, TrainSchedule(ConstantLR(0.01)), SGD(), 50, 0, profile=profile, observer=observe)
    assert len(seen) == 50 and all(seen)


@pytest.mark.parametrize("opt_kind", ["sgd", "adamw"])
def test_correction_vanishes_without_discrepancy(opt_kind):
    obj, _ = make_objective("mlp")
    profile = compute_delay_profile(PipelineSpec(P=3, mode=Mode.PIPEDREAM, N=1))
    runs = [run_experiment(obj, TrainSchedule(ConstantLR(0.01), correction_decay=D),
                           OPTIMIZERS[opt_kind], 80, 3, profile=profile) for D in (None, 0.135)]
    assert np.array_equal(runs[0].final_w, runs[1].final_w)
    assert runs[0].loss == runs[1].loss


class Drift:
    """Gradient fixed so plain SGD at unit rate moves the weights by ``c`` each step."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)
        self.unit_sizes = [len(self.c)]

    def init_weights(self, rng, w0=0.0):
        return np.full(len(self.c), float(w0))

    def grad(self, u_fwd, u_bkwd, rng, u_recomp=None):
        return -self.c

    def loss(self, w):
        return 0.0


@pytest.mark.parametrize("tf,tb", [(4, 0), (7, 0), (6, 2)])
def test_accumulator_tracks_linear_drift(tf, tb):
    c = np.array([0.3, -1.2])
    D = 0.135
    g = gamma_for_decay(D, tf, tb)
    gaps = {}

    def observe(t, u_fwd, u_bkwd):
        gaps[t] = np.max(np.abs(u_bkwd - u_fwd))

    run_experiment(Drift(c), TrainSchedule(ConstantLR(1.0), correction_decay=D), SGD(), 200, 0,
                   profile=DelayProfile.uniform(tf, tb), observer=observe)
    for t, gap in gaps.items():
        if t < tf:
            continue
        # the accumulator value used is the one held at the backward read time
        assert gap <= g ** (t - tb) * np.max(np.abs(c)) * (tf - tb) + 1e-12
    assert gaps[199] < 1e-12


# --- engine: dynamics ----------------------------------------------------------------

def growth_rate(traj, skip):
    w = np.array(traj.wnorm)
    n = len(w)
    head = np.max(w[skip - 60:skip])
    tail = np.max(w[-60:])
    return (tail / head) ** (1.0 / (n - skip))


@pytest.mark.parametrize("case", [
    dict(tf=10, tb=6, delta=5.0, D=0.1, alpha=0.12),
    dict(tf=10, tb=6, delta=5.0, D=0.1, alpha=0.09),
    dict(tf=10, tb=6, delta=5.0, D=None, alpha=0.05),
    dict(tf=7, tb=0, delta=2.0, D=0.135, alpha=0.2),
    dict(tf=5, tb=2, delta=-1.0, D=None, alpha=0.2),
])
def test_noise_free_growth_matches_spectral_radius(case):
    tf, tb, delta, D, alpha = case["tf"], case["tb"], case["delta"], case["D"], case["alpha"]
    gamma = gamma_for_decay(D, tf, tb) if D else 0.0
    prob = StabilityProblem(lam=1.0, tau_fwd=tf, tau_bkwd=tb, delta=delta, discrepancy=True,
                            correction=D is not None, gamma=gamma)
    traj = run_experiment(Quadratic(1.0, 0.0, delta), TrainSchedule(ConstantLR(alpha), correction_decay=D),
                          SGD(), 700, 0, profile=DelayProfile.uniform(tf, tb), w0=1e-3)
    assert not traj.diverged
    assert growth_rate(traj, 300) == pytest.approx(radius_at(prob, alpha), abs=2e-3)


def test_recompute_growth_matches_spectral_radius():
    D, tf, tr = 0.135, 8, 3
    prob = StabilityProblem(lam=1.0, tau_fwd=tf, tau_bkwd=0, tau_recomp=tr, delta=3.0, phi=1.5,
                            discrepancy=True, recompute=True, correction=True,
                            gamma=gamma_for_decay(D, tf, 0))
    traj = run_experiment(Quadratic(1.0, 0.0, 3.0, 1.5), TrainSchedule(ConstantLR(0.1), correction_decay=D),
                          SGD(), 1200, 0, profile=DelayProfile.uniform(tf, 0, tr))
    assert growth_rate(traj, 600) == pytest.approx(radius_at(prob, 0.1), abs=2e-3)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_large_delay_diverges(seed):
    traj = run_experiment(Quadratic(1.0, 1.0), TrainSchedule(ConstantLR(0.2)), SGD(), 10_000, seed,
                          profile=DelayProfile.uniform(10, 10))
    assert traj.diverged
    assert traj.diverged_at[-1] and not any(traj.diverged_at[:-1])
    assert traj.t == sorted(traj.t)


def test_step_below_threshold_stays_bounded():
    traj = run_experiment(Quadratic(1.0, 1.0), TrainSchedule(ConstantLR(0.14)), SGD(), 100_000, 0,
                          profile=DelayProfile.uniform(10, 10), record_every=1000)
    assert not traj.diverged
    assert max(traj.wnorm) < 100


def test_small_delay_settles_at_noise_floor():
    alpha = 0.2
    traj = run_experiment(Quadratic(1.0, 1.0), TrainSchedule(ConstantLR(alpha)), SGD(), 20_000, 0,
                          profile=DelayProfile.uniform(1, 1))
    w2 = np.array(traj.wnorm[2000:]) ** 2
    # stationary variance of w_{t+1} = w_t - a w_{t-1} + a eta is O(a sigma^2)
    assert not traj.diverged
    assert 0.02 < w2.mean() < 1.0


@pytest.mark.parametrize("tau", [1, 3, 10, 30])
def test_quadratic_divergence_boundary_within_one_cell(tau):
    star = lemma1_threshold(1.0, tau)
    ratio = 1.15
    # cells straddle the bound without landing on it
    grid = star * ratio ** (np.arange(-3, 3) + 0.5)
    verdicts = [run_experiment(Quadratic(1.0, 1.0), TrainSchedule(ConstantLR(a)), SGD(), 20_000, 0,
                               profile=DelayProfile.uniform(tau, tau), record_every=20_000).diverged
                for a in grid]
    first = verdicts.index(True)
    assert all(verdicts[first:])
    predicted = int(np.argmax(grid > star))
    assert abs(first - predicted) <= 1


def test_warmup_reads_current_weights_and_uses_base_rate():
    seen = []

    def observe(t, u_fwd, u_bkwd):
        seen.append((t, u_fwd.copy()))

    sched = TrainSchedule(ConstantLR(0.5), K=100, warmup_epochs=3, steps_per_epoch=2)
    traj = run_experiment(Drift([1.0]), sched, SGD(), 10, 0, profile=DelayProfile.uniform(4, 0),
                          observer=observe)
    # forced drift of lr per step: w_t = 0.5 t during warmup
    for t, u in seen[:6]:
        assert u[0] == pytest.approx(0.5 * t)
    # first asynchronous step reads 4 steps back at rate base / 4
    assert seen[6][1][0] == pytest.approx(0.5 * 2)
    assert traj.lr[5][0] == 0.5 and traj.lr[6][0] == pytest.approx(0.5 / 4)


def test_cold_start_reads_initial_weights():
    seen = []
    run_experiment(Drift([1.0]), TrainSchedule(ConstantLR(1.0)), SGD(), 6, 0,
                   profile=DelayProfile.uniform(4, 0), w0=2.0,
                   observer=lambda t, f, b: seen.append((f[0], b[0])))
    assert [f for f, _ in seen] == [2.0, 2.0, 2.0, 2.0, 2.0, 3.0]
    assert [b for _, b in seen] == [2.0, 3.0, 4.0, 5.0, 6.0, 7.0]


def test_runs_are_deterministic_per_seed():
    obj, _ = make_objective("mlp")
    prof = compute_delay_profile(PipelineSpec(P=3, mode=Mode.PIPEMARE, N=1))
    sched = TrainSchedule(ConstantLR(0.05), K=20, correction_decay=0.135)
    a = run_experiment(obj, sched, AdamW(), 40, 9, profile=prof)
    b = run_experiment(obj, sched, AdamW(), 40, 9, profile=prof)
    c = run_experiment(obj, sched, AdamW(), 40, 10, profile=prof)
    assert a.loss == b.loss and np.array_equal(a.final_w, b.final_w)
    assert a.loss != c.loss


def test_hogwild_runs_and_rejects_correction():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((64, 4))
    obj = LeastSquares(X, X @ np.ones(4))
    delays = HogwildDelays(6, (3.0, 1.0))
    a = run_experiment(obj, TrainSchedule(ConstantLR(0.05), K=50), SGD(), 300, 1, hogwild=delays, w0=0.0)
    b = run_experiment(obj, TrainSchedule(ConstantLR(0.05), K=50), SGD(), 300, 1, hogwild=delays, w0=0.0)
    assert a.loss == b.loss and a.final_loss < 1e-3
    with pytest.raises(ValueError):
        run_experiment(obj, TrainSchedule(ConstantLR(0.05), correction_decay=0.1), SGD(), 10, 0,
                       hogwild=delays)
    with pytest.raises(ValueError):
        run_experiment(obj, TrainSchedule(ConstantLR(0.05)), SGD(), 10, 0)


@pytest.mark.parametrize("tau", [0, 3])
def test_vectorized_sweep_matches_engine(tau):
    rng = np.random.default_rng(7)
    X, y = rng.standard_normal((100, 4)), rng.standard_normal(100)
    obj = LeastSquares(X, y)
    alphas = np.array([0.05, 0.2, lemma1_threshold(np.linalg.eigvalsh(obj.gram)[-1], tau) * 1.5])
    W, diverged = sweep_delayed_gd(obj.gram, obj.moment, alphas, tau, 3000)
    for a, w, dv in zip(alphas, W, diverged):
        traj = run_experiment(obj, TrainSchedule(ConstantLR(a)), SGD(), 3000, 0,
                              profile=DelayProfile.uniform(tau, tau), w0=0.0, record_every=3000)
        assert traj.diverged == dv
        if not dv:
            assert np.allclose(w, traj.final_w, rtol=1e-10, atol=1e-12)
