import numpy as np
import pytest

from timeinf import ar
from timeinf.ar import ArConfig
from timeinf.influence import (
    InfluenceContext,
    block_influence_matrix,
    influence_block,
    influence_param,
    pairwise_influence,
    self_block_influences,
    self_influence_series,
    test_influence_series as series_test_influence,
    timeinf_point,
)
from timeinf.series import ArInstance, NotCoveredError, TimeSeries, WindowSpec, make_instances
from timeinf.solvers import SolverChoice

from oracles import ar_series, contaminated_fit, naive_members, upweight_derivative


def _ctx(x, m, stride=1, solver=SolverChoice(), ridge=1e-8, cache=True):
    inst = make_instances(TimeSeries(np.asarray(x, dtype=float)), 0, WindowSpec(m, stride))
    return InfluenceContext.build(inst, ArConfig(m, ridge), solver, cache=cache)


def _noiseless(T, m=2):
    x = np.zeros(T)
    x[0], x[1] = 1.0, 0.5
    for t in range(2, T):
        x[t] = 0.6 * x[t - 1] - 0.3 * x[t - 2]
    return x


def test_zero_residual_instance_gives_zero():
    ctx = _ctx(ar_series(0, 200), 3)
    theta = ctx.model.theta
    cov = np.array([0.3, -1.0, 2.0])
    inst = ArInstance(50, cov, float(cov @ theta))
    assert np.allclose(influence_param(ctx, inst), 0, atol=1e-15)
    assert influence_block(ctx, ctx.instances[10], inst) == pytest.approx(0, abs=1e-15)


def test_single_instance_fit_has_zero_influence():
    model = ar.fit_arrays(np.array([[1.0]]), np.array([1.0]), ArConfig(1, ridge=0.0))
    inst = make_instances(TimeSeries(np.array([1.0, 1.0])), 0, WindowSpec(1))
    ctx = InfluenceContext(model, inst)
    assert model.theta[0] == pytest.approx(1.0)
    assert np.allclose(influence_param(ctx, inst[0]), 0)


def test_influence_param_closed_form_at_zero_ridge():
    ctx = _ctx(ar_series(1, 300), 4, ridge=0.0)
    M = ctx.model.gram
    for j in (0, 77, 200):
        b = ctx.instances[j]
        r = b.target - b.covariates @ ctx.model.theta
        ref = np.linalg.solve(M, b.covariates * r)
        np.testing.assert_allclose(influence_param(ctx, b), ref, rtol=1e-10)


def test_influence_param_matches_upweight_refit_ar2():
    ctx = _ctx(ar_series(2, 400, phi=0.5), 2)
    X, y = ctx.instances.covariates, ctx.instances.targets
    eps = 1e-5
    for j in (3, 150, 380):
        t0 = contaminated_fit(X, y, ctx.model.ridge, [j], 0.0)
        t1 = contaminated_fit(X, y, ctx.model.ridge, [j], eps)
        np.testing.assert_allclose(influence_param(ctx, ctx.instances[j]), (t1 - t0) / eps, rtol=1e-3)


def test_influence_block_matches_upweight_refit():
    ctx = _ctx(ar_series(3, 500), 5)
    X, y = ctx.instances.covariates, ctx.instances.targets
    rng = np.random.default_rng(3)
    for _ in range(10):
        i, j = (int(v) for v in rng.integers(len(y), size=2))
        test_loss = lambda th: (y[j] - X[j] @ th) ** 2
        fd = upweight_derivative(X, y, ctx.model.ridge, [i], test_loss, central=True)
        got = influence_block(ctx, ctx.instances[i], ctx.instances[j])
        assert got == pytest.approx(fd, rel=1e-3)


def test_influence_block_one_sided_fd_away_from_zero():
    # the literal forward difference is accurate whenever the derivative is not tiny
    ctx = _ctx(ar_series(4, 500), 5)
    X, y = ctx.instances.covariates, ctx.instances.targets
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 10:
        i, j = (int(v) for v in rng.integers(len(y), size=2))
        got = influence_block(ctx, ctx.instances[i], ctx.instances[j])
        if abs(got) < 1e-2:
            continue
        test_loss = lambda th: (y[j] - X[j] @ th) ** 2
        fd = upweight_derivative(X, y, ctx.model.ridge, [i], test_loss)
        assert got == pytest.approx(fd, rel=1e-3)
        checked += 1


def test_influence_block_symmetric():
    ctx = _ctx(ar_series(5, 300), 6)
    a, b = ctx.instances[4], ctx.instances[200]
    assert influence_block(ctx, a, b) == pytest.approx(influence_block(ctx, b, a), rel=1e-12)


@pytest.mark.parametrize("kind", ["direct", "conjugate_gradient"])
def test_self_influence_nonpositive(kind):
    ctx = _ctx(ar_series(6, 400), 8, solver=SolverChoice(kind))
    vals = self_block_influences(ctx)
    assert np.all(vals < 0)
    r = ar.residuals(ctx.model, ctx.instances)
    assert np.all(r != 0)


def test_timeinf_point_equals_mean_of_member_blocks():
    x = ar_series(7, 120)
    ctx = _ctx(x, 5)
    test = ctx.instances[30]
    for t in range(len(x)):
        members = naive_members(t, ctx.instances.target_indices, 5)
        ref = np.mean([influence_block(ctx, ctx.instances[j], test) for j in members])
        assert timeinf_point(ctx, t, test) == pytest.approx(ref, rel=1e-12, abs=1e-300)


def test_timeinf_point_singleton_neighborhood():
    x = ar_series(8, 60)
    ctx = _ctx(x, 4, stride=60)
    assert len(ctx.instances) == 1
    only = ctx.instances[0]
    test = ArInstance(10, x[9:5:-1], x[10])
    assert timeinf_point(ctx, 2, test) == influence_block(ctx, only, test)
    with pytest.raises(NotCoveredError):
        timeinf_point(ctx, 59, test)


def test_noiseless_series_scores_zero():
    ctx = _ctx(_noiseless(80), 2, ridge=0.0)
    s = self_influence_series(ctx)
    assert np.all(np.abs(s.scores) < 1e-20)
    test = ctx.instances[5]
    assert abs(timeinf_point(ctx, 40, test)) < 1e-20


def test_self_influence_series_matches_uncached_double_loop():
    x = ar_series(9, 150)
    ctx = _ctx(x, 6)
    uncached = _ctx(x, 6, cache=False)
    assert uncached.cached_ihvp_grads is None
    s = self_influence_series(ctx)
    for t in range(len(x)):
        members = naive_members(t, ctx.instances.target_indices, 6)
        vals = [influence_block(uncached, uncached.instances[j], uncached.instances[j]) for j in members]
        assert s.scores[t] == pytest.approx(np.mean(vals), rel=1e-12)
        assert s.coverage[t] == len(members)
    assert s.meta["method"] == "self_influence"
    assert s.meta["block_len"] == 6 and s.meta["stride"] == 1 and s.meta["solver"] == "direct"


def test_cached_and_uncached_agree():
    x = ar_series(10, 200)
    c1 = _ctx(x, 7)
    c0 = _ctx(x, 7, cache=False)
    for j in (0, 50, 190):
        np.testing.assert_allclose(c1.ihvp_grad(j), c0.ihvp_grad(j), rtol=1e-12)


def test_uncovered_points_flagged_with_large_stride():
    ctx = _ctx(ar_series(11, 100), 3, stride=10)
    s = self_influence_series(ctx)
    assert np.all(np.isnan(s.scores[s.coverage == 0]))
    assert np.all(np.isfinite(s.scores[s.coverage > 0]))
    assert (s.coverage == 0).any()


def test_test_influence_series():
    x = ar_series(12, 400)
    ctx = _ctx(x[:300], 4)
    test_set = make_instances(TimeSeries(x[300:]), 0, WindowSpec(4))
    s = series_test_influence(ctx, test_set)
    # mean of timeinf_point over test instances
    for t in (0, 3, 150, 299):
        ref = np.mean([timeinf_point(ctx, t, inst) for inst in test_set])
        assert s.scores[t] == pytest.approx(ref, rel=1e-10)
    # single test instance reduces to timeinf_point
    one = test_set.subset([7])
    s1 = series_test_influence(ctx, one)
    for t in (0, 100, 299):
        assert s1.scores[t] == pytest.approx(timeinf_point(ctx, t, one[0]), rel=1e-12)


def test_test_influence_zero_residual_test_set():
    ctx = _ctx(ar_series(13, 200), 2)
    th = ctx.model.theta
    z = np.zeros(30)
    z[0], z[1] = 1.0, 0.4
    for t in range(2, 30):
        z[t] = th[0] * z[t - 1] + th[1] * z[t - 2]
    test_set = make_instances(TimeSeries(z), 0, WindowSpec(2))
    s = series_test_influence(ctx, test_set)
    assert np.all(np.abs(s.scores) < 1e-12)


def test_test_influence_matches_mixture_upweight_oracle():
    x = ar_series(14, 500)
    m = 5
    ctx = _ctx(x[:400], m)
    test_set = make_instances(TimeSeries(x[400:]), 0, WindowSpec(m))
    s = series_test_influence(ctx, test_set)
    X, y = ctx.instances.covariates, ctx.instances.targets
    Xt, yt = test_set.covariates, test_set.targets
    mean_test_loss = lambda th: float(np.mean((yt - Xt @ th) ** 2))
    for t in (2, 120, 397):
        rows = naive_members(t, ctx.instances.target_indices, m)
        fd = upweight_derivative(X, y, ctx.model.ridge, rows, mean_test_loss, central=True)
        assert s.scores[t] == pytest.approx(fd, rel=1e-3)


def test_block_influence_matrix():
    x = ar_series(15, 300)
    ctx = _ctx(x[:200], 3)
    val = make_instances(TimeSeries(x[200:]), 0, WindowSpec(3))
    blocks = [np.arange(0, 20), np.arange(20, 40), np.array([], dtype=int)]
    got = block_influence_matrix(ctx, val, blocks)
    for k in (0, 1):
        ref = np.mean([[influence_block(ctx, ctx.instances[i], v) for v in val] for i in blocks[k]])
        assert got[k] == pytest.approx(ref, rel=1e-10)
    assert np.isnan(got[2])
    # one block, one validation instance
    one = block_influence_matrix(ctx, val.subset([4]), [np.arange(5, 9)])
    ref = np.mean([influence_block(ctx, ctx.instances[i], val[4]) for i in range(5, 9)])
    assert one[0] == pytest.approx(ref, rel=1e-12)
    P = pairwise_influence(ctx, val)
    assert P.shape == (len(ctx.instances), len(val))
    assert P[3, 8] == pytest.approx(influence_block(ctx, ctx.instances[3], val[8]), rel=1e-12)


def test_block_influence_duplicated_blocks_equal():
    base = ar_series(16, 60)
    x = np.concatenate([base, base, base])
    ctx = _ctx(x, 3)
    val = make_instances(TimeSeries(ar_series(17, 80)), 0, WindowSpec(3))
    # rows whose windows lie entirely inside the first and second copies
    t = ctx.instances.target_indices
    a = np.flatnonzero((t >= 10) & (t < 50))
    b = np.flatnonzero((t >= 70) & (t < 110))
    got = block_influence_matrix(ctx, val, [a, b])
    assert got[0] == pytest.approx(got[1], rel=1e-12)


def test_block_influence_zero_residual_validation():
    ctx = _ctx(ar_series(18, 100), 1)
    th = ctx.model.theta[0]
    z = 2.0 * th ** np.arange(20)
    val = make_instances(TimeSeries(z), 0, WindowSpec(1))
    got = block_influence_matrix(ctx, val, [np.arange(10), np.arange(10, 30)])
    assert np.all(np.abs(got) < 1e-12)


def test_cg_matches_direct_self_influence():
    x = ar_series(19, 600)
    d = self_influence_series(_ctx(x, 30))
    c = self_influence_series(_ctx(x, 30, solver=SolverChoice("conjugate_gradient")))
    np.testing.assert_allclose(c.scores, d.scores, rtol=1e-6)
