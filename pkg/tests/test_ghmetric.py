"""Distance estimators on finite metric spaces and sampled flows.

Frozen oracles (worked by hand from the eps-isometry definition, both maps'
distortion and covering deficit strictly below eps, no 1/2 factor):
  {0, 2} vs {0, 3}  -> 1   (match the endpoints; the gap mismatch is 1)
  {0}    vs {0, 3}  -> 3   (the single point leaves a covering deficit of 3)
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghwave.ghmetric import (
    EXACT_SIZE_CAP,
    FiniteMetricSpace,
    FlowSample,
    Reparametrization,
    SizeCapError,
    coverage_deficit,
    dgh_dynamical,
    distortion,
    gh_exact,
    gh_lower,
    gh_upper,
    is_eps_isometry,
    _interp_flow_d2,
)


def _line_space(*points):
    p = np.asarray(points, dtype=float)
    return FiniteMetricSpace(np.abs(p[:, None] - p[None, :]))


def _random_space(rng, n, scale=1.0):
    pts = rng.standard_normal((n, 3)) * scale
    d = np.sqrt(((pts[:, None] - pts[None, :]) ** 2).sum(-1))
    return FiniteMetricSpace(d)


def test_frozen_two_point_oracle():
    assert gh_exact(_line_space(0, 2), _line_space(0, 3)) == pytest.approx(1.0, abs=1e-12)


def test_frozen_point_vs_pair_oracle():
    assert gh_exact(_line_space(0), _line_space(0, 3)) == pytest.approx(3.0, abs=1e-12)


def test_exact_symmetric():
    rng = np.random.default_rng(0)
    X = _random_space(rng, 5)
    Y = _random_space(rng, 6)
    assert gh_exact(X, Y) == pytest.approx(gh_exact(Y, X), rel=1e-12)


def test_exact_zero_on_permuted_copy():
    rng = np.random.default_rng(1)
    X = _random_space(rng, 6)
    perm = rng.permutation(6)
    Y = FiniteMetricSpace(X.d[np.ix_(perm, perm)])
    assert gh_exact(X, Y) <= 1e-12


def test_size_cap_raises():
    rng = np.random.default_rng(2)
    X = _random_space(rng, EXACT_SIZE_CAP + 1)
    with pytest.raises(SizeCapError):
        gh_exact(X, X)


def test_gh_lower_is_diameter_gap():
    X = _line_space(0, 1, 5)
    Y = _line_space(0, 2)
    assert gh_lower(X, Y) == pytest.approx(3.0)


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_lower_never_exceeds_exact(seed):
    rng = np.random.default_rng(seed)
    X = _random_space(rng, int(rng.integers(1, 6)))
    Y = _random_space(rng, int(rng.integers(1, 6)))
    assert gh_lower(X, Y) <= gh_exact(X, Y) + 1e-12


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_upper_never_below_exact(seed):
    rng = np.random.default_rng(seed)
    X = _random_space(rng, int(rng.integers(2, 7)))
    Y = _random_space(rng, int(rng.integers(2, 7)))
    est = gh_upper(X, Y, budget=24, seed=seed)
    assert est.value >= gh_exact(X, Y) - 1e-12


@given(st.floats(0.1, 10.0), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_exact_scales_with_the_metric(sigma, seed):
    rng = np.random.default_rng(seed)
    X = _random_space(rng, 4)
    Y = _random_space(rng, 5)
    Xs = FiniteMetricSpace(X.d * sigma)
    Ys = FiniteMetricSpace(Y.d * sigma)
    assert gh_exact(Xs, Ys) == pytest.approx(sigma * gh_exact(X, Y), rel=1e-9, abs=1e-12)


def test_upper_budget_monotone():
    rng = np.random.default_rng(3)
    X = _random_space(rng, 12)
    Y = _random_space(rng, 12)
    vals = [gh_upper(X, Y, budget=b, seed=5).value for b in (2, 8, 32)]
    assert vals[0] >= vals[1] >= vals[2]


def test_upper_thread_count_invariant():
    rng = np.random.default_rng(4)
    X = _random_space(rng, 10)
    Y = _random_space(rng, 10)
    a = gh_upper(X, Y, budget=16, seed=9, threads=1)
    b = gh_upper(X, Y, budget=16, seed=9, threads=4)
    assert a.value == b.value
    assert np.array_equal(a.forward.assignment, b.forward.assignment)


def test_upper_witnesses_verify():
    rng = np.random.default_rng(6)
    X = _random_space(rng, 9)
    Y = _random_space(rng, 9)
    est = gh_upper(X, Y, budget=16, seed=2)
    eps = est.value + 1e-12
    assert is_eps_isometry(X.d, Y.d, est.forward.assignment, eps)
    assert is_eps_isometry(Y.d, X.d, est.backward.assignment, eps)


def test_distortion_and_deficit_hand_values():
    dx = _line_space(0, 2).d
    dy = _line_space(0, 3).d
    m = np.array([0, 1], dtype=np.intp)
    assert distortion(dx, dy, m) == 1.0
    assert coverage_deficit(dy, m) == 0.0
    m_const = np.array([0, 0], dtype=np.intp)
    assert distortion(dx, dy, m_const) == 2.0
    assert coverage_deficit(dy, m_const) == 3.0


def test_metric_space_validation():
    bad = np.array([[0.0, 1.0], [2.0, 0.0]])
    with pytest.raises(ValueError):
        FiniteMetricSpace(bad)
    skew = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 3.0], [1.0, 3.0, 0.0]])
    with pytest.raises(ValueError, match="triangle"):
        FiniteMetricSpace(skew)


# --- reparametrizations ---------------------------------------------------------

@given(st.floats(-0.9, 0.9), st.floats(0.05, 1.0))
@settings(max_examples=50, deadline=None)
def test_reparametrization_invariants(s, rho):
    alpha = Reparametrization(s, rho)
    t = np.linspace(0.0, 1.0, 101)
    out = alpha(t)
    assert out[0] == 0.0
    assert out[-1] == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.diff(out) > 0)
    assert np.abs(out - t).max() <= alpha.max_deviation() + 1e-15


def test_reparametrization_rejects_fold():
    with pytest.raises(ValueError):
        Reparametrization(1.2, 1.0)


# --- flow samples ----------------------------------------------------------------

def _segment_universe():
    # four universe points on a line: two base points and their images
    pts = np.array([0.0, 1.0, 0.25, 1.5])
    d2 = (pts[:, None] - pts[None, :]) ** 2
    return pts, d2


def test_interp_flow_d2_matches_segment_geometry():
    pts, d2 = _segment_universe()
    traj = np.array([[0, 2], [1, 3]], dtype=np.intp)  # 0 -> 0.25, 1 -> 1.5
    times = np.array([0.0, 1.0])
    q = np.array([0.5])
    out = _interp_flow_d2(d2, traj, times, q, np.array([0], dtype=np.intp))
    # halfway along 0 -> 0.25 is 0.125; distance^2 to the point 0.0
    assert out[0, 0, 0] == pytest.approx(0.125**2, rel=1e-12)
    # halfway along 1 -> 1.5 is 1.25
    assert out[1, 0, 0] == pytest.approx(1.25**2, rel=1e-12)


def _make_flow(points_t0, points_t1, all_pts=None):
    base = np.asarray(points_t0, dtype=float)
    img = np.asarray(points_t1, dtype=float)
    pts = np.concatenate([base, img]) if all_pts is None else np.asarray(all_pts)
    d2 = (pts[:, None] - pts[None, :]) ** 2
    n = len(base)
    traj = np.column_stack([np.arange(n), np.arange(n) + n]).astype(np.intp)
    return FlowSample(d2, np.arange(n, dtype=np.intp), traj, np.array([0.0, 1.0]))


def test_flow_sample_validates_base_column():
    pts = np.array([0.0, 1.0, 2.0, 3.0])
    d2 = (pts[:, None] - pts[None, :]) ** 2
    bad_traj = np.array([[2, 3], [1, 0]], dtype=np.intp)
    with pytest.raises(ValueError):
        FlowSample(d2, np.array([0, 1], dtype=np.intp), bad_traj, np.array([0.0, 1.0]))


def test_dgh_identical_flows_is_zero():
    fx = _make_flow([0.0, 1.0, 2.5], [0.1, 1.1, 2.4])
    est = dgh_dynamical(fx, fx, budget=8, seed=0)
    assert est.value <= 1e-9
    assert est.certified


def test_dgh_detects_metric_dilation():
    # same flow pattern, second copy dilated by sigma: no assignment can push
    # the distortion (hence the certified eps) below the diameter gap
    sigma = 1.3
    fx = _make_flow([0.0, 1.0, 2.0], [0.05, 1.0, 1.95])
    fy = _make_flow([0.0, sigma * 1.0, sigma * 2.0], [0.05, sigma, sigma * 1.9])
    est = dgh_dynamical(fx, fy, budget=16, seed=1)
    assert est.certified
    assert est.value >= (sigma - 1.0) * 2.0 - 1e-9


def test_dgh_time_shift_absorbed_by_reparametrization():
    # Y runs the same unit-speed leftward drift as X but 10% behind; a time
    # change inside the allowed pencil absorbs it at the cost of the
    # deviation term |s| rho / 2
    x0 = np.array([0.0, 4.0, 8.0])
    fx = _make_flow(x0, x0 - 1.0)
    fy = _make_flow(x0, x0 - 0.9)
    est = dgh_dynamical(fx, fy, rho=1.0, budget=8, seed=0)
    assert est.certified
    assert est.value <= 0.1


def test_dgh_dominates_static_distance_and_certifies_both_orders():
    # flow agreement can only add constraints on top of the base metrics, so
    # the certified value never undercuts the exact static distance; the
    # candidate pools are direction-seeded, so the two call orders may return
    # different upper estimates but both must certify
    rng = np.random.default_rng(8)
    a0 = rng.uniform(0, 3, 4)
    b0 = rng.uniform(0, 3, 4)
    fx = _make_flow(a0, a0 * 0.9)
    fy = _make_flow(b0, b0 * 0.95)
    static = gh_exact(fx.metric(), fy.metric())
    e1 = dgh_dynamical(fx, fy, budget=16, seed=3)
    e2 = dgh_dynamical(fy, fx, budget=16, seed=3)
    assert e1.certified and e2.certified
    assert min(e1.value, e2.value) >= static - 1e-12
