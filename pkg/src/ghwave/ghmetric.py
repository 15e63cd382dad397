"""Gromov-Hausdorff machinery for finite metric spaces and sampled flows.

Convention: an eps-isometry is a (not necessarily injective) map whose metric
distortion sup |d_X(a,b) - d_Y(fa,fb)| and covering deficit
sup_y min_a d_Y(y, fa) are both strictly below eps, and the distance between
two spaces is the infimum of eps admitting such maps in BOTH directions.  No
factor 1/2 is applied, so values can be up to twice the textbook ones; the
two-point-versus-one-point example {0} vs {0,3} evaluates to 3 here.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

__all__ = [
    "FiniteMetricSpace",
    "MapCandidate",
    "GHEstimate",
    "FlowSample",
    "Reparametrization",
    "DynamicalEstimate",
    "SizeCapError",
    "distortion",
    "coverage_deficit",
    "is_eps_isometry",
    "gh_exact",
    "gh_lower",
    "gh_upper",
    "dgh_dynamical",
    "EXACT_SIZE_CAP",
]

Array = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.intp]

EXACT_SIZE_CAP = 7


class SizeCapError(ValueError):
    """Exhaustive search requested beyond the exponential-cost cap."""


@dataclass
class FiniteMetricSpace:
    """Finite metric space given by its distance matrix."""

    d: Array
    validate: bool = True

    def __post_init__(self) -> None:
        self.d = np.asarray(self.d, dtype=float)
        if self.d.ndim != 2 or self.d.shape[0] != self.d.shape[1]:
            raise ValueError("distance matrix must be square")
        if self.validate:
            if not np.all(np.isfinite(self.d)):
                raise ValueError("distances must be finite")
            if np.any(self.d < 0):
                raise ValueError("distances must be nonnegative")
            if np.any(np.abs(np.diag(self.d)) > 1e-12):
                raise ValueError("diagonal must vanish")
            if np.max(np.abs(self.d - self.d.T)) > 1e-9 * max(1.0, self.d.max()):
                raise ValueError("distance matrix must be symmetric")
            lhs = self.d[:, :, None]
            rhs = self.d[:, None, :] + self.d[None, :, :]
            if np.max(lhs - rhs) > 1e-9 * max(1.0, self.d.max()):
                raise ValueError("triangle inequality violated")
        self.d = 0.5 * (self.d + self.d.T)
        np.fill_diagonal(self.d, 0.0)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def diameter(self) -> float:
        return float(self.d.max(initial=0.0))

    @staticmethod
    def from_points(points: Array) -> "FiniteMetricSpace":
        p = np.atleast_2d(np.asarray(points, dtype=float))
        diff = p[:, None, :] - p[None, :, :]
        return FiniteMetricSpace(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))


@dataclass(frozen=True)
class MapCandidate:
    """Index map X -> Y with its distortion and covering deficit."""

    assignment: IntArray
    distortion: float
    deficit: float

    @property
    def objective(self) -> float:
        return max(self.distortion, self.deficit)


def distortion(dx: Array, dy: Array, m: IntArray) -> float:
    """sup_{a,b} |d_X(a,b) - d_Y(m(a), m(b))|."""
    return float(np.abs(dx - dy[np.ix_(m, m)]).max(initial=0.0))


def coverage_deficit(dy: Array, m: IntArray) -> float:
    """sup_y min_a d_Y(y, m(a))."""
    return float(dy[:, m].min(axis=1).max(initial=0.0))


def is_eps_isometry(dx: Array, dy: Array, m: IntArray, eps: float) -> bool:
    """Strict check: distortion < eps and deficit < eps."""
    return distortion(dx, dy, m) < eps and coverage_deficit(dy, m) < eps


def _one_sided_exact(dx: Array, dy: Array) -> tuple[float, IntArray]:
    """min over all maps X -> Y of max(distortion, deficit), by enumeration.

    Enumerates the n_Y^n_X assignments in mixed-radix chunks so the working
    arrays stay modest even at the size cap.
    """
    nx, ny = dx.shape[0], dy.shape[0]
    total = ny**nx
    best_val = np.inf
    best_m = np.zeros(nx, dtype=np.intp)
    chunk = max(1, min(total, 200_000 // max(nx, 1)))
    radices = ny ** np.arange(nx, dtype=np.int64)
    for start in range(0, total, chunk):
        ids = np.arange(start, min(start + chunk, total), dtype=np.int64)
        maps = (ids[:, None] // radices[None, :]) % ny  # (c, nx)
        dis = np.abs(dx[None, :, :] - dy[maps[:, :, None], maps[:, None, :]]).max(axis=(1, 2))
        dfc = dy[:, maps].min(axis=2).max(axis=0)  # dy[:, maps]: (ny, c, nx)
        val = np.maximum(dis, dfc)
        k = int(np.argmin(val))
        if val[k] < best_val:
            best_val = float(val[k])
            best_m = maps[k].astype(np.intp)
    return best_val, best_m


def gh_exact(X: FiniteMetricSpace, Y: FiniteMetricSpace) -> float:
    """Exhaustive two-sided objective; raises SizeCapError above the cap.

    The eps-isometry pair decouples: the smallest workable eps equals the
    larger of the two one-sided minima of max(distortion, deficit).
    """
    if max(X.n, Y.n) > EXACT_SIZE_CAP:
        raise SizeCapError(
            f"exact search capped at {EXACT_SIZE_CAP} points "
            f"(got {X.n} and {Y.n}); use gh_upper"
        )
    fwd, _ = _one_sided_exact(X.d, Y.d)
    bwd, _ = _one_sided_exact(Y.d, X.d)
    return max(fwd, bwd)


def gh_lower(X: FiniteMetricSpace, Y: FiniteMetricSpace) -> float:
    """Diameter-gap bound, valid for the no-half convention."""
    return abs(X.diameter() - Y.diameter())


def _greedy_init(dx: Array, dy: Array) -> IntArray:
    """Row-statistic matching: sort both sides by eccentricity profile."""
    nx = dx.shape[0]
    sx = np.lexsort((dx.mean(axis=1), dx.max(axis=1)))
    sy = np.lexsort((dy.mean(axis=1), dy.max(axis=1)))
    m = np.empty(nx, dtype=np.intp)
    ny = dy.shape[0]
    for rank, a in enumerate(sx):
        m[a] = sy[min(int(round(rank * (ny - 1) / max(nx - 1, 1))), ny - 1)]
    return m


def _descend(dx: Array, dy: Array, m: IntArray, rng: np.random.Generator, kicks: int) -> tuple[float, IntArray]:
    """Best-improvement coordinate descent on max(distortion, deficit).

    Each pass scores every single-coordinate move (a -> t) exactly and takes
    the best strict improvement; after convergence the map is kicked (a
    random fraction of coordinates reassigned) and descent repeats.
    """
    nx, ny = dx.shape[0], dy.shape[0]
    best = m.copy()
    best_val = max(distortion(dx, dy, best), coverage_deficit(dy, best))
    cur = best.copy()
    n_kick = max(1, -(-nx // 8))
    for phase in range(kicks + 1):
        if phase > 0:
            cur = best.copy()
            coords = rng.choice(nx, size=min(n_kick, nx), replace=False)
            cur[coords] = rng.integers(0, ny, size=coords.size)
        while True:
            cur_val = max(distortion(dx, dy, cur), coverage_deficit(dy, cur))
            # T[a, t, b] = |dx[a, b] - dy[t, cur[b]]|, contribution of pair
            # (a, b) if coordinate a moved to t; self-pairs removed.
            T = np.abs(dx[:, None, :] - dy[np.newaxis, :, :][:, :, cur])
            for a in range(nx):
                T[a, :, a] = 0.0
            dis_move = T.max(axis=2)  # (nx, ny): worst pair involving a
            # worst pair NOT involving a: exclude row/col a from base matrix
            base = np.abs(dx - dy[np.ix_(cur, cur)])
            base_excl = _excl_max(base)
            dis_after = np.maximum(dis_move, base_excl[:, None])
            dfc_after = _deficit_after_move(dy, cur)
            val_after = np.maximum(dis_after, dfc_after)
            a_best, t_best = np.unravel_index(np.argmin(val_after), val_after.shape)
            if val_after[a_best, t_best] < cur_val - 1e-15:
                cur[a_best] = t_best
            else:
                break
        cur_val = max(distortion(dx, dy, cur), coverage_deficit(dy, cur))
        if cur_val < best_val:
            best_val = cur_val
            best = cur.copy()
    return best_val, best


def _excl_max(base: Array) -> Array:
    """For each index a: max of base over pairs (i, j) with i != a and j != a."""
    n = base.shape[0]
    if n <= 2:
        return np.zeros(n)
    out = np.empty(n)
    flat = base.copy()
    for a in range(n):
        saved_row = flat[a].copy()
        saved_col = flat[:, a].copy()
        flat[a] = -np.inf
        flat[:, a] = -np.inf
        out[a] = flat.max()
        flat[a] = saved_row
        flat[:, a] = saved_col
    return np.maximum(out, 0.0)


def _deficit_after_move(dy: Array, cur: IntArray) -> Array:
    """(nx, ny) matrix of covering deficits after moving coordinate a to t.

    Uses the two-smallest trick: for each y the min over the image is either
    the global min (if not attained only at the moved coordinate) or the
    second-smallest.
    """
    nx = cur.shape[0]
    D = dy[:, cur]  # (ny, nx) distances from every y to current image
    order = np.argsort(D, axis=1)
    i0 = order[:, 0]
    m0 = D[np.arange(D.shape[0]), i0]
    if nx >= 2:
        m1 = D[np.arange(D.shape[0]), order[:, 1]]
    else:
        m1 = np.full(D.shape[0], np.inf)
    # rest[y, a]: min over image excluding coordinate a
    rest = np.where(np.arange(nx)[None, :] == i0[:, None], m1[:, None], m0[:, None])
    # after moving a to t, min over image = min(rest[y, a], dy[y, t])
    after = np.minimum(rest[:, :, None], dy[:, None, :])  # (ny, nx, nt)
    return after.max(axis=0)  # (nx, nt)


@dataclass
class GHEstimate:
    """Two-sided upper estimate with the certifying maps."""

    value: float
    forward: MapCandidate
    backward: MapCandidate
    restarts: int
    seed: int
    candidates_forward: list[MapCandidate] = field(default_factory=list)
    candidates_backward: list[MapCandidate] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "value": self.value,
                "forward": {
                    "assignment": self.forward.assignment.tolist(),
                    "distortion": self.forward.distortion,
                    "deficit": self.forward.deficit,
                },
                "backward": {
                    "assignment": self.backward.assignment.tolist(),
                    "distortion": self.backward.distortion,
                    "deficit": self.backward.deficit,
                },
                "restarts": self.restarts,
                "seed": self.seed,
            },
            sort_keys=True,
        )


def _one_sided_search(
    dx: Array, dy: Array, restarts: int, seed: int, dirflag: int, threads: int
) -> list[MapCandidate]:
    """Multistart descent X -> Y; returns per-restart bests, deterministically."""
    nx, ny = dx.shape[0], dy.shape[0]

    def run(r: int) -> tuple[float, int, IntArray]:
        rng = np.random.default_rng(np.random.SeedSequence([seed, r, dirflag]))
        if r == 0 and nx == ny:
            m0 = np.arange(nx, dtype=np.intp)  # index-matched pairs: start at identity
        elif r <= 1:
            m0 = _greedy_init(dx, dy)
        else:
            m0 = rng.integers(0, ny, size=nx).astype(np.intp)
        val, m = _descend(dx, dy, m0, rng, kicks=2)
        return val, r, m

    if threads > 1 and restarts > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, range(restarts)))
    else:
        results = [run(r) for r in range(restarts)]
    results.sort(key=lambda t: (t[0], t[1]))
    out = []
    seen: set[bytes] = set()
    for val, _r, m in results:
        key = m.tobytes()
        if key in seen:
            continue
        seen.add(key)
        out.append(MapCandidate(m, distortion(dx, dy, m), coverage_deficit(dy, m)))
    return out


def gh_upper(
    X: FiniteMetricSpace,
    Y: FiniteMetricSpace,
    budget: int = 32,
    seed: int = 0,
    threads: int = 1,
) -> GHEstimate:
    """Seeded multistart estimate of the two-sided objective.

    Restart 0 uses a deterministic greedy initialization, the rest are random;
    increasing `budget` with the same seed never worsens the value.  With the
    same seed the result is identical for any thread count.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    fwd = _one_sided_search(X.d, Y.d, budget, seed, 1, threads)
    bwd = _one_sided_search(Y.d, X.d, budget, seed, 2, threads)
    value = max(fwd[0].objective, bwd[0].objective)
    return GHEstimate(
        value=value,
        forward=fwd[0],
        backward=bwd[0],
        restarts=budget,
        seed=seed,
        candidates_forward=fwd[:8],
        candidates_backward=bwd[:8],
    )


# ---------------------------------------------------------------------------
# dynamical comparison


@dataclass
class FlowSample:
    """A sampled set with short-time flow data inside a shared universe.

    `universe_d2` holds squared distances for every enriched point (base
    points of all compared samples plus their flow images, in one common
    metric); `base_idx` are this sample's base points, `traj_idx[i, j]` the
    universe index of the j-th flow image of base point i (time j/m), with
    traj_idx[:, 0] == base_idx.
    """

    universe_d2: Array
    base_idx: IntArray
    traj_idx: IntArray
    times: Array

    def __post_init__(self) -> None:
        self.base_idx = np.asarray(self.base_idx, dtype=np.intp)
        self.traj_idx = np.asarray(self.traj_idx, dtype=np.intp)
        if self.traj_idx.shape[0] != self.base_idx.shape[0]:
            raise ValueError("traj_idx rows must match base points")
        if not np.array_equal(self.traj_idx[:, 0], self.base_idx):
            raise ValueError("flow at time 0 must be the base point itself")
        if self.times.shape[0] != self.traj_idx.shape[1]:
            raise ValueError("times must match flow columns")

    @property
    def n(self) -> int:
        return self.base_idx.shape[0]

    def metric(self) -> FiniteMetricSpace:
        d2 = self.universe_d2[np.ix_(self.base_idx, self.base_idx)]
        return FiniteMetricSpace(np.sqrt(np.maximum(d2, 0.0)), validate=False)


@dataclass(frozen=True)
class Reparametrization:
    """Linear-pencil time change alpha(t) = t + s * min(t, 1-t) * rho.

    Monotone on [0,1] whenever |s * rho| < 1, fixes the endpoints, and
    deviates from the identity by at most |s| * rho / 2.
    """

    s: float
    rho: float = 1.0

    def __post_init__(self) -> None:
        if abs(self.s * self.rho) >= 1.0:
            raise ValueError("|s * rho| must be below 1 for monotonicity")

    def __call__(self, t: Array) -> Array:
        t = np.asarray(t, dtype=float)
        return t + self.s * np.minimum(t, 1.0 - t) * self.rho

    def max_deviation(self) -> float:
        return abs(self.s) * self.rho / 2.0


def _interp_flow_d2(
    d2: Array, traj: IntArray, times: Array, query_t: Array, targets: IntArray
) -> Array:
    """Squared distances from flow states at arbitrary times to target points.

    Flow states between stored samples are norm-interpolated: for p on the
    segment [a, b] at weight w, d^2(p, q) = (1-w) d^2(a,q) + w d^2(b,q)
    - w(1-w) d^2(a,b), exact when the metric comes from a quadratic form.
    Returns (n_points, n_query, n_targets).
    """
    qt = np.clip(query_t, times[0], times[-1])
    j = np.clip(np.searchsorted(times, qt, side="right") - 1, 0, len(times) - 2)
    w = (qt - times[j]) / (times[j + 1] - times[j])
    a = traj[:, j]  # (n, q)
    b = traj[:, j + 1]
    d2a = d2[a[:, :, None], targets[None, None, :]]
    d2b = d2[b[:, :, None], targets[None, None, :]]
    d2ab = d2[a, b][:, :, None]
    w3 = w[None, :, None]
    return (1.0 - w3) * d2a + w3 * d2b - w3 * (1.0 - w3) * d2ab


_S_GRID = np.linspace(-0.95, 0.95, 21)
_S_GRID = _S_GRID[np.argsort(np.abs(_S_GRID), kind="stable")]


def _commutation_eps(fx: FlowSample, fy: FlowSample, m: IntArray, rho: float) -> float:
    """Best achievable max over base points of max(flow mismatch, time shift).

    For each x independently: min over the s grid of
    max( max_j d(Phi^X(alpha(t_j)) x, Phi^Y(t_j) m(x)), |s| rho / 2 ),
    where the mismatch is evaluated in the shared universe and the X flow is
    read at reparametrized times through norm interpolation between stored
    samples (exact for quadratic-form metrics).
    """
    ty = fy.times
    n = fx.n
    d2 = fx.universe_d2
    best = np.full(n, np.inf)
    tgt = fy.traj_idx[m]  # (n, q)
    for s in _S_GRID:
        alpha = Reparametrization(s, rho)
        qt = np.clip(alpha(ty), fx.times[0], fx.times[-1])
        j = np.clip(np.searchsorted(fx.times, qt, side="right") - 1, 0, len(fx.times) - 2)
        w = (qt - fx.times[j]) / (fx.times[j + 1] - fx.times[j])
        a = fx.traj_idx[:, j]  # (n, q)
        b = fx.traj_idx[:, j + 1]
        d2a = d2[a, tgt]
        d2b = d2[b, tgt]
        d2ab = d2[a, b]
        wv = w[None, :]
        mism2 = (1 - wv) * d2a + wv * d2b - wv * (1 - wv) * d2ab
        mism = np.sqrt(np.maximum(mism2.max(axis=1), 0.0))
        cand = np.maximum(mism, alpha.max_deviation())
        best = np.minimum(best, cand)
    return float(best.max(initial=0.0))


@dataclass
class DynamicalEstimate:
    """Certified dynamical estimate: value, per-direction data, witnesses."""

    value: float
    forward: MapCandidate
    backward: MapCandidate
    forward_flow_eps: float
    backward_flow_eps: float
    certified: bool


def dgh_dynamical(
    fx: FlowSample,
    fy: FlowSample,
    rho: float = 1.0,
    budget: int = 32,
    seed: int = 0,
    threads: int = 1,
) -> DynamicalEstimate:
    """Dynamical distance upper estimate between two sampled flows.

    Searches static candidate maps per direction (multistart descent on the
    base metrics), then scores each candidate by the larger of its static
    objective and its flow-commutation epsilon (optimal per-point time
    reparametrization within |alpha(t) - t| <= rho/2).  The returned value is
    the worse direction's best total; `certified` re-verifies both witnesses
    at value + 1e-12.
    """
    X = fx.metric()
    Y = fy.metric()
    fwd_cands = _one_sided_search(X.d, Y.d, budget, seed, 1, threads)[:8]
    bwd_cands = _one_sided_search(Y.d, X.d, budget, seed, 2, threads)[:8]

    def best_total(cands: list[MapCandidate], a: FlowSample, b: FlowSample) -> tuple[float, MapCandidate, float]:
        best_v, best_c, best_f = np.inf, cands[0], np.inf
        for c in cands:
            fe = _commutation_eps(a, b, c.assignment, rho)
            tot = max(c.objective, fe)
            if tot < best_v - 1e-15:
                best_v, best_c, best_f = tot, c, fe
        return best_v, best_c, best_f

    fv, fc, fe = best_total(fwd_cands, fx, fy)
    bv, bc, be = best_total(bwd_cands, fy, fx)
    value = max(fv, bv)
    eps = value + 1e-12
    cert = (
        is_eps_isometry(X.d, Y.d, fc.assignment, eps)
        and is_eps_isometry(Y.d, X.d, bc.assignment, eps)
        and fe < eps
        and be < eps
    )
    return DynamicalEstimate(value, fc, bc, fe, be, cert)
