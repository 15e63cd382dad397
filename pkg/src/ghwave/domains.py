"""Reference domains, C2 diffeomorphisms, and pullback coefficient fields.

A perturbed domain is the image h(Omega) of a reference interval or rectangle
under a C2 diffeomorphism h close to the identity.  Instead of meshing each
image domain, the wave problem on h(Omega) is pulled back to the reference
domain: the change of variables turns the Laplacian into a variable-coefficient
operator described pointwise by the Jacobian matrix H, its inverse-transpose
Hbar, and the Jacobian determinant.  Everything downstream (assembly, flows,
attractor comparisons) consumes the CoefficientField produced here.

All shipped map families are closed-form with hand-coded first and second
derivatives; see `FAMILIES`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt

__all__ = [
    "ReferenceDomain",
    "DiffeoMap",
    "PerturbationFamily",
    "CoefficientField",
    "SingularMapError",
    "OrientationError",
    "c2_distance",
    "default_c2_grid",
    "make_pullback",
    "deviation_norms",
    "transfer_state",
    "invert_map",
    "identity_map",
    "affine_map_1d",
    "scale_map",
    "bump_map_1d",
    "polybump_map_1d",
    "shear_map_2d",
    "radial_bump_map_2d",
    "make_family",
    "FAMILIES",
    "export_field_csv",
]

Array = npt.NDArray[np.float64]

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50


class SingularMapError(RuntimeError):
    """Newton inversion of a map failed to converge at some point."""


class OrientationError(RuntimeError):
    """A pullback Jacobian determinant was non-positive at some point."""


@dataclass(frozen=True)
class ReferenceDomain:
    """Interval (a, b) or axis-aligned rectangle (a, b) x (c, d)."""

    kind: str
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if self.kind not in ("interval", "rectangle"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        want = 1 if self.kind == "interval" else 2
        if len(self.bounds) != want:
            raise ValueError(f"{self.kind} needs {want} bound pair(s)")
        for lo, hi in self.bounds:
            if not hi > lo:
                raise ValueError(f"degenerate bounds ({lo}, {hi})")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> Array:
        return np.array([b[0] for b in self.bounds])

    @property
    def upper(self) -> Array:
        return np.array([b[1] for b in self.bounds])

    @staticmethod
    def interval(a: float, b: float) -> "ReferenceDomain":
        return ReferenceDomain("interval", ((float(a), float(b)),))

    @staticmethod
    def rectangle(a: float, b: float, c: float, d: float) -> "ReferenceDomain":
        return ReferenceDomain("rectangle", ((float(a), float(b)), (float(c), float(d))))


@dataclass
class DiffeoMap:
    """Closed-form C2 map with hand-coded Jacobian and Hessian.

    Callables are vectorized over a leading point axis:
      map_fn(x: (n, d))  -> (n, d)
      jac_fn(x: (n, d))  -> (n, d, d)
      hess_fn(x: (n, d)) -> (n, d, d, d)   (component, then two derivative axes)

    `delta` is the C2 distance to the identity on the default sample grid and
    must stay below 1 for the map to count as an admissible perturbation.
    `key` identifies the family and its parameters; two maps compare equal iff
    their keys and domains match.
    """

    domain: ReferenceDomain
    map_fn: Callable[[Array], Array]
    jac_fn: Callable[[Array], Array]
    hess_fn: Callable[[Array], Array]
    key: tuple = ()
    delta: float = field(default=float("nan"))

    def __call__(self, x: Array) -> Array:
        return self.map_fn(np.atleast_2d(np.asarray(x, dtype=float)))

    def jac(self, x: Array) -> Array:
        return self.jac_fn(np.atleast_2d(np.asarray(x, dtype=float)))

    def hess(self, x: Array) -> Array:
        return self.hess_fn(np.atleast_2d(np.asarray(x, dtype=float)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiffeoMap):
            return NotImplemented
        return self.key == other.key and self.domain == other.domain

    def check_derivatives(self, points: Array, rel_tol: float = 1e-6) -> float:
        """Finite-difference cross-check of jac/hess against the map.

        Returns the worst relative error; raises ValueError beyond rel_tol.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.domain.dim
        eps = 1e-5 * max(1.0, float(np.max(np.abs(self.domain.upper))))
        scale = max(1.0, float(np.max(np.abs(self.jac(pts)))))
        worst = 0.0
        for k in range(d):
            e = np.zeros(d)
            e[k] = eps
            fd_jac = (self(pts + e) - self(pts - e)) / (2 * eps)
            worst = max(worst, float(np.max(np.abs(fd_jac - self.jac(pts)[:, :, k]))) / scale)
            fd_hess = (self.jac(pts + e) - self.jac(pts - e)) / (2 * eps)
            hscale = max(1.0, float(np.max(np.abs(self.hess(pts)))))
            worst = max(
                worst,
                float(np.max(np.abs(fd_hess - self.hess(pts)[:, :, :, k]))) / hscale,
            )
        if worst > rel_tol:
            raise ValueError(f"derivative cross-check failed: rel err {worst:.3e} > {rel_tol:.1e}")
        return worst


def default_c2_grid(domain: ReferenceDomain, points_per_axis: int = 1001) -> Array:
    """Uniform sample grid used for C2 distances (1001 points per axis)."""
    axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in domain.bounds]
    if domain.dim == 1:
        return axes[0][:, None]
    gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def c2_distance(h: DiffeoMap, g: DiffeoMap, grid: Array) -> float:
    """sup over the grid of |h-g|_2 + |Dh-Dg|_F + |D2h-D2g|_F.

    The matrix and third-order deviations use the Frobenius norm.
    """
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    if pts.size == 0:
        raise ValueError("c2_distance needs a non-empty sample grid")
    if pts.shape[1] != h.domain.dim:
        raise ValueError("grid dimension does not match the maps")
    dv = h(pts) - g(pts)
    dj = h.jac(pts) - g.jac(pts)
    dh = h.hess(pts) - g.hess(pts)
    if not (np.all(np.isfinite(dv)) and np.all(np.isfinite(dj)) and np.all(np.isfinite(dh))):
        bad = np.argwhere(~np.isfinite(dv).all(axis=1))
        where = pts[bad[0, 0]] if bad.size else pts[0]
        raise ValueError(f"map evaluation produced non-finite values near {where}")
    total = (
        np.sqrt((dv**2).sum(axis=1))
        + np.sqrt((dj**2).sum(axis=(1, 2)))
        + np.sqrt((dh**2).sum(axis=(1, 2, 3)))
    )
    return float(total.max())


def _finalize(h: DiffeoMap, check_points: int = 13) -> DiffeoMap:
    """Compute delta, enforce admissibility, and cross-check derivatives."""
    grid_n = 1001 if h.domain.dim == 1 else 201  # 201^2 sample points in 2d
    grid = default_c2_grid(h.domain, grid_n)
    h.delta = c2_distance(h, identity_map(h.domain), grid)
    if not h.delta < 1.0:
        raise ValueError(f"map {h.key} has C2 distance {h.delta:.4f} >= 1 from the identity")
    dets = np.linalg.det(h.jac(grid))
    if np.any(np.abs(dets) < 1e-14):
        raise ValueError(f"map {h.key} has a singular Jacobian on the sample grid")
    rng = np.random.default_rng(0)
    lo, hi = h.domain.lower, h.domain.upper
    pts = lo + (hi - lo) * rng.random((check_points, h.domain.dim))
    h.check_derivatives(pts)
    return h


def identity_map(domain: ReferenceDomain) -> DiffeoMap:
    d = domain.dim

    def mp(x: Array) -> Array:
        return x.copy()

    def jc(x: Array) -> Array:
        return np.broadcast_to(np.eye(d), (x.shape[0], d, d)).copy()

    def hs(x: Array) -> Array:
        return np.zeros((x.shape[0], d, d, d))

    h = DiffeoMap(domain, mp, jc, hs, key=("identity",))
    h.delta = 0.0
    return h


def affine_map_1d(domain: ReferenceDomain, scale: float = 1.0, shift: float = 0.0) -> DiffeoMap:
    """h(x) = scale*x + shift on an interval; scale must be positive."""
    if domain.dim != 1:
        raise ValueError("affine_map_1d needs an interval domain")
    if scale <= 0:
        raise ValueError("scale must be positive")
    s, q = float(scale), float(shift)

    def mp(x: Array) -> Array:
        return s * x + q

    def jc(x: Array) -> Array:
        return np.full((x.shape[0], 1, 1), s)

    def hs(x: Array) -> Array:
        return np.zeros((x.shape[0], 1, 1, 1))

    return _finalize(DiffeoMap(domain, mp, jc, hs, key=("affine1d", s, q)))


def scale_map(domain: ReferenceDomain, *scales: float) -> DiffeoMap:
    """Coordinatewise h(x) = diag(scales) x in any dimension."""
    d = domain.dim
    if len(scales) != d:
        raise ValueError(f"need {d} scale factor(s)")
    if any(s <= 0 for s in scales):
        raise ValueError("scale factors must be positive")
    svec = np.array(scales, dtype=float)

    def mp(x: Array) -> Array:
        return x * svec

    def jc(x: Array) -> Array:
        return np.broadcast_to(np.diag(svec), (x.shape[0], d, d)).copy()

    def hs(x: Array) -> Array:
        return np.zeros((x.shape[0], d, d, d))

    return _finalize(DiffeoMap(domain, mp, jc, hs, key=("scale",) + tuple(svec)))


def bump_map_1d(
    domain: ReferenceDomain, amplitude: float, center: float = 0.5, width: float = 0.3
) -> DiffeoMap:
    """Gaussian bump h(x) = x + A exp(-(x-c)^2 / (2 w^2))."""
    if domain.dim != 1:
        raise ValueError("bump_map_1d needs an interval domain")
    if width <= 0:
        raise ValueError("width must be positive")
    a, c, w = float(amplitude), float(center), float(width)

    def g(x: Array) -> Array:
        return np.exp(-((x - c) ** 2) / (2 * w**2))

    def mp(x: Array) -> Array:
        return x + a * g(x)

    def jc(x: Array) -> Array:
        val = 1.0 + a * (-(x - c) / w**2) * g(x)
        return val[:, :, None]

    def hs(x: Array) -> Array:
        val = a * (((x - c) ** 2) / w**4 - 1.0 / w**2) * g(x)
        return val[:, :, None, None]

    return _finalize(DiffeoMap(domain, mp, jc, hs, key=("bump1d", a, c, w)))


def polybump_map_1d(domain: ReferenceDomain, amplitude: float) -> DiffeoMap:
    """Quartic bump h(x) = x + A * 16 xi^2 (1-xi)^2 with xi = (x-a)/(b-a)."""
    if domain.dim != 1:
        raise ValueError("polybump_map_1d needs an interval domain")
    a = float(amplitude)
    lo, hi = domain.bounds[0]
    L = hi - lo

    def mp(x: Array) -> Array:
        xi = (x - lo) / L
        return x + a * 16.0 * xi**2 * (1 - xi) ** 2

    def jc(x: Array) -> Array:
        xi = (x - lo) / L
        val = 1.0 + (a * 16.0 / L) * (2 * xi - 6 * xi**2 + 4 * xi**3)
        return val[:, :, None]

    def hs(x: Array) -> Array:
        xi = (x - lo) / L
        val = (a * 16.0 / L**2) * (2 - 12 * xi + 12 * xi**2)
        return val[:, :, None, None]

    return _finalize(DiffeoMap(domain, mp, jc, hs, key=("polybump1d", a)))


def shear_map_2d(domain: ReferenceDomain, k: float) -> DiffeoMap:
    """Shear h(x, y) = (x, y + k x)."""
    if domain.dim != 2:
        raise ValueError("shear_map_2d needs a rectangle domain")
    kk = float(k)

    def mp(x: Array) -> Array:
        out = x.copy()
        out[:, 1] += kk * x[:, 0]
        return out

    def jc(x: Array) -> Array:
        J = np.broadcast_to(np.array([[1.0, 0.0], [kk, 1.0]]), (x.shape[0], 2, 2)).copy()
        return J

    def hs(x: Array) -> Array:
        return np.zeros((x.shape[0], 2, 2, 2))

    return _finalize(DiffeoMap(domain, mp, jc, hs, key=("shear2d", kk)))


def radial_bump_map_2d(
    domain: ReferenceDomain,
    amplitude: float,
    center: tuple[float, float] = (0.5, 0.5),
    width: float = 0.3,
) -> DiffeoMap:
    """Radial bump h(p) = p + A exp(-|p-c|^2 / (2 w^2)) (p - c)."""
    if domain.dim != 2:
        raise ValueError("radial_bump_map_2d needs a rectangle domain")
    if width <= 0:
        raise ValueError("width must be positive")
    a, w = float(amplitude), float(width)
    c = np.array(center, dtype=float)

    def g(x: Array) -> Array:
        r2 = ((x - c) ** 2).sum(axis=1)
        return np.exp(-r2 / (2 * w**2))

    def mp(x: Array) -> Array:
        return x + a * g(x)[:, None] * (x - c)

    def jc(x: Array) -> Array:
        r = x - c
        gg = g(x)
        eye = np.eye(2)
        # D(g r) = g (I - r r^T / w^2)
        outer = r[:, :, None] * r[:, None, :] / w**2
        return eye[None, :, :] + a * gg[:, None, None] * (eye[None, :, :] - outer)

    def hs(x: Array) -> Array:
        r = x - c
        gg = g(x)
        eye = np.eye(2)
        n = x.shape[0]
        H = np.zeros((n, 2, 2, 2))
        outer = r[:, :, None] * r[:, None, :] / w**2
        base = eye[None, :, :] - outer  # (n, i, j)
        for kk in range(2):
            dk = np.zeros(2)
            dk[kk] = 1.0
            term1 = -(r[:, kk] / w**2)[:, None, None] * base
            term2 = -(dk[None, :, None] * r[:, None, :] + r[:, :, None] * dk[None, None, :]) / w**2
            H[:, :, :, kk] = a * gg[:, None, None] * (term1 + term2)
        return H

    return _finalize(DiffeoMap(domain, mp, jc, hs, key=("radial_bump2d", a, tuple(c), w)))


@dataclass
class PerturbationFamily:
    """Scalar family s -> h_s with h_0 = identity, plus a decreasing schedule."""

    domain: ReferenceDomain
    generator: Callable[[float], DiffeoMap]
    schedule: tuple[float, ...]
    name: str = ""

    def __post_init__(self) -> None:
        sched = tuple(float(s) for s in self.schedule)
        if any(s <= 0 for s in sched):
            raise ValueError("schedule entries must be positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("schedule must be strictly decreasing")
        self.schedule = sched

    def maps(self) -> list[DiffeoMap]:
        return [self.generator(s) for s in self.schedule]

    def base_map(self) -> DiffeoMap:
        return identity_map(self.domain)

    def validate(self) -> None:
        """Check that delta(h_s) is nonincreasing along the schedule."""
        deltas = [m.delta for m in self.maps()]
        for a, b in zip(deltas, deltas[1:]):
            if b > a + 1e-12:
                raise ValueError(f"family deltas increase along the schedule: {deltas}")


# family name -> (builder(domain, schedule, params) -> PerturbationFamily, param keys)
def _fam_bump1d(domain, schedule, params):
    center = float(params.get("center", 0.5))
    width = float(params.get("width", 0.3))
    return PerturbationFamily(
        domain, lambda s: bump_map_1d(domain, s, center, width), schedule, "bump1d"
    )


def _fam_polybump1d(domain, schedule, params):
    return PerturbationFamily(domain, lambda s: polybump_map_1d(domain, s), schedule, "polybump1d")


def _fam_scale1d(domain, schedule, params):
    return PerturbationFamily(
        domain, lambda s: affine_map_1d(domain, 1.0 + s, 0.0), schedule, "scale1d"
    )


def _fam_affine1d(domain, schedule, params):
    return PerturbationFamily(
        domain, lambda s: affine_map_1d(domain, 1.0, s), schedule, "affine1d"
    )


def _fam_shear2d(domain, schedule, params):
    return PerturbationFamily(domain, lambda s: shear_map_2d(domain, s), schedule, "shear2d")


def _fam_radial_bump2d(domain, schedule, params):
    cx = float(params.get("center_x", 0.5))
    cy = float(params.get("center_y", 0.5))
    width = float(params.get("width", 0.3))
    return PerturbationFamily(
        domain,
        lambda s: radial_bump_map_2d(domain, s, (cx, cy), width),
        schedule,
        "radial_bump2d",
    )


FAMILIES: dict[str, Callable] = {
    "bump1d": _fam_bump1d,
    "polybump1d": _fam_polybump1d,
    "scale1d": _fam_scale1d,
    "affine1d": _fam_affine1d,
    "shear2d": _fam_shear2d,
    "radial_bump2d": _fam_radial_bump2d,
}


def make_family(
    name: str, domain: ReferenceDomain, schedule: Sequence[float], params: dict | None = None
) -> PerturbationFamily:
    if name not in FAMILIES:
        raise ValueError(f"unknown family {name!r}; available: {sorted(FAMILIES)}")
    return FAMILIES[name](domain, tuple(schedule), params or {})


def invert_map(h: DiffeoMap, targets: Array) -> Array:
    """Solve h(p) = y for each row y of `targets` by damped Newton.

    Tolerance 1e-12 on the residual max-norm, at most 50 iterations; raises
    SingularMapError naming the first offending point on failure.
    """
    y = np.atleast_2d(np.asarray(targets, dtype=float))
    p = y.copy()  # near-identity maps: the target is a good start
    res = h(p) - y
    for _ in range(NEWTON_MAX_ITER):
        norms = np.abs(res).max(axis=1)
        active = norms > NEWTON_TOL
        if not active.any():
            return p
        pa = p[active]
        ra = res[active]
        J = h.jac(pa)
        try:
            step = np.linalg.solve(J, ra[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularMapError(f"singular Jacobian while inverting near {pa[0]}") from exc
        lam = np.ones(pa.shape[0])
        cur = np.abs(ra).max(axis=1)
        for _ in range(8):  # halve the step until the residual contracts
            trial = pa - lam[:, None] * step
            tres = h(trial) - y[active]
            tnorm = np.abs(tres).max(axis=1)
            good = tnorm <= (1 - 0.25 * lam) * cur
            if good.all():
                break
            lam[~good] *= 0.5
        p[active] = pa - lam[:, None] * step
        res[active] = h(p[active]) - y[active]
    bad = np.abs(res).max(axis=1) > NEWTON_TOL
    raise SingularMapError(
        f"Newton inversion failed at {int(bad.sum())} point(s); first target {y[np.argmax(bad)]}"
    )


@dataclass
class CoefficientField:
    """Pointwise pullback data at quadrature points.

    H[i] = Jacobian of (h_new o h_ref^{-1}) at points[i]; Hbar = transpose of
    the inverse of H; det = |det H| (positive by the orientation check).
    """

    points: Array  # (nq, d)
    H: Array  # (nq, d, d)
    Hbar: Array  # (nq, d, d)
    det: Array  # (nq,)

    def __post_init__(self) -> None:
        nq, d = self.points.shape
        if self.H.shape != (nq, d, d) or self.Hbar.shape != (nq, d, d):
            raise ValueError("inconsistent field shapes")
        if np.any(self.det <= 0):
            raise OrientationError("coefficient field carries non-positive determinants")
        # Hbar must invert H^T to within 1e-10.
        prod = np.einsum("nij,nkj->nik", self.Hbar, self.H)
        err = float(np.abs(prod - np.eye(d)).max())
        if err > 1e-10:
            raise ValueError(f"Hbar * H^T deviates from identity by {err:.2e}")
        deterr = float(np.abs(self.det - np.abs(np.linalg.det(self.H))).max())
        if deterr > 1e-12 * max(1.0, float(np.abs(self.det).max())):
            raise ValueError(f"stored determinants disagree with det(H) by {deterr:.2e}")

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def make_pullback(h_ref: DiffeoMap, h_new: DiffeoMap, quad: Array) -> CoefficientField:
    """Coefficient field of the composition h_new o h_ref^{-1} at `quad` points.

    When h_ref == h_new the field is exactly the identity.  Raises
    OrientationError if any determinant is non-positive.
    """
    pts = np.atleast_2d(np.asarray(quad, dtype=float))
    d = pts.shape[1]
    if d != h_ref.domain.dim:
        raise ValueError("quadrature dimension does not match the maps")
    if h_ref == h_new:
        n = pts.shape[0]
        eye = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        return CoefficientField(pts, eye, eye.copy(), np.ones(n))
    pre = invert_map(h_ref, pts)
    J_new = h_new.jac(pre)
    J_ref = h_ref.jac(pre)
    # H = J_new J_ref^{-1}, via solves on the transposed systems
    H = np.linalg.solve(J_ref.transpose(0, 2, 1), J_new.transpose(0, 2, 1)).transpose(0, 2, 1)
    det = np.linalg.det(H)
    if np.any(det <= 0):
        k = int(np.argmax(det <= 0))
        raise OrientationError(
            f"pullback determinant {det[k]:.3e} <= 0 at point {pts[k]}; maps are incompatible"
        )
    Hbar = np.linalg.inv(H).transpose(0, 2, 1)
    return CoefficientField(pts, H, Hbar, det)


def deviation_norms(fieldv: CoefficientField) -> tuple[float, float]:
    """(max |det - 1|, max Frobenius |I - Hbar|) over the field points."""
    det_dev = float(np.abs(fieldv.det - 1.0).max())
    d = fieldv.dim
    diff = np.eye(d)[None, :, :] - fieldv.Hbar
    hbar_dev = float(np.sqrt((diff**2).sum(axis=(1, 2))).max())
    return det_dev, hbar_dev


def _interp_zero_ext(mesh, values: Array, pts: Array) -> tuple[Array, int]:
    """P1/Q1 interpolation of nodal values with zero extension outside."""
    lo, hi = mesh.domain.lower, mesh.domain.upper
    outside = np.any((pts < lo - 1e-12) | (pts > hi + 1e-12), axis=1)
    clipped = np.clip(pts, lo, hi)
    if mesh.domain.dim == 1:
        out = np.interp(clipped[:, 0], mesh.axes[0], values)
    else:
        nx, ny = mesh.resolution, mesh.resolution
        hx = (hi[0] - lo[0]) / nx
        hy = (hi[1] - lo[1]) / ny
        gx = np.clip((clipped[:, 0] - lo[0]) / hx, 0, nx - 1e-12)
        gy = np.clip((clipped[:, 1] - lo[1]) / hy, 0, ny - 1e-12)
        ix, iy = gx.astype(int), gy.astype(int)
        fx, fy = gx - ix, gy - iy
        V = values.reshape(nx + 1, ny + 1)
        out = (
            V[ix, iy] * (1 - fx) * (1 - fy)
            + V[ix + 1, iy] * fx * (1 - fy)
            + V[ix, iy + 1] * (1 - fx) * fy
            + V[ix + 1, iy + 1] * fx * fy
        )
    out = np.where(outside, 0.0, out)
    return out, int(outside.sum())


def transfer_state(
    u: Array,
    h_src: DiffeoMap,
    h_dst: DiffeoMap,
    mesh,
    return_outside_count: bool = False,
):
    """Sample u o (h_src o h_dst^{-1}) on the mesh nodes.

    `u` holds nodal values on the reference mesh of the h_src problem.  Points
    that land outside the source domain take the Dirichlet value zero; the
    number of such points is available via `return_outside_count`.  For
    h_src == h_dst the transfer is the exact identity.
    """
    vals = np.asarray(u, dtype=float).ravel()
    if vals.shape[0] != mesh.n_nodes:
        raise ValueError(f"grid function has {vals.shape[0]} values, mesh has {mesh.n_nodes} nodes")
    if h_src == h_dst:
        out = vals.copy()
        return (out, 0) if return_outside_count else out
    nodes = mesh.nodes
    pre = invert_map(h_dst, nodes)
    q = h_src(pre)
    out, n_out = _interp_zero_ext(mesh, vals, q)
    return (out, n_out) if return_outside_count else out


def export_field_csv(fieldv: CoefficientField, path) -> None:
    """CSV rows: point coordinates, H entries row-major, determinant."""
    d = fieldv.dim
    header = (
        [f"x{i}" for i in range(d)]
        + [f"H{i}{j}" for i in range(d) for j in range(d)]
        + ["det"]
    )
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(fieldv.points.shape[0]):
            row = (
                [f"{v:.17g}" for v in fieldv.points[k]]
                + [f"{v:.17g}" for v in fieldv.H[k].ravel()]
                + [f"{fieldv.det[k]:.17g}"]
            )
            writer.writerow(row)
