"""Smooth arrival-time surface over a triangulation.

Each triangle carries a bivariate quintic (21 coefficients, terms
``x**u * y**v`` with ``u + v <= 5``) fixed by value, gradient and Hessian at
its three vertices plus one condition per edge: the derivative normal to
the edge is only cubic along it.  Neighbouring triangles therefore agree in
value and first derivatives along shared edges (C1).  Vertex gradients and
Hessians come from weighted least-squares cubic fits to nearby sites, so
any cubic field is reproduced exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as P

from .mesh import TriMesh, barycentric

__all__ = [
    "ArrivalSurface",
    "ScalarGrid",
    "SurfaceError",
    "MONOMIALS",
    "estimate_derivatives",
    "fit_surface",
    "grid_axes",
    "write_grid_csv",
]

MONOMIALS = [(u, v) for u in range(6) for v in range(6 - u)]
_U = np.array([m[0] for m in MONOMIALS])
_V = np.array([m[1] for m in MONOMIALS])
_FALLING = np.array([[math.perm(k, a) for a in range(6)] for k in range(6)], dtype=float)


class SurfaceError(ValueError):
    """Surface fitting or evaluation failure (size mismatch, outside hull, ...)."""


@dataclass(frozen=True)
class ScalarGrid:
    """Regular lon/lat grid of cell-centre values.

    ``lon0``/``lat0`` are the centre of cell (0, 0); ``values`` has shape
    (n_lat, n_lon); ``mask`` is True where the cell centre lies inside the hull.
    Values under a False mask carry no contract (they are NaN here).
    """

    lon0: float
    lat0: float
    d_lon: float
    d_lat: float
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if not (self.d_lon > 0 and self.d_lat > 0):
            raise SurfaceError("grid spacing must be positive")
        if self.values.shape != self.mask.shape:
            raise SurfaceError("values and mask shapes differ")

    @property
    def n_lon(self) -> int:
        return self.values.shape[1]

    @property
    def n_lat(self) -> int:
        return self.values.shape[0]

    @property
    def lons(self) -> np.ndarray:
        return self.lon0 + self.d_lon * np.arange(self.n_lon)

    @property
    def lats(self) -> np.ndarray:
        return self.lat0 + self.d_lat * np.arange(self.n_lat)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.lons, self.lats)

    def with_values(self, values: np.ndarray, mask: np.ndarray | None = None) -> "ScalarGrid":
        mask = self.mask if mask is None else mask
        return ScalarGrid(self.lon0, self.lat0, self.d_lon, self.d_lat, values, mask)


def grid_axes(bbox, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centre coordinates covering ``bbox = (lon_min, lat_min, lon_max, lat_max)``."""
    if resolution <= 0:
        raise SurfaceError("resolution must be positive")
    lon_min, lat_min, lon_max, lat_max = map(float, bbox)
    if lon_max <= lon_min or lat_max <= lat_min:
        raise SurfaceError(f"empty bounding box {bbox}")
    n_lon = max(1, int(math.ceil((lon_max - lon_min) / resolution - 1e-9)))
    n_lat = max(1, int(math.ceil((lat_max - lat_min) / resolution - 1e-9)))
    lons = lon_min + resolution * (np.arange(n_lon) + 0.5)
    lats = lat_min + resolution * (np.arange(n_lat) + 0.5)
    return lons, lats


def _design(dx, dy, degree):
    cols = [dx, dy]
    if degree >= 2:
        cols += [dx * dx, dx * dy, dy * dy]
    if degree >= 3:
        cols += [dx**3, dx * dx * dy, dx * dy * dy, dy**3]
    return np.stack(cols, axis=1)


def estimate_derivatives(points, values, n_neighbors: int = 14) -> np.ndarray:
    """Per-node ``(fx, fy, fxx, fxy, fyy)`` from local weighted least squares.

    For each node a cubic (falling back to quadratic, then linear, when
    there are too few neighbours or they are degenerate) is fitted through
    the node's own value to its `n_neighbors` nearest sites, weighted by
    inverse squared distance.
    """
    pts = np.asarray(points, dtype=float)
    z = np.asarray(values, dtype=float)
    n = len(pts)
    out = np.zeros((n, 5))
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    k = min(n_neighbors, n - 1)
    for i in range(n):
        nb = order[i, :k]
        h = math.sqrt(d2[i, nb[-1]])
        dx = (pts[nb, 0] - pts[i, 0]) / h
        dy = (pts[nb, 1] - pts[i, 1]) / h
        dz = z[nb] - z[i]
        w = 1.0 / np.sqrt(dx * dx + dy * dy) if k > 2 else np.ones(k)
        for degree, ncoef in ((3, 9), (2, 5), (1, 2)):
            if k < ncoef:
                continue
            A = _design(dx, dy, degree) * w[:, None]
            coef, _, rank, sv = np.linalg.lstsq(A, dz * w, rcond=None)
            if rank == ncoef and sv[-1] > 1e-8 * sv[0]:
                break
        else:
            raise SurfaceError(f"cannot estimate derivatives at node {i}: neighbours collinear")
        out[i, 0] = coef[0] / h
        out[i, 1] = coef[1] / h
        if degree >= 2:
            out[i, 2] = 2.0 * coef[2] / h**2
            out[i, 3] = coef[3] / h**2
            out[i, 4] = 2.0 * coef[4] / h**2
    return out


def _vertex_rows(xi, eta):
    """Rows of value/d_x/d_y/d_xx/d_xy/d_yy functionals at (xi, eta), shape (6, 21)."""
    rows = np.empty((6, 21))
    for r, (a, b) in enumerate(((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))):
        coef = _FALLING[_U, a] * _FALLING[_V, b]
        pu = np.where(_U >= a, _U - a, 0)
        pv = np.where(_V >= b, _V - b, 0)
        rows[r] = coef * np.power(xi, pu) * np.power(eta, pv)
    return rows


def _edge_row(e, d):
    """Fifth derivative ``D_d D_e**4`` of each monomial.  With `d` the image
    of the edge normal, a zero means the normal derivative has no quartic
    term along the edge."""
    ex, ey = e
    dx, dy = d
    row = np.zeros(21)
    for k, (u, v) in enumerate(MONOMIALS):
        if u + v != 5:
            continue
        s = 0.0
        if u >= 1:
            s += dx * math.comb(4, u - 1) * ex ** (u - 1) * ey**v
        if v >= 1:
            s += dy * math.comb(4, u) * ex**u * ey ** (v - 1)
        row[k] = math.factorial(u) * math.factorial(v) * s
    return row / np.abs(row).max()


def _mul2d(a, b):
    """Product of two bivariate coefficient arrays, truncated to 6x6."""
    out = np.zeros((6, 6))
    for (i, j) in zip(*np.nonzero(a)):
        out[i:, j:] += a[i, j] * b[: 6 - i, : 6 - j]
    return out


_REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_REF_VERTEX_ROWS = np.vstack([_vertex_rows(x, y) for x, y in _REF])


@dataclass(frozen=True)
class ArrivalSurface:
    """C1 piecewise-quintic interpolant T(lon, lat) over a :class:`TriMesh`.

    ``coeffs[t]`` is a 6x6 array ``c[u, v]`` of the triangle-t polynomial in
    its reference coordinates ``(xi, eta) = jinv[t] @ (p - origins[t])``, which
    put the triangle's vertices at (0, 0), (1, 0) and (0, 1);
    :meth:`raw_coefficients` expands it to plain ``lon**u * lat**v`` terms.
    """

    mesh: TriMesh
    node_values: np.ndarray
    derivatives: np.ndarray
    coeffs: np.ndarray
    origins: np.ndarray
    jinv: np.ndarray

    def raw_coefficients(self, t: int) -> np.ndarray:
        """Coefficients ``a[u, v]`` of ``sum a[u, v] lon**u lat**v`` for triangle `t`.

        Ill-conditioned for large coordinates; meant for export, not evaluation.
        """
        c = self.coeffs[t]
        (p, q), (r, s) = self.jinv[t]
        x0, y0 = self.origins[t]
        xi = np.zeros((6, 6))
        eta = np.zeros((6, 6))
        xi[0, 0], xi[1, 0], xi[0, 1] = -(p * x0 + q * y0), p, q
        eta[0, 0], eta[1, 0], eta[0, 1] = -(r * x0 + s * y0), r, s
        xi_pow = [np.eye(6)[:, :1] @ np.eye(6)[:1, :]]
        eta_pow = [xi_pow[0]]
        for _ in range(5):
            xi_pow.append(_mul2d(xi_pow[-1], xi))
            eta_pow.append(_mul2d(eta_pow[-1], eta))
        out = np.zeros((6, 6))
        for u, v in MONOMIALS:
            if c[u, v] != 0.0:
                out += c[u, v] * _mul2d(xi_pow[u], eta_pow[v])
        return out

    def _local(self, t, x, y):
        dx = x - self.origins[t, 0]
        dy = y - self.origins[t, 1]
        (p, q), (r, s) = self.jinv[t]
        return p * dx + q * dy, r * dx + s * dy

    def eval_in(self, t: int, x, y):
        """Evaluate triangle t's polynomial (no containment check)."""
        xi, eta = self._local(t, np.asarray(x, float), np.asarray(y, float))
        return _horner(self.coeffs[t], xi, eta)

    def grad_in(self, t: int, x, y):
        """Analytic (dT/dlon, dT/dlat) of triangle t's polynomial."""
        xi, eta = self._local(t, np.asarray(x, float), np.asarray(y, float))
        c = self.coeffs[t]
        g_xi = P.polyval2d(xi, eta, P.polyder(c, axis=0))
        g_eta = P.polyval2d(xi, eta, P.polyder(c, axis=1))
        (p, q), (r, s) = self.jinv[t]
        return p * g_xi + r * g_eta, q * g_xi + s * g_eta

    def locate(self, lon, lat) -> np.ndarray:
        return self.mesh.find_triangle(lon, lat)

    def eval(self, lon, lat):
        """Surface value at point(s); raises :class:`SurfaceError` outside the hull."""
        scalar = np.ndim(lon) == 0 and np.ndim(lat) == 0
        x = np.atleast_1d(np.asarray(lon, dtype=float))
        y = np.atleast_1d(np.asarray(lat, dtype=float))
        tri = self.locate(x, y)
        if (tri < 0).any():
            i = int(np.argmax(tri < 0))
            raise SurfaceError(f"point ({x[i]}, {y[i]}) is outside the sensor hull")
        out = np.empty(x.shape)
        for t in np.unique(tri):
            sel = tri == t
            out[sel] = self.eval_in(t, x[sel], y[sel])
        return float(out[0]) if scalar else out

    def eval_points(self, x, y, fill=np.nan):
        """Vectorized evaluation, `fill` outside the hull instead of raising."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        tri = self.locate(x.ravel(), y.ravel()).reshape(x.shape)
        out = np.full(x.shape, fill, dtype=float)
        for t in np.unique(tri[tri >= 0]):
            sel = tri == t
            out[sel] = self.eval_in(t, x[sel], y[sel])
        return out

    def eval_grid(self, bbox, resolution: float) -> ScalarGrid:
        """Evaluate at cell centres of a regular grid; cells outside the hull are masked."""
        lons, lats = grid_axes(bbox, resolution)
        return self.eval_on_axes(lons, lats)

    def eval_on_axes(self, lons, lats) -> ScalarGrid:
        lons = np.asarray(lons, dtype=float)
        lats = np.asarray(lats, dtype=float)
        d_lon = float(lons[1] - lons[0]) if len(lons) > 1 else 1.0
        d_lat = float(lats[1] - lats[0]) if len(lats) > 1 else 1.0
        values = np.full((len(lats), len(lons)), np.nan)
        owner = np.full(values.shape, -1, dtype=np.intp)
        for t, j0, i0, sel, X, Y in _raster_triangles(self.mesh, lons, lats):
            owner[j0:j0 + sel.shape[0], i0:i0 + sel.shape[1]][sel] = t
            values[j0:j0 + sel.shape[0], i0:i0 + sel.shape[1]][sel] = self.eval_in(t, X[sel], Y[sel])
        mask = owner >= 0
        if not mask.any():
            raise SurfaceError("grid does not intersect the sensor hull")
        return ScalarGrid(float(lons[0]), float(lats[0]), d_lon, d_lat, values, mask)


def _horner(c, xi, eta):
    """Evaluate ``sum c[u, v] xi**u eta**v`` over the 21 terms with u + v <= 5."""
    out = None
    for u in range(5, -1, -1):
        inner = np.full_like(xi, c[u, 5 - u])
        for v in range(4 - u, -1, -1):
            inner = inner * eta + c[u, v]
        out = inner if out is None else out * xi + inner
    return out


def _raster_triangles(mesh: TriMesh, lons, lats, tol: float = 1e-10):
    """Yield ``(t, j0, i0, newly_owned, X, Y)`` per triangle over the grid
    cell centres it covers; a cell already owned by a lower-indexed
    triangle is not handed out again."""
    owned = np.zeros((len(lats), len(lons)), dtype=bool)
    tp = mesh.points[mesh.triangles]
    for t in range(mesh.n_triangles):
        tri = tp[t]
        lo = tri.min(axis=0)
        hi = tri.max(axis=0)
        i0 = np.searchsorted(lons, lo[0] - tol, side="left")
        i1 = np.searchsorted(lons, hi[0] + tol, side="right")
        j0 = np.searchsorted(lats, lo[1] - tol, side="left")
        j1 = np.searchsorted(lats, hi[1] + tol, side="right")
        if i1 <= i0 or j1 <= j0:
            continue
        X, Y = np.meshgrid(lons[i0:i1], lats[j0:j1])
        lam = barycentric(tri, X, Y)
        sub = owned[j0:j1, i0:i1]
        sel = (lam >= -tol).all(axis=0) & ~sub
        if not sel.any():
            continue
        sub |= sel
        yield t, j0, i0, sel, X, Y


def fit_surface(mesh: TriMesh, values, derivatives=None, n_neighbors: int = 14) -> ArrivalSurface:
    """Fit the C1 quintic surface to per-site `values` (aligned with ``mesh.points``)."""
    z = np.asarray(values, dtype=float)
    if z.shape != (mesh.n_points,):
        raise SurfaceError(f"expected {mesh.n_points} node values, got shape {z.shape}")
    if not np.isfinite(z).all():
        raise SurfaceError("node values must be finite")
    if derivatives is None:
        derivatives = estimate_derivatives(mesh.points, z, n_neighbors=n_neighbors)
    der = np.asarray(derivatives, dtype=float)

    m = mesh.n_triangles
    tp = mesh.points[mesh.triangles]
    origins = tp[:, 0, :].copy()
    # columns of J are the edges from vertex 0: p = origin + J @ (xi, eta)
    J = np.stack([tp[:, 1] - tp[:, 0], tp[:, 2] - tp[:, 0]], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    size = np.abs(J).max(axis=(1, 2))
    bad = np.flatnonzero(~(det > 1e-14 * size**2))
    if len(bad):
        raise SurfaceError(f"triangle {int(bad[0])} is degenerate")
    jinv = np.linalg.inv(J)

    A = np.zeros((m, 21, 21))
    A[:, :18] = _REF_VERTEX_ROWS
    b = np.zeros((m, 21))
    for t in range(m):
        Jt = J[t]
        for k, vtx in enumerate(mesh.triangles[t]):
            fx, fy, fxx, fxy, fyy = der[vtx]
            g = Jt.T @ (fx, fy)
            H = Jt.T @ np.array([[fxx, fxy], [fxy, fyy]]) @ Jt
            b[t, 6 * k:6 * k + 6] = (z[vtx], g[0], g[1], H[0, 0], H[0, 1], H[1, 1])
        for k in range(3):
            e = tp[t, (k + 1) % 3] - tp[t, k]
            e = e / np.hypot(*e)
            normal = np.array([-e[1], e[0]])
            A[t, 18 + k] = _edge_row(jinv[t] @ e, jinv[t] @ normal)
    sol = np.linalg.solve(A, b[..., None])[..., 0]
    coeffs = np.zeros((m, 6, 6))
    coeffs[:, _U, _V] = sol
    # vertex 0 sits at the reference origin: pin the constant term to the exact node value
    coeffs[:, 0, 0] = z[mesh.triangles[:, 0]]
    return ArrivalSurface(mesh, z.copy(), der, coeffs, origins, jinv)


def write_grid_csv(grid: ScalarGrid, path, value_name: str = "value") -> int:
    """``lon,lat,<value_name>`` for unmasked cells, with the crs header line;
    returns the number of data rows."""
    lon, lat = grid.mesh()
    sel = grid.mask & np.isfinite(grid.values)
    data = np.column_stack([lon[sel], lat[sel], grid.values[sel]])
    with Path(path).open("w", newline="") as fh:
        fh.write("# crs=lonlat-degrees\n")
        fh.write(f"lon,lat,{value_name}\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")
    return int(sel.sum())
