"""Delaunay triangulation of sensor sites in the lon/lat plane.

Sites are triangulated in raw degrees.  Construction is incremental: sites
are swept in lexicographic order, each new site is joined to the hull
edges it can see, and the edges opposite it are legalized by flipping
with the empty-circumcircle predicate :func:`incircle`.

Both predicates evaluate in floating point first and fall back to exact
rational arithmetic whenever the result is too close to zero to trust.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

__all__ = [
    "TriMesh",
    "MeshError",
    "orient2d",
    "incircle",
    "incircle_many",
    "delaunay",
    "delaunay_violations",
    "canonical_triangles",
    "write_mesh_csv",
]

# relative magnitude below which the float determinant is recomputed exactly
_ORIENT_EPS = 1e-14
_INCIRCLE_EPS = 1e-13


class MeshError(ValueError):
    """Raised for degenerate or duplicate site configurations."""


def orient2d(a, b, c) -> float:
    """Twice the signed area of triangle abc; > 0 when abc is counter-clockwise."""
    acx, acy = a[0] - c[0], a[1] - c[1]
    bcx, bcy = b[0] - c[0], b[1] - c[1]
    det = acx * bcy - acy * bcx
    bound = _ORIENT_EPS * (abs(acx * bcy) + abs(acy * bcx))
    if abs(det) > bound:
        return float(det)
    fa = [Fraction(v) for v in a]
    fb = [Fraction(v) for v in b]
    fc = [Fraction(v) for v in c]
    exact = (fa[0] - fc[0]) * (fb[1] - fc[1]) - (fa[1] - fc[1]) * (fb[0] - fc[0])
    return float(exact) if exact else 0.0


def _incircle_rows(a, b, c, p):
    rows = []
    for q in (a, b, c):
        rows.append((q[0] - p[0], q[1] - p[1], (q[0] ** 2 - p[0] ** 2) + (q[1] ** 2 - p[1] ** 2)))
    return rows


def _det3(r):
    return (
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    )


def incircle(a, b, c, p, check_orientation: bool = False) -> float:
    """Circumcircle test for point `p` against the CCW triangle `abc`.

    Evaluates the 3x3 determinant whose rows are
    ``(lon_X - lon_P, lat_X - lat_P, (lon_X^2 - lon_P^2) + (lat_X^2 - lat_P^2))``
    for X in (A, B, C).  Positive when `p` lies strictly inside the
    circumcircle, zero when the four points are cocircular, negative outside.
    """
    if check_orientation:
        o = orient2d(a, b, c)
        if o == 0.0:
            raise MeshError("incircle requires a non-collinear triangle")
        if o < 0.0:
            raise MeshError("incircle requires a counter-clockwise triangle")
    r = _incircle_rows(a, b, c, p)
    det = _det3(r)
    # magnitude of the terms that enter the expansion, squares taken unsubtracted
    mags = [
        (abs(q[0] - p[0]), abs(q[1] - p[1]), q[0] ** 2 + p[0] ** 2 + q[1] ** 2 + p[1] ** 2)
        for q in (a, b, c)
    ]
    perm = (
        mags[0][0] * (mags[1][1] * mags[2][2] + mags[1][2] * mags[2][1])
        + mags[0][1] * (mags[1][0] * mags[2][2] + mags[1][2] * mags[2][0])
        + mags[0][2] * (mags[1][0] * mags[2][1] + mags[1][1] * mags[2][0])
    )
    if abs(det) > _INCIRCLE_EPS * perm:
        return float(det)
    fr = _incircle_rows(*([Fraction(v) for v in q] for q in (a, b, c, p)))
    exact = _det3(fr)
    return float(exact) if exact else 0.0


def incircle_many(tri_pts: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Vectorized float incircle; ``tri_pts`` is (..., 3, 2), ``p`` is (..., 2).

    No exact fallback: callers needing a certain sign re-check small values
    with :func:`incircle`.
    """
    p = np.asarray(p, dtype=float)[..., None, :]
    d = tri_pts - p
    sq = (tri_pts[..., 0] ** 2 - p[..., 0] ** 2) + (tri_pts[..., 1] ** 2 - p[..., 1] ** 2)
    m = np.concatenate([d, sq[..., None]], axis=-1)
    return np.linalg.det(m)


@dataclass(frozen=True)
class TriMesh:
    """Immutable triangulation.

    ``points`` is (n, 2) as (lon, lat); ``triangles`` is (m, 3) with each
    row counter-clockwise and its smallest vertex index first; ``hull`` lists
    the boundary vertices counter-clockwise, collinear boundary sites included.
    """

    points: np.ndarray
    triangles: np.ndarray
    hull: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edge_map(self) -> dict[tuple[int, int], int]:
        """Directed edge -> triangle index."""
        emap = {}
        for t, (a, b, c) in enumerate(self.triangles.tolist()):
            emap[(a, b)] = t
            emap[(b, c)] = t
            emap[(c, a)] = t
        return emap

    def interior_edges(self) -> list[tuple[int, int, int, int]]:
        """Each shared edge once as (u, v, t_left, t_right) with u < v."""
        emap = self.edge_map()
        out = []
        for (u, v), t in emap.items():
            if u < v and (v, u) in emap:
                out.append((u, v, t, emap[(v, u)]))
        return sorted(out)

    def neighbors(self) -> list[set[int]]:
        nbrs: list[set[int]] = [set() for _ in range(self.n_points)]
        for a, b, c in self.triangles.tolist():
            nbrs[a].update((b, c))
            nbrs[b].update((a, c))
            nbrs[c].update((a, b))
        return nbrs

    def find_triangle(self, x, y, tol: float = 1e-12) -> np.ndarray:
        """Containing-triangle index per query point, -1 outside the hull.

        Points on a shared edge go to the lower-indexed triangle.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.full(x.shape, -1, dtype=np.intp)
        tp = self.points[self.triangles]
        scale = np.ptp(self.points, axis=0).max()
        for t in range(self.n_triangles):
            lam = barycentric(tp[t], x, y)
            inside = (lam >= -tol * max(scale, 1.0)).all(axis=0) & (out < 0)
            out[inside] = t
        return out


def barycentric(tri: np.ndarray, x, y) -> np.ndarray:
    """Barycentric coordinates (3, ...) of points in a triangle given as (3, 2)."""
    (x0, y0), (x1, y1), (x2, y2) = tri
    det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
    l0 = ((y1 - y2) * (x - x2) + (x2 - x1) * (y - y2)) / det
    l1 = ((y2 - y0) * (x - x2) + (x0 - x2) * (y - y2)) / det
    return np.stack([l0, l1, 1.0 - l0 - l1])


class _Builder:
    def __init__(self, pts: list[tuple[float, float]]):
        self.pts = pts
        self.tris: list[list[int]] = []
        self.emap: dict[tuple[int, int], int] = {}
        self.boundary: set[tuple[int, int]] = set()

    def add(self, a, b, c, tid=None):
        if tid is None:
            tid = len(self.tris)
            self.tris.append([a, b, c])
        else:
            self.tris[tid] = [a, b, c]
        self.emap[(a, b)] = tid
        self.emap[(b, c)] = tid
        self.emap[(c, a)] = tid
        return tid

    def third(self, tid, u, v):
        for w in self.tris[tid]:
            if w != u and w != v:
                return w
        raise AssertionError("corrupt triangle")

    def illegal(self, u, v, p, d) -> bool:
        """Edge uv shared by CCW (u, v, p) and (v, u, d)."""
        s = incircle(self.pts[u], self.pts[v], self.pts[p], self.pts[d])
        if s > 0.0:
            return True
        if s == 0.0:
            # cocircular: keep the diagonal with the smallest endpoint index
            return min(p, d) < min(u, v)
        return False

    def flip(self, u, v):
        """Flip the diagonal uv; returns the new diagonal's endpoints (p, d)."""
        t1 = self.emap[(u, v)]
        t2 = self.emap[(v, u)]
        p = self.third(t1, u, v)
        d = self.third(t2, v, u)
        for e in ((u, v), (v, p), (p, u), (v, u), (u, d), (d, v)):
            del self.emap[e]
        self.add(p, u, d, t1)
        self.add(p, d, v, t2)
        return p, d

    def legalize(self, stack: list[tuple[int, int]]):
        # each entry (u, v): directed edge of a triangle whose third vertex was just inserted
        while stack:
            u, v = stack.pop()
            t1 = self.emap.get((u, v))
            t2 = self.emap.get((v, u))
            if t1 is None or t2 is None:
                continue
            p = self.third(t1, u, v)
            d = self.third(t2, v, u)
            if self.illegal(u, v, p, d):
                self.flip(u, v)
                stack.append((u, d))
                stack.append((d, v))

    def insert_outside(self, p: int):
        pp = self.pts[p]
        visible = [
            (a, b) for (a, b) in self.boundary if orient2d(self.pts[a], self.pts[b], pp) < 0.0
        ]
        if not visible:
            raise AssertionError("swept site does not see the hull")
        new_edges = []
        for a, b in visible:
            self.add(b, a, p)
            self.boundary.discard((a, b))
            new_edges.append((a, p))
            new_edges.append((p, b))
        for a, b in new_edges:
            if (b, a) in self.emap:
                self.boundary.discard((b, a))
            else:
                self.boundary.add((a, b))
        # edges opposite p in the new triangles (b, a, p) are b->a
        self.legalize([(b, a) for a, b in visible])

    def global_pass(self):
        changed = True
        while changed:
            changed = False
            for u, v in list(self.emap):
                if u > v or (v, u) not in self.emap or (u, v) not in self.emap:
                    continue
                t1, t2 = self.emap[(u, v)], self.emap[(v, u)]
                p = self.third(t1, u, v)
                d = self.third(t2, v, u)
                if self.illegal(u, v, p, d):
                    self.flip(u, v)
                    changed = True


def delaunay(points) -> TriMesh:
    """Delaunay triangulation of (lon, lat) sites.

    Raises :class:`MeshError` for fewer than 3 sites, duplicate coordinates
    or an all-collinear set.
    """
    pts_arr = np.asarray(points, dtype=float)
    if pts_arr.ndim != 2 or pts_arr.shape[1] != 2:
        raise MeshError("points must be an (n, 2) array")
    n = len(pts_arr)
    if n < 3:
        raise MeshError(f"need at least 3 sites, got {n}")
    if not np.isfinite(pts_arr).all():
        raise MeshError("site coordinates must be finite")
    pts = [tuple(map(float, p)) for p in pts_arr]
    order = sorted(range(n), key=lambda i: (pts[i][0], pts[i][1], i))
    for i, j in zip(order, order[1:]):
        if pts[i] == pts[j]:
            raise MeshError(f"duplicate site coordinates: sites {min(i, j)} and {max(i, j)}")

    k = 2
    while k < n and orient2d(pts[order[0]], pts[order[1]], pts[order[k]]) == 0.0:
        k += 1
    if k == n:
        raise MeshError("all sites are collinear")

    b = _Builder(pts)
    apex = order[k]
    for i in range(k - 1):
        u, v = order[i], order[i + 1]
        if orient2d(pts[u], pts[v], pts[apex]) > 0:
            b.add(u, v, apex)
        else:
            b.add(v, u, apex)
    for (u, v) in list(b.emap):
        if (v, u) not in b.emap:
            b.boundary.add((u, v))
    for idx in order[k + 1:]:
        b.insert_outside(idx)
    b.global_pass()

    tris = np.array([_rotate_min_first(t) for t in b.tris], dtype=np.intp)
    tris = tris[np.lexsort(tris.T[::-1])]
    hull = _hull_from_boundary(b.boundary)
    return TriMesh(points=pts_arr.copy(), triangles=tris, hull=hull)


def _rotate_min_first(t):
    i = t.index(min(t))
    return t[i:] + t[:i]


def _hull_from_boundary(boundary) -> np.ndarray:
    nxt = dict(boundary)
    start = min(nxt)
    hull = [start]
    cur = nxt[start]
    while cur != start:
        hull.append(cur)
        cur = nxt[cur]
    return np.array(hull, dtype=np.intp)


def canonical_triangles(mesh: TriMesh, labels=None) -> set[frozenset]:
    """Triangle set keyed by site labels (default: coordinates), order-free."""
    if labels is None:
        labels = [tuple(p) for p in mesh.points.tolist()]
    return {frozenset(labels[i] for i in t) for t in mesh.triangles.tolist()}


def delaunay_violations(mesh: TriMesh) -> list[tuple[int, int]]:
    """Exhaustive empty-circumcircle check: (triangle, site) pairs with the
    site strictly inside the triangle's circumcircle."""
    tp = mesh.points[mesh.triangles]  # (m, 3, 2)
    pts = mesh.points
    vals = incircle_many(tp[:, None, :, :], pts[None, :, :])  # (m, n)
    own = np.zeros(vals.shape, dtype=bool)
    rows = np.arange(mesh.n_triangles)[:, None]
    own[rows, mesh.triangles] = True
    scale = np.abs(pts).max() + np.ptp(pts, axis=0).max()
    suspect = (vals > -1e-9 * scale**4) & ~own
    bad = []
    for t, s in zip(*np.nonzero(suspect)):
        a, b, c = (tuple(mesh.points[i]) for i in mesh.triangles[t])
        if incircle(a, b, c, tuple(pts[s])) > 0.0:
            bad.append((int(t), int(s)))
    return bad


def write_mesh_csv(mesh: TriMesh, path, site_ids=None) -> None:
    """Write ``tri_index,v0,v1,v2`` to `path` and the site table alongside it
    (``<stem>_sites.csv``)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("# crs=lonlat-degrees\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tri_index", "v0", "v1", "v2"])
        for i, (a, b, c) in enumerate(mesh.triangles.tolist()):
            w.writerow([i, a, b, c])
    sites = path.with_name(path.stem + "_sites.csv")
    with sites.open("w", newline="") as fh:
        fh.write("# crs=lonlat-degrees\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "id", "lon", "lat"])
        for i, (lon, lat) in enumerate(mesh.points.tolist()):
            sid = site_ids[i] if site_ids is not None else str(i)
            w.writerow([i, sid, repr(lon), repr(lat)])
