import logging
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from lamg.exceptions import InvalidMesh, RejectionBudgetExceeded
from lamg.utils.rng import Rng

logger = logging.getLogger(__name__)

# Fixed, mutually non-aligned ray directions for the parity test
_RAY_DIRECTIONS = np.array([
    [0.5773502691896258, 0.5773502691896257, 0.5773502691896259],
    [-0.2672612419124244, 0.8017837257372732, 0.5345224838248488],
    [0.8164965809277261, -0.4082482904638631, 0.4082482904638630],
    [-0.3015113445777636, -0.3015113445777636, 0.9045340337332909],
])
_RAY_DIRECTIONS = _RAY_DIRECTIONS / np.linalg.norm(_RAY_DIRECTIONS, axis=1, keepdims=True)

# Barycentric slack under which a ray hit counts as grazing an edge or vertex
_BARY_TOL = 1e-9
# Upper bound on (points x triangles) pairs evaluated in one vectorized chunk
_CHUNK_PAIRS = 400_000
_SEGMENT_CHUNK = 4096


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    Closest point on triangle (a, b, c) to p, row by row.

    Voronoi-region classification of the query against the triangle's
    vertices, edges and face; all inputs are (k, 3) arrays.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    result = np.empty_like(p, dtype=float)
    done = np.zeros(len(p), dtype=bool)

    with np.errstate(divide="ignore", invalid="ignore"):
        mask = (d1 <= 0) & (d2 <= 0)
        result[mask] = a[mask]
        done |= mask

        mask = ~done & (d3 >= 0) & (d4 <= d3)
        result[mask] = b[mask]
        done |= mask

        mask = ~done & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        v = d1[mask] / (d1[mask] - d3[mask])
        result[mask] = a[mask] + v[:, None] * ab[mask]
        done |= mask

        mask = ~done & (d6 >= 0) & (d5 <= d6)
        result[mask] = c[mask]
        done |= mask

        mask = ~done & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        w = d2[mask] / (d2[mask] - d6[mask])
        result[mask] = a[mask] + w[:, None] * ac[mask]
        done |= mask

        mask = ~done & (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        w = (d4[mask] - d3[mask]) / ((d4[mask] - d3[mask]) + (d5[mask] - d6[mask]))
        result[mask] = b[mask] + w[:, None] * (c[mask] - b[mask])
        done |= mask

        mask = ~done
        denom = 1.0 / (va[mask] + vb[mask] + vc[mask])
        v = vb[mask] * denom
        w = vc[mask] * denom
        result[mask] = a[mask] + ab[mask] * v[:, None] + ac[mask] * w[:, None]

    return result


class BoundaryMesh:
    def __init__(self, vertices: np.ndarray, triangles: np.ndarray, leafsize: int = 16):
        """
        Watertight, outward-oriented triangle surface bounding a domain.

        Args:
            vertices (np.ndarray): (V, 3) vertex positions, used as-is
            triangles (np.ndarray): (T, 3) vertex indices per triangle
            leafsize (int): Leaf size of the triangle spatial index

        Raises:
            InvalidMesh: if the surface is not a closed, consistently
                outward-oriented 2-manifold without degenerate triangles
        """
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be an (V, 3) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3 or len(self.triangles) == 0:
            raise ValueError("triangles must be a non-empty (T, 3) array")

        self.bbox = (self.vertices.min(axis=0), self.vertices.max(axis=0))
        self.bbox_diagonal = float(np.linalg.norm(self.bbox[1] - self.bbox[0]))
        self.eps_geo = 1e-9 * self.bbox_diagonal

        self._a = self.vertices[self.triangles[:, 0]]
        self._b = self.vertices[self.triangles[:, 1]]
        self._c = self.vertices[self.triangles[:, 2]]
        self._validate()

        self._centroids = (self._a + self._b + self._c) / 3.0
        self._radii = np.max(np.stack([
            np.linalg.norm(self._a - self._centroids, axis=1),
            np.linalg.norm(self._b - self._centroids, axis=1),
            np.linalg.norm(self._c - self._centroids, axis=1),
        ]), axis=0)
        self._max_radius = float(self._radii.max())
        self._tri_lo = np.minimum(np.minimum(self._a, self._b), self._c)
        self._tri_hi = np.maximum(np.maximum(self._a, self._b), self._c)
        self.rebuild_index(leafsize)

    def _validate(self) -> None:
        normals = np.cross(self._b - self._a, self._c - self._a)
        areas = 0.5 * np.linalg.norm(normals, axis=1)
        degenerate = np.nonzero(areas <= 1e-14 * self.bbox_diagonal ** 2)[0]
        if len(degenerate):
            raise InvalidMesh(f"{len(degenerate)} degenerate triangles, first at index {degenerate[0]}")

        directed = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        undirected = np.sort(directed, axis=1)
        _, counts = np.unique(undirected, axis=0, return_counts=True)
        if np.any(counts != 2):
            raise InvalidMesh(f"surface is not watertight: {int(np.sum(counts != 2))} edges not shared by exactly 2 triangles")
        _, directed_counts = np.unique(directed, axis=0, return_counts=True)
        if np.any(directed_counts != 1):
            raise InvalidMesh("inconsistent triangle orientation")

        volume = self.signed_volume()
        if volume <= 0:
            raise InvalidMesh(f"surface is inward-oriented (signed volume {volume:.6g})")

    def rebuild_index(self, leafsize: int = 16) -> None:
        """(Re)build the k-d tree over triangle centroids"""
        self._tree = cKDTree(self._centroids, leafsize=leafsize)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_volume(self) -> float:
        return float(np.sum(_dot(self._a, np.cross(self._b, self._c))) / 6.0)

    def area(self) -> float:
        return float(0.5 * np.linalg.norm(np.cross(self._b - self._a, self._c - self._a), axis=1).sum())

    def closest_points(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Distance, closest boundary point and triangle index for each query.

        Candidate triangles come from the centroid k-d tree: an exact
        distance to the nearest few centroids gives an upper bound, and every
        triangle whose bounding sphere may beat it is then tested exactly.
        Ties within eps_geo resolve to the lowest triangle index.

        Args:
            points (np.ndarray): (P, 3) or (3,) query points

        Returns:
            Tuple[np.ndarray, np.ndarray, np.ndarray]: distances (P,),
                closest points (P, 3) and triangle indices (P,)
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n_points = len(pts)
        k = min(4, self.n_triangles)
        _, nearest = self._tree.query(pts, k=k)
        nearest = np.asarray(nearest).reshape(n_points, k)
        pi = np.repeat(np.arange(n_points), k)
        ti = nearest.ravel()
        cp = closest_points_on_triangles(pts[pi], self._a[ti], self._b[ti], self._c[ti])
        upper = np.linalg.norm(cp - pts[pi], axis=1).reshape(n_points, k).min(axis=1)

        candidates = self._tree.query_ball_point(pts, upper + self._max_radius + self.eps_geo)
        lengths = np.fromiter((len(c) for c in candidates), dtype=np.int64, count=n_points)
        pi = np.repeat(np.arange(n_points), lengths)
        ti = np.fromiter((t for c in candidates for t in c), dtype=np.int64, count=int(lengths.sum()))
        return self._select_closest(pts, pi, ti)

    def _select_closest(self, pts: np.ndarray, pi: np.ndarray, ti: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n_points = len(pts)
        cp = closest_points_on_triangles(pts[pi], self._a[ti], self._b[ti], self._c[ti])
        dist = np.linalg.norm(cp - pts[pi], axis=1)

        best = np.full(n_points, np.inf)
        np.minimum.at(best, pi, dist)
        tied = dist <= best[pi] + self.eps_geo
        best_tri = np.full(n_points, np.iinfo(np.int64).max)
        np.minimum.at(best_tri, pi[tied], ti[tied])
        chosen = np.nonzero(tied & (ti == best_tri[pi]))[0]
        # one row per point; np.unique keeps the first occurrence
        _, first = np.unique(pi[chosen], return_index=True)
        chosen = chosen[first]
        return dist[chosen], cp[chosen], ti[chosen]

    def exhaustive_closest_points(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Same contract as closest_points, scanning every triangle"""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n_tri = self.n_triangles
        pi = np.repeat(np.arange(len(pts)), n_tri)
        ti = np.tile(np.arange(n_tri), len(pts))
        return self._select_closest(pts, pi, ti)

    def distance_to_boundary(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        d, p, _ = self.closest_points(np.asarray(x, dtype=float).reshape(1, 3))
        return float(d[0]), p[0]

    def project_to_boundary(self, x: np.ndarray) -> np.ndarray:
        """Closest point on the boundary; accepts (3,) or (P, 3)"""
        x = np.asarray(x, dtype=float)
        _, p, _ = self.closest_points(x)
        return p[0] if x.ndim == 1 else p

    def _cast_rays(self, origins: np.ndarray, direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Crossing parity and grazing flags of rays from each origin"""
        e1 = self._b - self._a
        e2 = self._c - self._a
        h = np.cross(direction, e2)
        det = _dot(e1, h)
        scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
        parallel = np.abs(det) <= 1e-12 * scale
        inv_det = np.where(parallel, 0.0, 1.0 / np.where(parallel, 1.0, det))
        unit_normals = np.cross(e1, e2) / np.maximum(scale, 1e-300)[:, None]

        crossings = np.zeros(len(origins), dtype=np.int64)
        grazing = np.zeros(len(origins), dtype=bool)
        step = max(1, _CHUNK_PAIRS // self.n_triangles)
        for start in range(0, len(origins), step):
            o = origins[start:start + step]
            s = o[:, None, :] - self._a[None, :, :]
            u = _dot(s, h[None]) * inv_det
            q = np.cross(s, e1[None])
            v = (q @ direction) * inv_det
            t = _dot(q, e2[None]) * inv_det
            inside_tri = (u >= -_BARY_TOL) & (v >= -_BARY_TOL) & (u + v <= 1 + _BARY_TOL)
            ahead = t > self.eps_geo
            hit = ~parallel[None] & inside_tri & ahead
            strict = hit & (u > _BARY_TOL) & (v > _BARY_TOL) & (u + v < 1 - _BARY_TOL)
            # origin on the surface, grazing hits, or in-plane parallel rays
            on_surface = ~parallel[None] & inside_tri & (np.abs(t) <= self.eps_geo)
            in_plane = parallel[None] & (np.abs(_dot(s, unit_normals[None])) <= self.eps_geo)
            crossings[start:start + step] = strict.sum(axis=1)
            grazing[start:start + step] = np.any(hit & ~strict, axis=1) | np.any(on_surface | in_plane, axis=1)
        return crossings % 2 == 1, grazing

    def is_inside(self, points: np.ndarray) -> np.ndarray:
        """
        Containment by ray-crossing parity.

        Rays that graze an edge or vertex are re-cast along up to three
        other directions; if every direction grazes, the majority vote wins.
        Accepts (3,) or (P, 3); returns a bool or a (P,) bool array.
        """
        x = np.asarray(points, dtype=float)
        pts = np.atleast_2d(x)
        inside, grazing = self._cast_rays(pts, _RAY_DIRECTIONS[0])
        votes = inside.astype(np.int64)
        casts = np.ones(len(pts), dtype=np.int64)
        pending = np.nonzero(grazing)[0]
        for direction in _RAY_DIRECTIONS[1:]:
            if len(pending) == 0:
                break
            recast, still_grazing = self._cast_rays(pts[pending], direction)
            clean = pending[~still_grazing]
            inside[clean] = recast[~still_grazing]
            votes[pending] += recast
            casts[pending] += 1
            pending = pending[still_grazing]
        if len(pending):
            logger.debug(f"{len(pending)} containment queries resolved by majority vote")
            inside[pending] = 2 * votes[pending] > casts[pending]
        return bool(inside[0]) if x.ndim == 1 else inside

    def winding_number(self, points: np.ndarray) -> np.ndarray:
        """Generalized winding number: sum of signed solid angles over 4*pi"""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        total = np.zeros(len(pts))
        step = max(1, _CHUNK_PAIRS // self.n_triangles)
        for start in range(0, len(pts), step):
            o = pts[start:start + step, None, :]
            a = self._a[None] - o
            b = self._b[None] - o
            c = self._c[None] - o
            la = np.linalg.norm(a, axis=2)
            lb = np.linalg.norm(b, axis=2)
            lc = np.linalg.norm(c, axis=2)
            numerator = _dot(a, np.cross(b, c))
            denominator = la * lb * lc + _dot(a, b) * lc + _dot(b, c) * la + _dot(c, a) * lb
            total[start:start + step] = 2.0 * np.arctan2(numerator, denominator).sum(axis=1)
        return total / (4.0 * np.pi)

    def _blocked_segments(self, a_pts: np.ndarray, b_pts: np.ndarray, si: np.ndarray, ti: np.ndarray) -> np.ndarray:
        """Indices of segments that intersect their paired triangle, eps_geo slack included"""
        seg_lo = np.minimum(a_pts[si], b_pts[si]) - self.eps_geo
        seg_hi = np.maximum(a_pts[si], b_pts[si]) + self.eps_geo
        overlap = np.all((seg_lo <= self._tri_hi[ti]) & (seg_hi >= self._tri_lo[ti]), axis=1)
        si, ti = si[overlap], ti[overlap]
        if len(si) == 0:
            return si
        origin = a_pts[si]
        direction = b_pts[si] - origin
        seg_len = np.linalg.norm(direction, axis=1)
        e1 = self._b[ti] - self._a[ti]
        e2 = self._c[ti] - self._a[ti]
        h = np.cross(direction, e2)
        det = _dot(e1, h)
        scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1) * np.maximum(seg_len, 1e-300)
        usable = (np.abs(det) > 1e-12 * scale) & (seg_len > self.eps_geo)
        inv_det = np.where(usable, 1.0 / np.where(usable, det, 1.0), 0.0)
        s = origin - self._a[ti]
        u = _dot(s, h) * inv_det
        q = np.cross(s, e1)
        v = _dot(direction, q) * inv_det
        t = _dot(e2, q) * inv_det
        t_tol = self.eps_geo / np.maximum(seg_len, 1e-300)
        hit = usable & (u >= -_BARY_TOL) & (v >= -_BARY_TOL) & (u + v <= 1 + _BARY_TOL) & (t >= -t_tol) & (t <= 1 + t_tol)
        return si[hit]

    def segments_inside(self, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
        """
        True where segment [start, end] meets no boundary triangle.

        A triangle can only meet a segment if its centroid lies within half
        the segment length plus the largest triangle radius of the segment
        midpoint, so candidates come from the centroid k-d tree.
        """
        a_pts = np.atleast_2d(np.asarray(starts, dtype=float))
        b_pts = np.atleast_2d(np.asarray(ends, dtype=float))
        n_seg = len(a_pts)
        midpoints = 0.5 * (a_pts + b_pts)
        reach = 0.5 * np.linalg.norm(b_pts - a_pts, axis=1) + self._max_radius + self.eps_geo
        blocked = np.zeros(n_seg, dtype=bool)

        for start in range(0, n_seg, _SEGMENT_CHUNK):
            stop = min(n_seg, start + _SEGMENT_CHUNK)
            candidates = self._tree.query_ball_point(midpoints[start:stop], reach[start:stop])
            lengths = np.fromiter((len(c) for c in candidates), dtype=np.int64, count=stop - start)
            si = np.repeat(np.arange(start, stop), lengths)
            ti = np.fromiter((t for c in candidates for t in c), dtype=np.int64, count=int(lengths.sum()))
            blocked[self._blocked_segments(a_pts, b_pts, si, ti)] = True
        return ~blocked

    def exhaustive_segments_inside(self, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
        """Same contract as segments_inside, testing every triangle"""
        a_pts = np.atleast_2d(np.asarray(starts, dtype=float))
        b_pts = np.atleast_2d(np.asarray(ends, dtype=float))
        n_seg, n_tri = len(a_pts), self.n_triangles
        blocked = np.zeros(n_seg, dtype=bool)
        step = max(1, _CHUNK_PAIRS // n_tri)
        for start in range(0, n_seg, step):
            stop = min(n_seg, start + step)
            si = np.repeat(np.arange(start, stop), n_tri)
            ti = np.tile(np.arange(n_tri), stop - start)
            blocked[self._blocked_segments(a_pts, b_pts, si, ti)] = True
        return ~blocked

    def segment_inside(self, a: np.ndarray, b: np.ndarray) -> bool:
        return bool(self.segments_inside(np.reshape(a, (1, 3)), np.reshape(b, (1, 3)))[0])

    def sample_interior(self, n: int, rng: Rng, window: int = 100_000) -> np.ndarray:
        """
        Uniform rejection sampling of n interior points in the bounding box.

        Args:
            n (int): Number of points
            rng (Rng): Stream the candidates are drawn from
            window (int): Candidate count over which the acceptance rate is checked

        Returns:
            np.ndarray: (n, 3) interior points, identical for identical seeds

        Raises:
            RejectionBudgetExceeded: if fewer than 1e-4 of a window's candidates land inside
        """
        if n < 1:
            raise ValueError("n must be at least 1")
        generator = rng.generator()
        lo, hi = self.bbox
        accepted = []
        n_accepted = 0
        window_candidates = 0
        window_accepted = 0
        batch = max(1024, 2 * n)
        while n_accepted < n:
            candidates = generator.uniform(lo, hi, size=(batch, 3))
            keep = candidates[self.is_inside(candidates)]
            accepted.append(keep)
            n_accepted += len(keep)
            window_candidates += batch
            window_accepted += len(keep)
            if window_candidates >= window:
                if window_accepted < 1e-4 * window_candidates:
                    raise RejectionBudgetExceeded(
                        f"acceptance rate {window_accepted / window_candidates:.2e} over {window_candidates} candidates"
                    )
                window_candidates = 0
                window_accepted = 0
        return np.concatenate(accepted)[:n]

    def acceptance_rate(self, rng: Rng, n_candidates: int = 10_000) -> float:
        candidates = rng.generator().uniform(self.bbox[0], self.bbox[1], size=(n_candidates, 3))
        return float(np.mean(self.is_inside(candidates)))

    def __repr__(self) -> str:
        return f"BoundaryMesh(vertices={len(self.vertices)}, triangles={self.n_triangles}, bbox_diagonal={self.bbox_diagonal:.4g})"
