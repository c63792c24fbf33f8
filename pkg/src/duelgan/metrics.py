"""Histogram metrics against the target plus mode and agreement diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .synth import MixtureSpec, mixture_density, nearest_component

DEFAULT_EXTENT = (-4.0, 4.0, -4.0, 4.0)
DEFAULT_BINS = 32
DEFAULT_SMOOTHING = 1e-10


class GridMismatchError(ValueError):
    pass


class MassBalanceError(ValueError):
    pass


@dataclass(frozen=True)
class GridHistogram:
    extent: tuple[float, float, float, float]
    bins_per_axis: int
    mass: np.ndarray  # (bins, bins), axis 0 is x
    out_of_range: int = 0

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        if m.shape != (self.bins_per_axis, self.bins_per_axis):
            raise ValueError(f"mass shape {m.shape} does not match {self.bins_per_axis} bins")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("histogram mass must be nonnegative and sum to 1")
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        object.__setattr__(self, "mass", m)

    @property
    def cell_width(self) -> tuple[float, float]:
        x0, x1, y0, y1 = self.extent
        return (x1 - x0) / self.bins_per_axis, (y1 - y0) / self.bins_per_axis

    def centers(self) -> np.ndarray:
        """Bin centers in ``mass.ravel()`` order, shape (bins**2, 2)."""
        x0, x1, y0, y1 = self.extent
        wx, wy = self.cell_width
        cx = x0 + wx * (np.arange(self.bins_per_axis) + 0.5)
        cy = y0 + wy * (np.arange(self.bins_per_axis) + 0.5)
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def same_grid(self, other: "GridHistogram") -> bool:
        return self.extent == other.extent and self.bins_per_axis == other.bins_per_axis


def histogram2d(points, extent=DEFAULT_EXTENT, bins: int = DEFAULT_BINS) -> GridHistogram:
    """Normalized counts on half-open cells; strays are clipped into edge bins."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 1 or bins < 2:
        raise ValueError("need at least one point and two bins")
    x0, x1, y0, y1 = extent
    ix = np.floor((pts[:, 0] - x0) / ((x1 - x0) / bins)).astype(np.int64)
    iy = np.floor((pts[:, 1] - y0) / ((y1 - y0) / bins)).astype(np.int64)
    outside = (ix < 0) | (ix >= bins) | (iy < 0) | (iy >= bins)
    ix = np.clip(ix, 0, bins - 1)
    iy = np.clip(iy, 0, bins - 1)
    counts = np.bincount(ix * bins + iy, minlength=bins * bins).astype(np.float64)
    return GridHistogram(tuple(extent), bins, (counts / len(pts)).reshape(bins, bins),
                         int(outside.sum()))


def reference_histogram(spec: MixtureSpec, extent=DEFAULT_EXTENT, bins: int = DEFAULT_BINS,
                        subgrid: int = 8) -> GridHistogram:
    """Exact binned density: midpoint rule on a ``subgrid`` x ``subgrid`` split of each bin."""
    x0, x1, y0, y1 = extent
    n = bins * subgrid
    hx, hy = (x1 - x0) / n, (y1 - y0) / n
    cx = x0 + hx * (np.arange(n) + 0.5)
    cy = y0 + hy * (np.arange(n) + 0.5)
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    dens = mixture_density(spec, np.stack([gx.ravel(), gy.ravel()], axis=1)).reshape(n, n)
    mass = (dens * hx * hy).reshape(bins, subgrid, bins, subgrid).sum(axis=(1, 3))
    return GridHistogram(tuple(extent), bins, mass / mass.sum())


def _check_grids(h_p: GridHistogram, h_q: GridHistogram):
    if not h_p.same_grid(h_q):
        raise GridMismatchError(
            f"grids differ: {h_p.extent}/{h_p.bins_per_axis} vs {h_q.extent}/{h_q.bins_per_axis}")


def symmetric_kl(h_p: GridHistogram, h_q: GridHistogram,
                 smoothing: float = DEFAULT_SMOOTHING) -> float:
    """KL(p||q) + KL(q||p) after adding ``smoothing`` to every bin and renormalizing."""
    _check_grids(h_p, h_q)
    if smoothing <= 0:
        raise ValueError("smoothing must be positive")
    p = h_p.mass.ravel() + smoothing
    q = h_q.mass.ravel() + smoothing
    p /= p.sum()
    q /= q.sum()
    return float(max(np.sum((p - q) * (np.log(p) - np.log(q))), 0.0))


# -- exact W1 via the transportation simplex ---------------------------------

@numba.njit(cache=True)
def _northwest_corner(a, b):
    n, m = a.shape[0], b.shape[0]
    rows = np.empty(n + m - 1, np.int64)
    cols = np.empty(n + m - 1, np.int64)
    flow = np.empty(n + m - 1, np.float64)
    s = a.copy()
    d = b.copy()
    i = 0
    j = 0
    for k in range(n + m - 1):
        x = min(s[i], d[j])
        rows[k] = i
        cols[k] = j
        flow[k] = x
        s[i] -= x
        d[j] -= x
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif s[i] <= d[j]:
            i += 1
        else:
            j += 1
    return rows, cols, flow


@numba.njit(cache=True)
def _tree(rows, cols, cost, n, m):
    """Parents, depths and dual potentials of the basis tree rooted at row 0."""
    nn = n + m
    deg = np.zeros(nn + 1, np.int64)
    for k in range(rows.shape[0]):
        deg[rows[k] + 1] += 1
        deg[n + cols[k] + 1] += 1
    for v in range(nn):
        deg[v + 1] += deg[v]
    fill = deg[:-1].copy()
    adj = np.empty(2 * rows.shape[0], np.int64)
    for k in range(rows.shape[0]):
        adj[fill[rows[k]]] = k
        fill[rows[k]] += 1
        adj[fill[n + cols[k]]] = k
        fill[n + cols[k]] += 1
    parent = np.full(nn, -1, np.int64)
    pedge = np.full(nn, -1, np.int64)
    depth = np.zeros(nn, np.int64)
    pot = np.zeros(nn, np.float64)
    seen = np.zeros(nn, np.bool_)
    queue = np.empty(nn, np.int64)
    queue[0] = 0
    seen[0] = True
    head, tail = 0, 1
    while head < tail:
        v = queue[head]
        head += 1
        for t in range(deg[v], deg[v + 1]):
            k = adj[t]
            w = n + cols[k] if v < n else rows[k]
            if not seen[w]:
                seen[w] = True
                parent[w] = v
                pedge[w] = k
                depth[w] = depth[v] + 1
                pot[w] = cost[rows[k], cols[k]] - pot[v]
                queue[tail] = w
                tail += 1
    return parent, pedge, depth, pot, tail == nn


@numba.njit(cache=True)
def _transport_simplex(a, b, cost, tol, max_pivots):
    n, m = a.shape[0], b.shape[0]
    rows, cols, flow = _northwest_corner(a, b)
    total = n * m
    block = max(64, int(np.sqrt(total)))
    start = 0
    bland = False
    pivots = 0
    path = np.empty(n + m, np.int64)
    while True:
        parent, pedge, depth, pot, ok = _tree(rows, cols, cost, n, m)
        if not ok:
            return np.nan, -1
        # pricing: block search normally, first-improving (Bland) after many pivots
        ent = -1
        best = -tol
        scanned = 0
        pos = 0 if bland else start
        while scanned < total:
            lim = min(block, total - scanned)
            for _ in range(lim):
                r = pos // m
                c = pos - r * m
                red = cost[r, c] - pot[r] - pot[n + c]
                if red < best:
                    best = red
                    ent = pos
                    if bland:
                        break
                pos += 1
                if pos == total:
                    pos = 0
            scanned += lim
            if ent >= 0:
                break
        if ent < 0:
            break
        start = pos
        er = ent // m
        ec = ent - er * m
        # cycle: entering cell, then the tree path from column ec back to row er
        u = n + ec
        v = er
        left = 0
        right_buf = np.empty(n + m, np.int64)
        right = 0
        while depth[u] > depth[v]:
            path[left] = pedge[u]
            left += 1
            u = parent[u]
        while depth[v] > depth[u]:
            right_buf[right] = pedge[v]
            right += 1
            v = parent[v]
        while u != v:
            path[left] = pedge[u]
            left += 1
            u = parent[u]
            right_buf[right] = pedge[v]
            right += 1
            v = parent[v]
        for t in range(right):
            path[left + t] = right_buf[right - 1 - t]
        plen = left + right
        # odd positions along the path lose flow
        theta = np.inf
        leave = -1
        for t in range(0, plen, 2):
            k = path[t]
            f = flow[k]
            if f < theta or (bland and f == theta and rows[k] * m + cols[k] < rows[leave] * m + cols[leave]):
                theta = f
                leave = k
        for t in range(plen):
            k = path[t]
            if t % 2 == 0:
                flow[k] -= theta
            else:
                flow[k] += theta
        rows[leave] = er
        cols[leave] = ec
        flow[leave] = theta
        pivots += 1
        if pivots > max_pivots:
            if bland:
                return np.nan, pivots
            bland = True
    obj = 0.0
    for k in range(rows.shape[0]):
        obj += flow[k] * cost[rows[k], cols[k]]
    return obj, pivots


def transport_cost(a, b, cost, tol: float = 1e-12) -> float:
    """Exact min-cost transport value for balanced supplies ``a`` and demands ``b``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if abs(a.sum() - b.sum()) > 1e-9:
        raise MassBalanceError(f"unbalanced masses: {a.sum()!r} vs {b.sum()!r}")
    if len(a) == 1:
        return float(b @ cost[0])
    if len(b) == 1:
        return float(a @ cost[:, 0])
    max_pivots = 50 * (len(a) + len(b)) ** 2
    obj, pivots = _transport_simplex(a, b, cost, tol * max(1.0, float(cost.max())), max_pivots)
    if not np.isfinite(obj):
        raise RuntimeError(f"transportation simplex failed after {pivots} pivots")
    return float(max(obj, 0.0))


def wasserstein_grid(h_p: GridHistogram, h_q: GridHistogram) -> float:
    """W1 between two histograms with Euclidean ground cost between bin centers."""
    _check_grids(h_p, h_q)
    p = h_p.mass.ravel()
    q = h_q.mass.ravel()
    if abs(p.sum() - q.sum()) > 1e-9:
        raise MassBalanceError(f"unbalanced masses: {p.sum()!r} vs {q.sum()!r}")
    if np.array_equal(p, q):
        return 0.0
    ip = np.flatnonzero(p)
    iq = np.flatnonzero(q)
    centers = h_p.centers()
    cost = np.linalg.norm(centers[ip][:, None, :] - centers[iq][None, :, :], axis=2)
    return transport_cost(p[ip] / p[ip].sum(), q[iq] / q[iq].sum(), cost)


def mode_coverage(points, spec: MixtureSpec, sigma_mult: float = 3.0,
                  capture_frac: float = 0.02) -> tuple[int, float]:
    """(modes captured, high-quality fraction).

    A point is high quality when it lies within ``sigma_mult`` standard
    deviations of its nearest mode; a mode is captured when at least
    ``capture_frac`` of all points are high quality and nearest to it.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 1:
        raise ValueError("need at least one point")
    idx, dist = nearest_component(spec, pts)
    sigma = np.sqrt(np.trace(spec.covariances, axis1=1, axis2=2) / 2.0)
    hq = dist <= sigma_mult * sigma[idx]
    per_mode = np.bincount(idx[hq], minlength=spec.n_components)
    captured = int(np.sum(per_mode >= capture_frac * len(pts)))
    return captured, float(hq.mean())


def agreement_level(d1_out, d2_out) -> float:
    d1 = np.asarray(d1_out, dtype=np.float64).ravel()
    d2 = np.asarray(d2_out, dtype=np.float64).ravel()
    if d1.shape != d2.shape:
        raise ValueError(f"length mismatch: {d1.shape} vs {d2.shape}")
    return float(np.mean((d1 > 0.5) == (d2 > 0.5)))
