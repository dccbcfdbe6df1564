"""Curvature of boundary lines and junctions.

Lines are sampled by their node chains; a cubic spline through the chain,
parametrized by cumulative chord length, supplies the first and second
derivatives from which the curvature vector follows.  Open chains use natural
end conditions, closed loops periodic ones.  The returned vector is
orientation-invariant and points from the knot toward the local center of
curvature, with magnitude 1/radius.

Junctions get no spline.  Their curvature vector is built from the unit
vectors along the adjacent boundary edges,

    kn = 2 * sum(e_j / |e_j|) / sum(|e_j|),

which drives the junction toward the configuration where the arms balance.
Arms are summed in ascending neighbor id order so every owner of a shared
junction accumulates in the same order and lands on bit-identical floats.

All solves here are batched: the tridiagonal spline systems of every segment
are assembled into one block-diagonal banded matrix and solved in a single
``solve_banded`` call.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded


def chord_params(pts: np.ndarray) -> np.ndarray:
    """Cumulative chord length of a polyline, starting at zero."""
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(d)])


def curvature_from_derivs(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Curvature vectors from per-knot first and second derivatives.

    kn = (x'y'' - y'x'') / (x'^2 + y'^2)^2 * (-y', x'); the two sign flips
    under reversed traversal cancel, so the result is independent of the
    direction the chain was walked.
    """
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    speed2 = d1[:, 0] ** 2 + d1[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(speed2 > 0, cross / speed2 ** 2, 0.0)
    out = np.empty_like(d1)
    out[:, 0] = -f * d1[:, 1]
    out[:, 1] = f * d1[:, 0]
    return out


def open_spline_derivs(chains: list[np.ndarray]):
    """Natural-spline derivatives at the knots of many open chains at once.

    Returns a list of (d1, d2) pairs, each shaped like its chain.  Chains of
    one or two knots get zero second derivatives (a two-knot chain is linear,
    which leaves its curvature zero).
    """
    sizes = [len(c) for c in chains]
    total = int(np.sum(sizes))
    if total == 0:
        return []
    ab = np.zeros((3, total))
    rhs = np.zeros((total, 2))
    hs: list[np.ndarray] = []
    s = 0
    for c, n in zip(chains, sizes):
        t = chord_params(c)
        h = np.diff(t)
        hs.append(h)
        ab[1, s] = 1.0
        ab[1, s + n - 1] = 1.0
        if n >= 3:
            i = np.arange(1, n - 1)
            ab[1, s + i] = (h[i - 1] + h[i]) / 3.0
            ab[2, s + i - 1] = h[i - 1] / 6.0   # sub-diagonal, column s+i-1
            ab[0, s + i + 1] = h[i] / 6.0       # super-diagonal, column s+i+1
            dy = np.diff(c, axis=0)
            rhs[s + i] = dy[i] / h[i, None] - dy[i - 1] / h[i - 1, None]
        s += n
    m = solve_banded((1, 1), ab, rhs)
    out = []
    s = 0
    for c, n, h in zip(chains, sizes, hs):
        d2 = m[s:s + n]
        d1 = np.zeros_like(d2)
        if n >= 2:
            dy = np.diff(c, axis=0)
            d1[:-1] = dy / h[:, None] - h[:, None] * (2 * d2[:-1] + d2[1:]) / 6.0
            d1[-1] = (dy[-1] / h[-1]
                      + h[-1] * (2 * d2[-1] + d2[-2]) / 6.0)
        out.append((d1, d2))
        s += n
    return out


def open_curvature(chains: list[np.ndarray]) -> list[np.ndarray]:
    """Curvature vectors at the knots of many open chains."""
    return [curvature_from_derivs(d1, d2)
            for d1, d2 in open_spline_derivs(chains)]


def closed_spline_derivs(loop: np.ndarray):
    """Periodic-spline derivatives at the knots of one closed chain.

    ``loop`` lists each knot once; the closing knot is appended internally.
    """
    pts = np.vstack([loop, loop[:1]])
    t = chord_params(pts)
    sp = CubicSpline(t, pts, bc_type="periodic")
    tk = t[:-1]
    return sp(tk, 1), sp(tk, 2)


def closed_curvature(loop: np.ndarray) -> np.ndarray:
    d1, d2 = closed_spline_derivs(loop)
    return curvature_from_derivs(d1, d2)


def curvature_at(chain: np.ndarray, index: int) -> np.ndarray:
    """Curvature vector at one knot of a short open window.

    Used for partition-shared nodes: every owner passes the identical knot
    window, so the result agrees to the last bit.  The window uses not-a-knot
    end conditions; natural ends would press the second derivative to zero
    only two knots from the evaluation point and distort it badly.
    """
    pts = np.asarray(chain, dtype=np.float64)
    if len(pts) < 3:
        return np.zeros(2)
    t = chord_params(pts)
    sp = CubicSpline(t, pts, bc_type="not-a-knot")
    d1 = sp(t[index], 1)[None]
    d2 = sp(t[index], 2)[None]
    return curvature_from_derivs(d1, d2)[0]


def junction_curvature(center: np.ndarray, arms) -> np.ndarray:
    """Curvature vector of a junction from its adjacent boundary edges.

    ``arms`` yields (neighbor_id, position) pairs; they are sorted by id
    before accumulating so concurrent owners agree exactly.
    """
    total = 0.0
    acc = np.zeros(2)
    for _, p in sorted(arms, key=lambda a: a[0]):
        e = np.asarray(p, dtype=np.float64) - center
        norm = float(np.hypot(e[0], e[1]))
        if norm == 0.0:
            continue
        acc += e / norm
        total += norm
    if total == 0.0:
        return np.zeros(2)
    return 2.0 * acc / total
