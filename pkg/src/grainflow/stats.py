"""Run statistics: grain sizes, size distribution, load balance, efficiency.

Everything here works on plain arrays of per-grain areas so the same code
serves a single-process mesh and merged per-worker contributions.  The
writers format floats with ``repr`` so a repeated run produces the same
bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh

# 25 uniform radius bins; grains past the top edge are counted in the last
# bin so the surface fractions always sum to one
DEFAULT_EDGES = np.linspace(0.0, 0.06, 26)


def surface_areas(mesh: Mesh):
    """Per-grain area of the live elements, as (ids, areas) sorted by id."""
    eids = mesh.alive_elems()
    if len(eids) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    areas = mesh.areas(eids)
    sids, inv = np.unique(mesh.surf[eids], return_inverse=True)
    return sids, np.bincount(inv, weights=areas)


def merge_areas(pieces):
    """Merge (ids, areas) pairs from several workers, summing by grain id."""
    ids = np.concatenate([p[0] for p in pieces])
    areas = np.concatenate([p[1] for p in pieces])
    sids, inv = np.unique(ids, return_inverse=True)
    return sids, np.bincount(inv, weights=areas)


def equivalent_radii(areas: np.ndarray) -> np.ndarray:
    """Radius of the circle with the same area, per grain."""
    return np.sqrt(np.asarray(areas, dtype=np.float64) / np.pi)


def mean_grain_size_weighted(areas) -> float:
    """Area-weighted mean equivalent radius in mm."""
    areas = np.asarray(areas, dtype=np.float64)
    if len(areas) == 0:
        raise ValueError("no grains")
    return float(np.sum(areas * equivalent_radii(areas)) / np.sum(areas))


def grain_size_histogram(areas, edges: np.ndarray | None = None) -> np.ndarray:
    """Surface-fraction histogram of equivalent radii over ``edges``."""
    areas = np.asarray(areas, dtype=np.float64)
    if len(areas) == 0:
        raise ValueError("no grains")
    if edges is None:
        edges = DEFAULT_EDGES
    radii = np.clip(equivalent_radii(areas), edges[0], edges[-1])
    hist, _ = np.histogram(radii, bins=edges, weights=areas)
    return hist / np.sum(areas)


def l2_error(h1: np.ndarray, h2: np.ndarray) -> float:
    """Relative L2 distance between two histograms (or series)."""
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    ref = float(np.sqrt(np.sum(h1 * h1)))
    if ref == 0.0:
        raise ValueError("reference is identically zero")
    return float(np.sqrt(np.sum((h1 - h2) ** 2))) / ref


def erom(counts) -> float:
    """Element range over mean: (max - min) / mean of per-worker counts."""
    counts = np.asarray(counts, dtype=np.float64)
    if len(counts) == 0:
        raise ValueError("no counts")
    mean = float(counts.mean())
    if mean == 0.0:
        raise ValueError("zero mean element count")
    return float(counts.max() - counts.min()) / mean


def efficiency(t_seq_inc: float, t_par_inc: float, n_p: int) -> float:
    """Parallel efficiency of one increment: t_seq / (t_par * n_p)."""
    if t_seq_inc <= 0.0 or t_par_inc <= 0.0:
        raise ValueError("increment times must be positive")
    if n_p < 1:
        raise ValueError("worker count must be at least 1")
    return t_seq_inc / (t_par_inc * n_p)


@dataclass
class StatsRecord:
    """One stats.csv row: global state after a given increment."""
    t: float
    grains: int
    mean_size_mm: float
    erom: float
    inc_wall_s: float
    elements: tuple[int, ...]


def stats_header(n_parts: int) -> list[str]:
    return (["t", "grains", "mean_size_mm", "erom", "inc_wall_s"]
            + [f"elements_p{i}" for i in range(n_parts)])


def write_stats_csv(path, records: list[StatsRecord]) -> None:
    if not records:
        raise ValueError("no records")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(stats_header(len(records[0].elements)))
        for r in records:
            w.writerow([repr(float(r.t)), r.grains, repr(float(r.mean_size_mm)),
                        repr(float(r.erom)), repr(float(r.inc_wall_s))]
                       + [int(c) for c in r.elements])


def read_stats_csv(path) -> list[StatsRecord]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    out = []
    for row in rows[1:]:
        out.append(StatsRecord(
            t=float(row[0]), grains=int(row[1]), mean_size_mm=float(row[2]),
            erom=float(row[3]), inc_wall_s=float(row[4]),
            elements=tuple(int(c) for c in row[5:])))
    return out


def write_hist_csv(path, fractions: np.ndarray,
                   edges: np.ndarray | None = None) -> None:
    if edges is None:
        edges = DEFAULT_EDGES
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["r_lo_mm", "r_hi_mm", "surface_fraction"])
        for lo, hi, frac in zip(edges[:-1], edges[1:], fractions):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(frac))])


def read_hist_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    edges = np.append(data[:, 0], data[-1, 1])
    return data[:, 2], edges


def write_timings_csv(path, wall_s: list[float]) -> None:
    """Measured per-increment wall times; kept out of stats.csv so repeated
    runs stay byte-identical there."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["inc", "wall_s"])
        for i, t in enumerate(wall_s, start=1):
            w.writerow([i, repr(float(t))])
