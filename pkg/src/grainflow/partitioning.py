"""Splitting the element mesh into per-worker partitions.

The built-in partitioner works on the dual graph: patches grow by breadth
first search from seeds spread far apart, then boundary elements are traded
until the patch sizes balance.  It is deliberately simple and fully
deterministic; anything smarter can be plugged in through the partition file
format (one ``elem_id part_rank`` pair per line).

``restrict_mesh`` cuts one partition out of a full mesh while keeping global
ids and per-node data.  Chain links that point at nodes the partition does
not hold are nulled, exactly the state a worker would be in had it received
its elements over the wire.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .mesh import Mesh, NULL_ID, LNODE, dual_graph

BALANCE_FRAC = 0.05

# trades per refinement attempt before giving up on a graph-constrained split
_REFINE_CAP_FACTOR = 4


def initial_partition(mesh: Mesh, n_parts: int) -> np.ndarray:
    """Assign every live element to a part; index the result by element id.

    Dead slots hold NULL_ID.  The split is exhaustive and pairwise disjoint
    by construction; sizes end within ``BALANCE_FRAC`` of the mean whenever
    the adjacency allows it.
    """
    elems = [int(e) for e in mesh.alive_elems()]
    if n_parts < 1:
        raise ValueError("n_parts must be at least 1")
    if n_parts > len(elems):
        raise ValueError(
            f"cannot split {len(elems)} elements into {n_parts} parts")
    parts = np.full(len(mesh.surf), NULL_ID, dtype=np.int64)
    if n_parts == 1:
        parts[elems] = 0
        return parts

    adj = dual_graph(mesh)
    seeds = _spread_seeds(adj, elems, n_parts)
    _grow_patches(parts, adj, elems, seeds)
    _rebalance(parts, adj, elems, n_parts)
    return parts


def _spread_seeds(adj: dict[int, set[int]], elems: list[int],
                  n_parts: int) -> list[int]:
    """First seed is the lowest element id; each next seed maximizes the
    BFS hop distance to all previous ones (unreached components first)."""
    seeds = [elems[0]]
    for _ in range(1, n_parts):
        dist = _multi_source_hops(adj, elems, seeds)
        best = max(elems, key=lambda e: (dist.get(e, np.inf), -e))
        seeds.append(best)
    return seeds


def _multi_source_hops(adj, elems, sources) -> dict[int, int]:
    dist = {s: 0 for s in sources}
    q = deque(sources)
    while q:
        e = q.popleft()
        for m in sorted(adj.get(e, ())):
            if m not in dist:
                dist[m] = dist[e] + 1
                q.append(m)
    return dist


def _grow_patches(parts, adj, elems, seeds) -> None:
    n_parts = len(seeds)
    sizes = [0] * n_parts
    frontiers = [deque([s]) for s in seeds]
    unassigned = set(elems)

    def claim(p: int, e: int) -> None:
        parts[e] = p
        unassigned.discard(e)
        sizes[p] += 1
        frontiers[p].extend(m for m in sorted(adj.get(e, ()))
                            if m in unassigned)

    while unassigned:
        order = sorted(range(n_parts), key=lambda p: (sizes[p], p))
        grew = False
        for p in order:
            f = frontiers[p]
            while f:
                e = f.popleft()
                if e in unassigned:
                    claim(p, e)
                    grew = True
                    break
            if grew:
                break
        if not grew:
            # disconnected leftovers: restart the smallest part there
            p = order[0]
            frontiers[p].append(min(unassigned))


def _rebalance(parts, adj, elems, n_parts) -> None:
    sizes = [0] * n_parts
    for e in elems:
        sizes[parts[e]] += 1
    mean = len(elems) / n_parts
    tol = max(1, round(BALANCE_FRAC * mean))

    for _ in range(_REFINE_CAP_FACTOR * len(elems)):
        if max(sizes) - min(sizes) <= tol:
            break
        move = _pick_trade(parts, adj, elems, sizes)
        if move is None:
            break
        e, dst = move
        sizes[parts[e]] -= 1
        sizes[dst] += 1
        parts[e] = dst


def _pick_trade(parts, adj, elems, sizes):
    """Smallest-id boundary element of an oversized part, moved to its
    smallest adjacent part; only strictly improving trades are taken."""
    by_size = sorted(range(len(sizes)), key=lambda p: (-sizes[p], p))
    for src in by_size:
        if sizes[src] == min(sizes):
            break
        for e in elems:
            if parts[e] != src:
                continue
            targets = {int(parts[m]) for m in adj.get(e, ())
                       if parts[m] != src and parts[m] != NULL_ID}
            targets = {t for t in targets if sizes[t] <= sizes[src] - 2}
            if targets:
                dst = min(targets, key=lambda t: (sizes[t], t))
                return e, dst
    return None


def restrict_mesh(mesh: Mesh, parts: np.ndarray, rank: int) -> Mesh:
    """The sub-mesh of one part, with global ids and node data intact."""
    sub = Mesh()
    for e in mesh.alive_elems():
        e = int(e)
        if parts[e] != rank:
            continue
        for n in mesh.tri[e]:
            n = int(n)
            if not sub.alive_node(n):
                sub.add_node(n, mesh.pos[n], topo=int(mesh.topo[n]),
                             entity=int(mesh.entity[n]), bnd=int(mesh.bnd[n]))
        sub.add_element(e, mesh.tri[e], int(mesh.surf[e]))
    # a chain link survives only when the referenced node came along too
    for n in sub.alive_nodes():
        n = int(n)
        if sub.topo[n] != LNODE:
            continue
        for attr in ("prv", "nxt"):
            m = int(getattr(mesh, attr)[n])
            if m != NULL_ID and sub.alive_node(m):
                getattr(sub, attr)[n] = m
    return sub


def save_partition(path, parts: np.ndarray) -> None:
    with open(path, "w") as f:
        for e in np.flatnonzero(parts != NULL_ID):
            f.write(f"{int(e)} {int(parts[e])}\n")


def load_partition(path, n_elems: int) -> np.ndarray:
    parts = np.full(n_elems, NULL_ID, dtype=np.int64)
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            e, p = line.split()
            parts[int(e)] = int(p)
    return parts
