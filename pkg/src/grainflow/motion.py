"""Curvature-driven interface motion.

Node velocities follow v = m * kappa, with m the reduced mobility and kappa
the curvature vector of the interface: spline-evaluated along line chains,
and assembled from the adjacent boundary edges at junctions.  Wall nodes are
constrained to slide along their wall and corners never move.  Positions
advance with flip protection, subdividing the time step whenever the fastest
node would otherwise cross a sizable fraction of the target spacing.

Junctions where more than three interfaces meet are unstable; they are
decomposed into triple junctions by peeling off the closest pair of arms
onto a new junction a small offset away, repeatedly until every junction is
triple.  The peel retriangulates the patch in place, so total area is
conserved exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.constants import R as GAS_CONSTANT

from .entities import (KIND_LINE, KIND_POINT, EntityGraph, Line, Point,
                       is_interface_edge, line_segments, lnodes_by_line)
from .geometry import closed_curvature, junction_curvature, open_curvature
from .mesh import (BND_CORNER, BND_TANGENT_X, BND_TANGENT_Y, LNODE, PNODE,
                   Mesh, TopologyError, _tri_area, is_domain_boundary_edge)
from .remesh import MIN_AREA, RemeshCtx, remesh_pass, settle_offsets
from .state import SimState

MOBILITY_PREFACTOR = 1.56e11    # mm^4 / (J s)
ACTIVATION_ENERGY = 2.8e5       # J / mol
BOUNDARY_ENERGY = 6.0e-7        # J / mm^2
DEFAULT_TEMPERATURE = 1323.0    # K

JUNCTION_OFFSET_FRAC = 0.3      # peel distance for decomposition, in units of h


def reduced_mobility(temperature: float = DEFAULT_TEMPERATURE,
                     prefactor: float = MOBILITY_PREFACTOR,
                     activation: float = ACTIVATION_ENERGY,
                     energy: float = BOUNDARY_ENERGY) -> float:
    """Product M * gamma in mm^2/s; defaults describe an austenitic steel."""
    return prefactor * np.exp(-activation / (GAS_CONSTANT * temperature)) * energy


def junction_arms(mesh: Mesh, nid: int) -> list[tuple[int, np.ndarray]]:
    """(neighbor, position) pairs of the boundary edges leaving a junction."""
    return [(n, mesh.pos[n]) for n in mesh.node_neighbors(nid)
            if is_interface_edge(mesh, nid, n)]


def constrain_to_walls(mesh: Mesh, vel: np.ndarray) -> None:
    """Project velocities onto the walls; corners are pinned."""
    vel[mesh.bnd == BND_TANGENT_X, 1] = 0.0
    vel[mesh.bnd == BND_TANGENT_Y, 0] = 0.0
    vel[mesh.bnd == BND_CORNER] = 0.0


def node_velocities(mesh: Mesh, graph: EntityGraph,
                    mobility: float) -> np.ndarray:
    """Curvature velocity for every line and junction node, walls applied.

    Bulk nodes carry zero velocity; they follow through smoothing.
    """
    vel = np.zeros_like(mesh.pos)
    members = lnodes_by_line(mesh)
    chains = []
    for lid in sorted(graph.lines):
        for seg in line_segments(mesh, lid, members.get(lid, [])):
            if seg.closed:
                ids = np.asarray(seg.nodes)
                vel[ids] = mobility * closed_curvature(mesh.pos[ids])
            else:
                chains.append(np.asarray(seg.nodes))
    if chains:
        for ids, kap in zip(chains, open_curvature([mesh.pos[c]
                                                    for c in chains])):
            line_nodes = mesh.topo[ids] == LNODE
            vel[ids[line_nodes]] = mobility * kap[line_nodes]
    for pid in sorted(graph.points):
        n = graph.points[pid].node
        vel[n] = mobility * junction_curvature(mesh.pos[n],
                                               junction_arms(mesh, n))
    constrain_to_walls(mesh, vel)
    return vel


def move_nodes(mesh: Mesh, vel: np.ndarray, dt: float) -> int:
    """Advance nodes by vel * dt, backing off wherever elements would flip."""
    nodes = mesh.alive_nodes()
    nodes = nodes[(vel[nodes] != 0.0).any(axis=1)]
    return settle_offsets(mesh, nodes, vel[nodes] * dt)


# -- junction decomposition --------------------------------------------------

def _patch_ring(mesh: Mesh, nid: int) -> tuple[list[int], bool]:
    """Neighbors of a node in counterclockwise patch order.

    Returns the ring and whether it closes; wall patches are open arcs
    running from the clockwise-most neighbor to the counterclockwise-most.
    """
    succ: dict[int, int] = {}
    for eid in mesh.n2e[nid]:
        a, b, c = (int(x) for x in mesh.tri[eid])
        if a == nid:
            u, v = b, c
        elif b == nid:
            u, v = c, a
        else:
            u, v = a, b
        succ[u] = v
    starts = sorted(set(succ) - set(succ.values()))
    if len(starts) > 1:
        raise TopologyError(f"patch of node {nid} is not a disk")
    cur = starts[0] if starts else min(succ)
    ring = [cur]
    while True:
        nxt = succ.get(ring[-1])
        if nxt is None or nxt == ring[0]:
            return ring, nxt == ring[0]
        ring.append(nxt)


def _zero_lnode_line(graph: EntityGraph, members: dict[int, list[int]],
                     pa: Point, pb: Point) -> int:
    """The direct line joining two junctions, carrying no chain nodes."""
    common = {lid for k, lid in pa.connections if k == KIND_LINE} \
        & {lid for k, lid in pb.connections if k == KIND_LINE}
    direct = sorted(l for l in common if not members.get(l))
    if not direct:
        raise TopologyError(f"no direct line between points {pa.id}, {pb.id}")
    return direct[0]


def _split_junction(mesh: Mesh, graph: EntityGraph, alloc, nid: int,
                    delta: float) -> bool:
    """Peel the closest non-wall arm pair of a junction onto a new point."""
    ring, closed = _patch_ring(mesh, nid)
    arms = [x for x in ring if is_interface_edge(mesh, nid, x)]
    if len(arms) <= 3:
        return False
    center = mesh.pos[nid].copy()
    on_wall = {x for x in arms if is_domain_boundary_edge(mesh, nid, x)}
    pairs = list(zip(arms, arms[1:]))
    if closed:
        pairs.append((arms[-1], arms[0]))
    best = None
    for u, v in pairs:
        if u in on_wall or v in on_wall:
            continue
        eu = mesh.pos[u] - center
        ev = mesh.pos[v] - center
        au = np.arctan2(eu[1], eu[0])
        gap = (np.arctan2(ev[1], ev[0]) - au) % (2.0 * np.pi)
        if best is None or (gap, u, v) < best[:3]:
            best = (gap, u, v, au)
    if best is None:
        return False
    gap, a, b, a_ang = best
    bis = np.array([np.cos(a_ang + 0.5 * gap), np.sin(a_ang + 0.5 * gap)])

    # the moving fan runs one element beyond each arm, so the arm edges
    # detach cleanly and the two filler triangles sit on interior edges
    size = len(ring)
    ia, ib = ring.index(a), ring.index(b)
    span = (ib - ia) % size if closed else ib - ia
    arc = [ring[(ia - 1 + j) % size] for j in range(span + 3)]
    c1, c2 = arc[0], arc[-1]
    fan = []
    for u, v in zip(arc, arc[1:]):
        eids = set(mesh.edge_elements(u, v)) & mesh.n2e[nid]
        if len(eids) != 1:
            raise TopologyError(f"broken fan at junction node {nid}")
        fan.append(eids.pop())
    fan_tri = mesh.tri[fan].copy()
    fan_mask = fan_tri == nid

    d = delta
    while True:
        m_pos = center + d * bis
        p = mesh.pos[fan_tri]
        p[fan_mask] = m_pos
        ok = (_tri_area(p) > MIN_AREA).all()
        tris = np.array([[center, mesh.pos[c1], m_pos],
                         [center, m_pos, mesh.pos[c2]]])
        ok = ok and (_tri_area(tris) > MIN_AREA).all()
        if ok:
            break
        d *= 0.5
        if d < 0.1 * delta:
            return False

    members = lnodes_by_line(mesh)
    p_pt = graph.point_at(mesh, nid)
    m_nid = alloc.nodes.take()
    m_pid = graph.next_id(KIND_POINT)
    lid_new = graph.next_id(KIND_LINE)
    mesh.add_node(m_nid, m_pos, topo=PNODE, entity=m_pid)
    for eid in fan:
        mesh.replace_node_in_element(eid, nid, m_nid)
    surf1 = int(mesh.surf[fan[0]])
    surf2 = int(mesh.surf[fan[-1]])
    mesh.add_element(alloc.elems.take(), (nid, c1, m_nid), surf1)
    mesh.add_element(alloc.elems.take(), (nid, m_nid, c2), surf2)

    moved_lids = set()
    for x in (a, b):
        if mesh.topo[x] == LNODE:
            moved_lids.add(int(mesh.entity[x]))
            if int(mesh.prv[x]) == nid:
                mesh.prv[x] = m_nid
            if int(mesh.nxt[x]) == nid:
                mesh.nxt[x] = m_nid
        else:
            moved_lids.add(_zero_lnode_line(graph, members, p_pt,
                                            graph.point_at(mesh, x)))
    p_pt.connections -= {(KIND_LINE, l) for l in moved_lids}
    p_pt.connections.add((KIND_LINE, lid_new))
    graph.points[m_pid] = Point(m_pid, m_nid,
                                {(KIND_LINE, l) for l in moved_lids}
                                | {(KIND_LINE, lid_new)})
    graph.lines[lid_new] = Line(lid_new)
    return True


def decompose_junctions(mesh: Mesh, graph: EntityGraph, alloc, params,
                        skip_shared: bool = True) -> int:
    """Split every junction with more than three arms; returns the count."""
    delta = JUNCTION_OFFSET_FRAC * params.h
    done = 0
    for pid in sorted(graph.points):
        pt = graph.points.get(pid)
        if pt is None:
            continue
        if skip_shared and mesh.is_shared(pt.node):
            continue
        while _split_junction(mesh, graph, alloc, pt.node, delta):
            done += 1
    return done


# -- time stepping -----------------------------------------------------------

def gg_increment(state: SimState, dt: float, mobility: float | None = None,
                 max_travel_frac: float = 0.25):
    """One sequential evolution increment.

    Mesh maintenance runs first, then junction decomposition, then motion.
    The motion substep count is chosen so no node travels more than
    ``max_travel_frac * h`` per substep, with velocities recomputed between
    substeps.
    """
    if mobility is None:
        mobility = reduced_mobility()
    ctx = RemeshCtx(state.mesh, state.graph, state.alloc, state.params)
    stats = remesh_pass(ctx)
    decompose_junctions(state.mesh, state.graph, state.alloc, state.params,
                        skip_shared=state.n_parts > 1)
    cap = max_travel_frac * state.params.h
    vel = node_velocities(state.mesh, state.graph, mobility)
    vmax = float(np.linalg.norm(vel, axis=1).max()) if len(vel) else 0.0
    n_sub = max(1, int(np.ceil(vmax * dt / cap))) if vmax > 0.0 else 1
    for i in range(n_sub):
        if i > 0:
            vel = node_velocities(state.mesh, state.graph, mobility)
        move_nodes(state.mesh, vel, dt / n_sub)
    return stats
