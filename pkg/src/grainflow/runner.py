"""Experiment driver: one configuration in, a directory of artifacts out.

A run tessellates the starting structure, evolves it for a fixed number of
increments and emits stats.csv, timings.csv plus VTK snapshots and grain
size histograms at the configured cadence.  With one worker the sequential
increment is used directly; with several, every worker executes the same
driver body in lockstep and rank 0 alone touches the disk.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, fields

import numpy as np

from .entities import reconstruct_entities, tag_nodes
from .mesh import Mesh, write_vtk
from .motion import gg_increment, reduced_mobility
from .partitioning import initial_partition, load_partition
from .protocol import bootstrap_state, parallel_increment
from .state import SimState
from .stats import (StatsRecord, erom, grain_size_histogram,
                    mean_grain_size_weighted, merge_areas, surface_areas,
                    write_hist_csv, write_stats_csv, write_timings_csv)
from .tessellation import tessellate
from .transport import MpiTransport, Transport, run_workers

BACKENDS = ("inproc", "mp")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything one experiment needs; mirrors the key=value config file."""
    domain: float = 1.0          # square side, mm
    grains: int = 500
    h: float = 0.004             # target spacing, mm
    dt: float = 10.0             # s
    temperature: float = 1323.0  # K
    increments: int = 10
    n_parts: int = 1
    seed: int = 0
    backend: str = "inproc"
    out: str = "out"
    output_every: int = 0        # 0: final snapshot only
    partition_file: str = ""

    def validate(self) -> None:
        if self.domain <= 0 or self.h <= 0 or self.dt <= 0 or self.temperature <= 0:
            raise ConfigError("domain, h, dt and temperature must be positive")
        if self.grains < 1:
            raise ConfigError("need at least one grain")
        if self.increments < 0:
            raise ConfigError("increments must be non-negative")
        if self.n_parts < 1:
            raise ConfigError("n_parts must be at least 1")
        if self.output_every < 0:
            raise ConfigError("output_every must be non-negative")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")


def parse_config(path) -> dict[str, str]:
    """Flat key=value lines; blank lines and # comments are skipped."""
    values: dict[str, str] = {}
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
    return values


def make_config(file_values: dict[str, str] | None = None, **overrides) -> RunConfig:
    """Build a config from file values with explicit overrides winning."""
    types = {f.name: f.type for f in fields(RunConfig)}
    casts = {"float": float, "int": int, "str": str}
    merged: dict = {}
    for key, val in (file_values or {}).items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = casts[types[key]](val)
    for key, val in overrides.items():
        if val is not None:
            merged[key] = val
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


def _build_initial(cfg: RunConfig) -> Mesh:
    rng = np.random.default_rng(cfg.seed)
    mesh, _, _ = tessellate(rng, cfg.domain, cfg.domain, cfg.grains, cfg.h)
    return mesh


def _due(cfg: RunConfig, inc: int) -> bool:
    if inc == cfg.increments:
        return True
    return cfg.output_every > 0 and inc % cfg.output_every == 0


def _record(t: float, areas: np.ndarray, counts, wall: float) -> StatsRecord:
    return StatsRecord(t=t, grains=len(areas),
                       mean_size_mm=mean_grain_size_weighted(areas),
                       erom=erom(counts), inc_wall_s=wall,
                       elements=tuple(int(c) for c in counts))


class _Emitter:
    """Rank-0 output writer; snapshot/histogram numbering is the increment."""

    def __init__(self, cfg: RunConfig) -> None:
        self.cfg = cfg
        self.records: list[StatsRecord] = []
        self.walls: list[float] = []

    def step(self, inc: int, areas: np.ndarray, counts, wall: float,
             mesh: Mesh | None) -> None:
        self.records.append(_record(inc * self.cfg.dt, areas, counts, 0.0))
        if inc > 0:
            self.walls.append(wall)
        if mesh is not None:
            write_vtk(mesh, os.path.join(self.cfg.out, f"snapshot_{inc:04d}.vtk"))
            write_hist_csv(os.path.join(self.cfg.out, f"hist_{inc:04d}.csv"),
                           grain_size_histogram(areas))

    def finish(self) -> None:
        write_stats_csv(os.path.join(self.cfg.out, "stats.csv"), self.records)
        write_timings_csv(os.path.join(self.cfg.out, "timings.csv"), self.walls)


def _run_sequential(cfg: RunConfig) -> None:
    mesh = _build_initial(cfg)
    tag_nodes(mesh)
    graph = reconstruct_entities(mesh)
    state = SimState.sequential(mesh, graph, cfg.h)
    mobility = reduced_mobility(temperature=cfg.temperature)
    emit = _Emitter(cfg)

    def snapshot(inc: int, wall: float) -> None:
        _, areas = surface_areas(mesh)
        counts = (len(mesh.alive_elems()),)
        emit.step(inc, areas, counts, wall, mesh if _due(cfg, inc) else None)

    snapshot(0, 0.0)
    for inc in range(1, cfg.increments + 1):
        t0 = time.perf_counter()
        gg_increment(state, cfg.dt, mobility)
        snapshot(inc, time.perf_counter() - t0)
    emit.finish()


# -- multi-worker path -------------------------------------------------------

def _pack_areas(sids: np.ndarray, areas: np.ndarray) -> bytes:
    return (np.int64(len(sids)).tobytes() + sids.astype(np.int64).tobytes()
            + areas.astype(np.float64).tobytes())

def _unpack_areas(buf: bytes):
    n = int(np.frombuffer(buf[:8], dtype=np.int64)[0])
    sids = np.frombuffer(buf[8:8 + 8 * n], dtype=np.int64)
    areas = np.frombuffer(buf[8 + 8 * n:8 + 16 * n], dtype=np.float64)
    return sids, areas


def _pack_piece(mesh: Mesh) -> bytes:
    nids = mesh.alive_nodes()
    eids = mesh.alive_elems()
    return b"".join([
        np.int64(len(nids)).tobytes(), nids.astype(np.int64).tobytes(),
        mesh.pos[nids].astype(np.float64).tobytes(),
        np.int64(len(eids)).tobytes(), eids.astype(np.int64).tobytes(),
        mesh.tri[eids].astype(np.int64).tobytes(),
        mesh.surf[eids].astype(np.int64).tobytes(),
    ])

def _unpack_piece(buf: bytes):
    off = 0
    n = int(np.frombuffer(buf[off:off + 8], dtype=np.int64)[0]); off += 8
    nids = np.frombuffer(buf[off:off + 8 * n], dtype=np.int64); off += 8 * n
    pos = np.frombuffer(buf[off:off + 16 * n], dtype=np.float64).reshape(n, 2)
    off += 16 * n
    m = int(np.frombuffer(buf[off:off + 8], dtype=np.int64)[0]); off += 8
    eids = np.frombuffer(buf[off:off + 8 * m], dtype=np.int64); off += 8 * m
    tri = np.frombuffer(buf[off:off + 24 * m], dtype=np.int64).reshape(m, 3)
    off += 24 * m
    surf = np.frombuffer(buf[off:off + 8 * m], dtype=np.int64)
    return nids, pos, eids, tri, surf


def assemble_global(pieces) -> Mesh:
    """Merge per-worker meshes into one; element ownership is disjoint and
    coupling nodes carry identical coordinates on every owner."""
    mesh = Mesh()
    for buf in pieces:
        nids, pos, eids, tri, surf = _unpack_piece(buf)
        for nid, xy in zip(nids, pos):
            if nid >= len(mesh.node_alive) or not mesh.node_alive[nid]:
                mesh.add_node(int(nid), xy)
        for eid, row, sid in zip(eids, tri, surf):
            mesh.add_element(int(eid), row, int(sid))
    return mesh


def _run_worker(transport: Transport, cfg: RunConfig) -> None:
    full = _build_initial(cfg)
    if cfg.partition_file:
        parts = load_partition(cfg.partition_file, len(full.elem_alive))
    else:
        parts = initial_partition(full, cfg.n_parts)
    state = bootstrap_state(transport, full, parts, cfg.h)
    mesh = state.mesh
    mobility = reduced_mobility(temperature=cfg.temperature)
    emit = _Emitter(cfg) if transport.rank == 0 else None

    def snapshot(inc: int, wall: float) -> None:
        gathered = transport.all_gather(_pack_areas(*surface_areas(mesh)))
        counts = [int(np.frombuffer(b[:8], dtype=np.int64)[0]) for b in
                  transport.all_gather(np.int64(len(mesh.alive_elems())).tobytes())]
        piece = _pack_piece(mesh) if _due(cfg, inc) else b""
        pieces = transport.all_gather(piece)
        if emit is not None:
            _, areas = merge_areas([_unpack_areas(b) for b in gathered])
            emit.step(inc, areas, counts, wall,
                      assemble_global(pieces) if _due(cfg, inc) else None)

    snapshot(0, 0.0)
    for inc in range(1, cfg.increments + 1):
        t0 = time.perf_counter()
        parallel_increment(transport, state, cfg.dt, mobility)
        snapshot(inc, time.perf_counter() - t0)
    if emit is not None:
        emit.finish()


def run(cfg: RunConfig) -> None:
    """Execute one experiment and write its artifacts under ``cfg.out``."""
    cfg.validate()
    os.makedirs(cfg.out, exist_ok=True)
    if cfg.n_parts == 1:
        _run_sequential(cfg)
    elif cfg.backend == "inproc":
        run_workers(cfg.n_parts, lambda t: _run_worker(t, cfg))
    else:
        transport = MpiTransport()
        if transport.size != cfg.n_parts:
            raise ConfigError(
                f"launched with {transport.size} ranks but n_parts={cfg.n_parts}")
        _run_worker(transport, cfg)
