"""Layered multi-modal network: grid construction, zones, depots, shortest paths."""
from __future__ import annotations

import heapq
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra


class NetworkError(Exception):
    pass


class Layer(str, Enum):
    METRO = "metro"
    TRAIN = "train"
    BUS = "bus"
    VEHICLE = "vehicle"
    CONNECTION = "connection"


TRANSIT_LAYERS = (Layer.METRO, Layer.TRAIN, Layer.BUS)


@dataclass(frozen=True)
class Node:
    id: int
    layer: Layer
    x: float
    y: float
    zone_id: int


@dataclass(frozen=True)
class Edge:
    id: int
    u: int
    v: int
    layer: Layer
    length: float          # meters
    base_time: float = 0.0  # seconds; walking time on connection edges
    line_id: int | None = None


@dataclass(frozen=True)
class TransitLineRef:
    id: int
    mode: Layer
    stations: tuple[int, ...]   # node ids on the line's own layer, in order
    headway: float              # seconds

    @property
    def name(self) -> str:
        return f"{self.mode.value}-{self.id}"


@dataclass
class Depot:
    id: int
    node: int                   # vehicle-layer node id
    capacity: int
    service_area: frozenset[int] = frozenset()


@dataclass
class Path:
    nodes: list[int]
    edges: list[int]
    cost: float


class MultiModalGraph:
    """Undirected layered graph. Immutable after build except the edge mask."""

    def __init__(self, nodes: list[Node], edges: list[Edge],
                 lines: list[TransitLineRef], depots: list[Depot],
                 zone_size: float, zones_x: int, zones_y: int,
                 zone_classes: list[str] | None = None):
        self.nodes = nodes
        self.edges = edges
        self.lines = lines
        self.depots = depots
        self.zone_size = zone_size
        self.zones_x = zones_x
        self.zones_y = zones_y
        self.zone_classes = zone_classes or ["suburban"] * (zones_x * zones_y)
        self.active = np.ones(len(edges), dtype=bool)
        self.mask_version = 0
        self._adj: list[list[tuple[int, int]]] = [[] for _ in nodes]
        for e in edges:
            self._adj[e.u].append((e.id, e.v))
            self._adj[e.v].append((e.id, e.u))
        self.node_x = np.array([n.x for n in nodes])
        self.node_y = np.array([n.y for n in nodes])
        self.node_zone = np.array([n.zone_id for n in nodes], dtype=int)
        self.vehicle_nodes = [n.id for n in nodes if n.layer is Layer.VEHICLE]
        self._vehicle_set = set(self.vehicle_nodes)
        self._csr_cache: dict = {}
        self._depot_by_node: dict[int, int] = {}

    # -- zones ---------------------------------------------------------------

    @property
    def n_zones(self) -> int:
        return self.zones_x * self.zones_y

    def zone_of_point(self, x: float, y: float) -> int:
        col = min(int(x // self.zone_size), self.zones_x - 1)
        row = min(int(y // self.zone_size), self.zones_y - 1)
        return row * self.zones_x + col

    def road_length_by_zone(self) -> np.ndarray:
        out = np.zeros(self.n_zones)
        for e in self.edges:
            if e.layer is not Layer.VEHICLE:
                continue
            mx = (self.nodes[e.u].x + self.nodes[e.v].x) / 2
            my = (self.nodes[e.u].y + self.nodes[e.v].y) / 2
            out[self.zone_of_point(mx, my)] += e.length
        return out

    # -- mask ----------------------------------------------------------------

    def deactivate_edges(self, edge_ids) -> None:
        self.active[list(edge_ids)] = False
        self.mask_version += 1

    def activate_edges(self, edge_ids) -> None:
        self.active[list(edge_ids)] = True
        self.mask_version += 1

    def adjacency(self, node_id: int):
        return self._adj[node_id]

    def edges_incident(self, node_id: int, layer: Layer | None = None):
        out = []
        for eid, _ in self._adj[node_id]:
            if layer is None or self.edges[eid].layer is layer:
                out.append(eid)
        return out

    # -- weights & sparse form -------------------------------------------------

    def travel_time_weights(self, speed_by_layer: dict[Layer, float]) -> np.ndarray:
        """Per-edge traversal seconds; inf for layers absent from the map.

        Connection edges cost their base_time; transit/vehicle edges cost
        length over the given layer speed."""
        w = np.full(len(self.edges), np.inf)
        for e in self.edges:
            if e.layer is Layer.CONNECTION:
                w[e.id] = e.base_time
            elif e.layer in speed_by_layer:
                w[e.id] = e.length / speed_by_layer[e.layer]
        return w

    def csr(self, weights: np.ndarray, respect_mask: bool = True) -> csr_matrix:
        """Symmetric CSR of finite-weight, active edges."""
        key = (weights.tobytes(), self.mask_version if respect_mask else -1)
        hit = self._csr_cache.get(key)
        if hit is not None:
            return hit
        ok = np.isfinite(weights)
        if respect_mask:
            ok = ok & self.active
        us = np.array([e.u for e in self.edges])[ok]
        vs = np.array([e.v for e in self.edges])[ok]
        ws = weights[ok]
        n = len(self.nodes)
        m = csr_matrix((np.concatenate([ws, ws]),
                        (np.concatenate([us, vs]), np.concatenate([vs, us]))),
                       shape=(n, n))
        if len(self._csr_cache) > 32:
            self._csr_cache.clear()
        self._csr_cache[key] = m
        return m

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": 1,
            "zone_size": self.zone_size,
            "zones_x": self.zones_x,
            "zones_y": self.zones_y,
            "zone_classes": self.zone_classes,
            "nodes": [[n.id, n.layer.value, n.x, n.y, n.zone_id] for n in self.nodes],
            "edges": [[e.id, e.u, e.v, e.layer.value, e.length, e.base_time,
                       e.line_id] for e in self.edges],
            "lines": [[l.id, l.mode.value, list(l.stations), l.headway] for l in self.lines],
            "depots": [[d.id, d.node, d.capacity, sorted(d.service_area)] for d in self.depots],
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def from_json(cls, blob: dict) -> "MultiModalGraph":
        if blob.get("format") != 1:
            raise NetworkError(f"unsupported network format: {blob.get('format')!r}")
        nodes = [Node(i, Layer(l), x, y, z) for i, l, x, y, z in blob["nodes"]]
        edges = [Edge(i, u, v, Layer(l), ln, bt, li)
                 for i, u, v, l, ln, bt, li in blob["edges"]]
        lines = [TransitLineRef(i, Layer(m), tuple(st), hw)
                 for i, m, st, hw in blob["lines"]]
        depots = [Depot(i, nd, cap, frozenset(sa)) for i, nd, cap, sa in blob["depots"]]
        g = cls(nodes, edges, lines, depots, blob["zone_size"],
                blob["zones_x"], blob["zones_y"], blob.get("zone_classes"))
        g._index_depots()
        return g

    @classmethod
    def load_json(cls, path) -> "MultiModalGraph":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def _index_depots(self):
        self._depot_by_node = {d.node: d.id for d in self.depots}


# ---------------------------------------------------------------------------
# shortest paths
# ---------------------------------------------------------------------------

def shortest_path(graph: MultiModalGraph, src: int, dst: int,
                  layers=None, weights: np.ndarray | None = None,
                  respect_mask: bool = True) -> Path | None:
    """Dijkstra restricted to `layers` plus connection edges. None if unreachable.

    `weights` gives per-edge traversal seconds; by default edges cost
    length (meters), i.e. a pure-distance search.
    """
    if src == dst:
        return Path([src], [], 0.0)
    layer_set = None if layers is None else set(layers) | {Layer.CONNECTION}
    if weights is not None and np.any(weights[np.isfinite(weights)] < 0):
        raise NetworkError("negative edge weights")
    n = len(graph.nodes)
    dist = [math.inf] * n
    prev: list[tuple[int, int] | None] = [None] * n
    dist[src] = 0.0
    pq = [(0.0, src)]
    while pq:
        d, u = heapq.heappop(pq)
        if d > dist[u]:
            continue
        if u == dst:
            break
        for eid, v in graph.adjacency(u):
            e = graph.edges[eid]
            if respect_mask and not graph.active[eid]:
                continue
            if layer_set is not None and e.layer not in layer_set:
                continue
            w = weights[eid] if weights is not None else e.length
            if not math.isfinite(w):
                continue
            nd = d + w
            if nd < dist[v] - 1e-12:
                dist[v] = nd
                prev[v] = (u, eid)
                heapq.heappush(pq, (nd, v))
    if not math.isfinite(dist[dst]):
        return None
    nodes = [dst]
    eids = []
    cur = dst
    while cur != src:
        u, eid = prev[cur]
        eids.append(eid)
        nodes.append(u)
        cur = u
    return Path(nodes[::-1], eids[::-1], dist[dst])


def road_distances_from(graph: MultiModalGraph, sources: list[int],
                        respect_mask: bool = True) -> np.ndarray:
    """Shortest road distances (meters) from each source over the vehicle layer."""
    w = np.array([e.length if e.layer is Layer.VEHICLE else np.inf
                  for e in graph.edges])
    m = graph.csr(w, respect_mask)
    return _csgraph_dijkstra(m, directed=False, indices=sources)


def nearest_depot(graph: MultiModalGraph, node_id: int) -> Depot:
    """Depot minimizing road distance from the node; ties go to the lowest id."""
    if graph.nodes[node_id].layer is not Layer.VEHICLE:
        raise NetworkError(f"node {node_id} is not on the vehicle layer")
    if not graph.depots:
        raise NetworkError("graph has no depots")
    dists = road_distances_from(graph, [d.node for d in graph.depots])[:, node_id]
    order = sorted(range(len(graph.depots)),
                   key=lambda i: (dists[i], graph.depots[i].id))
    best = order[0]
    if not np.isfinite(dists[best]):
        raise NetworkError(f"node {node_id} unreachable from every depot")
    return graph.depots[best]


# ---------------------------------------------------------------------------
# grid construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Road:
    orient: str      # 'v' | 'h'
    coord: float     # km
    lo: float        # km
    hi: float        # km


@dataclass(frozen=True)
class LineSpec:
    mode: Layer
    stations: tuple[tuple[float, float], ...]  # desired km coordinates, snapped
    headway: float


@dataclass(frozen=True)
class DepotSpec:
    position: tuple[float, float]  # km, snapped to nearest road node
    capacity: int = 40


@dataclass
class GridConfig:
    extent_km: float
    zone_size_km: float
    roads: list[Road]
    alignment_points: list[tuple[float, float]] = field(default_factory=list)
    lines: list[LineSpec] = field(default_factory=list)
    depots: list[DepotSpec] = field(default_factory=list)
    zone_classes: list[str] | None = None
    tau_transfer_s: float = 60.0


def _merge_roads(roads) -> list[Road]:
    groups = defaultdict(list)
    for r in roads:
        groups[(r.orient, round(r.coord, 3))].append((round(r.lo, 3), round(r.hi, 3)))
    out = []
    for (o, c), ivs in sorted(groups.items()):
        ivs.sort()
        lo, hi = ivs[0]
        for a, b in ivs[1:]:
            if a <= hi + 1e-9:
                hi = max(hi, b)
            else:
                out.append(Road(o, c, lo, hi))
                lo, hi = a, b
        out.append(Road(o, c, lo, hi))
    return out


def brick_rect(xlo, xhi, ylo, yhi, pitch) -> list[Road]:
    """Brick-pattern fill of a rectangle: long lines every `pitch`, short rungs
    alternating offsets between consecutive lines. Segment lengths ~= pitch."""
    roads = []
    ys = []
    y = ylo
    while y < yhi - 1e-9:
        ys.append(round(y, 2))
        y += pitch
    ys.append(round(yhi, 2))
    for yy in ys:
        roads.append(Road("h", yy, xlo, xhi))
    roads.append(Road("v", float(xlo), ylo, yhi))
    roads.append(Road("v", float(xhi), ylo, yhi))
    for k in range(len(ys) - 1):
        x = xlo + pitch
        cnt = 0
        while x < xhi - 1e-9:
            if (cnt + k) % 2 == 0:
                roads.append(Road("v", round(x, 2), ys[k], ys[k + 1]))
            x += pitch
            cnt += 1
    return roads


def brick_ring(b0, b1, i0, i1, pitch) -> list[Road]:
    """Four brick rectangles forming the square ring [b0,b1]^2 minus (i0,i1)^2."""
    return (brick_rect(b0, b1, b0, i0, pitch) + brick_rect(b0, b1, i1, b1, pitch)
            + brick_rect(b0, i0, i0, i1, pitch) + brick_rect(i1, b1, i0, i1, pitch))


def mesh(lo, hi, spacing) -> list[Road]:
    """Full product mesh over [lo,hi]^2."""
    roads = []
    c = lo
    while c <= hi + 1e-9:
        roads.append(Road("v", round(c, 2), lo, hi))
        roads.append(Road("h", round(c, 2), lo, hi))
        c += spacing
    return roads


def build_manhattan_grid(config: GridConfig) -> MultiModalGraph:
    """Materialize a GridConfig: road crossings become vehicle nodes, road
    stretches between crossings become edges, then transit layers, connection
    edges, and depots are attached."""
    nz = config.extent_km / config.zone_size_km
    zones_x = int(round(nz))
    if abs(nz - zones_x) > 1e-9:
        raise NetworkError(
            f"zone size {config.zone_size_km} km does not tile extent "
            f"{config.extent_km} km (offending zone id {zones_x})")
    zones_y = zones_x
    zone_size_m = config.zone_size_km * 1000.0

    roads = _merge_roads(config.roads)
    verts = [r for r in roads if r.orient == "v"]
    horiz = [r for r in roads if r.orient == "h"]
    cross: dict[int, set[float]] = defaultdict(set)
    points: set[tuple[float, float]] = set()
    for iv, rv in enumerate(roads):
        if rv.orient != "v":
            continue
        for ih, rh in enumerate(roads):
            if rh.orient != "h":
                continue
            if (rh.lo - 1e-9 <= rv.coord <= rh.hi + 1e-9
                    and rv.lo - 1e-9 <= rh.coord <= rv.hi + 1e-9):
                points.add((rv.coord, rh.coord))
                cross[iv].add(rh.coord)
                cross[ih].add(rv.coord)
    for (px, py) in config.alignment_points:
        placed = False
        for i, r in enumerate(roads):
            if r.orient == "v" and abs(r.coord - px) < 1e-9 and r.lo - 1e-9 <= py <= r.hi + 1e-9:
                cross[i].add(round(py, 3))
                placed = True
            if r.orient == "h" and abs(r.coord - py) < 1e-9 and r.lo - 1e-9 <= px <= r.hi + 1e-9:
                cross[i].add(round(px, 3))
                placed = True
        if not placed:
            raise NetworkError(f"alignment point {(px, py)} lies on no road")
        points.add((px, py))

    def zone_of(xm, ym):
        col = min(int(xm // zone_size_m), zones_x - 1)
        row = min(int(ym // zone_size_m), zones_y - 1)
        return row * zones_x + col

    nodes: list[Node] = []
    node_at: dict[tuple[float, float], int] = {}
    for (x, y) in sorted(points):
        xm, ym = x * 1000.0, y * 1000.0
        node_at[(x, y)] = len(nodes)
        nodes.append(Node(len(nodes), Layer.VEHICLE, xm, ym, zone_of(xm, ym)))

    edges: list[Edge] = []
    for i, r in enumerate(roads):
        cs = sorted(cross[i])
        if cs and (abs(cs[0] - r.lo) > 1e-9 or abs(cs[-1] - r.hi) > 1e-9):
            raise NetworkError(f"road {r} has a dangling end")
        for a, b in zip(cs, cs[1:]):
            if r.orient == "v":
                u, v = node_at[(r.coord, a)], node_at[(r.coord, b)]
            else:
                u, v = node_at[(a, r.coord)], node_at[(b, r.coord)]
            edges.append(Edge(len(edges), u, v, Layer.VEHICLE,
                              round(abs(b - a) * 1000.0, 6)))

    # connectivity + zone coverage checks
    seen = _component(nodes, edges, 0)
    if len(seen) != len(nodes):
        raise NetworkError(f"road network not connected ({len(seen)}/{len(nodes)})")
    covered = {n.zone_id for n in nodes}
    for z in range(zones_x * zones_y):
        if z not in covered:
            raise NetworkError(f"config geometry leaves zone {z} without nodes")

    g_nodes = list(nodes)
    g_edges = list(edges)
    xs = np.array([n.x for n in nodes])
    ys = np.array([n.y for n in nodes])

    def snap(px_km, py_km) -> int:
        d2 = (xs - px_km * 1000.0) ** 2 + (ys - py_km * 1000.0) ** 2
        return int(np.argmin(d2))  # argmin takes the lowest id on ties

    # transit layers: one node per (mode, position), edges tagged per line
    lines: list[TransitLineRef] = []
    station_node: dict[tuple[Layer, int], int] = {}

    def station_for(mode: Layer, road_node: int) -> int:
        key = (mode, road_node)
        if key not in station_node:
            rn = g_nodes[road_node]
            nid = len(g_nodes)
            g_nodes.append(Node(nid, mode, rn.x, rn.y, rn.zone_id))
            station_node[key] = nid
            # connect to the road node and any colocated stations
            g_edges.append(Edge(len(g_edges), nid, road_node, Layer.CONNECTION,
                                0.0, config.tau_transfer_s))
            for (m2, rn2), nid2 in station_node.items():
                if rn2 == road_node and nid2 != nid:
                    g_edges.append(Edge(len(g_edges), nid, nid2, Layer.CONNECTION,
                                        0.0, config.tau_transfer_s))
        return station_node[key]

    for spec in config.lines:
        road_nodes = [snap(px, py) for (px, py) in spec.stations]
        sts = tuple(station_for(spec.mode, rn) for rn in road_nodes)
        line_id = len(lines)
        for a, b in zip(sts, sts[1:]):
            na, nb = g_nodes[a], g_nodes[b]
            if spec.mode is Layer.BUS:
                sp = shortest_path_points(nodes, edges, node_at, na, nb)
            else:
                sp = math.hypot(na.x - nb.x, na.y - nb.y)
            g_edges.append(Edge(len(g_edges), a, b, spec.mode, sp, 0.0, line_id))
        lines.append(TransitLineRef(line_id, spec.mode, sts, spec.headway))

    depots = [Depot(i, snap(px, py), cap) for i, ((px, py), cap) in
              enumerate((d.position, d.capacity) for d in config.depots)]

    g = MultiModalGraph(g_nodes, g_edges, lines, depots,
                        zone_size_m, zones_x, zones_y, config.zone_classes)
    _assign_service_areas(g)
    g._index_depots()
    return g


def shortest_path_points(nodes, edges, node_at, na, nb) -> float:
    """Road shortest-path length between two road-node positions (bus legs
    follow streets, not beelines)."""
    adj = defaultdict(list)
    for e in edges:
        adj[e.u].append((e.v, e.length))
        adj[e.v].append((e.u, e.length))
    src = node_at[(na.x / 1000.0, na.y / 1000.0)]
    dst = node_at[(nb.x / 1000.0, nb.y / 1000.0)]
    dist = {src: 0.0}
    pq = [(0.0, src)]
    while pq:
        d, u = heapq.heappop(pq)
        if u == dst:
            return d
        if d > dist.get(u, math.inf):
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(pq, (nd, v))
    raise NetworkError("bus stops not road-connected")


def _component(nodes, edges, start) -> set[int]:
    adj = defaultdict(list)
    for e in edges:
        adj[e.u].append(e.v)
        adj[e.v].append(e.u)
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def _assign_service_areas(g: MultiModalGraph) -> None:
    """Nearest-depot partition of vehicle nodes (road distance, lowest-id ties)."""
    if not g.depots:
        return
    dists = road_distances_from(g, [d.node for d in g.depots], respect_mask=False)
    areas: dict[int, set[int]] = {d.id: set() for d in g.depots}
    for nid in g.vehicle_nodes:
        col = dists[:, nid]
        if not np.isfinite(col).any():
            raise NetworkError(f"vehicle node {nid} unreachable from every depot")
        best = min(range(len(g.depots)), key=lambda i: (col[i], g.depots[i].id))
        areas[g.depots[best].id].add(nid)
    for d in g.depots:
        d.service_area = frozenset(areas[d.id])


# ---------------------------------------------------------------------------
# default fixtures
# ---------------------------------------------------------------------------

# Tuning roads and alignment points for the 30 km default grid. Together with
# the brick bands below they land the road graph on exactly 576 intersections
# and 874 segments; the layout is an approximation of the intended map (dense
# 500 m core, 1 km urban ring, 2 km outskirts).
_DEFAULT_EXTRA_ROADS = [
    ("v", 4.0, 0.0, 2.0), ("v", 4.0, 28.0, 30.0), ("v", 8.0, 0.0, 2.0),
    ("v", 8.0, 28.0, 30.0), ("v", 12.0, 0.0, 2.0), ("v", 3.0, 4.0, 5.0),
    ("v", 8.0, 5.0, 7.0), ("v", 8.0, 9.0, 10.0), ("v", 8.0, 18.0, 20.0),
    ("v", 8.0, 24.0, 25.0), ("v", 12.0, 5.0, 7.0), ("v", 11.5, 12.0, 12.5),
    ("v", 11.5, 16.5, 17.5), ("v", 12.0, 24.0, 25.0), ("v", 16.0, 5.0, 7.0),
    ("v", 16.0, 24.0, 25.0), ("v", 20.0, 5.0, 7.0), ("v", 20.0, 24.0, 25.0),
    ("v", 27.0, 25.0, 27.0), ("v", 28.0, 5.0, 7.0), ("v", 1.0, 0.0, 2.0),
    ("v", 1.5, 0.0, 2.0), ("v", 3.0, 0.0, 2.0), ("v", 3.5, 0.0, 2.0),
    ("v", 5.0, 0.0, 2.0), ("v", 5.5, 0.0, 2.0), ("h", 4.5, 0.0, 2.0),
    ("v", 2.5, 2.0, 4.0), ("v", 7.0, 0.0, 2.0), ("h", 6.0, 0.0, 2.0),
    ("v", 7.5, 0.0, 2.0), ("h", 6.5, 0.0, 2.0), ("v", 9.0, 0.0, 2.0),
    ("v", 9.5, 0.0, 2.0), ("v", 11.0, 0.0, 2.0), ("h", 10.0, 0.0, 2.0),
    ("v", 11.5, 0.0, 2.0), ("h", 10.5, 0.0, 2.0), ("v", 13.0, 0.0, 2.0),
    ("v", 13.5, 0.0, 2.0), ("h", 3.0, 28.0, 30.0), ("v", 15.0, 0.0, 2.0),
    ("h", 3.5, 28.0, 30.0), ("h", 14.0, 0.0, 2.0), ("v", 15.5, 0.0, 2.0),
    ("h", 14.5, 0.0, 2.0), ("v", 17.0, 0.0, 2.0), ("v", 17.5, 0.0, 2.0),
]
_DEFAULT_ALIGNMENT = [
    (12.0, 30.0), (16.0, 0.0), (16.0, 30.0), (20.0, 0.0), (20.0, 30.0),
    (24.0, 0.0), (24.0, 30.0), (28.0, 0.0), (28.0, 30.0),
]

# train headway 20 min, metro 6 min, bus 10 min
DEFAULT_HEADWAYS = {Layer.TRAIN: 1200.0, Layer.METRO: 360.0, Layer.BUS: 600.0}


def default_zone_classes(zones_x: int, urban: set, intermediate: set) -> list[str]:
    out = []
    for zid in range(zones_x * zones_x):
        rc = (zid // zones_x, zid % zones_x)
        if rc in urban:
            out.append("urban")
        elif rc in intermediate:
            out.append("intermediate")
        else:
            out.append("suburban")
    return out


def default_grid_config() -> GridConfig:
    """The 30 km x 30 km instance: 36 zones, 576 intersections, 874 segments,
    two train lines (9 stations), a metro cross, six bus lines, 17 depots."""
    roads = (brick_rect(12.5, 17.5, 12.5, 17.5, 0.5)
             + brick_ring(10.0, 20.0, 12.5, 17.5, 1.0)
             + brick_ring(5.0, 25.0, 10.0, 20.0, 2.0)
             + brick_ring(0.0, 30.0, 5.0, 25.0, 2.0)
             + [Road(o, c, lo, hi) for o, c, lo, hi in _DEFAULT_EXTRA_ROADS])
    urban = {(2, 2), (2, 3), (3, 2), (3, 3)}
    intermediate = {(r, c) for r in range(1, 5) for c in range(1, 5)} - urban
    train1 = LineSpec(Layer.TRAIN, ((10, 3), (10, 9), (10, 15), (10, 21), (10, 27)),
                      DEFAULT_HEADWAYS[Layer.TRAIN])
    train2 = LineSpec(Layer.TRAIN, ((20, 6), (20, 12), (20, 18), (20, 24)),
                      DEFAULT_HEADWAYS[Layer.TRAIN])
    metro1 = LineSpec(Layer.METRO, ((15, 11), (15, 13), (15, 15), (15, 17), (15, 19)),
                      DEFAULT_HEADWAYS[Layer.METRO])
    metro2 = LineSpec(Layer.METRO, ((11, 15), (13, 15), (15, 15), (17, 15), (19, 15)),
                      DEFAULT_HEADWAYS[Layer.METRO])
    buses = []
    for ystops in (5, 25):
        buses.append(LineSpec(Layer.BUS, tuple((x, ystops) for x in range(5, 26, 2)),
                              DEFAULT_HEADWAYS[Layer.BUS]))
    for xstops in (5, 25):
        buses.append(LineSpec(Layer.BUS, tuple((xstops, y) for y in range(5, 26, 2)),
                              DEFAULT_HEADWAYS[Layer.BUS]))
    for ystops in (10, 20):
        buses.append(LineSpec(Layer.BUS, tuple((x, ystops) for x in range(5, 26, 2)),
                              DEFAULT_HEADWAYS[Layer.BUS]))
    # 9 depots at the train stations, 8 spread over the urban core
    depot_pos = [(10, 3), (10, 9), (10, 15), (10, 21), (10, 27),
                 (20, 6), (20, 12), (20, 18), (20, 24),
                 (12.5, 12.5), (12.5, 17.5), (17.5, 12.5), (17.5, 17.5),
                 (15, 12.5), (15, 17.5), (12.5, 15), (17.5, 15)]
    return GridConfig(
        extent_km=30.0, zone_size_km=5.0, roads=roads,
        alignment_points=list(_DEFAULT_ALIGNMENT),
        lines=[train1, train2, metro1, metro2] + buses,
        depots=[DepotSpec(p) for p in depot_pos],
        zone_classes=default_zone_classes(6, urban, intermediate),
    )


def desk_grid_config() -> GridConfig:
    """Scaled 12 km x 12 km instance (9 zones of 4 km): one train line, one
    metro line, four bus lines, 5 depots."""
    roads = brick_rect(4.0, 8.0, 4.0, 8.0, 0.5) + brick_ring(0.0, 12.0, 4.0, 8.0, 2.0)
    train = LineSpec(Layer.TRAIN, ((6, 1), (6, 4), (6, 6), (6, 8), (6, 11)),
                     DEFAULT_HEADWAYS[Layer.TRAIN])
    metro = LineSpec(Layer.METRO, ((4, 6), (5, 6), (6, 6), (7, 6), (8, 6)),
                     DEFAULT_HEADWAYS[Layer.METRO])
    buses = [
        LineSpec(Layer.BUS, tuple((x, 2) for x in range(0, 13, 2)), DEFAULT_HEADWAYS[Layer.BUS]),
        LineSpec(Layer.BUS, tuple((x, 10) for x in range(0, 13, 2)), DEFAULT_HEADWAYS[Layer.BUS]),
        LineSpec(Layer.BUS, tuple((2, y) for y in range(0, 13, 2)), DEFAULT_HEADWAYS[Layer.BUS]),
        LineSpec(Layer.BUS, tuple((10, y) for y in range(0, 13, 2)), DEFAULT_HEADWAYS[Layer.BUS]),
    ]
    depots = [DepotSpec((6, 4)), DepotSpec((6, 8)), DepotSpec((6, 11)),
              DepotSpec((3, 3)), DepotSpec((9, 9))]
    return GridConfig(
        extent_km=12.0, zone_size_km=4.0, roads=roads,
        lines=[train, metro] + buses, depots=depots,
        zone_classes=default_zone_classes(3, {(1, 1)}, set()),
    )


def uniform_grid_config(extent_km: float, spacing_km: float,
                        zone_size_km: float | None = None) -> GridConfig:
    """Plain full-mesh grid, mostly for tests."""
    return GridConfig(extent_km=extent_km,
                      zone_size_km=zone_size_km or extent_km,
                      roads=mesh(0.0, extent_km, spacing_km))
