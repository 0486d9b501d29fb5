"""Inter-yarn contact detection and the two-terminal resistor network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .geometry import PileModel, PileShape, SensorSpec

# Residual bound (relative to the injected unit current) for a solve to count.
SOLVE_RTOL = 1e-8


class OpenCircuit(RuntimeError):
    """The two terminals lie in different connected components."""


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Contact:
    strand_i: int
    point_i: int
    strand_j: int
    point_j: int
    gap_cm: float


@dataclass(frozen=True)
class ContactSet:
    contacts: tuple

    def __len__(self):
        return len(self.contacts)

    def __iter__(self):
        return iter(self.contacts)

    def keys(self) -> list[tuple[int, int, int, int]]:
        return [(c.strand_i, c.point_i, c.strand_j, c.point_j)
                for c in self.contacts]


@dataclass(frozen=True, eq=False)
class ResistorNetwork:
    """Conductance graph; edge ``k`` joins ``node_a[k]`` and ``node_b[k]``."""

    node_count: int
    node_a: np.ndarray
    node_b: np.ndarray
    conductance_S: np.ndarray
    terminal_a: int
    terminal_b: int

    def __post_init__(self):
        for name in ("node_a", "node_b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=int))
        object.__setattr__(self, "conductance_S",
                           np.asarray(self.conductance_S, dtype=float))
        if np.any(self.node_a == self.node_b):
            raise ValueError("self-loop edge")
        if np.any(~(self.conductance_S > 0)):
            raise ValueError("conductance must be > 0 on every edge")
        nodes = np.concatenate([self.node_a, self.node_b])
        if len(nodes) and (nodes.min() < 0 or nodes.max() >= self.node_count):
            raise ValueError("edge endpoint out of range")
        if not (0 <= self.terminal_a < self.node_count
                and 0 <= self.terminal_b < self.node_count):
            raise ValueError("terminal id out of range")

    @classmethod
    def from_edges(cls, node_count: int, edges, terminal_a: int,
                   terminal_b: int) -> "ResistorNetwork":
        e = np.asarray(list(edges), dtype=float).reshape(-1, 3)
        return cls(node_count, e[:, 0].astype(int), e[:, 1].astype(int), e[:, 2],
                   terminal_a, terminal_b)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(g)) for a, b, g in
                zip(self.node_a, self.node_b, self.conductance_S)]


def segment_distances(p0, p1, q0, q1):
    """Minimum distance between segment pairs ``[p0, p1]`` and ``[q0, q1]``.

    Vectorized over the leading axis.  Returns ``(dist, s, t)`` where ``s``
    and ``t`` are the clamped parameters of the closest points.
    """
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    denom = a * e - b * b
    eps = 1e-15

    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > eps * np.maximum(a * e, eps),
                     np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        s = np.where(a > eps, s, 0.0)
        t = np.where(e > eps, (b * s + f) / e, 0.0)
        # t outside [0, 1]: clamp it and recompute s for that endpoint
        lo = t < 0.0
        hi = t > 1.0
        t = np.clip(t, 0.0, 1.0)
        s_lo = np.where(a > eps, np.clip(-c / a, 0.0, 1.0), 0.0)
        s_hi = np.where(a > eps, np.clip((b - c) / a, 0.0, 1.0), 0.0)
    s = np.where(lo, s_lo, np.where(hi, s_hi, s))
    # second segment is a point: t = 0 and s is the projection onto the first
    s = np.where(e > eps, s, s_lo)
    diff = (p0 + s[:, None] * d1) - (q0 + t[:, None] * d2)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff)), s, t


def _segments(model: PileModel):
    pts = model.strands
    n_strands, n_pts, _ = pts.shape
    p0 = pts[:, :-1].reshape(-1, 3)
    p1 = pts[:, 1:].reshape(-1, 3)
    strand = np.repeat(np.arange(n_strands), n_pts - 1)
    start = np.tile(np.arange(n_pts - 1), n_strands)
    return p0, p1, strand, start


def detect_contacts(model: PileModel) -> ContactSet:
    """Find segment pairs of distinct strands closer than one yarn diameter.

    Each touching segment pair yields one contact between the nearest
    vertices of the two segments.  Strands whose rest anchors are farther
    apart than ``model.contact_reach_cm`` are never paired, which keeps a
    tightly wrapped sample from touching its own far side.
    """
    threshold = 2 * model.yarn_radius_cm
    p0, p1, strand, start = _segments(model)
    seg_len = np.linalg.norm(p1 - p0, axis=1)
    tree = cKDTree((p0 + p1) / 2)
    pairs = tree.query_pairs(seg_len.max() + threshold * (1 + 1e-9),
                             output_type="ndarray")
    if len(pairs) == 0:
        return ContactSet(())
    u, v = pairs[:, 0], pairs[:, 1]
    u, v = u[strand[u] != strand[v]], v[strand[u] != strand[v]]
    # bounding boxes padded by the threshold must overlap
    lo = np.minimum(p0, p1) - threshold
    hi = np.maximum(p0, p1)
    keep = np.all((lo[u] <= hi[v]) & (lo[v] <= hi[u]), axis=1)
    u, v = u[keep], v[keep]
    anchors = model.pile_xy[model.strand_pile]
    sep = np.linalg.norm(anchors[strand[u]] - anchors[strand[v]], axis=1)
    keep = sep <= model.contact_reach_cm
    u, v = u[keep], v[keep]
    dist, s, t = segment_distances(p0[u], p1[u], p0[v], p1[v])
    hit = dist <= threshold * (1 + 1e-12)
    u, v, dist, s, t = u[hit], v[hit], dist[hit], s[hit], t[hit]
    if len(u) == 0:
        return ContactSet(())

    ka, kb = strand[u], strand[v]
    ia = start[u] + (s > 0.5)
    ib = start[v] + (t > 0.5)
    swap = ka > kb
    si = np.where(swap, kb, ka)
    pi = np.where(swap, ib, ia)
    sj = np.where(swap, ka, kb)
    pj = np.where(swap, ia, ib)
    # sort by key then gap so the first row of each key carries the min gap
    order = np.lexsort((dist, pj, sj, pi, si))
    keys = np.stack([si, pi, sj, pj], axis=1)[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    keys = keys[first]
    gaps = dist[order][first]
    # canonical order: (strand_i, strand_j, point_i, point_j)
    final = np.lexsort((keys[:, 3], keys[:, 1], keys[:, 2], keys[:, 0]))
    contacts = tuple(Contact(int(k[0]), int(k[1]), int(k[2]), int(k[3]), float(g))
                     for k, g in zip(keys[final], gaps[final]))
    return ContactSet(contacts)


def assemble_network(model: PileModel, contacts: ContactSet,
                     spec: SensorSpec) -> ResistorNetwork:
    rho = spec.yarn.linear_resistance_ohm_per_cm
    g_contact = 1.0 / spec.contact_resistance_ohm
    pts = model.strands
    n_strands, n_pts, _ = pts.shape
    n_vertices = n_strands * n_pts
    term_a, term_b = n_vertices, n_vertices + 1
    na, nb, g = [], [], []

    seg_len = np.linalg.norm(np.diff(pts, axis=1), axis=2).ravel()
    ids = np.arange(n_vertices).reshape(n_strands, n_pts)
    na.append(ids[:, :-1].ravel())
    nb.append(ids[:, 1:].ravel())
    g.append(_yarn_conductance(rho, seg_len))

    if len(contacts):
        c = np.array([(x.strand_i, x.point_i, x.strand_j, x.point_j)
                      for x in contacts], dtype=int)
        na.append(model.node_id(c[:, 0], c[:, 1]))
        nb.append(model.node_id(c[:, 2], c[:, 3]))
        g.append(np.full(len(c), g_contact))

    for term, nodes in ((term_a, model.terminal_a), (term_b, model.terminal_b)):
        na.append(model.node_id(nodes[:, 0], nodes[:, 1]))
        nb.append(np.full(len(nodes), term))
        g.append(np.full(len(nodes), g_contact))

    if model.shape is PileShape.LOOP:
        # Continuous yarn on the back of the base joins consecutive piles of
        # a row: last foot of one loop to the first foot of the next.
        rows = model.pile_grid[:, 0]
        order = np.lexsort((model.pile_grid[:, 1], rows))
        prev, nxt = order[:-1], order[1:]
        same = rows[prev] == rows[nxt]
        prev, nxt = prev[same], nxt[same]
        link = np.linalg.norm(pts[nxt, 0] - pts[prev, -1], axis=1)
        na.append(ids[prev, -1])
        nb.append(ids[nxt, 0])
        g.append(_yarn_conductance(rho, link))

    return ResistorNetwork(n_vertices + 2, np.concatenate(na), np.concatenate(nb),
                           np.concatenate(g), term_a, term_b)


def _yarn_conductance(rho: float, length_cm):
    # Coincident vertices are electrically one point; cap at a 1 um segment.
    return 1.0 / (rho * np.maximum(length_cm, 1e-4))


def laplacian(net: ResistorNetwork) -> sp.csr_matrix:
    a, b, g = net.node_a, net.node_b, net.conductance_S
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    vals = np.concatenate([g, g, -g, -g])
    n = net.node_count
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def equivalent_resistance(net: ResistorNetwork) -> float:
    """Two-terminal resistance from the grounded Laplacian system.

    Injects unit current at ``terminal_a``, grounds ``terminal_b`` and
    returns the potential at ``terminal_a``.  Only the connected component
    holding the terminals is solved.
    """
    L = laplacian(net)
    _, labels = connected_components(L, directed=False)
    if labels[net.terminal_a] != labels[net.terminal_b]:
        raise OpenCircuit("terminals are not connected")
    comp = np.flatnonzero(labels == labels[net.terminal_a])
    comp = comp[comp != net.terminal_b]
    Lr = L[comp][:, comp].tocsc()
    rhs = np.zeros(len(comp))
    ia = int(np.searchsorted(comp, net.terminal_a))
    rhs[ia] = 1.0
    try:
        lu = splu(Lr)
    except RuntimeError as exc:  # exactly singular factor
        raise NumericalFailure(str(exc)) from None
    v = lu.solve(rhs)
    residual = np.abs(Lr @ v - rhs).max()
    if not np.all(np.isfinite(v)) or residual > SOLVE_RTOL:
        raise NumericalFailure(f"solve residual {residual:.3g}")
    return float(v[ia])


def plied_linear_resistance(base_ohm_per_cm: float, plies: int) -> float:
    """Estimate of plied-yarn linear resistance as parallel conductors.

    A rough guide only: measured plied yarns do not follow it closely
    (an 8-ply yarn has been reported lower in resistance than a 16-ply one).
    """
    if plies < 1:
        raise ValueError("plies must be >= 1")
    return base_ohm_per_cm / plies
