"""Box covering, renormalization and fractal exponent estimates.

A box of size ``l_B`` holds nodes whose pairwise graph distance is at most
``l_B``.  Coverings come from greedy coloring of the conflict relation
(distance > l_B); the best of several node orderings is kept.

Fits use ``l_B + 1`` as the linear box size: a box of diameter ``l_B`` on a
path spans ``l_B + 1`` nodes, so ``N_B = n / (l_B + 1)`` there and the
exponents come out scale-free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from .capacity import ScalingFit, fit_loglog

DEFAULT_ORDERINGS = 10


class DisconnectedGraphError(ValueError):
    """Box covering was asked for a disconnected graph."""


@dataclass(frozen=True)
class BoxCovering:
    l_B: int
    boxes: tuple[tuple, ...]

    @property
    def n_boxes(self) -> int:
        return len(self.boxes)

    def assignment(self) -> dict:
        return {v: b for b, members in enumerate(self.boxes) for v in members}


@dataclass
class FractalExponents:
    d_B: float
    d_g: float
    d_e: float
    fits: dict[str, ScalingFit]
    rows: list[tuple[int, int, float, float]] = field(default_factory=list)

    @property
    def gamma_pred(self) -> float:
        return 1.0 + _ratio(self.d_B, self.d_g)

    @property
    def epsilon_pred(self) -> float:
        return 2.0 + _ratio(self.d_e, self.d_g)

    @property
    def degenerate(self) -> bool:
        return any(f.degenerate for f in self.fits.values())

    def to_csv(self) -> str:
        lines = ["l_B,N_B,mean_kB_over_khub,mean_nh_over_kB"]
        for l_b, n_b, kb, nh in self.rows:
            lines.append(f"{l_b},{n_b},{kb:.17g},{nh:.17g}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        r2 = ",".join(f"{k}_r2={f.r_squared:.4g}" for k, f in self.fits.items())
        flag = " degenerate" if self.degenerate else ""
        return (f"# d_B={self.d_B:.6g} d_g={self.d_g:.6g} d_e={self.d_e:.6g} "
                f"gamma_pred={self.gamma_pred:.6g} "
                f"epsilon_pred={self.epsilon_pred:.6g} {r2}{flag}")


def _ratio(a: float, b: float) -> float:
    if not (math.isfinite(a) and math.isfinite(b)) or b == 0:
        return math.nan
    return a / b


def _balls(graph: nx.Graph, l_b: int) -> dict:
    return {v: nx.single_source_shortest_path_length(graph, v, cutoff=l_b)
            for v in graph}


def _greedy(order, balls) -> list[list]:
    color: dict = {}
    boxes: list[list] = []
    for v in order:
        seen: dict[int, int] = {}
        for u in balls[v]:
            c = color.get(u)
            if c is not None:
                seen[c] = seen.get(c, 0) + 1
        # a box accepts v only if every member lies inside v's ball
        fits = [c for c, k in seen.items() if k == len(boxes[c])]
        c = min(fits) if fits else len(boxes)
        if c == len(boxes):
            boxes.append([])
        boxes[c].append(v)
        color[v] = c
    return boxes


def box_cover(graph: nx.Graph, l_B: int, *, orderings: int = DEFAULT_ORDERINGS,
              rng: np.random.Generator | None = None,
              per_component: bool = False,
              start: BoxCovering | None = None) -> BoxCovering:
    """Greedy-coloring box covering, best of ``orderings`` node orders.

    The graph's own node order is always tried first; the remaining orders
    are random.  A covering for a smaller box size passed as ``start`` is
    also valid here and competes with the greedy results.  Disconnected
    graphs need ``per_component=True`` (nodes in different components never
    share a box).
    """
    if l_B < 1:
        raise ValueError(f"box size must be >= 1, got {l_B}")
    if orderings < 1:
        raise ValueError("need at least one ordering")
    if graph.number_of_nodes() == 0:
        return BoxCovering(l_B, ())
    if not per_component and not nx.is_connected(graph):
        raise DisconnectedGraphError(
            "graph is disconnected; pass per_component=True to cover each "
            "component separately")
    rng = rng if rng is not None else np.random.default_rng(0)
    balls = _balls(graph, l_B)
    nodes = list(graph)
    best = None
    for k in range(orderings):
        order = nodes if k == 0 else [nodes[i] for i in rng.permutation(len(nodes))]
        boxes = _greedy(order, balls)
        if best is None or len(boxes) < len(best):
            best = boxes
    if start is not None and start.l_B <= l_B and start.n_boxes < len(best):
        best = [list(b) for b in start.boxes]
    return BoxCovering(l_B, tuple(tuple(sorted(b)) for b in best))


def covering_violations(graph: nx.Graph, covering: BoxCovering) -> int:
    """Node pairs sharing a box but farther apart than ``l_B`` (BFS)."""
    bad = 0
    for members in covering.boxes:
        inside = set(members)
        for v in members:
            near = nx.single_source_shortest_path_length(graph, v, cutoff=covering.l_B)
            bad += len(inside - near.keys())
    return bad // 2


@dataclass(frozen=True)
class Renormalized:
    graph: nx.Graph
    k_B: np.ndarray
    k_hub: np.ndarray
    n_h: np.ndarray


def renormalize(graph: nx.Graph, covering: BoxCovering) -> Renormalized:
    """Contract every box to a node.

    Per box: ``k_B`` is its degree in the box graph, ``k_hub`` the largest
    original degree inside it and ``n_h`` the number of that hub's links
    that leave the box.
    """
    where = covering.assignment()
    if len(where) != graph.number_of_nodes():
        raise ValueError("covering does not cover every node exactly once")
    m = covering.n_boxes
    boxed = nx.Graph()
    boxed.add_nodes_from(range(m))
    for u, v in graph.edges():
        a, b = where[u], where[v]
        if a != b:
            boxed.add_edge(a, b)
    k_b = np.array([boxed.degree(b) for b in range(m)], dtype=np.int64)
    k_hub = np.zeros(m, dtype=np.int64)
    n_h = np.zeros(m, dtype=np.int64)
    for b, members in enumerate(covering.boxes):
        hub = members[int(np.argmax([graph.degree(v) for v in members]))]
        k_hub[b] = graph.degree(hub)
        n_h[b] = sum(1 for u in graph.neighbors(hub) if where[u] != b)
    return Renormalized(boxed, k_b, k_hub, n_h)


def _robust_fit(xs, ys) -> ScalingFit:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    ok = np.isfinite(ys) & (ys > 0)
    if ys.size and np.ptp(ys) == 0 and not ok.all():
        # identically zero response, e.g. a single box at every size
        return ScalingFit(0.0, -math.inf, 0.0, (), 0.0, degenerate=True)
    if ok.sum() < 3:
        return ScalingFit(math.nan, math.nan, 0.0, (), math.nan, degenerate=True)
    return fit_loglog(xs[ok], ys[ok])


def estimate_exponents(graph: nx.Graph, l_B_values, *,
                       orderings: int = DEFAULT_ORDERINGS,
                       rng: np.random.Generator | None = None,
                       per_component: bool = False) -> FractalExponents:
    """Fit d_B, d_g and d_e from coverings at several box sizes.

    Box-level ratios are arithmetic means over boxes; boxes with a zero
    denominator are left out of that mean.
    """
    l_values = sorted({int(v) for v in l_B_values})
    if len(l_values) < 3:
        raise ValueError("need at least 3 distinct box sizes for the fits")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = graph.number_of_nodes()
    rows = []
    cov = None
    for l_b in l_values:
        cov = box_cover(graph, l_b, orderings=orderings, rng=rng,
                        per_component=per_component, start=cov)
        ren = renormalize(graph, cov)
        hub_ok = ren.k_hub > 0
        kb_ok = ren.k_B > 0
        kb_ratio = float(np.mean(ren.k_B[hub_ok] / ren.k_hub[hub_ok])) if hub_ok.any() else 0.0
        nh_ratio = float(np.mean(ren.n_h[kb_ok] / ren.k_B[kb_ok])) if kb_ok.any() else 0.0
        rows.append((l_b, cov.n_boxes, kb_ratio, nh_ratio))
    size = [r[0] + 1 for r in rows]
    fits = {
        "d_B": _robust_fit(size, [r[1] / n for r in rows]),
        "d_g": _robust_fit(size, [r[2] for r in rows]),
        "d_e": _robust_fit(size, [r[3] for r in rows]),
    }
    return FractalExponents(-fits["d_B"].slope + 0.0, -fits["d_g"].slope + 0.0,
                            -fits["d_e"].slope + 0.0, fits, rows)


def read_graph(path) -> nx.Graph:
    """Load a netgen network file or a plain ``u v`` edge list."""
    from .netgen import SocialNetwork

    text = Path(path).read_text()
    first = next((ln.split() for ln in text.splitlines()
                  if ln.strip() and not ln.lstrip().startswith("#")), None)
    if first is None:
        raise ValueError(f"{path}: empty graph file")
    if len(first) == 4:
        return SocialNetwork.from_text(text).to_graph()
    if len(first) != 2:
        raise ValueError(f"{path}: expected 'u v' edge lines or a network file")
    graph = nx.Graph()
    for lineno, ln in enumerate(text.splitlines(), 1):
        parts = ln.split("#", 1)[0].split()
        if not parts:
            continue
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'u v'")
        u, v = (int(p) for p in parts)
        graph.add_edge(u, v)
    return graph
