"""Cell geometry, TDMA reuse and the protocol interference model.

The unit square is cut into square cells of side ``C1 * r(n)``.  A packet
moves one cell per hop toward its destination, so hop counts are L1
distances between cells (one hop minimum).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# relative slack on the protocol-model inequalities, for rounding only
_REL_TOL = 1e-12


def transmission_range(n: int, c: float = 1.0) -> float:
    """r(n) = c * sqrt(log n / n)."""
    if n < 3:
        raise ValueError(f"transmission range needs n >= 3, got {n}")
    r = c * math.sqrt(math.log(n) / n)
    if not 0 < r < 1:
        raise ValueError(f"r(n) = {r} outside (0, 1) for n={n}, c={c}")
    return r


def min_reuse(delta: float, c1: float) -> int:
    """Smallest integer T with T >= (2 + delta) / c1."""
    return max(1, math.ceil((2.0 + delta) / c1 - 1e-12))


@dataclass(frozen=True)
class CellIndex:
    i: int
    j: int

    def __iter__(self):
        return iter((self.i, self.j))


@dataclass(frozen=True)
class GridSpec:
    """Cells, reuse factor and protocol-model constants for ``n`` nodes."""

    n: int
    c1: float = 1.0
    range_const: float = 1.0
    delta: float = 1.0
    reuse: int | None = None
    r: float = field(init=False)
    cell_side: float = field(init=False)
    cells_per_side: int = field(init=False)

    def __post_init__(self):
        if self.c1 <= 0:
            raise ValueError("cell-size constant C1 must be positive")
        if self.delta < 0:
            raise ValueError("protection factor delta must be >= 0")
        r = transmission_range(self.n, self.range_const)
        reuse = min_reuse(self.delta, self.c1) if self.reuse is None else int(self.reuse)
        if reuse < (2.0 + self.delta) / self.c1 - 1e-12:
            raise ValueError(
                f"reuse T={reuse} violates T >= (2 + delta) / C1 = "
                f"{(2.0 + self.delta) / self.c1:.6g}")
        side = self.c1 * r
        object.__setattr__(self, "reuse", reuse)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "cell_side", side)
        object.__setattr__(self, "cells_per_side", math.ceil(1.0 / side - 1e-12))

    @property
    def n_slots(self) -> int:
        return self.reuse * self.reuse


def cell_of(position, spec: GridSpec) -> CellIndex:
    x, y = position
    last = spec.cells_per_side - 1
    return CellIndex(min(int(x // spec.cell_side), last),
                     min(int(y // spec.cell_side), last))


def cells_of(positions: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Vector form of :func:`cell_of`: (n, 2) int array."""
    idx = np.floor(np.asarray(positions) / spec.cell_side).astype(np.int64)
    return np.clip(idx, 0, spec.cells_per_side - 1)


def hop_count(a, b) -> int:
    """L1 cell distance, at least one hop (same-cell delivery is a hop)."""
    return max(1, abs(a[0] - b[0]) + abs(a[1] - b[1]))


def hop_counts(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.maximum(1, np.abs(np.asarray(a) - np.asarray(b)).sum(axis=-1))


def route(a, b) -> list[CellIndex]:
    """Staircase path from ``a`` to ``b``: first along i, then along j.

    ``len(path) - 1 == hop_count(a, b)``; a same-cell delivery is the path
    ``[a, a]``.
    """
    a = CellIndex(*a)
    b = CellIndex(*b)
    if a == b:
        return [a, b]
    path = [a]
    i, j = a
    step = 1 if b.i > i else -1
    while i != b.i:
        i += step
        path.append(CellIndex(i, j))
    step = 1 if b.j > j else -1
    while j != b.j:
        j += step
        path.append(CellIndex(i, j))
    return path


def slot_of(cell, reuse: int) -> int:
    return (cell[0] % reuse) * reuse + (cell[1] % reuse)


def tdma_schedule(spec: GridSpec) -> np.ndarray:
    """Slot id for every cell, indexed ``[i, j]``, values in [0, T**2)."""
    return schedule_grid(spec.cells_per_side, spec.reuse)


def schedule_grid(cells_per_side: int, reuse: int) -> np.ndarray:
    k = np.arange(cells_per_side) % reuse
    return k[:, None] * reuse + k[None, :]


def schedule_text(slots: np.ndarray) -> str:
    """One row of slot ids per line (row ``j`` from the top down)."""
    width = len(str(int(slots.max()))) if slots.size else 1
    lines = []
    for j in range(slots.shape[1] - 1, -1, -1):
        lines.append(" ".join(f"{int(s):>{width}d}" for s in slots[:, j]))
    return "\n".join(lines) + "\n"


def protocol_model_ok(pairs, spec: GridSpec | None = None, *,
                      r: float | None = None, delta: float | None = None) -> bool:
    """True iff every concurrent (transmitter, receiver) pair succeeds.

    Each receiver must sit within range of its transmitter, and every other
    active transmitter must be at least ``(1 + delta)`` times that link's
    length away from the receiver.
    """
    if spec is not None:
        r = spec.r if r is None else r
        delta = spec.delta if delta is None else delta
    if r is None or delta is None:
        raise ValueError("need a GridSpec or explicit r and delta")
    return protocol_violations(pairs, r, delta) == 0


def protocol_violations(pairs, r: float, delta: float) -> int:
    """Number of failed links in a set of concurrent transmissions."""
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2, 2)
    if arr.shape[0] == 0:
        return 0
    tx, rx = arr[:, 0], arr[:, 1]
    link = np.hypot(*(tx - rx).T)
    bad = link > r * (1 + _REL_TOL)
    if arr.shape[0] > 1:
        # d[a, b] = |tx_a - rx_b|
        d = np.hypot(tx[:, None, 0] - rx[None, :, 0], tx[:, None, 1] - rx[None, :, 1])
        need = (1 + delta) * link[None, :] * (1 - _REL_TOL)
        clash = d < need
        np.fill_diagonal(clash, False)
        bad |= clash.any(axis=0)
    return int(np.count_nonzero(bad))


_NEIGHBOURS = np.array([(1, 0), (-1, 0), (0, 1), (0, -1)])


def schedule_violations(cells_per_side: int, reuse: int, delta: float,
                        c1: float = 1.0, r: float = 1.0) -> int:
    """Exhaustive same-slot check on a square grid.

    Every cell of a slot transmits from its centre to the centre of one
    4-neighbour.  The guard condition is pairwise, so checking every
    ordered pair of same-slot cells under all 4 x 4 direction choices
    covers every joint assignment.  Returns the number of failing
    (link, interferer, directions) combinations.
    """
    side = c1 * r
    slots = schedule_grid(cells_per_side, reuse)
    failures = 0
    for slot in np.unique(slots):
        cells = np.argwhere(slots == slot)
        tx = (cells + 0.5) * side
        # receivers per cell and direction, keeping to the grid
        inside = []
        rx = []
        for d in _NEIGHBOURS:
            nb = cells + d
            inside.append(np.all((nb >= 0) & (nb < cells_per_side), axis=1))
            rx.append((nb + 0.5) * side)
        inside = np.stack(inside, axis=1)        # (m, 4)
        rx = np.stack(rx, axis=1)                # (m, 4, 2)
        link = np.hypot(*(rx - tx[:, None, :]).transpose(2, 0, 1))  # (m, 4)
        failures += int(np.count_nonzero((link > r * (1 + _REL_TOL)) & inside))
        # interferer a against the link of cell b in direction k
        diff = tx[:, None, None, :] - rx[None, :, :, :]           # (m, m, 4, 2)
        dist = np.hypot(diff[..., 0], diff[..., 1])
        need = (1 + delta) * link[None, :, :] * (1 - _REL_TOL)
        clash = (dist < need) & inside[None, :, :]
        idx = np.arange(cells.shape[0])
        clash[idx, idx, :] = False
        # each interferer can sit in any of its own valid directions
        n_dirs = inside.sum(axis=1)
        failures += int((clash.sum(axis=2) * n_dirs[:, None]).sum())
    return failures
