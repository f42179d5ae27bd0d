"""Epsilon decomposition of a sensitivity block into weakly coupled subnetworks.

Entries whose magnitude, relative to the largest entry of the matrix, falls
below ``epsilon`` are dropped. The surviving pattern is read as a bipartite
bus x DG graph and its connected components become the subnetworks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels

FINER = "finer"
RESTORE_INITIAL = "restore_initial"


class DecompositionError(ValueError):
    pass


class LadderExhausted(RuntimeError):
    """Raised when a finer epsilon is requested at the bottom of the ladder."""


@dataclass(frozen=True)
class Subnetwork:
    id: int
    dg_ids: frozenset[int]
    bus_ids: frozenset[int]
    transformer_ids: frozenset[int] = frozenset()


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Result of thresholding one sensitivity block at a single epsilon.

    ``original = retained + epsilon * residual`` holds entrywise up to one
    rounding. Rows follow ``row_buses`` and columns follow ``col_dgs``.
    """

    epsilon: float
    original: np.ndarray
    retained: np.ndarray
    residual: np.ndarray
    row_buses: tuple[int, ...]
    col_dgs: tuple[int, ...]
    subnetworks: tuple[Subnetwork, ...]
    influence: dict[int, frozenset[int]]
    uncontrollable: frozenset[int]
    scale: float
    _sub_of_dg: dict = field(init=False, repr=False)
    _sub_of_bus: dict = field(init=False, repr=False)

    def __post_init__(self):
        by_dg, by_bus = {}, {}
        for s in self.subnetworks:
            for d in s.dg_ids:
                by_dg[d] = s
            for b in s.bus_ids:
                by_bus[b] = s
        object.__setattr__(self, "_sub_of_dg", by_dg)
        object.__setattr__(self, "_sub_of_bus", by_bus)

    def subnetwork_of_dg(self, dg_id: int) -> Subnetwork:
        return self._sub_of_dg[dg_id]

    def subnetwork_of_bus(self, bus: int) -> Subnetwork | None:
        """Subnetwork holding ``bus``, or ``None`` if no DG reaches it at this epsilon."""
        return self._sub_of_bus.get(bus)

    def subnetwork(self, sid: int) -> Subnetwork:
        return self.subnetworks[sid]

    def structure(self) -> tuple:
        """Hashable summary used to compare decompositions structurally."""
        subs = tuple((s.id, tuple(sorted(s.dg_ids)), tuple(sorted(s.bus_ids)),
                      tuple(sorted(s.transformer_ids))) for s in self.subnetworks)
        infl = tuple((d, tuple(sorted(self.influence[d]))) for d in sorted(self.influence))
        return self.epsilon, subs, infl, tuple(sorted(self.uncontrollable))


@dataclass(frozen=True)
class EpsilonLadder:
    values: tuple[float, ...]
    index: int = 0

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise DecompositionError("epsilon ladder must not be empty")
        for v in vals:
            if not 0.0 < v < 1.0:
                raise DecompositionError(f"epsilon {v} outside (0, 1)")
        if any(a <= b for a, b in zip(vals, vals[1:])):
            raise DecompositionError("epsilon ladder must be strictly descending")
        if not 0 <= self.index < len(vals):
            raise DecompositionError(f"ladder index {self.index} out of range")

    @property
    def epsilon(self) -> float:
        return self.values[self.index]

    @property
    def at_bottom(self) -> bool:
        return self.index == len(self.values) - 1


def ladder_step(ladder: EpsilonLadder, direction: str) -> EpsilonLadder:
    """Move one rung down (``finer``) or back to the head (``restore_initial``)."""
    if direction == FINER:
        if ladder.at_bottom:
            raise LadderExhausted(f"no epsilon below {ladder.epsilon}")
        return EpsilonLadder(ladder.values, ladder.index + 1)
    if direction == RESTORE_INITIAL:
        return EpsilonLadder(ladder.values, 0)
    raise DecompositionError(f"unknown ladder direction {direction!r}")


def normalize(a: np.ndarray) -> np.ndarray:
    """Divide every entry by the largest absolute entry."""
    a = np.asarray(a, dtype=float)
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0:
        raise DecompositionError("cannot normalize an all-zero matrix")
    return a / scale


def epsilon_decompose(a: np.ndarray, row_buses: Sequence[int], col_dgs: Sequence[int],
                      epsilon: float, transformers: Iterable = ()) -> Decomposition:
    """Threshold ``a`` at ``epsilon`` and split the kept pattern into subnetworks.

    Args:
        a: Sensitivity block, one row per bus and one column per DG.
        row_buses: Bus id of every row.
        col_dgs: DG id of every column.
        epsilon: Threshold in (0, 1) on the normalized magnitudes.
        transformers: Optional transformer records; each subnetwork lists the
            ones with a terminal among its buses.

    Subnetwork ids follow the smallest DG id they contain. Buses that keep no
    coupling to any DG belong to no subnetwork and are reported as
    ``uncontrollable``.
    """
    if not 0.0 < epsilon < 1.0:
        raise DecompositionError(f"epsilon {epsilon} outside (0, 1)")
    a = np.asarray(a, dtype=float)
    if a.shape != (len(row_buses), len(col_dgs)):
        raise DecompositionError(f"matrix shape {a.shape} does not match "
                                 f"{len(row_buses)} buses x {len(col_dgs)} DGs")
    norm = normalize(a)
    scale = float(np.max(np.abs(a)))
    keep = np.abs(norm) >= epsilon
    retained = np.where(keep, a, 0.0)
    residual = (a - retained) / epsilon

    nr, nc = a.shape
    ri, cj = np.nonzero(keep)
    labels = kernels.components(nr + nc, ri, nr + cj)

    order = sorted(range(nc), key=lambda j: col_dgs[j])
    label_sid: dict[int, int] = {}
    for j in order:
        label_sid.setdefault(int(labels[nr + j]), len(label_sid))
    dgs_of = [[] for _ in label_sid]
    buses_of = [[] for _ in label_sid]
    for j in range(nc):
        dgs_of[label_sid[int(labels[nr + j])]].append(int(col_dgs[j]))
    live_rows = keep.any(axis=1)
    uncontrollable = []
    for i in range(nr):
        if live_rows[i]:
            buses_of[label_sid[int(labels[i])]].append(int(row_buses[i]))
        else:
            uncontrollable.append(int(row_buses[i]))

    transformers = list(transformers)
    subs = []
    for sid in range(len(label_sid)):
        buses = frozenset(buses_of[sid])
        tids = frozenset(t.id for t in transformers
                         if t.primary_bus in buses or t.secondary_bus in buses)
        subs.append(Subnetwork(sid, frozenset(dgs_of[sid]), buses, tids))
    influence = {int(col_dgs[j]): frozenset(int(row_buses[i]) for i in np.flatnonzero(keep[:, j]))
                 for j in range(nc)}
    return Decomposition(
        epsilon=float(epsilon), original=a, retained=retained, residual=residual,
        row_buses=tuple(int(b) for b in row_buses), col_dgs=tuple(int(d) for d in col_dgs),
        subnetworks=tuple(subs), influence=influence,
        uncontrollable=frozenset(uncontrollable), scale=scale,
    )


def block_permutation(dec: Decomposition) -> tuple[list[int], list[int]]:
    """Row and column orders that make ``dec.retained`` block diagonal.

    Blocks follow subnetwork id; rows of uncontrollable buses come last. Within
    a block, rows and columns keep their original relative order.
    """
    rpos = {b: i for i, b in enumerate(dec.row_buses)}
    cpos = {d: j for j, d in enumerate(dec.col_dgs)}
    rows, cols = [], []
    for s in dec.subnetworks:
        rows.extend(sorted(rpos[b] for b in s.bus_ids))
        cols.extend(sorted(cpos[d] for d in s.dg_ids))
    rows.extend(sorted(rpos[b] for b in dec.uncontrollable))
    return rows, cols


def block_sizes(dec: Decomposition) -> list[tuple[int, int]]:
    """(rows, cols) of every diagonal block in subnetwork order."""
    return [(len(s.bus_ids), len(s.dg_ids)) for s in dec.subnetworks]


def sweep(a: np.ndarray, row_buses: Sequence[int], col_dgs: Sequence[int],
          epsilons: Iterable[float]) -> list[dict]:
    """Subnetwork count, largest block (bus rows) and uncontrollable buses per epsilon."""
    out = []
    for eps in epsilons:
        dec = epsilon_decompose(a, row_buses, col_dgs, eps)
        out.append({
            "epsilon": float(eps),
            "subnetworks": len(dec.subnetworks),
            "max_block_buses": max((len(s.bus_ids) for s in dec.subnetworks), default=0),
            "uncontrollable": len(dec.uncontrollable),
        })
    return out
