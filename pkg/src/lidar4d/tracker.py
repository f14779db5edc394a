"""Online auto-regressive instance tracking over pluggable point features.

Every point of every scan is assigned to the query with the highest scalar
product (no thresholding, ties to the lowest query index). Queries with at
least one point are active. A query keeps its object ID while its barycenter,
expressed in the ego frame and uncompensated for ego motion, stays within
``recycle_distance`` of the barycenter at its previous active timestep;
otherwise it receives a fresh ID from a monotonic allocator.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .core import InstanceLabeling, Scan, Sequence
from .io import read_feature_file
from .matching import ToyFeatureModel


@dataclass(frozen=True)
class TrackerParams:
    num_queries: int = 300
    recycle_distance: float = 10.0

    def __post_init__(self):
        if self.num_queries < 1:
            raise ValueError("num_queries must be >= 1")
        if not self.recycle_distance > 0:
            raise ValueError("recycle_distance must be positive")


@dataclass(frozen=True, eq=False)
class QueryState:
    embeddings: np.ndarray       # (N_q, D)
    object_ids: np.ndarray       # (N_q,) int64, 0 = never assigned
    last_barycenter: np.ndarray  # (N_q, 3), NaN rows when never active
    last_active: np.ndarray      # (N_q,) int64, -1 when never active

    @classmethod
    def initial(cls, embeddings: np.ndarray) -> "QueryState":
        embeddings = np.asarray(embeddings, dtype=np.float64)
        n = embeddings.shape[0]
        return cls(embeddings,
                   np.zeros(n, dtype=np.int64),
                   np.full((n, 3), np.nan),
                   np.full(n, -1, dtype=np.int64))


class IdAllocator:
    """Monotonically increasing object IDs, starting from 1."""

    def __init__(self, first: int = 1):
        self._next = first

    def allocate(self) -> int:
        value = self._next
        self._next += 1
        return value


class FeatureProvider(Protocol):
    def initial_queries(self) -> np.ndarray: ...

    def step(self, scan: Scan, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (per-point features, output query embeddings) for one scan."""
        ...


@dataclass(frozen=True, eq=False)
class ToyFeatureProvider:
    """Frozen linear features; query embeddings pass through unchanged."""

    model: ToyFeatureModel

    def initial_queries(self) -> np.ndarray:
        return self.model.queries.copy()

    def step(self, scan: Scan, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.model.features(scan), queries


class FileFeatureProvider:
    """Features and output queries precomputed by an external network.

    Expects one ``<timestep>.feat`` file per scan (see lidar4d.io for the
    binary layout); any backbone can export this format and plug in here.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self._paths = {int(p.stem): p for p in sorted(self.directory.glob("*.feat"))}
        if not self._paths:
            raise FileNotFoundError(f"no .feat files under {directory}")

    def initial_queries(self) -> np.ndarray:
        first = self._paths[min(self._paths)]
        _, queries = read_feature_file(first)
        return queries

    def step(self, scan: Scan, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        try:
            path = self._paths[scan.timestep]
        except KeyError:
            raise FileNotFoundError(
                f"no feature file for timestep {scan.timestep} under {self.directory}")
        return read_feature_file(path)


def assign_points(features: np.ndarray, state_or_queries) -> tuple[np.ndarray, np.ndarray]:
    """Argmax point-to-query assignment; returns (per-point index, active set)."""
    queries = getattr(state_or_queries, "embeddings", state_or_queries)
    features = np.asarray(features, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if features.shape[0] == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    if features.shape[1] != queries.shape[1]:
        raise ValueError("feature and query dimensions differ")
    scores = features @ queries.T
    assignment = np.argmax(scores, axis=1)  # ties resolve to the lowest index
    return assignment, np.unique(assignment)


def recycle(state: QueryState, active: np.ndarray, barycenters: dict,
            timestep: int, params: TrackerParams, allocator: IdAllocator) -> QueryState:
    """Update IDs and bookkeeping for the active queries of one scan."""
    object_ids = state.object_ids.copy()
    last_bary = state.last_barycenter.copy()
    last_active = state.last_active.copy()
    for q in np.asarray(active, dtype=np.int64):
        q = int(q)
        bary = np.asarray(barycenters[q], dtype=np.float64)
        if last_active[q] < 0:
            object_ids[q] = allocator.allocate()
        else:
            displacement = float(np.linalg.norm(bary - last_bary[q]))
            if displacement > params.recycle_distance:
                object_ids[q] = allocator.allocate()
        last_bary[q] = bary
        last_active[q] = timestep
    return QueryState(state.embeddings, object_ids, last_bary, last_active)


def track_sequence(sequence: Sequence, provider: FeatureProvider,
                   params: TrackerParams | None = None,
                   initial_queries: np.ndarray | None = None
                   ) -> list[InstanceLabeling]:
    """Run the online tracker; poses are never consulted."""
    if params is None:
        params = TrackerParams()
    queries = (np.asarray(initial_queries, dtype=np.float64)
               if initial_queries is not None else provider.initial_queries())
    if queries.shape[0] != params.num_queries:
        raise ValueError(
            f"provider supplies {queries.shape[0]} queries, params expect {params.num_queries}")
    state = QueryState.initial(queries)
    allocator = IdAllocator()
    labelings = []
    for scan in sequence.scans:
        features, out_queries = provider.step(scan, state.embeddings)
        assignment, active = assign_points(features, out_queries)
        barycenters = {int(q): scan.xyz[assignment == q].mean(axis=0) for q in active}
        state = QueryState(out_queries, state.object_ids,
                           state.last_barycenter, state.last_active)
        state = recycle(state, active, barycenters, scan.timestep, params, allocator)
        ids = state.object_ids[assignment].astype(np.uint32) if len(scan) \
            else np.empty(0, dtype=np.uint32)
        labelings.append(InstanceLabeling(ids))
    return labelings


def seeded_initial_queries(num_queries: int, dim: int, seed: int = 0) -> np.ndarray:
    """Reproducible stand-in for learned initial queries."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    return rng.normal(0.0, 1.0, (num_queries, dim))
