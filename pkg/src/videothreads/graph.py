"""Temporal video graphs: construction, coarsening, and interpolation.

A video is a set of timestamped segment embeddings; nodes are segments and
edges connect segments whose temporal distance is at most a threshold that
doubles with every coarsening level, keeping the average degree constant as
node density halves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GraphError
from .kernels import as_matrix


@dataclass(frozen=True, eq=False)
class VideoGraph:
    """One resolution level of a video's temporal graph.

    ``edges`` holds undirected pairs (i, j) with i < j; two nodes are linked
    exactly when |t_i - t_j| <= edge_threshold * 2**level. ``edge_threshold``
    is the level-0 base value.
    """

    embeddings: np.ndarray
    timestamps: np.ndarray
    edges: frozenset[tuple[int, int]]
    level: int = 0
    edge_threshold: float = 1.0

    def __post_init__(self):
        if self.embeddings.shape[0] != self.timestamps.shape[0]:
            raise GraphError("embeddings and timestamps disagree on node count")
        if self.num_nodes == 0:
            raise GraphError("a video graph needs at least one node")
        if self.num_nodes > 1 and not np.all(np.diff(self.timestamps) > 0.0):
            raise GraphError("timestamps must be strictly increasing")
        if self.edge_threshold <= 0.0:
            raise GraphError("edge_threshold must be positive")

    @property
    def num_nodes(self) -> int:
        return int(self.timestamps.shape[0])

    @property
    def effective_threshold(self) -> float:
        return self.edge_threshold * float(2 ** self.level)

    def neighbor_lists(self) -> list[np.ndarray]:
        """Sorted neighbor indices per node."""
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return [np.array(sorted(nbrs), dtype=np.intp) for nbrs in adj]

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(dst, src) index arrays covering both directions, deterministically ordered."""
        if not self.edges:
            empty = np.empty(0, dtype=np.intp)
            return empty, empty
        pairs = np.array(sorted(self.edges), dtype=np.intp)
        dst = np.concatenate([pairs[:, 0], pairs[:, 1]])
        src = np.concatenate([pairs[:, 1], pairs[:, 0]])
        return dst, src


def temporal_edges(timestamps: np.ndarray, threshold: float) -> frozenset[tuple[int, int]]:
    """All pairs (i, j), i < j, with |t_i - t_j| <= threshold."""
    t = np.asarray(timestamps, dtype=np.float64)
    n = t.shape[0]
    dist = np.abs(t[:, None] - t[None, :])
    ii, jj = np.nonzero(np.triu(dist <= threshold, k=1))
    return frozenset((int(i), int(j)) for i, j in zip(ii, jj))


def build_graph(seq, edge_threshold: float) -> VideoGraph:
    """Level-0 graph for a feature sequence."""
    if edge_threshold <= 0.0:
        raise GraphError("edge_threshold must be positive")
    features = as_matrix(seq.features, "features")
    timestamps = np.asarray(seq.timestamps, dtype=np.float64)
    if features.shape[0] == 0:
        raise GraphError("cannot build a graph from an empty sequence")
    return VideoGraph(
        embeddings=features,
        timestamps=timestamps,
        edges=temporal_edges(timestamps, edge_threshold),
        level=0,
        edge_threshold=float(edge_threshold),
    )


def with_embeddings(g: VideoGraph, embeddings: np.ndarray) -> VideoGraph:
    """Same graph structure, new node embeddings."""
    return VideoGraph(
        embeddings=embeddings,
        timestamps=g.timestamps,
        edges=g.edges,
        level=g.level,
        edge_threshold=g.edge_threshold,
    )


def temporal_subsample(g: VideoGraph) -> VideoGraph:
    """Halve the temporal resolution by keeping even timestamp-order positions.

    The level increments and edges are rebuilt under the doubled threshold,
    so degree stays roughly constant. ceil(N/2) nodes survive.
    """
    keep = np.arange(0, g.num_nodes, 2)
    timestamps = g.timestamps[keep]
    level = g.level + 1
    return VideoGraph(
        embeddings=g.embeddings[keep],
        timestamps=timestamps,
        edges=temporal_edges(timestamps, g.edge_threshold * float(2 ** level)),
        level=level,
        edge_threshold=g.edge_threshold,
    )


def interpolation_weights(source_times: np.ndarray, target_times: np.ndarray):
    """Per-target (left index, right index, right weight) for linear-in-time
    interpolation with clamping outside the source range."""
    src = np.asarray(source_times, dtype=np.float64)
    tgt = np.asarray(target_times, dtype=np.float64)
    if src.shape[0] == 1:
        zeros = np.zeros(tgt.shape[0], dtype=np.intp)
        return zeros, zeros, np.zeros(tgt.shape[0])
    left = np.clip(np.searchsorted(src, tgt, side="right") - 1, 0, src.shape[0] - 2)
    right = left + 1
    w = (tgt - src[left]) / (src[right] - src[left])
    return left, right, np.clip(w, 0.0, 1.0)


def interpolation_matrix(source_times: np.ndarray, target_times: np.ndarray) -> np.ndarray:
    """Dense (targets x sources) linear interpolation operator."""
    left, right, w = interpolation_weights(source_times, target_times)
    m = np.zeros((len(np.atleast_1d(target_times)), len(np.atleast_1d(source_times))))
    rows = np.arange(m.shape[0])
    np.add.at(m, (rows, left), 1.0 - w)
    np.add.at(m, (rows, right), w)
    return m


def temporal_interpolate(coarse: VideoGraph, target_timestamps) -> np.ndarray:
    """Resample coarse node embeddings onto target timestamps.

    Linear per dimension in time; targets outside the coarse range clamp to
    the nearest endpoint, and targets equal to coarse timestamps reproduce
    the coarse rows exactly.
    """
    tgt = np.asarray(target_timestamps, dtype=np.float64)
    left, right, w = interpolation_weights(coarse.timestamps, tgt)
    emb = coarse.embeddings
    return (1.0 - w)[:, None] * emb[left] + w[:, None] * emb[right]


def nearest_indices(source_times: np.ndarray, query_times: np.ndarray) -> np.ndarray:
    """Index of the temporally closest source per query; ties pick the earlier."""
    src = np.asarray(source_times, dtype=np.float64)
    qry = np.asarray(query_times, dtype=np.float64)
    if src.shape[0] == 1:
        return np.zeros(qry.shape[0], dtype=np.intp)
    right = np.clip(np.searchsorted(src, qry, side="left"), 0, src.shape[0] - 1)
    left = np.clip(right - 1, 0, src.shape[0] - 1)
    pick_left = np.abs(qry - src[left]) <= np.abs(src[right] - qry)
    return np.where(pick_left, left, right)
