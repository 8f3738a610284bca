"""Seeded drivers that realize the index sequence n -> phi_{T^n omega}.

Drivers emit integer indices into a :class:`ChannelFamily`; the cocycle
engine resolves them.  A trajectory is therefore fully described by the
driver configuration plus its seed, and can be stored as a list of ints.

All randomness goes through a Philox generator.  Every step consumes exactly
one uniform double, so ``take(n)`` and ``n`` calls to ``next()`` agree.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .channels import Channel, make_rng, require_bcp


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ChannelFamily:
    """A finite, labelled list of bcp channels of one dimension."""

    channels: tuple[Channel, ...]

    def __post_init__(self):
        chans = tuple(self.channels)
        if not chans:
            raise ValueError("channel family must be nonempty")
        d = chans[0].d
        labels = [c.label for c in chans]
        if len(set(labels)) != len(labels):
            raise ValueError(f"channel labels must be unique, got {labels}")
        for c in chans:
            if c.d != d:
                raise ValueError("all channels in a family must share one dimension")
            require_bcp(c)
        object.__setattr__(self, "channels", chans)

    @classmethod
    def of(cls, *channels: Channel) -> "ChannelFamily":
        labelled = [c if c.label else c.with_label(f"ch{i}") for i, c in enumerate(channels)]
        return cls(tuple(labelled))

    @property
    def d(self) -> int:
        return self.channels[0].d

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.channels]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no channel labelled {label!r} in family") from None

    def __len__(self) -> int:
        return len(self.channels)

    def __getitem__(self, i: int) -> Channel:
        return self.channels[i]


@dataclass(frozen=True, eq=False)
class MarkovGraph:
    """Strongly connected directed graph with transition probabilities.

    ``channels[v]`` names the channel sitting at vertex ``v`` and ``ppt``
    lists the vertices whose channel is marked PPT.
    """

    labels: tuple[str, ...]
    edges: tuple[tuple[int, int, float], ...]
    channels: tuple[str, ...] | None = None
    ppt: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        labels = tuple(self.labels)
        n = len(labels)
        if n == 0:
            raise GraphError("graph needs at least one vertex")
        if len(set(labels)) != n:
            raise GraphError("vertex labels must be unique")
        edges = tuple((int(a), int(b), float(p)) for a, b, p in self.edges)
        seen = set()
        for a, b, p in edges:
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge ({a}, {b}) references a missing vertex")
            if not 0.0 < p <= 1.0:
                raise GraphError(f"edge ({a}, {b}) probability {p} outside (0, 1]")
            if (a, b) in seen:
                raise GraphError(f"duplicate edge ({a}, {b})")
            seen.add((a, b))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "edges", edges)
        chans = labels if self.channels is None else tuple(self.channels)
        if len(chans) != n:
            raise GraphError("need one channel label per vertex")
        object.__setattr__(self, "channels", chans)
        ppt = frozenset(int(v) for v in self.ppt)
        if any(not 0 <= v < n for v in ppt):
            raise GraphError("PPT mark on a missing vertex")
        object.__setattr__(self, "ppt", ppt)
        p = self.transition_matrix()
        rows = p.sum(axis=1)
        bad = np.flatnonzero(np.abs(rows - 1.0) > 1e-12)
        if bad.size:
            raise GraphError(f"outgoing probabilities of vertex {labels[bad[0]]!r} sum to {rows[bad[0]]!r}")
        ncomp, _ = connected_components(p > 0, directed=True, connection="strong")
        if ncomp != 1:
            raise GraphError("graph is not strongly connected")

    @property
    def n_vertices(self) -> int:
        return len(self.labels)

    def transition_matrix(self) -> np.ndarray:
        p = np.zeros((self.n_vertices, self.n_vertices))
        for a, b, w in self.edges:
            p[a, b] = w
        return p

    def vertex(self, label: str) -> int:
        return self.labels.index(label)


def stationary_distribution(g: MarkovGraph) -> np.ndarray:
    """Unique invariant probability vector: the left Perron eigenvector of P."""
    p = g.transition_matrix()
    w, v = np.linalg.eig(p.T)
    i = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(v[:, i])
    pi = pi / pi.sum()
    if np.any(pi <= 0) or np.linalg.norm(pi @ p - pi) > 1e-10:
        raise np.linalg.LinAlgError("stationary distribution solve failed")
    return pi


def cyclic_algorithm_graph(
    n_steps: int,
    n_errors: int,
    channels: dict[str, str] | None = None,
    ppt: Sequence[str] = (),
) -> MarkovGraph:
    """Algorithm/error cycle phi_0 -> E_{0,j} -> phi_1 -> ... -> phi_0.

    Vertices are labelled ``phi_k`` and ``E_k_j`` (j = 1..n_errors).  Each
    ``phi_k`` moves to one of its ``n_errors`` error vertices uniformly, and each
    error vertex moves to ``phi_{k+1 mod n_steps}`` with probability 1.
    ``channels`` maps vertex labels to channel labels (default: the vertex label).
    """
    if n_steps < 1 or n_errors < 1:
        raise ValueError("need n_steps >= 1 and n_errors >= 1")
    labels = []
    for k in range(n_steps):
        labels.append(f"phi_{k}")
        labels.extend(f"E_{k}_{j}" for j in range(1, n_errors + 1))
    idx = {lab: i for i, lab in enumerate(labels)}
    edges = []
    for k in range(n_steps):
        nxt = idx[f"phi_{(k + 1) % n_steps}"]
        for j in range(1, n_errors + 1):
            e = idx[f"E_{k}_{j}"]
            edges.append((idx[f"phi_{k}"], e, 1.0 / n_errors))
            edges.append((e, nxt, 1.0))
    channels = channels or {}
    unknown = set(channels) - set(labels)
    if unknown:
        raise GraphError(f"unknown vertices in channel assignment: {sorted(unknown)}")
    chans = tuple(channels.get(lab, lab) for lab in labels)
    missing = [v for v in ppt if v not in idx]
    if missing:
        raise GraphError(f"unknown PPT vertices: {missing}")
    return MarkovGraph(tuple(labels), tuple(edges), chans, frozenset(idx[v] for v in ppt))


def graph_to_dict(g: MarkovGraph) -> dict:
    return {
        "vertices": [
            {"label": lab, "channel": ch, "ppt": i in g.ppt}
            for i, (lab, ch) in enumerate(zip(g.labels, g.channels))
        ],
        "edges": [{"from": g.labels[a], "to": g.labels[b], "p": p} for a, b, p in g.edges],
    }


def graph_from_dict(data: dict) -> MarkovGraph:
    try:
        verts = data["vertices"]
        labels = tuple(str(v["label"]) for v in verts)
        chans = tuple(str(v.get("channel", v["label"])) for v in verts)
        ppt = frozenset(i for i, v in enumerate(verts) if v.get("ppt", False))
        idx = {lab: i for i, lab in enumerate(labels)}

        def vid(x):
            return idx[x] if isinstance(x, str) else int(x)

        edges = tuple((vid(e["from"]), vid(e["to"]), float(e["p"])) for e in data["edges"])
    except (KeyError, TypeError) as exc:
        raise GraphError(f"malformed graph record: {exc}") from exc
    return MarkovGraph(labels, edges, chans, ppt)


def save_graph(g: MarkovGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g), indent=1))


def load_graph(path: str | Path) -> MarkovGraph:
    return graph_from_dict(json.loads(Path(path).read_text()))


# -- drivers ------------------------------------------------------------------------


class Driver:
    """Base class: an index stream with copyable state."""

    kind = "abstract"

    def __init__(self):
        self.step = 0

    def next(self) -> int:
        idx = self._emit()
        self.step += 1
        return idx

    def _emit(self) -> int:
        raise NotImplementedError

    def take(self, n: int) -> np.ndarray:
        return np.array([self.next() for _ in range(n)], dtype=np.int64)

    def copy(self) -> "Driver":
        return copy.deepcopy(self)

    def config(self) -> dict:
        raise NotImplementedError

    @property
    def period(self) -> int | None:
        return None


class IIDDriver(Driver):
    kind = "iid"

    def __init__(self, weights: Sequence[float], seed: int):
        super().__init__()
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be a probability vector, got {weights!r}")
        self.weights = w
        self.seed = seed
        self._cdf = np.cumsum(w)
        self._cdf[-1] = 1.0
        self._rng = make_rng(seed)

    def _emit(self) -> int:
        u = self._rng.random()
        return int(min(np.searchsorted(self._cdf, u, side="right"), len(self.weights) - 1))

    def take(self, n: int) -> np.ndarray:
        u = self._rng.random(n)
        out = np.minimum(np.searchsorted(self._cdf, u, side="right"), len(self.weights) - 1)
        self.step += n
        return out.astype(np.int64)

    def config(self) -> dict:
        return {"kind": self.kind, "weights": self.weights.tolist(), "seed": self.seed}

    @property
    def period(self) -> int | None:
        return 1 if np.count_nonzero(self.weights) == 1 else None


class MarkovDriver(Driver):
    """Walks a :class:`MarkovGraph`; emits the channel at the current vertex, then moves."""

    kind = "markov"

    def __init__(self, graph: MarkovGraph, seed: int, start: int | str = "stationary",
                 family: ChannelFamily | None = None):
        super().__init__()
        self.graph = graph
        self.seed = seed
        self.start = start
        self._rng = make_rng(seed)
        p = graph.transition_matrix()
        self._succ = [np.flatnonzero(row > 0) for row in p]
        self._cdf = []
        for row, succ in zip(p, self._succ):
            c = np.cumsum(row[succ])
            c[-1] = 1.0
            self._cdf.append(c)
        if family is None:
            self._emit_map = np.arange(graph.n_vertices)
        else:
            self._emit_map = np.array([family.index(c) for c in graph.channels])
        if start == "stationary":
            pi = np.cumsum(stationary_distribution(graph))
            pi[-1] = 1.0
            self.vertex = int(np.searchsorted(pi, self._rng.random(), side="right"))
        elif isinstance(start, str):
            self.vertex = graph.vertex(start)
        else:
            self.vertex = int(start)
        self.vertex_log: list[int] = []

    def _emit(self) -> int:
        v = self.vertex
        self.vertex_log.append(v)
        succ, cdf = self._succ[v], self._cdf[v]
        j = min(int(np.searchsorted(cdf, self._rng.random(), side="right")), len(succ) - 1)
        self.vertex = int(succ[j])
        return int(self._emit_map[v])

    def config(self) -> dict:
        return {"kind": self.kind, "graph": graph_to_dict(self.graph), "seed": self.seed,
                "start": self.start}


class PeriodicDriver(Driver):
    kind = "periodic"

    def __init__(self, sequence: Sequence[int]):
        super().__init__()
        seq = [int(i) for i in sequence]
        if not seq:
            raise ValueError("periodic driver needs a nonempty sequence")
        self.sequence = seq

    def _emit(self) -> int:
        return self.sequence[self.step % len(self.sequence)]

    def config(self) -> dict:
        return {"kind": self.kind, "sequence": list(self.sequence)}

    @property
    def period(self) -> int | None:
        return len(self.sequence)


def iid_driver(weights: Sequence[float], seed: int) -> IIDDriver:
    return IIDDriver(weights, seed)


def markov_driver(g: MarkovGraph, seed: int, start: int | str = "stationary",
                  family: ChannelFamily | None = None) -> MarkovDriver:
    return MarkovDriver(g, seed, start, family)


def periodic_driver(sequence: Sequence[int]) -> PeriodicDriver:
    return PeriodicDriver(sequence)


def driver_from_config(cfg: dict, seed: int, family: ChannelFamily | None = None) -> Driver:
    kind = cfg.get("kind")
    if kind == "iid":
        weights = cfg.get("weights")
        if weights is None and family is not None:
            weights = [1.0 / len(family)] * len(family)
        return IIDDriver(weights, seed)
    if kind == "periodic":
        seq = cfg["sequence"]
        if family is not None:
            seq = [family.index(s) if isinstance(s, str) else int(s) for s in seq]
        return PeriodicDriver(seq)
    if kind == "markov":
        g = cfg["graph"]
        g = g if isinstance(g, MarkovGraph) else graph_from_dict(g)
        return MarkovDriver(g, seed, cfg.get("start", "stationary"), family)
    raise ValueError(f"unknown driver kind {kind!r}")
