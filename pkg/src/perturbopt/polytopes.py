"""Solution polytopes, linear maximization oracles and normal-fan geometry.

Three polytope kinds are supported:

- ``Permutahedron(n)``: vertices are the n! permutations of (1, ..., n);
  the oracle sorts the direction vector.
- ``DagPaths``: vertices are arc indicators of source-sink paths in a DAG;
  the oracle is longest-path dynamic programming.
- ``VspFlow``: vertices are arc subsets with in/out degree at most one per
  task (partitions of the tasks into vehicle paths); the oracle is a
  min-cost flow on the unit-capacity path-partition network.

All geometric quantities (internal cone radius, tie-splitting measure,
facet normals) are computed exactly from vertex enumeration.  Enumeration
is capped at ENUMERATION_CAP vertices; beyond the cap only the oracle is
available.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

ENUMERATION_CAP = 10_000
# Absolute tolerance on <y, theta> gaps when declaring a tie.  Exact ties
# from integer feature data dominate in practice; perturbed directions hit
# ties with probability zero.
TIE_TOL = 1e-12


class EnumerationUnavailable(RuntimeError):
    """Raised when an operation needs vertex enumeration above the cap."""


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    y: np.ndarray
    value: float
    tie: bool


@dataclass(frozen=True)
class SurrogateMeasure:
    """Tie-splitting measure over solutions: atoms (vertex, probability).

    ``std_errors`` is None in exact mode and carries the Monte Carlo
    standard error per atom in sampled mode.
    """

    atoms: list[tuple[np.ndarray, float]]
    is_dirac: bool
    std_errors: np.ndarray | None = None

    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])


def _check_theta(polytope: "SolutionPolytope", theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (polytope.dim,):
        raise DimensionMismatch(
            f"direction has shape {theta.shape}, polytope dimension is {polytope.dim}"
        )
    if not np.all(np.isfinite(theta)):
        raise ValueError("direction has non-finite entries")
    return theta


class SolutionPolytope:
    """Base class; concrete kinds implement argmax and vertex iteration."""

    dim: int

    def argmax(self, theta: np.ndarray) -> OracleResult:
        raise NotImplementedError

    def _iter_vertices(self):
        raise NotImplementedError

    def vertex_count(self) -> int:
        raise NotImplementedError

    @property
    def enumerable(self) -> bool:
        return self.vertex_count() <= ENUMERATION_CAP

    def vertices(self) -> np.ndarray:
        """All vertices, shape (N, dim).  Cached after first call."""
        cached = getattr(self, "_vertices_cache", None)
        if cached is not None:
            return cached
        if not self.enumerable:
            raise EnumerationUnavailable(
                f"{self!r} has {self.vertex_count()} vertices, cap is {ENUMERATION_CAP}"
            )
        verts = np.array(list(self._iter_vertices()), dtype=np.float64)
        verts.setflags(write=False)
        setattr(self, "_vertices_cache", verts)
        return verts

    def _pairwise_distances(self) -> np.ndarray:
        cached = getattr(self, "_dist_cache", None)
        if cached is not None:
            return cached
        verts = self.vertices()
        diff = verts[:, None, :] - verts[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        setattr(self, "_dist_cache", dist)
        return dist

    def span_rank(self) -> int:
        """Rank of the linear span of the vertex set."""
        return int(np.linalg.matrix_rank(self.vertices()))


class Permutahedron(SolutionPolytope):
    """Convex hull of the permutations of (1, ..., n)."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.dim = n

    def __repr__(self):
        return f"Permutahedron({self.n})"

    def vertex_count(self) -> int:
        return math.factorial(self.n)

    def _iter_vertices(self):
        for perm in itertools.permutations(range(1, self.n + 1)):
            yield perm

    def argmax(self, theta: np.ndarray) -> OracleResult:
        theta = _check_theta(self, theta)
        order = np.argsort(theta, kind="stable")
        y = np.empty(self.n, dtype=np.float64)
        y[order] = np.arange(1, self.n + 1, dtype=np.float64)
        value = float(y @ theta)
        sorted_theta = theta[order]
        tie = bool(np.any(np.diff(sorted_theta) <= TIE_TOL)) if self.n > 1 else False
        return OracleResult(y, value, tie)


class DagPaths(SolutionPolytope):
    """Arc indicators of source-sink paths in a DAG.

    ``arcs`` is a list of (tail, head) node pairs; nodes are hashable
    labels.  The embedding dimension is the number of arcs.
    """

    def __init__(self, arcs, source, sink):
        if not arcs:
            raise ValueError("need at least one arc")
        self.arcs = list(arcs)
        self.source = source
        self.sink = sink
        self.dim = len(self.arcs)
        self.nodes = sorted({u for u, _ in self.arcs} | {v for _, v in self.arcs}, key=str)
        self._topo = self._topological_order()
        self._in_arcs = {v: [] for v in self.nodes}
        for idx, (u, v) in enumerate(self.arcs):
            self._in_arcs[v].append((idx, u))
        if self.vertex_count() == 0:
            raise ValueError("no source-sink path in the DAG")

    def __repr__(self):
        return f"DagPaths({len(self.arcs)} arcs, {self.source}->{self.sink})"

    def _topological_order(self):
        indeg = {v: 0 for v in self.nodes}
        out = {v: [] for v in self.nodes}
        for u, v in self.arcs:
            indeg[v] += 1
            out[u].append(v)
        frontier = sorted((v for v in self.nodes if indeg[v] == 0), key=str)
        order = []
        while frontier:
            v = frontier.pop(0)
            order.append(v)
            added = []
            for w in out[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    added.append(w)
            frontier.extend(sorted(added, key=str))
        if len(order) != len(self.nodes):
            raise ValueError("arc set contains a cycle")
        return order

    def vertex_count(self) -> int:
        count = {v: 0 for v in self.nodes}
        count[self.source] = 1
        for v in self._topo:
            for _, u in self._in_arcs[v]:
                count[v] += count[u]
        return count[self.sink]

    def _iter_vertices(self):
        out = {v: [] for v in self.nodes}
        for idx, (u, v) in enumerate(self.arcs):
            out[u].append((idx, v))
        stack = [(self.source, [])]
        while stack:
            node, used = stack.pop()
            if node == self.sink:
                y = np.zeros(self.dim)
                y[used] = 1.0
                yield y
                continue
            for idx, w in reversed(out[node]):
                stack.append((w, used + [idx]))

    def _best_values(self, theta: np.ndarray, banned: int = -1) -> dict:
        best = {v: -np.inf for v in self.nodes}
        best[self.source] = 0.0
        for v in self._topo:
            for idx, u in self._in_arcs[v]:
                if idx == banned or best[u] == -np.inf:
                    continue
                cand = best[u] + theta[idx]
                if cand > best[v]:
                    best[v] = cand
        return best

    def argmax(self, theta: np.ndarray) -> OracleResult:
        theta = _check_theta(self, theta)
        best = {v: -np.inf for v in self.nodes}
        pred = {v: None for v in self.nodes}
        best[self.source] = 0.0
        for v in self._topo:
            for idx, u in self._in_arcs[v]:
                if best[u] == -np.inf:
                    continue
                cand = best[u] + theta[idx]
                if cand > best[v]:
                    best[v] = cand
                    pred[v] = (idx, u)
        value = best[self.sink]
        used = []
        node = self.sink
        while node != self.source:
            idx, node = pred[node]
            used.append(idx)
        y = np.zeros(self.dim)
        y[used] = 1.0
        # Exact second-best: the runner-up path must avoid at least one arc
        # of the winner, so re-solve with each winning arc banned.
        second = -np.inf
        for idx in used:
            second = max(second, self._best_values(theta, banned=idx)[self.sink])
        tie = bool(second >= value - TIE_TOL)
        return OracleResult(y, float(value), tie)


class VspFlow(SolutionPolytope):
    """Partitions of tasks into vehicle paths, as arc-subset indicators.

    ``arcs`` is a list of (i, j) task pairs with i operated before j; a
    feasible solution is any arc subset with in-degree and out-degree at
    most one per task (in a DAG such subsets are exactly the partitions of
    the tasks into paths).
    """

    def __init__(self, n_tasks: int, arcs):
        if n_tasks < 1:
            raise ValueError("need at least one task")
        self.n_tasks = n_tasks
        self.arcs = [(int(i), int(j)) for i, j in arcs]
        for i, j in self.arcs:
            if not (0 <= i < n_tasks and 0 <= j < n_tasks) or i == j:
                raise ValueError(f"bad arc ({i}, {j})")
        self.dim = len(self.arcs)
        if self.dim == 0:
            raise ValueError("need at least one arc")

    def __repr__(self):
        return f"VspFlow({self.n_tasks} tasks, {len(self.arcs)} arcs)"

    def vertex_count(self) -> int:
        cached = getattr(self, "_count_cache", None)
        if cached is None:
            cached = sum(1 for _ in self._iter_subsets(cap=None))
            setattr(self, "_count_cache", cached)
        return cached

    def _iter_subsets(self, cap=ENUMERATION_CAP):
        m = len(self.arcs)
        out_used = [False] * self.n_tasks
        in_used = [False] * self.n_tasks
        chosen = []
        emitted = 0

        def rec(k):
            nonlocal emitted
            if k == m:
                y = np.zeros(m)
                y[chosen] = 1.0
                emitted += 1
                if cap is not None and emitted > cap:
                    raise EnumerationUnavailable("vertex cap exceeded")
                yield y
                return
            yield from rec(k + 1)
            i, j = self.arcs[k]
            if not out_used[i] and not in_used[j]:
                out_used[i] = True
                in_used[j] = True
                chosen.append(k)
                yield from rec(k + 1)
                chosen.pop()
                out_used[i] = False
                in_used[j] = False

        yield from rec(0)

    def _iter_vertices(self):
        yield from self._iter_subsets(cap=None)

    def n_paths(self, y: np.ndarray) -> int:
        """Number of vehicle paths used by solution y."""
        return self.n_tasks - int(round(float(np.sum(y))))

    def paths(self, y: np.ndarray) -> list[list[int]]:
        """Decompose solution y into its vehicle paths (task sequences)."""
        nxt = {}
        has_pred = set()
        for idx, (i, j) in enumerate(self.arcs):
            if y[idx] > 0.5:
                nxt[i] = j
                has_pred.add(j)
        out = []
        for start in range(self.n_tasks):
            if start in has_pred:
                continue
            path = [start]
            while path[-1] in nxt:
                path.append(nxt[path[-1]])
            out.append(path)
        return out

    def _min_cost_flow(self, theta: np.ndarray, banned: int = -1, forced: int = -1):
        """Max-weight degree-constrained arc subset by successive shortest
        paths on the out/in split network.  Returns (y, value).

        ``banned`` removes one arc; ``forced`` makes one arc's cost dominate
        so every optimal flow includes it (the network stays acyclic, which
        keeps the residual free of negative cycles).
        """
        n = self.n_tasks
        m = len(self.arcs)
        n_nodes = 2 + 2 * n  # S, T, out_i, in_j
        S, T = 0, 1

        tails, heads, caps, costs = [], [], [], []

        def add_edge(u, v, cap, cost):
            tails.append(u)
            heads.append(v)
            caps.append(cap)
            costs.append(cost)

        big = 10.0 * (float(np.sum(np.abs(theta))) + 1.0)
        for i in range(n):
            add_edge(S, 2 + i, 1, 0.0)
            add_edge(2 + n + i, T, 1, 0.0)
        arc_edge = []
        for idx, (i, j) in enumerate(self.arcs):
            if idx == banned:
                arc_edge.append(None)
                continue
            cost = -big if idx == forced else -float(theta[idx])
            add_edge(2 + i, 2 + n + j, 1, cost)
            arc_edge.append(len(tails) - 1)

        n_edges = len(tails)
        flow = [0] * n_edges

        def shortest_augmenting_path():
            # Bellman-Ford on the residual network (costs may be negative).
            dist = [math.inf] * n_nodes
            par = [None] * n_nodes
            dist[S] = 0.0
            for _ in range(n_nodes):
                improved = False
                for e in range(n_edges):
                    u, v, c = tails[e], heads[e], costs[e]
                    if flow[e] < caps[e] and dist[u] + c < dist[v] - 1e-15:
                        dist[v] = dist[u] + c
                        par[v] = (e, +1)
                        improved = True
                    if flow[e] > 0 and dist[v] - c < dist[u] - 1e-15:
                        dist[u] = dist[v] - c
                        par[u] = (e, -1)
                        improved = True
                if not improved:
                    break
            return dist[T], par

        while True:
            d, par = shortest_augmenting_path()
            if not (d < -1e-15):
                break
            node = T
            steps = 0
            while node != S:
                e, sign = par[node]
                flow[e] += sign
                node = tails[e] if sign == +1 else heads[e]
                steps += 1
                if steps > n_nodes:
                    raise RuntimeError("augmenting path reconstruction cycled")

        y = np.zeros(m)
        value = 0.0
        for idx in range(m):
            e = arc_edge[idx]
            if e is not None and flow[e] == 1:
                y[idx] = 1.0
                value += float(theta[idx])
        return y, value

    def argmax(self, theta: np.ndarray) -> OracleResult:
        theta = _check_theta(self, theta)
        y, value = self._min_cost_flow(theta)
        used = [i for i in range(self.dim) if y[i] > 0.5]
        unused = [i for i in range(self.dim) if y[i] < 0.5]
        # Exact tie check: any alternative optimum differs from y on some
        # arc, so it survives banning one used arc or forcing one unused.
        tie = False
        for idx in used:
            _, v2 = self._min_cost_flow(theta, banned=idx)
            if v2 >= value - TIE_TOL:
                tie = True
                break
        if not tie:
            for idx in unused:
                _, v2 = self._min_cost_flow(theta, forced=idx)
                if v2 >= value - TIE_TOL:
                    tie = True
                    break
        return OracleResult(y, float(value), tie)


# ---------------------------------------------------------------------------
# Module-level operations


def linear_oracle(polytope: SolutionPolytope, theta) -> OracleResult:
    """Return a vertex maximizing <y, theta>, with a tie flag."""
    return polytope.argmax(np.asarray(theta, dtype=np.float64))


def internal_radius(polytope: SolutionPolytope, theta) -> float:
    """Distance from theta to the boundary of its normal cone.

    Computed as min over vertices y' != y* of <y* - y', theta> / |y* - y'|,
    which equals the distance to the nearest valid constraint hyperplane of
    the winning cone. Zero exactly on cone boundaries (oracle ties).
    """
    theta = _check_theta(polytope, theta)
    return float(internal_radius_batch(polytope, theta[None, :])[0])


def internal_radius_batch(polytope: SolutionPolytope, thetas: np.ndarray) -> np.ndarray:
    """Vectorized internal radius for a batch of directions, shape (B, d)."""
    verts = polytope.vertices()  # (N, d)
    dist = polytope._pairwise_distances()  # (N, N)
    thetas = np.asarray(thetas, dtype=np.float64)
    out = np.empty(len(thetas))
    block = max(1, int(2e7) // max(len(verts), 1))
    for lo in range(0, len(thetas), block):
        hi = min(lo + block, len(thetas))
        scores = thetas[lo:hi] @ verts.T  # (B, N)
        rows = np.arange(hi - lo)
        winner = np.argmax(scores, axis=1)
        gaps = scores[rows, winner][:, None] - scores
        denom = dist[winner]
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = gaps / denom
        ratio[rows, winner] = np.inf
        out[lo:hi] = np.maximum(np.min(ratio, axis=1), 0.0)
    return out


def _uniform_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radii = rng.random(n) ** (1.0 / d)
    return g * radii[:, None]


# Tie-splitting Monte Carlo: ball radius relative to the direction scale and
# the number of ball samples.
P0_RADIUS_REL = 1e-9
P0_SAMPLES = 100_000


def p0(
    polytope: SolutionPolytope,
    theta,
    rng: np.random.Generator | None = None,
    n_samples: int = P0_SAMPLES,
) -> SurrogateMeasure:
    """The unperturbed policy measure at theta.

    Generic directions give a Dirac at the oracle output.  On cone
    boundaries the cone proportions are estimated by Monte Carlo over a
    uniform ball of infinitesimal radius around theta.
    """
    theta = _check_theta(polytope, theta)
    result = polytope.argmax(theta)
    if not result.tie:
        return SurrogateMeasure(atoms=[(result.y, 1.0)], is_dirac=True)
    verts = polytope.vertices()
    if rng is None:
        rng = np.random.default_rng(0)
    radius = P0_RADIUS_REL * (1.0 + float(np.linalg.norm(theta)))
    probes = theta[None, :] + radius * _uniform_ball(rng, n_samples, polytope.dim)
    winners = np.argmax(probes @ verts.T, axis=1)
    counts = np.bincount(winners, minlength=len(verts)).astype(np.float64)
    probs = counts / n_samples
    keep = np.flatnonzero(probs > 0)
    atoms = [(verts[i], float(probs[i])) for i in keep]
    ses = np.sqrt(probs[keep] * (1.0 - probs[keep]) / n_samples)
    return SurrogateMeasure(atoms=atoms, is_dirac=False, std_errors=ses)


def enumerate_normal_fan(polytope: SolutionPolytope):
    """For each vertex y, the unit halfspace normals (y - y') / |y - y'|.

    Redundant halfspaces are kept: exactness over minimality; the internal
    radius equals the min distance to these hyperplanes.
    """
    verts = polytope.vertices()
    fan = []
    for i in range(len(verts)):
        diffs = verts[i][None, :] - np.delete(verts, i, axis=0)
        norms = np.linalg.norm(diffs, axis=1, keepdims=True)
        fan.append((verts[i], diffs / norms))
    return fan
