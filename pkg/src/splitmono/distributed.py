"""In-process simulator for distributed splitting over time-varying graphs.

Each round applies, to the stacked primal/dual state (x, y), the transform

    Q_t = Id - mu_t P_t (Id - S_t),      P_t = [[Id/gamma, -L_t], [-L_t, Id/tau]],

where S_t is the per-round primal-dual update (decoupled proximal steps plus
dual ascent through the graph Laplacian L_t) and 0 < mu_t <= ||P_t||^{-1}.
All communication happens through Laplacian products, which read only
neighbor blocks; rounds are synchronous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import BlockLayout, operator_norm
from .fbhf import ConfigurationError, SolveConfig, SolveReport, _Counters, _run


@dataclass(frozen=True)
class Graph:
    """Undirected connected graph on n vertices with integer Laplacian."""

    n: int
    edges: tuple[tuple[int, int], ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one agent")
        seen = set()
        for (i, j) in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n) or i == j:
                raise ValueError(f"invalid edge {(i, j)}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
        object.__setattr__(self, "edges", tuple(sorted(seen)))
        if self.n > 1 and not self._connected():
            raise ValueError("graph is not connected")

    def _connected(self) -> bool:
        reach = {0}
        frontier = [0]
        nbrs = self.neighbors
        while frontier:
            i = frontier.pop()
            for j in nbrs[i]:
                if j not in reach:
                    reach.add(j)
                    frontier.append(j)
        return len(reach) == self.n

    @property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        if "neighbors" not in self._cache:
            nbr = [[] for _ in range(self.n)]
            for (i, j) in self.edges:
                nbr[i].append(j)
                nbr[j].append(i)
            self._cache["neighbors"] = tuple(tuple(sorted(v)) for v in nbr)
        return self._cache["neighbors"]

    @property
    def degrees(self) -> np.ndarray:
        if "degrees" not in self._cache:
            deg = np.zeros(self.n, dtype=int)
            for (i, j) in self.edges:
                deg[i] += 1
                deg[j] += 1
            self._cache["degrees"] = deg
        return self._cache["degrees"]

    def laplacian(self) -> np.ndarray:
        """Degree-minus-adjacency matrix, built in integer arithmetic so
        L @ ones == 0 holds exactly."""
        if "laplacian" not in self._cache:
            L = np.zeros((self.n, self.n))
            for (i, j) in self.edges:
                L[i, i] += 1.0
                L[j, j] += 1.0
                L[i, j] -= 1.0
                L[j, i] -= 1.0
            self._cache["laplacian"] = L
        return self._cache["laplacian"]

    def laplacian_apply(self, X: np.ndarray) -> np.ndarray:
        """Apply the Laplacian blockwise: agent i reads only its neighbors,
        (L X)_i = deg(i) X_i - sum_{j ~ i} X_j."""
        X = np.asarray(X, dtype=float)
        out = np.empty_like(X)
        nbrs = self.neighbors
        deg = self.degrees
        for i in range(self.n):
            acc = deg[i] * X[i]
            for j in nbrs[i]:
                acc = acc - X[j]
            out[i] = acc
        return out

    def fiedler_value(self) -> float:
        """Second-smallest Laplacian eigenvalue (positive iff connected)."""
        if self.n == 1:
            return math.inf
        vals = np.sort(np.linalg.eigvalsh(self.laplacian()))
        return float(vals[1])

    def norm_laplacian(self) -> float:
        if "norm_laplacian" not in self._cache:
            self._cache["norm_laplacian"] = (
                operator_norm(self.laplacian()) if self.edges else 0.0)
        return self._cache["norm_laplacian"]

    @classmethod
    def path(cls, n: int) -> "Graph":
        return cls(n, tuple((i, i + 1) for i in range(n - 1)))

    @classmethod
    def ring(cls, n: int) -> "Graph":
        if n < 3:
            return cls.path(n)
        return cls(n, tuple((i, (i + 1) % n) for i in range(n)))

    @classmethod
    def star(cls, n: int) -> "Graph":
        return cls(n, tuple((0, i) for i in range(1, n)))

    @classmethod
    def random_connected(cls, n: int, rng: np.random.Generator) -> "Graph":
        """Rejection-sample an Erdos-Renyi graph (p = 1/2) until connected."""
        if n == 1:
            return cls(1, ())
        while True:
            edges = tuple((i, j) for i in range(n) for j in range(i + 1, n)
                          if rng.random() < 0.5)
            try:
                return cls(n, edges)
            except ValueError:
                continue


@dataclass(frozen=True)
class GraphSequence:
    """t -> connected graph; built-in kinds are fixed, alternating and
    seeded-random, all deterministic."""

    at: Callable[[int], Graph]
    n: int

    @classmethod
    def fixed(cls, g: Graph) -> "GraphSequence":
        return cls(at=lambda t: g, n=g.n)

    @classmethod
    def alternating(cls, g1: Graph, g2: Graph) -> "GraphSequence":
        if g1.n != g2.n:
            raise ValueError("alternating graphs must share the agent set")
        return cls(at=lambda t: g1 if t % 2 == 0 else g2, n=g1.n)

    @classmethod
    def random(cls, n: int, seed: int) -> "GraphSequence":
        cache: dict[int, Graph] = {}

        def at(t: int) -> Graph:
            if t not in cache:
                # one child generator per round keeps the sequence
                # independent of evaluation order
                rng = np.random.default_rng((seed, t))
                cache[t] = Graph.random_connected(n, rng)
            return cache[t]

        return cls(at=at, n=n)


@dataclass
class AgentState:
    """Local view of one agent: primal and dual blocks plus the cost prox."""

    x: np.ndarray
    y: np.ndarray
    prox: Callable[[float, np.ndarray], np.ndarray]


def _stack(states) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([np.atleast_1d(np.asarray(s.x, dtype=float)) for s in states])
    Y = np.stack([np.atleast_1d(np.asarray(s.y, dtype=float)) for s in states])
    return X, Y


def _check_steps(graph: Graph, gamma: float, tau: float) -> None:
    if gamma <= 0 or tau <= 0:
        raise ConfigurationError("gamma and tau must be positive")
    nrm = graph.norm_laplacian()
    if 1.0 / (gamma * tau) <= nrm * nrm * (1.0 + 1e-12):
        raise ConfigurationError(
            f"stepsize condition violated: 1/(gamma tau) = {1.0 / (gamma * tau):.6g} "
            f"must exceed ||L||^2 = {nrm * nrm:.6g}")


def _s_update(X, Y, proxes, graph: Graph, gamma: float,
              tau: float) -> tuple[np.ndarray, np.ndarray]:
    LY = graph.laplacian_apply(Y)
    Xn = np.stack([np.atleast_1d(proxes[i](gamma, X[i] - gamma * LY[i]))
                   for i in range(graph.n)])
    Yn = Y + tau * graph.laplacian_apply(2.0 * Xn - X)
    return Xn, Yn


def _q_update(X, Y, proxes, graph: Graph, gamma: float, tau: float,
              mu: float) -> tuple[np.ndarray, np.ndarray]:
    SX, SY = _s_update(X, Y, proxes, graph, gamma, tau)
    DX = X - SX
    DY = Y - SY
    PX = DX / gamma - graph.laplacian_apply(DY)
    PY = -graph.laplacian_apply(DX) + DY / tau
    return X - mu * PX, Y - mu * PY


def consensus_step(states, graph: Graph, gamma: float, tau: float) -> list[AgentState]:
    """One synchronous round of the fixed-graph primal-dual update:
    decoupled proximal steps against the dual Laplacian term, then the dual
    ascent through L applied to the reflected primal."""
    _check_steps(graph, gamma, tau)
    X, Y = _stack(states)
    Xn, Yn = _s_update(X, Y, [s.prox for s in states], graph, gamma, tau)
    return [AgentState(x=Xn[i], y=Yn[i], prox=states[i].prox)
            for i in range(graph.n)]


def metric_norm(graph: Graph, gamma: float, tau: float) -> float:
    """||P_t|| for the block metric [[Id/gamma, -L], [-L, Id/tau]]."""
    key = ("metric_norm", gamma, tau)
    if key not in graph._cache:
        n = graph.n
        L = graph.laplacian()
        P = np.zeros((2 * n, 2 * n))
        P[:n, :n] = np.eye(n) / gamma
        P[n:, n:] = np.eye(n) / tau
        P[:n, n:] = -L
        P[n:, :n] = -L
        graph._cache[key] = operator_norm(P)
    return graph._cache[key]


def t_class_consensus_step(states, graph: Graph, gamma: float, tau: float,
                           mu: float) -> list[AgentState]:
    """One application of Q_t = Id - mu P_t (Id - S_t) to the stacked state.

    Multiplication by P_t only involves Laplacian products, so the round
    stays neighbor-local; fixed points of S_t are preserved.
    """
    _check_steps(graph, gamma, tau)
    bound = 1.0 / metric_norm(graph, gamma, tau)
    if not 0.0 < mu <= bound * (1.0 + 1e-12):
        raise ConfigurationError(f"mu must lie in ]0, {bound:.6g}] (got {mu:.6g})")
    X, Y = _stack(states)
    Xn, Yn = _q_update(X, Y, [s.prox for s in states], graph, gamma, tau, mu)
    return [AgentState(x=Xn[i], y=Yn[i], prox=states[i].prox)
            for i in range(graph.n)]


def consensus_error(states) -> float:
    X, _ = _stack(states)
    n = X.shape[0]
    return max((float(np.linalg.norm(X[i] - X[j]))
                for i in range(n) for j in range(i + 1, n)), default=0.0)


def run_distributed(proxes, gs: GraphSequence, gamma: float, tau: float,
                    cfg: SolveConfig, mu_schedule: Optional[Callable[[int], float]] = None,
                    x0=None, block_dim: int = 1) -> tuple[SolveReport, list[float]]:
    """Iterate (x, y) -> Q_t(x, y) with the round index as graph time.

    ``mu_schedule`` defaults to 0.99 / ||P_t|| per round.  Returns the solve
    report on the stacked state together with the per-round consensus-error
    trace max_{i,j} ||x_i - x_j||.
    """
    n = gs.n
    proxes = list(proxes)
    if len(proxes) != n:
        raise ValueError("need one prox oracle per agent")
    if x0 is None:
        X = np.zeros((n, block_dim))
    else:
        X = np.asarray(x0, dtype=float).reshape(n, block_dim).copy()
    Y = np.zeros((n, block_dim))
    layout = BlockLayout.from_dims([n * block_dim, n * block_dim])
    counters = _Counters()
    trace: list[float] = []
    k_state = {"k": 0}

    def step(zvec):
        k = k_state["k"]
        k_state["k"] = k + 1
        g = gs.at(k)
        _check_steps(g, gamma, tau)
        Xk = zvec[:n * block_dim].reshape(n, block_dim)
        Yk = zvec[n * block_dim:].reshape(n, block_dim)
        mu = (0.99 / metric_norm(g, gamma, tau) if mu_schedule is None
              else float(mu_schedule(k)))
        bound = 1.0 / metric_norm(g, gamma, tau)
        if not 0.0 < mu <= bound * (1.0 + 1e-12):
            raise ConfigurationError(f"mu_{k} must lie in ]0, {bound:.6g}] (got {mu:.6g})")
        Xn, Yn = _q_update(Xk, Yk, proxes, g, gamma, tau, mu)
        counters.res += n
        trace.append(float(max((np.linalg.norm(Xn[i] - Xn[j])
                                for i in range(n) for j in range(i + 1, n)),
                               default=0.0)))
        return np.concatenate([Xn.ravel(), Yn.ravel()])

    z0 = np.concatenate([X.ravel(), Y.ravel()])
    report = _run(step, z0, cfg, counters, layout=layout)
    return report, trace
