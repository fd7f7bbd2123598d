"""Concrete problem families: incremental empirical risk minimization,
nonlinear constrained optimization via the Lagrangian saddle inclusion, and
the seeded random generators behind the benchmark experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import (CONDITION_MARGIN, BlockLayout, as_matrix, as_vector,
                     operator_norm)
from .operators import (ClosedConvexSet, CocoerciveMap, MaximalMonotone,
                        MonotoneMap, ProblemSpec, SmoothConstraint,
                        affine_constraints, entropy_constraint,
                        lagrangian_saddle_map, normal_cone_box, nonneg_cone,
                        quadratic_gradient)
from .fbhf import (ConfigurationError, SolveConfig, SolveReport, StepPolicy,
                   _Counters, _run, solve_fbhf, solve_tseng_fbf)


# ---------------------------------------------------------------------------
# incremental ERM


@dataclass(frozen=True)
class ErmProblem:
    """min (1/m) sum_i f_i(a_i^T x) with per-sample scalar prox oracles.

    ``proxes[i](gamma, t)`` evaluates prox of gamma * f_i at t; ``values[i]``
    evaluates f_i for objective reporting.  When ``normalized`` is set every
    a_i has unit norm (losses rescaled accordingly by the caller).
    """

    a: np.ndarray                       # m x d data rows
    proxes: tuple[Callable[[float, float], float], ...]
    values: tuple[Callable[[float], float], ...]
    normalized: bool = False

    def __post_init__(self):
        A = as_matrix(self.a)
        object.__setattr__(self, "a", A)
        if np.any(np.linalg.norm(A, axis=1) == 0.0):
            raise ValueError("every data row a_i must be nonzero")
        if len(self.proxes) != A.shape[0] or len(self.values) != A.shape[0]:
            raise ValueError("need one prox and one value oracle per sample")

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.a.shape[1]

    def objective(self, x) -> float:
        t = self.a @ np.asarray(x, dtype=float)
        return float(sum(v(ti) for v, ti in zip(self.values, t))) / self.m

    @property
    def layout(self) -> BlockLayout:
        return BlockLayout.from_dims([self.d] + [1] * self.m)


def erm_condition(sigmas, a_norms) -> tuple[float, float]:
    """(lhs, rhs) of the stepsize condition

        sqrt(sum ||a_i||^2) + sigma_0 sum ||a_i||^2
            + sigma_0/2 (max ||a_i||^2 - min ||a_i||^2)  <  1 / max_i sigma_i.
    """
    sig = [float(s) for s in sigmas]
    n2 = [float(n) ** 2 for n in a_norms]
    lhs = math.sqrt(sum(n2)) + sig[0] * sum(n2) + sig[0] / 2.0 * (max(n2) - min(n2))
    return lhs, 1.0 / max(sig)


def erm_relaxation_bound(sigmas, a_norms) -> float:
    """M constant whose reciprocal caps the relaxation lambda."""
    sig = [float(s) for s in sigmas]
    n2 = [float(n) ** 2 for n in a_norms]
    return (1.0 / min(sig) + 0.5 * math.sqrt(sum(n2))
            + sig[0] / 2.0 * (sum(n2) + max(n2)))


def erm_uniform_sigma_bound(m: int) -> float:
    """With unit-norm data and equal stepsizes the condition reduces to
    sigma < (sqrt(5) - 1) / (2 sqrt(m))."""
    return (math.sqrt(5.0) - 1.0) / (2.0 * math.sqrt(m))


def solve_erm_incremental(p: ErmProblem, sigmas, lam: Optional[float],
                          cfg: SolveConfig, start=None) -> SolveReport:
    """Incremental proximal sweep for the dualized ERM inclusion.

    Dual blocks are visited in ascending sample order; block i consumes the
    fresh duals v_1..v_{i-1} and the stale u_i..u_m.  The primal and dual
    corrections follow with relaxation ``lam`` (default 0.99/M).
    """
    sig = [float(s) for s in sigmas]
    if len(sig) == 1:
        sig = sig * (p.m + 1)
    if len(sig) != p.m + 1 or any(s <= 0 for s in sig):
        raise ConfigurationError("need m+1 positive stepsizes (or one uniform value)")
    a_norms = np.linalg.norm(p.a, axis=1)
    lhs, rhs = erm_condition(sig, a_norms)
    if lhs > rhs - CONDITION_MARGIN * max(1.0, rhs):
        raise ConfigurationError(
            f"ERM stepsize condition violated: lhs = {lhs:.12g} must be < "
            f"1/max(sigma) = {rhs:.12g}")
    M = erm_relaxation_bound(sig, a_norms)
    if lam is None:
        lam = 0.99 / M
    if not 0.0 < lam < 1.0 / M - CONDITION_MARGIN:
        raise ConfigurationError(
            f"relaxation lambda = {lam:.6g} outside ]0, 1/M[ = ]0, {1.0 / M:.6g}[")

    layout = p.layout
    G = p.a @ p.a.T                    # Gram matrix of the data rows
    G_lower = np.tril(G, -1)
    sig_tail = np.asarray(sig[1:])
    counters = _Counters()
    m = p.m

    def dual_prox(i: int, sigma: float, w: float) -> float:
        # Moreau: prox of the conjugate loss from the loss prox
        return w - sigma * p.proxes[i](1.0 / sigma, w / sigma)

    def step(zvec):
        x = layout.block(zvec, 0)
        u = zvec[p.d:]
        ax = p.a @ x
        v = np.empty(m)
        for i in range(m):
            # fresh duals v_1..v_{i-1}, stale u_i..u_m
            mix = float(G[i, :i] @ v[:i]) + float(G[i, i:] @ u[i:])
            w = u[i] + sig[i + 1] * (ax[i] - sig[0] * mix)
            v[i] = dual_prox(i, sig[i + 1], w)
            counters.res += 1
        new_x = x - lam * (p.a.T @ v)
        dv = v - u
        new_u = u + lam * (dv / sig_tail + sig[0] * (G_lower @ dv))
        return layout.concat([new_x, new_u])

    z0 = np.zeros(layout.dim) if start is None else as_vector(start).copy()
    return _run(step, z0, cfg, counters, layout=layout)


# ---------------------------------------------------------------------------
# nonlinear constrained optimization


@dataclass
class NlpProblem:
    """min f(x) + h(x) subject to g_i(x) <= 0 over the localization set Y.

    ``f`` is given by its prox (a resolvent oracle), ``h`` by its gradient
    (cocoercive, with the function value attached for reporting), and each
    constraint by value and gradient oracles.
    """

    f: MaximalMonotone
    h: CocoerciveMap
    constraints: list[SmoothConstraint]
    Y: ClosedConvexSet
    dim: int
    data: dict = field(default_factory=dict)   # generator metadata

    def __post_init__(self):
        if not self.constraints:
            raise ValueError("at least one constraint is required")

    @property
    def p(self) -> int:
        return len(self.constraints)

    @property
    def beta(self) -> float:
        return self.h.beta

    @property
    def layout(self) -> BlockLayout:
        return BlockLayout.from_dims([self.dim, self.p])

    def saddle_map(self) -> MonotoneMap:
        return lagrangian_saddle_map(self.constraints)

    def saddle_spec(self) -> ProblemSpec:
        """Lagrangian inclusion on (x, u): A = prox-part x nonneg cone,
        B1 = (grad h, 0), B2 = the constraint saddle map, X = Y x R^p_+."""
        p = self.p
        n = self.dim
        A = MaximalMonotone.product([(self.f, n), (nonneg_cone(p), p)],
                                    tag="saddle-A")
        h_eval = self.h.evaluate

        def b1_eval(w):
            return np.concatenate([h_eval(w[:n]), np.zeros(p)])

        B1 = CocoerciveMap(evaluate=b1_eval, beta=self.h.beta, tag="saddle-B1")
        X = ClosedConvexSet.product([(self.Y, n),
                                     (ClosedConvexSet.nonneg_orthant(), p)])
        return ProblemSpec(A=A, B1=B1, B2=self.saddle_map(), X=X,
                           dimension=n + p)

    def objective(self, x) -> float:
        if self.h.value is None:
            raise ValueError("h carries no value oracle")
        return self.h.value(np.asarray(x, dtype=float))

    def max_constraint(self, x) -> float:
        return max(c.value(np.asarray(x, dtype=float)) for c in self.constraints)

    def default_start(self) -> np.ndarray:
        x0 = self.Y.project(np.zeros(self.dim))
        return np.concatenate([x0, np.zeros(self.p)])


def solve_nlp(p: NlpProblem, policy: StepPolicy, cfg: SolveConfig,
              start=None, baseline: str = "fbhf") -> SolveReport:
    """Solve the Lagrangian saddle inclusion of the constrained problem.

    The main iteration reads, blockwise on (x, u):

        y    = prox_{gamma f}(x - gamma (grad h(x) + sum_i u_i grad g_i(x)))
        eta  = max(0, u + gamma g(x))
        u^+  = max(0, eta - gamma (g(x) - g(y)))
        x^+  = P_Y(y + gamma sum_i (u_i grad g_i(x) - eta_i grad g_i(y)))

    ``baseline="tseng"`` runs the forward-backward-forward comparison method
    on the same saddle inclusion instead.
    """
    spec = p.saddle_spec()
    z0 = p.default_start() if start is None else as_vector(start)
    if baseline == "fbhf":
        report = solve_fbhf(spec, policy, cfg, z0)
    elif baseline == "tseng":
        report = solve_tseng_fbf(spec, policy, cfg, z0)
    else:
        raise ConfigurationError(f"unknown baseline {baseline!r}")
    report.layout = p.layout
    return report


# ---------------------------------------------------------------------------
# seeded generators


def gen_lin_ineq_qp(N: int, p: int, seed: int) -> NlpProblem:
    """Box-constrained least squares with homogeneous linear inequalities:

        min 0.5 ||A x - b||^2  s.t.  x in [0, 1]^N,  d_i^T x <= 0,

    A is (N/2) x N, entries of A, D, b i.i.d. standard normal from the seed.
    x = 0 is always feasible.
    """
    if N % 2 != 0 or N < 2:
        raise ValueError("N must be even (A has N/2 rows)")
    if p < 1:
        raise ValueError("p must be >= 1")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((N // 2, N))
    D = rng.standard_normal((p, N))
    b = rng.standard_normal(N // 2)
    h = quadratic_gradient(A, b)
    return NlpProblem(f=normal_cone_box(np.zeros(N), np.ones(N)),
                      h=h,
                      constraints=affine_constraints(D),
                      Y=ClosedConvexSet.box(np.zeros(N), np.ones(N)),
                      dim=N,
                      data={"A": A, "D": D, "b": b, "beta": h.beta,
                            "L": operator_norm(D)})


def gen_entropy_ls(N: int, r_fraction: float, seed: int) -> NlpProblem:
    """Least squares over the box [0.001, 1]^N with one relative-entropy
    ball constraint of level r = r_fraction * N around the all-ones vector."""
    if N % 2 != 0 or N < 2:
        raise ValueError("N must be even (A has N/2 rows)")
    if not -1.0 < r_fraction < 0.0:
        raise ValueError("r_fraction must lie in ]-1, 0[")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((N // 2, N))
    b = rng.standard_normal(N // 2)
    lo = np.full(N, 0.001)
    hi = np.ones(N)
    h = quadratic_gradient(A, b)
    constraint = entropy_constraint(np.ones(N), r_fraction * N)
    return NlpProblem(f=normal_cone_box(lo, hi),
                      h=h,
                      constraints=[constraint],
                      Y=ClosedConvexSet.box(lo, hi),
                      dim=N,
                      data={"A": A, "b": b, "beta": h.beta,
                            "r": r_fraction * N})


def gen_erm_hinge(d: int, m: int, seed: int) -> ErmProblem:
    """Unit-norm random data with hinge losses max(0, 1 - b_i t) and random
    labels b_i in {-1, +1}."""
    from .operators import prox_hinge

    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, d))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    labels = np.where(rng.standard_normal(m) >= 0.0, 1.0, -1.0)
    proxes = tuple(prox_hinge(float(b)) for b in labels)
    values = tuple((lambda t, b=float(b): max(0.0, 1.0 - b * t)) for b in labels)
    prob = ErmProblem(a=a, proxes=proxes, values=values, normalized=True)
    return prob
