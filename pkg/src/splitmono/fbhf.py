"""Core splitting solvers for 0 in A x + B1 x + B2 x over X.

The main iteration evaluates the cocoercive term B1 once per step and the
monotone term B2 twice:

    x_k   = J_{gamma_k A}(z_k - gamma_k (B1 + B2) z_k)
    z_k+1 = P_X(x_k + gamma_k (B2 z_k - B2 x_k))

With B2 absent (and X the whole space) it coincides with forward-backward
splitting; with B1 absent it coincides with Tseng's forward-backward-forward
iteration.  Both baselines are implemented here as well, each in constant
stepsize and Armijo-backtracking form.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linalg import BlockLayout, CONDITION_MARGIN
from .operators import ProblemSpec


class ConfigurationError(ValueError):
    """Solver/problem pairing or parameter bound violated before iterating."""


class LineSearchError(RuntimeError):
    """Backtracking exhausted; carries the last candidate and its violation."""

    def __init__(self, gamma: float, ratio: float, tried: int):
        super().__init__(
            f"no step accepted after {tried} candidates; "
            f"last gamma={gamma:.3e} violated the Armijo condition by factor {ratio:.3e}")
        self.gamma = gamma
        self.ratio = ratio


def chi(beta: float, L: float) -> float:
    """Stepsize cap 4*beta / (1 + sqrt(1 + 16 beta^2 L^2)).

    Equals 2*beta at L = 0 and 1/L at beta = +inf, and never exceeds
    min(2*beta, 1/L).
    """
    if not beta > 0:
        raise ValueError("beta must be positive (or inf)")
    if L < 0:
        raise ValueError("L must be nonnegative")
    if math.isinf(beta) and L == 0.0:
        raise ValueError("chi is undefined when B1 and B2 are both absent")
    if math.isinf(beta):
        return 1.0 / L
    if L == 0.0:
        return 2.0 * beta
    return 4.0 * beta / (1.0 + math.sqrt(1.0 + 16.0 * beta * beta * L * L))


# ---------------------------------------------------------------------------
# policies, config, report


@dataclass(frozen=True)
class ConstantStep:
    """Fixed stepsize; ``gamma=None`` selects 0.99 * chi(beta, L).

    ``unchecked=True`` skips the upper-bound validation (no convergence
    guarantee; exposed for the experiments probing beyond the bound).
    """

    gamma: Optional[float] = None
    unchecked: bool = False


@dataclass(frozen=True)
class LineSearch:
    """Armijo backtracking over the candidate steps 2*beta*eps*sigma^j.

    Accepts the largest candidate gamma with

        gamma * ||B2 z - B2 x_z(gamma)|| <= theta * ||z - x_z(gamma)||.

    ``gamma_init`` replaces the 2*beta*eps anchor when B1 is absent.
    The defaults mirror the entropy-experiment protocol; theta < sqrt(1-eps)
    is the theoretical range and a warning is emitted outside it.
    """

    epsilon: float = 0.88
    sigma: float = 0.9
    theta: float = 0.707
    max_backtracks: int = 60
    gamma_init: Optional[float] = None

    def __post_init__(self):
        for name in ("epsilon", "sigma", "theta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in ]0, 1[")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be >= 1")
        if self.theta >= math.sqrt(1.0 - self.epsilon):
            warnings.warn(
                f"theta={self.theta} >= sqrt(1-epsilon)={math.sqrt(1.0 - self.epsilon):.4f}: "
                "outside the guaranteed convergence range", stacklevel=2)


StepPolicy = ConstantStep | LineSearch


@dataclass(frozen=True)
class SolveConfig:
    max_iterations: int = 100_000
    tolerance: float = 1e-7        # relative-change stopping threshold
    keep_iterates: bool = False
    seed: Optional[int] = None     # for randomized sub-utilities only

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass
class SolveReport:
    """Outcome of one solver run with exact per-oracle evaluation counts."""

    z: np.ndarray
    iterations: int
    reason: str                    # "tolerance" | "max_iter"
    residuals: list[float]
    b1_evals: int = 0
    b2_evals: int = 0
    resolvent_evals: int = 0
    projections: int = 0
    backtracks: int = 0
    wall_time: float = 0.0
    iterates: Optional[list[np.ndarray]] = None
    gammas: Optional[list[float]] = None
    layout: Optional[BlockLayout] = None

    def block(self, i: int) -> np.ndarray:
        if self.layout is None:
            raise ValueError("report carries no block layout")
        return self.layout.block(self.z, i)


class _Counters:
    __slots__ = ("b1", "b2", "res", "proj", "back")

    def __init__(self):
        self.b1 = self.b2 = self.res = self.proj = self.back = 0


def _relative_change(z_new: np.ndarray, z: np.ndarray) -> float:
    num = float(np.linalg.norm(z_new - z))
    den = float(np.linalg.norm(z))
    # the criterion is undefined at the origin; fall back to absolute change
    return num if den < 1e-30 else num / den


def _run(step: Callable[[np.ndarray], np.ndarray], z0: np.ndarray, cfg: SolveConfig,
         counters: _Counters, gammas: Optional[list] = None,
         layout: Optional[BlockLayout] = None) -> SolveReport:
    z = np.asarray(z0, dtype=float).copy()
    residuals: list[float] = []
    iterates = [z.copy()] if cfg.keep_iterates else None
    reason = "max_iter"
    iterations = 0
    t0 = time.perf_counter()
    for _ in range(cfg.max_iterations):
        z_new = step(z)
        iterations += 1
        rel = _relative_change(z_new, z)
        residuals.append(rel)
        z = z_new
        if iterates is not None:
            iterates.append(np.array(z))
        if rel < cfg.tolerance:
            reason = "tolerance"
            break
    wall = time.perf_counter() - t0
    return SolveReport(z=z, iterations=iterations, reason=reason,
                       residuals=residuals, b1_evals=counters.b1,
                       b2_evals=counters.b2, resolvent_evals=counters.res,
                       projections=counters.proj, backtracks=counters.back,
                       wall_time=wall, iterates=iterates, gammas=gammas,
                       layout=layout)


def _default_start(spec: ProblemSpec, z0) -> np.ndarray:
    if z0 is None:
        return np.zeros(spec.dimension)
    z = np.asarray(z0, dtype=float)
    if z.shape != (spec.dimension,):
        raise ValueError("starting point has the wrong dimension")
    return z


# ---------------------------------------------------------------------------
# single steps


def fbhf_step(spec: ProblemSpec, z: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """One iteration: backward step on A after a full forward step, then the
    half forward correction on B2 and the projection.  Evaluates B1 exactly
    once and B2 exactly twice (when present)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    b1z = spec.B1.evaluate(z) if spec.B1 is not None else None
    b2z = spec.B2.evaluate(z) if spec.B2 is not None else None
    if b1z is not None and b2z is not None:
        drift = z - gamma * (b1z + b2z)
    elif b1z is not None:
        drift = z - gamma * b1z
    elif b2z is not None:
        drift = z - gamma * b2z
    else:
        drift = z
    x = spec.A.resolvent(gamma, drift)
    if b2z is not None:
        b2x = spec.B2.evaluate(x)
        z_next = spec.X.project(x + gamma * (b2z - b2x))
    else:
        z_next = spec.X.project(x)
    return x, z_next


def _fbf_step(spec: ProblemSpec, z: np.ndarray, gamma: float,
              counters: _Counters) -> np.ndarray:
    """One Tseng forward-backward-forward step; B = B1 + B2 evaluated twice."""

    def b_at(w):
        parts = []
        if spec.B1 is not None:
            parts.append(spec.B1.evaluate(w))
            counters.b1 += 1
        if spec.B2 is not None:
            parts.append(spec.B2.evaluate(w))
            counters.b2 += 1
        if not parts:
            return None
        return parts[0] + parts[1] if len(parts) == 2 else parts[0]

    bz = b_at(z)
    drift = z if bz is None else z - gamma * bz
    x = spec.A.resolvent(gamma, drift)
    counters.res += 1
    if bz is None:
        z_next = spec.X.project(x)
    else:
        bx = b_at(x)
        z_next = spec.X.project(x + gamma * (bz - bx))
    counters.proj += 1
    return z_next


# ---------------------------------------------------------------------------
# line search


def _ls_anchor(spec: ProblemSpec, policy: LineSearch) -> float:
    if math.isinf(spec.beta):
        if policy.gamma_init is None:
            raise ConfigurationError(
                "B1 is absent (beta = inf): the line search needs an explicit gamma_init anchor")
        return policy.gamma_init
    return 2.0 * spec.beta * policy.epsilon


def _backtrack(spec: ProblemSpec, z: np.ndarray, policy: LineSearch,
               drift_z: Optional[np.ndarray], check_z: Optional[np.ndarray],
               check_at: Callable[[np.ndarray], Optional[np.ndarray]],
               counters: _Counters) -> tuple[float, np.ndarray, Optional[np.ndarray]]:
    """Scan gamma = anchor * sigma^j, j = 1, 2, ... and return the first
    (largest) candidate satisfying the Armijo-type condition

        gamma * ||check(z) - check(x_z(gamma))|| <= theta * ||z - x_z(gamma)||.
    """
    anchor = _ls_anchor(spec, policy)
    gamma = anchor
    lhs = rhs = 0.0
    for j in range(1, policy.max_backtracks + 1):
        gamma = anchor * policy.sigma ** j
        drift = z if drift_z is None else z - gamma * drift_z
        x = spec.A.resolvent(gamma, drift)
        counters.res += 1
        cx = check_at(x)
        rhs = policy.theta * float(np.linalg.norm(z - x))
        lhs = 0.0 if cx is None else gamma * float(np.linalg.norm(check_z - cx))
        if lhs <= rhs:
            if gamma < 1e-12:
                warnings.warn(f"accepted line-search step {gamma:.3e} < 1e-12; "
                              "B2 may not be uniformly continuous here", stacklevel=2)
            return gamma, x, cx
        counters.back += 1
    raise LineSearchError(gamma, lhs / rhs if rhs > 0 else math.inf,
                          policy.max_backtracks)


def line_search_gamma(spec: ProblemSpec, z: np.ndarray,
                      policy: LineSearch) -> tuple[float, np.ndarray]:
    """Backtracking step selection for the main iteration: the condition
    tests B2 only, and B1 z is computed once and reused by every candidate."""
    counters = _Counters()
    z = np.asarray(z, dtype=float)
    b1z = spec.B1.evaluate(z) if spec.B1 is not None else None
    b2z = spec.B2.evaluate(z) if spec.B2 is not None else None
    if b1z is not None and b2z is not None:
        drift_z = b1z + b2z
    elif b1z is not None:
        drift_z = b1z
    else:
        drift_z = b2z

    def check_at(x):
        return spec.B2.evaluate(x) if spec.B2 is not None else None

    gamma, x, _ = _backtrack(spec, z, policy, drift_z, b2z, check_at, counters)
    return gamma, x


# ---------------------------------------------------------------------------
# solvers


def _constant_gamma(spec: ProblemSpec, policy: ConstantStep,
                    bound: Optional[float], what: str) -> float:
    if spec.B2 is not None and spec.B2.lipschitz is None:
        raise ConfigurationError(
            "B2 carries no Lipschitz constant; a constant stepsize has no "
            "valid bound (use a LineSearch policy)")
    gamma = policy.gamma
    if gamma is None:
        if bound is None or math.isinf(bound):
            raise ConfigurationError("no finite default stepsize; pass gamma explicitly")
        gamma = 0.99 * bound
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    if bound is not None and not policy.unchecked:
        if gamma > bound - CONDITION_MARGIN * max(1.0, bound):
            raise ConfigurationError(
                f"gamma={gamma:.6g} violates the {what} bound gamma < {bound:.6g}")
    return gamma


def solve_fbhf(spec: ProblemSpec, policy: StepPolicy, cfg: SolveConfig,
               z0=None) -> SolveReport:
    """Run the main splitting iteration until the relative-change stop."""
    z_start = _default_start(spec, z0)
    counters = _Counters()
    gammas: list[float] = []

    if isinstance(policy, ConstantStep):
        beta, L = spec.beta, spec.lipschitz
        if spec.B1 is None and (spec.B2 is None or L == 0.0):
            bound = math.inf
        else:
            bound = chi(beta, L) if L is not None else None
        gamma = _constant_gamma(spec, policy, bound, "chi")

        def step(z):
            if spec.B1 is not None:
                counters.b1 += 1
            if spec.B2 is not None:
                counters.b2 += 2
            counters.res += 1
            counters.proj += 1
            gammas.append(gamma)
            _, z_next = fbhf_step(spec, z, gamma)
            return z_next

    elif isinstance(policy, LineSearch):
        def step(z):
            if spec.B1 is not None:
                counters.b1 += 1
            b1z = spec.B1.evaluate(z) if spec.B1 is not None else None
            if spec.B2 is not None:
                counters.b2 += 1
            b2z = spec.B2.evaluate(z) if spec.B2 is not None else None
            if b1z is not None and b2z is not None:
                drift_z = b1z + b2z
            elif b1z is not None:
                drift_z = b1z
            else:
                drift_z = b2z

            def check_at(x):
                if spec.B2 is None:
                    return None
                counters.b2 += 1
                return spec.B2.evaluate(x)

            gamma, x, b2x = _backtrack(spec, z, policy, drift_z, b2z, check_at, counters)
            gammas.append(gamma)
            counters.proj += 1
            if b2z is None:
                return spec.X.project(x)
            return spec.X.project(x + gamma * (b2z - b2x))
    else:
        raise ConfigurationError(f"unknown step policy {policy!r}")

    return _run(step, z_start, cfg, counters, gammas)


def solve_tseng_fbf(spec: ProblemSpec, policy: StepPolicy, cfg: SolveConfig,
                    z0=None) -> SolveReport:
    """Tseng's forward-backward-forward baseline on B = B1 + B2.

    The constant policy requires gamma < 1/(1/beta + L); the line-search
    variant re-evaluates the whole of B at every backtracking candidate.
    """
    z_start = _default_start(spec, z0)
    counters = _Counters()
    gammas: list[float] = []

    if isinstance(policy, ConstantStep):
        if spec.B2 is not None and spec.B2.lipschitz is None:
            raise ConfigurationError(
                "B2 carries no Lipschitz constant; use the line-search variant")
        inv_beta = 0.0 if math.isinf(spec.beta) else 1.0 / spec.beta
        L = spec.lipschitz or 0.0
        total = inv_beta + L
        bound = math.inf if total == 0.0 else 1.0 / total
        gamma = _constant_gamma(spec, policy, bound, "Tseng")

        def step(z):
            gammas.append(gamma)
            return _fbf_step(spec, z, gamma, counters)

    elif isinstance(policy, LineSearch):
        def step(z):
            parts_z = []
            if spec.B1 is not None:
                parts_z.append(spec.B1.evaluate(z))
                counters.b1 += 1
            if spec.B2 is not None:
                parts_z.append(spec.B2.evaluate(z))
                counters.b2 += 1
            bz = None
            if parts_z:
                bz = parts_z[0] + parts_z[1] if len(parts_z) == 2 else parts_z[0]

            def check_at(x):
                parts = []
                if spec.B1 is not None:
                    parts.append(spec.B1.evaluate(x))
                    counters.b1 += 1
                if spec.B2 is not None:
                    parts.append(spec.B2.evaluate(x))
                    counters.b2 += 1
                if not parts:
                    return None
                return parts[0] + parts[1] if len(parts) == 2 else parts[0]

            gamma, x, bx = _backtrack(spec, z, policy, bz, bz, check_at, counters)
            gammas.append(gamma)
            counters.proj += 1
            if bz is None:
                return spec.X.project(x)
            return spec.X.project(x + gamma * (bz - bx))
    else:
        raise ConfigurationError(f"unknown step policy {policy!r}")

    return _run(step, z_start, cfg, counters, gammas)


def solve_forward_backward(spec: ProblemSpec, gamma: float, cfg: SolveConfig,
                           z0=None) -> SolveReport:
    """Classical forward-backward iteration z -> J_{gamma A}(z - gamma B1 z).

    Requires B2 absent and gamma in the open interval ]0, 2*beta[.
    """
    if spec.B2 is not None:
        raise ConfigurationError("forward-backward applies only when B2 is absent")
    if spec.B1 is None:
        raise ConfigurationError("forward-backward needs a cocoercive B1")
    if not 0.0 < gamma < 2.0 * spec.beta:
        raise ConfigurationError(
            f"gamma={gamma:.6g} outside the open interval ]0, {2.0 * spec.beta:.6g}[")
    z_start = _default_start(spec, z0)
    counters = _Counters()

    def step(z):
        counters.b1 += 1
        counters.res += 1
        b1z = spec.B1.evaluate(z)
        return spec.A.resolvent(gamma, z - gamma * b1z)

    return _run(step, z_start, cfg, counters)


def phi_z_profile(spec: ProblemSpec, z, gamma_grid) -> list[float]:
    """Evaluate gamma -> ||z - x_z(gamma)|| / gamma on a positive grid.

    The profile is nonincreasing in gamma; tests certify that property.
    The forward evaluation at z does not depend on gamma and is done once.
    """
    z = np.asarray(z, dtype=float)
    grid = [float(g) for g in gamma_grid]
    if not grid or any(g <= 0 for g in grid):
        raise ValueError("gamma grid must be nonempty and positive")
    parts = []
    if spec.B1 is not None:
        parts.append(spec.B1.evaluate(z))
    if spec.B2 is not None:
        parts.append(spec.B2.evaluate(z))
    drift_z = None
    if parts:
        drift_z = parts[0] + parts[1] if len(parts) == 2 else parts[0]
    out = []
    for g in grid:
        drift = z if drift_z is None else z - g * drift_z
        x = spec.A.resolvent(g, drift)
        out.append(float(np.linalg.norm(z - x)) / g)
    return out
