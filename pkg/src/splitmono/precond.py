"""Resolvents and splitting iterations under non-self-adjoint preconditioners.

A square strongly monotone ``P = U + S`` (symmetric part ``U``, skew part
``S``) replaces the scalar stepsize: the resolvent becomes ``J_{P^{-1}A}``
and the skew part is absorbed into the Lipschitz-monotone term, which is
what makes block-triangular ``P`` (Gauss-Seidel sweeps) admissible.  The
module also provides the transform that turns an averaged-type operator in
the ``U`` metric into one in the standard metric, and the variable-metric
iteration built on it that never inverts ``U``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import (CONDITION_MARGIN, as_matrix, as_vector, operator_norm,
                     spd_solver, split_symmetric_skew, symmetric_min_eig)
from .operators import MaximalMonotone, ProblemSpec
from .fbhf import (ConfigurationError, SolveConfig, SolveReport, _Counters,
                   _default_start, _run, fbhf_step)


@dataclass
class Preconditioner:
    """Strongly monotone linear preconditioner with cached split and constants.

    ``K`` is the Lipschitz constant of ``B2 - S`` for the problem the
    preconditioner will be used on; ``k_source`` records how it was obtained
    ("b2_matrix", "user", or "skew_only" when B2 is absent).
    """

    P: np.ndarray
    U: np.ndarray
    S: np.ndarray
    rho: float
    K: float
    norm_U: float
    k_source: str = "skew_only"
    _solve_U: Optional[Callable] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_matrix(cls, P, b2_matrix=None, lipschitz_K: Optional[float] = None,
                    tol: float = 1e-10) -> "Preconditioner":
        Pm = as_matrix(P)
        if Pm.shape[0] != Pm.shape[1]:
            raise ValueError("preconditioner must be square")
        U, S = split_symmetric_skew(Pm)
        rho = symmetric_min_eig(U, tol)
        norm_U = operator_norm(U, tol)
        if b2_matrix is not None:
            C = as_matrix(b2_matrix) - S
            K = operator_norm(C, tol) if np.any(C) else 0.0
            source = "b2_matrix"
        elif lipschitz_K is not None:
            if lipschitz_K < 0:
                raise ValueError("K must be nonnegative")
            K = float(lipschitz_K)
            source = "user"
        else:
            K = operator_norm(S, tol) if np.any(S) else 0.0
            source = "skew_only"
        return cls(P=Pm, U=U, S=S, rho=rho, K=K, norm_U=norm_U, k_source=source)

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def solve_U(self, b: np.ndarray) -> np.ndarray:
        if self._solve_U is None:
            if self.rho <= 0:
                raise ConfigurationError("U is not positive definite (rho <= 0)")
            self._solve_U = spd_solver(self.U)
        return self._solve_U(b)

    def solve_P(self, b: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.P, b)

    def scalar_step(self) -> Optional[float]:
        """Return gamma with P = Id/gamma when the preconditioner is that
        exact scalar multiple, else None."""
        if np.any(self.S):
            return None
        c = self.P[0, 0]
        if c <= 0:
            return None
        if not np.array_equal(self.P, c * np.eye(self.dim)):
            return None
        return 1.0 / c


def resolvent_via_P(A: MaximalMonotone, pre: Preconditioner, z) -> np.ndarray:
    """Compute ``J_{P^{-1}A}(z)``, the point x with ``P(z - x) in A x``.

    Routes: linear A (matrix ``M_A``) goes through the identity
    ``J_{U^{-1}(A+S)}(z + U^{-1} S z)``; block-separable A with a
    block-lower-triangular P and scalar diagonal blocks is solved by
    forward substitution (each block resolvent consumes only previously
    computed blocks).
    """
    zv = as_vector(z)
    if pre.rho <= 0:
        raise ConfigurationError("preconditioner must be strongly monotone (rho > 0)")
    gamma = pre.scalar_step()
    if gamma is not None:
        return A.resolvent(gamma, zv)
    if A.matrix is not None:
        M_A = A.matrix
        w = zv + pre.solve_U(pre.S @ zv)
        return np.linalg.solve(pre.U + pre.S + M_A, pre.U @ w)
    if A.blocks is not None:
        return _forward_substitution(A, pre, zv)
    raise ConfigurationError(
        "no composite resolvent: A must be linear (matrix) or block-separable "
        "with a block-triangular preconditioner")


def _forward_substitution(A: MaximalMonotone, pre: Preconditioner,
                          z: np.ndarray) -> np.ndarray:
    dims = [d for _, d in A.blocks]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    P = pre.P
    n = offsets[-1]
    if n != pre.dim:
        raise ConfigurationError("preconditioner and operator dimensions disagree")
    # the pattern needs zero blocks above the diagonal and scalar diagonal blocks
    for i in range(len(dims)):
        for j in range(i + 1, len(dims)):
            if np.any(P[offsets[i]:offsets[i + 1], offsets[j]:offsets[j + 1]]):
                raise ConfigurationError(
                    "no composite resolvent: P is not block lower triangular "
                    "for the block structure of A")
    x = np.empty(n)
    for i, (op, d) in enumerate(A.blocks):
        lo, hi = offsets[i], offsets[i + 1]
        Pii = P[lo:hi, lo:hi]
        c = Pii[0, 0]
        if c <= 0 or not np.array_equal(Pii, c * np.eye(d)):
            raise ConfigurationError(
                "no composite resolvent: diagonal blocks of P must be positive "
                "scalar multiples of the identity")
        carry = np.zeros(d)
        for j in range(i):
            blk = P[lo:hi, offsets[j]:offsets[j + 1]]
            if np.any(blk):
                carry = carry + blk @ (z[offsets[j]:offsets[j + 1]] - x[offsets[j]:offsets[j + 1]])
        x[lo:hi] = op.resolvent(1.0 / c, z[lo:hi] + carry / c)
    return x


def _check_metric_condition(pre: Preconditioner, beta: float,
                            strict: bool = True, inflate: float = 0.0,
                            label: str = "") -> None:
    """Enforce K^2 < rho (rho - 1/(2 beta)): the fixed-metric iteration needs
    the strict form, the variable-metric one the non-strict variant with rho
    deflated to rho/(1+inflate)."""
    if pre.rho <= 0:
        raise ConfigurationError(f"{label}U is not strongly monotone: rho = {pre.rho:.6g} <= 0")
    half_inv_beta = 0.0 if math.isinf(beta) else 1.0 / (2.0 * beta)
    r = pre.rho / (1.0 + inflate)
    rhs = r * (r - half_inv_beta)
    lhs = pre.K ** 2
    margin = CONDITION_MARGIN * max(1.0, abs(rhs))
    ok = lhs <= rhs - margin if strict else lhs <= rhs + margin
    if not ok:
        op = "<" if strict else "<="
        raise ConfigurationError(
            f"{label}metric condition violated: K^2 = {lhs:.12g} must be {op} "
            f"rho(rho - 1/(2 beta)) = {rhs:.12g} (rho = {pre.rho:.6g}, "
            f"K = {pre.K:.6g}, beta = {beta:.6g})")


def _validate_sampled_K(spec: ProblemSpec, pre: Preconditioner, seed: Optional[int],
                        n_pairs: int = 1000) -> None:
    """Spot-check a user-supplied K by sampling ||(B2-S)u - (B2-S)v||."""
    rng = np.random.default_rng(0 if seed is None else seed)
    tested = 0
    for _ in range(n_pairs):
        u = rng.standard_normal(spec.dimension)
        v = rng.standard_normal(spec.dimension)
        dom = spec.B2.domain
        if dom is not None and not (dom(u) and dom(v)):
            continue
        cu = spec.B2.evaluate(u) - pre.S @ u
        cv = spec.B2.evaluate(v) - pre.S @ v
        gap = np.linalg.norm(u - v)
        if gap == 0:
            continue
        tested += 1
        if np.linalg.norm(cu - cv) > pre.K * gap * (1.0 + 1e-8) + 1e-12:
            raise ConfigurationError(
                f"supplied K = {pre.K:.6g} is not a Lipschitz constant of B2 - S "
                f"(violated on a sampled pair)")
    if tested < n_pairs // 20:
        warnings.warn("K validation sampled too few in-domain pairs to be meaningful",
                      stacklevel=2)


def _metric_projector(spec: ProblemSpec, U: np.ndarray):
    if spec.X.is_whole_space:
        return lambda v: v
    if spec.X.metric_project is None:
        raise ConfigurationError("X provides no U-metric projection")
    off_diag = U - np.diag(np.diag(U))
    if np.any(off_diag):
        raise ConfigurationError(
            "U-metric projection onto X is only supported for diagonal U (or X = H)")
    return lambda v: spec.X.metric_project(U, v)


def solve_precond_fbhf(spec: ProblemSpec, pre: Preconditioner, cfg: SolveConfig,
                       z0=None) -> SolveReport:
    """Preconditioned iteration

        x   = J_{P^{-1}A}(z - P^{-1}(B1 + B2) z)
        z^+ = proj_X^U(x + U^{-1}(B2 z - B2 x - S (z - x)))

    subject to K^2 < rho (rho - 1/(2 beta)).  With P = Id/gamma this is the
    constant-stepsize main iteration and the run delegates to it step by step.
    """
    if pre.dim != spec.dimension:
        raise ConfigurationError("preconditioner dimension does not match the problem")
    if spec.B2 is not None:
        if spec.B2.matrix is None:
            if pre.k_source != "user":
                raise ConfigurationError(
                    "B2 is nonlinear: build the preconditioner with an explicit K")
            _validate_sampled_K(spec, pre, cfg.seed)
        elif pre.k_source == "skew_only":
            raise ConfigurationError(
                "preconditioner was built without the B2 matrix; K is wrong")
    _check_metric_condition(pre, spec.beta, strict=True)

    z_start = _default_start(spec, z0)
    counters = _Counters()

    gamma = pre.scalar_step()
    if gamma is not None:
        def step(z):
            if spec.B1 is not None:
                counters.b1 += 1
            if spec.B2 is not None:
                counters.b2 += 2
            counters.res += 1
            counters.proj += 1
            _, z_next = fbhf_step(spec, z, gamma)
            return z_next

        return _run(step, z_start, cfg, counters)

    project = _metric_projector(spec, pre.U)

    def step(z):
        parts = []
        if spec.B1 is not None:
            parts.append(spec.B1.evaluate(z))
            counters.b1 += 1
        b2z = None
        if spec.B2 is not None:
            b2z = spec.B2.evaluate(z)
            counters.b2 += 1
            parts.append(b2z)
        if parts:
            w = parts[0] + parts[1] if len(parts) == 2 else parts[0]
            drift = z - pre.solve_P(w)
        else:
            drift = z
        x = resolvent_via_P(spec.A, pre, drift)
        counters.res += 1
        corr = -(pre.S @ (z - x))
        if b2z is not None:
            b2x = spec.B2.evaluate(x)
            counters.b2 += 1
            corr = b2z - b2x + corr
        counters.proj += 1
        return project(x + pre.solve_U(corr))

    return _run(step, z_start, cfg, counters)


def t_class_transform(S_op: Callable[[np.ndarray], np.ndarray], U,
                      mu: float) -> Callable[[np.ndarray], np.ndarray]:
    """Turn an averaged-type operator in the U metric into one in the
    standard metric with the same fixed points:

        Q : z -> z - mu * U (z - S_op(z)),   0 < mu <= ||U||^{-1}.
    """
    Um = as_matrix(U)
    bound = 1.0 / operator_norm(Um)
    if not 0.0 < mu <= bound * (1.0 + 1e-12):
        raise ValueError(f"mu must lie in ]0, {bound:.6g}] (got {mu:.6g})")

    def Q(z):
        z = np.asarray(z, dtype=float)
        return z - mu * (Um @ (z - S_op(z)))

    return Q


@dataclass
class MetricSchedule:
    """Per-iteration preconditioners P_k with the uniform constants the
    no-inversion iteration needs: M = sup_k ||U_k||, a margin epsilon in
    ]0, 1/(2M)[, and relaxations lambda_k in [epsilon, ||U_k||^{-1} - epsilon].
    """

    at: Callable[[int], Preconditioner]
    norm_sup: float
    epsilon: Optional[float] = None
    lambdas: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if self.norm_sup <= 0:
            raise ValueError("norm_sup must be positive")
        cap = 1.0 / (2.0 * self.norm_sup)
        if self.epsilon is None:
            self.epsilon = min(0.01, cap / 2.0)
        if not 0.0 < self.epsilon < cap:
            raise ValueError(f"epsilon must lie in ]0, {cap:.6g}[")

    @classmethod
    def constant(cls, pre: Preconditioner, **kw) -> "MetricSchedule":
        return cls(at=lambda k: pre, norm_sup=pre.norm_U, **kw)

    @classmethod
    def cycle(cls, pres, **kw) -> "MetricSchedule":
        pres = list(pres)
        if not pres:
            raise ValueError("need at least one preconditioner")
        return cls(at=lambda k: pres[k % len(pres)],
                   norm_sup=max(p.norm_U for p in pres), **kw)

    def lambda_at(self, k: int, pre: Preconditioner) -> float:
        lo = self.epsilon
        hi = 1.0 / pre.norm_U - self.epsilon
        lam = hi if self.lambdas is None else float(self.lambdas(k))
        if not lo - 1e-12 <= lam <= hi + 1e-12:
            raise ConfigurationError(
                f"relaxation lambda_{k} = {lam:.6g} outside [{lo:.6g}, {hi:.6g}]")
        return lam


def solve_variable_metric(spec: ProblemSpec, sched: MetricSchedule,
                          cfg: SolveConfig, z0=None) -> SolveReport:
    """Variable-metric iteration that never inverts U_k:

        x   = J_{P_k^{-1}A}(z - P_k^{-1}(B1 + B2) z)
        z^+ = z + lambda_k (P_k (x - z) + B2 z - B2 x)

    Needs X = H and B2 with full domain; each P_k must satisfy the inflated
    metric condition K_k^2 <= r_k (r_k - 1/(2 beta)), r_k = rho_k/(1+eps).
    """
    if not spec.X.is_whole_space:
        raise ConfigurationError("the no-inversion iteration requires X = H")
    if spec.B2 is not None and spec.B2.domain is not None:
        raise ConfigurationError("the no-inversion iteration requires dom B2 = H")

    z_start = _default_start(spec, z0)
    counters = _Counters()
    k_state = {"k": 0}

    def step(z):
        k = k_state["k"]
        pre = sched.at(k)
        if pre.dim != spec.dimension:
            raise ConfigurationError(f"P_{k} dimension does not match the problem")
        if pre.norm_U > sched.norm_sup * (1.0 + 1e-12):
            raise ConfigurationError(
                f"||U_{k}|| = {pre.norm_U:.6g} exceeds the declared bound "
                f"M = {sched.norm_sup:.6g}")
        _check_metric_condition(pre, spec.beta, strict=False,
                                inflate=sched.epsilon, label=f"P_{k}: ")
        lam = sched.lambda_at(k, pre)
        k_state["k"] = k + 1

        parts = []
        if spec.B1 is not None:
            parts.append(spec.B1.evaluate(z))
            counters.b1 += 1
        b2z = None
        if spec.B2 is not None:
            b2z = spec.B2.evaluate(z)
            counters.b2 += 1
            parts.append(b2z)
        if parts:
            w = parts[0] + parts[1] if len(parts) == 2 else parts[0]
            drift = z - pre.solve_P(w)
        else:
            drift = z
        x = resolvent_via_P(spec.A, pre, drift)
        counters.res += 1
        corr = pre.P @ (x - z)
        if b2z is not None:
            b2x = spec.B2.evaluate(x)
            counters.b2 += 1
            corr = corr + (b2z - b2x)
        return z + lam * corr

    return _run(step, z_start, cfg, counters)
