"""Composite primal-dual solvers on the product space H x G_1 x ... x G_m.

The model problem couples a maximally monotone A, a cocoercive C1 and a
monotone Lipschitz C2 on H with dualized terms (B_i inf-conv D_i)(L_i x - r_i):

    find x:  z in A x + sum_i L_i^T (B_i inf-conv D_i)(L_i x - r_i) + C1 x + C2 x.

A block-lower-triangular preconditioner turns the product-space iteration
into a Gauss-Seidel sweep over the dual blocks; the scalar-diagonal
specialization parameterized by theta in [-1, 1] and stepsizes sigma_i
recovers several classical primal-dual schemes.  A Condat-Vu baseline is
included for head-to-head comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linalg import (CONDITION_MARGIN, BlockLayout, as_matrix, as_vector,
                     operator_norm, symmetric_min_eig)
from .operators import CocoerciveMap, MaximalMonotone, MonotoneMap
from .fbhf import ConfigurationError, SolveConfig, SolveReport, _Counters, _run


@dataclass(frozen=True)
class DualBlock:
    """One dualized term (B inf-conv D)(L x - r).

    ``B`` is the primal operator; its inverse resolvent is always obtained
    through the Moreau identity.  ``D_inv`` evaluates D^{-1} (None encodes
    D^{-1} = 0, i.e. nu = +inf).
    """

    B: MaximalMonotone
    L: np.ndarray
    r: Optional[np.ndarray] = None
    D_inv: Optional[Callable[[np.ndarray], np.ndarray]] = None
    nu: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "L", as_matrix(self.L))
        if not np.any(self.L):
            raise ValueError("L_i must be nonzero")
        if self.r is not None:
            object.__setattr__(self, "r", as_vector(self.r))
            if self.r.shape[0] != self.L.shape[0]:
                raise ValueError("r_i dimension does not match L_i")
        if self.D_inv is None and not math.isinf(self.nu):
            raise ValueError("nu is finite but D_inv is missing")
        if not self.nu > 0:
            raise ValueError("nu must be positive")

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    def norm_L(self) -> float:
        return operator_norm(self.L)

    def dual_resolvent(self, sigma: float, w: np.ndarray) -> np.ndarray:
        """J_{sigma B^{-1}}(w) = w - sigma * J_{B/sigma}(w / sigma) (Moreau)."""
        return w - sigma * self.B.resolvent(1.0 / sigma, w / sigma)

    def d_inv_at(self, u: np.ndarray) -> Optional[np.ndarray]:
        return None if self.D_inv is None else self.D_inv(u)


@dataclass(frozen=True)
class PrimalDualProblem:
    A: MaximalMonotone
    C1: Optional[CocoerciveMap]
    C2: Optional[MonotoneMap]
    blocks: tuple[DualBlock, ...]
    dim: int                       # dimension of H
    z: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("at least one dual block is required")
        for blk in self.blocks:
            if blk.L.shape[1] != self.dim:
                raise ValueError("L_i column count must equal dim H")
        if self.z is not None:
            object.__setattr__(self, "z", as_vector(self.z))
            if self.z.shape[0] != self.dim:
                raise ValueError("z dimension must equal dim H")

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def beta(self) -> float:
        mu = math.inf if self.C1 is None else self.C1.beta
        return min([mu] + [blk.nu for blk in self.blocks])

    @property
    def delta(self) -> float:
        if self.C2 is None:
            return 0.0
        if self.C2.lipschitz is None:
            raise ConfigurationError("C2 must carry a Lipschitz constant")
        return self.C2.lipschitz

    @property
    def layout(self) -> BlockLayout:
        return BlockLayout.from_dims([self.dim] + [b.dim for b in self.blocks])

    def norms_L(self) -> list[float]:
        return [blk.norm_L() for blk in self.blocks]

    def primal_resolvent(self, sigma: float, w: np.ndarray) -> np.ndarray:
        """Resolvent of the shifted block A - z at step sigma."""
        if self.z is None:
            return self.A.resolvent(sigma, w)
        return self.A.resolvent(sigma, w + sigma * self.z)


# ---------------------------------------------------------------------------
# block preconditioner and conditions


@dataclass(frozen=True)
class BlockPreconditioner:
    """Lower block triangle (P_ij)_{0<=j<=i<=m} with scalar diagonal blocks
    P_ii = diag_scalars[i] * Id, so every dual resolvent stays prox-friendly."""

    diag_scalars: tuple[float, ...]
    off_diag: dict  # (i, j), i > j  ->  matrix G_j -> G_i

    def __post_init__(self):
        object.__setattr__(self, "diag_scalars",
                           tuple(float(c) for c in self.diag_scalars))
        if any(c <= 0 for c in self.diag_scalars):
            raise ValueError("diagonal scalars must be positive")
        for (i, j) in self.off_diag:
            if not (0 <= j < i <= self.m):
                raise ValueError("off-diagonal blocks must sit strictly below the diagonal")

    @property
    def m(self) -> int:
        return len(self.diag_scalars) - 1

    def block(self, i: int, j: int) -> Optional[np.ndarray]:
        return self.off_diag.get((i, j))

    @classmethod
    def corollary_pattern(cls, theta: float, sigmas,
                          pdp: PrimalDualProblem) -> "BlockPreconditioner":
        """P_ii = Id/sigma_i, P_i0 = -(1+theta) L_i, interior blocks zero."""
        sig = [float(s) for s in sigmas]
        if len(sig) != pdp.m + 1:
            raise ValueError("need exactly m+1 stepsizes")
        if any(s <= 0 for s in sig):
            raise ValueError("stepsizes must be positive")
        off = {}
        for i, blk in enumerate(pdp.blocks, start=1):
            Pi0 = -(1.0 + theta) * blk.L
            if np.any(Pi0):
                off[(i, 0)] = Pi0
        return cls(diag_scalars=tuple(1.0 / s for s in sig), off_diag=off)


def build_upsilon_sigma_delta(bp: BlockPreconditioner, L_mats):
    """The (m+1)x(m+1) comparison matrices of the block preconditioner:

    - Upsilon: off-diagonal block norms ||P_ij||/2 (zero diagonal),
    - Sigma: skew residues on the diagonal (zero for scalar blocks), the
      couplings ||L_i + P_i0/2|| in the first column, ||P_ij||/2 inside,
    - Delta: diag of the strong-monotonicity moduli of the P_ii.
    """
    m = bp.m
    Ls = [as_matrix(L) for L in L_mats]
    if len(Ls) != m:
        raise ValueError("need one L_i per dual block")
    ups = np.zeros((m + 1, m + 1))
    sig = np.zeros((m + 1, m + 1))
    for i in range(1, m + 1):
        for j in range(i):
            blk = bp.block(i, j)
            nrm = operator_norm(blk) if blk is not None and np.any(blk) else 0.0
            ups[i, j] = ups[j, i] = nrm / 2.0
            if j == 0:
                comb = Ls[i - 1] + (blk / 2.0 if blk is not None else 0.0)
                cnrm = operator_norm(comb) if np.any(comb) else 0.0
                sig[i, 0] = sig[0, i] = cnrm
            else:
                sig[i, j] = sig[j, i] = nrm / 2.0
    delta = np.diag(np.asarray(bp.diag_scalars, dtype=float))
    return ups, sig, delta


@dataclass(frozen=True)
class PdCheck:
    rho: float
    M: float
    ok: bool
    detail: str


def check_pd_conditions(bp: BlockPreconditioner, L_mats, delta: float,
                        beta: float) -> PdCheck:
    """Verdict for the product-space metric condition

        Delta - Upsilon positive definite (smallest eigenvalue rho > 0) and
        (||Sigma||_2 + delta)^2 < rho (rho - 1/(2 beta)).

    Also returns M = max ||P_ii|| + ||Upsilon||_2, the bound for the
    relaxation range ]0, 1/M[.
    """
    ups, sig, dlt = build_upsilon_sigma_delta(bp, L_mats)
    rho = symmetric_min_eig(dlt - ups)
    norm_ups = operator_norm(ups) if np.any(ups) else 0.0
    M = max(bp.diag_scalars) + norm_ups
    if rho <= 0:
        return PdCheck(rho, M, False,
                       f"Delta - Upsilon is not positive definite (rho = {rho:.6g})")
    norm_sig = operator_norm(sig) if np.any(sig) else 0.0
    half_inv_beta = 0.0 if math.isinf(beta) else 1.0 / (2.0 * beta)
    lhs = (norm_sig + delta) ** 2
    rhs = rho * (rho - half_inv_beta)
    margin = CONDITION_MARGIN * max(1.0, abs(rhs))
    if lhs > rhs - margin:
        return PdCheck(rho, M, False,
                       f"(||Sigma|| + delta)^2 = {lhs:.12g} must be < "
                       f"rho(rho - 1/(2 beta)) = {rhs:.12g}")
    return PdCheck(rho, M, True, "ok")


def rho_v(theta: float, sigmas, L_norms) -> float:
    """Reference strong-monotonicity constant of the classical product metric:

        max(sigma)^{-1} (1 - (1+theta)/2 * sqrt(sigma_0 sum_j sigma_j ||L_j||^2)).

    The scalar-diagonal pattern always achieves rho >= rho_v.
    """
    sig = [float(s) for s in sigmas]
    if any(s <= 0 for s in sig):
        raise ValueError("stepsizes must be positive")
    nl = [float(v) for v in L_norms]
    if len(nl) != len(sig) - 1:
        raise ValueError("need one ||L_i|| per dual stepsize")
    inner = sig[0] * sum(s * n * n for s, n in zip(sig[1:], nl))
    return (1.0 - (1.0 + theta) / 2.0 * math.sqrt(inner)) / max(sig)


@dataclass(frozen=True)
class CorollaryParams:
    """Scalar-diagonal pattern: stepsizes sigma_0..sigma_m and the reflection
    weight theta in [-1, 1]; lam defaults to 0.99/M."""

    theta: float
    sigmas: tuple[float, ...]
    lam: Optional[float] = None

    def __post_init__(self):
        if not -1.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [-1, 1]")
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if any(s <= 0 for s in self.sigmas):
            raise ValueError("stepsizes must be positive")

    def omega(self, L_norms) -> np.ndarray:
        """The (m+1)x(m+1) comparison matrix of the pattern: 1/sigma_i on the
        diagonal, -(1+theta)/2 ||L_i|| in the first column."""
        m = len(L_norms)
        if m != len(self.sigmas) - 1:
            raise ValueError("need one ||L_i|| per dual stepsize")
        om = np.diag([1.0 / s for s in self.sigmas])
        for i, n in enumerate(L_norms, start=1):
            om[i, 0] = om[0, i] = -(1.0 + self.theta) / 2.0 * float(n)
        return om

    def constants(self, L_norms) -> tuple[float, float]:
        """(rho, M): smallest eigenvalue of Omega and the relaxation bound."""
        rho = symmetric_min_eig(self.omega(L_norms))
        M = 1.0 / min(self.sigmas) + (1.0 + self.theta) / 2.0 * math.sqrt(
            sum(float(n) ** 2 for n in L_norms))
        return rho, M

    def validate(self, pdp: PrimalDualProblem) -> tuple[float, float]:
        L_norms = pdp.norms_L()
        rho, M = self.constants(L_norms)
        if rho <= 0:
            raise ConfigurationError(
                f"Omega is not positive definite (rho = {rho:.6g})")
        half_inv_beta = 0.0 if math.isinf(pdp.beta) else 1.0 / (2.0 * pdp.beta)
        lhs = (pdp.delta + (1.0 - self.theta) / 2.0
               * math.sqrt(sum(n * n for n in L_norms))) ** 2
        rhs = rho * (rho - half_inv_beta)
        margin = CONDITION_MARGIN * max(1.0, abs(rhs))
        if lhs > rhs - margin:
            raise ConfigurationError(
                f"stepsize condition violated: (delta + (1-theta)/2 sqrt(sum ||L_i||^2))^2 "
                f"= {lhs:.12g} must be < rho(rho - 1/(2 beta)) = {rhs:.12g}")
        return rho, M


def _check_lambda(lam: float, M: float) -> float:
    bound = 1.0 / M
    if not 0.0 < lam < bound - CONDITION_MARGIN * max(1.0, bound):
        raise ConfigurationError(
            f"relaxation lambda = {lam:.6g} outside ]0, 1/M[ = ]0, {bound:.6g}[")
    return lam


# ---------------------------------------------------------------------------
# solvers


def _start_point(pdp: PrimalDualProblem, start) -> np.ndarray:
    layout = pdp.layout
    if start is None:
        return np.zeros(layout.dim)
    s = np.asarray(start, dtype=float)
    if s.shape != (layout.dim,):
        raise ValueError("starting point has the wrong product dimension")
    return s.copy()


def solve_block_triangular(pdp: PrimalDualProblem, bp: BlockPreconditioner,
                           lam: Optional[float], cfg: SolveConfig,
                           start=None) -> SolveReport:
    """Gauss-Seidel sweep: primal resolvent, then the dual resolvents in
    order i = 1..m (each consuming the freshly updated earlier blocks),
    then the m+1 relaxed correction updates."""
    if bp.m != pdp.m:
        raise ConfigurationError("preconditioner block count does not match the problem")
    check = check_pd_conditions(bp, [blk.L for blk in pdp.blocks],
                                pdp.delta, pdp.beta)
    if not check.ok:
        raise ConfigurationError(f"block preconditioner rejected: {check.detail}")
    lam = _check_lambda(0.99 / check.M if lam is None else lam, check.M)

    layout = pdp.layout
    m = pdp.m
    sigmas = [1.0 / c for c in bp.diag_scalars]
    counters = _Counters()

    def step(zvec):
        x = layout.block(zvec, 0)
        us = [layout.block(zvec, i) for i in range(1, m + 1)]

        forward = np.zeros_like(x)
        if pdp.C1 is not None:
            forward = forward + pdp.C1.evaluate(x)
            counters.b1 += 1
        c2x = None
        if pdp.C2 is not None:
            c2x = pdp.C2.evaluate(x)
            counters.b2 += 1
            forward = forward + c2x
        for blk, u in zip(pdp.blocks, us):
            forward = forward + blk.L.T @ u

        y = pdp.primal_resolvent(sigmas[0], x - sigmas[0] * forward)
        counters.res += 1
        xy = x - y

        vs: list[np.ndarray] = []
        for i, (blk, u) in enumerate(zip(pdp.blocks, us), start=1):
            inner = -(blk.L @ x)
            div = blk.d_inv_at(u)
            if div is not None:
                inner = inner + div
            Pi0 = bp.block(i, 0)
            if Pi0 is not None:
                inner = inner - Pi0 @ xy
            for j in range(1, i):
                Pij = bp.block(i, j)
                if Pij is not None:
                    inner = inner - Pij @ (us[j - 1] - vs[j - 1])
            w = u - sigmas[i] * inner
            if blk.r is not None:
                w = w - sigmas[i] * blk.r
            vs.append(blk.dual_resolvent(sigmas[i], w))
            counters.res += 1

        corr0 = bp.diag_scalars[0] * (y - x)
        if c2x is not None:
            corr0 = corr0 + (c2x - pdp.C2.evaluate(y))
            counters.b2 += 1
        for blk, u, v in zip(pdp.blocks, us, vs):
            corr0 = corr0 + blk.L.T @ (u - v)
        new_x = x + lam * corr0

        new_us = []
        for i, (blk, u) in enumerate(zip(pdp.blocks, us), start=1):
            corr = bp.diag_scalars[i] * (vs[i - 1] - u) - blk.L @ xy
            Pi0 = bp.block(i, 0)
            if Pi0 is not None:
                corr = corr + Pi0 @ (y - x)
            for j in range(1, i):
                Pij = bp.block(i, j)
                if Pij is not None:
                    corr = corr + Pij @ (vs[j - 1] - us[j - 1])
            new_us.append(u + lam * corr)

        return layout.concat([new_x] + new_us)

    return _run(step, _start_point(pdp, start), cfg, counters, layout=layout)


def solve_corollary(pdp: PrimalDualProblem, params: CorollaryParams,
                    cfg: SolveConfig, start=None) -> SolveReport:
    """Scalar-diagonal scheme with reflection weight theta.

    Delegates to the block-triangular sweep with P_ii = Id/sigma_i and
    P_i0 = -(1+theta) L_i, which reproduces it iterate for iterate; the
    stepsize condition is validated on the Omega matrix first.
    """
    if len(params.sigmas) != pdp.m + 1:
        raise ConfigurationError("need exactly m+1 stepsizes")
    rho, M = params.validate(pdp)
    lam = 0.99 / M if params.lam is None else params.lam
    _check_lambda(lam, M)
    bp = BlockPreconditioner.corollary_pattern(params.theta, params.sigmas, pdp)
    return solve_block_triangular(pdp, bp, lam, cfg, start)


def solve_condat_vu(pdp: PrimalDualProblem, tau: float, sigmas,
                    cfg: SolveConfig, start=None) -> SolveReport:
    """Condat-Vu baseline (unrelaxed): primal resolvent descent step, then
    dual ascent steps against the reflected primal 2 x^+ - x.

    Requires C2 absent and tau (1/(2 beta) + sum_i sigma_i ||L_i||^2) <= 1.
    """
    if pdp.C2 is not None:
        raise ConfigurationError(
            "the Condat-Vu baseline does not handle a nonlinear/Lipschitz C2 term")
    if np.isscalar(sigmas):
        sig = [float(sigmas)] * pdp.m
    else:
        sig = [float(s) for s in sigmas]
    if len(sig) != pdp.m or any(s <= 0 for s in sig) or tau <= 0:
        raise ConfigurationError("tau and the sigma_i must be positive, one per block")
    half_inv_beta = 0.0 if math.isinf(pdp.beta) else 1.0 / (2.0 * pdp.beta)
    load = tau * (half_inv_beta + sum(s * n * n for s, n in zip(sig, pdp.norms_L())))
    if load > 1.0 + 1e-10:
        raise ConfigurationError(
            f"stepsize condition violated: tau (1/(2 beta) + sum sigma_i ||L_i||^2) "
            f"= {load:.12g} must be <= 1")

    layout = pdp.layout
    counters = _Counters()

    def step(zvec):
        x = layout.block(zvec, 0)
        us = [layout.block(zvec, i) for i in range(1, pdp.m + 1)]
        forward = np.zeros_like(x)
        if pdp.C1 is not None:
            forward = forward + pdp.C1.evaluate(x)
            counters.b1 += 1
        for blk, u in zip(pdp.blocks, us):
            forward = forward + blk.L.T @ u
        new_x = pdp.primal_resolvent(tau, x - tau * forward)
        counters.res += 1
        refl = 2.0 * new_x - x
        new_us = []
        for s, blk, u in zip(sig, pdp.blocks, us):
            inner = blk.L @ refl
            div = blk.d_inv_at(u)
            if div is not None:
                inner = inner - div
            if blk.r is not None:
                inner = inner - blk.r
            new_us.append(blk.dual_resolvent(s, u + s * inner))
            counters.res += 1
        return layout.concat([new_x] + new_us)

    return _run(step, _start_point(pdp, start), cfg, counters, layout=layout)


def kkt_residual(pdp: PrimalDualProblem, x, us) -> float:
    """Optimality certificate at (x, u_1..u_m) for optimization instances:
    the primal prox-stationarity residual combined with the dual
    resolvent-feasibility residuals (all at unit step)."""
    x = as_vector(x)
    us = [as_vector(u) for u in us]
    forward = np.zeros_like(x)
    if pdp.C1 is not None:
        forward = forward + pdp.C1.evaluate(x)
    if pdp.C2 is not None:
        forward = forward + pdp.C2.evaluate(x)
    for blk, u in zip(pdp.blocks, us):
        forward = forward + blk.L.T @ u
    r2 = float(np.linalg.norm(x - pdp.primal_resolvent(1.0, x - forward))) ** 2
    for blk, u in zip(pdp.blocks, us):
        w = blk.L @ x
        if blk.r is not None:
            w = w - blk.r
        div = blk.d_inv_at(u)
        if div is not None:
            w = w - div
        r2 += float(np.linalg.norm(u - blk.dual_resolvent(1.0, u + w))) ** 2
    return math.sqrt(r2)
