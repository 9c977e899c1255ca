"""Smallest eigenpairs of the condensed pencil by block inverse iteration."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledPencil

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class ConvergenceError(SolverError):
    """Raised when the subspace iteration exceeds ``max_iters``; carries the best iterates."""

    def __init__(self, message, iterations=None, pairs=None):
        super().__init__(message, iterations)
        self.pairs = pairs or []


class CapacityError(ValueError):
    """The trial space is too small for the requested block size."""


class DegenerateEigenvectorError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    m: int = 1
    block_size: int | None = None
    tol_eig: float = 1e-10
    tol_res: float = 1e-9
    max_iters: int = 500
    tol_lin: float = 1e-12
    seed: int = 20240101

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be positive")
        if self.block_size is not None and self.block_size < self.m + 2:
            raise ValueError("block size must be at least m + 2")
        if not self.tol_eig > 0:
            raise ValueError("tol_eig must be positive")

    @property
    def p(self) -> int:
        return self.block_size if self.block_size is not None else self.m + 2


@dataclass
class EigenPair:
    lam: float
    y: np.ndarray
    u_norm: float = float("nan")
    sign: int = 1
    residual: float = float("nan")
    pencil: AssembledPencil | None = field(default=None, repr=False)

    def u_coefficients(self) -> np.ndarray:
        return self.y[self.pencil.trial_range("u")]


# -- linear solves -------------------------------------------------------------------
class SPDSolver:
    """Sparse LU factorization of an SPD matrix with residual-checked solves.

    One factorization serves every solve of the subspace iteration; each
    solve is followed by iterative refinement until the relative residual
    drops below ``tol``.
    """

    def __init__(self, S, tol: float = 1e-12, max_refine: int = 5):
        self.S = sp.csc_matrix(S)
        self.tol = tol
        self.max_refine = max_refine
        try:
            # COLAMD: MMD on A^T + A fills in badly for the ultraweak pencils
            self._lu = spla.splu(self.S, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}", 0) from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x = self._lu.solve(rhs)
        norm_b = np.linalg.norm(rhs, axis=0)
        norm_b = np.where(norm_b == 0.0, 1.0, norm_b)
        prev = np.inf
        for it in range(self.max_refine + 1):
            r = rhs - self.S @ x
            res = np.linalg.norm(r, axis=0)
            rel = np.max(res / norm_b)
            if rel <= self.tol:
                return x
            # on badly graded meshes the target can lie below round-off: accept
            # once refinement stalls at a backward error of a few ulps
            backward = np.max(res / (self.norm_S * np.linalg.norm(x, axis=0) + norm_b))
            if rel > 0.5 * prev and backward <= 64 * np.finfo(float).eps:
                log.debug("linear solve stalled at relative residual %.2e", rel)
                return x
            prev = rel
            x = x + self._lu.solve(r)
        raise SolverError(f"relative residual {rel:.3e} above {self.tol:.1e} "
                          f"after {self.max_refine} refinement steps", self.max_refine)

    @cached_property
    def norm_S(self) -> float:
        return float(spla.norm(self.S, 1))


def conjugate_gradient(S, rhs, tol: float = 1e-12, max_iters: int | None = None,
                       x0=None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients for SPD ``S``."""
    rhs = np.asarray(rhs, dtype=float)
    n = len(rhs)
    max_iters = 10 * n if max_iters is None else max_iters
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    norm_b = np.linalg.norm(rhs)
    if norm_b == 0.0:
        return np.zeros(n)
    d = S.diagonal() if hasattr(S, "diagonal") else np.diag(S)
    if np.any(d <= 0):
        raise SolverError("non-positive diagonal entry: matrix is not SPD", 0)
    r = rhs - S @ x
    z = r / d
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iters + 1):
        q = S @ p
        pq = p @ q
        if pq <= 0:
            raise SolverError("breakdown: non-positive curvature", it)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        if np.linalg.norm(r) <= tol * norm_b:
            return x
        z = r / d
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"conjugate gradients did not converge in {max_iters} iterations", max_iters)


def solve_spd(S, rhs, tol: float = 1e-12, method: str = "direct") -> np.ndarray:
    """Solve ``S x = rhs`` for SPD ``S`` to relative residual ``tol``."""
    if method == "direct":
        if not sp.issparse(S):
            S = sp.csc_matrix(np.asarray(S, dtype=float))
        return SPDSolver(S, tol).solve(rhs)
    if method == "cg":
        return conjugate_gradient(S, rhs, tol)
    raise ValueError(f"unknown method {method!r}")


# -- eigenpairs ------------------------------------------------------------------------
def _rayleigh_ritz(Y, SY, NY):
    """Ritz values (ascending) and coefficient vectors of the projected pencil."""
    A = Y.T @ SY
    Bm = Y.T @ NY
    mu, C = sla.eig(Bm, A)
    order = np.argsort(-mu.real, kind="stable")
    mu = mu[order]
    C = C[:, order]
    return mu, C


def smallest_eigenpairs(pencil, config: SolverConfig = SolverConfig()) -> list[EigenPair]:
    """The ``config.m`` smallest eigenpairs of ``S y = lambda N y`` (ascending).

    ``pencil`` is an :class:`AssembledPencil` or a tuple ``(S, N)``.
    """
    if isinstance(pencil, AssembledPencil):
        S, N, owner = pencil.S, pencil.N, pencil
    else:
        S, N = pencil
        owner = None
        S = sp.csr_matrix(S) if not sp.issparse(S) else S
        N = sp.csr_matrix(N) if not sp.issparse(N) else N
    n = S.shape[0]
    p, m = config.p, config.m
    if n < p:
        raise CapacityError(f"trial dimension {n} is smaller than the block size {p}")
    if owner is not None and owner.dofmaps["u"].n_global < m:
        # N has rank dim(u); all further eigenvalues are infinite
        raise CapacityError(f"u-space dimension {owner.dofmaps['u'].n_global} admits fewer "
                            f"than {m} finite eigenvalues")
    solver = SPDSolver(S, config.tol_lin)
    rng = np.random.default_rng(config.seed)
    Y, _ = np.linalg.qr(rng.standard_normal((n, p)))
    lam_old = None
    best = []
    for it in range(1, config.max_iters + 1):
        Z = solver.solve(N @ Y)
        Y, _ = np.linalg.qr(Z)
        SY = S @ Y
        NY = N @ Y
        mu, C = _rayleigh_ritz(Y, SY, NY)
        X = Y @ C.real
        X /= np.linalg.norm(X, axis=0)
        lam = 1.0 / mu[:m].real
        SX = S @ X[:, :m]
        NX = N @ X[:, :m]
        res = np.linalg.norm(SX - NX * lam, axis=0) / np.linalg.norm(SX, axis=0)
        best = [EigenPair(float(l), X[:, j].copy(), residual=float(res[j]), pencil=owner)
                for j, l in enumerate(lam)]
        if lam_old is not None:
            change = np.abs(lam - lam_old) / np.abs(lam)
            if np.all(change <= config.tol_eig) and np.all(res <= config.tol_res):
                imag = np.abs(mu[:m].imag) / np.abs(mu[:m])
                if np.any(imag > 1e-8):
                    raise SolverError(f"complex Ritz values {1.0 / mu[:m]}", it)
                if np.any(lam <= 0.0):
                    raise SolverError(f"non-positive eigenvalue {lam}", it)
                log.debug("subspace iteration converged in %d sweeps", it)
                pairs = best
                if owner is not None:
                    pairs = [normalize(pair, owner) for pair in pairs]
                return pairs
        lam_old = lam
        Y = X
    raise ConvergenceError(f"no convergence after {config.max_iters} sweeps",
                           config.max_iters, best)


def normalize(pair: EigenPair, pencil: AssembledPencil | None = None) -> EigenPair:
    """Scale ``pair`` so that ``||u_0||_L2 = 1`` and its first significant u-coefficient is positive."""
    pencil = pencil if pencil is not None else pair.pencil
    if pencil is None:
        raise ValueError("normalization needs the assembled pencil")
    u = pair.y[pencil.trial_range("u")]
    norm = float(np.sqrt(max(u @ (pencil.u_mass @ u), 0.0)))
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateEigenvectorError("eigenvector has a vanishing u-component")
    big = np.flatnonzero(np.abs(u) > 1e-6 * np.abs(u).max())
    sign = 1 if u[big[0]] > 0 else -1
    y = pair.y * (sign / norm)
    return EigenPair(pair.lam, y, u_norm=norm, sign=sign, residual=pair.residual, pencil=pencil)
