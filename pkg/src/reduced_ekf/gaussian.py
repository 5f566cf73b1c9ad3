"""Joint Gaussian beliefs in moment and information form.

The centrepiece is :func:`reduced_bayes_update`: a measurement that only
sees the observable block ``x_O`` improves the marginal ``p(x_O)`` while the
conditional ``p(x_N | x_O)`` is carried over unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

#: Matrices whose diagonally scaled condition number exceeds this are treated as singular.
MAX_CONDITION = 1e12


class SingularCovarianceError(np.linalg.LinAlgError):
    """Raised when a matrix that must be inverted is numerically singular."""


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def check_condition(m: np.ndarray, what: str) -> None:
    """Fail if the symmetric matrix ``m`` is numerically singular.

    The condition number is taken after unit-diagonal (Jacobi) scaling, so
    mixing very precise and very vague blocks, or metres with radians, does
    not count as degeneracy. Only near-linear dependence does.
    """
    if m.size == 0:
        return
    d = np.diag(m)
    if not np.all(np.isfinite(m)) or np.any(d <= 0.0):
        raise SingularCovarianceError(f"{what} has a non-positive or non-finite diagonal entry")
    scale = 1.0 / np.sqrt(d)
    cond = np.linalg.cond(m * np.outer(scale, scale))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularCovarianceError(
            f"{what} is singular to working precision (condition number {cond:.3e} > {MAX_CONDITION:.0e})"
        )


def _spd_inverse(m: np.ndarray, what: str) -> np.ndarray:
    check_condition(m, what)
    try:
        factor = linalg.cho_factor(m, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"{what} is not positive definite") from exc
    return symmetrize(linalg.cho_solve(factor, np.eye(m.shape[0])))


def _spd_solve(m: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    check_condition(m, what)
    try:
        factor = linalg.cho_factor(m, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"{what} is not positive definite") from exc
    return linalg.cho_solve(factor, rhs)


@dataclass(frozen=True)
class MomentGaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        factor = linalg.cho_factor(self.cov, lower=True)
        d = x - self.mean
        maha = np.einsum("ij,ij->i", d, linalg.cho_solve(factor, d.T).T)
        logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
        return -0.5 * (maha + logdet + self.dim * np.log(2.0 * np.pi))


@dataclass(frozen=True)
class InformationGaussian:
    info_vec: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.info_vec, dtype=float))
        omega = np.atleast_2d(np.asarray(self.precision, dtype=float))
        if omega.shape != (xi.size, xi.size):
            raise ValueError(f"precision shape {omega.shape} does not match information vector of size {xi.size}")
        object.__setattr__(self, "info_vec", xi)
        object.__setattr__(self, "precision", omega)

    @property
    def dim(self) -> int:
        return self.info_vec.size


@dataclass(frozen=True)
class Partition:
    """Split of state indices into an unobservable block N and an observable block O."""

    idx_N: tuple[int, ...]
    idx_O: tuple[int, ...]

    def __post_init__(self):
        n = tuple(int(i) for i in self.idx_N)
        o = tuple(int(i) for i in self.idx_O)
        if set(n) & set(o):
            raise ValueError("partition blocks overlap")
        if sorted(n + o) != list(range(len(n) + len(o))):
            raise ValueError("partition must cover indices 0..dim-1 exactly once")
        object.__setattr__(self, "idx_N", n)
        object.__setattr__(self, "idx_O", o)

    @property
    def dim(self) -> int:
        return len(self.idx_N) + len(self.idx_O)

    @classmethod
    def leading(cls, n_unobservable: int, dim: int) -> "Partition":
        """The first ``n_unobservable`` indices form N, the rest O."""
        return cls(tuple(range(n_unobservable)), tuple(range(n_unobservable, dim)))


@dataclass(frozen=True)
class ConditionalLinearGaussian:
    """``p(x_N | x_O) = N(gain @ x_O + offset, inv(cond_precision))``."""

    gain: np.ndarray
    offset: np.ndarray
    cond_precision: np.ndarray


def to_information(g: MomentGaussian) -> InformationGaussian:
    omega = _spd_inverse(g.cov, "covariance")
    return InformationGaussian(omega @ g.mean, omega)


def to_moment(g: InformationGaussian) -> MomentGaussian:
    cov = _spd_inverse(g.precision, "precision")
    return MomentGaussian(cov @ g.info_vec, cov)


def _blocks(m: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
    return m[np.ix_(rows, cols)]


def condition_split(g: MomentGaussian, part: Partition) -> tuple[MomentGaussian, ConditionalLinearGaussian]:
    """Factor ``p(x_N, x_O)`` into the marginal ``p(x_O)`` and the conditional ``p(x_N | x_O)``."""
    if part.dim != g.dim:
        raise ValueError(f"partition covers {part.dim} indices, belief has {g.dim}")
    n, o = list(part.idx_N), list(part.idx_O)
    mu_n, mu_o = g.mean[n], g.mean[o]
    s_nn = _blocks(g.cov, n, n)
    s_no = _blocks(g.cov, n, o)
    s_oo = _blocks(g.cov, o, o)

    # A = S_NO S_OO^-1, solved as S_OO A^T = S_ON
    gain = _spd_solve(s_oo, s_no.T, "observable-block covariance").T if o else np.zeros((len(n), 0))
    offset = mu_n - gain @ mu_o
    cond_cov = symmetrize(s_nn - gain @ s_no.T)
    cond_precision = _spd_inverse(cond_cov, "conditional covariance") if n else np.zeros((0, 0))
    marginal = MomentGaussian(mu_o, symmetrize(s_oo))
    return marginal, ConditionalLinearGaussian(gain, offset, cond_precision)


def information_update(g: InformationGaussian, C, Q, z) -> InformationGaussian:
    """Fuse a linear measurement ``z = C x + noise``, ``noise ~ N(0, Q)``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if C.shape != (z.size, g.dim) or Q.shape != (z.size, z.size):
        raise ValueError(f"measurement shapes C{C.shape} Q{Q.shape} z{z.shape} inconsistent with state dim {g.dim}")
    qinv_c = _spd_solve(Q, C, "measurement noise covariance")
    qinv_z = _spd_solve(Q, z, "measurement noise covariance")
    return InformationGaussian(g.info_vec + C.T @ qinv_z, symmetrize(g.precision + C.T @ qinv_c))


def recombine(marginal_O: InformationGaussian, cond: ConditionalLinearGaussian, part: Partition) -> InformationGaussian:
    """Joint information form of ``p(x_O) p(x_N | x_O)``, blocks placed per ``part``."""
    n, o = list(part.idx_N), list(part.idx_O)
    if marginal_O.dim != len(o):
        raise ValueError(f"marginal has dim {marginal_O.dim}, partition O block has {len(o)}")
    if cond.gain.shape != (len(n), len(o)) or cond.offset.shape != (len(n),) or cond.cond_precision.shape != (len(n), len(n)):
        raise ValueError("conditional dimensions do not match partition")
    w = cond.cond_precision
    a = cond.gain
    wa = w @ a
    wb = w @ cond.offset

    omega = np.zeros((part.dim, part.dim))
    omega[np.ix_(n, n)] = w
    omega[np.ix_(n, o)] = -wa
    omega[np.ix_(o, n)] = -wa.T
    omega[np.ix_(o, o)] = marginal_O.precision + a.T @ wa
    xi = np.zeros(part.dim)
    xi[n] = wb
    xi[o] = marginal_O.info_vec - a.T @ wb
    return InformationGaussian(xi, symmetrize(omega))


def reduced_bayes_update(g: MomentGaussian, part: Partition, C_O, Q, z, method: str = "information") -> MomentGaussian:
    """Update only the observable marginal and keep ``p(x_N | x_O)`` fixed.

    ``method="information"`` follows split / information-filter fusion /
    recombination literally. ``method="moment"`` runs a gain-form update
    with a measurement matrix that is zero on the N block. A measurement
    that never sees x_N leaves the exact conditional untouched, so both
    routes agree, but this one costs ``O(n^2 m)`` and never inverts the
    O-block covariance. The filters use it.
    """
    C_O = np.atleast_2d(np.asarray(C_O, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if method == "information":
        marginal, cond = condition_split(g, part)
        improved = information_update(to_information(marginal), C_O, Q, z)
        return to_moment(recombine(improved, cond, part))
    if method == "moment":
        return _reduced_update_moment(g, part, C_O, Q, z)
    raise ValueError(f"unknown method {method!r}")


def _reduced_update_moment(g: MomentGaussian, part: Partition, C_O, Q, z) -> MomentGaussian:
    o = np.asarray(part.idx_O, dtype=int)
    if C_O.shape != (z.size, o.size):
        raise ValueError(f"C_O shape {C_O.shape} inconsistent with O block of size {o.size}")
    check_condition(Q, "measurement noise covariance")
    # only columns of x_O that the measurement touches contribute to Sigma C^T
    active = np.flatnonzero(np.any(C_O != 0.0, axis=0))
    cross = g.cov[:, o[active]] @ C_O[:, active].T
    s = symmetrize(C_O @ cross[o] + Q)
    check_condition(s, "innovation covariance")
    try:
        chol = linalg.cholesky(s, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError("innovation covariance is not positive definite") from exc
    # Sigma C^T S^-1 C Sigma = L L^T with L = Sigma C^T chol^-T
    ell = linalg.solve_triangular(chol, cross.T, lower=True).T
    white = linalg.solve_triangular(chol, z - C_O @ g.mean[o], lower=True)
    mean = g.mean + ell @ white
    cov = g.cov - ell @ ell.T
    return MomentGaussian(mean, cov)
