"""Riemannian features: covariance estimation, SPD functional calculus,
affine-invariant distance, Fréchet mean and tangent-space vectors.

All functions accept a single matrix ``(n, n)`` or a stack ``(..., n, n)``
where that makes sense. The eigendecompositions come from ``sym_eig``, a
batched cyclic Jacobi solver; no LAPACK eigensolver is used on this path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

SYM_TOL = 1e-10
SINGULAR_EIG = 1e-14
DEFAULT_SHRINKAGE = 1e-3


class SingularityError(NumericalError):
    pass


class NotPositiveDefiniteError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, msg, trace=()):
        super().__init__(msg)
        self.trace = list(trace)


def _as_stack(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ConfigError(f"expected square matrices, got shape {a.shape}")
    return a


def _check_symmetric(a):
    asym = np.linalg.norm(a - np.swapaxes(a, -1, -2), axis=(-2, -1))
    scale = np.maximum(np.linalg.norm(a, axis=(-2, -1)), np.finfo(float).tiny)
    if np.any(asym > SYM_TOL * scale):
        raise ConfigError(f"matrix not symmetric (relative asymmetry {np.max(asym / scale):.3g})")


def symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def sym_eig(a, tol=1e-12, max_sweeps=100):
    """Eigendecomposition of symmetric matrices by cyclic Jacobi rotations.

    Parameters
    ----------
    a : ndarray of shape (..., n, n)
        Symmetric matrices.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm of every matrix is
        below ``tol * ||a||_F``.
    max_sweeps : int
        Raise :class:`ConvergenceError` past this many sweeps.

    Returns
    -------
    w : ndarray of shape (..., n)
        Eigenvalues in descending order.
    v : ndarray of shape (..., n, n)
        Orthonormal eigenvectors as columns, ``a = v @ diag(w) @ v.T``.
    """
    a = _as_stack(a)
    _check_symmetric(a)
    batch_shape = a.shape[:-2]
    n = a.shape[-1]
    A = symmetrize(a).reshape(-1, n, n).copy()
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    norm = np.linalg.norm(A, axis=(1, 2))
    target = tol * norm
    off_mask = ~np.eye(n, dtype=bool)
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]

    def off_norm():
        return np.sqrt(np.sum(A[:, off_mask] ** 2, axis=1))

    sweeps = 0
    while np.any(off_norm() > target) and n > 1:
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {off_norm().max():.3g})")
        for p, q in pairs:
            apq = A[:, p, q]
            active = np.abs(apq) > 0
            if not np.any(active):
                continue
            safe = np.where(active, apq, 1.0)
            with np.errstate(over="ignore"):
                theta = (A[:, q, q] - A[:, p, p]) / (2.0 * safe)
            big = np.abs(theta) > 1e150
            theta_s = np.where(big, 0.0, theta)
            t = np.sign(theta_s) / (np.abs(theta_s) + np.sqrt(theta_s * theta_s + 1.0))
            t = np.where(theta_s == 0, 1.0, t)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c_ = c[:, None]
            s_ = s[:, None]
            # A <- A P (columns), then P^T A (rows); V <- V P
            cp, cq = A[:, :, p].copy(), A[:, :, q]
            A[:, :, p] = c_ * cp - s_ * cq
            A[:, :, q] = s_ * cp + c_ * cq
            rp, rq = A[:, p, :].copy(), A[:, q, :]
            A[:, p, :] = c_ * rp - s_ * rq
            A[:, q, :] = s_ * rp + c_ * rq
            A[:, p, q] = 0.0
            A[:, q, p] = 0.0
            vp, vq = V[:, :, p].copy(), V[:, :, q]
            V[:, :, p] = c_ * vp - s_ * vq
            V[:, :, q] = s_ * vp + c_ * vq
        sweeps += 1

    w = np.diagonal(A, axis1=1, axis2=2).copy()
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w.reshape(batch_shape + (n,)), V.reshape(batch_shape + (n, n))


_SCALAR_FUNCS = {
    "log": np.log,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "invsqrt": lambda w: 1.0 / np.sqrt(w),
}


def spd_map(a, f):
    """Apply a scalar function to the eigenvalues: ``V diag(f(w)) V^T``.

    ``f`` is one of ``"log"``, ``"exp"``, ``"sqrt"``, ``"invsqrt"``.
    """
    try:
        fn = _SCALAR_FUNCS[f]
    except KeyError:
        raise ConfigError(f"unknown matrix function {f!r}; choose from {sorted(_SCALAR_FUNCS)}") from None
    w, v = sym_eig(a)
    if f in ("log", "invsqrt") and np.any(w <= SINGULAR_EIG):
        raise SingularityError(f"{f} of matrix with eigenvalue {w.min():.3g} <= {SINGULAR_EIG}")
    if f == "sqrt" and np.any(w < 0):
        raise SingularityError(f"sqrt of matrix with negative eigenvalue {w.min():.3g}")
    return symmetrize((v * fn(w)[..., None, :]) @ np.swapaxes(v, -1, -2))


def _sqrt_invsqrt(a):
    w, v = sym_eig(a)
    if np.any(w <= SINGULAR_EIG):
        raise SingularityError(f"reference matrix has eigenvalue {w.min():.3g}")
    vt = np.swapaxes(v, -1, -2)
    sq = symmetrize((v * np.sqrt(w)[..., None, :]) @ vt)
    isq = symmetrize((v * (1.0 / np.sqrt(w))[..., None, :]) @ vt)
    return sq, isq


def check_spd(a, name="matrix"):
    """Validate symmetry and strict positive definiteness; return min eigenvalue."""
    a = _as_stack(a)
    w, _ = sym_eig(a)
    floor = SINGULAR_EIG * np.maximum(np.abs(w[..., 0]), np.finfo(float).tiny)
    if np.any(w[..., -1] <= floor):
        raise NotPositiveDefiniteError(f"{name} is not positive definite (min eigenvalue {w[..., -1].min():.3g})")
    return w[..., -1]


def sample_covariance(x, shrinkage=DEFAULT_SHRINKAGE, validate=True):
    """Shrunk sample covariance of channels x time data (or a stack of trials).

    ``C = Xc Xc^T / (T - 1)`` with row-centred ``Xc``, then
    ``C <- (1 - a) C + a (tr C / n) I``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ConfigError("covariance needs at least 2 time samples")
    if not 0 <= shrinkage <= 1:
        raise ConfigError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    n, t = x.shape[-2], x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    c = xc @ np.swapaxes(xc, -1, -2) / (t - 1)
    if shrinkage:
        mu = np.trace(c, axis1=-2, axis2=-1) / n
        c = (1 - shrinkage) * c + shrinkage * mu[..., None, None] * np.eye(n)
    c = symmetrize(c)
    if validate:
        check_spd(c, "sample covariance")
    return c


def riemann_distance(a, b):
    """Affine-invariant distance ``||log(A^-1/2 B A^-1/2)||_F``.

    ``a`` is a single matrix; ``b`` may be a stack, giving a vector of distances.
    """
    a = _as_stack(a)
    b = _as_stack(b)
    if a.shape[-1] != b.shape[-1]:
        raise ConfigError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    _, isq = _sqrt_invsqrt(a)
    w, _ = sym_eig(symmetrize(isq @ b @ isq))
    if np.any(w <= SINGULAR_EIG):
        raise SingularityError("distance to a singular matrix")
    return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))


def geometric_mean(ms, tol=1e-8, max_iter=50):
    """Fréchet mean under the affine-invariant metric.

    Fixed-point iteration ``G <- G^1/2 exp(mean_i log(G^-1/2 M_i G^-1/2)) G^1/2``
    started at the arithmetic mean, stopped when the Frobenius norm of the mean
    log falls below ``tol``.
    """
    ms = _as_stack(ms)
    if ms.ndim == 2:
        ms = ms[None]
    if ms.shape[0] == 0:
        raise ConfigError("geometric mean of an empty set")
    g = symmetrize(ms.mean(axis=0))
    trace = []
    for _ in range(max_iter):
        sq, isq = _sqrt_invsqrt(g)
        t = spd_map(symmetrize(isq @ ms @ isq), "log").mean(axis=0)
        crit = float(np.linalg.norm(t))
        trace.append(crit)
        if crit < tol:
            return g
        g = symmetrize(sq @ spd_map(t, "exp") @ sq)
    raise ConvergenceError(
        f"geometric mean did not converge in {max_iter} iterations "
        f"(last gradient norm {trace[-1]:.3g})", trace)


def mean_log_norm(g, ms):
    """Frobenius norm of ``mean_i log(G^-1/2 M_i G^-1/2)``; zero at the Fréchet mean."""
    _, isq = _sqrt_invsqrt(g)
    return float(np.linalg.norm(spd_map(symmetrize(isq @ np.asarray(ms) @ isq), "log").mean(axis=0)))


@dataclass(frozen=True, eq=False)
class TangentVector:
    reference: np.ndarray
    coords: np.ndarray


def _upper_weights(n):
    iu = np.triu_indices(n)
    w = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return iu, w


def tangent_space(cs, reference):
    """Batched tangent vectors: upper triangle of ``log(R^-1/2 C R^-1/2)`` with
    off-diagonals scaled by sqrt(2). Shape ``(..., n(n+1)/2)``."""
    cs = _as_stack(cs)
    reference = _as_stack(reference)
    n = reference.shape[-1]
    if cs.shape[-1] != n:
        raise ConfigError(f"dimension mismatch: {cs.shape[-1]} vs {n}")
    _, isq = _sqrt_invsqrt(reference)
    s = spd_map(symmetrize(isq @ cs @ isq), "log")
    iu, w = _upper_weights(n)
    return s[..., iu[0], iu[1]] * w


def tangent_map(c, reference) -> TangentVector:
    coords = tangent_space(c, reference)
    if not np.all(np.isfinite(coords)):
        raise NumericalError("non-finite tangent coordinates")
    return TangentVector(np.asarray(reference, dtype=np.float64), coords)
