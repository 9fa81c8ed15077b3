"""Classical baselines: LDA and SVM on tangent vectors, MDM on covariances.

Labels may be any integers; models keep the sorted class list and all
ties resolve to the lowest class index.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features
from .errors import ConfigError, DataIntegrityError, NumericalError
from .rng import make_rng

SCHEMA = "classic-v1"


def _classes(ys, min_per_class=1, min_classes=1):
    ys = np.asarray(ys)
    classes, counts = np.unique(ys, return_counts=True)
    if len(classes) < min_classes:
        raise ConfigError(f"need at least {min_classes} classes, got {len(classes)}")
    if np.any(counts < min_per_class):
        bad = classes[counts < min_per_class]
        raise ConfigError(f"classes {bad.tolist()} have fewer than {min_per_class} samples")
    return classes


def _check_dim(x, d):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != d:
        raise ConfigError(f"feature dimension {x.shape[-1]} does not match model dimension {d}")
    return x


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# LDA
# ---------------------------------------------------------------------------

@dataclass
class LdaModel:
    classes: np.ndarray
    class_means: np.ndarray
    shared_covariance_inverse: np.ndarray
    class_priors: np.ndarray
    ridge: float

    def discriminants(self, xs):
        xs = _check_dim(xs, self.class_means.shape[1])
        sm = self.class_means @ self.shared_covariance_inverse
        const = -0.5 * np.sum(sm * self.class_means, axis=1) + np.log(self.class_priors)
        return xs @ sm.T + const


def lda_train(xs, ys, ridge=None) -> LdaModel:
    """Fit shared-covariance Gaussian classes.

    ``ridge`` defaults to ``1e-6 * tr(S) / d`` where ``S`` is the pooled
    within-class covariance. The regularised covariance is inverted through
    its Jacobi eigendecomposition.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys)
    classes = _classes(ys, min_per_class=2, min_classes=2)
    n, d = xs.shape
    means = np.stack([xs[ys == k].mean(axis=0) for k in classes])
    centred = xs - means[np.searchsorted(classes, ys)]
    pooled = centred.T @ centred / (n - len(classes))
    if ridge is None:
        ridge = 1e-6 * np.trace(pooled) / d
    if ridge < 0:
        raise ConfigError("ridge must be >= 0")
    cov = features.symmetrize(pooled + ridge * np.eye(d))
    w, v = features.sym_eig(cov)
    if w[-1] <= 1e-12 * max(w[0], np.finfo(float).tiny):
        raise NumericalError(
            f"pooled covariance is singular (min eigenvalue {w[-1]:.3g}); use ridge > 0")
    inv = features.symmetrize((v / w) @ v.T)
    priors = np.array([np.mean(ys == k) for k in classes])
    return LdaModel(classes, means, inv, priors, float(ridge))


def lda_classify(m: LdaModel, x):
    """Return ``(label, posteriors)`` for one vector, or arrays for a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    disc = m.discriminants(np.atleast_2d(x))
    post = _softmax(disc)
    labels = m.classes[np.argmax(disc, axis=1)]
    return (labels[0], post[0]) if single else (labels, post)


# ---------------------------------------------------------------------------
# MDM
# ---------------------------------------------------------------------------

@dataclass
class MdmModel:
    classes: np.ndarray
    class_means: np.ndarray


def mdm_train(cs, ys, tol=1e-8, max_iter=50) -> MdmModel:
    cs = np.asarray(cs, dtype=np.float64)
    ys = np.asarray(ys)
    classes = _classes(ys)
    means = np.stack([features.geometric_mean(cs[ys == k], tol, max_iter) for k in classes])
    return MdmModel(classes, means)


def mdm_classify(m: MdmModel, c):
    """Nearest class mean in affine-invariant distance: ``(label, distances)``."""
    c = np.asarray(c, dtype=np.float64)
    single = c.ndim == 2
    cs = c[None] if single else c
    if cs.shape[-1] != m.class_means.shape[-1]:
        raise ConfigError(f"matrix dimension {cs.shape[-1]} does not match model {m.class_means.shape[-1]}")
    dist = np.stack([features.riemann_distance(mean, cs) for mean in m.class_means], axis=1)
    labels = m.classes[np.argmin(dist, axis=1)]
    return (labels[0], dist[0]) if single else (labels, dist)


# ---------------------------------------------------------------------------
# SVM
# ---------------------------------------------------------------------------

def kernel_matrix(a, b, kernel, gamma=None):
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if kernel == "linear":
        return a @ b.T
    if kernel == "gaussian":
        sq = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2 * a @ b.T)
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ConfigError(f"unknown kernel {kernel!r}")


@dataclass
class BinaryMachine:
    support_vectors: np.ndarray
    alpha: np.ndarray        # dual coefficients, in [0, c]
    sv_labels: np.ndarray    # +1 / -1
    bias: float
    kkt_residual: float
    n_updates: int

    def decision(self, k_sv_x):
        """``k_sv_x``: kernel between support vectors and inputs, (n_sv, n)."""
        return (self.alpha * self.sv_labels) @ k_sv_x + self.bias


@dataclass
class SvmModel:
    classes: np.ndarray
    kernel: str
    gamma: float | None
    c: float
    tol: float
    machines: list = field(default_factory=list)
    dim: int = 0

    def decision_values(self, xs):
        xs = _check_dim(np.atleast_2d(xs), self.dim)
        cols = []
        for mach in self.machines:
            if len(mach.alpha):
                kx = kernel_matrix(mach.support_vectors, xs, self.kernel, self.gamma)
                cols.append(mach.decision(kx))
            else:
                cols.append(np.full(len(xs), mach.bias))
        return np.stack(cols, axis=1)


def smo_solve(K, y, c, tol=1e-3, max_updates=None, rng=None):
    """Soft-margin dual by SMO with maximal-violating-pair / second-order selection.

    Minimises ``0.5 a^T Q a - sum(a)`` with ``Q_ij = y_i y_j K_ij`` subject to
    ``0 <= a <= c`` and ``y^T a = 0``.

    Returns ``(alpha, bias, kkt_residual, n_updates)`` where the decision
    function is ``sum_i a_i y_i K(x_i, x) + bias``.
    """
    n = len(y)
    y = np.asarray(y, dtype=np.float64)
    if max_updates is None:
        max_updates = 10 * n * n
    # seeded permutation fixes tie-breaking among equally violating indices
    perm = rng.permutation(n) if rng is not None else np.arange(n)
    K = K[np.ix_(perm, perm)]
    y = y[perm]
    Q = (y[:, None] * y[None, :]) * K
    diag = np.diag(Q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    tau = 1e-12
    updates = 0
    while True:
        yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            gap = 0.0
            break
        yg_up = np.where(up, yg, -np.inf)
        i = int(np.argmax(yg_up))
        m_val = yg_up[i]
        M_val = np.min(np.where(low, yg, np.inf))
        gap = m_val - M_val
        if gap <= tol:
            break
        if updates >= max_updates:
            raise NumericalError(
                f"SMO did not converge after {updates} pair updates (KKT gap {gap:.3g} > {tol})")
        # second-order choice of j
        b = m_val - yg
        cand = low & (b > 0)
        a = diag[i] + diag - 2.0 * y[i] * y * Q[i]
        a = np.where(a > 0, a, tau)
        score = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(score))

        # two-variable subproblem (LIBSVM form)
        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(diag[i] + diag[j] + 2 * Q[i, j], tau)
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            else:
                if ai < 0:
                    ai, aj = 0.0, -diff
            if diff > 0:
                if ai > c:
                    ai, aj = c, c - diff
            else:
                if aj > c:
                    aj, ai = c, c + diff
        else:
            quad = max(diag[i] + diag[j] - 2 * Q[i, j], tau)
            delta = (grad[i] - grad[j]) / quad
            s = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if s > c:
                if ai > c:
                    ai, aj = c, s - c
            else:
                if aj < 0:
                    aj, ai = 0.0, s
            if s > c:
                if aj > c:
                    aj, ai = c, s - c
            else:
                if ai < 0:
                    ai, aj = 0.0, s
        alpha[i], alpha[j] = ai, aj
        grad += Q[i] * (ai - ai_old) + Q[j] * (aj - aj_old)
        updates += 1

    # bias from free vectors, else midpoint of the feasible interval
    yg = -y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        bias = float(np.mean(yg[free]))
    else:
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
        hi = np.max(yg[up]) if up.any() else 0.0
        lo = np.min(yg[low]) if low.any() else 0.0
        bias = float(0.5 * (hi + lo))
    out = np.empty(n)
    out[perm] = alpha
    return out, bias, float(max(gap, 0.0)), updates


def default_gamma(xs):
    xs = np.asarray(xs, dtype=np.float64)
    var = float(np.mean(np.var(xs, axis=0)))
    return 1.0 / (xs.shape[1] * var) if var > 0 else 1.0


def svm_train(xs, ys, kernel="linear", c=1.0, tol=1e-3, gamma=None, seed=0,
              max_updates=None) -> SvmModel:
    """One-vs-rest soft-margin SVMs solved by SMO."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys)
    if c <= 0:
        raise ConfigError("svm c must be > 0")
    classes = _classes(ys, min_classes=2)
    if kernel == "gaussian" and gamma is None:
        gamma = default_gamma(xs)
    K = kernel_matrix(xs, xs, kernel, gamma)
    model = SvmModel(classes, kernel, gamma, float(c), float(tol), dim=xs.shape[1])
    for idx, k in enumerate(classes):
        y = np.where(ys == k, 1.0, -1.0)
        alpha, bias, resid, n_up = smo_solve(K, y, c, tol, max_updates, make_rng(seed, idx))
        sv = alpha > 0
        model.machines.append(BinaryMachine(xs[sv].copy(), alpha[sv], y[sv], bias, resid, n_up))
    return model


def svm_classify(m: SvmModel, x):
    """Return ``(label, decision_values)``; arrays for a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    dv = m.decision_values(np.atleast_2d(x))
    labels = m.classes[np.argmax(dv, axis=1)]
    return (labels[0], dv[0]) if single else (labels, dv)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _arr(a):
    return np.asarray(a).tolist()


def model_to_dict(m) -> dict:
    if isinstance(m, LdaModel):
        body = {"kind": "lda", "classes": _arr(m.classes), "class_means": _arr(m.class_means),
                "shared_covariance_inverse": _arr(m.shared_covariance_inverse),
                "class_priors": _arr(m.class_priors), "ridge": m.ridge}
    elif isinstance(m, MdmModel):
        body = {"kind": "mdm", "classes": _arr(m.classes), "class_means": _arr(m.class_means)}
    elif isinstance(m, SvmModel):
        body = {"kind": "svm", "classes": _arr(m.classes), "kernel": m.kernel, "gamma": m.gamma,
                "c": m.c, "tol": m.tol, "dim": m.dim,
                "machines": [{"support_vectors": _arr(mm.support_vectors), "alpha": _arr(mm.alpha),
                              "sv_labels": _arr(mm.sv_labels), "bias": mm.bias,
                              "kkt_residual": mm.kkt_residual, "n_updates": mm.n_updates}
                             for mm in m.machines]}
    else:
        raise ConfigError(f"cannot serialise {type(m).__name__}")
    return {"schema": SCHEMA, **body}


def model_from_dict(d: dict):
    if d.get("schema") != SCHEMA:
        raise DataIntegrityError(f"unsupported model schema {d.get('schema')!r}")
    kind = d["kind"]
    classes = np.asarray(d["classes"])
    if kind == "lda":
        return LdaModel(classes, np.asarray(d["class_means"], float),
                        np.asarray(d["shared_covariance_inverse"], float),
                        np.asarray(d["class_priors"], float), float(d["ridge"]))
    if kind == "mdm":
        return MdmModel(classes, np.asarray(d["class_means"], float))
    if kind == "svm":
        m = SvmModel(classes, d["kernel"], d["gamma"], float(d["c"]), float(d["tol"]), dim=int(d["dim"]))
        for mm in d["machines"]:
            sv = np.asarray(mm["support_vectors"], float)
            m.machines.append(BinaryMachine(sv.reshape(-1, m.dim),
                                            np.asarray(mm["alpha"], float),
                                            np.asarray(mm["sv_labels"], float), float(mm["bias"]),
                                            float(mm["kkt_residual"]), int(mm["n_updates"])))
        return m
    raise DataIntegrityError(f"unknown model kind {kind!r}")


def save_model(m, path):
    Path(path).write_text(json.dumps(model_to_dict(m), sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
