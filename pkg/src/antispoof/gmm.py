"""Diagonal-covariance GMM back-end.

One model is trained per class (bonafide and spoof) with EM; a trial is
scored by the difference of the two per-frame average log-likelihoods.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import (
    DimensionMismatch,
    EmptyFeatures,
    InvalidModel,
    KindMismatch,
    MalformedArchive,
    NotFound,
    TooFewFrames,
)
from .features import FeatureMatrix
from .scores import TrialScore

log = logging.getLogger(__name__)

MODEL_MAGIC = b"SPGM"
MODEL_VERSION = 1
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)
    kind: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if w.size < 1 or mu.shape != (w.size, mu.shape[1]) or var.shape != mu.shape:
            raise InvalidModel(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidModel(f"weights must be non-negative and sum to 1 (sum={w.sum()!r})")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var)) and np.all(var > 0)):
            raise InvalidModel("means must be finite and variances positive")
        for name, a in (("weights", w), ("means", mu), ("variances", var)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        """``log w_k + log N(x_t | k)``, shape (T, K)."""
        inv_var = 1.0 / self.variances
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        log_const = log_w - 0.5 * (self.dim * LOG_2PI + np.log(self.variances).sum(axis=1))
        return kernels.gmm_log_joint(np.ascontiguousarray(X, dtype=np.float64),
                                     np.ascontiguousarray(self.means), np.ascontiguousarray(inv_var),
                                     np.ascontiguousarray(log_const))


def default_variance_floor(X: np.ndarray) -> np.ndarray:
    """Per-dimension floor: ``max(1e-5, 1e-3 * global variance)``."""
    return np.maximum(1e-5, 1e-3 * X.var(axis=0))


def responsibilities(model: GmmModel, X: np.ndarray):
    """Posterior component probabilities and per-frame log-likelihoods."""
    lj = model.log_joint(X)
    ll = logsumexp(lj, axis=1)
    return np.exp(lj - ll[:, None]), ll


def _as_matrix(f, model: GmmModel | None = None) -> np.ndarray:
    if isinstance(f, FeatureMatrix):
        if model is not None and model.kind and f.kind != model.kind:
            raise KindMismatch(f"model trained on {model.kind}, features are {f.kind}")
        X = f.values
    else:
        X = np.asarray(f, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :] if X.size else X.reshape(0, model.dim if model else 0)
    if X.shape[0] == 0:
        raise EmptyFeatures("no frames to score")
    if model is not None and X.shape[1] != model.dim:
        raise DimensionMismatch(f"features have {X.shape[1]} dims, model has {model.dim}")
    return X


def kmeans(X: np.ndarray, k: int, seed: int = 0, max_iters: int = 20):
    """k-means++ seeding followed by at most ``max_iters`` Lloyd iterations.

    Returns ``(centroids, labels, distortion)`` where distortion is the total
    squared distance of frames to their centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < k:
        raise TooFewFrames(f"{n} frames for {k} clusters")
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    sq = np.einsum("ij,ij->i", X, X)

    def sq_dist(c):
        # expanded form, clipped since cancellation can dip just below zero
        return np.maximum(sq - 2.0 * (X @ c) + c @ c, 0.0)

    d2 = sq_dist(centroids[0])
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[j] = X[idx]
        d2 = np.minimum(d2, sq_dist(centroids[j]))

    Xt = np.ascontiguousarray(X.T)
    labels = None
    for _ in range(max_iters):
        # the per-frame |x|^2 term does not change the argmin
        dist = np.sum(centroids**2, axis=1) - 2.0 * (X @ centroids.T)
        new_labels = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        sums = np.stack([np.bincount(labels, weights=col, minlength=k) for col in Xt], axis=1)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
    labels = np.argmin(np.sum(centroids**2, axis=1) - 2.0 * (X @ centroids.T), axis=1)
    distortion = float(np.sum((X - centroids[labels]) ** 2))
    return centroids, labels, distortion


def kmeans_init(X: np.ndarray, k: int, seed: int = 0, floor=None, kind: str = "") -> GmmModel:
    X = np.asarray(X, dtype=np.float64)
    if floor is None:
        floor = default_variance_floor(X)
    centroids, labels, _ = kmeans(X, k, seed)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    pooled = X.var(axis=0)
    order = np.argsort(labels, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    sorted_X = X[order]
    variances = np.empty_like(centroids)
    for j in range(k):
        members = sorted_X[bounds[j]:bounds[j + 1]]
        variances[j] = members.var(axis=0) if len(members) > 1 else pooled
    # empty clusters keep a small share of mass so every component stays alive
    counts = np.maximum(counts, 1e-3)
    return GmmModel(counts / counts.sum(), centroids, np.maximum(variances, floor), kind)


@dataclass
class EmResult:
    model: GmmModel
    trace: list  # average log-likelihood per frame, one entry per evaluated model
    converged: bool
    reseeds: list = field(default_factory=list)  # (iteration, component) pairs


def em_fit(X, k: int, max_iters: int = 50, tol: float = 1e-4, floor=None,
           seed: int = 0, kind: str = "") -> EmResult:
    """Fit a ``k``-component diagonal GMM by EM, initialised with k-means.

    The fit runs on globally standardised data; the log-likelihood trace is
    reported in the original feature units. Iteration stops after
    ``max_iters`` M-steps or when the average log-likelihood gains less than
    ``tol``. A component whose responsibility mass underflows is reseeded on
    a random frame, which is recorded in ``reseeds`` and logged.
    """
    if isinstance(X, FeatureMatrix):
        kind = kind or X.kind
        X = X.values
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 10 * k:
        raise TooFewFrames(f"{n} frames; EM with {k} components needs at least {10 * k}")
    if floor is None:
        floor = default_variance_floor(X)
    floor = np.broadcast_to(np.asarray(floor, dtype=np.float64), (d,))

    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = (X - shift) / scale
    z_floor = floor / scale**2
    log_jacobian = np.sum(np.log(scale))

    rng = np.random.default_rng(seed)
    model = kmeans_init(Z, k, seed, z_floor)
    trace = []
    reseeds = []
    converged = False
    for it in range(max_iters + 1):
        resp, ll = responsibilities(model, Z)
        trace.append(float(np.mean(ll)) - log_jacobian)
        if it > 0 and trace[-1] - trace[-2] < tol:
            converged = True
            break
        if it == max_iters:
            break
        mass = resp.sum(axis=0)
        weights = mass / n
        safe = np.where(mass > 0, mass, 1.0)[:, None]
        means = (resp.T @ Z) / safe
        variances = (resp.T @ (Z * Z)) / safe - means**2
        for j in np.flatnonzero(mass < 1e-10):
            log.warning("EM iteration %d: component %d collapsed, reseeding", it, j)
            reseeds.append((it, int(j)))
            means[j] = Z[rng.integers(n)]
            variances[j] = 1.0
            weights[j] = 1.0 / k
        weights = weights / weights.sum()
        model = GmmModel(weights, means, np.maximum(variances, z_floor))

    return EmResult(
        GmmModel(model.weights, shift + scale * model.means,
                 np.maximum(model.variances * scale**2, floor), kind),
        trace,
        converged,
        reseeds,
    )


def avg_log_likelihood(model: GmmModel, f) -> float:
    """Per-frame average of ``log sum_k w_k N(x_t; mu_k, var_k)``."""
    X = _as_matrix(f, model)
    return float(np.mean(logsumexp(model.log_joint(X), axis=1)))


def gmm_score(bonafide: GmmModel, spoof: GmmModel, f, trial_id: str = "",
              system: str = "") -> TrialScore:
    """Log-likelihood difference between the bonafide and spoof models."""
    if bonafide.dim != spoof.dim:
        raise DimensionMismatch("bonafide and spoof models differ in dimension")
    score = avg_log_likelihood(bonafide, f) - avg_log_likelihood(spoof, f)
    return TrialScore(trial_id, score, system)


def save_model(path, model: GmmModel) -> None:
    kind = model.kind.encode("utf-8")
    blob = MODEL_MAGIC + struct.pack("<HH", MODEL_VERSION, len(kind)) + kind
    blob += struct.pack("<II", model.num_components, model.dim)
    for a in (model.weights, model.means, model.variances):
        blob += a.astype("<f8").tobytes()
    Path(path).write_bytes(blob)


def load_model(path) -> GmmModel:
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    buf = path.read_bytes()
    if buf[:4] != MODEL_MAGIC:
        raise MalformedArchive(f"{path}: not a GMM model file")
    try:
        version, n = struct.unpack_from("<HH", buf, 4)
        if version != MODEL_VERSION:
            raise MalformedArchive(f"{path}: unsupported model version {version}")
        pos = 8
        kind = buf[pos : pos + n].decode("utf-8")
        pos += n
        k, d = struct.unpack_from("<II", buf, pos)
        pos += 8
        arrays = []
        for count in (k, k * d, k * d):
            arrays.append(np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64))
            pos += 8 * count
    except (struct.error, ValueError) as exc:
        raise MalformedArchive(f"{path}: truncated model file") from exc
    w, mu, var = arrays
    return GmmModel(w, mu.reshape(k, d), var.reshape(k, d), kind)
