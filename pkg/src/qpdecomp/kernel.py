"""Gaussian kernel assembly on delay-embedded data with bistochastic
normalization.

Given embedded points y_1 .. y_N, the kernel matrix is
``K_ij = exp(-|y_i - y_j|^2 / epsilon)`` (squared distances, never
square-rooted).  Degrees and the normalized matrix follow

    d_i      = (1/N) sum_j K_ij
    q_i      = (1/N) sum_j K_ij / d_j
    Kt_ij    = K_ij / (N * d_i * sqrt(q_j))

With this scaling P = Kt Kt^T is symmetric, non-negative and exactly
row-stochastic, so its top eigenvalue is 1 with a constant eigenvector; the
downstream spectral module relies on both facts.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .series import DelayEmbedding

_DEGREE_FLOOR = 1e-300
DEFAULT_MAX_POINTS = 25000


def _points_of(embedding):
    if isinstance(embedding, DelayEmbedding):
        return embedding.points
    pts = np.asarray(embedding, dtype=float)
    if pts.ndim != 2:
        raise DataError("expected a DelayEmbedding or an (N, dim) matrix")
    return pts


@dataclass(frozen=True)
class KernelSystem:
    """Kernel matrices and degree vectors for one embedding at one bandwidth."""

    epsilon: float
    K: np.ndarray
    d: np.ndarray
    q: np.ndarray
    Ktilde: np.ndarray
    embedding: DelayEmbedding

    def __post_init__(self):
        if not np.allclose(np.diagonal(self.K), 1.0, rtol=0, atol=0):
            raise NumericalError("kernel diagonal must be exactly 1")
        if self.d.min() <= 0 or self.q.min() <= 0:
            raise NumericalError("degree vectors must be strictly positive")

    @property
    def n(self) -> int:
        return self.K.shape[0]


def pairwise_sqdist(embedding) -> np.ndarray:
    """Squared Euclidean distances between all embedded points.

    Symmetric with an exactly zero diagonal.  Computed with the Gram-matrix
    identity and symmetrized, so scaling all points by a power of two and
    epsilon by its square leaves the downstream kernel bit-identical.
    """
    pts = _points_of(embedding)
    if pts.shape[0] < 1:
        raise DataError("embedding is empty")
    sq = np.einsum("ij,ij->i", pts, pts)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    np.maximum(d2, 0.0, out=d2)
    d2 = (d2 + d2.T) / 2.0
    np.fill_diagonal(d2, 0.0)
    return d2


def gaussian_kernel(embedding: DelayEmbedding, epsilon: float,
                    max_points: int = DEFAULT_MAX_POINTS) -> KernelSystem:
    """Assemble K, the degree vectors and the bistochastically normalized Ktilde.

    Parameters
    ----------
    embedding : DelayEmbedding
        Embedded data; N x N dense storage, so N is capped by ``max_points``.
    epsilon : float
        Gaussian bandwidth applied to squared distances.
    max_points : int
        Hard cap on N (dense matrices only; sparsification is out of scope).
    """
    if not epsilon > 0:
        raise DataError(f"epsilon must be positive, got {epsilon}")
    if not isinstance(embedding, DelayEmbedding):
        raise DataError("gaussian_kernel requires a DelayEmbedding")
    n = embedding.n_points
    if n > max_points:
        raise DataError(
            f"{n} points exceed the dense-kernel cap of {max_points}; "
            f"raise max_points explicitly to proceed"
        )
    d2 = pairwise_sqdist(embedding)
    K = np.exp(-d2 / epsilon)
    d = K.mean(axis=1)
    if d.min() < _DEGREE_FLOOR:
        worst = int(np.argmin(d))
        raise NumericalError(f"isolated point {worst}; increase epsilon")
    q = K.dot(1.0 / d) / n
    if q.min() < _DEGREE_FLOOR:
        worst = int(np.argmin(q))
        raise NumericalError(f"isolated point {worst}; increase epsilon")
    Ktilde = K / (n * d[:, None] * np.sqrt(q)[None, :])
    return KernelSystem(epsilon=float(epsilon), K=K, d=d, q=q,
                        Ktilde=Ktilde, embedding=embedding)


def kernel_vector_at(system: KernelSystem, y) -> np.ndarray:
    """Kernel values between an arbitrary point and every stored point.

    Entry n is ``exp(-|y - y_n|^2 / epsilon)``; far-away queries underflow
    toward zero entry-wise.
    """
    y = np.asarray(y, dtype=float).ravel()
    pts = system.embedding.points
    if y.shape[0] != pts.shape[1]:
        raise DataError(
            f"query dimension {y.shape[0]} does not match embedding dimension "
            f"{pts.shape[1]}"
        )
    diff = pts - y[None, :]
    return np.exp(-np.einsum("ij,ij->i", diff, diff) / system.epsilon)


def sqdist_quantile(embedding, quantile: float) -> float:
    """Quantile of the off-diagonal squared distances (bandwidth diagnostics)."""
    d2 = pairwise_sqdist(embedding)
    n = d2.shape[0]
    if n < 2:
        raise DataError("need at least two points")
    return float(np.quantile(d2[np.triu_indices(n, 1)], quantile))


def sqdist_histogram(embedding, bins: int = 64):
    """Histogram of off-diagonal squared distances.

    Returns ``(counts, edges)``.  This is the bandwidth-selection diagnostic
    the CLI emits; there is deliberately no automatic epsilon tuning.
    """
    d2 = pairwise_sqdist(embedding)
    n = d2.shape[0]
    if n < 2:
        raise DataError("need at least two points")
    return np.histogram(d2[np.triu_indices(n, 1)], bins=bins)
