"""Truncated SVD of the normalized kernel matrix and out-of-sample extension.

Inner-product convention (declared once, carried explicitly everywhere):

* ``Phi`` columns are orthonormal under the empirical inner product
  ``<u, v> = (1/N) sum_n u_n v_n``; equivalently ``Phi = sqrt(N) * U`` for
  Euclidean-orthonormal left singular vectors U.  The leading column is then
  the constant function with value ~1.
* ``Gamma`` columns are plain Euclidean-orthonormal right singular vectors,
  exactly as delivered by the SVD.
* ``lam[l] = sigma[l]**2`` are the kernel-operator eigenvalues.

The out-of-sample extension of eigenfunction l is

    ext_l(y) = kvec(y) . (Q^{-1/2} Gamma[:, l]) / (sqrt(N) * sigma_l * deg(y))

with ``deg(y) = mean(kvec(y))`` the out-of-sample degree.  At a stored data
point this reproduces the corresponding entry of Phi exactly (the SVD
identity), which is the contract the tests pin down.  Evaluation uses a
shifted-ratio form so the common kernel scale cancels and far-away queries
stay finite instead of underflowing to 0/0.
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse.linalg
from scipy.sparse.linalg import ArpackNoConvergence

from ._npz import write_npz
from .errors import DataError, NumericalError
from .kernel import KernelSystem

# Eigenvalues below this floor may not be inverted; requests that cross it
# fail loudly instead of clamping (clamping would fabricate eigenfunctions).
LAMBDA_FLOOR = 1e-14

_LAMBDA_ONE_TOL = 1e-6
_DENSE_CUTOFF = 512


@dataclass(frozen=True)
class SpectralBasis:
    """Top-L singular triplets of Ktilde in the declared conventions."""

    lam: np.ndarray
    Phi: np.ndarray
    Gamma: np.ndarray
    kernel: KernelSystem

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 1 or len(lam) < 1:
            raise NumericalError("lam must be a non-empty vector")
        if np.any(np.diff(lam) > 0):
            raise NumericalError("eigenvalues must be non-increasing")
        if lam[-1] <= 0:
            raise NumericalError("eigenvalues must be strictly positive")
        if abs(lam[0] - 1.0) > _LAMBDA_ONE_TOL:
            raise NumericalError(
                f"leading eigenvalue {lam[0]} departs from 1 beyond {_LAMBDA_ONE_TOL}"
            )
        phi1 = self.Phi[:, 0]
        cv = phi1.std() / abs(phi1.mean())
        if cv > _LAMBDA_ONE_TOL:
            raise NumericalError(
                f"leading eigenfunction is not constant (cv={cv:.2e})"
            )

    @property
    def L(self) -> int:
        return len(self.lam)

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.lam)


def _fix_signs(u, v):
    # Each left vector gets a non-negative sum; the paired right vector flips
    # with it.  Zero sums fall back to the sign of the largest-magnitude entry.
    for l in range(u.shape[1]):
        s = u[:, l].sum()
        if s == 0.0:
            s = u[np.argmax(np.abs(u[:, l])), l]
        if s < 0.0:
            u[:, l] = -u[:, l]
            v[:, l] = -v[:, l]
    return u, v


def decompose(kernel: KernelSystem, L: int, solver: str = "auto",
              seed: int = 0) -> SpectralBasis:
    """Top-L singular value decomposition of Ktilde.

    Parameters
    ----------
    kernel : KernelSystem
        Normalized kernel system.
    L : int
        Truncation size, 1 <= L <= N.
    solver : {"auto", "dense", "arpack"}
        "arpack" is the iterative Lanczos-type partial SVD; "dense" the exact
        LAPACK SVD (also the small-N test oracle).  "auto" picks dense for
        small problems or near-full truncations.
    seed : int
        Seeds the deterministic ARPACK start vector, making results
        reproducible run to run.

    Raises
    ------
    NumericalError
        On solver non-convergence, or when ``lam[L-1]`` falls below the
        1e-14 floor ("increase epsilon or decrease L").
    """
    n = kernel.n
    if not (1 <= L <= n):
        raise DataError(f"L={L} out of range 1..{n}")
    if solver == "auto":
        solver = "dense" if (n <= _DENSE_CUTOFF or L > n // 3) else "arpack"
    if solver == "dense":
        u, s, vt = np.linalg.svd(kernel.Ktilde)
        u, s, v = u[:, :L], s[:L], vt[:L].T
    elif solver == "arpack":
        if L > n - 2:
            raise DataError(f"arpack requires L <= N-2, got L={L}, N={n}")
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            u, s, vt = scipy.sparse.linalg.svds(kernel.Ktilde, k=L, v0=v0,
                                                solver="arpack")
        except ArpackNoConvergence as exc:
            raise NumericalError(
                f"partial SVD did not converge: {len(exc.eigenvalues)} of {L} "
                f"singular triplets attained"
            ) from exc
        order = np.argsort(-s, kind="stable")
        u, s, v = u[:, order], s[order], vt.T[:, order]
    else:
        raise DataError(f"unknown solver {solver!r}")

    lam = s ** 2
    if lam[-1] < LAMBDA_FLOOR:
        raise NumericalError(
            f"eigenvalue {L} is {lam[-1]:.3e}, below the {LAMBDA_FLOOR} floor; "
            f"increase epsilon or decrease L"
        )
    u, v = _fix_signs(u.copy(), v.copy())
    return SpectralBasis(lam=lam, Phi=np.sqrt(n) * u, Gamma=v, kernel=kernel)


def _extension_weights(basis: SpectralBasis, y):
    """Shifted kernel weights (w, sum w); the common scale exp(-Dmin/eps) cancels."""
    y = np.asarray(y, dtype=float).ravel()
    pts = basis.kernel.embedding.points
    if y.shape[0] != pts.shape[1]:
        raise DataError(
            f"query dimension {y.shape[0]} does not match embedding dimension "
            f"{pts.shape[1]}"
        )
    diff = pts - y[None, :]
    d2 = np.einsum("ij,ij->i", diff, diff)
    w = np.exp(-(d2 - d2.min()) / basis.kernel.epsilon)
    return w, w.sum()


def nystrom_extend(basis: SpectralBasis, y, l: int) -> float:
    """Evaluate the continuous extension of eigenfunction l (1-based) at y.

    At stored data point n this reproduces ``Phi[n, l-1]``; elsewhere it is a
    kernel-weighted average, bounded by ``sqrt(N) * max|Gamma[:, l-1]/sqrt(q)|
    / sigma_l`` for every y.
    """
    if not (1 <= l <= basis.L):
        raise DataError(f"l={l} out of range 1..{basis.L}")
    w, total = _extension_weights(basis, y)
    c = basis.Gamma[:, l - 1] / np.sqrt(basis.kernel.q)
    return float(np.sqrt(basis.n) * (w @ c) / (total * basis.sigma[l - 1]))


def extension_bounds(basis: SpectralBasis) -> np.ndarray:
    """Computable sup-norm bound of each extended eigenfunction over all of space."""
    c = basis.Gamma / np.sqrt(basis.kernel.q)[:, None]
    return np.sqrt(basis.n) * np.abs(c).max(axis=0) / basis.sigma


def project(basis: SpectralBasis, f) -> np.ndarray:
    """Coefficients of f (N x m) on the basis under the empirical inner product."""
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != basis.n:
        raise DataError(f"f has {f.shape[0]} rows, basis has {basis.n}")
    return basis.Phi.T @ f / basis.n


def synthesize(basis: SpectralBasis, coeffs) -> np.ndarray:
    """Sum of basis columns weighted by coefficients; inverse of :func:`project`
    on span(Phi)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim == 1:
        coeffs = coeffs[:, None]
    if coeffs.shape[0] != basis.L:
        raise DataError(f"{coeffs.shape[0]} coefficient rows for L={basis.L}")
    return basis.Phi @ coeffs


def basis_cache_key(kernel: KernelSystem, L: int) -> str:
    """Content hash of (embedding, epsilon, L) identifying a cached basis."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(kernel.embedding.points).tobytes())
    h.update(np.int64(kernel.embedding.q).tobytes())
    h.update(np.float64(kernel.epsilon).tobytes())
    h.update(np.int64(L).tobytes())
    return h.hexdigest()


def save_basis_cache(basis: SpectralBasis, directory) -> Path:
    """Write the basis to ``<directory>/<content hash>.npz`` and return the path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / (basis_cache_key(basis.kernel, basis.L) + ".npz")
    write_npz(path, {"lam": basis.lam, "Phi": basis.Phi, "Gamma": basis.Gamma})
    return path


def load_basis_cache(directory, kernel: KernelSystem, L: int):
    """Return the cached basis for (embedding, epsilon, L), or None on a miss."""
    path = Path(directory) / (basis_cache_key(kernel, L) + ".npz")
    if not path.is_file():
        return None
    with np.load(path, allow_pickle=False) as data:
        return SpectralBasis(lam=data["lam"], Phi=data["Phi"],
                             Gamma=data["Gamma"], kernel=kernel)
