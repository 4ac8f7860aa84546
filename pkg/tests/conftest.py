import numpy as np
import pytest

from qpdecomp import TimeSeries, delay_embed, gaussian_kernel
from qpdecomp.kernel import sqdist_quantile
from qpdecomp.spectral import decompose


def torus_series(n, omegas, theta0=None, mix_seed=1, n_channels=2, dt=1.0):
    """Multichannel observation of a rigid torus rotation (no chaos)."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    if theta0 is None:
        theta0 = np.linspace(0.4, 1.9, len(omegas))
    t = np.arange(n)[:, None] * dt
    theta = theta0[None, :] + t * omegas[None, :]
    lift = np.hstack([np.stack([np.cos(theta[:, j]), np.sin(theta[:, j])], 1)
                      for j in range(len(omegas))])
    mix = np.random.default_rng(mix_seed).standard_normal((lift.shape[1], n_channels))
    return TimeSeries(lift @ mix, dt=dt)


def blob_series(n, dim, seed=0):
    """Unstructured point cloud wrapped as a q=0 series."""
    return TimeSeries(np.random.default_rng(seed).standard_normal((n, dim)), dt=1.0)


@pytest.fixture(scope="session")
def blob_basis():
    """Well-conditioned small kernel basis on random data (L = N/2)."""
    emb = delay_embed(blob_series(120, 5, seed=2), 0)
    eps = 0.3 * sqdist_quantile(emb, 0.5)
    ks = gaussian_kernel(emb, eps)
    return decompose(ks, 60, solver="dense")


@pytest.fixture(scope="session")
def full_blob_basis():
    """Complete basis (L = N) on random data, small epsilon keeps it conditioned."""
    emb = delay_embed(blob_series(80, 5, seed=3), 0)
    eps = 0.1 * sqdist_quantile(emb, 0.5)
    ks = gaussian_kernel(emb, eps)
    return decompose(ks, 80, solver="dense")


@pytest.fixture(scope="session")
def torus_basis():
    """Basis over a 2-torus observation whose driver frequencies sit on exact
    DFT bins (34, 55) of the 512-row eigenfunction grid."""
    s = torus_series(516, [2 * np.pi * 34 / 512, 2 * np.pi * 55 / 512],
                     mix_seed=7, n_channels=3)
    emb = delay_embed(s, 4)
    eps = 0.02 * sqdist_quantile(emb, 0.5)
    ks = gaussian_kernel(emb, eps)
    return decompose(ks, 40, solver="dense")
