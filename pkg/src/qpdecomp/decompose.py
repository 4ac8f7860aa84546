"""Fit the periodic component by harmonic least squares on the selected
frequencies, fit the chaotic residual in the eigenbasis, and run the
standalone reconstruction system.

Time convention: the periodic component is a function of physical time in
seconds, ``g_per(t) = Re sum_j (2 - delta_{j,1}) A[j] exp(i omega_j t)``.
Fitting solves the equivalent full-rank real regression on columns
``{1} + {cos(omega_j t), sin(omega_j t)}`` (the Nyquist bin, where the sine
column vanishes identically, gets a cosine column only) and maps the real
coefficients back to complex rows ``A_j = (a_j - i b_j) / 2``.  Row 0 (the
zero frequency) stays real.

The standalone model advances a k(q+1) shift register in embedding layout
(oldest block first): the next sample is ``g_per(t) + g_chaos(window)``
where the window is the register before the step, then the register shifts.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._npz import write_npz
from .errors import DataError, NumericalError
from .freqfilter import FrequencySelection, SelectionParams
from .kernel import gaussian_kernel
from .series import TimeSeries, delay_embed
from .spectral import SpectralBasis, extension_bounds, project

_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class PeriodicFit:
    """Harmonic regression result: complex coefficients, fit, and residual."""

    A: np.ndarray
    omegas: np.ndarray
    fitted: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True)
class QPModel:
    """Fitted quasiperiodic + chaotic model driving reconstruction."""

    selection: FrequencySelection
    A: np.ndarray
    E: np.ndarray
    basis: SpectralBasis
    dt: float
    q: int
    train_n: int

    def __post_init__(self):
        if self.selection.omegas[0] == 0.0 and abs(self.A[0].imag).max() > 1e-12:
            raise NumericalError("zero-frequency coefficient must be real")

    @property
    def k(self) -> int:
        return self.A.shape[1]

    @property
    def state_dim(self) -> int:
        return self.k * (self.q + 1)


def _design_columns(omegas, times, dt):
    """Real design columns for each frequency, with the owning frequency index."""
    cols, owners, kinds = [], [], []
    for j, om in enumerate(omegas):
        if om == 0.0:
            cols.append(np.ones_like(times))
            owners.append(j)
            kinds.append("const")
        elif abs(om * dt - np.pi) < 1e-9:
            cols.append(np.cos(om * times))
            owners.append(j)
            kinds.append("cos")
        else:
            cols.append(np.cos(om * times))
            owners.append(j)
            kinds.append("cos")
            cols.append(np.sin(om * times))
            owners.append(j)
            kinds.append("sin")
    return np.stack(cols, axis=1), owners, kinds


def _check_aliasing(omegas, dt):
    # two bins collide when their per-sample phases agree modulo 2*pi up to
    # the cos-reflection; the design is then rank deficient by construction
    rho = np.mod(np.asarray(omegas) * dt, 2.0 * np.pi)
    folded = np.minimum(rho, 2.0 * np.pi - rho)
    order = np.argsort(folded)
    close = np.where(np.diff(folded[order]) < 1e-12)[0]
    if len(close):
        a, b = order[close[0]], order[close[0] + 1]
        raise DataError(
            f"frequencies {omegas[a]:.6g} and {omegas[b]:.6g} rad/s alias to the "
            f"same sampled harmonic at dt={dt}; drop one of the colliding bins"
        )


def fit_periodic(Y, selection: FrequencySelection, dt: float,
                 times=None) -> PeriodicFit:
    """Least-squares trigonometric fit of Y on the selected frequencies.

    Parameters
    ----------
    Y : ndarray, shape (N, k)
        Data rows.
    selection : FrequencySelection
        Frequencies to fit; must be nonempty and alias-free at this dt.
    dt : float
        Sample step in seconds.
    times : ndarray, optional
        Row times in seconds; defaults to ``arange(N) * dt``.  Pass explicit
        times to anchor the fit on another clock (the pipeline anchors rows
        at their source-sample index).

    Raises
    ------
    NumericalError
        Rank-deficient design (duplicate or aliased bins), naming the bins.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[0]
    if selection.m < 1:
        raise DataError("selection is empty")
    if times is None:
        times = np.arange(n) * dt
    else:
        times = np.asarray(times, dtype=float)
        if times.shape != (n,):
            raise DataError("times must have one entry per row of Y")
    _check_aliasing(selection.omegas, dt)
    G, owners, kinds = _design_columns(selection.omegas, times, dt)
    if n < G.shape[1]:
        raise DataError(
            f"{n} rows cannot determine {G.shape[1]} harmonic coefficients "
            f"(need N >= 2m-1)"
        )
    # column-pivoted QR: both the rank gate and the solver
    Q, R, piv = scipy.linalg.qr(G, mode="economic", pivoting=True)
    col_norms = np.linalg.norm(G, axis=0)
    tol = _RANK_RTOL * col_norms.max()
    diag = np.abs(np.diagonal(R))
    if diag.min() < tol:
        bad = piv[int(np.argmin(diag))]
        raise NumericalError(
            f"rank-deficient harmonic design: column for frequency "
            f"{selection.omegas[owners[bad]]:.6g} rad/s ({kinds[bad]}) is "
            f"dependent; colliding or aliased bins in the selection"
        )
    z = Q.T @ Y
    coef = np.empty((G.shape[1], Y.shape[1]))
    coef[piv] = scipy.linalg.solve_triangular(R, z)
    fitted = G @ coef
    A = np.zeros((selection.m, Y.shape[1]), dtype=complex)
    row = 0
    while row < len(owners):
        j = owners[row]
        if kinds[row] == "const":
            A[j] = coef[row]
            row += 1
        elif row + 1 < len(owners) and owners[row + 1] == j:
            A[j] = (coef[row] - 1j * coef[row + 1]) / 2.0
            row += 2
        else:   # Nyquist: cosine only
            A[j] = coef[row] / 2.0
            row += 1
    return PeriodicFit(A=A, omegas=selection.omegas.copy(), fitted=fitted,
                       residual=Y - fitted)


def fit_chaotic(Y_non, basis: SpectralBasis) -> np.ndarray:
    """Coefficients of the residual on the eigenbasis (empirical inner product)."""
    Y_non = np.asarray(Y_non, dtype=float)
    if Y_non.ndim == 1:
        Y_non = Y_non[:, None]
    if Y_non.shape[0] != basis.n:
        raise DataError(f"residual has {Y_non.shape[0]} rows, basis has {basis.n}")
    return project(basis, Y_non)


def evaluate_harmonics(A, omegas, t):
    """Re sum_j (2 - delta_{j,1}) A[j] exp(i omega_j t) for scalar or vector t."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    weights = np.where(np.asarray(omegas) == 0.0, 1.0, 2.0)
    phases = np.exp(1j * t[:, None] * np.asarray(omegas)[None, :])
    out = (phases * weights[None, :]) @ A
    out = out.real
    return out[0] if scalar else out


def eval_periodic(model: QPModel, t):
    """Periodic component at time t seconds (scalar -> (k,), vector -> (n, k))."""
    return evaluate_harmonics(model.A, model.selection.omegas, t)


def _chaos_matrix(model: QPModel) -> np.ndarray:
    """(N, k) matrix M with g_chaos(y) = sqrt(N) * (w @ M) / sum(w)."""
    basis = model.basis
    c = basis.Gamma / np.sqrt(basis.kernel.q)[:, None]
    return (c / basis.sigma[None, :]) @ model.E


def _chaos_eval(points, epsilon, M, sqrt_n, y):
    diff = points - y[None, :]
    d2 = np.einsum("ij,ij->i", diff, diff)
    w = np.exp(-(d2 - d2.min()) / epsilon)
    return sqrt_n * (w @ M) / w.sum()


def eval_chaotic(model: QPModel, y_delay) -> np.ndarray:
    """Chaotic component at a delay-coordinate point (embedding layout)."""
    y = np.asarray(y_delay, dtype=float).ravel()
    pts = model.basis.kernel.embedding.points
    if y.shape[0] != pts.shape[1]:
        raise DataError(
            f"state dimension {y.shape[0]} does not match embedding dimension "
            f"{pts.shape[1]}"
        )
    return _chaos_eval(pts, model.basis.kernel.epsilon, _chaos_matrix(model),
                       np.sqrt(model.basis.n), y)


def periodic_sup_bound(model: QPModel) -> float:
    """sup_t |g_per(t)|_2 <= sum_j (2 - delta_{j,1}) |A[j, :]|_2 (triangle inequality)."""
    weights = np.where(model.selection.omegas == 0.0, 1.0, 2.0)
    return float((weights * np.linalg.norm(model.A, axis=1)).sum())


def chaotic_sup_bound(model: QPModel) -> float:
    """sup_y |g_chaos(y)|_2 <= sum_l |E[l, :]|_2 * sup|ext_l| (finite by kernel decay)."""
    sup_ext = extension_bounds(model.basis)
    return float((np.linalg.norm(model.E, axis=1) * sup_ext).sum())


def state_before(series: TimeSeries, index: int, q: int) -> np.ndarray:
    """Delay state (embedding layout) of the q+1 samples ending at index-1.

    This is the initial condition for generating sample ``index`` onward.
    """
    if index - (q + 1) < 0 or index > series.n:
        raise DataError(
            f"cannot take a {q + 1}-sample window ending before index {index}"
        )
    return series.values[index - (q + 1):index].ravel().copy()


def reconstruct(model: QPModel, init, n_steps: int, t_start: float,
                clip_factor: float = None) -> TimeSeries:
    """Free-run the standalone model.

    Starting from ``init`` (the k(q+1) delay window preceding the first
    generated sample, embedding layout, oldest block first), generates
    samples at times ``t_start + n*dt`` for n = 0..n_steps-1: each new sample
    is ``g_per(time) + g_chaos(previous window)``, after which the window
    shifts by one sample.  Deterministic: identical model and init give
    bit-identical trajectories.

    Parameters
    ----------
    clip_factor : float, optional
        Off by default (open-loop behaviour).  When set, the generated
        sample norm is capped at ``clip_factor`` times the largest training
        sample norm, as a divergence diagnostic.
    """
    if n_steps < 1:
        raise DataError(f"n_steps must be >= 1, got {n_steps}")
    state = np.asarray(init, dtype=float).ravel().copy()
    if state.shape[0] != model.state_dim:
        raise DataError(
            f"init has dimension {state.shape[0]}, model state is "
            f"{model.state_dim}"
        )
    k = model.k
    pts = model.basis.kernel.embedding.points
    eps = model.basis.kernel.epsilon
    M = _chaos_matrix(model)
    sqrt_n = np.sqrt(model.basis.n)
    cap = None
    if clip_factor is not None:
        train_norms = np.linalg.norm(model.basis.kernel.embedding.source.values,
                                     axis=1)
        cap = clip_factor * train_norms.max()
    out = np.empty((n_steps, k))
    for i in range(n_steps):
        y_new = (evaluate_harmonics(model.A, model.selection.omegas,
                                    t_start + i * model.dt)
                 + _chaos_eval(pts, eps, M, sqrt_n, state))
        if not np.isfinite(y_new).all():
            raise NumericalError(f"reconstruction diverged at step {i}")
        if cap is not None:
            norm = np.linalg.norm(y_new)
            if norm > cap:
                y_new = y_new * (cap / norm)
        out[i] = y_new
        state = np.concatenate([state[k:], y_new])
    names = model.basis.kernel.embedding.source.channel_names
    return TimeSeries(out, dt=model.dt, t0=float(t_start), channel_names=names)


def relative_error(truth: TimeSeries, estimate: TimeSeries) -> np.ndarray:
    """Entry-wise |truth - estimate| / max_n |truth| per channel."""
    if truth.values.shape != estimate.values.shape:
        raise DataError(
            f"shape mismatch: {truth.values.shape} vs {estimate.values.shape}"
        )
    if truth.dt != estimate.dt:
        raise DataError(f"dt mismatch: {truth.dt} vs {estimate.dt}")
    denom = np.abs(truth.values).max(axis=0)
    zero = np.where(denom == 0)[0]
    if len(zero):
        names = [truth.channel_names[i] for i in zero]
        raise DataError(f"all-zero truth channels {names}: error is undefined")
    return np.abs(truth.values - estimate.values) / denom[None, :]


def moving_average(x, window: int) -> np.ndarray:
    """Trailing mean over min(window, n+1) samples; the warm-up uses the prefix."""
    if window < 1:
        raise DataError(f"window must be >= 1, got {window}")
    x = np.asarray(x, dtype=float)
    if window == 1:
        return x.copy()
    csum = np.cumsum(x)
    out = np.empty_like(x)
    w = min(window, len(x))
    out[:w] = csum[:w] / np.arange(1, w + 1)
    if len(x) > w:
        out[w:] = (csum[w:] - csum[:-w]) / w
    return out


# ---------------------------------------------------------------------------
# model serialization: one self-describing binary file (deterministic npz)

def training_data_hash(series: TimeSeries) -> str:
    import hashlib
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(series.values).tobytes())
    h.update(np.float64(series.dt).tobytes())
    return h.hexdigest()


def save_model(model: QPModel, path):
    """Serialize everything needed to evaluate and free-run the model.

    Stores the training window, kernel and truncation parameters, the
    spectral triplets, the frequency selection, both coefficient blocks, and
    a content hash of the training data.  The heavy kernel matrices are
    recomputed on load.
    """
    src = model.basis.kernel.embedding.source
    sel = model.selection
    write_npz(path, {
        "format": np.array(["qpdecomp-model-1"]),
        "train_values": src.values,
        "train_dt": np.float64(src.dt),
        "train_t0": np.float64(src.t0),
        "channel_names": np.array(list(src.channel_names)),
        "train_hash": np.array([training_data_hash(src)]),
        "q": np.int64(model.q),
        "epsilon": np.float64(model.basis.kernel.epsilon),
        "lam": model.basis.lam,
        "Phi": model.basis.Phi,
        "Gamma": model.basis.Gamma,
        "sel_indices": sel.indices,
        "sel_omegas": sel.omegas,
        "sel_amplitudes": sel.amplitudes,
        "sel_params": np.array([sel.params.eps1, sel.params.eps2,
                                float(sel.params.L0), float(sel.params.L)]),
        "A": model.A,
        "E": model.E,
        "dt": np.float64(model.dt),
        "train_n": np.int64(model.train_n),
    })


def load_model(path) -> QPModel:
    """Rebuild a model saved by :func:`save_model` (kernel matrices recomputed)."""
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["format"][0])
        if fmt != "qpdecomp-model-1":
            raise DataError(f"{path}: unknown model format {fmt!r}")
        src = TimeSeries(data["train_values"], dt=float(data["train_dt"]),
                         t0=float(data["train_t0"]),
                         channel_names=tuple(str(c) for c in data["channel_names"]))
        stored_hash = str(data["train_hash"][0])
        if training_data_hash(src) != stored_hash:
            raise DataError(f"{path}: training data does not match its stored hash")
        q = int(data["q"])
        emb = delay_embed(src, q)
        ks = gaussian_kernel(emb, float(data["epsilon"]),
                             max_points=emb.n_points)
        basis = SpectralBasis(lam=data["lam"], Phi=data["Phi"],
                              Gamma=data["Gamma"], kernel=ks)
        p = data["sel_params"]
        omegas = data["sel_omegas"]
        with np.errstate(divide="ignore"):
            periods = np.where(omegas > 0,
                               2.0 * np.pi / np.where(omegas > 0, omegas, 1.0),
                               np.inf)
        sel = FrequencySelection(
            indices=data["sel_indices"],
            omegas=omegas,
            periods=periods,
            amplitudes=data["sel_amplitudes"],
            params=SelectionParams(float(p[0]), float(p[1]), int(p[2]), int(p[3])),
        )
        return QPModel(selection=sel, A=data["A"], E=data["E"], basis=basis,
                       dt=float(data["dt"]), q=q, train_n=int(data["train_n"]))
