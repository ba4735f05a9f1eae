"""Complex angular central Gaussian mixture model with time-varying priors.

The model describes unit-norm observation vectors ``z`` of an ``M``-channel
array.  Each class ``k`` owns one Hermitian parameter matrix per frequency,
``B[f, k]``, and the mixture weights ``pi[t, k]`` vary over time but are
shared across frequencies, so they track speaker activity.

Shapes:

* ``z``      [T, F, M]   complex, unit norm over the last axis
* ``priors`` [T, K]      real, rows sum to 1
* ``B``      [F, K, M, M] complex Hermitian, trace normalized to M
* ``gamma``  [T, F, K]   real, rows over classes sum to 1

All densities are evaluated in the log domain; the class-conditional density
of a unit vector is

    log A(z; B) = log (M-1)! - M log pi - log 2 - log det B - M log(z^H B^-1 z)

which is scale invariant in ``B``; the trace normalization only pins the
numerical scale.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings

import numpy as np
from sklearn.base import BaseEstimator

from .permutation import align_frequencies, apply_permutation
from .validation import check_observations, check_posteriors, check_priors

_FRAME_CHUNK = 256


class SingularParameterError(np.linalg.LinAlgError):
    """A parameter matrix is singular beyond the regularization floor."""

    def __init__(self, frequency, klass):
        self.frequency = frequency
        self.klass = klass
        super().__init__(
            f"parameter matrix at frequency {frequency}, class {klass} is singular"
        )


class EMDivergenceError(RuntimeError):
    """NaN/Inf appeared during EM."""

    def __init__(self, iteration, quantity):
        self.iteration = iteration
        self.quantity = quantity
        super().__init__(
            f"non-finite values in {quantity} at EM iteration {iteration}"
        )


@dataclasses.dataclass(frozen=True)
class MixtureState:
    """Fitted model state: priors [T, K], parameters [F, K, M, M], posteriors [T, F, K]."""

    priors: np.ndarray
    parameters: np.ndarray
    posteriors: np.ndarray
    log_likelihood_trace: tuple[float, ...] = ()

    @property
    def num_classes(self) -> int:
        return self.priors.shape[1]

    @property
    def num_frames(self) -> int:
        return self.priors.shape[0]

    @property
    def num_bins(self) -> int:
        return self.parameters.shape[0]


def log_normalizer(num_channels: int) -> float:
    """Log of the constant factor (M-1)! / (2 pi^M)."""
    return (
        math.lgamma(num_channels)
        - num_channels * math.log(math.pi)
        - math.log(2.0)
    )


def _hermitian_inv_logdet(B):
    """Batched inverse and log-determinant of Hermitian positive definite matrices.

    Raises :class:`SingularParameterError` with the offending index when a
    Cholesky factorization fails.
    """
    B = np.asarray(B)
    try:
        chol = np.linalg.cholesky(B)
    except np.linalg.LinAlgError:
        flat = B.reshape(-1, B.shape[-2], B.shape[-1])
        for idx in range(flat.shape[0]):
            try:
                np.linalg.cholesky(flat[idx])
            except np.linalg.LinAlgError:
                f, k = np.unravel_index(idx, B.shape[:-2]) if B.ndim == 4 else (idx, 0)
                raise SingularParameterError(f, k) from None
        raise
    diag = np.abs(np.diagonal(chol, axis1=-2, axis2=-1))
    logdet = 2.0 * np.log(diag).sum(axis=-1)
    return np.linalg.inv(B), logdet


def cacg_log_pdf(z: np.ndarray, B: np.ndarray) -> float:
    """Log density of a single unit-norm complex vector under one cACG."""
    z = np.asarray(z).reshape(-1)
    B = np.asarray(B)
    m = z.shape[0]
    if B.shape != (m, m):
        raise ValueError(f"B must be [{m}, {m}], got {B.shape}")
    norm = np.linalg.norm(z)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"z must be unit norm, got ||z|| = {norm}")
    B_inv, logdet = _hermitian_inv_logdet(B[None, None])
    quad = np.real(z.conj() @ B_inv[0, 0] @ z)
    return float(log_normalizer(m) - logdet[0, 0] - m * np.log(quad))


def _quadratic_forms(z, B_inv):
    """z^H B^-1 z for every (t, f, k), computed in frame chunks.

    ``z`` is [T, F, M]; ``B_inv`` is [F, K, M, M].  Returns [T, F, K] real.
    """
    T, F, M = z.shape
    K = B_inv.shape[1]
    out = np.empty((T, F, K), dtype=z.real.dtype)
    for t0 in range(0, T, _FRAME_CHUNK):
        zc = z[t0 : t0 + _FRAME_CHUNK]
        u = np.einsum("fkmn,tfn->tfkm", B_inv, zc, optimize=True)
        out[t0 : t0 + zc.shape[0]] = np.einsum(
            "tfm,tfkm->tfk", zc.conj(), u, optimize=True
        ).real
    return out


def _posterior_from_quad(priors, logdet, quad, num_channels, zero_mask):
    """Normalized posteriors plus the per-bin log-sum-exp normalizer."""
    with np.errstate(divide="ignore"):
        log_num = np.log(priors)[:, None, :] - logdet[None, :, :]
    log_num -= num_channels * np.log(quad)
    peak = np.max(log_num, axis=-1, keepdims=True)
    finite = np.isfinite(peak)
    shifted = np.where(finite, log_num - peak, -np.inf)
    sum_exp = np.exp(shifted).sum(axis=-1, keepdims=True)
    log_norm = np.where(finite, peak + np.log(sum_exp), -np.inf)

    gamma = np.exp(log_num - np.where(finite, log_norm, 0.0))
    K = priors.shape[1]
    underflow = ~finite[..., 0]
    if zero_mask is not None:
        underflow = underflow & ~zero_mask
    n_underflow = int(underflow.sum())
    if n_underflow:
        gamma[underflow] = 1.0 / K
    if zero_mask is not None and zero_mask.any():
        gamma[zero_mask] = 1.0 / K
    return gamma, log_norm[..., 0], n_underflow


def e_step(
    z,
    priors,
    parameters,
    zero_mask=None,
    return_aux: bool = False,
):
    """Posterior update: gamma[t,f,k] ~ pi[t,k] det(B)^-1 (z^H B^-1 z)^-M.

    Masked bins and bins where every class underflows receive uniform
    posteriors; the underflow count is reported via a warning.

    With ``return_aux=True`` also returns a dict with the quadratic forms
    ``quad``, log determinants ``logdet`` and per-bin log normalizers
    ``log_norm`` for reuse by the M-step and likelihood evaluation.
    """
    z = np.asarray(z)
    T, F, M = z.shape
    B_inv, logdet = _hermitian_inv_logdet(parameters)
    quad = _quadratic_forms(z, B_inv)
    np.maximum(quad, np.finfo(quad.dtype).tiny, out=quad)
    gamma, log_norm, n_underflow = _posterior_from_quad(
        priors, logdet, quad, M, zero_mask
    )
    if n_underflow:
        warnings.warn(
            f"uniform posterior fallback at {n_underflow} underflowed bins",
            RuntimeWarning,
        )
    if return_aux:
        return gamma, {"quad": quad, "logdet": logdet, "log_norm": log_norm}
    return gamma


def m_step_priors(gamma, zero_mask=None):
    """Prior update: frequency average of the posteriors per frame."""
    gamma = np.asarray(gamma)
    if zero_mask is None or not zero_mask.any():
        return gamma.mean(axis=1)
    valid = (~zero_mask).astype(gamma.dtype)
    counts = valid.sum(axis=1)
    priors = np.einsum("tfk,tf->tk", gamma, valid)
    silent = counts == 0
    counts = np.where(silent, 1.0, counts)
    priors /= counts[:, None]
    if silent.any():
        priors[silent] = 1.0 / gamma.shape[2]
    return priors


def _regularize(B, eigenvalue_floor):
    """Hermitian symmetrization, eigenvalue flooring and trace normalization."""
    M = B.shape[-1]
    B = 0.5 * (B + np.conj(B.swapaxes(-2, -1)))
    vals, vecs = np.linalg.eigh(B)
    lam_max = vals[..., -1]
    degenerate = lam_max <= 0.0
    if degenerate.any():
        B = B.copy()
        B[degenerate] = np.eye(M, dtype=B.dtype)
        vals = np.where(degenerate[..., None], 1.0, vals)
        lam_max = np.where(degenerate, 1.0, lam_max)
        vecs = np.where(degenerate[..., None, None], np.eye(M, dtype=B.dtype), vecs)
    vals = np.maximum(vals, eigenvalue_floor * lam_max[..., None])
    B = np.einsum("...mi,...i,...ni->...mn", vecs, vals, vecs.conj(), optimize=True)
    trace = np.real(np.trace(B, axis1=-2, axis2=-1))
    return B * (M / trace)[..., None, None]


def m_step_parameters(
    z,
    gamma,
    B_prev,
    zero_mask=None,
    quad=None,
    eigenvalue_floor: float = 1e-10,
):
    """Parameter update, a single fixed-point step per EM iteration:

        B[f,k] = M / sum_t gamma * sum_t gamma * z z^H / (z^H B_prev^-1 z)

    followed by Hermitian symmetrization, eigenvalue flooring at
    ``eigenvalue_floor * lambda_max`` and trace normalization to M.
    Classes with zero responsibility mass at a frequency keep their previous
    parameter (reported via a warning).
    """
    z = np.asarray(z)
    gamma = np.asarray(gamma)
    T, F, M = z.shape
    K = gamma.shape[2]
    if quad is None:
        B_inv, _ = _hermitian_inv_logdet(B_prev)
        quad = _quadratic_forms(z, B_inv)
        np.maximum(quad, np.finfo(quad.dtype).tiny, out=quad)

    if zero_mask is not None and zero_mask.any():
        gamma = np.where(zero_mask[..., None], 0.0, gamma)
    denom = gamma.sum(axis=0)  # [F, K]

    num = np.zeros((F, K, M, M), dtype=np.result_type(z, np.complex64))
    for t0 in range(0, T, _FRAME_CHUNK):
        sl = slice(t0, t0 + _FRAME_CHUNK)
        w = gamma[sl] / quad[sl]
        num += np.einsum(
            "tfk,tfm,tfn->fkmn", w, z[sl], z[sl].conj(), optimize=True
        )

    starved = denom <= 0.0
    safe = np.where(starved, 1.0, denom)
    B = M * num / safe[..., None, None]
    if starved.any():
        warnings.warn(
            f"froze {int(starved.sum())} parameter matrices with zero "
            "responsibility mass",
            RuntimeWarning,
        )
        B[starved] = B_prev[starved]
    return _regularize(B, eigenvalue_floor)


def log_likelihood(z, priors, parameters, zero_mask=None, aux=None):
    """Total log likelihood of the observations under the mixture.

    Masked (zero norm) bins are excluded.  ``aux`` may carry the output of
    :func:`e_step` to avoid recomputation.
    """
    z = np.asarray(z)
    M = z.shape[-1]
    if aux is None:
        _, aux = e_step(z, priors, parameters, zero_mask, return_aux=True)
    log_norm = aux["log_norm"]
    if zero_mask is not None and zero_mask.any():
        total = log_norm[~zero_mask].sum()
        count = int((~zero_mask).sum())
    else:
        total = log_norm.sum()
        count = log_norm.size
    return float(total + count * log_normalizer(M))


def _as_initial_posteriors(init, T, F, num_classes):
    init = np.asarray(init, dtype=np.float64)
    if init.ndim == 2:
        check_priors(init, num_classes)
        if init.shape[0] != T:
            raise ValueError(f"init has {init.shape[0]} frames, expected {T}")
        return np.broadcast_to(init[:, None, :], (T, F, num_classes))
    check_posteriors(init, num_classes)
    if init.shape[:2] != (T, F):
        raise ValueError(
            f"init shape {init.shape[:2]} does not match observations {(T, F)}"
        )
    return init


class CACGMM(BaseEstimator):
    """Spatial mixture model estimator over directional STFT observations.

    Parameters
    ----------
    n_classes : int
        Number of mixture classes (speakers plus one noise class).
    n_iterations : int
        EM iterations; each runs one M-step, one E-step and, when enabled,
        one frequency permutation alignment.
    permutation_solver : bool
        Align class indices across frequencies after every EM step.
    eigenvalue_floor : float
        Relative floor on parameter matrix eigenvalues.
    monotonic_tolerance : float
        Relative log-likelihood decrease treated as numerical noise when
        checking the recorded trace.
    random_state : int or None
        Seed for the default (frequency-tied Dirichlet) initialization.

    Attributes
    ----------
    priors_, parameters_, posteriors_ : fitted model state
    log_likelihood_trace_ : list of per-iteration log likelihoods
    n_classes_ : class count after fitting (hooks may fuse classes)
    underflow_count_ : posterior underflow events across all E-steps
    """

    def __init__(
        self,
        n_classes: int = 2,
        n_iterations: int = 100,
        permutation_solver: bool = True,
        eigenvalue_floor: float = 1e-10,
        monotonic_tolerance: float = 1e-6,
        random_state: int | None = None,
    ):
        self.n_classes = n_classes
        self.n_iterations = n_iterations
        self.permutation_solver = permutation_solver
        self.eigenvalue_floor = eigenvalue_floor
        self.monotonic_tolerance = monotonic_tolerance
        self.random_state = random_state

    def fit(self, X, y=None, *, initialization=None, hooks=None):
        """Run EM on observations ``X`` ([T, F, M] complex or DirectionalObservations).

        ``initialization`` is either a [T, K] prior matrix (frequency tied) or
        a [T, F, K] posterior tensor; by default posteriors are drawn from a
        frequency-tied flat Dirichlet.  The first half-step is an M-step from
        the initial posteriors with identity parameter matrices.

        ``hooks`` maps 1-based iteration indices to callables
        ``state -> MixtureState``, applied after the indexed iteration; they
        may change the number of classes (class fusion).
        """
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        obs = check_observations(X)
        z = obs.data
        zero_mask = obs.zero_norm_mask if obs.zero_norm_mask.any() else None
        T, F, M = z.shape
        K = self.n_classes

        if initialization is None:
            rng = np.random.default_rng(self.random_state)
            initialization = rng.dirichlet(np.ones(K), size=T)
        gamma = _as_initial_posteriors(initialization, T, F, K)

        B = np.broadcast_to(
            np.eye(M, dtype=complex), (F, K, M, M)
        ).copy()
        hooks = hooks or {}
        trace: list[float] = []
        self.underflow_count_ = 0
        quad = None

        for it in range(1, self.n_iterations + 1):
            priors = m_step_priors(gamma, zero_mask)
            B = m_step_parameters(
                z, gamma, B, zero_mask, quad=quad,
                eigenvalue_floor=self.eigenvalue_floor,
            )
            if not np.all(np.isfinite(B)):
                raise EMDivergenceError(it, "parameters")
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                gamma, aux = e_step(z, priors, B, zero_mask, return_aux=True)
            for w in caught:
                if issubclass(w.category, RuntimeWarning) and "underflow" in str(w.message):
                    self.underflow_count_ += 1
            quad = aux["quad"]
            ll = log_likelihood(z, priors, B, zero_mask, aux=aux)
            if not math.isfinite(ll):
                raise EMDivergenceError(it, "log_likelihood")
            trace.append(ll)

            if self.permutation_solver and F > 1 and gamma.shape[2] > 1:
                gamma, perm = align_frequencies(gamma)
                B = apply_permutation(B, perm, axis=1)
                quad = apply_permutation(quad, perm, axis=2)

            if it in hooks:
                state = MixtureState(
                    priors=priors,
                    parameters=B,
                    posteriors=gamma,
                    log_likelihood_trace=tuple(trace),
                )
                state = hooks[it](state)
                priors, B, gamma = state.priors, state.parameters, state.posteriors
                quad = None

        self.priors_ = priors
        self.parameters_ = B
        self.posteriors_ = gamma
        self.log_likelihood_trace_ = trace
        self.n_classes_ = gamma.shape[2]
        self.zero_norm_mask_ = obs.zero_norm_mask
        return self

    @property
    def state_(self) -> MixtureState:
        return MixtureState(
            priors=self.priors_,
            parameters=self.parameters_,
            posteriors=self.posteriors_,
            log_likelihood_trace=tuple(self.log_likelihood_trace_),
        )

    def predict_proba(self, X):
        """Posterior class probabilities for observations under the fitted model."""
        obs = check_observations(X)
        mask = obs.zero_norm_mask if obs.zero_norm_mask.any() else None
        return e_step(obs.data, self.priors_, self.parameters_, mask)

    def predict(self, X):
        """Hard class assignment per time-frequency bin."""
        return np.argmax(self.predict_proba(X), axis=-1)

    def score(self, X, y=None):
        """Mean per-bin log likelihood under the fitted model."""
        obs = check_observations(X)
        mask = obs.zero_norm_mask if obs.zero_norm_mask.any() else None
        total = log_likelihood(obs.data, self.priors_, self.parameters_, mask)
        count = int((~obs.zero_norm_mask).sum())
        return total / max(count, 1)


def save_state(path, state: MixtureState, **metadata) -> None:
    """Serialize a MixtureState to an ``.npz`` with a JSON metadata record."""
    meta = dict(metadata)
    meta["log_likelihood_trace"] = list(state.log_likelihood_trace)
    np.savez_compressed(
        path,
        priors=state.priors,
        parameters=state.parameters,
        posteriors=state.posteriors,
        meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
    )


def load_state(path) -> tuple[MixtureState, dict]:
    """Inverse of :func:`save_state`; returns the state and its metadata."""
    with np.load(path) as archive:
        meta = json.loads(archive["meta"].tobytes().decode())
        trace = tuple(meta.pop("log_likelihood_trace", ()))
        state = MixtureState(
            priors=archive["priors"],
            parameters=archive["parameters"],
            posteriors=archive["posteriors"],
            log_likelihood_trace=trace,
        )
    return state, meta
