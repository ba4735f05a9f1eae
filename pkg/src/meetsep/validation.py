"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import numpy as np

from .spectral import DirectionalObservations, normalize_observations


def check_observations(X) -> DirectionalObservations:
    """Coerce ``X`` into unit-norm directional observations.

    Accepts a complex ``[T, F, M]`` array (normalized internally; a no-op up
    to rounding when already unit norm) or ready-made
    :class:`~meetsep.spectral.DirectionalObservations`.
    """
    if isinstance(X, DirectionalObservations):
        return X
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError(f"observations must be [T, F, M], got shape {X.shape}")
    if not np.iscomplexobj(X):
        X = X.astype(np.complex128)
    return normalize_observations(X)


def check_priors(priors, num_classes: int | None = None, tol: float = 1e-6) -> np.ndarray:
    """Validate a [T, K] prior matrix: entries in [0, 1], rows summing to 1."""
    priors = np.asarray(priors, dtype=np.float64)
    if priors.ndim != 2:
        raise ValueError(f"priors must be [T, K], got shape {priors.shape}")
    if num_classes is not None and priors.shape[1] != num_classes:
        raise ValueError(
            f"priors have {priors.shape[1]} classes, expected {num_classes}"
        )
    if priors.min() < -tol or priors.max() > 1 + tol:
        raise ValueError("prior entries must lie in [0, 1]")
    if not np.allclose(priors.sum(axis=1), 1.0, atol=tol):
        raise ValueError("prior rows must sum to 1")
    return priors


def check_posteriors(
    gamma, num_classes: int | None = None, tol: float = 1e-6
) -> np.ndarray:
    """Validate a [T, F, K] posterior tensor: rows over classes sum to 1."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim != 3:
        raise ValueError(f"posteriors must be [T, F, K], got shape {gamma.shape}")
    if num_classes is not None and gamma.shape[2] != num_classes:
        raise ValueError(
            f"posteriors have {gamma.shape[2]} classes, expected {num_classes}"
        )
    if gamma.min() < -tol or gamma.max() > 1 + tol:
        raise ValueError("posterior entries must lie in [0, 1]")
    if not np.allclose(gamma.sum(axis=2), 1.0, atol=tol):
        raise ValueError("posterior rows must sum to 1")
    return gamma


def check_hermitian(B, tol: float = 1e-8) -> np.ndarray:
    """Validate [..., M, M] Hermitian matrices."""
    B = np.asarray(B)
    if B.ndim < 2 or B.shape[-1] != B.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {B.shape}")
    herm_err = np.max(np.abs(B - np.conj(B.swapaxes(-2, -1)))) if B.size else 0.0
    if herm_err > tol:
        raise ValueError(f"matrices deviate from Hermitian by {herm_err:.2e}")
    return B


def check_odd_window(window: int, name: str = "window") -> int:
    window = int(window)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"{name} must be odd and >= 1, got {window}")
    return window
