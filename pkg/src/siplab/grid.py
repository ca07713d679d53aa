"""Resource-grid indexing and orthogonal DFT pilot construction.

The time-frequency grid has S subcarriers and T OFDM symbols; a resource
element (RE) is one subcarrier of one symbol.  All flat RE indexing in this
package is column-major with the subcarrier index varying fastest,

    e = s + S * t,

so a length-E vector laid onto the grid fills frequency first.  The array
helpers :func:`flat_to_grid` / :func:`grid_to_flat` apply the same
convention to the trailing axes of numpy arrays and torch tensors alike.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "ResourceGridSpec",
    "PilotBook",
    "OrthogonalityReport",
    "re_index",
    "grid_index",
    "flat_to_grid",
    "grid_to_flat",
    "make_dft_pilots",
    "verify_orthogonality",
]


@dataclass(frozen=True)
class ResourceGridSpec:
    """OFDM grid dimensions: S subcarriers by T symbols."""

    S: int
    T: int

    def __post_init__(self):
        if self.S < 1 or self.T < 1:
            raise ValueError(f"grid dimensions must be >= 1, got S={self.S}, T={self.T}")

    @property
    def E(self) -> int:
        """Number of resource elements, S*T."""
        return self.S * self.T


def re_index(s: int, t: int, spec: ResourceGridSpec) -> int:
    """Map grid coordinates (subcarrier s, symbol t) to the flat RE index."""
    if not (0 <= s < spec.S):
        raise IndexError(f"subcarrier index {s} out of range [0, {spec.S})")
    if not (0 <= t < spec.T):
        raise IndexError(f"symbol index {t} out of range [0, {spec.T})")
    return s + spec.S * t


def grid_index(e: int, spec: ResourceGridSpec) -> tuple[int, int]:
    """Inverse of :func:`re_index`: flat RE index -> (subcarrier, symbol)."""
    if not (0 <= e < spec.E):
        raise IndexError(f"RE index {e} out of range [0, {spec.E})")
    return e % spec.S, e // spec.S


def flat_to_grid(arr, spec: ResourceGridSpec):
    """Unfold the trailing RE axis: (..., E) -> (..., S, T).

    Works on numpy arrays and torch tensors.  Element (..., s, t) of the
    result equals element (..., s + S*t) of the input.
    """
    if arr.shape[-1] != spec.E:
        raise ValueError(f"last axis has size {arr.shape[-1]}, expected E={spec.E}")
    lead = arr.shape[:-1]
    return arr.reshape(*lead, spec.T, spec.S).swapaxes(-1, -2)


def grid_to_flat(arr, spec: ResourceGridSpec):
    """Fold the trailing (S, T) axes back to the flat RE axis (..., E)."""
    if arr.shape[-2:] != (spec.S, spec.T):
        raise ValueError(f"trailing axes {arr.shape[-2:]} do not match (S, T)=({spec.S}, {spec.T})")
    lead = arr.shape[:-2]
    return arr.swapaxes(-1, -2).reshape(*lead, spec.E)


@dataclass(frozen=True)
class PilotBook:
    """Per-user pilot sequences, one unit-modulus row of length E per user."""

    phi: np.ndarray  # complex, (K, E)
    spec: ResourceGridSpec

    @property
    def K(self) -> int:
        return self.phi.shape[0]


def make_dft_pilots(K: int, spec: ResourceGridSpec) -> PilotBook:
    """Build K pilot rows from a DFT matrix: phi[k, e] = exp(-2j*pi*k*e/K).

    Rows are exactly orthogonal with squared norm E whenever K divides E;
    otherwise a warning is emitted and the residual cross-correlation can be
    inspected with :func:`verify_orthogonality`.
    """
    if K < 1:
        raise ValueError(f"user count must be >= 1, got {K}")
    if K > spec.E:
        raise ConfigurationError(
            f"cannot orthogonalize {K} users on {spec.E} REs (K must not exceed E)"
        )
    if spec.E % K != 0:
        warnings.warn(
            f"K={K} does not divide E={spec.E}; pilot rows are not exactly orthogonal",
            stacklevel=2,
        )
    k = np.arange(K)[:, None]
    e = np.arange(spec.E)[None, :]
    phi = np.exp(-2j * np.pi * (k * e % K) / K)
    return PilotBook(phi=phi, spec=spec)


@dataclass(frozen=True)
class OrthogonalityReport:
    max_diag_deviation: float  # max_k | phi_k^H phi_k - E |
    max_cross_correlation: float  # max_{k != k'} | phi_k^H phi_k' |
    passed: bool


def verify_orthogonality(book: PilotBook, tol: float = 1e-9) -> OrthogonalityReport:
    """Measure how far the pilot Gram matrix is from E times the identity."""
    E = book.spec.E
    gram = book.phi @ book.phi.conj().T
    diag_dev = float(np.max(np.abs(np.diag(gram) - E)))
    off = np.abs(gram - np.diag(np.diag(gram)))
    cross = float(np.max(off)) if book.K > 1 else 0.0
    return OrthogonalityReport(
        max_diag_deviation=diag_dev,
        max_cross_correlation=cross,
        passed=(diag_dev <= tol * E and cross <= tol * E),
    )
