"""Pilot-data power control, QAM data generation, superimposition, TP frames.

The superimposed transmit signal per user and RE is

    s = sqrt(P * rho) * phi + sqrt(P * (1 - rho)) * d,

with the power split rho produced elementwise by a sigmoid of unconstrained
weights so it stays inside (0, 1) and stays differentiable.  The chain
operations (:func:`superimpose`, :func:`transmit`) act on torch tensors so
gradients can flow end to end; QAM construction is plain numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError
from .grid import ResourceGridSpec

__all__ = [
    "QamConstellation",
    "TpFrame",
    "pdp_from_weights",
    "qam_constellation",
    "modulate_qam",
    "superimpose",
    "transmit",
    "make_tp_pilots",
    "build_tp_frame",
]

TP_PILOT_SYMBOLS = (2, 11)  # 0-based OFDM symbol indices reserved for pilots


def pdp_from_weights(w):
    """Elementwise sigmoid mapping unconstrained weights to PDP factors in (0, 1)."""
    if torch.is_tensor(w):
        return torch.sigmoid(w)
    return 1.0 / (1.0 + np.exp(-np.asarray(w, dtype=float)))


# ---------------------------------------------------------------------------
# QAM


def _gray_to_index(g: np.ndarray) -> np.ndarray:
    """Invert the binary-reflected Gray code g = i ^ (i >> 1)."""
    i = g.copy()
    shift = 1
    while np.any(g >> shift):
        i ^= g >> shift
        shift += 1
    return i


@dataclass(frozen=True)
class QamConstellation:
    """Square Gray-mapped QAM with unit average symbol energy."""

    order: int
    points: np.ndarray  # complex, (order,), indexed by bit label value
    bit_labels: np.ndarray  # uint8, (order, bits_per_symbol)

    @property
    def bits_per_symbol(self) -> int:
        return self.bit_labels.shape[1]

    @property
    def min_distance(self) -> float:
        return float(2.0 / np.sqrt(2.0 * (self.order - 1) / 3.0))


def qam_constellation(order: int = 16) -> QamConstellation:
    """Build the constellation table for order in {4, 16, 64}.

    points[v] is the symbol whose Gray bit label is the binary expansion of
    v (first half of the bits selects the I level, second half the Q level),
    so neighbouring points along either axis differ in exactly one bit.
    """
    if order not in (4, 16, 64):
        raise ValueError(f"unsupported QAM order {order}, expected one of 4, 16, 64")
    m = int(np.log2(order))
    n = m // 2  # bits per axis
    labels = np.arange(order)
    gray_i = labels >> n
    gray_q = labels & ((1 << n) - 1)
    levels = 2 * _gray_to_index(np.arange(1 << n)) - ((1 << n) - 1)
    scale = np.sqrt(2.0 * (order - 1) / 3.0)
    points = (levels[_gray_to_index(gray_i)] + 1j * levels[_gray_to_index(gray_q)]) / scale
    bits = ((labels[:, None] >> np.arange(m - 1, -1, -1)[None, :]) & 1).astype(np.uint8)
    return QamConstellation(order=order, points=points, bit_labels=bits)


def modulate_qam(source, order: int = 16, size=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw or map data symbols; returns (symbols, integer bit labels).

    ``source`` is either a numpy Generator (labels drawn uniformly, ``size``
    required) or an array of bits whose length is a multiple of the bits per
    symbol.
    """
    con = qam_constellation(order)
    m = con.bits_per_symbol
    if isinstance(source, np.random.Generator):
        if size is None:
            raise ValueError("size is required when drawing random symbols")
        labels = source.integers(0, order, size=size)
    else:
        bits = np.asarray(source).astype(np.uint8).ravel()
        if bits.size % m != 0:
            raise ValueError(f"bit stream length {bits.size} is not a multiple of {m}")
        weights = 1 << np.arange(m - 1, -1, -1)
        labels = bits.reshape(-1, m) @ weights
        if size is not None:
            labels = labels.reshape(size)
    return con.points[labels], labels


# ---------------------------------------------------------------------------
# Superimposition and the uplink channel


def _check_rho(rho) -> None:
    lo = rho.min() if torch.is_tensor(rho) else np.min(rho)
    hi = rho.max() if torch.is_tensor(rho) else np.max(rho)
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"PDP factors must lie in [0, 1], got range [{float(lo)}, {float(hi)}]")


def superimpose(rho: torch.Tensor, phi: torch.Tensor, d: torch.Tensor, P: float = 1.0) -> torch.Tensor:
    """Per-RE power-weighted pilot/data sum, shapes (..., K, E)."""
    _check_rho(rho)
    return torch.sqrt(P * rho) * phi + torch.sqrt(P * (1.0 - rho)) * d


def transmit(
    H: torch.Tensor,
    s_tx: torch.Tensor,
    sigma2,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """Apply the per-RE uplink channel: Y[m, e] = sum_k H[m, k, e] s[k, e] + n.

    ``H`` is (..., M, K, E), ``s_tx`` (..., K, E); the noise is circularly
    symmetric complex Gaussian with per-sample variance ``sigma2`` (scalar or
    broadcastable to the (..., M, E) output).
    """
    sigma2_t = torch.as_tensor(sigma2, dtype=H.real.dtype)
    if (sigma2_t < 0).any():
        raise ValueError("noise variance must be non-negative")
    y = torch.einsum("...mke,...ke->...me", H, s_tx)
    if (sigma2_t > 0).any():
        shape = y.shape
        re = torch.randn(shape, generator=rng, dtype=y.real.dtype)
        im = torch.randn(shape, generator=rng, dtype=y.real.dtype)
        y = y + torch.sqrt(sigma2_t / 2.0) * torch.complex(re, im)
    return y


# ---------------------------------------------------------------------------
# Traditional-pilot baseline frames


@dataclass(frozen=True)
class TpFrame:
    """A frame with whole OFDM symbols reserved for pilots."""

    s_tx: np.ndarray  # complex, (K, E)
    pilot_mask: np.ndarray  # bool, (S, T); True where REs carry pilots
    pilot_seq: np.ndarray  # complex, (K, S), per-symbol user sequences
    pilot_symbols: tuple[int, ...]
    spec: ResourceGridSpec

    @property
    def data_mask(self) -> np.ndarray:
        return ~self.pilot_mask

    @property
    def data_re_indices(self) -> np.ndarray:
        """Flat RE indices of the data-bearing resource elements."""
        s, t = np.nonzero(self.data_mask)
        return np.sort(s + self.spec.S * t)


def make_tp_pilots(K: int, S: int) -> np.ndarray:
    """DFT user-separation sequences across subcarriers, (K, S)."""
    if K > S:
        raise ConfigurationError(f"cannot orthogonalize {K} users on {S} subcarriers")
    if S % K != 0:
        raise ConfigurationError(f"user count {K} must divide the subcarrier count {S}")
    k = np.arange(K)[:, None]
    s = np.arange(S)[None, :]
    return np.exp(-2j * np.pi * (k * s % K) / K)


def build_tp_frame(
    pilot_seq: np.ndarray,
    d: np.ndarray,
    P: float,
    spec: ResourceGridSpec,
    pilot_symbols: tuple[int, ...] = TP_PILOT_SYMBOLS,
) -> TpFrame:
    """Place pilots on whole OFDM symbols and data everywhere else.

    Both parts transmit at power P; the data entries of ``d`` on pilot
    symbols are discarded.  Returns the frame plus the boolean pilot mask
    over the (S, T) grid.
    """
    if spec.T < 4:
        raise ConfigurationError(f"TP frames need T >= 4 symbols, got {spec.T}")
    for t in pilot_symbols:
        if not (0 <= t < spec.T):
            raise ConfigurationError(f"pilot symbol index {t} outside the grid of {spec.T} symbols")
    K = pilot_seq.shape[0]
    if pilot_seq.shape != (K, spec.S):
        raise ValueError(f"pilot sequences must be (K, S), got {pilot_seq.shape}")
    if d.shape != (K, spec.E):
        raise ValueError(f"data must be (K, E), got {d.shape}")

    mask = np.zeros((spec.S, spec.T), dtype=bool)
    mask[:, list(pilot_symbols)] = True

    s_tx = np.sqrt(P) * np.asarray(d, dtype=complex).copy()
    for t in pilot_symbols:
        cols = np.arange(spec.S) + spec.S * t  # flat indices of symbol t
        s_tx[:, cols] = np.sqrt(P) * pilot_seq
    return TpFrame(
        s_tx=s_tx,
        pilot_mask=mask,
        pilot_seq=np.asarray(pilot_seq),
        pilot_symbols=tuple(pilot_symbols),
        spec=spec,
    )
