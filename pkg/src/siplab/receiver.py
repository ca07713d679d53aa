"""Classical receiver chain for superimposed and traditional pilots.

Per-RE least-squares estimation, pilot interference cancellation, per-RE
MMSE detection, hard decisions, the simplified iterative loop that
alternates data cancellation with re-estimation, and the
traditional-pilot receiver with time interpolation.

Everything operates on torch tensors with arbitrary leading batch
dimensions and is differentiable wherever the math allows, so the same
functions serve both the baseline receivers and the end-to-end trained
chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .grid import ResourceGridSpec, flat_to_grid, grid_to_flat
from .transmitter import TpFrame

__all__ = [
    "ls_estimate",
    "despread_smooth",
    "cancel_pilots",
    "cancel_data",
    "mmse_detect",
    "hard_decision",
    "icedd",
    "IceddIteration",
    "tp_receive",
]


def _pilot_tx(rho: torch.Tensor, phi: torch.Tensor, P: float) -> torch.Tensor:
    """Pilot component of the transmit signal, sqrt(P*rho) * phi, (..., K, E)."""
    return torch.sqrt(P * rho) * phi


def ls_estimate(Y: torch.Tensor, rho: torch.Tensor, phi: torch.Tensor, P: float = 1.0) -> torch.Tensor:
    """Per-RE least-squares channel estimate, (..., M, K, E).

    H_hat[m, k, e] = Y[m, e] / (sqrt(P*rho[k, e]) * phi[k, e]).  The raw
    estimate deliberately contains the other users' pilot and data
    interference; downstream stages remove it.
    """
    if (rho <= 0).any():
        raise ValueError("LS estimation needs strictly positive pilot power on every RE")
    scale = _pilot_tx(rho, phi, P)  # (..., K, E)
    return Y.unsqueeze(-2) / scale.unsqueeze(-3)


def despread_smooth(
    H_hat: torch.Tensor, spec: ResourceGridSpec, window: tuple[int, int] = (3, 3)
) -> torch.Tensor:
    """Moving-average of the estimate over a time-frequency neighborhood.

    ``window`` = (w_s, w_t) must be odd; edges use the truncated window so a
    constant input passes through unchanged.  Window (1, 1) is the identity.
    """
    w_s, w_t = window
    if w_s < 1 or w_t < 1 or w_s % 2 == 0 or w_t % 2 == 0:
        raise ValueError(f"window sizes must be odd and >= 1, got {window}")
    if window == (1, 1):
        return H_hat
    grid = flat_to_grid(H_hat, spec)  # (..., S, T)
    lead = grid.shape[:-2]
    x = torch.stack((grid.real, grid.imag), dim=-3).reshape(-1, 1, spec.S, spec.T)
    kernel = torch.ones(1, 1, w_s, w_t, dtype=x.dtype)
    pad = (w_s // 2, w_t // 2)
    sums = torch.nn.functional.conv2d(x, kernel, padding=pad)
    counts = torch.nn.functional.conv2d(torch.ones_like(x[:1]), kernel, padding=pad)
    out = (sums / counts).reshape(*lead, 2, spec.S, spec.T)
    return grid_to_flat(torch.complex(out.select(-3, 0), out.select(-3, 1)), spec)


def cancel_pilots(
    Y: torch.Tensor, H_hat: torch.Tensor, rho: torch.Tensor, phi: torch.Tensor, P: float = 1.0
) -> torch.Tensor:
    """Subtract the estimated pilot contribution from the received signal."""
    return Y - torch.einsum("...mke,...ke->...me", H_hat, _pilot_tx(rho, phi, P))


def cancel_data(
    Y: torch.Tensor, H_hat: torch.Tensor, rho: torch.Tensor, d: torch.Tensor, P: float = 1.0
) -> torch.Tensor:
    """Subtract the estimated data contribution (used between iterations)."""
    data_tx = torch.sqrt(P * (1.0 - rho)) * d
    return Y - torch.einsum("...mke,...ke->...me", H_hat, data_tx)


def mmse_detect(
    Y_sp: torch.Tensor,
    H_hat: torch.Tensor,
    rho: torch.Tensor,
    P: float = 1.0,
    sigma2: float = 0.0,
) -> torch.Tensor:
    """Per-RE regularized linear MMSE detection, returns (..., K, E).

    At each RE the effective channel has column k scaled by the data
    amplitude sqrt(P*(1-rho[k, e])); the detector solves
    (H_d^H H_d + sigma^2 I) d = H_d^H y with a dense factorization.
    """
    amp = torch.sqrt(P * (1.0 - rho))  # (..., K, E)
    Hd = H_hat.movedim(-1, -3) * amp.movedim(-1, -2).unsqueeze(-2)  # (..., E, M, K)
    y = Y_sp.movedim(-1, -2).unsqueeze(-1)  # (..., E, M, 1)
    gram = Hd.mH @ Hd  # (..., E, K, K)
    K = gram.shape[-1]
    eye = torch.eye(K, dtype=gram.dtype)
    sigma2_t = torch.as_tensor(sigma2, dtype=Y_sp.real.dtype)
    if (sigma2_t < 0).any():
        raise ValueError("noise variance must be non-negative")
    if sigma2_t.ndim:  # per-batch variances broadcast over (E, K, K)
        sigma2_t = sigma2_t.reshape(*sigma2_t.shape, 1, 1, 1)
    d = torch.linalg.solve(gram + sigma2_t * eye, Hd.mH @ y)  # (..., E, K, 1)
    return d.squeeze(-1).movedim(-1, -2)


def hard_decision(d_soft: torch.Tensor, points: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
    """Nearest constellation point per symbol; ties break to the lowest index.

    Returns (symbols, integer labels) with the input's shape.
    """
    if len(points) == 0:
        raise ValueError("constellation must be nonempty")
    pts = torch.as_tensor(np.asarray(points), dtype=d_soft.dtype)
    dist = (d_soft.unsqueeze(-1) - pts).abs()
    labels = dist.argmin(dim=-1)
    return pts[labels], labels


@dataclass
class IceddIteration:
    """State after one estimation/detection pass."""

    H_hat: torch.Tensor  # (..., M, K, E)
    d_soft: torch.Tensor  # (..., K, E)
    d_hard: torch.Tensor  # (..., K, E)
    labels: torch.Tensor  # (..., K, E) integer


def icedd(
    Y: torch.Tensor,
    rho: torch.Tensor,
    phi: torch.Tensor,
    points: np.ndarray,
    spec: ResourceGridSpec,
    P: float = 1.0,
    sigma2: float = 0.0,
    n_iter: int = 1,
    window: tuple[int, int] = (3, 3),
) -> list[IceddIteration]:
    """Iterative channel estimation and data detection.

    Iteration 0 is the plain superimposed-pilot receiver (smoothed LS,
    pilot cancellation, MMSE, hard decision).  Each further iteration
    cancels the previously decided data from Y before re-estimating the
    channel, then detects again from the original Y.  Returns the full
    per-iteration trace; ``n_iter=1`` is exactly the non-iterative receiver.
    """
    if n_iter < 1:
        raise ValueError(f"need at least one iteration, got {n_iter}")

    def detect(H_hat: torch.Tensor) -> IceddIteration:
        y_sp = cancel_pilots(Y, H_hat, rho, phi, P)
        d_soft = mmse_detect(y_sp, H_hat, rho, P, sigma2)
        d_hard, labels = hard_decision(d_soft, points)
        return IceddIteration(H_hat=H_hat, d_soft=d_soft, d_hard=d_hard, labels=labels)

    trace = [detect(despread_smooth(ls_estimate(Y, rho, phi, P), spec, window))]
    for _ in range(1, n_iter):
        prev = trace[-1]
        y_dc = cancel_data(Y, prev.H_hat, rho, prev.d_hard, P)
        trace.append(detect(despread_smooth(ls_estimate(y_dc, rho, phi, P), spec, window)))
    return trace


# ---------------------------------------------------------------------------
# Traditional-pilot receiver


def _block_despread(Yp: torch.Tensor, pilot_seq: torch.Tensor, P: float) -> torch.Tensor:
    """Separate users on one pilot symbol by correlating over K-subcarrier blocks.

    ``Yp`` is (..., M, S); returns block estimates (..., M, K, n_blocks).
    """
    K, S = pilot_seq.shape
    n_blocks = S // K
    y_blk = Yp.reshape(*Yp.shape[:-1], n_blocks, K)  # (..., M, B, K)
    seq_blk = pilot_seq.reshape(K, n_blocks, K)  # (K_user, B, K_sub)
    est = torch.einsum("...mbs,kbs->...mkb", y_blk, seq_blk.conj())
    return est / (K * np.sqrt(P))


def _freq_interp_matrix(S: int, K: int, dtype) -> torch.Tensor:
    """Linear interpolation weights from block centers to subcarriers, (S, n_blocks)."""
    n_blocks = S // K
    centers = np.arange(n_blocks) * K + (K - 1) / 2.0
    W = np.zeros((S, n_blocks))
    for s in range(S):
        if s <= centers[0]:
            W[s, 0] = 1.0
        elif s >= centers[-1]:
            W[s, -1] = 1.0
        else:
            i = int(np.searchsorted(centers, s) - 1)
            a = (s - centers[i]) / (centers[i + 1] - centers[i])
            W[s, i] = 1.0 - a
            W[s, i + 1] = a
    return torch.as_tensor(W, dtype=dtype)


def tp_receive(
    Y: torch.Tensor,
    frame: TpFrame,
    P: float = 1.0,
    sigma2: float = 0.0,
    points: np.ndarray | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Estimate from the pilot symbols, interpolate in time, detect the data REs.

    LS estimates at the two pilot symbols are despread per K-subcarrier
    block, linearly interpolated across subcarriers, then linearly
    interpolated/extrapolated along the time axis.  Returns
    (H_hat (..., M, K, E), d_soft (..., K, E)); ``d_soft`` is zero at pilot
    REs, which carry no data.
    """
    spec = frame.spec
    if len(frame.pilot_symbols) < 2:
        raise ValueError("time interpolation needs at least two pilot symbols")
    t1, t2 = frame.pilot_symbols[0], frame.pilot_symbols[-1]
    pilot_seq = torch.as_tensor(frame.pilot_seq, dtype=Y.dtype)
    K = pilot_seq.shape[0]

    y_grid = flat_to_grid(Y, spec)  # (..., M, S, T)
    W = _freq_interp_matrix(spec.S, K, Y.dtype)

    def estimate_at(t: int) -> torch.Tensor:
        blocks = _block_despread(y_grid[..., :, :, t], pilot_seq, P)  # (..., M, K, B)
        return torch.einsum("...mkb,sb->...mks", blocks, W)  # (..., M, K, S)

    h1, h2 = estimate_at(t1), estimate_at(t2)
    t = torch.arange(spec.T, dtype=Y.real.dtype)
    w2 = ((t - t1) / (t2 - t1)).to(Y.dtype)
    h_grid = h1.unsqueeze(-1) * (1.0 - w2) + h2.unsqueeze(-1) * w2  # (..., M, K, S, T)
    H_hat = grid_to_flat(h_grid, spec)

    # Detection on data REs only, at full data power (no superimposition).
    data_idx = torch.as_tensor(frame.data_re_indices, dtype=torch.long)
    zero_rho = torch.zeros(K, data_idx.numel(), dtype=Y.real.dtype)
    d_data = mmse_detect(Y[..., data_idx], H_hat[..., data_idx], zero_rho, P, sigma2)
    d_soft = torch.zeros(*Y.shape[:-2], K, spec.E, dtype=Y.dtype)
    d_soft[..., data_idx] = d_data
    return H_hat, d_soft
