"""Neural receiver components: reshape maps, path-gain embedding, U-Net
channel estimator with scale/shift fusion, and the convolutional data
detector.

The reshape maps stack real and imaginary parts into two feature channels
and flatten every leading axis (sample batch, antennas, users) into the
convolution batch, so the networks share weights across antennas and users
and see only time-frequency structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError
from .grid import ResourceGridSpec, flat_to_grid, grid_to_flat

__all__ = [
    "ArchConfig",
    "f_tce",
    "f_tce_inv",
    "f_tdd",
    "f_tdd_inv",
    "freq_scaling_vector",
    "sinusoidal_features",
    "PathGainEmbedding",
    "film_modulate",
    "ChannelNet",
    "DataNet",
    "count_params",
    "param_report",
]


# ---------------------------------------------------------------------------
# Reshape maps between complex RE tensors and real feature maps


def f_tce(h: torch.Tensor, spec: ResourceGridSpec) -> torch.Tensor:
    """Complex (..., M, K, E) -> real (prod(lead)*M*K, 2, S, T).

    Channel 0 carries the real part, channel 1 the imaginary part; the RE
    axis unfolds subcarrier-fastest.  Leading axes flatten row-major, so a
    single sample maps batch row b = m*K + k.
    """
    grid = flat_to_grid(h, spec)  # (..., S, T)
    flat = grid.reshape(-1, spec.S, spec.T)
    return torch.stack((flat.real, flat.imag), dim=1)


def f_tce_inv(x: torch.Tensor, shape: tuple[int, ...], spec: ResourceGridSpec) -> torch.Tensor:
    """Inverse of :func:`f_tce`; ``shape`` is the original (..., M, K) part."""
    grid = torch.complex(x[:, 0], x[:, 1]).reshape(*shape, spec.S, spec.T)
    return grid_to_flat(grid, spec)


def f_tdd(d: torch.Tensor, spec: ResourceGridSpec) -> torch.Tensor:
    """Complex (..., K, E) -> real (prod(lead)*K, 2, S, T); see :func:`f_tce`."""
    return f_tce(d, spec)


def f_tdd_inv(x: torch.Tensor, shape: tuple[int, ...], spec: ResourceGridSpec) -> torch.Tensor:
    return f_tce_inv(x, shape, spec)


# ---------------------------------------------------------------------------
# Path-gain embedding


def freq_scaling_vector(L_f: int, dtype=torch.float32) -> torch.Tensor:
    """Geometric frequency ladder f[i] = exp(-log(10000) * i / L_f), i = 0..L_f-1."""
    if L_f < 1:
        raise ValueError(f"frequency vector length must be >= 1, got {L_f}")
    i = torch.arange(L_f, dtype=dtype)
    return torch.exp(-np.log(10000.0) * i / L_f)


def sinusoidal_features(a: torch.Tensor, freqs: torch.Tensor) -> torch.Tensor:
    """Concatenated sin/cos features of the outer product a * freqs^T.

    ``a`` is (N,), ``freqs`` (L_f,); returns (N, 2*L_f) with the sine half
    first.
    """
    ang = a.unsqueeze(-1) * freqs
    return torch.cat((torch.sin(ang), torch.cos(ang)), dim=-1)


class PathGainEmbedding(nn.Module):
    """Sinusoidal features of the path gains followed by a SiLU MLP.

    The MLP output splits into a scale half and a shift half of length
    ``L_s`` each, used to modulate the channel-estimator feature maps.
    """

    def __init__(self, L_f: int, L_s: int, hidden: int):
        super().__init__()
        self.L_f = L_f
        self.L_s = L_s
        self.register_buffer("freqs", freq_scaling_vector(L_f))
        self.mlp = nn.Sequential(
            nn.Linear(2 * L_f, hidden),
            nn.SiLU(),
            nn.Linear(hidden, 2 * L_s),
        )

    def forward(self, a: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(N,) gains -> (scale, shift), each (N, L_s)."""
        out = self.mlp(sinusoidal_features(a, self.freqs))
        return out[:, : self.L_s], out[:, self.L_s :]


def film_modulate(features: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    """Feature-wise affine modulation: F * (1 + scale) + shift.

    ``features`` is (N, C, H, W); scale/shift are (N, C) and broadcast over
    the spatial axes.  Zero scale and shift is the identity.
    """
    return features * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]


# ---------------------------------------------------------------------------
# Architectures


@dataclass(frozen=True)
class ArchConfig:
    """Width/depth knobs for the channel estimator and data detector."""

    L_f: int = 8
    L_s: int = 32
    mlp_hidden: int = 96
    enc_widths: tuple[int, int, int] = (48, 96, 192)
    block_convs: int = 2  # convs per encoder/decoder stage
    n_bottleneck: int = 3
    det_channels: int = 128
    det_depth: int = 5  # hidden convs in the data detector
    negative_slope: float = 0.3  # Leaky ReLU slope outside the MLP


def _conv(c_in: int, c_out: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(c_in, c_out, kernel_size=3, stride=stride, padding=1)


def _pad_to_multiple(x: torch.Tensor, mult: int) -> tuple[torch.Tensor, tuple[int, int]]:
    h, w = x.shape[-2:]
    ph = (-h) % mult
    pw = (-w) % mult
    if ph or pw:
        x = nn.functional.pad(x, (0, pw, 0, ph))
    return x, (h, w)


class ChannelNet(nn.Module):
    """U-Net channel estimator conditioned on path gains.

    Front convolutions lift the reshaped LS estimate to ``L_s`` feature
    channels where the path-gain scale/shift is applied once; two stride-2
    stages then downsample, a bottleneck stack processes the coarse map, and
    two transposed-conv stages with skip concatenations restore the grid.
    A 1x1 projection returns to two channels.  Path gains enter in dB.
    """

    DOWN_FACTOR = 4  # two stride-2 stages

    def __init__(self, spec: ResourceGridSpec, arch: ArchConfig):
        super().__init__()
        self.spec = spec
        self.arch = arch
        w1, w2, w3 = arch.enc_widths
        act = lambda: nn.LeakyReLU(arch.negative_slope)

        def block(c_in: int, c_out: int) -> nn.Sequential:
            layers: list[nn.Module] = [_conv(c_in, c_out), act()]
            for _ in range(arch.block_convs - 1):
                layers += [_conv(c_out, c_out), act()]
            return nn.Sequential(*layers)

        self.embed = PathGainEmbedding(arch.L_f, arch.L_s, arch.mlp_hidden)
        self.front = nn.Sequential(_conv(2, arch.L_s), act(), _conv(arch.L_s, arch.L_s), act())
        self.enc1 = block(arch.L_s, w1)
        self.down1 = nn.Sequential(_conv(w1, w2, stride=2), act())
        self.enc2 = block(w2, w2)
        self.down2 = nn.Sequential(_conv(w2, w3, stride=2), act())
        self.bottleneck = nn.Sequential(
            *[m for _ in range(arch.n_bottleneck) for m in (_conv(w3, w3), act())]
        )
        self.up1 = nn.Sequential(nn.ConvTranspose2d(w3, w2, 3, stride=2, padding=1, output_padding=1), act())
        self.dec1 = block(2 * w2, w2)
        self.up2 = nn.Sequential(nn.ConvTranspose2d(w2, w1, 3, stride=2, padding=1, output_padding=1), act())
        self.dec2 = block(2 * w1, w1)
        self.head = nn.Conv2d(w1, 2, kernel_size=1)

    def forward(self, h_ls: torch.Tensor, path_gain: torch.Tensor) -> torch.Tensor:
        """Refine LS estimates (..., M, K, E) using path gains (..., M, K)."""
        if h_ls.shape[:-1] != path_gain.shape:
            raise ValueError(
                f"path gain shape {tuple(path_gain.shape)} does not match estimate {tuple(h_ls.shape[:-1])}"
            )
        lead = h_ls.shape[:-1]
        x = f_tce(h_ls, self.spec)
        if min(self.spec.S, self.spec.T) < self.DOWN_FACTOR:
            raise ConfigurationError(
                f"grid ({self.spec.S}x{self.spec.T}) too small for {self.DOWN_FACTOR}x down-sampling"
            )
        gains_db = 10.0 * torch.log10(path_gain.reshape(-1).to(x.dtype))
        scale, shift = self.embed(gains_db)

        x = self.front(x)
        x = film_modulate(x, scale, shift)
        x, (h0, w0) = _pad_to_multiple(x, self.DOWN_FACTOR)
        s1 = self.enc1(x)
        s2 = self.enc2(self.down1(s1))
        z = self.bottleneck(self.down2(s2))
        z = self.dec1(torch.cat((self.up1(z), s2), dim=1))
        z = self.dec2(torch.cat((self.up2(z), s1), dim=1))
        out = self.head(z)[..., :h0, :w0]
        return f_tce_inv(out, lead, self.spec)


class DataNet(nn.Module):
    """Convolutional refinement of the MMSE-equalized data.

    Same-padding convolutions with batch normalization keep the grid size;
    ReLU activations throughout except the final Tanh, whose (-1, 1) range
    covers unit-energy QAM coordinates.
    """

    def __init__(self, spec: ResourceGridSpec, arch: ArchConfig):
        super().__init__()
        self.spec = spec
        C = arch.det_channels
        layers: list[nn.Module] = [_conv(2, C), nn.BatchNorm2d(C), nn.ReLU()]
        for _ in range(arch.det_depth):
            layers += [_conv(C, C), nn.BatchNorm2d(C), nn.ReLU()]
        layers += [_conv(C, 2), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    def forward(self, d_eq: torch.Tensor) -> torch.Tensor:
        """Refine equalized symbols (..., K, E) -> (..., K, E)."""
        lead = d_eq.shape[:-1]
        x = f_tdd(d_eq, self.spec)
        return f_tdd_inv(self.net(x), lead, self.spec)


# ---------------------------------------------------------------------------
# Parameter accounting


def count_params(obj) -> int:
    """Exact count of learnable scalars in a module, tensor, or iterable."""
    if isinstance(obj, nn.Module):
        return sum(p.numel() for p in obj.parameters() if p.requires_grad)
    if torch.is_tensor(obj):
        return obj.numel()
    return sum(count_params(o) for o in obj)


def param_report(power_weights, channel_net: nn.Module | None, data_net: nn.Module | None) -> dict[str, int]:
    """Per-subnetwork learnable-parameter counts plus the total."""
    report = {
        "f_p": count_params(power_weights) if power_weights is not None else 0,
        "f_c": count_params(channel_net) if channel_net is not None else 0,
        "f_d": count_params(data_net) if data_net is not None else 0,
    }
    report["total"] = sum(report.values())
    return report
