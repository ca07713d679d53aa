"""Named parameter bundles: full-scale, desk-scale, and tiny gradient-check.

The paper-scale preset mirrors the published system dimensions; the desk
preset shrinks everything so the full train/evaluate cycle runs in minutes
on one CPU core; the tiny preset exists for finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass

from .channel import SimConfig
from .errors import ConfigurationError
from .grid import ResourceGridSpec
from .networks import ArchConfig

__all__ = ["Preset", "PRESETS", "get_preset"]


@dataclass(frozen=True)
class Preset:
    name: str
    sim: SimConfig
    arch: ArchConfig
    epochs: int
    batch_size: int
    lr: float


PRESETS: dict[str, Preset] = {
    "paper": Preset(
        name="paper",
        sim=SimConfig(
            M=64,
            K=12,
            spec=ResourceGridSpec(S=48, T=14),
            velocity_kmh=3.0,
            n_samples=900,
            n_distance_classes=45,
        ),
        arch=ArchConfig(),  # defaults are the full-scale widths
        epochs=300,
        batch_size=16,
        lr=1e-4,
    ),
    "desk": Preset(
        name="desk",
        sim=SimConfig(
            M=8,
            K=4,
            spec=ResourceGridSpec(S=24, T=14),
            velocity_kmh=3.0,
            n_samples=200,
            n_distance_classes=45,
        ),
        arch=ArchConfig(
            L_f=8,
            L_s=16,
            mlp_hidden=32,
            enc_widths=(16, 24, 32),
            block_convs=1,
            n_bottleneck=1,
            det_channels=16,
            det_depth=2,
        ),
        epochs=50,
        batch_size=16,
        lr=1e-3,
    ),
    "tiny": Preset(
        name="tiny",
        sim=SimConfig(
            M=2,
            K=2,
            spec=ResourceGridSpec(S=4, T=4),
            n_taps=4,
            n_samples=12,
            n_distance_classes=3,
        ),
        arch=ArchConfig(
            L_f=4,
            L_s=4,
            mlp_hidden=4,
            enc_widths=(4, 4, 4),
            block_convs=1,
            n_bottleneck=1,
            det_channels=4,
            det_depth=1,
        ),
        epochs=2,
        batch_size=2,
        lr=1e-3,
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}, expected one of {sorted(PRESETS)}"
        ) from None
