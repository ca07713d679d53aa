"""Tapped-delay-line fading channel generation, noise calibration, dataset IO.

Channels are produced directly in the frequency domain: L taps with an
exponential power-delay profile (rescaled so the realized RMS delay spread
hits the request exactly) and per-tap Rayleigh fading that evolves over the
OFDM symbols through a sum-of-sinusoids Jakes process.  Externally generated
datasets can be ingested through the same ``sipds-v1`` file format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import h5py
import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import ConfigurationError, DataFormatError
from .grid import ResourceGridSpec, flat_to_grid, grid_to_flat

__all__ = [
    "SimConfig",
    "ChannelSample",
    "Dataset",
    "DATASET_FORMAT",
    "doppler_hz",
    "path_gain_from_distance",
    "exp_pdp_taps",
    "rms_delay_spread",
    "jakes_process",
    "gen_tdl_channel",
    "generate_dataset",
    "calibrate_noise",
    "split_dataset",
    "save_dataset",
    "load_dataset",
]

DATASET_FORMAT = "sipds-v1"


def doppler_hz(velocity_kmh: float, carrier_hz: float) -> float:
    """Maximum Doppler shift f_D = v * fc / c."""
    return velocity_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT


def path_gain_from_distance(d3d_m, fc_ghz: float):
    """Distance-driven large-scale gain, linear power.

    Path loss model: PL(dB) = 28.0 + 22*log10(d3d) + 20*log10(fc), with d3d
    in meters and fc in GHz.  Monotone decreasing in distance.
    """
    d3d_m = np.asarray(d3d_m, dtype=float)
    if np.any(d3d_m <= 0) or fc_ghz <= 0:
        raise ValueError("distance and carrier frequency must be strictly positive")
    pl_db = 28.0 + 22.0 * np.log10(d3d_m) + 20.0 * np.log10(fc_ghz)
    return 10.0 ** (-pl_db / 10.0)


@dataclass(frozen=True)
class SimConfig:
    """Physical and bookkeeping knobs for channel dataset generation."""

    M: int  # BS antennas
    K: int  # users
    spec: ResourceGridSpec
    carrier_hz: float = 2.6e9
    scs_hz: float = 30e3  # subcarrier spacing
    velocity_kmh: float = 3.0
    delay_spread_ns: tuple[float, float] = (100.0, 300.0)  # sampled uniformly
    distance_m: tuple[float, float] = (150.0, 600.0)
    bs_height_m: float = 30.0
    n_taps: int = 12
    n_samples: int = 900
    n_distance_classes: int = 45

    def __post_init__(self):
        if self.M < 1 or self.K < 1:
            raise ConfigurationError("M and K must be >= 1")
        if self.carrier_hz <= 0 or self.scs_hz <= 0:
            raise ConfigurationError("carrier frequency and subcarrier spacing must be positive")
        if self.velocity_kmh < 0:
            raise ConfigurationError("velocity must be non-negative")
        if self.n_taps < 1:
            raise ConfigurationError("tap count must be >= 1")
        if min(self.delay_spread_ns) <= 0:
            raise ConfigurationError("delay spread must be positive")
        if not (0 < self.distance_m[0] < self.distance_m[1]):
            raise ConfigurationError("distance range must satisfy 0 < min < max")
        if self.n_samples < 1 or self.n_distance_classes < 1:
            raise ConfigurationError("sample and class counts must be >= 1")


@dataclass
class ChannelSample:
    """One fading realization: per-RE response plus large-scale path gains."""

    H: np.ndarray  # complex, (M, K, E), linear amplitude
    path_gain: np.ndarray  # float, (M, K), linear power
    velocity_kmh: float
    delay_spread_ns: float
    distances_m: np.ndarray  # (K,)
    seed: int


def exp_pdp_taps(n_taps: int, rms_delay_ns: float) -> tuple[np.ndarray, np.ndarray]:
    """Exponential power-delay profile scaled to an exact RMS delay spread.

    Taps sit on a uniform grid with powers decaying 20 dB across the profile;
    the delays are then rescaled so the realized RMS delay spread equals the
    request.  Returns (delays in seconds, powers summing to 1).
    """
    if n_taps < 1:
        raise ConfigurationError(f"tap count must be >= 1, got {n_taps}")
    if rms_delay_ns <= 0:
        raise ConfigurationError(f"delay spread must be positive, got {rms_delay_ns}")
    if n_taps == 1:
        return np.zeros(1), np.ones(1)
    tau = np.arange(n_taps, dtype=float)
    gamma = (n_taps - 1) / np.log(100.0)  # last tap 20 dB below the first
    powers = np.exp(-tau / gamma)
    powers /= powers.sum()
    tau *= rms_delay_ns * 1e-9 / rms_delay_spread(tau, powers)
    return tau, powers


def rms_delay_spread(delays: np.ndarray, powers: np.ndarray) -> float:
    """Power-weighted RMS spread of tap delays."""
    w = powers / powers.sum()
    mean = float(np.sum(w * delays))
    return float(np.sqrt(np.sum(w * (delays - mean) ** 2)))


def jakes_process(
    n_series: int,
    f_doppler_hz: float,
    times_s: np.ndarray,
    rng: np.random.Generator,
    n_oscillators: int = 32,
) -> np.ndarray:
    """Sum-of-sinusoids Rayleigh fading, complex (n_series, len(times)).

    Each series sums ``n_oscillators`` unit phasors with uniform random
    arrival angles and phases, so E{|g|^2} = 1 exactly and the temporal
    autocorrelation converges to J0(2*pi*f_D*tau).
    """
    times_s = np.asarray(times_s, dtype=float)
    alpha = rng.uniform(0.0, 2.0 * np.pi, size=(n_series, n_oscillators))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(n_series, n_oscillators))
    # angle per oscillator and time: 2*pi*f_D*cos(alpha)*t + phase
    ang = (
        2.0 * np.pi * f_doppler_hz * np.cos(alpha)[:, :, None] * times_s[None, None, :]
        + phase[:, :, None]
    )
    return np.exp(1j * ang).sum(axis=1) / np.sqrt(n_oscillators)


def gen_tdl_channel(
    cfg: SimConfig,
    distances_m: np.ndarray,
    delay_spread_ns: float,
    rng: np.random.Generator,
    seed: int = 0,
) -> ChannelSample:
    """Draw one multiuser channel realization.

    Per user: L taps with the exponential profile, i.i.d. small-scale fading
    across antennas, Jakes time evolution across the T OFDM symbols, and an
    overall sqrt(path gain) amplitude.  The realized per-(m, k) energy
    averages to path_gain[m, k] over realizations.
    """
    spec = cfg.spec
    M, K, L = cfg.M, cfg.K, cfg.n_taps
    distances_m = np.asarray(distances_m, dtype=float)
    if distances_m.shape != (K,):
        raise ValueError(f"expected {K} user distances, got shape {distances_m.shape}")

    delays, powers = exp_pdp_taps(L, delay_spread_ns)
    f_d = doppler_hz(cfg.velocity_kmh, cfg.carrier_hz)
    sym_times = np.arange(spec.T) / cfg.scs_hz

    taps = jakes_process(M * K * L, f_d, sym_times, rng).reshape(M, K, L, spec.T)
    # frequency response: DFT of the taps at each subcarrier offset
    steering = np.exp(
        -2j * np.pi * (np.arange(spec.S) * cfg.scs_hz)[:, None] * delays[None, :]
    )  # (S, L)
    amp = np.sqrt(powers)  # (L,)
    h_grid = np.einsum("mklt,sl,l->mkst", taps, steering, amp, optimize=True)

    d3d = np.hypot(distances_m, cfg.bs_height_m)
    gains = path_gain_from_distance(d3d, cfg.carrier_hz / 1e9)  # (K,)
    path_gain = np.broadcast_to(gains[None, :], (M, K)).copy()
    h_grid *= np.sqrt(gains)[None, :, None, None]

    return ChannelSample(
        H=grid_to_flat(h_grid, spec),
        path_gain=path_gain,
        velocity_kmh=cfg.velocity_kmh,
        delay_spread_ns=delay_spread_ns,
        distances_m=distances_m,
        seed=seed,
    )


@dataclass
class Dataset:
    """Stacked channel samples with per-sample metadata."""

    H: np.ndarray  # complex64, (N, M, K, E)
    path_gain: np.ndarray  # float32, (N, M, K)
    velocity_kmh: np.ndarray  # (N,)
    delay_spread_ns: np.ndarray  # (N,)
    distances_m: np.ndarray  # (N, K)
    seeds: np.ndarray  # uint64, (N,)
    spec: ResourceGridSpec

    def __len__(self) -> int:
        return self.H.shape[0]

    def sample(self, i: int) -> ChannelSample:
        return ChannelSample(
            H=self.H[i],
            path_gain=self.path_gain[i],
            velocity_kmh=float(self.velocity_kmh[i]),
            delay_spread_ns=float(self.delay_spread_ns[i]),
            distances_m=self.distances_m[i],
            seed=int(self.seeds[i]),
        )

    @property
    def n_distance_classes(self) -> int:
        """Number of distinct user-distance values present."""
        return int(np.unique(self.distances_m).size)


def generate_dataset(cfg: SimConfig, seed: int) -> Dataset:
    """Generate ``cfg.n_samples`` independent channel samples.

    Delay spreads are drawn uniformly from the configured range and user
    distances from ``n_distance_classes`` evenly spaced class centers.
    """
    master = np.random.default_rng(seed)
    sample_seeds = master.integers(0, 2**63, size=cfg.n_samples, dtype=np.uint64)
    classes = np.linspace(cfg.distance_m[0], cfg.distance_m[1], cfg.n_distance_classes)

    N, spec = cfg.n_samples, cfg.spec
    H = np.empty((N, cfg.M, cfg.K, spec.E), dtype=np.complex64)
    path_gain = np.empty((N, cfg.M, cfg.K), dtype=np.float32)
    velocity = np.full(N, cfg.velocity_kmh, dtype=np.float32)
    ds_lo, ds_hi = cfg.delay_spread_ns
    delay_spreads = np.empty(N, dtype=np.float32)
    distances = np.empty((N, cfg.K), dtype=np.float32)

    for i in range(N):
        rng = np.random.default_rng(sample_seeds[i])
        ds = float(rng.uniform(ds_lo, ds_hi)) if ds_hi > ds_lo else float(ds_lo)
        dist = classes[rng.integers(0, cfg.n_distance_classes, size=cfg.K)]
        s = gen_tdl_channel(cfg, dist, ds, rng, seed=int(sample_seeds[i]))
        H[i] = s.H
        path_gain[i] = s.path_gain
        delay_spreads[i] = ds
        distances[i] = dist

    return Dataset(
        H=H,
        path_gain=path_gain,
        velocity_kmh=velocity,
        delay_spread_ns=delay_spreads,
        distances_m=distances,
        seeds=sample_seeds,
        spec=spec,
    )


def calibrate_noise(P: float, H, target_esn0_db: float) -> float:
    """Noise variance hitting a target received-energy-to-noise ratio.

    ``H`` is (N, M, K, E) or a single (M, K, E) tensor.  The received-symbol
    energy is P times the dataset average of ||sum_k H_k||_F^2 / (M*E), i.e.
    per antenna and per RE; sigma^2 = energy / 10^(target/10).
    """
    H = np.asarray(H)
    if H.ndim == 3:
        H = H[None]
    if H.size == 0:
        raise ValueError("cannot calibrate noise on an empty dataset")
    if not np.isfinite(target_esn0_db):
        raise ValueError("target Es/sigma^2 must be finite")
    summed = H.sum(axis=2)  # (N, M, E)
    per_sample = np.sum(np.abs(summed) ** 2, axis=(1, 2)) / (H.shape[1] * H.shape[3])
    energy = P * float(per_sample.mean())
    return energy / 10.0 ** (target_esn0_db / 10.0)


def split_dataset(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic 7:1:1 split into (train, val, test) index arrays."""
    if n < 9:
        raise ValueError(f"need at least 9 samples for a 7:1:1 split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = 7 * n // 9
    n_val = n // 9
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def save_dataset(path, ds: Dataset) -> None:
    """Write a dataset to the ``sipds-v1`` HDF5 container."""
    N = len(ds)
    with h5py.File(path, "w") as f:
        f.attrs["format"] = DATASET_FORMAT
        f.attrs["S"] = ds.spec.S
        f.attrs["T"] = ds.spec.T
        f.create_dataset(
            "H",
            data=flat_to_grid(ds.H, ds.spec).astype(np.complex64),
            chunks=(1, ds.H.shape[1], ds.H.shape[2], ds.spec.S, ds.spec.T),
        )
        f.create_dataset("path_gain", data=ds.path_gain.astype(np.float32))
        meta = f.create_group("meta")
        meta.create_dataset("velocity_kmh", data=np.asarray(ds.velocity_kmh, dtype=np.float32))
        meta.create_dataset("delay_spread_ns", data=np.asarray(ds.delay_spread_ns, dtype=np.float32))
        meta.create_dataset("distances_m", data=np.asarray(ds.distances_m, dtype=np.float32))
        meta.create_dataset("seed", data=np.asarray(ds.seeds, dtype=np.uint64))
        assert f["H"].shape[0] == N


def load_dataset(path) -> Dataset:
    """Read a ``sipds-v1`` file back; validates presence and shapes."""
    with h5py.File(path, "r") as f:
        fmt = f.attrs.get("format")
        if fmt != DATASET_FORMAT:
            raise DataFormatError(f"unsupported dataset format {fmt!r}, expected {DATASET_FORMAT!r}")
        for name in ("H", "path_gain"):
            if name not in f:
                raise DataFormatError(f"dataset file is missing required array {name!r}")
        if "meta" not in f:
            raise DataFormatError("dataset file is missing required group 'meta'")
        for name in ("velocity_kmh", "delay_spread_ns", "distances_m", "seed"):
            if name not in f["meta"]:
                raise DataFormatError(f"dataset file is missing required array 'meta/{name}'")
        H_grid = f["H"][()]
        if H_grid.ndim != 5:
            raise DataFormatError(f"array 'H' must be 5-dimensional, got {H_grid.ndim}")
        spec = ResourceGridSpec(S=int(f.attrs["S"]), T=int(f.attrs["T"]))
        if H_grid.shape[3:] != (spec.S, spec.T):
            raise DataFormatError(
                f"array 'H' trailing shape {H_grid.shape[3:]} does not match (S, T)=({spec.S}, {spec.T})"
            )
        N, M, K = H_grid.shape[:3]
        pg = f["path_gain"][()]
        if pg.shape != (N, M, K):
            raise DataFormatError(f"array 'path_gain' has shape {pg.shape}, expected {(N, M, K)}")
        dist = f["meta/distances_m"][()]
        if dist.shape != (N, K):
            raise DataFormatError(f"array 'meta/distances_m' has shape {dist.shape}, expected {(N, K)}")
        return Dataset(
            H=grid_to_flat(H_grid, spec),
            path_gain=pg,
            velocity_kmh=f["meta/velocity_kmh"][()],
            delay_spread_ns=f["meta/delay_spread_ns"][()],
            distances_m=dist,
            seeds=f["meta/seed"][()],
            spec=spec,
        )
