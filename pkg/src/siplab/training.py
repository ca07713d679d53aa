"""End-to-end optimization of the power weights and receiver networks.

The whole transmit/receive chain is differentiable, so one Adam optimizer
updates the power-control weights, the channel estimator, and the data
detector jointly against the symbol mean-squared error.  Data symbols and
noise are redrawn every step; channel samples cycle through the training
split.  All randomness flows through explicit generators so equal seeds
reproduce runs exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, fields

import h5py
import numpy as np
import torch

from .channel import Dataset, calibrate_noise, split_dataset
from .errors import ConfigurationError, DataFormatError
from .grid import ResourceGridSpec, make_dft_pilots
from .networks import ArchConfig, ChannelNet, DataNet, count_params
from .presets import get_preset
from .receiver import cancel_pilots, ls_estimate, mmse_detect
from .transmitter import qam_constellation, superimpose

__all__ = [
    "TrainConfig",
    "ChainOutput",
    "TrainResult",
    "CheckpointBundle",
    "CHECKPOINT_FORMAT",
    "symbol_mse_loss",
    "channel_fit_loss",
    "forward_chain",
    "build_models",
    "init_power_weights",
    "default_config",
    "train",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_param_counts",
    "parse_config_file",
    "config_from_file",
]

CHECKPOINT_FORMAT = "sipckpt-v1"

METRICS_HEADER = ("epoch", "train_loss", "val_loss", "val_nmse_db", "lr", "seed")


@dataclass(frozen=True)
class TrainConfig:
    """Flat training configuration; mirrors the key=value config file."""

    preset: str = "desk"
    dataset: str = ""
    out_dir: str = "runs/default"
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    esn0_db_min: float = 10.0
    esn0_db_max: float = 14.0
    seed: int = 0
    qam_order: int = 16
    tx_power: float = 1.0
    lambda_ce: float = 0.0  # auxiliary channel-fit loss weight
    use_data_net: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be >= 1")
        if self.esn0_db_max < self.esn0_db_min:
            raise ConfigurationError("Es/sigma^2 range must be a nonempty interval")

    def canonical_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


def default_config(preset_name: str, **overrides) -> TrainConfig:
    """A TrainConfig seeded with the preset's training defaults."""
    p = get_preset(preset_name)
    base = dict(preset=p.name, epochs=p.epochs, batch_size=p.batch_size, lr=p.lr)
    base.update(overrides)
    return TrainConfig(**base)


def parse_config_file(path) -> dict:
    """Parse a flat key=value config file; unknown keys are errors."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    casts = {"int": int, "float": float, "str": str, "bool": lambda s: s.lower() in ("1", "true", "yes")}
    out: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = casts[known[key]](val)
    return out


def config_from_file(path, **overrides) -> TrainConfig:
    values = parse_config_file(path)
    values.update(overrides)
    preset = values.pop("preset", "desk")
    return default_config(preset, **values)


# ---------------------------------------------------------------------------
# Losses and the forward chain


def symbol_mse_loss(d: torch.Tensor, d_hat: torch.Tensor) -> torch.Tensor:
    """Sum over users and REs of squared complex differences, per frame.

    Input (..., K, E); returns (...) so callers can average over a batch.
    """
    diff = d - d_hat
    return (diff.real**2 + diff.imag**2).sum(dim=(-2, -1))


def channel_fit_loss(H: torch.Tensor, H_hat: torch.Tensor) -> torch.Tensor:
    """Unnormalized channel error energy per frame (the NMSE numerator)."""
    diff = H - H_hat
    return (diff.real**2 + diff.imag**2).sum(dim=(-3, -2, -1))


@dataclass
class ChainOutput:
    """Everything produced by one pass through the transmit/receive chain."""

    d: torch.Tensor  # (..., K, E) transmitted symbols
    d_hat: torch.Tensor  # (..., K, E) final estimates
    h_hat: torch.Tensor  # (..., M, K, E) channel estimate fed to detection
    h_ls: torch.Tensor  # (..., M, K, E) raw LS estimate
    d_mmse: torch.Tensor  # (..., K, E) equalized symbols before refinement
    rho: torch.Tensor  # (K, E) power split
    y: torch.Tensor  # (..., M, E) received signal


def forward_chain(
    H: torch.Tensor,
    path_gain: torch.Tensor,
    power_weights: torch.Tensor,
    channel_net: ChannelNet | None,
    data_net: DataNet | None,
    phi: torch.Tensor,
    sigma2,
    rng: torch.Generator | None = None,
    points: np.ndarray | None = None,
    P: float = 1.0,
    d: torch.Tensor | None = None,
    noise_unit: torch.Tensor | None = None,
) -> ChainOutput:
    """Run superimposition, channel, LS, estimation, cancellation, detection.

    ``H`` is (..., M, K, E) with any leading batch shape.  Data symbols and
    unit-variance noise are drawn from ``rng`` unless passed explicitly
    (sweeps pass them so every scheme sees identical realizations).  With
    ``channel_net``/``data_net`` set to None the chain degrades to the raw
    LS + MMSE receiver; the whole map stays differentiable with respect to
    the power weights and both networks.
    """
    rho = torch.sigmoid(power_weights)
    cdtype = H.dtype
    if d is None:
        if points is None or rng is None:
            raise ValueError("need either explicit data symbols or (points, rng) to draw them")
        labels = torch.randint(0, len(points), H.shape[:-3] + H.shape[-2:], generator=rng)
        d = torch.as_tensor(np.asarray(points), dtype=cdtype)[labels]
    s_tx = superimpose(rho, phi, d, P)
    y = torch.einsum("...mke,...ke->...me", H, s_tx)
    sigma2_t = torch.as_tensor(sigma2, dtype=y.real.dtype)
    if noise_unit is None and rng is not None:
        re = torch.randn(y.shape, generator=rng, dtype=y.real.dtype)
        im = torch.randn(y.shape, generator=rng, dtype=y.real.dtype)
        noise_unit = torch.complex(re, im) / math.sqrt(2.0)
    if noise_unit is not None:
        y = y + torch.sqrt(sigma2_t).reshape(sigma2_t.shape + (1,) * (y.ndim - sigma2_t.ndim)) * noise_unit
    h_ls = ls_estimate(y, rho, phi, P)
    h_hat = channel_net(h_ls, path_gain) if channel_net is not None else h_ls
    y_sp = cancel_pilots(y, h_hat, rho, phi, P)
    d_mmse = mmse_detect(y_sp, h_hat, rho, P, sigma2_t)
    d_hat = data_net(d_mmse) if data_net is not None else d_mmse
    return ChainOutput(d=d, d_hat=d_hat, h_hat=h_hat, h_ls=h_ls, d_mmse=d_mmse, rho=rho, y=y)


# ---------------------------------------------------------------------------
# Model construction


def init_power_weights(K: int, E: int, rho0: float = 0.3, dtype=torch.float32) -> torch.nn.Parameter:
    """Learnable per-user per-RE weights initialized at sigmoid^-1(rho0)."""
    w0 = math.log(rho0 / (1.0 - rho0))
    return torch.nn.Parameter(torch.full((K, E), w0, dtype=dtype))


def build_models(
    spec: ResourceGridSpec,
    arch: ArchConfig,
    K: int,
    seed: int = 0,
    use_data_net: bool = True,
    dtype=torch.float32,
) -> tuple[torch.nn.Parameter, ChannelNet, DataNet | None]:
    """Deterministically initialized power weights and receiver networks."""
    torch.manual_seed(seed)
    w_p = init_power_weights(K, spec.E, dtype=dtype)
    channel_net = ChannelNet(spec, arch).to(dtype)
    data_net = DataNet(spec, arch).to(dtype) if use_data_net else None
    return w_p, channel_net, data_net


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_nmse_db: float
    lr: float
    seed: int


@dataclass
class TrainResult:
    config: TrainConfig
    checkpoint_path: str
    metrics_path: str
    history: list[EpochMetrics]
    best_epoch: int
    best_val_loss: float


def _nmse_db(H: torch.Tensor, H_hat: torch.Tensor, floor: float = -300.0) -> float:
    num = float(channel_fit_loss(H, H_hat).sum())
    den = float((H.real**2 + H.imag**2).sum())
    if num == 0.0:
        return floor
    return max(10.0 * math.log10(num / den), floor)


def train(cfg: TrainConfig, dataset: Dataset, quiet: bool = True) -> TrainResult:
    """Optimize (power weights, channel net, data net) on the training split.

    Writes an append-only metrics CSV and keeps the best-validation-loss
    checkpoint under ``cfg.out_dir``.  Aborts with the offending batch
    serialized if the loss goes non-finite.
    """
    preset = get_preset(cfg.preset)
    spec, arch = dataset.spec, preset.arch
    N, M, K, E = dataset.H.shape

    train_idx, val_idx, _ = split_dataset(N, cfg.seed)
    H_all = torch.as_tensor(dataset.H, dtype=torch.complex64)
    A_all = torch.as_tensor(dataset.path_gain, dtype=torch.float32)

    energy = calibrate_noise(cfg.tx_power, dataset.H[train_idx], 0.0)  # sigma^2 at 0 dB
    phi = torch.as_tensor(make_dft_pilots(K, spec).phi, dtype=torch.complex64)
    points = qam_constellation(cfg.qam_order).points

    w_p, channel_net, data_net = build_models(spec, arch, K, cfg.seed, cfg.use_data_net)
    params = [w_p] + list(channel_net.parameters())
    if data_net is not None:
        params += list(data_net.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))

    gen = torch.Generator().manual_seed(cfg.seed)
    os.makedirs(cfg.out_dir, exist_ok=True)
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    ckpt_path = os.path.join(cfg.out_dir, "best.ckpt")
    new_file = not os.path.exists(metrics_path)
    history: list[EpochMetrics] = []
    best_val, best_epoch = float("inf"), -1

    def run_batch(idx: torch.Tensor, generator: torch.Generator, sigma2: float) -> tuple[torch.Tensor, ChainOutput]:
        out = forward_chain(
            H_all[idx], A_all[idx], w_p, channel_net, data_net, phi,
            sigma2, rng=generator, points=points, P=cfg.tx_power,
        )
        loss = symbol_mse_loss(out.d, out.d_hat)
        if cfg.lambda_ce:
            loss = loss + cfg.lambda_ce * channel_fit_loss(H_all[idx], out.h_hat)
        return loss.mean(), out

    def draw_sigma2(generator: torch.Generator) -> float:
        u = torch.rand((), generator=generator).item()
        target = cfg.esn0_db_min + (cfg.esn0_db_max - cfg.esn0_db_min) * u
        return energy / 10.0 ** (target / 10.0)

    with open(metrics_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(METRICS_HEADER)
        for epoch in range(1, cfg.epochs + 1):
            channel_net.train()
            if data_net is not None:
                data_net.train()
            perm = torch.randperm(len(train_idx), generator=gen)
            epoch_losses = []
            for start in range(0, len(train_idx), cfg.batch_size):
                batch = torch.as_tensor(train_idx)[perm[start : start + cfg.batch_size]]
                sigma2 = draw_sigma2(gen)
                opt.zero_grad()
                loss, _ = run_batch(batch, gen, sigma2)
                if not torch.isfinite(loss):
                    dump = os.path.join(cfg.out_dir, "nonfinite_batch.npz")
                    np.savez(dump, indices=batch.numpy(), sigma2=sigma2, epoch=epoch)
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}; offending batch saved to {dump}"
                    )
                loss.backward()
                opt.step()
                epoch_losses.append(float(loss))

            channel_net.eval()
            if data_net is not None:
                data_net.eval()
            with torch.no_grad():
                val_gen = torch.Generator().manual_seed(cfg.seed + 0x5EED)
                sigma2_val = energy / 10.0 ** ((cfg.esn0_db_min + cfg.esn0_db_max) / 20.0)
                val_batch = torch.as_tensor(val_idx)
                val_loss_t, val_out = run_batch(val_batch, val_gen, sigma2_val)
                val_loss = float(val_loss_t)
                val_nmse = _nmse_db(H_all[val_batch], val_out.h_hat)

            row = EpochMetrics(
                epoch=epoch,
                train_loss=float(np.mean(epoch_losses)),
                val_loss=val_loss,
                val_nmse_db=val_nmse,
                lr=cfg.lr,
                seed=cfg.seed,
            )
            history.append(row)
            writer.writerow(
                [row.epoch, repr(row.train_loss), repr(row.val_loss), repr(row.val_nmse_db), repr(row.lr), row.seed]
            )
            fh.flush()
            if not quiet:
                print(
                    f"epoch {epoch:4d}  train {row.train_loss:10.4f}  val {row.val_loss:10.4f}"
                    f"  val NMSE {row.val_nmse_db:7.2f} dB"
                )
            if val_loss < best_val:
                best_val, best_epoch = val_loss, epoch
                save_checkpoint(ckpt_path, cfg, spec, arch, w_p, channel_net, data_net, opt, epoch)

    return TrainResult(
        config=cfg,
        checkpoint_path=ckpt_path,
        metrics_path=metrics_path,
        history=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
    )


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(
    seed: int = 0,
    n_coords: int = 32,
    step: float = 1e-4,
    esn0_db: float = 12.0,
) -> dict[str, float]:
    """Compare autodiff gradients to central differences on the tiny preset.

    Runs the full chain in float64 with fixed draws; for each parameter
    group, ``n_coords`` randomly chosen coordinates are perturbed by
    ``±step``.  Returns the max relative error per group.
    """
    from .channel import generate_dataset  # deferred: keeps import graph flat

    preset = get_preset("tiny")
    ds = generate_dataset(preset.sim, seed)
    spec, K = ds.spec, preset.sim.K
    H = torch.as_tensor(ds.H[:2], dtype=torch.complex128)
    A = torch.as_tensor(ds.path_gain[:2], dtype=torch.float64)
    phi = torch.as_tensor(make_dft_pilots(K, spec).phi, dtype=torch.complex128)
    points = qam_constellation(16).points
    sigma2 = calibrate_noise(1.0, ds.H[:2], esn0_db)

    w_p, channel_net, data_net = build_models(spec, preset.arch, K, seed, dtype=torch.float64)
    groups = {"W_p": [w_p], "W_c": list(channel_net.parameters()), "W_d": list(data_net.parameters())}

    def loss_value() -> torch.Tensor:
        rng = torch.Generator().manual_seed(seed + 1)
        out = forward_chain(H, A, w_p, channel_net, data_net, phi, sigma2, rng=rng, points=points)
        return symbol_mse_loss(out.d, out.d_hat).mean()

    loss = loss_value()
    loss.backward()

    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    for name, params in groups.items():
        flat_grad = torch.cat([p.grad.reshape(-1) for p in params])
        total = flat_grad.numel()
        coords = rng.choice(total, size=min(n_coords, total), replace=False)
        worst = 0.0
        for c in coords:
            # locate the owning tensor of flat coordinate c
            offset = int(c)
            for p in params:
                if offset < p.numel():
                    break
                offset -= p.numel()
            with torch.no_grad():
                orig = p.reshape(-1)[offset].item()
                p.reshape(-1)[offset] = orig + step
                up = float(loss_value())
                p.reshape(-1)[offset] = orig - step
                down = float(loss_value())
                p.reshape(-1)[offset] = orig
            fd = (up - down) / (2.0 * step)
            ad = float(flat_grad[c])
            rel = abs(fd - ad) / max(abs(fd), abs(ad), 1e-10)
            worst = max(worst, rel)
        report[name] = worst
    return report


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class CheckpointBundle:
    power_weights: torch.nn.Parameter
    channel_net: ChannelNet
    data_net: DataNet | None
    spec: ResourceGridSpec
    arch: ArchConfig
    epoch: int
    config_hash: str
    config_text: str


def save_checkpoint(path, cfg, spec, arch, w_p, channel_net, data_net, optimizer, epoch) -> None:
    """Write the ``sipckpt-v1`` named-array container."""
    with h5py.File(path, "w") as f:
        f.attrs["format"] = CHECKPOINT_FORMAT
        f.attrs["epoch"] = epoch
        f.attrs["config_hash"] = cfg.config_hash()
        f.attrs["config_text"] = cfg.canonical_text()
        f.attrs["S"], f.attrs["T"] = spec.S, spec.T
        f.attrs["arch"] = json.dumps(
            {k: getattr(arch, k) for k in (
                "L_f", "L_s", "mlp_hidden", "enc_widths", "block_convs",
                "n_bottleneck", "det_channels", "det_depth", "negative_slope",
            )}
        )
        f.attrs["use_data_net"] = data_net is not None
        f.create_dataset("power/W_p", data=w_p.detach().numpy())
        for prefix, module in (("channel_net", channel_net), ("data_net", data_net)):
            if module is None:
                continue
            for key, tensor in module.state_dict().items():
                f.create_dataset(f"{prefix}/{key}", data=tensor.numpy())
        for idx, state in optimizer.state_dict()["state"].items():
            for key, value in state.items():
                data = value.numpy() if torch.is_tensor(value) else np.asarray(value)
                f.create_dataset(f"optim/{idx}/{key}", data=data)


def load_checkpoint(path) -> CheckpointBundle:
    """Rebuild the networks from a ``sipckpt-v1`` file."""
    with h5py.File(path, "r") as f:
        fmt = f.attrs.get("format")
        if fmt != CHECKPOINT_FORMAT:
            raise DataFormatError(f"unsupported checkpoint format {fmt!r}, expected {CHECKPOINT_FORMAT!r}")
        if "power/W_p" not in f:
            raise DataFormatError("checkpoint is missing required array 'power/W_p'")
        spec = ResourceGridSpec(S=int(f.attrs["S"]), T=int(f.attrs["T"]))
        arch_kv = json.loads(f.attrs["arch"])
        arch_kv["enc_widths"] = tuple(arch_kv["enc_widths"])
        arch = ArchConfig(**arch_kv)
        w_p = torch.nn.Parameter(torch.as_tensor(f["power/W_p"][()]))
        channel_net = ChannelNet(spec, arch)
        channel_net.load_state_dict(
            {k[len("channel_net/"):]: torch.as_tensor(f[k][()]) for k in _walk(f, "channel_net")}
        )
        channel_net.eval()
        data_net = None
        if bool(f.attrs["use_data_net"]):
            data_net = DataNet(spec, arch)
            data_net.load_state_dict(
                {k[len("data_net/"):]: torch.as_tensor(f[k][()]) for k in _walk(f, "data_net")}
            )
            data_net.eval()
        return CheckpointBundle(
            power_weights=w_p,
            channel_net=channel_net,
            data_net=data_net,
            spec=spec,
            arch=arch,
            epoch=int(f.attrs["epoch"]),
            config_hash=str(f.attrs["config_hash"]),
            config_text=str(f.attrs["config_text"]),
        )


def _walk(f: h5py.File, prefix: str) -> list[str]:
    names: list[str] = []

    def visit(name: str, obj) -> None:
        if isinstance(obj, h5py.Dataset):
            names.append(f"{prefix}/{name}")

    if prefix in f:
        f[prefix].visititems(visit)
    return names


def checkpoint_param_counts(bundle: CheckpointBundle) -> dict[str, int]:
    from .networks import param_report

    return param_report(bundle.power_weights, bundle.channel_net, bundle.data_net)
