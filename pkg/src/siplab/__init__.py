"""Link-level laboratory for multiuser MIMO-OFDM uplink with superimposed pilots.

Pilot and data symbols share every resource element through a learnable
per-user, per-RE power split; the package provides the full signal chain
(superimposition, fading channel, LS estimation, pilot cancellation, MMSE
detection), classical iterative baselines, an end-to-end trainable receiver
conditioned on large-scale path gains, and evaluation machinery.
"""

from .channel import (
    ChannelSample,
    Dataset,
    SimConfig,
    calibrate_noise,
    gen_tdl_channel,
    generate_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .errors import ConfigurationError, DataFormatError
from .evaluation import (
    MetricRecord,
    error_rates,
    make_region_masks,
    nmse,
    pdp_region_stats,
    sweep,
)
from .grid import (
    PilotBook,
    ResourceGridSpec,
    grid_index,
    make_dft_pilots,
    re_index,
    verify_orthogonality,
)
from .networks import ArchConfig, ChannelNet, DataNet, count_params, param_report
from .presets import PRESETS, get_preset
from .receiver import (
    cancel_data,
    cancel_pilots,
    despread_smooth,
    hard_decision,
    icedd,
    ls_estimate,
    mmse_detect,
    tp_receive,
)
from .training import (
    TrainConfig,
    default_config,
    forward_chain,
    grad_check,
    load_checkpoint,
    symbol_mse_loss,
    train,
)
from .transmitter import (
    build_tp_frame,
    modulate_qam,
    pdp_from_weights,
    qam_constellation,
    superimpose,
    transmit,
)

__version__ = "0.1.0"
