"""Energy-efficient multi-user precoding for massive-MIMO LEO satellite downlinks.

Exact Dinkelbach/WMMSE optimization, an unfolded variant whose matrix inverse
is replaced by a trainable Newton-Schulz-style edge network, an end-to-end
edge GNN, and the tooling to train and compare them.
"""

from .baselines import BaselineSpec, baseline_ee, precode_baseline
from .channel import (
    NO_ERROR,
    ArrayGeometry,
    ChannelDistributionSpec,
    ChannelSet,
    draw_channel_set,
    draw_fast_fading,
    perturb_csi,
    steering_vector,
)
from .complex_linalg import NotPositiveDefiniteError, ShapeError, solve_hpd
from .e2e import E2EConfig, e2e_backward, e2e_forward, precode_e2e
from .models import E2EModel, UnfoldedModel, load_checkpoint, save_checkpoint
from .system import (
    PowerModel,
    SystemConfig,
    energy_efficiency,
    project_power,
    rate_ergodic_mc,
    rate_upper,
    sinr_upper,
    total_power,
)
from .unfolded import UnfoldedParams, precode_unfolded, taylor_step_exact, unfold_backward, unfold_forward
from .wmmse import dinkelbach_solve, update_b, wmmse_solve

__version__ = "0.1.0"
