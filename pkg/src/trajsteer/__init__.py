"""Training-free bounding-box trajectory control for latent video diffusion.

Give the engine a token-id prompt, a target token, and a per-frame box
trajectory; it steers a deterministic DDIM sampler so the token's attention
(and hence the generated object) follows the boxes. Three mechanisms do the
steering: an initial noise prior mixed along the trajectory, gradient
descent on attention-map losses during the early denoising steps, and a
box-aligning shift around temporal attention. A seeded toy diffusion stack
is bundled so everything runs and is testable without pre-trained weights.
"""

from .backend import BackendAdapter, ToyBackend, ddim_invert, sample
from .boxes import (
    Box,
    BoxTrajectory,
    GridBox,
    Mask,
    build_mask,
    complex_trajectories,
    interpolate_trajectory,
    load_trajectory,
    quantize_box,
    quantize_trajectory_uniform,
    save_trajectory,
    simple_trajectories,
)
from .constraints import (
    GuidanceConfig,
    LossBreakdown,
    attention_centroid,
    guide_latent,
    loss_center,
    loss_inside,
    loss_outside,
    loss_similarity,
    top_p_mean,
    total_spatial_loss,
)
from .metrics import (
    ControlReport,
    Detection,
    control_metrics,
    detect_from_attention,
    iou,
    load_external_detections,
    save_detections,
)
from .pipeline import RunConfig, RunResult, ablate, generate
from .prior import NoisePrior, build_initial_noise, generate_meta_video, local_mixup
from .sampling import run_guided_sampling
from .schedule import NoiseSchedule, add_noise, ddim_step, make_schedule
from .shift_attention import ShiftPlan, make_stam_wrapper, shift, shifted_temporal_attention
from .testbed import (
    AttentionStack,
    PromptSpec,
    TestbedConfig,
    ToyVideoDenoiser,
    cross_attention_map,
    temporal_rearrange,
    temporal_unrearrange,
    toy_decode,
    toy_encode,
)

__version__ = "0.1.0"
