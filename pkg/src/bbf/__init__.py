"""Boundary-pinned latent diffusion for context-aware frame interpolation."""

__version__ = "0.1.0"

from .synthdata import (  # noqa: F401
    AudioTrack,
    Clip,
    RegionMasks,
    SceneSpec,
    make_scene,
    synth_audio,
    synth_clip,
)
from .flow_baseline import (  # noqa: F401
    FlowField,
    Trajectory,
    backward_warp,
    curvature_report,
    interpolate_classical,
    minimize_trajectory,
    reprojection_loss,
    trajectory_energy,
)
from .latent_codec import InterpMask, LatentCodec, LatentSeq  # noqa: F401
from .conditioning import ConditionBundle, ConditioningStack, mask_audio  # noqa: F401
from .backbone import BlockConfig, Denoiser  # noqa: F401
from .diffusion import (  # noqa: F401
    InterpolationPipeline,
    TrainSchedule,
    schedule_lookup,
    train,
    weight_map,
    weighted_rec_loss,
)
from .evalkit import MetricReport, psnr, ssim, sync_proxy  # noqa: F401
