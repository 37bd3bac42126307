"""Deterministic facial-drift video blending and a spatiotemporal adapter reference.

The library synthesizes pseudo-fake video clips by perturbing facial
landmarks per frame, extracting soft region masks, and blending each
frame with its warped self (plus two donor-frame comparison strategies),
all driven by explicit seeded random streams so outputs are byte-exact
reproducible. It also ships a desk-scale numerical reference of a
two-stream spatiotemporal adapter: depthwise 3-D convolutions, cross
attention, and the probes and parameter accounting that go with it.
"""

from .adapter import (
    StAConfig,
    StAOutputBundle,
    StAWeights,
    adapter_forward,
    cross_fuse,
    init_weights,
    param_count,
    probe_constant_video,
    spatial_branch,
    temporal_branch,
)
from .blending import (
    BlendWeights,
    Frame,
    SynthesisConfig,
    blend_region,
    composite,
    quantize,
    synthesize_frame_cbi,
    synthesize_frame_pfig,
    synthesize_frame_vb,
)
from .errors import DriftBlendError
from .geometry import (
    REGION_ORDER,
    REGION_SLICES,
    AffineTransform,
    LandmarkSet,
    PerturbationBounds,
    PerturbationParams,
    build_affine,
    sample_perturbation,
    transform_landmarks,
    warp_image,
    warp_pixels,
)
from .masking import FalloffConfig, RegionMask, clip, region_mask, signed_distance
from .pipeline import (
    Clip,
    ClipSamplingPolicy,
    DriftReport,
    SynthesisManifest,
    drift_statistic,
    load_clip,
    sample_clip,
    store_clip,
    synthesize_clip,
    verify_manifest,
)
from .seeding import derive_frame_seed, make_rng
from .tensor_ops import (
    AttentionParams,
    DepthwiseKernel3D,
    depthwise_conv3d,
    flatten_positions,
    multi_head_attention,
    pointwise_project,
    unflatten_positions,
)

__version__ = "0.1.0"
