"""freeview: certainty-guided free-view generation from Gaussian scenes.

Turns a reconstructed 3D Gaussian scene plus its sparse training cameras into
a filtered set of high-certainty novel camera poses and renders, a weighted
view graph, curriculum training batches, and a pseudo-ground-truth schedule.
"""

from .certainty_grid import (
    CertaintyGrid,
    build_certainty_grid,
    sample_lookat,
    voxel_of,
)
from .scene_io import (
    CameraPose,
    GaussianScene,
    SceneBounds,
    compute_bounds,
    load_cameras,
    load_gaussian_ply,
    write_gaussian_ply,
)
from .selector import (
    FreeViewRecord,
    SelectorConfig,
    feasibility_filter,
    gate_and_rectify,
    nms_select,
    rectify_pose,
)
from .splat_renderer import (
    QualityReport,
    RenderOutput,
    black_pixel_ratio,
    depth_range_score,
    quality_score,
    render,
)
from .trajectory_gen import (
    CandidatePose,
    PlacementConfig,
    TrajectoryMode,
    generate_candidate_pool,
    generate_trajectory,
    jitter_pose,
    select_anchors,
)
from .training_feeds import (
    CurriculumBatch,
    CurriculumConfig,
    PseudoGtSchedule,
    build_pseudo_gt_schedule,
    free_view_loss,
    sample_batch,
    ssim,
)
from .view_graph import (
    ViewGraph,
    VisibilityVector,
    build_view_graph,
    compute_visibility,
    select_reference,
    wiou,
)

__version__ = "0.1.0"
