"""cathlab: a virtual catheterization-lab engine.

Phase-resolved cardiac volumes and meshes in; ECG-synchronized virtual
fluoroscopy, hemodynamic quantification, stereo guidewire reconstruction,
and consistency scoring out.
"""

__version__ = "0.1.0"

from .errors import CathlabError, ValidationError  # noqa: F401
from .geometry import (  # noqa: F401
    CArmPose,
    ProjectionMatrix,
    angles_from_direction,
    direction_from_angles,
    project_point,
    projection_matrix,
    rotation_primary,
    rotation_secondary,
)
from .volume import AttenuationVolume, SurfaceMesh, TetMesh, load_volume, save_volume  # noqa: F401
from .phantom import PhantomSpec, generate_vessel_phantom  # noqa: F401
from .drr import Image2D, build_octree, cast_ray_integral, render_drr  # noqa: F401
from .enhance import EnhanceParams, clahe, cnr, enhance_pipeline, fwhm  # noqa: F401
from .dynamics import (  # noqa: F401
    DeformationField,
    HandleSet,
    PhaseClock,
    RigidTransform,
    SkinningWeights,
    compute_skinning_weights,
    deform_mesh,
    interpolate_phase,
    interpolate_pose,
    model_phase_at,
    phase_clock,
    register_volumes,
)
from .hemodynamics import (  # noqa: F401
    ECGTrace,
    HemodynamicsReport,
    build_curve,
    detect_r_peaks,
    edv_esv,
    heart_rates,
    hemodynamics_report,
    mesh_volume,
    stroke_cardiac_output,
)
from .stereo import (  # noqa: F401
    CameraModel,
    Centerline2D,
    GuidewireCurve,
    camera_project,
    extract_centerline,
    fit_bspline_ransac,
    match_curves_dp,
    reconstruct_guidewire,
    triangulate,
    vesselness,
)
from .metrics import (  # noqa: F401
    VesselDescriptor,
    dice,
    max_error_pct,
    mean_trajectory_error,
    morphological_consistency,
    wasserstein_trajectories,
)
