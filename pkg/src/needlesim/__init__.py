"""needlesim: volume rendering, registration, and needle-insertion training.

The pipeline loads medical volumes (NRRD, DICOM subset) and layered anatomy
meshes, renders them by software ray casting (dvr / mip / iso) through 1D
transfer functions, registers models onto scans with six-landmark boxes,
slices with cut-out and view planes, and simulates scored needle insertion.
Sessions persist to JSON and are served over a local HTTP API.
"""

from .errors import (
    Conflict,
    DegenerateLandmarks,
    EmptyMesh,
    InconsistentSeries,
    InvalidArgument,
    InvalidDepth,
    NeedleSimError,
    NonUniformSpacing,
    ParseError,
    TruncatedData,
    UnknownId,
    UnknownLayer,
    UnknownPreset,
    UnsupportedFormat,
    UnsupportedVersion,
)
from .ingest import (
    Histogram,
    Mesh,
    Volume,
    histogram,
    load_dicom_series,
    load_mesh,
    load_nrrd,
    volume_from_array,
    write_nrrd,
    write_obj,
)
from .transfer import (
    PRESET_NAMES,
    Lut,
    TransferFunction1D,
    apply_contrast,
    build_lut,
    classify,
    default_tf,
    lut_coordinate,
    preset_color_points,
    preset_scheme,
)
from .registration import (
    LandmarkSet,
    OrientedBox,
    SimilarityTransform,
    align,
    apply,
    box_from_landmarks,
    compose,
    layout,
)
from .anatomy import (
    Acupoint,
    AnatomyModel,
    Layer,
    acupoint_world_position,
    load_acupoints,
    load_model,
    set_layer_visibility,
)
from .render import (
    Camera,
    Image,
    Overlays,
    RenderSettings,
    SlicingPlane,
    clip,
    composite_dvr,
    iso_hit,
    mip,
    render,
    resample_view_plane,
    sample,
    warm_kernels,
)
from .needling import (
    NEEDLE_LENGTHS_MM,
    LayerCrossing,
    Needle,
    ProjectedNeedle,
    ScoreReport,
    insert_needle,
    project_needle,
    project_point_to_plane,
    score,
    traverse,
)
from .scene import (
    Session,
    load,
    mutate,
    new_session,
    render_frame,
    replay,
    save,
    score_needle,
    slice_image,
)
from .sampledata import (
    box_mesh,
    head_volume_landmarks,
    icosphere,
    perf_volume,
    synthetic_head_volume,
    write_data_root,
    write_demo_model,
)
from .service import create_app, serve

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
