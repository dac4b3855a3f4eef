"""ghostflood: black-box ghost-object flooding attacks on object detectors.

Harvest detector-recognized patches from a corpus once, then reuse them to
craft L-inf bounded adversarial images that make a detector report dozens of
ghost objects, all through a query-budgeted black-box interface.
"""

from .attack import AttackConfig, AttackResult, is_success, run_attack
from .harness import (
    CostBreakdown,
    EvalReport,
    PricingModel,
    estimate_cost,
    load_report,
    run_eval,
    write_report,
)
from .imagecore import (
    ColorStats,
    DecodeError,
    ImageTensor,
    Perturbation,
    PixelMask,
    RegionRect,
    TransformSpec,
    clamp_ball,
    color_stats,
    color_transform,
    crop,
    linf_distance,
    load_image,
    parse_transform,
    paste_patch,
    resize,
    save_image,
)
from .mock import MockDetector, MockDetectorConfig, Template, default_template_library, mock_detect
from .oracle import (
    BudgetExhausted,
    Detection,
    DetectionSet,
    HttpOracle,
    Oracle,
    OracleTransportError,
    ProtocolError,
    QueryBudget,
    iou,
    nms,
)
from .patchdb import (
    DriftReport,
    EmptyHarvestError,
    IndexDigestError,
    IndexVersionError,
    NoCandidatesError,
    PatchIndex,
    PatchRecord,
    consistency_filter,
    harvest,
    load_index,
    probe_drift,
    save_index,
    select_candidates,
)
from .projection import (
    Checkpoint,
    ManipulationResult,
    ProjectionParams,
    ToleranceSchedule,
    drop_ineligible,
    eligible_mask,
    project,
    refine_perturbation,
    rescale_eligible,
)
from .selection import (
    CellState,
    Grid,
    SelectionConfig,
    box_cell_counts,
    cell_box_count,
    compose_cell_patch,
    make_grid,
    populate_cells,
)

__version__ = "0.1.0"
