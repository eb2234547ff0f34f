"""Phase-field fatigue fracture simulation and failure classification.

A small finite element solver for an isothermal phase-field model of
fatigue fracture in a flat dog-bone specimen under tension, plus the
sensing, labeling, classification and uncertainty tooling built on it.
"""

__version__ = "0.1.0"

from .constitutive import (
    MaterialParams,
    damage_mobility,
    damage_potential,
    damage_potential_deriv,
    degradation,
    elasticity_matrix,
    fatigue_potential,
    fatigue_potential_deriv,
    fatigue_source,
)
from .errors import (
    AssemblyError,
    ConfigurationError,
    DataError,
    LabelingError,
    PflError,
    SplitError,
    StepError,
    TrainingError,
    UqError,
)
from .fem import Assembler, FieldState, GlobalOperators, assemble, free_energy
from .geometry import (
    Mesh,
    SensorGrid,
    SensorSet,
    SpecimenParams,
    build_specimen,
    default_sensor_grid,
    read_mesh,
    select_sensors,
    write_mesh,
)
from .labeling import (
    LabelVector,
    LoadCurve,
    compute_load_curve,
    label_binary,
    label_location9,
    label_multi3,
    label_multi4,
    load_curve_csv,
    read_labels,
    transition_time,
    write_labels,
)
from .classify import (
    AnnConfig,
    AnnModel,
    ConfusionMatrix,
    KnnModel,
    SplitSpec,
    accuracy,
    ann_predict,
    ann_train,
    confusion,
    cosine_distance,
    fit_knn,
    knn_cross_validate,
    knn_predict,
    load_ann_model,
    save_ann_model,
    save_knn_model,
    split,
    write_confusion,
)
from .sensing import (
    TimeSeriesMatrix,
    extract_patterns,
    load_series,
    patterns_from_phi,
    read_patterns,
    write_patterns,
)
from .timestepper import (
    BoundaryCondition,
    CaseConfig,
    NewmarkCoeffs,
    SimulationRecord,
    case_config,
    case_table,
    default_specimen,
    material_for_case,
    newmark_alphas,
    production_target_edge,
    ramp_bc,
    run_case,
    step_damage,
    step_fatigue,
    step_motion,
)
from .uq import UqResult, UqSpec, add_gaussian_noise, features_from_phi, mc_accuracy

__all__ = [
    "__version__",
    # constitutive
    "MaterialParams", "elasticity_matrix", "degradation", "damage_potential",
    "damage_potential_deriv", "fatigue_potential", "fatigue_potential_deriv",
    "damage_mobility", "fatigue_source",
    # errors
    "PflError", "ConfigurationError", "AssemblyError", "StepError",
    "TrainingError", "UqError", "DataError", "LabelingError", "SplitError",
    # geometry
    "SpecimenParams", "Mesh", "build_specimen", "write_mesh", "read_mesh",
    "SensorGrid", "SensorSet", "default_sensor_grid", "select_sensors",
    # fem
    "FieldState", "GlobalOperators", "Assembler", "assemble", "free_energy",
    # timestepper
    "NewmarkCoeffs", "newmark_alphas", "CaseConfig", "case_config", "case_table",
    "material_for_case", "default_specimen", "production_target_edge",
    "BoundaryCondition", "ramp_bc",
    "step_damage", "step_motion", "step_fatigue", "SimulationRecord", "run_case",
    # sensing
    "TimeSeriesMatrix", "patterns_from_phi", "extract_patterns", "load_series",
    "write_patterns", "read_patterns",
    # labeling
    "LoadCurve", "LabelVector", "compute_load_curve", "load_curve_csv",
    "transition_time",
    "label_binary", "label_multi3", "label_multi4", "label_location9",
    "write_labels", "read_labels",
    # classify
    "SplitSpec", "split", "cosine_distance", "KnnModel", "fit_knn", "knn_predict",
    "knn_cross_validate", "AnnConfig", "AnnModel", "ann_train", "ann_predict",
    "accuracy", "ConfusionMatrix", "confusion", "write_confusion",
    "save_knn_model", "save_ann_model", "load_ann_model",
    # uq
    "UqSpec", "UqResult", "add_gaussian_noise", "features_from_phi", "mc_accuracy",
]
