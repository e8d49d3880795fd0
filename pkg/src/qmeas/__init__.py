"""Finite-dimensional engine for measurement-event probabilities.

Measurement events are transitions into a record sector of a truncated
Hilbert space.  The layers, bottom to top: operator and subspace primitives,
restricted propagators, event-chain class operators, temporal smearing,
detection operators with their positivity diagnostics, detector worldtubes
and two-current kernels, truncated field models with closed-time-path
correlators, and the assembly that contracts all of it into densities over
event coordinates and pointer outcomes.  The ``qmeas`` console script and
:func:`qmeas.cli.main` drive scenario files end to end.
"""

from .operators import (DEFAULT_DIMENSION_CAP, Operator, SubspaceSplit,
                        density_matrix, herm_eig, is_hermitian, lift, mat_exp,
                        positivity_report, random_hermitian, random_state,
                        tensor_product)
from .smearing import (QuadratureRule, SmearingConfig, SmearingWindowWarning,
                       f_sigma, f_window, g_sigma, g_window, gauss_legendre,
                       space_rule, time_rule, trapezoid_rule, w_delta)
from .evolution import (MonotoneMap, free_evolution, restricted_propagator,
                        restricted_propagator_family,
                        restricted_propagator_trotter, unitary_family)
from .histories import (EventSpec, class_operator, class_operator_exact_family,
                        class_operator_n, class_operator_perturbative,
                        heisenberg_event_family, heisenberg_event_op,
                        time_ordered_class_n, time_ordered_product)
from .povm import (ConsistencyReport, EventChannel, NEventPovmFamily,
                   NoDetectionReport, PovmElement, WindowInsufficiencyWarning,
                   ZenoReport, consistency_offdiagonal,
                   integrated_class_operator, interval_probability,
                   no_detection_operator, povm_density, povm_n_family,
                   prob_density, prob_density_large_sigma, prob_density_n,
                   zeno_diagnostic)
from .detector import (CheckReport, DetectorModel, WorldTube, boost_embedding,
                       boost_matrix, embedding_eval, nonsimultaneity_check,
                       pointer_factorization_check, sqrt_psd,
                       stationarity_check)
from .field import (CovarianceReport, CtpPoint, FieldModel, ctp_correlator,
                    free_scalar_builder, heisenberg_composite,
                    load_field_model, snap_label, tensor_field_models,
                    translation_covariance_check)
from .assembly import (AssembledDensity, Assembly, Composite, DetectorCoupling,
                       DetectorKernel, EventRequest, KernelGrid,
                       NoDetectionSummary, ValidationError, ValidationResult,
                       assemble_no_detection, assemble_probability,
                       build_composite, density_grid, detector_kernel,
                       kernel_evaluator, validate_assembly)
from .scenario_io import (RunConfig, Scenario, ScenarioError,
                          bundled_scenario_path, list_bundled, load_scenario,
                          resolve_scenario)
from .outputs import read_csv, write_csv, write_json

__all__ = [
    "DEFAULT_DIMENSION_CAP", "Operator", "SubspaceSplit", "density_matrix",
    "herm_eig", "is_hermitian", "lift", "mat_exp", "positivity_report",
    "random_hermitian", "random_state", "tensor_product",
    "QuadratureRule", "SmearingConfig", "SmearingWindowWarning", "f_sigma",
    "f_window", "g_sigma", "g_window", "gauss_legendre", "space_rule",
    "time_rule", "trapezoid_rule", "w_delta",
    "MonotoneMap", "free_evolution", "restricted_propagator",
    "restricted_propagator_family", "restricted_propagator_trotter",
    "unitary_family",
    "EventSpec", "class_operator", "class_operator_exact_family",
    "class_operator_n", "class_operator_perturbative",
    "heisenberg_event_family", "heisenberg_event_op", "time_ordered_class_n",
    "time_ordered_product",
    "ConsistencyReport", "EventChannel", "NEventPovmFamily",
    "NoDetectionReport", "PovmElement", "WindowInsufficiencyWarning",
    "ZenoReport", "consistency_offdiagonal", "integrated_class_operator",
    "interval_probability", "no_detection_operator", "povm_density",
    "povm_n_family", "prob_density", "prob_density_large_sigma",
    "prob_density_n", "zeno_diagnostic",
    "CheckReport", "DetectorModel", "WorldTube", "boost_embedding",
    "boost_matrix", "embedding_eval", "nonsimultaneity_check",
    "pointer_factorization_check", "sqrt_psd", "stationarity_check",
    "CovarianceReport", "CtpPoint", "FieldModel", "ctp_correlator",
    "free_scalar_builder", "heisenberg_composite", "load_field_model",
    "snap_label", "tensor_field_models", "translation_covariance_check",
    "AssembledDensity", "Assembly", "Composite", "DetectorCoupling",
    "DetectorKernel", "EventRequest", "KernelGrid", "NoDetectionSummary",
    "ValidationError", "ValidationResult", "assemble_no_detection",
    "assemble_probability", "build_composite", "density_grid",
    "detector_kernel", "kernel_evaluator", "validate_assembly",
    "RunConfig", "Scenario", "ScenarioError", "bundled_scenario_path",
    "list_bundled", "load_scenario", "resolve_scenario",
    "read_csv", "write_csv", "write_json",
]
