"""Lilypad models for branching random walk in a Pareto potential.

Submodules: ``environment`` (potentials and scaling), ``lilypad``
(deterministic lilypad fields), ``brw_simulator`` (exact Monte Carlo),
``pam_solver`` (log-domain PAM), ``analysis`` (comparisons, bounds and
scenarios), ``textio`` (file formats) and ``cli``.
"""

__version__ = "0.1.0"

from .environment import (Environment, ScalingConstants, derive_scaling, max_potential,
                          sample_environment, tail_count, with_potential)
from .errors import (EnvironmentMismatch, FormatError, InfeasibleScenario, InvalidParameter,
                     LilypadError, SnapshotError, StiffnessError, UnsettledSite, WindowError)
from .lilypad import (LilypadField, MassField, SupportSet, exactness_certificate, mass_field,
                      optimal_path, pam_lambda, pam_tau, solve_hitting_times, support)
from .brw_simulator import BRWRecord, Caps, hitting_fields, rescaled_counts, simulate
from .pam_solver import PamField, pam_growth, pam_hitting, solve_pam
from .analysis import (ComparisonReport, ScenarioSpec, build_scenario, check_scenario, compare,
                       connected_components, error_terms, hausdorff, intermittency_ratio,
                       jump_tail, maximizer)

__all__ = [
    "Environment", "ScalingConstants", "derive_scaling", "max_potential", "sample_environment",
    "tail_count", "with_potential",
    "EnvironmentMismatch", "FormatError", "InfeasibleScenario", "InvalidParameter",
    "LilypadError", "SnapshotError", "StiffnessError", "UnsettledSite", "WindowError",
    "LilypadField", "MassField", "SupportSet", "exactness_certificate", "mass_field",
    "optimal_path", "pam_lambda", "pam_tau", "solve_hitting_times", "support",
    "BRWRecord", "Caps", "hitting_fields", "rescaled_counts", "simulate",
    "PamField", "pam_growth", "pam_hitting", "solve_pam",
    "ComparisonReport", "ScenarioSpec", "build_scenario", "check_scenario", "compare",
    "connected_components", "error_terms", "hausdorff", "intermittency_ratio",
    "jump_tail", "maximizer",
]
