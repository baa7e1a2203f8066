"""Two-arm Bell experiment toolkit.

Simulates timestamped per-arm event streams from hidden-variable models
or arbitrary no-signaling boxes, reduces them by coincidence matching to
setting-conditioned tables, and decides exactly (with certificate or
witness) whether a single joint distribution over all settings
reproduces those tables.
"""

__version__ = "0.1.0"

from .events import (ArmRecord, CoincidencePair, DetectionEvent,
                     FormatError, MatchDiagnostics, PairSet,
                     ResourceGuardError, read_arm_record, read_pairs,
                     write_arm_record, write_pairs)
from .models import (DetectorModel, LhvModel, NoSignalingBox,
                     TrialSchedule, apply_detector, pr_box, read_box_table,
                     sign_lhv_model, simulate_box, simulate_lhv,
                     singlet_box, table_lhv_model, vector_sign_lhv_model,
                     write_box_table)
from .coincidence import POLICIES, match_events
from .statistics import (ConditionalTable, NoSignalingReport, SummaryTable,
                         chsh, chsh_sigma, conditionals, correlator,
                         no_signaling_check, read_counts_csv, tabulate,
                         write_counts_csv)
from .feasibility import (ConsistencyReport, FeasibilityResult,
                          JointDistribution, MarginalProblem,
                          VerificationError, check_marginal_consistency,
                          enumerate_deterministic_bound, fine_check,
                          solve_joint_feasibility)

__all__ = [
    "ArmRecord", "CoincidencePair", "ConditionalTable",
    "ConsistencyReport", "DetectionEvent", "DetectorModel",
    "FeasibilityResult", "FormatError", "JointDistribution", "LhvModel",
    "MarginalProblem", "MatchDiagnostics", "NoSignalingBox",
    "NoSignalingReport", "POLICIES", "PairSet", "ResourceGuardError",
    "SummaryTable", "TrialSchedule", "VerificationError",
    "apply_detector", "check_marginal_consistency", "chsh", "chsh_sigma",
    "conditionals", "correlator", "enumerate_deterministic_bound",
    "fine_check", "match_events", "no_signaling_check", "pr_box",
    "read_arm_record", "read_box_table", "read_counts_csv", "read_pairs",
    "sign_lhv_model", "simulate_box", "simulate_lhv", "singlet_box",
    "solve_joint_feasibility", "table_lhv_model", "tabulate",
    "vector_sign_lhv_model", "write_arm_record", "write_box_table",
    "write_counts_csv", "write_pairs",
]
