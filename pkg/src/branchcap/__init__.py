"""Critical branching random walk on Z^d: snakes, capacity, recurrence.

The package samples tree-indexed walks (snakes) driven by a critical
offspring law, solves the killed-walk fixed-point oracles that make visit
probabilities exactly computable on finite windows, estimates branching
capacity from the far-field visit law, and evaluates a Wiener-type shell
series that classifies unbounded sets as indicatively recurrent or
transient for the infinite snake.
"""

from .errors import (BadProbabilities, BranchcapError, BudgetExceeded,
                     ConfigError, DegenerateCovariance, MarginTooSmall,
                     NoConvergence, NonCentered, NotCritical, OverlappingSets,
                     RadiusTooSmall, ShellTooLarge, StepOutsideSupport,
                     StrictSubgroup, WindowTooSmall, ZeroVariance)
from .lattice import (JumpDistribution, WindowSpec, build_jump_distribution,
                      ball_volume_constant, euclidean_norm, free_green,
                      free_green_with_deficit, green_constant,
                      occupation_constant, occupation_green,
                      occupation_green_with_deficit, simple_walk,
                      theta_from_json, theta_norm, theta_preset,
                      theta_to_json)
from .trees import (AdjointDistribution, OffspringDistribution, PlaneTree,
                    adjoint_distribution, dfs_traversal, offspring_preset,
                    sample_adjoint_tree, sample_gw_tree, sample_infinite_tree,
                    sample_kesten_tree, size_biased_total, validate_offspring)
from .snakes import (TREE_ADJOINT, TREE_FINITE, TREE_INFINITE, TREE_KESTEN,
                     Estimate, SnakeRealization, TargetSet, count_visits,
                     estimate_joint, estimate_multi, estimate_p, estimate_q,
                     estimate_q_incipient, estimate_r, label_tree,
                     snake_visits, visit_count_profile)
from .oracle import (LatticeField, PathSpec, check_first_visit,
                     convolved_sum_check, field_summary, green_column_field,
                     green_killed, green_killed_with_deficit, harmonic_measure,
                     killing_field, occupation_pathsum, p_via_green,
                     path_weight, q_via_green, q_via_green_with_deficit,
                     read_field, restriction_ratio, solve_visit_fixpoint,
                     solve_visit_radiation, write_field)
from .capacity import (CapacityEstimate, ScalingReport, ball_scaling_study,
                       bcap_point, capacity_ratio, default_radii,
                       estimate_bcap, probe_points, subspace_ball,
                       write_capacity_csv)
from .wiener import (InfiniteSetSpec, SeriesReport, ShellDecomposition,
                     ShellTerm, classify_terms, correlation_check,
                     estimate_shell_visit, low_dim_io_check, preset_spec,
                     shell_refinement, shells, visits_io_trace, wiener_series,
                     write_terms_csv)

__version__ = "0.1.0"
