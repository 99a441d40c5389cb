"""Multiscale flatness analysis of finite weighted point measures.

L2 and sup beta numbers over dyadic cubes, per-point Jones sums, Whitney
decompositions around polygonal curves, Menger curvature energies and
certificate runs for curve-plus-remainder estimates.
"""

from .beta import BetaResult, Line, beta2, beta2_box, beta2_oracle, beta_sup, beta_sup_oracle, best_fit_line
from .certificates import (
    CertificateParams,
    CertificateReport,
    CubePartition,
    extract_lower_regular,
    lower_regularity_constant,
    partition_cubes,
    flatness_certificate,
    tst_sum,
)
from .curvature import CurvatureEnergy, curvature_energy, menger
from .dyadic import Box, DyadicCube, GridConvention, all_shifts, ancestor, cube_containing, dilate, index_atoms
from .errors import BetascopeError, CostGuardError, DegenerateInputError, HypothesisError, InputError
from .generators import (
    CascadeParams,
    curve_measure,
    four_corner_cantor,
    cascade_cell_masses,
    cascade_product,
    lebesgue_box,
    staircase_curve,
)
from .jones import (
    JonesProfile,
    ShiftedGridParams,
    shifted_grid_beta,
    jones_shifted,
    jones_normalized,
    jones_ordinary,
    jones_profiles,
    level_increments,
    truncation_delta,
)
from .levels import MultiscaleIndex
from .measure import (
    Atom,
    DiscreteMeasure,
    ball_mass,
    density_profile,
    doubling_ratio,
    read_measure,
    restrict,
    write_measure,
)
from .whitney import PolyCurve, group_by_distance_class, whitney_decompose, whitney_locate

__version__ = "0.1.0"

__all__ = [
    "Atom", "BetaResult", "BetascopeError", "Box", "CertificateParams", "CertificateReport",
    "CostGuardError", "CubePartition", "CurvatureEnergy", "DegenerateInputError", "DiscreteMeasure",
    "DyadicCube", "CascadeParams", "GridConvention", "HypothesisError", "InputError", "JonesProfile",
    "ShiftedGridParams", "Line", "MultiscaleIndex", "PolyCurve", "all_shifts", "ancestor", "ball_mass",
    "best_fit_line", "beta2", "beta2_box", "beta2_oracle", "shifted_grid_beta", "beta_sup",
    "beta_sup_oracle", "group_by_distance_class", "cube_containing", "curve_measure", "density_profile",
    "dilate", "doubling_ratio", "extract_lower_regular", "four_corner_cantor", "cascade_cell_masses",
    "cascade_product", "index_atoms", "jones_shifted", "jones_normalized", "jones_ordinary",
    "jones_profiles", "level_increments", "lebesgue_box", "curvature_energy", "lower_regularity_constant", "menger",
    "partition_cubes", "flatness_certificate", "read_measure", "restrict", "staircase_curve",
    "truncation_delta", "tst_sum", "whitney_decompose", "whitney_locate", "write_measure",
]
