"""Graph edit distance solvers and ground-truth pair labeling."""

from .bipartite import bipartite_cost_matrix, ged_bipartite
from .core import (
    EXACT,
    LOWER,
    UPPER,
    EditPath,
    GedResult,
    NodeMapping,
    apply_edit_path,
    edit_path_from_mapping,
    induced_edit_cost,
)
from .hed import hed_lower
from .lsap import lsap_solve
from .pairs import (
    ALGOS,
    DEFAULT_BEAM_WIDTH,
    PairRecord,
    PairTable,
    compute_ged,
    ensemble_ged,
    ground_truth_pairs,
    nged,
    sample_pairs,
)
from .search import ged_beam, ged_exact_astar
