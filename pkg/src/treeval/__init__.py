"""CART regression trees with exact finite-sample selective inference.

Fit a tree (grow + cost-complexity prune), then attach p-values and
confidence intervals to its splits and regions that account for the tree
having been chosen by the data.  The conditioning events are computed
analytically as finite unions of intervals and fed through a numerically
stable truncated normal.
"""

__version__ = "0.1.0"

from .cart import (
    StoppingRule,
    Tree,
    bottom_up_ordering,
    fit_cart,
    g_value,
    gain,
    grow,
    predict,
    prune,
    tree_from_dict,
    tree_to_dict,
)
from .contrast import Contrast, perturbed_response, region_contrast, sibling_contrast
from .dataset import Dataset, load_csv, save_csv
from .estimator import CartRegressor
from .inference import (
    InferenceResult,
    TruncatedNormal,
    analyze_tree,
    estimate_sigma,
    naive_z,
    p_region,
    p_sibling,
    region_inference,
    selective_ci,
    split_inference,
    tn_cdf,
)
from .intervals import (
    Interval,
    IntervalSet,
    QuadraticConstraint,
    intersect_all,
    solve_quadratic,
    union_all,
)
from .truncation import (
    Branch,
    branch_of,
    branch_selection_set,
    growth_set,
    region_selection_set,
    sibling_selection_set,
)

__all__ = [
    "Branch",
    "CartRegressor",
    "Contrast",
    "Dataset",
    "InferenceResult",
    "Interval",
    "IntervalSet",
    "QuadraticConstraint",
    "StoppingRule",
    "Tree",
    "TruncatedNormal",
    "analyze_tree",
    "bottom_up_ordering",
    "branch_of",
    "branch_selection_set",
    "estimate_sigma",
    "fit_cart",
    "g_value",
    "gain",
    "grow",
    "growth_set",
    "intersect_all",
    "load_csv",
    "naive_z",
    "p_region",
    "p_sibling",
    "perturbed_response",
    "predict",
    "prune",
    "region_contrast",
    "region_inference",
    "region_selection_set",
    "save_csv",
    "selective_ci",
    "sibling_contrast",
    "sibling_selection_set",
    "split_inference",
    "tn_cdf",
    "tree_from_dict",
    "tree_to_dict",
    "union_all",
]
