"""Column-preserving activation-aware SVD compression of linear layers.

The pieces, bottom-up:

* :mod:`cpsvd.tensor_io` -- binary tensor files, manifests, reports
* :mod:`cpsvd.whiten` -- Gram accumulation, damped Cholesky, whitened SVD
* :mod:`cpsvd.columns` -- column losses, rank/column exchange, search, hybrids
* :mod:`cpsvd.allocation` -- layer-wise and module-wise ratio assignment
* :mod:`cpsvd.pipeline` -- planning, execution, ablation variants
* :mod:`cpsvd.oracle` -- brute-force references and the cost model
"""
from .allocation import (
    alpha_for,
    layer_importance,
    layer_ratios,
    module_ratios,
    module_relative_error,
)
from .columns import (
    ColumnLossVector,
    HybridFactorization,
    apply_hybrid,
    build_hybrid,
    column_losses,
    exchange,
    golden_section_search,
    preserve_split,
    reconstruction_error,
    search_preserve_count,
)
from .oracle import CostModel, cost, dense_reassemble, exhaustive_search
from .pipeline import CalibratedModel, ablation_run, compress, execute, plan
from .tensor_io import load_manifest, read_tensor, write_tensor
from .whiten import (
    GramMatrix,
    WhitenedFactorization,
    accumulate_gram,
    damped_cholesky,
    svd_whitened,
    truncate,
    weighted_loss,
)

__version__ = "0.1.0"
