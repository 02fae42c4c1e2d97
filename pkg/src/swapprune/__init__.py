"""Transport-plan-weighted sparse regression pruning toolkit.

The package splits into five layers:

- :mod:`swapprune.transport` -- entropic optimal transport plans in 1-D
  (Sinkhorn scaling, fixed plans, a moment-matched closed form) plus the
  convex-hull distance-interpolation witness.
- :mod:`swapprune.regression` -- the plan-weighted regression objective, its
  gradient, step sizes, and hard-threshold sparsification.
- :mod:`swapprune.nets` -- a small dense network, synthetic and on-disk
  datasets, per-sample gradients, and calibrated row-noise injection.
- :mod:`swapprune.pruning` -- sparsity schedules, the staged pruning loop,
  and the seeded two-pipeline comparison harness.
- :mod:`swapprune.cli` -- configuration files, subcommands, and report
  writers (with :mod:`swapprune.matio` for the binary matrix format).
"""

from swapprune.transport import (
    TransportPlan,
    build_cost_matrix,
    closed_form_params,
    closed_form_plan,
    fixed_plan,
    hull_equality_witness,
    ot_objective,
    project_to_simplex,
    sinkhorn_plan,
)
from swapprune.regression import (
    EwrConfig,
    ewr_gradient,
    ewr_objective,
    iht_project,
    lr_objective,
    neighborhood_average,
    op_norm,
    step_size,
)
from swapprune.nets import (
    Dataset,
    NoiseSpec,
    Split,
    TinyMlp,
    evaluate,
    forward_loss,
    init_mlp,
    inject_noise,
    per_sample_gradients,
    synth_dataset,
    train,
)
from swapprune.pruning import (
    CompareReport,
    PruneResult,
    PruneTask,
    SparsitySchedule,
    compare_lr_ewr,
    exponential_schedule,
    linear_schedule,
    swap_prune,
)

__all__ = [
    "TransportPlan",
    "build_cost_matrix",
    "closed_form_params",
    "closed_form_plan",
    "fixed_plan",
    "hull_equality_witness",
    "ot_objective",
    "project_to_simplex",
    "sinkhorn_plan",
    "EwrConfig",
    "ewr_gradient",
    "ewr_objective",
    "iht_project",
    "lr_objective",
    "neighborhood_average",
    "op_norm",
    "step_size",
    "Dataset",
    "NoiseSpec",
    "Split",
    "TinyMlp",
    "evaluate",
    "forward_loss",
    "init_mlp",
    "inject_noise",
    "per_sample_gradients",
    "synth_dataset",
    "train",
    "CompareReport",
    "PruneResult",
    "PruneTask",
    "SparsitySchedule",
    "compare_lr_ewr",
    "exponential_schedule",
    "linear_schedule",
    "swap_prune",
]

__version__ = "0.1.0"
