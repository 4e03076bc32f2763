"""Reinforcement-learned batch selection for pool-based active learning."""

from ._accel import USE_NUMBA, backend_name
from .agent import (
    AgentConfig,
    AgentParams,
    BaselineTracker,
    Episode,
    TrainConfig,
    agent_forward,
    lstm_cell_forward,
    reinforce_grad,
    sample_selection,
    select_top_b,
    train_agent,
    update_baseline,
)
from .driver import (
    ALConfig,
    ALState,
    CycleLog,
    TableConfig,
    baseline_coreset,
    baseline_entropy,
    baseline_random,
    run_cycle,
    run_experiment,
)
from .lookup import (
    LookupTable,
    QuantileSketch,
    build_sketch,
    build_table,
    estimate_performance,
    load_table,
    save_table,
    wasserstein1,
)
from .numerics import AdamHyper, AdamState, adam_step, finite_diff_grad
from .oracle import (
    SyntheticTask,
    TaskConfig,
    coverage_performance,
    generate_synthetic_task,
    prototype_performance,
    proxy_performance,
)

__version__ = "0.1.0"
