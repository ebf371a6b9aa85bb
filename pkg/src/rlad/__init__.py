"""Semi-supervised time-series anomaly detection.

A DQN agent classifies sliding windows as normal or anomalous; an isolation
forest seeds the first labels, margin-based active learning spends a small
human-label budget where the agent is least decided, and label propagation
amplifies the human labels into free pseudo-labels.
"""

from .active import (
    HumanOracle,
    LabelBudget,
    LabelStore,
    Oracle,
    QueryBatch,
    QueryError,
    QueryItem,
    ScriptedOracle,
    alt_strategy_rank,
    margin_rank,
    query_oracle,
)
from .agent import (
    AgentConfig,
    EpsilonSchedule,
    ReplayMemory,
    Transition,
    compute_target,
    dqn_train_epoch,
    reward,
    select_action,
)
from .iforest import IsolationForest, iforest_fit, iforest_score, warmup_select
from .labelprop import LabelDistribution, lp_entropy, lp_fit, lp_pseudo_labels
from .metrics import Confusion, confusion, metrics_dict, prf1
from .neural import (
    ForwardCache,
    OptimizerState,
    QNetParams,
    adam_init,
    adam_step,
    load_checkpoint,
    qnet_forward,
    qnet_init,
    qnet_loss_grad,
    save_checkpoint,
    target_sync,
)
from .orchestrator import (
    RLADConfig,
    RLADModel,
    TrainHistory,
    rlad_predict,
    rlad_train,
)
from .timeseries import (
    ScalerParams,
    TimeSeries,
    WindowState,
    gen_synthetic,
    load_series,
    scale_minmax,
    segment,
    split_train_test,
)

__version__ = "0.1.0"
