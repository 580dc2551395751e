"""catebias: neural treatment effect estimation with shared-structure biases."""

from .architectures import (
    EstimatorConfig,
    FittedEstimator,
    FlexTENetModel,
    NetworkSpec,
    OffsetModel,
    TARNetModel,
    TNetModel,
    fit_estimator,
    flextenet_forward,
    loss_flextenet,
    loss_offset,
    loss_soft,
    loss_standard,
    orthogonal_reg,
    predict_pos,
    weight_norm_report,
)
from .data import Dataset, PredictionTriple
from .evaluation import (
    MetricReport,
    auc,
    evaluate_predictions,
    normalized_rmse,
    rmse_cate,
    rmse_cf_diff,
    twins_threeclass_probs,
)
from .metalearners import (
    fit_propensity,
    fit_pseudo_learner,
    fit_r_learner,
    fit_s_learner,
    fit_t_learner,
    fit_x_learner,
    pseudo_dr,
    pseudo_pw,
    pseudo_ra,
)
from .simulation import (
    DGPConfigAB,
    DGPConfigIHDP,
    SimulatedDataset,
    assign_treatment_random,
    gen_covariates_synthetic,
    load_covariates_csv,
    simulate_ihdp_c,
    simulate_ihdp_d,
    simulate_setup_a,
    simulate_setup_b,
)
from .training import AdamState, TrainConfig, TrainReport, adam_step, finite_difference_check, train

__version__ = "0.1.0"
