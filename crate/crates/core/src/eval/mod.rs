//! Metrics, episodic evaluation, training and the ablation harness.

mod ablation;
mod evaluate;
pub mod metrics;
mod train;

pub use ablation::{run_ablation, AblationBudget, AblationReport, AblationRun, ABLATION_CSV_HEADER};
pub use evaluate::{
    eval_episodes, evaluate, evaluate_episodes, fmt_metric, score_episode, CenterPredictor, EpisodeScore, EvalResult,
    OraclePredictor, Predictor, EVAL_CSV_HEADER,
};
pub use metrics::{auc, nme, normalized_distances, pck, pck_from_distances, AUC_STEPS, PCK_THRESHOLD};
pub use train::{batch_gradient, train, Divergence, NoObserver, StepLog, TrainConfig, TrainObserver};
