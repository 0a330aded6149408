//! Training loops, reconstruction losses, per-frame anomaly scoring and
//! AUROC evaluation.

mod eval;
mod loss;
mod score;
mod train;

pub use eval::{auroc, evaluate, roc_points, CategoryReport, EvalReport};
pub use loss::{
    anchor_errors, per_frame_loss, reconstruction_loss, reconstruction_loss_graph,
};
pub use score::{
    heatmap_video, min_max_normalize, prepare_video_frames, score_video, smooth_trailing,
    HeatmapFrame, PipelineConfig, ScoreContext, ScoreSeries, SmoothOrder,
};
pub use train::{pretrain_extractor, train_pstae, EpochReport, PretrainOutcome, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    PointCloud(#[from] crate::pointcloud::PointCloudError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
