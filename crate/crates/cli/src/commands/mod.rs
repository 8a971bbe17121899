pub mod engine;
pub mod eval;
pub mod metrics_cmd;
pub mod phantom;
pub mod report;
pub mod sweep_fc;
pub mod sweep_voxel;
pub mod train;

pub use eval::{cmd_eval, EvalMode};
pub use metrics_cmd::cmd_metrics;
pub use phantom::cmd_phantom;
pub use report::cmd_report;
pub use sweep_fc::cmd_sweep_fc;
pub use sweep_voxel::cmd_sweep_voxel;
pub use train::cmd_train;
