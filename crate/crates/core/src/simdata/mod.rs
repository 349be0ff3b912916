//! Synthetic videos with ground truth, a noisy detection oracle, and
//! MOTChallenge text I/O.

mod augment;
mod motchallenge;
mod oracle;
mod scenario;
mod suite;

pub use augment::Symmetry;
pub use motchallenge::{
    format_records, parse_records, read_motchallenge, write_motchallenge, MotRecord, TrackingResult,
};
pub use oracle::{apply_oracle, oracle_detect, LabeledDetection, OracleConfig};
pub use scenario::{generate_scenario, Motion, Occlusion, ScenarioConfig, Video};
pub use suite::{generate_suite, load_video, save_video, SuiteConfig};
