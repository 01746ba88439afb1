//! Configuration, persistence, stage orchestration and the command line.

pub mod cli;
mod config;
mod divlab;
mod plot;
mod stages;
mod store;

pub use config::{
    config_hash, file_digest, read_config, sha256_hex, write_json, CollectConfig, EvalConfig, RunConfig,
    TeachConfig, TeacherSettings,
};
pub use divlab::{divlab, gaussian_oracle, DivRow, Gauss};
pub use plot::{emit_plot_data, PLOTS_DIR};
pub use stages::{
    evaluate, run_adm, run_adp, run_collect, run_eval, run_pipeline, run_teach, sample_stored, sample_teacher,
    stage_seed, train_teacher, CollectArgs, EvalArgs, EvalHook, PipelineOutput, CONFIG_FILE, DISC_DATA_FILE,
    DISC_LAT_FILE, EVAL_FILE, FAKE_FILE, GEN_FILE, METRICS_FILE, PAIRS_FILE, TEACHER_FILE,
};
pub use store::{
    claim_dir, load_disc_data, load_disc_lat, load_net, load_pairs, meta_path, read_meta, save_disc_data,
    save_disc_lat, save_net, save_pairs, write_csv, ArtifactMeta, Header, StoredNet, MANIFEST,
};
