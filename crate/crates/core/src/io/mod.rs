//! Datasets, configuration files and run artifacts.

mod config;
mod dataset;
mod export;
pub mod idx;
mod metrics;
mod synthetic;

pub use config::{config_hash, parse_config, parse_config_str, LoadedConfig};
pub use dataset::{load_mnist_idx, Dataset, Mnist, Normalization, Split, MNIST_FILES};
pub use export::{read_arch_json, to_dot, write_dot, write_json, MaskExport};
pub use metrics::{read_metrics_csv, write_metrics_csv, MetricsRow, METRICS_HEADER};
pub use synthetic::{check_planted, gen_synthetic_cell_task, gen_synthetic_dag_task, SyntheticTask};
