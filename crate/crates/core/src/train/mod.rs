//! Model assembly, optimizers, the training loop, checkpoints and filter export.

mod checkpoint;
mod config;
mod export;
mod fit;
mod model;
mod optim;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{load_pair, prepare, DataConfig, DataSource, ModelConfig, Prepared, Preset, TrainConfig, PROBE_SAMPLES};
pub use export::{export_filters, iou, otsu_threshold, read_filter_csv, ExportFormat, FilterEntry, Manifest, DNC_LEVEL};
pub use fit::{evaluate, metrics_from_outputs, predictions, train, Control, EpochHook, EpochRecord, Metrics, RunRngs, TrainState};
pub use model::{mini_vgg, mini_vgg_lite, synthetic_net, Constraints, Forward, LayerSpec, ModelSpec, OpKind, Sequential};
pub use optim::{OptimSpec, OptimState, Optimizer};
