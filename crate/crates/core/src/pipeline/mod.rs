//! Orchestration: data loading, training, every analysis stage, and the
//! on-disk analysis artifact.

pub mod artifact;
mod config;
mod run;

pub use artifact::{ArtifactFiles, Manifest, NeuronDetail, NeuronFile, Summary};
pub use config::{AnalysisConfig, DataConfig, DiscriminabilityConfig, RunConfig, SplitCounts, TargetTransform, TrainingConfig};
pub use run::{
    analyze, build_artifact, load_datasets, neuron_layers, run_pipeline, train_models, Datasets, DiscriminabilityFile,
    InstancesFile, SimilarityFile, TrainedModels, WeightsFile,
};
