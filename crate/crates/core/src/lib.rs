pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod imaging;

pub use imaging::Image;
pub mod models;
pub use models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelConfig};
pub mod losses;
pub use losses::{FeatureExtractor, LossBreakdown, LossWeights};
pub mod trainer;
pub use trainer::{TrainConfig, Trainer};
pub mod metrics;
pub use metrics::{MetricReport, NiqeModel};
pub mod tradeoff;
