//! Multivariate time-series anomaly detection with correlation-clustered
//! LSTM variational autoencoders and peaks-over-threshold dynamic thresholds.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64` for application code.

pub mod attribution;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod frame;
pub mod pot;
pub mod preprocess;
pub mod scalar;
pub mod scoring;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
pub use frame::LabelSeries;
pub use scalar::Scalar;

pub type Frame = frame::TimeSeriesFrame<f64>;
pub type Model = vae::LstmVaeModel<f64>;
pub type Scores = scoring::ScoreSeries<f64>;
pub type Thresholds = pot::ThresholdSeries<f64>;
pub type Clustering = clustering::FeatureClustering<f64>;
pub type Correlation = clustering::CorrelationMatrix<f64>;
