//! Digit-level quality scoring for image-editing assessment.
//!
//! Scores are modelled as three digit tokens (ones, tenths, hundredths)
//! emitted by a small autoregressive scorer. The crate provides:
//!
//! * [`codec`]: the `"<dimension> score: X.XX"` representation of scores,
//! * [`scorer`]: the toy autoregressive digit scorer and its checkpoints,
//! * [`tdrl`]: the token-decoupled distance regression loss and its gradient,
//! * [`defvalue`]: the definition value used as feedback for prompt search,
//! * [`fdmpo`] and [`optimizer`]: the metric-definition search loop,
//! * [`trainer`]: seeded mini-batch training with a warmup-cosine schedule,
//! * [`synth`]: the synthetic dataset generator,
//! * [`metrics`]: SRCC, PLCC and the weighted final score.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and runs sequentially
//! otherwise. Every reduction is performed in a fixed order, so results are
//! bit-identical regardless of thread count.

pub mod codec;
pub mod defvalue;
pub mod error;
pub mod fdmpo;
pub mod metrics;
pub mod optimizer;
pub mod par;
pub mod rng;
pub mod scorer;
pub mod synth;
pub mod tdrl;
pub mod trainer;

pub use codec::{DigitTriple, Dimension, Score, ScoreRange};
pub use error::{Error, Result};
