//! Estimation of segmentation probability maps from single ambiguous annotations.
//!
//! Binary segmentation networks tend to saturate their predicted probabilities
//! near 0 and 1, which hides annotation ambiguity. This crate estimates
//! non-polarized probability maps by averaging networks that are deliberately
//! biased toward under- or over-segmentation through the asymmetry of the
//! Tversky loss, either as an explicit ensemble of networks trained at fixed
//! loss hyperparameters or as a single hypernetwork that generates the
//! segmentation network's convolution weights from the hyperparameter.
//!
//! The crate is self-contained and CPU-only: it carries its own dense tensor
//! type with reverse-mode automatic differentiation (`tensor`), the Tversky
//! loss family (`losses`), the residual encoder-decoder networks and their
//! hypernetwork variant (`models`), a synthetic dataset with known
//! ground-truth probability maps (`synthdata`), training loops for every
//! compared strategy (`trainer`), sliding-window ensemble inference (`infer`),
//! and an evaluation harness (`metrics`).

pub mod grid;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod synthdata;
pub mod tensor;
pub mod trainer;

pub use grid::{Grid, LabelMap, ProbabilityMap};
pub use losses::TverskyParams;
pub use rng::Rng;
pub use tensor::{Tape, Tensor, Var};
