//! Categorical noise process, level-aware clocks and reverse sampling.

mod levels;
mod posterior;
mod sample;
mod schedule;

pub use levels::LevelStructureStats;
pub use posterior::posterior_step;
pub use sample::{reverse_sample, reverse_sample_with, Denoiser, Prediction};
pub use schedule::{cosine_alpha_bar, transition_matrix, Element, Mode, NoiseModel};
