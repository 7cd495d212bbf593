pub mod panel;
pub mod wgan;
pub mod stats;
pub mod eds;
pub mod robustness;
pub mod synth;
pub mod report;
pub mod cli;
