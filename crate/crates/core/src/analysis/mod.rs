//! Experiment grids and the analyses built on them: loss ablations, label
//! noise sweeps, vocabulary probing of prototypes, and prototype/label-word
//! similarity.

mod grid;
mod probe;
mod similarity;

pub use grid::{
    aggregate, run_ablation, run_cell, run_cells, run_noise_sweep, write_long_csv, AblationRow,
    CellKey, CellResult, ExperimentGrid, GridSummary, NoiseRow,
};
pub use probe::{probe_vocabulary, ProbeEntry, ProbeReport};
pub use similarity::{label_word_embeddings, mean_matrix, proto_manual_similarity};

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
