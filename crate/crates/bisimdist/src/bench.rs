//! Instance-level benchmark protocol: solve by policy iteration, then give
//! value iteration the same wall-clock budget on the same instance and
//! report how far its under-approximation still is.

use thiserror::Error;

use crate::automaton::{generate, GenParams, InvalidParams};
use crate::policy_iter::{spi_discounted, spi_undiscounted, SpiError};
use crate::value_iter::{vi_run, Budget};

/// Fixed CSV schema of the benchmark harness.
pub const CSV_HEADER: &str =
    "n,k_lo,k_hi,p_lo,p_hi,seed,lambda,method,time_sec,tp_count,coupling_count,outer_loops,vi_iters,error";

/// One per-instance comparison record.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub n: usize,
    pub k_lo: usize,
    pub k_hi: usize,
    pub p_lo: usize,
    pub p_hi: usize,
    pub seed: u64,
    pub lambda: f64,
    pub method: String,
    pub time_sec: f64,
    pub tp_count: u64,
    pub coupling_count: u64,
    pub outer_loops: u64,
    pub vi_iters: u64,
    /// Largest entrywise difference between the two solutions.
    pub error: f64,
}

impl BenchRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.6},{},{},{},{},{:.9}",
            self.n,
            self.k_lo,
            self.k_hi,
            self.p_lo,
            self.p_hi,
            self.seed,
            self.lambda,
            self.method,
            self.time_sec,
            self.tp_count,
            self.coupling_count,
            self.outer_loops,
            self.vi_iters,
            self.error
        )
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Params(#[from] InvalidParams),
    #[error(transparent)]
    Spi(#[from] SpiError),
}

/// Generates one instance, solves it by policy iteration, reruns value
/// iteration under the measured time budget, and assembles the record.
pub fn run_comparison(params: &GenParams, lambda: f64, eps: f64) -> Result<BenchRecord, BenchError> {
    let a = generate(params)?;
    let spi = if lambda < 1.0 {
        spi_discounted(&a, lambda, eps)?
    } else {
        spi_undiscounted(&a, eps, true)?
    };
    let vi = vi_run(&a, lambda, Budget::MaxSeconds(spi.wall_time));
    let error = spi.final_d.max_abs_diff(&vi.d);
    Ok(BenchRecord {
        n: params.n,
        k_lo: params.nd_degree.0,
        k_hi: params.nd_degree.1,
        p_lo: params.prob_degree.0,
        p_hi: params.prob_degree.1,
        seed: params.seed,
        lambda,
        method: "spi".to_string(),
        time_sec: spi.wall_time,
        tp_count: spi.tp_count,
        coupling_count: spi.iterations,
        outer_loops: spi.outer_loops,
        vi_iters: vi.iters,
        error,
    })
}
