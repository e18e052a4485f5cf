//! Convergence tables for the kernel-block quadrature.
//!
//! One dimension: Matérn ν = 5/2 with the right-sided Riemann–Liouville
//! derivative. Two dimensions: the product Matérn ν = (5/2, 7/2) with the
//! fractional Laplacian in polar coordinates. Each cell is the sup-norm error
//! over a lag grid on [−1, 1]^d against a high-order rule of the same family.
//! Blocks carry the (2π)^{−d/2} Fourier prefactor; `sup_error_unnormalized`
//! reports the same error for the bare integral.

use fracgp::kernels::{kernel_block_1d, kernel_block_2d, KernelBlockKind};
use fracgp::operators::{MultiplierKind, OperatorSpec};
use fracgp::quadrature::{angular_grid, gauss_laguerre_rule};
use fracgp::spectral::SpectralDensity;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::BenchConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dim: usize,
    pub block: String,
    pub theta2: f64,
    pub nodes: usize,
    pub sup_error: f64,
    pub sup_error_unnormalized: f64,
}

impl BenchRow {
    fn new(dim: usize, block: &str, theta2: f64, nodes: usize, sup_error: f64) -> Self {
        let unnormalized = sup_error * (2.0 * std::f64::consts::PI).powf(dim as f64 / 2.0);
        BenchRow { dim, block: block.into(), theta2, nodes, sup_error, sup_error_unnormalized: unnormalized }
    }
}

const BLOCKS: [(KernelBlockKind, &str, f64); 3] =
    [(KernelBlockKind::UU, "UU", 0.0), (KernelBlockKind::FU, "FU", 1.0), (KernelBlockKind::FF, "FF", 2.0)];

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1).max(1) as f64).collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, CliError> {
    let mut jobs = Vec::new();
    for &dim in &cfg.dims {
        if !(1..=2).contains(&dim) {
            return Err(CliError::Config(format!("bench.dims entries must be 1 or 2, got {dim}")));
        }
        for &theta2 in &cfg.theta2 {
            for (b, _) in BLOCKS.iter().enumerate() {
                jobs.push((dim, theta2, b));
            }
        }
    }
    let rows: Vec<Vec<BenchRow>> = jobs.par_iter().map(|&(dim, theta2, b)| cell_rows(cfg, dim, theta2, b)).collect::<Result<_, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn cell_rows(cfg: &BenchConfig, dim: usize, theta2: f64, b: usize) -> Result<Vec<BenchRow>, CliError> {
    let (kind, name, power) = BLOCKS[b];
    let theta = theta2.sqrt();
    let mut out = Vec::new();
    if dim == 1 {
        let sd = SpectralDensity::matern(1.0, vec![theta], vec![2.5])?;
        let op = OperatorSpec::single(MultiplierKind::RiemannLiouvilleRight, cfg.alpha_1d, 1.0)?;
        let lags = grid(cfg.lag_points_1d);
        let weight = power * cfg.alpha_1d;
        let reference = kernel_block_1d(kind, &lags, &op, &sd, &gauss_laguerre_rule(cfg.reference_nodes, weight)?)?;
        for &n in &cfg.nodes {
            let vals = kernel_block_1d(kind, &lags, &op, &sd, &gauss_laguerre_rule(n, weight)?)?;
            out.push(BenchRow::new(dim, name, theta2, n, sup_diff(&vals, &reference)));
        }
    } else {
        let sd = SpectralDensity::matern(1.0, vec![theta, theta], vec![2.5, 3.5])?;
        let op = OperatorSpec::single(MultiplierKind::FractionalLaplacian, cfg.alpha_2d, 1.0)?;
        let g = grid(cfg.lag_points_2d);
        let lags: Vec<[f64; 2]> = g.iter().flat_map(|&a| g.iter().map(move |&b| [a, b])).collect();
        let weight = power * cfg.alpha_2d + 1.0;
        let reference = kernel_block_2d(
            kind,
            &lags,
            &op,
            &sd,
            &gauss_laguerre_rule(cfg.reference_nodes, weight)?,
            &angular_grid(cfg.reference_angular)?,
        )?;
        let angular = angular_grid(cfg.angular)?;
        for &n in &cfg.nodes {
            let vals = kernel_block_2d(kind, &lags, &op, &sd, &gauss_laguerre_rule(n, weight)?, &angular)?;
            out.push(BenchRow::new(dim, name, theta2, n, sup_diff(&vals, &reference)));
        }
    }
    Ok(out)
}

/// Rows as CSV fields: dim, block, θ², nodes and both errors.
pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("dim,block,theta2,nodes,sup_error,sup_error_unnormalized\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:e},{:e}\n",
            r.dim, r.block, r.theta2, r.nodes, r.sup_error, r.sup_error_unnormalized
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_table_has_expected_shape() {
        let cfg = BenchConfig {
            dims: vec![1],
            nodes: vec![8, 16],
            theta2: vec![1.0],
            lag_points_1d: 11,
            reference_nodes: 128,
            ..BenchConfig::default()
        };
        let rows = run_bench(&cfg).unwrap();
        assert_eq!(rows.len(), 6);
        for b in ["UU", "FU", "FF"] {
            let r: Vec<&BenchRow> = rows.iter().filter(|r| r.block == b).collect();
            assert!(r[1].sup_error < r[0].sup_error, "{b}: {r:?}");
        }
        assert!(rows_to_csv(&rows).starts_with("dim,block,theta2,nodes,sup_error,sup_error_unnormalized\n1,UU,1,8,"));
    }
}
