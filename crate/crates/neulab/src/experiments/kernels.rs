//! Kernel-dimension experiments: the reaction dichotomy on the unit cube
//! and the triple kernel of the negative-reaction operator on the pi cube.

use std::sync::Arc;

use crate::error::Result;
use crate::fe::CoefficientField;
use crate::mesh::build_box_mesh;
use crate::operator::{kernel_analysis, ProblemSpec};
use crate::report::EstimateReport;

use super::RunParams;

/// Unit cube, `A = I`, `b = c = 0`: dimension 1 with the normalized
/// constant kernel function for `d = 0`, dimension 0 for `d = 1`.
pub fn kernel_dim_cube(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("kernel-dim-cube", params.seed);
    let res = params.resolution;
    let mesh = Arc::new(build_box_mesh([0.0; 3], [1.0; 3], [res, res, res])?);
    report.mesh_hash = Some(mesh.content_hash());

    let spec0 = ProblemSpec::laplace(mesh.clone());
    let rep0 = kernel_analysis(&spec0)?;
    report.check_true("d0_dimension_is_1", rep0.dimension == 1);
    report.check_ge("d0_spectral_gap", rep0.gap_ratio, 10.0);
    report.quantity("d0_sigma_min", rep0.sigmas[0]);
    report.quantity("d0_gap_ratio", rep0.gap_ratio);

    // the kernel function is the constant normalized in L^{2n/(n-2)}:
    // on the unit cube that constant is exactly 1
    let u_hat = rep0.u_hat.as_ref().expect("dimension-1 kernel function");
    let dev = u_hat
        .values
        .iter()
        .map(|v| (v - 1.0).abs())
        .fold(0.0f64, f64::max);
    report.check_le("d0_uhat_constant_residual", dev, 1e-10);
    report.check_true("d0_uhat_positive", rep0.u_hat_positive);
    report.quantity("d0_uhat_residual", dev);

    let mut spec1 = ProblemSpec::laplace(mesh);
    spec1.d = CoefficientField::scalar(1.0);
    let rep1 = kernel_analysis(&spec1)?;
    report.check_true("d1_dimension_is_0", rep1.dimension == 0);
    report.quantity("d1_sigma_min", rep1.sigmas[0]);
    report.quantity("d1_margin", rep1.gap_ratio);

    report.tolerance("uhat_residual", 1e-10);
    report.tolerance("spectral_gap", 10.0);
    Ok(report)
}

/// `(0, pi)^3` with `d = -1`: at least three near-zero singular values
/// whose magnitudes shrink under uniform refinement (they track the
/// discrete eigenvalue error of the three axis cosine modes).
pub fn eigen_cube(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("eigen-cube", params.seed);
    let pi = std::f64::consts::PI;
    let mut sigma_levels: Vec<Vec<f64>> = Vec::new();
    let coarse = params.resolution;
    for res in [coarse, 2 * coarse] {
        let mesh = Arc::new(build_box_mesh([0.0; 3], [pi; 3], [res, res, res])?);
        if res == coarse {
            report.mesh_hash = Some(mesh.content_hash());
        }
        let mut spec = ProblemSpec::laplace(mesh);
        spec.d = CoefficientField::scalar(-1.0);
        let rep = kernel_analysis(&spec)?;
        report.check_true(&format!("res{res}_dimension_ge_3"), rep.dimension >= 3);
        let mut row = std::collections::BTreeMap::new();
        row.insert("resolution".to_string(), res as f64);
        for (i, s) in rep.sigmas.iter().take(4).enumerate() {
            row.insert(format!("sigma_{i}"), *s);
        }
        row.insert("gap_ratio".to_string(), rep.gap_ratio);
        report.series.push(row);
        sigma_levels.push(rep.sigmas.clone());
    }
    // each of the three near-zero values shrinks by >= 3x per refinement
    for i in 0..3 {
        let ratio = sigma_levels[0][i] / sigma_levels[1][i].max(1e-300);
        report.check_ge(&format!("sigma_{i}_shrink"), ratio, 3.0);
        report.quantity(&format!("sigma_{i}_shrink"), ratio);
    }
    report.tolerance("shrink_factor", 3.0);
    Ok(report)
}
