//! Splitting-lemma verification on random P1 functions: the clamp algebra
//! holds pointwise, budgets are met exactly, and the piece count respects
//! its bound.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::fe::FeFunction;
use crate::mesh::build_box_mesh;
use crate::report::EstimateReport;
use crate::split::{split_mean_zero, split_plain, verify_split};

use super::RunParams;

pub fn properties(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("splitting-properties", params.seed);
    let res = 3usize;
    let mesh = Arc::new(build_box_mesh([0.0; 3], [1.0; 3], [res, res, res])?);
    report.mesh_hash = Some(mesh.content_hash());
    let mut rng = StdRng::seed_from_u64(params.seed);

    let mut worst_pointwise = 0.0f64;
    let mut worst_budget = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut bound_ok = true;
    let mut max_pieces = 0usize;

    for case in 0..50 {
        // random nodal values, smoothed slightly so gradients vary
        let mut values: Vec<f64> = (0..mesh.num_vertices())
            .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
            .collect();
        let freq = 1.0 + 3.0 * rng.gen::<f64>();
        for (v, x) in values.iter_mut().zip(mesh.vertices.iter()) {
            *v += (freq * x[0]).sin() + 0.5 * x[1];
        }
        let u = FeFunction::new(mesh.clone(), values)?;
        let h: Vec<f64> = (0..mesh.num_cells())
            .map(|_| 0.2 + rng.gen::<f64>())
            .collect();
        let hn: f64 = (0..mesh.num_cells())
            .map(|c| h[c].powi(3) * mesh.cell_volume(c))
            .sum::<f64>()
            .powf(1.0 / 3.0);
        // choose eps so a handful of pieces appear
        let eps = hn * (0.3 + 0.4 * rng.gen::<f64>());

        let result = if case % 2 == 0 {
            split_plain(&u, &h, eps)?
        } else {
            let mut um = u.clone();
            let mean = um.mean();
            for v in &mut um.values {
                *v -= mean;
            }
            split_mean_zero(&um, &h, eps)?
        };
        let rep = verify_split(&result, 60, &mut rng);
        worst_pointwise = worst_pointwise.max(rep.worst);
        worst_budget = worst_budget.max(rep.budget_violation);
        if let Some(m) = rep.mean_violation {
            worst_mean = worst_mean.max(m);
        }
        bound_ok &= rep.count_bound_ok;
        max_pieces = max_pieces.max(rep.piece_count);
    }

    report.check_le("worst_pointwise_violation", worst_pointwise, 1e-12);
    report.check_le("worst_budget_violation", worst_budget, 1e-10);
    report.check_le("worst_mean_violation", worst_mean, 1e-10);
    report.check_true("count_bound_always", bound_ok);
    report.quantity("worst_pointwise", worst_pointwise);
    report.quantity("worst_budget", worst_budget);
    report.quantity("worst_mean", worst_mean);
    report.quantity("max_pieces", max_pieces as f64);

    report.tolerance("pointwise", 1e-12);
    report.tolerance("budget", 1e-10);
    report.tolerance("mean", 1e-10);
    Ok(report)
}
