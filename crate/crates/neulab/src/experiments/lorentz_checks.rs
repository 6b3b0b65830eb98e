//! Lorentz-engine verification: indicator closed forms, equimeasurability
//! against direct quadrature, and the dilation covariance of the
//! quasi-norms.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::fe::{lp_norm, FeFunction, Region};
use crate::mesh::{build_box_mesh, dilate_mesh};
use crate::rearrange::{adaptive_gl, lorentz_norm, LorentzSpec, Measured};
use crate::report::EstimateReport;

use super::RunParams;

pub fn closed_forms(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("lorentz-closed-forms", params.seed);
    let res = params.resolution.min(6);
    let mesh = Arc::new(build_box_mesh([0.0; 3], [1.0; 3], [res, res, res])?);
    report.mesh_hash = Some(mesh.content_hash());

    // indicator of a cell set with measure |E|
    let half = mesh.num_cells() / 2;
    let values: Vec<f64> = (0..mesh.num_cells())
        .map(|c| if c < half { 1.0 } else { 0.0 })
        .collect();
    let e_measure: f64 = (0..half).map(|c| mesh.cell_volume(c)).sum();
    let src = Measured::P0Volume {
        mesh: mesh.clone(),
        values,
    };
    let mut worst_weak = 0.0f64;
    let mut worst_strong = 0.0f64;
    for p in [1.5f64, 2.0, 3.0] {
        let weak = lorentz_norm(&src, LorentzSpec::weak(p)?);
        let exact = e_measure.powf(1.0 / p);
        worst_weak = worst_weak.max((weak - exact).abs() / exact);
        for q in [1.0f64, 2.0, 3.5] {
            let strong = lorentz_norm(&src, LorentzSpec::new(p, q)?);
            let exact = (p / q).powf(1.0 / q) * e_measure.powf(1.0 / p);
            worst_strong = worst_strong.max((strong - exact).abs() / exact);
        }
    }
    report.check_le("indicator_weak_norms", worst_weak, 1e-12);
    report.check_le("indicator_strong_norms", worst_strong, 1e-12);
    report.quantity("indicator_weak_worst", worst_weak);
    report.quantity("indicator_strong_worst", worst_strong);

    // equimeasurability: the layer-cake integral of the exact distribution
    // function reproduces the quadrature Lp norms
    let mut rng = StdRng::seed_from_u64(params.seed);
    let amp = 0.5 + rng.gen::<f64>();
    let f = FeFunction::interpolate(mesh.clone(), move |x| {
        amp * (2.1 * x[0]).sin() + x[1] * x[2] - 0.3
    })?;
    let src = Measured::p1(&f);
    let mut worst_equi = 0.0f64;
    for p in [1.0f64, 2.0, 1.5, 3.0] {
        let lambdas = src.breakpoints();
        let mut total = 0.0;
        for w in lambdas.windows(2) {
            total += adaptive_gl(
                &|l| l.powf(p - 1.0) * src.distribution(l),
                w[1],
                w[0],
                1e-11,
                24,
            );
        }
        let from_profile = (p * total).powf(1.0 / p);
        let direct = lp_norm(&f, p, &Region::All)?;
        worst_equi = worst_equi.max((from_profile - direct).abs() / direct);
    }
    report.check_le("equimeasurability", worst_equi, 1e-8);
    report.quantity("equimeasurability_worst", worst_equi);

    // weak norm of x1 on the unit cube: sup_l l (1 - l)^{1/2} = 2/(3 sqrt 3)
    let x1 = FeFunction::interpolate(mesh.clone(), |x| x[0])?;
    let weak = lorentz_norm(&Measured::p1(&x1), LorentzSpec::weak(2.0)?);
    let exact = 2.0 / 3.0 * (1.0f64 / 3.0).sqrt();
    report.check_le("x1_weak_norm", (weak - exact).abs() / exact, 1e-8);
    report.quantity("x1_weak_norm", weak);

    // dilation covariance: |f(./r)|_{p,q} = r^{n/p} |f|_{p,q}
    let spec = LorentzSpec::new(1.5, 2.5)?;
    let base = lorentz_norm(&Measured::p1(&f), spec);
    let big = Arc::new(dilate_mesh(&mesh, 2.0)?);
    let g = FeFunction::new(big, f.values.clone())?;
    let scaled = lorentz_norm(&Measured::p1(&g), spec);
    let expected = 2.0f64.powf(3.0 / spec.p) * base;
    report.check_le(
        "dilation_covariance",
        (scaled - expected).abs() / expected,
        1e-10,
    );

    report.tolerance("indicator_relative", 1e-12);
    report.tolerance("equimeasurability", 1e-8);
    Ok(report)
}
