//! Estimate experiments: Poincare and trace ratios over randomized
//! families, the main splitting estimate, averaging and Caccioppoli
//! inequalities, pointwise bounds, scale invariance of solution-to-data
//! ratios, subsolution rigidity, the sign-condition checker and the
//! reflection machinery.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::fe::{
    integrate_boundary, integrate_cells, lp_norm, lp_norm_gradient, CoefficientField, FeFunction,
    FieldValue, Region,
};
use crate::geom::{self, Point};
use crate::green::BallIntegrator;
use crate::mesh::{
    build_box_mesh, build_graph_domain_mesh, reflect_mesh, GraphBase, GraphDomainSpec, MeshRef,
    ReflectionMap,
};
use crate::operator::{
    assemble, check_sign_condition, compatibility_check, integral_d, residual_vector_assembled,
    scale_problem, solve_assembled, solve_neumann, Compatibility, DriftPair, ProblemSpec,
    ResidualClass,
};
use crate::rearrange::{lorentz_norm, LorentzSpec, Measured};
use crate::report::EstimateReport;
use crate::split::{split_mean_zero, split_plain};

use super::RunParams;

const N: f64 = 3.0;

fn cube(res: usize) -> Result<MeshRef> {
    Ok(Arc::new(build_box_mesh([0.0; 3], [1.0; 3], [res, res, res])?))
}

/// Outward radial drift from the cube center: satisfies the sign condition
/// `d >= div b` in the volume and `b . nu >= 0` on the boundary when
/// `3 beta <= d`.
fn radial_drift(beta: f64) -> CoefficientField {
    CoefficientField::analytic_vector(move |x: Point| {
        [
            beta * (x[0] - 0.5),
            beta * (x[1] - 0.5),
            beta * (x[2] - 0.5),
        ]
    })
}

fn lp_norm_boundary_field(
    mesh: &crate::mesh::SimplicialMesh,
    field: &CoefficientField,
    p: f64,
) -> Result<f64> {
    let v = integrate_boundary(mesh, &Region::Boundary, 4, |fi, _, x| {
        field.scalar_at(x, fi, true).unwrap_or(f64::NAN).abs().powf(p)
    })?;
    Ok(v.powf(1.0 / p))
}

fn lp_norm_volume_field(
    mesh: &crate::mesh::SimplicialMesh,
    field: &CoefficientField,
    p: f64,
) -> Result<f64> {
    let v = integrate_cells(mesh, &Region::All, 4, |cell, x| {
        field.scalar_at(x, cell, false).unwrap_or(f64::NAN).abs().powf(p)
    })?;
    Ok(v.powf(1.0 / p))
}

/// Random trigonometric polynomials in the Neumann-compatible cosine
/// basis plus raw random nodal fields.
fn sample_family(mesh: &MeshRef, rng: &mut StdRng, count: usize) -> Result<Vec<FeFunction>> {
    use std::f64::consts::PI;
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        if s % 3 == 2 {
            let values: Vec<f64> = (0..mesh.num_vertices())
                .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
                .collect();
            out.push(FeFunction::new(mesh.clone(), values)?);
        } else {
            let mut coeffs = Vec::new();
            for kx in 0..3usize {
                for ky in 0..3usize {
                    for kz in 0..3usize {
                        if kx + ky + kz == 0 {
                            continue;
                        }
                        coeffs.push((kx, ky, kz, rng.gen::<f64>() * 2.0 - 1.0));
                    }
                }
            }
            let f = FeFunction::interpolate(mesh.clone(), |x| {
                coeffs
                    .iter()
                    .map(|&(kx, ky, kz, a)| {
                        a * (PI * kx as f64 * x[0]).cos()
                            * (PI * ky as f64 * x[1]).cos()
                            * (PI * kz as f64 * x[2]).cos()
                    })
                    .sum()
            })?;
            out.push(f);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Poincare ratios
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub enum PoincareVariant {
    Plain,
    AmpleZero { delta: f64 },
    Modified { delta0: f64 },
}

/// Max ratio of the Poincare-type inequality over a randomized family.
/// Returns a lower bound for the constant.
pub fn run_poincare(
    mesh: &MeshRef,
    variant: PoincareVariant,
    seed: u64,
    samples: usize,
) -> Result<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    // drift and reaction of the modified variant
    let c_field = CoefficientField::vector([0.2, -0.1, 0.3]);
    let d_field = CoefficientField::analytic_scalar(|x| 1.0 + x[0]);
    if let PoincareVariant::Modified { delta0 } = variant {
        let vol = mesh.total_volume();
        if (vol - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(
                "the modified variant assumes |Omega| = 1".into(),
            ));
        }
        let int_d = integrate_cells(mesh, &Region::All, 4, |_, x| 1.0 + x[0])?;
        if int_d < delta0 {
            return Err(Error::InvalidParameter(format!(
                "int d = {int_d} below the declared delta_0 = {delta0}"
            )));
        }
    }
    let family = sample_family(mesh, &mut rng, samples)?;
    let mut worst = 0.0f64;
    for mut u in family {
        match variant {
            PoincareVariant::Plain => {
                let mean = u.mean();
                for v in &mut u.values {
                    *v -= mean;
                }
            }
            PoincareVariant::AmpleZero { delta } => {
                // vanish on {x_1 <= delta}: the zero set E has measure
                // at least delta when the grid aligns
                for (v, x) in u.values.iter_mut().zip(u.mesh.vertices.iter()) {
                    if x[0] <= delta + 1e-14 {
                        *v = 0.0;
                    }
                }
            }
            PoincareVariant::Modified { .. } => {
                let int_d = integrate_cells(&u.mesh, &Region::All, 4, |cell, x| {
                    d_field.scalar_at(x, cell, false).unwrap()
                })?;
                let num = integrate_cells(&u.mesh, &Region::All, 4, |cell, x| {
                    let cv = c_field.vector_at(x, cell, false).unwrap();
                    let dv = d_field.scalar_at(x, cell, false).unwrap();
                    geom::dot(cv, u.gradient(cell)) + dv * u.evaluate_in_cell(cell, x)
                })?;
                let shift = num / int_d;
                for v in &mut u.values {
                    *v -= shift;
                }
            }
        }
        let grad = lp_norm_gradient(&u, 2.0)?;
        if grad < 1e-12 * u.max_abs().max(1e-300) {
            // constant functions are excluded from the ratio
            continue;
        }
        let num = lp_norm(&u, 2.0 * N / (N - 2.0), &Region::All)?;
        worst = worst.max(num / grad);
    }
    Ok(worst)
}

pub fn poincare(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("poincare", params.seed);
    let res = params.resolution.min(6);
    let mesh = cube(res)?;
    report.mesh_hash = Some(mesh.content_hash());

    // the first Dirichlet-Neumann eigenfunction pins the L2 ratio at 1/pi
    let pi = std::f64::consts::PI;
    let eig = FeFunction::interpolate(mesh.clone(), |x| (pi * x[0]).cos())?;
    let mut shifted = eig.clone();
    let mean = shifted.mean();
    for v in &mut shifted.values {
        *v -= mean;
    }
    let ratio_l2 = lp_norm(&shifted, 2.0, &Region::All)? / lp_norm_gradient(&shifted, 2.0)?;
    report.check_le("eigenfunction_l2_ratio", (ratio_l2 - 1.0 / pi).abs(), 0.01);
    report.quantity("eigenfunction_l2_ratio", ratio_l2);

    // randomized lower bounds, refinement stability
    let mut plain = Vec::new();
    let mut ample = Vec::new();
    let mut modified = Vec::new();
    for (level, r) in [res, res + res / 2].iter().enumerate() {
        let m = cube(*r)?;
        plain.push(run_poincare(&m, PoincareVariant::Plain, params.seed, 200)?);
        ample.push(run_poincare(
            &m,
            PoincareVariant::AmpleZero { delta: 0.5 },
            params.seed,
            100,
        )?);
        modified.push(run_poincare(
            &m,
            PoincareVariant::Modified { delta0: 1.0 },
            params.seed,
            100,
        )?);
        let mut row = BTreeMap::new();
        row.insert("resolution".to_string(), *r as f64);
        row.insert("plain".to_string(), plain[level]);
        row.insert("ample_zero".to_string(), ample[level]);
        row.insert("modified".to_string(), modified[level]);
        report.series.push(row);
    }
    for (name, vals) in [("plain", &plain), ("ample_zero", &ample), ("modified", &modified)] {
        let stability = (vals[0] / vals[1]).max(vals[1] / vals[0]);
        // lower-bound maxima over randomized families fluctuate more when
        // the family is clipped to a vanishing set
        let allowed = if name == "ample_zero" { 1.5 } else { 1.3 };
        report.check_le(&format!("{name}_stability"), stability, allowed);
        report.quantity(&format!("c0_{name}"), vals[1]);
    }

    // the modified variant rejects a declared delta_0 above int d
    let rejected = run_poincare(
        &mesh,
        PoincareVariant::Modified { delta0: 10.0 },
        params.seed,
        10,
    );
    report.check_true("modified_rejects_small_int_d", rejected.is_err());

    report.tolerance("stability_factor", 1.3);
    Ok(report)
}

// ---------------------------------------------------------------------------
// trace inequality
// ---------------------------------------------------------------------------

/// Max trace ratio over the family at integrability `p`, strong and weak.
pub fn run_trace(mesh: &MeshRef, p: f64, seed: u64, samples: usize) -> Result<(f64, f64)> {
    if !(1.0 <= p && p < N) {
        return Err(Error::InvalidParameter(format!(
            "trace exponent p = {p} outside [1, n)"
        )));
    }
    let boundary_p = p * (N - 1.0) / (N - p);
    let volume_p = p * N / (N - p);
    let mut rng = StdRng::seed_from_u64(seed);
    let family = sample_family(mesh, &mut rng, samples)?;
    let mut worst_strong = 0.0f64;
    let mut worst_weak = 0.0f64;
    for u in family {
        let y_norm = lp_norm(&u, volume_p, &Region::All)? + lp_norm_gradient(&u, p)?;
        if y_norm < 1e-12 {
            continue;
        }
        let strong = lp_norm(&u, boundary_p, &Region::Boundary)?;
        let weak = lorentz_norm(
            &Measured::p1_boundary(&u),
            LorentzSpec::weak(boundary_p)?,
        );
        worst_strong = worst_strong.max(strong / y_norm);
        worst_weak = worst_weak.max(weak / y_norm);
    }
    Ok((worst_strong, worst_weak))
}

pub fn trace_inequality(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("trace-inequality", params.seed);
    let res = params.resolution.min(6);
    let mesh = cube(res)?;
    report.mesh_hash = Some(mesh.content_hash());

    // constant function: ratio |bdy|^{(n-2)/(2n-2)} = 6^{1/4} exactly
    let one = FeFunction::interpolate(mesh.clone(), |_| 1.0)?;
    let ratio = lp_norm(&one, 4.0, &Region::Boundary)?
        / (lp_norm(&one, 6.0, &Region::All)? + lp_norm_gradient(&one, 2.0)?);
    let exact = 6.0f64.powf(0.25);
    report.check_le("constant_ratio", (ratio - exact).abs() / exact, 1e-10);
    report.quantity("constant_ratio", ratio);

    // u = x_1: closed forms for both sides
    let x1 = FeFunction::interpolate(mesh.clone(), |x| x[0])?;
    let b4 = lp_norm(&x1, 4.0, &Region::Boundary)?;
    let exact_b4 = (1.0 + 4.0 / 5.0f64).powf(0.25);
    report.check_le("x1_boundary_l4", (b4 - exact_b4).abs() / exact_b4, 1e-10);
    let v6 = lp_norm(&x1, 6.0, &Region::All)?;
    let exact_v6 = (1.0f64 / 7.0).powf(1.0 / 6.0);
    report.check_le("x1_volume_l6", (v6 - exact_v6).abs() / exact_v6, 1e-10);

    // random family ratios, strong and weak, stable under refinement
    let mut strongs = Vec::new();
    let mut weaks = Vec::new();
    for r in [res, res + res / 2] {
        let m = cube(r)?;
        let (s, w) = run_trace(&m, 2.0, params.seed, 100)?;
        // the weak boundary norm never exceeds the strong one
        report.check_le(&format!("weak_le_strong_res{r}"), w, s * (1.0 + 1e-9));
        strongs.push(s);
        weaks.push(w);
        let mut row = BTreeMap::new();
        row.insert("resolution".to_string(), r as f64);
        row.insert("strong_ratio".to_string(), s);
        row.insert("weak_ratio".to_string(), w);
        report.series.push(row);
    }
    let stability = (strongs[0] / strongs[1]).max(strongs[1] / strongs[0]);
    report.check_le("strong_ratio_stability", stability, 1.2);
    report.quantity("trace_constant", strongs[1]);
    report.quantity("weak_trace_constant", weaks[1]);

    // exponent guards
    report.check_true("p_out_of_range_rejected", run_trace(&mesh, 3.0, 0, 1).is_err());
    report.check_true("p_below_one_rejected", run_trace(&mesh, 0.5, 0, 1).is_err());

    report.tolerance("closed_form_relative", 1e-10);
    Ok(report)
}

// ---------------------------------------------------------------------------
// main splitting estimate
// ---------------------------------------------------------------------------

pub fn main_estimate(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("main-estimate", params.seed);
    let pi = std::f64::consts::PI;
    let res = params.resolution.min(8);

    // measured Sobolev-Poincare constant pins eps = lambda / (8 C0)
    let mesh = cube(res)?;
    report.mesh_hash = Some(mesh.content_hash());
    let c0 = run_poincare(&mesh, PoincareVariant::Plain, params.seed, 60)?;
    let eps = 1.0 / (8.0 * c0);
    report.quantity("c0_measured", c0);
    report.quantity("eps", eps);

    // zero data gives zero on both sides
    {
        let mut spec = ProblemSpec::laplace(mesh.clone());
        spec.d = CoefficientField::scalar(1.0);
        let sol = solve_neumann(&spec)?;
        report.check_le("zero_data_zero_solution", sol.u.max_abs(), 1e-14);
    }

    // mean-zero case: drift-only operator with compatible data
    let build_zero = |m: &MeshRef| -> ProblemSpec {
        let mut spec = ProblemSpec::laplace(m.clone());
        spec.b = CoefficientField::vector([0.4, 0.0, -0.3]);
        spec.f = CoefficientField::analytic_scalar(move |x| pi * pi * (pi * x[0]).cos());
        spec
    };
    let mut zero_ratios = Vec::new();
    for r in [1.0f64, 0.5, 2.0] {
        let spec = scale_problem(&build_zero(&mesh), r)?;
        let sol = solve_neumann(&spec)?;
        let u = sol.u;
        // h = |b - c| sampled per cell
        let h: Vec<f64> = (0..spec.mesh.num_cells())
            .map(|c| {
                let x = spec.mesh.cell_centroid(c);
                let b = spec.b.vector_at(x, c, false).unwrap();
                let cc = spec.c.vector_at(x, c, false).unwrap();
                geom::norm(geom::sub(b, cc))
            })
            .collect();
        let split = split_mean_zero(&u, &h, eps)?;
        let lhs: f64 = (0..split.piece_count())
            .map(|i| split.piece_gradient_energy(i))
            .sum();
        // disjoint supports: the piece energies add up to the full energy
        let full = lp_norm_gradient(&u, 2.0)?.powi(2);
        report.check_le(
            &format!("piece_energy_sum_r_{r}"),
            (lhs - full).abs() / full.max(1e-300),
            1e-9,
        );
        let rhs = lp_norm_volume_field(&spec.mesh, &spec.f, 2.0 * N / (N + 2.0))?.powi(2);
        zero_ratios.push(lhs / rhs);
        report.quantity(&format!("piece_count_r_{r}"), split.piece_count() as f64);
    }
    for k in 1..zero_ratios.len() {
        report.check_le(
            &format!("scaling_sweep_invariance_{k}"),
            (zero_ratios[k] - zero_ratios[0]).abs() / zero_ratios[0],
            1e-9,
        );
    }
    report.check_le("mean_zero_measured_c", zero_ratios[0], 1e3);
    report.quantity("mean_zero_measured_c", zero_ratios[0]);

    // positive-reaction case with the averaging constants
    let mut spec = ProblemSpec::laplace(mesh.clone());
    spec.b = radial_drift(0.2);
    spec.d = CoefficientField::scalar(1.0);
    spec.f = CoefficientField::analytic_scalar(|x| 1.0 + x[0] * x[0]);
    spec.g = CoefficientField::scalar(0.2);
    let cond = check_sign_condition(&spec, DriftPair::BD)?;
    report.check_true("sign_condition_holds", cond.holds);
    let sol = solve_neumann(&spec)?;
    let u = sol.u;
    report.check_ge("solution_nonnegative", u.min(), -1e-8 * u.max_abs());
    let h: Vec<f64> = (0..mesh.num_cells())
        .map(|c| {
            let x = mesh.cell_centroid(c);
            geom::norm(spec.b.vector_at(x, c, false).unwrap())
        })
        .collect();
    let split = split_plain(&u, &h, eps)?;
    let (int_d, _) = integral_d(&spec)?;
    let a: f64 = (0..split.piece_count())
        .map(|i| split.piece_integral(i) / int_d)
        .sum();
    // the averaging constants obey int(c . grad u+ + d u+) <= int f+ + int g+
    let avg_lhs = a * int_d;
    let avg_rhs = integrate_cells(&mesh, &Region::All, 4, |cell, x| {
        spec.f.scalar_at(x, cell, false).unwrap().max(0.0)
    })? + integrate_boundary(&mesh, &Region::Boundary, 4, |fi, _, x| {
        spec.g.scalar_at(x, fi, true).unwrap().max(0.0)
    })?;
    report.check_le("avg_constants_bound", avg_lhs, avg_rhs * (1.0 + 1e-8));
    let lhs = lp_norm_gradient(&u, 2.0)?.powi(2);
    let rhs = a * a
        + lp_norm_volume_field(&mesh, &spec.f, 2.0 * N / (N + 2.0))?.powi(2)
        + lp_norm_boundary_field(&mesh, &spec.g, 2.0 - 2.0 / N)?.powi(2);
    report.check_le("reaction_measured_c", lhs / rhs, 1e3);
    report.quantity("reaction_measured_c", lhs / rhs);
    report.quantity("a_total", a);

    report.tolerance("scaling_invariance", 1e-9);
    Ok(report)
}

// ---------------------------------------------------------------------------
// averaging inequality
// ---------------------------------------------------------------------------

/// `int (c . grad u+ + d u+) <= int f+ + int_bdy g+` for subsolutions with
/// `F = 0`; the F term is rejected because the truncation argument needs
/// the flux-free form.
pub fn run_avg_inequality(spec: &ProblemSpec, u: &FeFunction) -> Result<(f64, f64)> {
    if !spec.big_f.is_zero() {
        return Err(Error::InvalidParameter(
            "the averaging inequality requires F = 0 (the truncation test \
             function argument fails with a flux term)"
                .into(),
        ));
    }
    let lhs = integrate_cells(&spec.mesh, &Region::All, 4, |cell, x| {
        let uval = u.evaluate_in_cell(cell, x);
        let grad = u.gradient(cell);
        let cv = spec.c.vector_at(x, cell, false).unwrap_or([0.0; 3]);
        let dv = spec.d.scalar_at(x, cell, false).unwrap_or(0.0);
        // grad u+ matches grad u on {u > 0}
        if uval > 0.0 {
            geom::dot(cv, grad) + dv * uval
        } else {
            0.0
        }
    })?;
    let rhs = integrate_cells(&spec.mesh, &Region::All, 4, |cell, x| {
        spec.f.scalar_at(x, cell, false).unwrap_or(0.0).max(0.0)
    })? + integrate_boundary(&spec.mesh, &Region::Boundary, 4, |fi, _, x| {
        spec.g.scalar_at(x, fi, true).unwrap_or(0.0).max(0.0)
    })?;
    Ok((lhs, rhs))
}

pub fn avg_inequality(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("avg-inequality", params.seed);
    let mesh = cube(params.resolution.min(6))?;
    report.mesh_hash = Some(mesh.content_hash());

    let mut spec = ProblemSpec::laplace(mesh.clone());
    spec.c = radial_drift(0.1);
    spec.d = CoefficientField::scalar(1.0);
    spec.f = CoefficientField::analytic_scalar(|x| 1.0 + 0.5 * (3.0 * x[0]).sin());
    let cond = check_sign_condition(&spec, DriftPair::CD)?;
    report.check_true("cd_condition_holds", cond.holds);
    let sol = solve_neumann(&spec)?;
    let (lhs, rhs) = run_avg_inequality(&spec, &sol.u)?;
    report.check_le("inequality_holds", lhs, rhs * (1.0 + 1e-8));
    report.quantity("lhs", lhs);
    report.quantity("rhs", rhs);

    // nonpositive solutions leave the left side empty
    let mut neg = spec.clone();
    neg.f = CoefficientField::analytic_scalar(|x| -1.0 - 0.2 * x[0]);
    let sol_neg = solve_neumann(&neg)?;
    report.check_le("nonpositive_solution", sol_neg.u.max(), 1e-10);
    let (lhs_neg, _) = run_avg_inequality(&neg, &sol_neg.u)?;
    report.check_le("nonpositive_lhs_zero", lhs_neg.abs(), 1e-10);

    // zero data: both sides vanish
    let mut zero = spec.clone();
    zero.f = CoefficientField::scalar(0.0);
    let sol_zero = solve_neumann(&zero)?;
    let (l0, r0) = run_avg_inequality(&zero, &sol_zero.u)?;
    report.check_le("zero_data_lhs", l0.abs(), 1e-12);
    report.check_le("zero_data_rhs", r0.abs(), 1e-12);

    // the F term is rejected with a pointer to the remark
    let mut with_f = spec.clone();
    with_f.big_f = CoefficientField::vector([0.1, 0.0, 0.0]);
    report.check_true(
        "f_term_rejected",
        run_avg_inequality(&with_f, &sol.u).is_err(),
    );

    report.tolerance("inequality_slack", 1e-8);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Caccioppoli
// ---------------------------------------------------------------------------

pub fn run_caccioppoli(
    spec: &ProblemSpec,
    u: &FeFunction,
    center: Point,
    r: f64,
) -> Result<(f64, f64)> {
    let (lo, hi) = spec.mesh.bounding_box();
    if center
        .iter()
        .enumerate()
        .any(|(k, &x)| x < lo[k] - r || x > hi[k] + r)
    {
        return Err(Error::InvalidParameter(format!(
            "ball center {center:?} lies outside the mesh bounding box"
        )));
    }
    let inner = BallIntegrator::new(center, r);
    let lhs = inner
        .integrate(&spec.mesh, |cell, _| {
            let g = u.gradient(cell);
            geom::dot(g, g)
        })
        .value;
    let outer = BallIntegrator::new(center, 2.0 * r);
    let mass = outer
        .integrate(&spec.mesh, |cell, x| u.evaluate_in_cell(cell, x).powi(2))
        .value;
    let f_norm = outer
        .integrate(&spec.mesh, |cell, x| {
            spec.f
                .scalar_at(x, cell, false)
                .unwrap_or(0.0)
                .abs()
                .powf(2.0 * N / (N + 2.0))
        })
        .value
        .powf((N + 2.0) / N); // squared L^{2n/(n+2)} norm
    let big_f_norm = outer
        .integrate(&spec.mesh, |cell, x| {
            let v = spec.big_f.vector_at(x, cell, false).unwrap_or([0.0; 3]);
            geom::dot(v, v)
        })
        .value;
    let rhs = mass / (r * r) + f_norm + big_f_norm;
    Ok((lhs, rhs))
}

pub fn caccioppoli(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("caccioppoli", params.seed);
    let mesh = cube(params.resolution.min(8))?;
    report.mesh_hash = Some(mesh.content_hash());
    let center = [0.5, 0.5, 0.5];

    // f = d = 1 solves to the constant 1: zero left side exactly
    let mut const_spec = ProblemSpec::laplace(mesh.clone());
    const_spec.d = CoefficientField::scalar(1.0);
    const_spec.f = CoefficientField::scalar(1.0);
    let csol = solve_neumann(&const_spec)?;
    report.check_le(
        "constant_solution_deviation",
        csol.u
            .values
            .iter()
            .map(|v| (v - 1.0).abs())
            .fold(0.0f64, f64::max),
        1e-11,
    );
    let (lhs0, _) = run_caccioppoli(&const_spec, &csol.u, center, 0.2)?;
    report.check_le("constant_energy_zero", lhs0, 1e-18);

    // manufactured smooth solution
    let pi = std::f64::consts::PI;
    let mut spec = ProblemSpec::laplace(mesh.clone());
    spec.d = CoefficientField::scalar(1.0);
    spec.f = CoefficientField::analytic_scalar(move |x| {
        (pi * pi + 1.0) * (pi * x[0]).cos() + 1.0
    });
    let sol = solve_neumann(&spec)?;
    let mut ratios = Vec::new();
    for r in [0.1, 0.2, 0.4] {
        let (lhs, rhs) = run_caccioppoli(&spec, &sol.u, center, r)?;
        let ratio = lhs / rhs;
        report.check_le(&format!("ratio_finite_r_{r}"), ratio, 1e3);
        ratios.push((r, lhs, rhs, ratio));
        let mut row = BTreeMap::new();
        row.insert("r".to_string(), r);
        row.insert("lhs".to_string(), lhs);
        row.insert("rhs".to_string(), rhs);
        row.insert("ratio".to_string(), ratio);
        report.series.push(row);
    }
    report.quantity("ratio_at_0_2", ratios[1].3);

    // the 1/r^2 weight: halving r quadruples the first right-hand term's
    // weight at fixed u
    let m_02 = {
        let outer = BallIntegrator::new(center, 0.4);
        outer
            .integrate(&mesh, |cell, x| sol.u.evaluate_in_cell(cell, x).powi(2))
            .value
    };
    let w_01 = m_02 / (0.1 * 0.1);
    let w_02 = m_02 / (0.2 * 0.2);
    report.check_le("mass_weight_quadruples", (w_01 / w_02 - 4.0).abs(), 1e-12);

    // ball far outside the bounding box is rejected
    report.check_true(
        "outside_ball_rejected",
        run_caccioppoli(&spec, &sol.u, [50.0, 0.0, 0.0], 0.1).is_err(),
    );

    report.tolerance("ratio_bound", 1e3);
    Ok(report)
}

// ---------------------------------------------------------------------------
// pointwise suite
// ---------------------------------------------------------------------------

pub fn pointwise_suite(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("pointwise-suite", params.seed);
    let base = params.resolution.min(8);

    // zero data sanity
    {
        let mesh = cube(base)?;
        let mut spec = ProblemSpec::laplace(mesh);
        spec.d = CoefficientField::scalar(1.0);
        let sol = solve_neumann(&spec)?;
        report.check_le("zero_data_sup", sol.u.max_abs(), 1e-14);
    }

    // global bound: sup u+ against the average plus Lorentz data norms
    let mut ratios = Vec::new();
    for res in [base, base + base / 2] {
        let mesh = cube(res)?;
        if res == base {
            report.mesh_hash = Some(mesh.content_hash());
        }
        let mut spec = ProblemSpec::laplace(mesh.clone());
        spec.b = radial_drift(0.2);
        spec.d = CoefficientField::scalar(1.0);
        spec.f = CoefficientField::analytic_scalar(|x| 1.0 + x[1] + (2.0 * x[0]).cos().powi(2));
        spec.g = CoefficientField::scalar(0.5);
        let cond = check_sign_condition(&spec, DriftPair::BD)?;
        report.check_true(&format!("condition_holds_res{res}"), cond.holds);
        let sol = solve_neumann(&spec)?;
        let sup = sol.u.max().max(0.0);
        let mean_plus = integrate_cells(&mesh, &Region::All, 4, |cell, x| {
            sol.u.evaluate_in_cell(cell, x).max(0.0)
        })? / mesh.total_volume();
        let f_interp = FeFunction::interpolate(mesh.clone(), |x| {
            (1.0 + x[1] + (2.0 * x[0]).cos().powi(2)).max(0.0)
        })?;
        let f_lorentz = lorentz_norm(&Measured::p1(&f_interp), LorentzSpec::new(N / 2.0, 1.0)?);
        let g_interp = FeFunction::interpolate(mesh.clone(), |_| 0.5)?;
        let g_lorentz = lorentz_norm(
            &Measured::p1_boundary(&g_interp),
            LorentzSpec::new(N - 1.0, 1.0)?,
        );
        let rhs = mean_plus + f_lorentz + g_lorentz;
        let ratio = sup / rhs;
        ratios.push(ratio);
        let mut row = BTreeMap::new();
        row.insert("resolution".to_string(), res as f64);
        row.insert("sup_u_plus".to_string(), sup);
        row.insert("rhs".to_string(), rhs);
        row.insert("ratio".to_string(), ratio);
        report.series.push(row);
    }
    let stability = (ratios[0] / ratios[1]).max(ratios[1] / ratios[0]);
    report.check_le("global_ratio_stability", stability, 1.3);
    report.quantity("global_ratio", ratios[1]);

    // boundary-local bound on a graph domain with the 6(M+1) enlargement
    let spec_dom = GraphDomainSpec::with_psi(GraphBase::Square, 1.0, 0.5, |p| 0.5 * p[0]);
    let gmesh = Arc::new(build_graph_domain_mesh(&spec_dom, 2 * base.min(6))?);
    let mut gspec = ProblemSpec::laplace(gmesh.clone());
    gspec.d = CoefficientField::scalar(1.0);
    gspec.f = CoefficientField::scalar(1.0);
    let gsol = solve_neumann(&gspec)?;
    let m_slope = 0.5;
    let r_loc = 0.1;
    let q = [0.0, 0.0, 0.0]; // boundary point on the graph (psi(0) = 0)
    let small = BallIntegrator::new(q, r_loc);
    let big = BallIntegrator::new(q, 6.0 * (m_slope + 1.0) * r_loc);
    let sup_local = gmesh
        .vertices
        .iter()
        .enumerate()
        .filter(|(_, v)| geom::dist(**v, q) <= r_loc)
        .map(|(i, _)| gsol.u.values[i].max(0.0))
        .fold(0.0f64, f64::max);
    let big_int = big.integrate(&gmesh, |cell, x| gsol.u.evaluate_in_cell(cell, x).max(0.0));
    let mean_big = big_int.value / big_int.measure.max(1e-300);
    let f_interp = FeFunction::interpolate(gmesh.clone(), |_| 1.0)?;
    let f_lorentz = lorentz_norm(&Measured::p1(&f_interp), LorentzSpec::new(N / 2.0, 1.0)?);
    let local_ratio = sup_local / (mean_big + f_lorentz);
    report.check_le("boundary_local_ratio", local_ratio, 1e2);
    report.quantity("boundary_local_ratio", local_ratio);
    let _ = small;

    report.tolerance("stability_factor", 1.3);
    Ok(report)
}

// ---------------------------------------------------------------------------
// scale invariance of solution-to-data ratios
// ---------------------------------------------------------------------------

pub fn scale_invariance(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("scale-invariance", params.seed);
    let mesh = cube(params.resolution.min(8))?;
    report.mesh_hash = Some(mesh.content_hash());
    let pi = std::f64::consts::PI;
    let mut spec = ProblemSpec::laplace(mesh);
    spec.b = CoefficientField::vector([0.3, -0.1, 0.0]);
    spec.c = CoefficientField::vector([0.0, 0.2, 0.1]);
    spec.d = CoefficientField::scalar(1.0);
    spec.f = CoefficientField::analytic_scalar(move |x| (pi * x[0]).cos() + 0.5 * x[1]);
    spec.big_f = CoefficientField::vector([0.25, 0.0, -0.125]);
    spec.g = CoefficientField::analytic_scalar(|x| 0.5 + 0.25 * x[2]);

    let mut ratios = Vec::new();
    for r in [1.0f64, 0.5, 2.0, 4.0] {
        let scaled = scale_problem(&spec, r)?;
        let sol = solve_neumann(&scaled)?;
        let y_norm = lp_norm(&sol.u, 2.0 * N / (N - 2.0), &Region::All)?
            + lp_norm_gradient(&sol.u, 2.0)?;
        let f_norm = lp_norm_volume_field(&scaled.mesh, &scaled.f, 2.0 * N / (N + 2.0))?;
        let big_f_norm = integrate_cells(&scaled.mesh, &Region::All, 4, |cell, x| {
            let v = scaled.big_f.vector_at(x, cell, false).unwrap();
            geom::dot(v, v)
        })?
        .sqrt();
        let g_norm = lp_norm_boundary_field(&scaled.mesh, &scaled.g, 2.0 - 2.0 / N)?;
        let ratio = y_norm / (f_norm + big_f_norm + g_norm);
        ratios.push((r, ratio));
        let mut row = BTreeMap::new();
        row.insert("r".to_string(), r);
        row.insert("ratio".to_string(), ratio);
        report.series.push(row);
    }
    let base = ratios[0].1;
    for &(r, ratio) in &ratios[1..] {
        report.check_le(
            &format!("ratio_invariance_r_{r}"),
            (ratio - base).abs() / base,
            1e-9,
        );
    }
    report.quantity("ratio", base);
    report.tolerance("relative_invariance", 1e-9);
    Ok(report)
}

// ---------------------------------------------------------------------------
// subsolution rigidity
// ---------------------------------------------------------------------------

pub fn subsolution_rigidity(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("subsolution-rigidity", params.seed);
    let mesh = cube(params.resolution.min(6))?;
    report.mesh_hash = Some(mesh.content_hash());
    let pi = std::f64::consts::PI;
    let mut spec = ProblemSpec::laplace(mesh.clone());
    spec.b = CoefficientField::vector([0.3, -0.1, 0.2]);
    spec.f = CoefficientField::analytic_scalar(move |x| pi * pi * (pi * x[0]).cos());
    let comp1 = compatibility_check(&spec, Compatibility::Comp1)?;
    report.check_le("comp1_residual", comp1.abs(), 1e-10);

    let sys = assemble(&spec)?;
    // partition-of-unity identity: for any u, sum_j r_j = -Comp1 when
    // d = 0 and c = 0 (checked on random nodal vectors)
    let mut rng = StdRng::seed_from_u64(params.seed);
    let mut worst_identity = 0.0f64;
    for _ in 0..20 {
        let values: Vec<f64> = (0..mesh.num_vertices())
            .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
            .collect();
        let u = FeFunction::new(mesh.clone(), values)?;
        let rep = residual_vector_assembled(&sys, &u)?;
        let scale = crate::linalg::norm(&sys.load)
            + sys.matrix.norm_frobenius() * crate::linalg::norm(&u.values);
        worst_identity = worst_identity.max((rep.sum + comp1).abs() / scale.max(1e-300));
    }
    report.check_le("sum_identity", worst_identity, 1e-12);
    report.quantity("sum_identity_worst", worst_identity);

    // the computed solution is a discrete subsolution with zero residuals:
    // one-sided slack plus the zero sum force every residual to vanish
    let sol = solve_assembled(&spec, &sys, &sys.load)?;
    let rep = residual_vector_assembled(&sys, &sol.u)?;
    report.check_true("solution_class", rep.class == ResidualClass::Solution);
    let load_norm = crate::linalg::norm(&sys.load);
    report.check_le("solution_residual", rep.max_abs, 1e-10 * load_norm);
    report.quantity("solution_residual", rep.max_abs / load_norm);

    report.tolerance("identity", 1e-12);
    Ok(report)
}

// ---------------------------------------------------------------------------
// condition checker
// ---------------------------------------------------------------------------

pub fn condition_checker(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("condition-checker", params.seed);
    let res = params.resolution.min(6);

    // b = 0, d >= 0 passes
    let mesh = cube(res)?;
    report.mesh_hash = Some(mesh.content_hash());
    let mut good = ProblemSpec::laplace(mesh.clone());
    good.d = CoefficientField::analytic_scalar(|x| 1.0 + 0.5 * x[0]);
    let rep_good = check_sign_condition(&good, DriftPair::BD)?;
    report.check_true("zero_drift_passes", rep_good.holds);
    report.check_ge("zero_drift_min_hat", rep_good.min_value, 0.0);

    // hat-cone exactness: 100 random nonnegative hat combinations
    let mut rng = StdRng::seed_from_u64(params.seed);
    let mut worst_combo = f64::INFINITY;
    let mut worst_linearity = 0.0f64;
    for _ in 0..100 {
        let alphas: Vec<f64> = (0..mesh.num_vertices()).map(|_| rng.gen::<f64>()).collect();
        let combo: f64 = alphas
            .iter()
            .zip(rep_good.hat_values.iter())
            .map(|(a, v)| a * v)
            .sum();
        worst_combo = worst_combo.min(combo);
        // direct quadrature of the same functional at phi = sum alpha hat
        let phi = FeFunction::new(mesh.clone(), alphas.clone())?;
        let direct = integrate_cells(&mesh, &Region::All, 4, |cell, x| {
            let dv = good.d.scalar_at(x, cell, false).unwrap();
            dv * phi.evaluate_in_cell(cell, x)
        })?;
        worst_linearity = worst_linearity.max((combo - direct).abs() / direct.abs().max(1e-300));
    }
    report.check_ge("random_cone_combinations", worst_combo, 0.0);
    report.check_le("cone_linearity", worst_linearity, 1e-12);
    report.quantity("cone_linearity_worst", worst_linearity);

    // the half-space drift b = e_n, d = 0 fails through the bottom hats
    let half = Arc::new(build_box_mesh([0.0, 0.0, 0.0], [1.0, 1.0, 0.5], [res, res, res / 2])?);
    let mut bad = ProblemSpec::laplace(half.clone());
    bad.b = CoefficientField::vector([0.0, 0.0, 1.0]);
    let rep_bad = check_sign_condition(&bad, DriftPair::BD)?;
    report.check_true("half_space_fails", !rep_bad.holds);
    let negative_all_bottom = rep_bad
        .hat_values
        .iter()
        .enumerate()
        .all(|(j, &v)| (v < -1e-12) == (half.vertices[j][2] == 0.0));
    report.check_true("negative_hats_are_bottom", negative_all_bottom);

    // singular radial drift with positive divergence on a refined
    // polyhedral approximation of the half-ball
    let disk = GraphDomainSpec::flat(GraphBase::Disk { segments: 32 }, 0.25);
    let ball_mesh = Arc::new(build_graph_domain_mesh(&disk, 4)?);
    let mut sing = ProblemSpec::laplace(ball_mesh);
    sing.b = CoefficientField::analytic_vector(|x: Point| {
        let r2 = geom::dot(x, x).max(1e-30);
        let lnr = (r2.sqrt()).ln();
        geom::scale(x, -1.0 / (r2 * lnr))
    });
    let rep_sing = check_sign_condition(&sing, DriftPair::BD)?;
    report.check_true("singular_drift_fails", !rep_sing.holds);
    let div_min = rep_sing
        .per_cell_div
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    report.check_ge("divergence_positive", div_min, 0.0);
    report.quantity("divergence_min", div_min);

    report.tolerance("cone_exactness", 1e-12);
    Ok(report)
}

// ---------------------------------------------------------------------------
// reflection machinery
// ---------------------------------------------------------------------------

pub fn reflection_extension(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("reflection-extension", params.seed);
    let m_slope = 0.5f64;
    let mut norm_ratios = Vec::new();
    let mut mean_ratios = Vec::new();
    for res in [3usize, 6] {
        let spec = GraphDomainSpec::with_psi(GraphBase::Square, 1.0, m_slope, |p| 0.5 * p[0]);
        let upper = build_graph_domain_mesh(&spec, res)?;
        let refl = reflect_mesh(&upper)?;
        let map = ReflectionMap::new(&upper)?;
        let union = Arc::new(refl.mesh.clone());
        if res == 3 {
            report.mesh_hash = Some(union.content_hash());
        }

        // |b'|_{L^n(lower)} <= (1 + 2M) |b|_{L^n(upper)}: the Jacobian of
        // the reflection has norm at most 1 + 2M
        let mut rng = StdRng::seed_from_u64(params.seed);
        let b_field = CoefficientField::PerCell(
            (0..upper.num_cells())
                .map(|_| {
                    FieldValue::Vector([
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                    ])
                })
                .collect(),
        );
        let reflected = crate::fe::reflect_coefficient(&b_field, &upper, &refl, &map)?;
        let (mut upper_norm, mut lower_norm) = (0.0f64, 0.0f64);
        if let CoefficientField::PerCell(vals) = &reflected {
            for (uc, &(_, mirrored)) in refl.cell_source.iter().enumerate() {
                if let FieldValue::Vector(v) = vals[uc] {
                    let contrib = geom::norm(v).powf(N) * union.cell_volume(uc);
                    if mirrored {
                        lower_norm += contrib;
                    } else {
                        upper_norm += contrib;
                    }
                }
            }
        }
        let ratio = (lower_norm / upper_norm).powf(1.0 / N);
        report.check_le(
            &format!("drift_norm_ratio_res{res}"),
            ratio,
            1.0 + 2.0 * m_slope + 1e-9,
        );
        norm_ratios.push(ratio);

        // mean of |u~| over B_r against the mean over B_{3(M+1)r} in the
        // upper half
        let u = FeFunction::interpolate(Arc::new(upper.clone()), |x| {
            (1.0 + x[2]).powi(2) + 0.3 * (2.0 * x[0]).sin().abs()
        })?;
        let tilde = crate::fe::reflect_function(&u, &refl, union.clone())?;
        let r = 0.15;
        let small = BallIntegrator::new([0.0, 0.0, 0.0], r);
        let small_int = small.integrate(&union, |cell, x| tilde.evaluate_in_cell(cell, x).abs());
        let big = BallIntegrator::new([0.0, 0.0, 0.0], 3.0 * (m_slope + 1.0) * r);
        // restrict the big ball to the upper half: integrate on the
        // original mesh
        let upper_ref = Arc::new(upper.clone());
        let big_int = big.integrate(&upper_ref, |cell, x| {
            u.evaluate_in_cell(cell, x).abs()
        });
        let mean_small = small_int.value / small_int.measure.max(1e-300);
        let mean_big = big_int.value / big_int.measure.max(1e-300);
        let c_measured = mean_small / mean_big;
        mean_ratios.push(c_measured);
        report.quantity(&format!("reflection_mean_ratio_res{res}"), c_measured);
    }
    let stability = (mean_ratios[0] / mean_ratios[1]).max(mean_ratios[1] / mean_ratios[0]);
    report.check_le("mean_ratio_stability", stability, 1.3);
    report.check_le(
        "norm_ratio_stability",
        (norm_ratios[0] / norm_ratios[1]).max(norm_ratios[1] / norm_ratios[0]),
        1.3,
    );

    report.tolerance("jacobian_bound", 1.0 + 2.0 * m_slope);
    Ok(report)
}

// ---------------------------------------------------------------------------
// manufactured-solution convergence
// ---------------------------------------------------------------------------

pub fn mms_convergence(params: &RunParams) -> Result<EstimateReport> {
    let mut report = EstimateReport::new("mms-convergence", params.seed);
    let pi = std::f64::consts::PI;
    let exact = move |x: Point| (pi * x[0]).cos();
    let base = params.resolution.min(8) / 2;

    for (name, d_val, f_scale) in [("drift_free", 0.0, pi * pi), ("reaction", 1.0, pi * pi + 1.0)]
    {
        let mut errs = Vec::new();
        for res in [base, 2 * base] {
            let mesh = cube(res)?;
            let mut spec = ProblemSpec::laplace(mesh.clone());
            if d_val != 0.0 {
                spec.d = CoefficientField::scalar(d_val);
            }
            spec.f = CoefficientField::analytic_scalar(move |x| f_scale * (pi * x[0]).cos());
            let sol = solve_neumann(&spec)?;
            let e2 = integrate_cells(&mesh, &Region::All, 6, |c, x| {
                let d = sol.u.evaluate_in_cell(c, x) - exact(x);
                d * d
            })?
            .sqrt();
            errs.push(e2);
            let mut row = BTreeMap::new();
            row.insert("resolution".to_string(), res as f64);
            row.insert(format!("{name}_l2_error"), e2);
            report.series.push(row);
        }
        let rate = (errs[0] / errs[1]).log2();
        report.check_ge(&format!("{name}_rate"), rate, 1.7);
        report.quantity(&format!("{name}_rate"), rate);
    }
    report.tolerance("min_rate", 1.7);
    Ok(report)
}
