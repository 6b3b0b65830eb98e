//! Assembly and solution of the Neumann problem
//! `-div(A grad u + b u) + c . grad u + d u = f - div F`,
//! `(A grad u + b u) . nu = g + F . nu on Gamma`,
//! in direct, adjoint and reduced-drift variants, with the sign-condition
//! checker, kernel-dimension analysis and the exact problem rescaling.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fe::{
    bary_point, bary_point_tri, integrate_boundary, integrate_cells, mat_vec, CoefficientField,
    FeFunction, Region,
};
use crate::geom::{self, Point};
use crate::linalg::{smallest_singular_triples, LuFactor, SparseMat};
use crate::mesh::{dilate_mesh, MeshRef};
use crate::quad::QuadratureRule;

pub const DIM_N: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    /// `-div(A grad u + b u) + c . grad u + d u`.
    Direct,
    /// `-div(A^T grad u + c u) + b . grad u + d u` (roles of b and c
    /// exchanged, A transposed); its matrix is the transpose of the direct
    /// one.
    Adjoint,
    /// `-div(A grad u + (b - c) u)`: the drift-only reduction used when
    /// the reaction integrates to zero.
    ReducedDrift,
}

/// One Neumann problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub mesh: MeshRef,
    pub a: CoefficientField,
    pub b: CoefficientField,
    pub c: CoefficientField,
    pub d: CoefficientField,
    pub f: CoefficientField,
    pub big_f: CoefficientField,
    pub g: CoefficientField,
    pub lambda: f64,
    pub big_lambda: f64,
    pub variant: Variant,
    /// Boundary part carrying the Neumann data.
    pub gamma: Region,
}

impl ProblemSpec {
    /// Laplace operator with zero lower-order terms and zero data.
    pub fn laplace(mesh: MeshRef) -> Self {
        Self {
            mesh,
            a: CoefficientField::identity(),
            b: CoefficientField::vector([0.0; 3]),
            c: CoefficientField::vector([0.0; 3]),
            d: CoefficientField::scalar(0.0),
            f: CoefficientField::scalar(0.0),
            big_f: CoefficientField::vector([0.0; 3]),
            g: CoefficientField::scalar(0.0),
            lambda: 1.0,
            big_lambda: 1.0,
            variant: Variant::Direct,
            gamma: Region::Boundary,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    fn coeff_order(&self) -> usize {
        let all_pc = self.a.is_piecewise_constant()
            && self.b.is_piecewise_constant()
            && self.c.is_piecewise_constant()
            && self.d.is_piecewise_constant();
        if all_pc {
            2
        } else {
            4
        }
    }
}

#[derive(Debug)]
pub struct AssembledSystem {
    pub matrix: SparseMat,
    pub load: Vec<f64>,
    /// `m_j = int phi_j` (exact).
    pub mean_vector: Vec<f64>,
    /// Worst ellipticity margin violations, when the check ran.
    pub ellipticity_warning: Option<String>,
}

/// Assembles `K[i][j] = B[phi_j, phi_i]` and the load
/// `int f phi_i + F . grad phi_i + int_Gamma g phi_i`.
pub fn assemble(spec: &ProblemSpec) -> Result<AssembledSystem> {
    let mesh = &spec.mesh;
    let n = mesh.num_vertices();
    let order = spec.coeff_order();
    let rule = QuadratureRule::simplex(3, order)?;
    let skip_b = spec.b.is_zero() && spec.variant != Variant::Adjoint;
    let skip_c = spec.c.is_zero() && spec.variant != Variant::Adjoint;

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(16 * mesh.num_cells());
    let mut load = vec![0.0; n];
    let mut mean_vector = vec![0.0; n];

    for cell in 0..mesh.num_cells() {
        let p = mesh.cell_coords(cell);
        let vol = mesh.cell_volume(cell);
        let grads = geom::barycentric_gradients(&p);
        let verts = mesh.cells[cell];
        let mut local = [[0.0f64; 4]; 4];
        let mut local_load = [0.0f64; 4];
        for q in 0..rule.len() {
            let lam = rule.point(q);
            let x = bary_point(&p, lam);
            let w = 6.0 * vol * rule.weights[q];

            // effective coefficients for the variant
            let (a_mat, b_vec, c_vec, d_val) = match spec.variant {
                Variant::Direct => (
                    spec.a.matrix_at(x, cell, false)?,
                    spec.b.vector_at(x, cell, false)?,
                    spec.c.vector_at(x, cell, false)?,
                    spec.d.scalar_at(x, cell, false)?,
                ),
                Variant::Adjoint => {
                    let a = spec.a.matrix_at(x, cell, false)?;
                    let mut at = [[0.0; 3]; 3];
                    for r in 0..3 {
                        for cc in 0..3 {
                            at[r][cc] = a[cc][r];
                        }
                    }
                    (
                        at,
                        spec.c.vector_at(x, cell, false)?,
                        spec.b.vector_at(x, cell, false)?,
                        spec.d.scalar_at(x, cell, false)?,
                    )
                }
                Variant::ReducedDrift => {
                    let b = spec.b.vector_at(x, cell, false)?;
                    let c = spec.c.vector_at(x, cell, false)?;
                    (
                        spec.a.matrix_at(x, cell, false)?,
                        geom::sub(b, c),
                        [0.0; 3],
                        0.0,
                    )
                }
            };

            // A grad(phi_j) precomputed per trial index
            let a_gj: [Point; 4] = [
                mat_vec(&a_mat, grads[0]),
                mat_vec(&a_mat, grads[1]),
                mat_vec(&a_mat, grads[2]),
                mat_vec(&a_mat, grads[3]),
            ];
            for i in 0..4 {
                for j in 0..4 {
                    let mut v = geom::dot(a_gj[j], grads[i]);
                    if !skip_b || spec.variant == Variant::ReducedDrift {
                        v += lam[j] * geom::dot(b_vec, grads[i]);
                    }
                    if !skip_c && spec.variant != Variant::ReducedDrift {
                        v += geom::dot(c_vec, grads[j]) * lam[i];
                    }
                    if d_val != 0.0 {
                        v += d_val * lam[i] * lam[j];
                    }
                    local[i][j] += w * v;
                }
                // loads: f phi_i + F . grad phi_i
                let fv = spec.f.scalar_at(x, cell, false)?;
                let big_fv = spec.big_f.vector_at(x, cell, false)?;
                local_load[i] += w * (fv * lam[i] + geom::dot(big_fv, grads[i]));
            }
        }
        for i in 0..4 {
            mean_vector[verts[i]] += vol / 4.0;
            load[verts[i]] += local_load[i];
            for j in 0..4 {
                if local[i][j] != 0.0 {
                    triplets.push((verts[i], verts[j], local[i][j]));
                }
            }
        }
    }

    // boundary load int_Gamma g phi_i
    if !spec.g.is_zero() {
        let brule = QuadratureRule::simplex(2, 4)?;
        let facet_in_gamma = |fi: usize| match &spec.gamma {
            Region::Boundary => true,
            Region::BoundaryTag(tag) => mesh.boundary[fi].tag == *tag,
            Region::BoundaryFacets(list) => list.contains(&fi),
            _ => false,
        };
        for (fi, facet) in mesh.boundary.iter().enumerate() {
            if !facet_in_gamma(fi) {
                continue;
            }
            let tri = mesh.facet_coords(facet);
            for q in 0..brule.len() {
                let lam = brule.point(q);
                let x = bary_point_tri(&tri, lam);
                let w = 2.0 * facet.area * brule.weights[q];
                let gv = spec.g.scalar_at(x, fi, true)?;
                for i in 0..3 {
                    load[facet.verts[i]] += w * gv * lam[i];
                }
            }
        }
    }

    let matrix = SparseMat::from_triplets(n, n, &triplets)?;
    let ellipticity_warning = match spec.a.check_ellipticity(mesh, spec.lambda, spec.big_lambda) {
        Ok((lo, hi)) if lo < -1e-12 || hi < -1e-12 => Some(format!(
            "ellipticity margins violated: lower {lo:e}, upper {hi:e}"
        )),
        Ok(_) => None,
        Err(_) => Some("ellipticity check could not sample A".into()),
    };
    Ok(AssembledSystem {
        matrix,
        load,
        mean_vector,
        ellipticity_warning,
    })
}

// ---------------------------------------------------------------------------
// sign condition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DriftPair {
    /// Condition on `(b, d)`.
    BD,
    /// Condition on `(c, d)`.
    CD,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub pair: DriftPair,
    /// `v_j = int b . grad phi_j + d phi_j` per hat.
    pub hat_values: Vec<f64>,
    pub min_value: f64,
    pub holds: bool,
    pub integral_d: f64,
    pub delta0: f64,
    /// Per-cell divergence of the drift (0 for piecewise-constant drift).
    pub per_cell_div: Vec<f64>,
    /// Drift flux `b . nu` at boundary facet centroids.
    pub per_facet_flux: Vec<f64>,
}

/// Evaluates the hat functionals `v_j = int b . grad phi_j + d phi_j`.
/// Every nonnegative P1 function is a nonnegative hat combination, so
/// `min_j v_j >= 0` decides the condition exactly on the discrete cone.
pub fn check_sign_condition(spec: &ProblemSpec, pair: DriftPair) -> Result<ConditionReport> {
    let mesh = &spec.mesh;
    let n = mesh.num_vertices();
    let drift = match pair {
        DriftPair::BD => &spec.b,
        DriftPair::CD => &spec.c,
    };
    let order = if drift.is_piecewise_constant() && spec.d.is_piecewise_constant() {
        2
    } else {
        4
    };
    let rule = QuadratureRule::simplex(3, order)?;
    let mut hat_values = vec![0.0; n];
    for cell in 0..mesh.num_cells() {
        let p = mesh.cell_coords(cell);
        let vol = mesh.cell_volume(cell);
        let grads = geom::barycentric_gradients(&p);
        let verts = mesh.cells[cell];
        for q in 0..rule.len() {
            let lam = rule.point(q);
            let x = bary_point(&p, lam);
            let w = 6.0 * vol * rule.weights[q];
            let bv = drift.vector_at(x, cell, false)?;
            let dv = spec.d.scalar_at(x, cell, false)?;
            for i in 0..4 {
                hat_values[verts[i]] += w * (geom::dot(bv, grads[i]) + dv * lam[i]);
            }
        }
    }
    let min_value = hat_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = hat_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let holds = min_value >= -1e-12 * scale.max(1e-300);

    let (int_d, delta0) = integral_d(spec)?;
    let per_cell_div: Vec<f64> = (0..mesh.num_cells())
        .map(|cell| {
            if drift.is_piecewise_constant() {
                0.0
            } else {
                let x = mesh.cell_centroid(cell);
                let h = 1e-6 * mesh.mesh_size();
                let mut div = 0.0;
                for k in 0..3 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    let vp = drift.vector_at(xp, cell, false).unwrap_or([0.0; 3]);
                    let vm = drift.vector_at(xm, cell, false).unwrap_or([0.0; 3]);
                    div += (vp[k] - vm[k]) / (2.0 * h);
                }
                div
            }
        })
        .collect();
    let per_facet_flux: Vec<f64> = mesh
        .boundary
        .iter()
        .map(|facet| {
            let tri = mesh.facet_coords(facet);
            let x = geom::scale(geom::add(geom::add(tri[0], tri[1]), tri[2]), 1.0 / 3.0);
            drift
                .vector_at(x, facet.cell, false)
                .map(|b| geom::dot(b, facet.normal))
                .unwrap_or(f64::NAN)
        })
        .collect();

    Ok(ConditionReport {
        pair,
        hat_values,
        min_value,
        holds,
        integral_d: int_d,
        delta0,
        per_cell_div,
        per_facet_flux,
    })
}

/// `(int_Omega d, delta_0 = |Omega|^{2/n - 1} int_Omega d)`.
pub fn integral_d(spec: &ProblemSpec) -> Result<(f64, f64)> {
    let order = if spec.d.is_piecewise_constant() { 2 } else { 4 };
    let int_d = integrate_cells(&spec.mesh, &Region::All, order, |cell, x| {
        spec.d.scalar_at(x, cell, false).unwrap_or(f64::NAN)
    })?;
    let vol = spec.mesh.total_volume();
    let exponent = 2.0 / DIM_N as f64 - 1.0;
    Ok((int_d, vol.powf(exponent) * int_d))
}

fn d_l1_norm(spec: &ProblemSpec) -> Result<f64> {
    let order = if spec.d.is_piecewise_constant() { 2 } else { 4 };
    integrate_cells(&spec.mesh, &Region::All, order, |cell, x| {
        spec.d.scalar_at(x, cell, false).unwrap_or(f64::NAN).abs()
    })
}

// ---------------------------------------------------------------------------
// kernel analysis
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct KernelReport {
    /// Ascending smallest singular values (up to 6).
    pub sigmas: Vec<f64>,
    pub dimension: usize,
    /// Ratio certifying the dimension choice: the spectral gap for a
    /// positive dimension, the margin above the mass scale otherwise.
    pub gap_ratio: f64,
    /// Typical Rayleigh scale of the mass part, `|Omega| / #vertices`.
    pub mass_scale: f64,
    pub basis: Vec<FeFunction>,
    /// Matrix residuals `|K z|` of the basis vectors.
    pub residuals: Vec<f64>,
    /// Positive normalized kernel function when the dimension is 1.
    pub u_hat: Option<FeFunction>,
    pub u_hat_positive: bool,
}

/// Detects the kernel dimension of the assembled operator by the spectral
/// gap among its smallest singular values. Values are compared against the
/// mass scale `|Omega| / #vertices`: a kernel candidate must sit below a
/// tenth of it, and the gap to the first non-candidate must reach 10.
pub fn kernel_analysis(spec: &ProblemSpec) -> Result<KernelReport> {
    let sys = assemble(spec)?;
    kernel_analysis_assembled(spec, &sys)
}

pub fn kernel_analysis_assembled(spec: &ProblemSpec, sys: &AssembledSystem) -> Result<KernelReport> {
    let mesh = &spec.mesh;
    let n = mesh.num_vertices();
    let k = 6.min(n);
    let triples = smallest_singular_triples(&sys.matrix, k, 0x5eed)?;
    let sigmas = triples.sigmas.clone();
    let mass_scale = mesh.total_volume() / n as f64;
    let small_cut = 0.1 * mass_scale;

    let candidates: Vec<usize> = (0..sigmas.len().saturating_sub(1))
        .filter(|&i| sigmas[i] <= small_cut)
        .collect();
    let (dimension, gap_ratio) = if candidates.is_empty() {
        (0usize, sigmas[0] / small_cut.max(1e-300))
    } else {
        let i_star = *candidates
            .iter()
            .max_by(|&&a, &&b| {
                let ra = sigmas[a + 1] / sigmas[a].max(1e-300);
                let rb = sigmas[b + 1] / sigmas[b].max(1e-300);
                ra.partial_cmp(&rb).unwrap()
            })
            .unwrap();
        let ratio = sigmas[i_star + 1] / sigmas[i_star].max(1e-300);
        if ratio < 10.0 {
            let second = candidates.len();
            return Err(Error::AmbiguousKernel(i_star + 1, second, ratio));
        }
        (i_star + 1, ratio)
    };

    let mut basis = Vec::new();
    let mut residuals = Vec::new();
    for i in 0..dimension {
        let v = &triples.vectors[i];
        residuals.push(crate::linalg::norm(&sys.matrix.matvec(v)));
        basis.push(FeFunction::new(mesh.clone(), v.clone())?);
    }

    let (u_hat, u_hat_positive) = if dimension == 1 {
        let mut vals = basis[0].values.clone();
        let mean_sign = vals
            .iter()
            .zip(sys.mean_vector.iter())
            .map(|(v, m)| v * m)
            .sum::<f64>();
        if mean_sign < 0.0 {
            for v in &mut vals {
                *v = -*v;
            }
        }
        let positive = vals.iter().all(|&v| v > 0.0);
        let mut f = FeFunction::new(mesh.clone(), vals)?;
        let norm6 = crate::fe::lp_norm(&f, 2.0 * DIM_N as f64 / (DIM_N as f64 - 2.0), &Region::All)?;
        for v in &mut f.values {
            *v /= norm6;
        }
        (Some(f), positive)
    } else {
        (None, false)
    };

    Ok(KernelReport {
        sigmas,
        dimension,
        gap_ratio,
        mass_scale,
        basis,
        residuals,
        u_hat,
        u_hat_positive,
    })
}

// ---------------------------------------------------------------------------
// solvers
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct SolveResult {
    pub u: FeFunction,
    /// `|K u (+ mu m) - load| / |load|`.
    pub relative_residual: f64,
    /// Lagrange multiplier of the mean constraint, when used.
    pub multiplier: Option<f64>,
    pub compatibility_residual: Option<f64>,
    /// Set when `0 < int d` is so small that constants degrade.
    pub conditioning_warning: Option<String>,
}

/// Signed residual of the compatibility conditions. `Comp1` is
/// `int f + int_Gamma g`; `Comp2` weights the data by the kernel function.
pub enum Compatibility<'a> {
    Comp1,
    Comp2 { u_hat: &'a FeFunction },
}

pub fn compatibility_check(spec: &ProblemSpec, which: Compatibility<'_>) -> Result<f64> {
    match which {
        Compatibility::Comp1 => {
            let int_f = integrate_cells(&spec.mesh, &Region::All, 4, |cell, x| {
                spec.f.scalar_at(x, cell, false).unwrap_or(f64::NAN)
            })?;
            let int_g = integrate_boundary(&spec.mesh, &spec_gamma(spec), 4, |fi, _, x| {
                spec.g.scalar_at(x, fi, true).unwrap_or(f64::NAN)
            })?;
            Ok(int_f + int_g)
        }
        Compatibility::Comp2 { u_hat } => {
            let vol_part = integrate_cells(&spec.mesh, &Region::All, 4, |cell, x| {
                let fv = spec.f.scalar_at(x, cell, false).unwrap_or(f64::NAN);
                let big_fv = spec.big_f.vector_at(x, cell, false).unwrap_or([f64::NAN; 3]);
                fv * u_hat.evaluate_in_cell(cell, x) + geom::dot(big_fv, u_hat.gradient(cell))
            })?;
            let surf_part = integrate_boundary(&spec.mesh, &spec_gamma(spec), 4, |fi, facet, x| {
                spec.g.scalar_at(x, fi, true).unwrap_or(f64::NAN)
                    * crate::fe::facet_value(u_hat, facet, x)
            })?;
            Ok(vol_part + surf_part)
        }
    }
}

fn spec_gamma(spec: &ProblemSpec) -> Region {
    match &spec.gamma {
        Region::Boundary => Region::Boundary,
        Region::BoundaryTag(t) => Region::BoundaryTag(*t),
        Region::BoundaryFacets(f) => Region::BoundaryFacets(f.clone()),
        _ => Region::Boundary,
    }
}

fn data_scale(spec: &ProblemSpec) -> f64 {
    let f_l1 = integrate_cells(&spec.mesh, &Region::All, 4, |cell, x| {
        spec.f.scalar_at(x, cell, false).unwrap_or(0.0).abs()
    })
    .unwrap_or(0.0);
    let g_l1 = integrate_boundary(&spec.mesh, &Region::Boundary, 4, |fi, _, x| {
        spec.g.scalar_at(x, fi, true).unwrap_or(0.0).abs()
    })
    .unwrap_or(0.0);
    f_l1 + g_l1
}

/// Solves the Neumann problem. With `int d > 0` the system is regular and
/// solved directly; with `int d = 0` (within `1e-10 |d|_{L^1}`) the
/// compatibility condition is enforced, the operator must reduce to drift
/// form, and the mean-zero representative is selected by a Lagrange
/// multiplier saddle system.
pub fn solve_neumann(spec: &ProblemSpec) -> Result<SolveResult> {
    let sys = assemble(spec)?;
    solve_assembled(spec, &sys, &sys.load)
}

pub fn solve_assembled(
    spec: &ProblemSpec,
    sys: &AssembledSystem,
    load: &[f64],
) -> Result<SolveResult> {
    let (int_d, _delta0) = integral_d(spec)?;
    let d_scale = d_l1_norm(spec)?;
    let mean_zero_route = int_d.abs() <= 1e-10 * d_scale.max(1e-300) || d_scale == 0.0;

    if mean_zero_route {
        // Comp1 within tolerance of the data scale
        let comp1 = compatibility_check(spec, Compatibility::Comp1)?;
        let scale = data_scale(spec);
        if comp1.abs() > 1e-8 * scale.max(1e-300) {
            return Err(Error::CompatibilityViolated(comp1));
        }
        // the operator must reduce: all hat functionals of (c, d) vanish
        // (for the adjoint variant the roles are exchanged, so check (b, d))
        let residual_pair = match spec.variant {
            Variant::Adjoint => DriftPair::BD,
            _ => DriftPair::CD,
        };
        let cd = check_sign_condition(spec, residual_pair)?;
        let worst = cd.hat_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cd_scale = drift_scale(spec, residual_pair)?;
        if worst > 1e-10 * cd_scale.max(1e-300) && cd_scale > 0.0 {
            return Err(Error::NotReducible(worst));
        }
        solve_saddle(spec, sys, load)
    } else {
        let lu = LuFactor::new(&sys.matrix)?;
        let u = lu.solve(load);
        let r = residual_norm(&sys.matrix, &u, None, &sys.mean_vector, load);
        let load_norm = crate::linalg::norm(load).max(1e-300);
        let warning = if int_d > 0.0 && int_d < 1e-4 * d_scale {
            Some(format!(
                "int d = {int_d:e} is nearly zero relative to |d|_L1 = {d_scale:e}; \
                 constants degrade as delta_0 -> 0"
            ))
        } else {
            None
        };
        Ok(SolveResult {
            u: FeFunction::new(spec.mesh.clone(), u)?,
            relative_residual: r / load_norm,
            multiplier: None,
            compatibility_residual: None,
            conditioning_warning: warning,
        })
    }
}

fn drift_scale(spec: &ProblemSpec, pair: DriftPair) -> Result<f64> {
    let drift = match pair {
        DriftPair::BD => &spec.b,
        DriftPair::CD => &spec.c,
    };
    let b_l1 = integrate_cells(&spec.mesh, &Region::All, 4, |cell, x| {
        drift
            .vector_at(x, cell, false)
            .map(geom::norm)
            .unwrap_or(0.0)
    })?;
    let d_l1 = d_l1_norm(spec)?;
    // the hat functionals scale like |b| / h + |d|
    let h = spec.mesh.mesh_size().max(1e-300);
    Ok(b_l1 / h + d_l1)
}

fn solve_saddle(spec: &ProblemSpec, sys: &AssembledSystem, load: &[f64]) -> Result<SolveResult> {
    let n = spec.mesh.num_vertices();
    let mut triplets = sys.matrix.triplets();
    for (j, &m) in sys.mean_vector.iter().enumerate() {
        triplets.push((j, n, m));
        triplets.push((n, j, m));
    }
    let saddle = SparseMat::from_triplets(n + 1, n + 1, &triplets)?;
    let lu = LuFactor::new(&saddle)?;
    let mut rhs = load.to_vec();
    rhs.push(0.0);
    let sol = lu.solve(&rhs);
    let (u, mu) = (sol[..n].to_vec(), sol[n]);
    let r = residual_norm(&sys.matrix, &u, Some(mu), &sys.mean_vector, load);
    let load_norm = crate::linalg::norm(load).max(1e-300);
    let comp1 = compatibility_check(spec, Compatibility::Comp1).ok();
    Ok(SolveResult {
        u: FeFunction::new(spec.mesh.clone(), u)?,
        relative_residual: r / load_norm,
        multiplier: Some(mu),
        compatibility_residual: comp1,
        conditioning_warning: None,
    })
}

fn residual_norm(
    k: &SparseMat,
    u: &[f64],
    mu: Option<f64>,
    mean: &[f64],
    load: &[f64],
) -> f64 {
    let ku = k.matvec(u);
    let mut worst = 0.0f64;
    let mut sum = 0.0;
    for i in 0..u.len() {
        let mut r = ku[i] - load[i];
        if let Some(mu) = mu {
            r += mu * mean[i];
        }
        worst = worst.max(r.abs());
        sum += r * r;
    }
    let _ = worst;
    sum.sqrt()
}

/// Adjoint solve: the same machinery with the adjoint variant; the
/// assembled adjoint matrix is exactly the transpose of the direct one.
/// With `int d = 0` the compatibility condition is the kernel-weighted
/// `Comp2`, which requires the direct problem's kernel function.
pub fn solve_adjoint(spec: &ProblemSpec, u_hat: Option<&FeFunction>) -> Result<SolveResult> {
    let adjoint = ProblemSpec {
        variant: Variant::Adjoint,
        ..spec.clone()
    };
    let (int_d, _) = integral_d(spec)?;
    let d_scale = d_l1_norm(spec)?;
    if int_d.abs() <= 1e-10 * d_scale.max(1e-300) || d_scale == 0.0 {
        if let Some(u_hat) = u_hat {
            let comp2 = compatibility_check(spec, Compatibility::Comp2 { u_hat })?;
            let scale = data_scale(spec);
            if comp2.abs() > 1e-8 * scale.max(1e-300) {
                return Err(Error::CompatibilityViolated(comp2));
            }
        }
    }
    solve_neumann(&adjoint)
}

// ---------------------------------------------------------------------------
// residual vector / discrete sub- and supersolutions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ResidualClass {
    Solution,
    Subsolution,
    Supersolution,
    Neither,
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// `r_j = B[u, phi_j] - load_j`.
    pub residuals: Vec<f64>,
    pub class: ResidualClass,
    pub max_abs: f64,
    /// `sum_j r_j = B[u, 1] - (int f + int_Gamma g)`.
    pub sum: f64,
}

pub fn residual_vector(spec: &ProblemSpec, u: &FeFunction) -> Result<ResidualReport> {
    let sys = assemble(spec)?;
    residual_vector_assembled(&sys, u)
}

pub fn residual_vector_assembled(sys: &AssembledSystem, u: &FeFunction) -> Result<ResidualReport> {
    let ku = sys.matrix.matvec(&u.values);
    let residuals: Vec<f64> = ku
        .iter()
        .zip(sys.load.iter())
        .map(|(a, b)| a - b)
        .collect();
    let max_abs = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let load_scale = crate::linalg::norm(&sys.load).max(
        1e-12 * sys.matrix.norm_frobenius() * crate::linalg::norm(&u.values),
    );
    let tol = 1e-10 * load_scale.max(1e-300);
    let all_le = residuals.iter().all(|&r| r <= tol);
    let all_ge = residuals.iter().all(|&r| r >= -tol);
    let class = match (all_le, all_ge) {
        (true, true) => ResidualClass::Solution,
        (true, false) => ResidualClass::Subsolution,
        (false, true) => ResidualClass::Supersolution,
        (false, false) => ResidualClass::Neither,
    };
    Ok(ResidualReport {
        sum: residuals.iter().sum(),
        residuals,
        class,
        max_abs,
    })
}

// ---------------------------------------------------------------------------
// problem rescaling
// ---------------------------------------------------------------------------

/// The exact rescaling `u_r(x) = u(r x)` on `Omega_r = (1/r) Omega`:
/// coefficients become `A_r, r b_r, r c_r, r^2 d_r` and the data
/// `r^2 f_r, r F_r, r g_r`. For powers of two the transformed discrete
/// problem has exactly proportional matrices, so nodal solutions agree to
/// rounding.
pub fn scale_problem(spec: &ProblemSpec, r: f64) -> Result<ProblemSpec> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("scale factor {r} <= 0")));
    }
    let mesh = Arc::new(dilate_mesh(&spec.mesh, 1.0 / r)?);
    let scale_scalar = |field: &CoefficientField, factor: f64| -> CoefficientField {
        match field {
            CoefficientField::Analytic(f) => {
                let f = f.clone();
                CoefficientField::Analytic(Arc::new(move |x: Point| {
                    match f([r * x[0], r * x[1], r * x[2]]) {
                        crate::fe::FieldValue::Scalar(s) => {
                            crate::fe::FieldValue::Scalar(factor * s)
                        }
                        other => other,
                    }
                }))
            }
            CoefficientField::PerCell(v) => CoefficientField::PerCell(
                v.iter()
                    .map(|fv| match fv {
                        crate::fe::FieldValue::Scalar(s) => {
                            crate::fe::FieldValue::Scalar(factor * s)
                        }
                        other => *other,
                    })
                    .collect(),
            ),
            CoefficientField::PerFacet(v) => CoefficientField::PerFacet(
                v.iter()
                    .map(|fv| match fv {
                        crate::fe::FieldValue::Scalar(s) => {
                            crate::fe::FieldValue::Scalar(factor * s)
                        }
                        other => *other,
                    })
                    .collect(),
            ),
            CoefficientField::Constant(crate::fe::FieldValue::Scalar(s)) => {
                CoefficientField::scalar(factor * s)
            }
            other => other.clone(),
        }
    };
    let scale_vector = |field: &CoefficientField, factor: f64| -> CoefficientField {
        match field {
            CoefficientField::Analytic(f) => {
                let f = f.clone();
                CoefficientField::Analytic(Arc::new(move |x: Point| {
                    match f([r * x[0], r * x[1], r * x[2]]) {
                        crate::fe::FieldValue::Vector(v) => {
                            crate::fe::FieldValue::Vector(geom::scale(v, factor))
                        }
                        other => other,
                    }
                }))
            }
            CoefficientField::PerCell(v) => CoefficientField::PerCell(
                v.iter()
                    .map(|fv| match fv {
                        crate::fe::FieldValue::Vector(w) => {
                            crate::fe::FieldValue::Vector(geom::scale(*w, factor))
                        }
                        other => *other,
                    })
                    .collect(),
            ),
            CoefficientField::Constant(crate::fe::FieldValue::Vector(v)) => {
                CoefficientField::vector(geom::scale(*v, factor))
            }
            other => other.clone(),
        }
    };
    let compose_matrix = |field: &CoefficientField| -> CoefficientField {
        match field {
            CoefficientField::Analytic(f) => {
                let f = f.clone();
                CoefficientField::Analytic(Arc::new(move |x: Point| {
                    f([r * x[0], r * x[1], r * x[2]])
                }))
            }
            other => other.clone(),
        }
    };
    Ok(ProblemSpec {
        mesh,
        a: compose_matrix(&spec.a),
        b: scale_vector(&spec.b, r),
        c: scale_vector(&spec.c, r),
        d: scale_scalar(&spec.d, r * r),
        f: scale_scalar(&spec.f, r * r),
        big_f: scale_vector(&spec.big_f, r),
        g: scale_scalar(&spec.g, r),
        lambda: spec.lambda,
        big_lambda: spec.big_lambda,
        variant: spec.variant,
        gamma: spec_gamma(spec),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, SimplicialMesh};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn cube(res: usize) -> MeshRef {
        Arc::new(build_box_mesh([0.0; 3], [1.0; 3], [res, res, res]).unwrap())
    }

    #[test]
    fn constants_in_neumann_kernel() {
        let spec = ProblemSpec::laplace(cube(2));
        let sys = assemble(&spec).unwrap();
        let ones = vec![1.0; spec.mesh.num_vertices()];
        let ku = sys.matrix.matvec(&ones);
        let worst = ku.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-13, "K 1 = {worst:e}");
    }

    #[test]
    fn reference_tet_stiffness() {
        let verts = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let mesh = Arc::new(SimplicialMesh::from_cells(verts, vec![[0, 1, 2, 3]]).unwrap());
        let spec = ProblemSpec::laplace(mesh);
        let sys = assemble(&spec).unwrap();
        let dense = sys.matrix.to_dense();
        // hand-integrated barycentric gradient products times volume 1/6
        let expected = [
            [0.5, -1.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0],
            [-1.0 / 6.0, 1.0 / 6.0, 0.0, 0.0],
            [-1.0 / 6.0, 0.0, 1.0 / 6.0, 0.0],
            [-1.0 / 6.0, 0.0, 0.0, 1.0 / 6.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (dense[(i, j)] - expected[i][j]).abs() < 1e-14,
                    "K[{i}][{j}] = {}",
                    dense[(i, j)]
                );
            }
        }
    }

    #[test]
    fn drift_partition_of_unity() {
        let mut spec = ProblemSpec::laplace(cube(2));
        spec.b = CoefficientField::vector([0.3, -0.7, 0.2]);
        let sys = assemble(&spec).unwrap();
        let n = spec.mesh.num_vertices();
        // row sums over the trial index give int b . grad phi_i; their
        // total vanishes because the hats sum to one
        let laplace_sys = assemble(&ProblemSpec::laplace(spec.mesh.clone())).unwrap();
        let mut row_sums = vec![0.0; n];
        for (i, j, v) in sys.matrix.triplets() {
            let _ = j;
            row_sums[i] += v;
        }
        for (i, j, v) in laplace_sys.matrix.triplets() {
            let _ = j;
            row_sums[i] -= v;
        }
        let total: f64 = row_sums.iter().sum();
        assert!(total.abs() < 1e-12, "total {total:e}");
        // each row sum equals the hat functional of the drift
        let cond = check_sign_condition(&spec, DriftPair::BD).unwrap();
        for (rs, hv) in row_sums.iter().zip(cond.hat_values.iter()) {
            assert!((rs - hv).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_condition_examples() {
        // b = 0, d >= 0 passes
        let mut spec = ProblemSpec::laplace(cube(2));
        spec.d = CoefficientField::scalar(1.0);
        let rep = check_sign_condition(&spec, DriftPair::BD).unwrap();
        assert!(rep.holds);
        assert!(rep.min_value >= 0.0);
        assert!((rep.hat_values.iter().sum::<f64>() - rep.integral_d).abs() < 1e-12);

        // upper half-box with b = e_n, d = 0 fails through the bottom hats
        let half = Arc::new(build_box_mesh([0.0, 0.0, 0.0], [1.0, 1.0, 0.5], [2, 2, 1]).unwrap());
        let mut spec = ProblemSpec::laplace(half.clone());
        spec.b = CoefficientField::vector([0.0, 0.0, 1.0]);
        let rep = check_sign_condition(&spec, DriftPair::BD).unwrap();
        assert!(!rep.holds);
        // the negative hats are exactly the bottom-boundary ones
        for (j, &v) in rep.hat_values.iter().enumerate() {
            let on_bottom = half.vertices[j][2] == 0.0;
            if v < -1e-12 {
                assert!(on_bottom, "negative hat {j} not on the bottom");
            }
            if on_bottom {
                assert!(v < -1e-12, "bottom hat {j} has value {v:e}");
            }
        }
    }

    #[test]
    fn integral_d_values() {
        let spec = ProblemSpec::laplace(cube(2));
        let (i0, d0) = integral_d(&spec).unwrap();
        assert_eq!((i0, d0), (0.0, 0.0));
        let mut spec = spec;
        spec.d = CoefficientField::scalar(1.0);
        let (i1, d1) = integral_d(&spec).unwrap();
        assert!((i1 - 1.0).abs() < 1e-13 && (d1 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn kernel_dimension_laplace_vs_reaction() {
        let spec = ProblemSpec::laplace(cube(4));
        let rep = kernel_analysis(&spec).unwrap();
        assert_eq!(rep.dimension, 1);
        assert!(rep.gap_ratio >= 10.0);
        let uh = rep.u_hat.as_ref().unwrap();
        assert!(rep.u_hat_positive);
        // normalized constant: |Omega|^{-(n-2)/(2n)} = 1 on the unit cube
        for &v in &uh.values {
            assert!((v - 1.0).abs() < 1e-9, "u_hat value {v}");
        }
        let norm6 = crate::fe::lp_norm(uh, 6.0, &Region::All).unwrap();
        assert!((norm6 - 1.0).abs() < 1e-10);

        let mut spec_d = ProblemSpec::laplace(cube(4));
        spec_d.d = CoefficientField::scalar(1.0);
        let rep = kernel_analysis(&spec_d).unwrap();
        assert_eq!(rep.dimension, 0);
    }

    #[test]
    fn manufactured_solution_convergence() {
        // -div(grad u) = pi^2 cos(pi x), du/dn = 0, compatible since
        // int f = 0; convergence measured in L2 against the manufactured u
        let exact = |x: Point| (PI * x[0]).cos();
        let mut errs = Vec::new();
        for res in [4usize, 8] {
            let mut spec = ProblemSpec::laplace(cube(res));
            spec.f = CoefficientField::analytic_scalar(move |x| PI * PI * (PI * x[0]).cos());
            let sol = solve_neumann(&spec).unwrap();
            assert!(sol.relative_residual < 1e-10);
            assert!(sol.multiplier.is_some());
            // compare against the mean-zero exact solution (already mean zero)
            let e2 = integrate_cells(&spec.mesh, &Region::All, 6, |c, x| {
                let d = sol.u.evaluate_in_cell(c, x) - exact(x);
                d * d
            })
            .unwrap()
            .sqrt();
            errs.push(e2);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0, "convergence ratio {ratio}");
    }

    #[test]
    fn manufactured_reaction_convergence() {
        let exact = |x: Point| (PI * x[0]).cos();
        let mut errs = Vec::new();
        for res in [4usize, 8] {
            let mut spec = ProblemSpec::laplace(cube(res));
            spec.d = CoefficientField::scalar(1.0);
            spec.f =
                CoefficientField::analytic_scalar(move |x| (PI * PI + 1.0) * (PI * x[0]).cos());
            let sol = solve_neumann(&spec).unwrap();
            assert!(sol.relative_residual < 1e-10);
            assert!(sol.multiplier.is_none());
            let e2 = integrate_cells(&spec.mesh, &Region::All, 6, |c, x| {
                let d = sol.u.evaluate_in_cell(c, x) - exact(x);
                d * d
            })
            .unwrap()
            .sqrt();
            errs.push(e2);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0, "convergence ratio {ratio}");
    }

    #[test]
    fn zero_data_zero_solution() {
        let mut spec = ProblemSpec::laplace(cube(2));
        spec.d = CoefficientField::scalar(1.0);
        let sol = solve_neumann(&spec).unwrap();
        assert!(sol.u.max_abs() < 1e-14);
    }

    #[test]
    fn adjoint_is_transpose() {
        let mut spec = ProblemSpec::laplace(cube(2));
        spec.a = CoefficientField::matrix([[2.0, 0.3, 0.0], [0.1, 1.5, 0.2], [0.0, 0.4, 1.0]]);
        spec.b = CoefficientField::vector([0.5, -0.2, 0.1]);
        spec.c = CoefficientField::vector([-0.3, 0.0, 0.7]);
        spec.d = CoefficientField::scalar(2.0);
        let direct = assemble(&spec).unwrap();
        let adj = assemble(&spec.clone().with_variant(Variant::Adjoint)).unwrap();
        let mut diff = 0.0f64;
        let d1 = direct.matrix.to_dense();
        let d2 = adj.matrix.to_dense();
        let n = spec.mesh.num_vertices();
        for i in 0..n {
            for j in 0..n {
                diff = diff.max((d1[(i, j)] - d2[(j, i)]).abs());
            }
        }
        assert!(diff < 1e-13, "transpose deviation {diff:e}");
    }

    #[test]
    fn adjoint_solve_matches_direct_for_symmetric() {
        let mut spec = ProblemSpec::laplace(cube(3));
        spec.d = CoefficientField::scalar(1.0);
        spec.f = CoefficientField::analytic_scalar(|x| x[0] - x[1]);
        let direct = solve_neumann(&spec).unwrap();
        let adjoint = solve_adjoint(&spec, None).unwrap();
        let diff: f64 = direct
            .u
            .values
            .iter()
            .zip(adjoint.u.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-11, "diff {diff:e}");
    }

    #[test]
    fn transpose_duality_pairing() {
        // <f_tilde, u> = <v, f> for the adjoint solve v with swapped data
        let mut spec = ProblemSpec::laplace(cube(3));
        spec.d = CoefficientField::scalar(1.0);
        spec.b = CoefficientField::vector([0.4, 0.1, -0.2]);
        spec.f = CoefficientField::analytic_scalar(|x| (2.0 * x[0]).sin() + x[2]);
        let sys = assemble(&spec).unwrap();
        let u = solve_assembled(&spec, &sys, &sys.load).unwrap();

        let mut spec_t = spec.clone();
        spec_t.f = CoefficientField::analytic_scalar(|x| x[1] * x[1] - 0.3);
        let sys_t = assemble(&spec_t).unwrap();
        let adj = solve_adjoint(&spec_t, None).unwrap();

        // <load_tilde, u> vs <load, v>
        let lhs = crate::linalg::dot(&sys_t.load, &u.u.values);
        let rhs = crate::linalg::dot(&sys.load, &adj.u.values);
        assert!(
            (lhs - rhs).abs() < 1e-10 * lhs.abs().max(1e-300),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn compatibility_examples() {
        let m = cube(2);
        let mut spec = ProblemSpec::laplace(m.clone());
        spec.f = CoefficientField::scalar(1.0);
        spec.g = CoefficientField::scalar(-1.0 / 6.0);
        let r = compatibility_check(&spec, Compatibility::Comp1).unwrap();
        assert!(r.abs() < 1e-13);

        spec.g = CoefficientField::scalar(0.0);
        let r = compatibility_check(&spec, Compatibility::Comp1).unwrap();
        assert!((r - 1.0).abs() < 1e-13);
        assert!(matches!(
            solve_neumann(&spec),
            Err(Error::CompatibilityViolated(_))
        ));

        // with b = 0 the kernel is constant and Comp2 is Comp1 times it
        let u_hat = FeFunction::interpolate(m, |_| 1.0).unwrap();
        let r2 = compatibility_check(&spec, Compatibility::Comp2 { u_hat: &u_hat }).unwrap();
        assert!((r2 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn residual_vector_classification() {
        let mut spec = ProblemSpec::laplace(cube(2));
        spec.d = CoefficientField::scalar(1.0);
        spec.f = CoefficientField::analytic_scalar(|x| x[0]);
        let sys = assemble(&spec).unwrap();
        let sol = solve_assembled(&spec, &sys, &sys.load).unwrap();
        let rep = residual_vector_assembled(&sys, &sol.u).unwrap();
        assert_eq!(rep.class, ResidualClass::Solution);
        let load_norm = crate::linalg::norm(&sys.load);
        assert!(rep.max_abs <= 1e-10 * load_norm);

        // subtracting a positive hat multiple perturbs residuals by -alpha K
        // column; with an SPD operator the diagonal entry goes negative
        let jmid = spec.mesh.num_vertices() / 2;
        let mut u2 = sol.u.clone();
        u2.values[jmid] -= 0.5;
        let rep2 = residual_vector_assembled(&sys, &u2).unwrap();
        assert!(rep2.residuals[jmid] < -1e-6);

        // partition of unity: sum_j r_j = B[u, 1] - (int f + int g)
        let comp1 = compatibility_check(&spec, Compatibility::Comp1).unwrap();
        // B[u, 1] = int d u for b = 0
        let int_du = integrate_cells(&spec.mesh, &Region::All, 4, |c, x| {
            sol.u.evaluate_in_cell(c, x)
        })
        .unwrap();
        let rep1 = residual_vector_assembled(&sys, &sol.u).unwrap();
        assert!(
            (rep1.sum - (int_du - comp1)).abs() < 1e-10 * comp1.abs().max(1.0),
            "sum {} vs {}",
            rep1.sum,
            int_du - comp1
        );
    }

    #[test]
    fn scale_problem_identity_and_covariance() {
        let mut spec = ProblemSpec::laplace(cube(3));
        spec.d = CoefficientField::scalar(1.0);
        spec.f = CoefficientField::analytic_scalar(|x| (PI * x[0]).cos() + 0.5 * x[1]);
        let same = scale_problem(&spec, 1.0).unwrap();
        assert_eq!(same.mesh.vertices, spec.mesh.vertices);

        let sol = solve_neumann(&spec).unwrap();
        for r in [2.0f64, 0.5] {
            let scaled = scale_problem(&spec, r).unwrap();
            let sol_r = solve_neumann(&scaled).unwrap();
            let dev: f64 = sol
                .u
                .values
                .iter()
                .zip(sol_r.u.values.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(
                dev <= 1e-10 * sol.u.max_abs(),
                "r = {r}: nodal deviation {dev:e}"
            );
            // delta0 is scale invariant
            let (_, d0) = integral_d(&spec).unwrap();
            let (_, d0r) = integral_d(&scaled).unwrap();
            assert!((d0 - d0r).abs() < 1e-12 * d0.abs().max(1e-300));
        }
        assert!(scale_problem(&spec, 0.0).is_err());
    }
}
