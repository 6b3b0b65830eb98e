//! Constructive splitting of a P1 function into clamp pieces whose
//! gradients live on disjoint level-set bands where a P0 weight has a
//! prescribed L^n budget, in a plain and a mean-zero-preserving variant.
//!
//! Pieces are stored as clamp descriptors, not re-interpolated: clamps of
//! P1 functions are not P1, and the pointwise algebra of the pieces must
//! stay exact.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fe::FeFunction;
use crate::geom;
use crate::rearrange::{cell_integral_below, cell_volume_below};

const DIM_N: f64 = 3.0;

/// One piece of a splitting, evaluated through the value of `u` alone.
#[derive(Debug, Clone, Copy, Serialize)]
pub enum ClampPiece {
    /// Sign-preserving clamp of |u| to the band (lo, hi]:
    /// `sgn(u) (clamp(|u|, lo, hi) - lo)`.
    Plain { lo: f64, hi: f64 },
    /// Mean-zero piece with positive band (s, t] and negative band
    /// [k_t, k_s): the five-branch cut formula.
    MeanZero { s: f64, t: f64, k_s: f64, k_t: f64 },
}

impl ClampPiece {
    /// Piece value as a function of the value of `u` at the same point.
    pub fn apply(&self, u: f64) -> f64 {
        match *self {
            ClampPiece::Plain { lo, hi } => {
                let a = u.abs();
                if a <= lo {
                    0.0
                } else if a <= hi {
                    u.signum() * (a - lo)
                } else {
                    u.signum() * (hi - lo)
                }
            }
            ClampPiece::MeanZero { s, t, k_s, k_t } => {
                if u <= k_t {
                    k_t - k_s
                } else if u <= k_s {
                    u - k_s
                } else if u <= s {
                    0.0
                } else if u <= t {
                    u - s
                } else {
                    t - s
                }
            }
        }
    }

    /// True where the piece follows `u` (its gradient band).
    pub fn grad_active(&self, u: f64) -> bool {
        match *self {
            ClampPiece::Plain { lo, hi } => {
                let a = u.abs();
                a > lo && a <= hi
            }
            ClampPiece::MeanZero { s, t, k_s, k_t } => {
                (u > s && u <= t) || (u >= k_t && u < k_s)
            }
        }
    }
}

/// Levels, thresholds, budgets and pieces of one splitting run.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub u: FeFunction,
    /// Per-cell |h| values (P0 weight).
    pub h: Vec<f64>,
    pub eps: f64,
    /// Levels `M = s_0 > s_1 > ... > s_N = 0`.
    pub levels: Vec<f64>,
    /// Mean-zero variant: thresholds `k_{s_i}`, same indexing as levels.
    pub thresholds: Option<Vec<f64>>,
    pub pieces: Vec<ClampPiece>,
    /// `int_{Omega_i} |h|^n` per piece.
    pub budgets: Vec<f64>,
    /// Worst deviation of an interior budget from eps^n (bisection slack).
    pub budget_slack: f64,
    /// Cells counted as `grad u != 0`.
    pub active_cells: Vec<bool>,
}

impl SplitResult {
    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    /// The count bound `N <= 1 + (|h|_n / eps)^n`.
    pub fn count_bound(&self) -> f64 {
        let hn: f64 = (0..self.u.mesh.num_cells())
            .map(|c| self.h[c].abs().powf(DIM_N) * self.u.mesh.cell_volume(c))
            .sum();
        1.0 + hn / self.eps.powf(DIM_N)
    }

    /// `|grad u_i|_{L^2}^2`, exact: the gradient is the gradient of `u`
    /// restricted to the piece's band.
    pub fn piece_gradient_energy(&self, i: usize) -> f64 {
        let mesh = &self.u.mesh;
        let mut s = 0.0;
        for c in 0..mesh.num_cells() {
            if !self.active_cells[c] {
                continue;
            }
            let g2 = {
                let g = self.u.gradient(c);
                geom::dot(g, g)
            };
            s += g2 * self.band_volume_in_cell(c, i);
        }
        s
    }

    /// Exact integral of piece `i` over the mesh, branch by branch.
    pub fn piece_integral(&self, i: usize) -> f64 {
        let mesh = &self.u.mesh;
        let branches = piece_branches(&self.pieces[i]);
        let mut total = 0.0;
        for c in 0..mesh.num_cells() {
            let p = mesh.cell_coords(c);
            let v = self.u.cell_values(c);
            let vol = mesh.cell_volume(c);
            let mean = v.iter().sum::<f64>() / 4.0;
            for &(a, b, alpha, beta) in &branches {
                if alpha == 0.0 && beta == 0.0 {
                    continue;
                }
                // integral of alpha + beta u over {a < u <= b}
                let upper = if b.is_infinite() {
                    vol * (alpha + beta * mean)
                } else {
                    cell_integral_below(&p, &v, b, alpha, beta)
                };
                let lower = if a.is_infinite() {
                    0.0
                } else {
                    cell_integral_below(&p, &v, a, alpha, beta)
                };
                total += upper - lower;
            }
        }
        total
    }

    fn band_volume_in_cell(&self, c: usize, i: usize) -> f64 {
        let mesh = &self.u.mesh;
        let p = mesh.cell_coords(c);
        let v = self.u.cell_values(c);
        match self.pieces[i] {
            ClampPiece::Plain { lo, hi } => {
                let below = |lam: f64| {
                    cell_volume_below(&p, &v, lam) - cell_volume_below(&p, &v, -lam)
                };
                (below(hi) - below(lo)).max(0.0)
            }
            ClampPiece::MeanZero { s, t, k_s, k_t } => {
                let pos = cell_volume_below(&p, &v, t) - cell_volume_below(&p, &v, s);
                let neg = cell_volume_below(&p, &v, k_s) - cell_volume_below(&p, &v, k_t);
                (pos + neg).max(0.0)
            }
        }
    }

    /// `int_{Omega_i} |h|^n` recomputed from scratch.
    pub fn budget(&self, i: usize) -> f64 {
        let mesh = &self.u.mesh;
        (0..mesh.num_cells())
            .filter(|&c| self.active_cells[c])
            .map(|c| self.h[c].abs().powf(DIM_N) * self.band_volume_in_cell(c, i))
            .sum()
    }

    /// Levels and thresholds as a JSON document for experiment reports.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "eps": self.eps,
            "piece_count": self.pieces.len(),
            "levels": self.levels,
            "thresholds": self.thresholds,
            "budgets": self.budgets,
            "budget_slack": self.budget_slack,
            "count_bound": self.count_bound(),
        })
    }
}

fn l1_norm(u: &FeFunction) -> f64 {
    let mesh = &u.mesh;
    let mut s = 0.0;
    for c in 0..mesh.num_cells() {
        let p = mesh.cell_coords(c);
        let v = u.cell_values(c);
        // int |u| = int_{u>0} u - int_{u<=0} u
        let neg = cell_integral_below(&p, &v, 0.0, 0.0, 1.0);
        let pos = u_integral_above(&p, &v, 0.0);
        s += pos - neg;
    }
    s
}

/// `int_{u > l} (u - l)` over one cell.
fn u_integral_above(p: &[crate::geom::Point; 4], v: &[f64; 4], l: f64) -> f64 {
    // substitute w = -u: {w < -l}, integrand (-w) - l
    let w = v.map(|x| -x);
    cell_integral_below(p, &w, -l, -l, -1.0)
}

/// `g(k) = int_{u < k} (k - u)` over the whole mesh.
fn g_of_k(u: &FeFunction, k: f64) -> f64 {
    let mesh = &u.mesh;
    (0..mesh.num_cells())
        .map(|c| {
            let p = mesh.cell_coords(c);
            let v = u.cell_values(c);
            cell_integral_below(&p, &v, k, k, -1.0)
        })
        .sum()
}

fn rhs_of_l(u: &FeFunction, l: f64) -> f64 {
    let mesh = &u.mesh;
    (0..mesh.num_cells())
        .map(|c| {
            let p = mesh.cell_coords(c);
            let v = u.cell_values(c);
            u_integral_above(&p, &v, l)
        })
        .sum()
}

fn check_mean_zero(u: &FeFunction) -> Result<f64> {
    let l1 = l1_norm(u);
    let integral = u.integral();
    let tol = 1e-12 * l1.max(1e-300);
    if integral.abs() > tol {
        return Err(Error::NotMeanZero { integral, tol });
    }
    Ok(l1)
}

/// Solves `int_{u > l}(u - l) = g(k_l)` for the unique `k_l in (m, 0]` by
/// monotone bisection on the strictly increasing `g`. Returns `m` for
/// `l >= max u` (the `g(m) = 0` convention).
pub fn threshold_k(u: &FeFunction, l: f64) -> Result<f64> {
    if l < 0.0 {
        return Err(Error::InvalidParameter(format!("level l = {l} < 0")));
    }
    let l1 = check_mean_zero(u)?;
    let m = u.min();
    let big_m = u.max();
    if l >= big_m {
        return Ok(m);
    }
    let target = rhs_of_l(u, l);
    let tol = 1e-12 * l1.max(1e-300);
    if target <= tol {
        return Ok(m);
    }
    let (mut lo, mut hi) = (m, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g_of_k(u, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * (big_m - m).max(1e-300) {
            break;
        }
    }
    let k = 0.5 * (lo + hi);
    let residual = (g_of_k(u, k) - target).abs();
    if residual > tol.max(1e-10 * target) {
        return Err(Error::InvalidParameter(format!(
            "threshold bisection residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(k)
}

fn active_cells(u: &FeFunction) -> Vec<bool> {
    let mesh = &u.mesh;
    let gnorms: Vec<f64> = (0..mesh.num_cells())
        .map(|c| geom::norm(u.gradient(c)))
        .collect();
    let gmax = gnorms.iter().cloned().fold(0.0f64, f64::max);
    gnorms.iter().map(|&g| g > 1e-13 * gmax).collect()
}

struct BandWeigher<'a> {
    u: &'a FeFunction,
    h: &'a [f64],
    active: &'a [bool],
}

impl BandWeigher<'_> {
    /// `int |h|^n` over `{s < |u| <= t, grad u != 0}` (plain) or over the
    /// two-sided region of the mean-zero variant.
    fn weight_plain(&self, s: f64, t: f64) -> f64 {
        let mesh = &self.u.mesh;
        let mut total = 0.0;
        for c in 0..mesh.num_cells() {
            if !self.active[c] || self.h[c] == 0.0 {
                continue;
            }
            let p = mesh.cell_coords(c);
            let v = self.u.cell_values(c);
            let below = |lam: f64| {
                cell_volume_below(&p, &v, lam) - cell_volume_below(&p, &v, -lam)
            };
            let band = (below(t) - below(s)).max(0.0);
            total += self.h[c].abs().powf(DIM_N) * band;
        }
        total
    }

    fn weight_mean_zero(&self, s: f64, t: f64, k_s: f64, k_t: f64) -> f64 {
        let mesh = &self.u.mesh;
        let mut total = 0.0;
        for c in 0..mesh.num_cells() {
            if !self.active[c] || self.h[c] == 0.0 {
                continue;
            }
            let p = mesh.cell_coords(c);
            let v = self.u.cell_values(c);
            let pos = (cell_volume_below(&p, &v, t) - cell_volume_below(&p, &v, s)).max(0.0);
            let neg = (cell_volume_below(&p, &v, k_s) - cell_volume_below(&p, &v, k_t)).max(0.0);
            total += self.h[c].abs().powf(DIM_N) * (pos + neg);
        }
        total
    }
}

/// Greedy level construction shared by both variants: peel bands of weight
/// `eps^n` from the top level down until the rest fits in one piece.
fn find_levels(
    weigher: &dyn Fn(f64, f64) -> f64,
    top: f64,
    eps_n: f64,
) -> (Vec<f64>, Vec<f64>, f64) {
    let mut levels = vec![top];
    let mut budgets = Vec::new();
    let mut slack = 0.0f64;
    let mut t = top;
    loop {
        let rest = weigher(0.0, t);
        if rest <= eps_n * (1.0 + 1e-12) {
            levels.push(0.0);
            budgets.push(rest);
            break;
        }
        // bisect s in [0, t): weight(s, t) decreasing in s, crosses eps^n
        let (mut lo, mut hi) = (0.0, t);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if weigher(mid, t) > eps_n {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * top.max(1e-300) {
                break;
            }
        }
        let s = 0.5 * (lo + hi);
        let got = weigher(s, t);
        slack = slack.max((got - eps_n).abs());
        levels.push(s);
        budgets.push(got);
        t = s;
        if s <= 0.0 {
            break;
        }
    }
    (levels, budgets, slack)
}

/// Splits `u` (any sign; the sign-preserving clamp acts on |u|) against
/// the weight budget `eps` in L^n.
pub fn split_plain(u: &FeFunction, h: &[f64], eps: f64) -> Result<SplitResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} <= 0")));
    }
    if h.len() != u.mesh.num_cells() {
        return Err(Error::InvalidParameter(
            "weight field must have one value per cell".into(),
        ));
    }
    let active = active_cells(u);
    let top = u.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps_n = eps.powf(DIM_N);
    let weigher = BandWeigher {
        u,
        h,
        active: &active,
    };
    let (levels, budgets, slack) = if top == 0.0 {
        (vec![0.0, 0.0], vec![0.0], 0.0)
    } else {
        find_levels(&|s, t| weigher.weight_plain(s, t), top, eps_n)
    };
    let pieces: Vec<ClampPiece> = levels
        .windows(2)
        .map(|w| ClampPiece::Plain { lo: w[1], hi: w[0] })
        .collect();
    Ok(SplitResult {
        u: u.clone(),
        h: h.to_vec(),
        eps,
        levels,
        thresholds: None,
        pieces,
        budgets,
        budget_slack: slack,
        active_cells: active,
    })
}

/// Mean-zero splitting: every piece integrates to zero, with the negative
/// thresholds `k_{s_i}` balancing the positive levels.
pub fn split_mean_zero(u: &FeFunction, h: &[f64], eps: f64) -> Result<SplitResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} <= 0")));
    }
    if h.len() != u.mesh.num_cells() {
        return Err(Error::InvalidParameter(
            "weight field must have one value per cell".into(),
        ));
    }
    check_mean_zero(u)?;
    let active = active_cells(u);
    let top = u.max().max(0.0);
    let eps_n = eps.powf(DIM_N);
    let weigher = BandWeigher {
        u,
        h,
        active: &active,
    };
    // memoized threshold lookup: k_l is needed many times per bisection
    let cache = std::cell::RefCell::new(BTreeMap::<u64, f64>::new());
    let k_of = |l: f64| -> f64 {
        let key = l.to_bits();
        if let Some(&k) = cache.borrow().get(&key) {
            return k;
        }
        let k = threshold_k(u, l).unwrap_or(u.min());
        cache.borrow_mut().insert(key, k);
        k
    };
    let (levels, budgets, slack) = if top == 0.0 && u.min() >= 0.0 {
        (vec![0.0, 0.0], vec![0.0], 0.0)
    } else {
        find_levels(
            &|s, t| weigher.weight_mean_zero(s, t, k_of(s), k_of(t)),
            top,
            eps_n,
        )
    };
    let thresholds: Vec<f64> = levels.iter().map(|&l| k_of(l)).collect();
    let pieces: Vec<ClampPiece> = levels
        .windows(2)
        .enumerate()
        .map(|(i, w)| ClampPiece::MeanZero {
            s: w[1],
            t: w[0],
            k_s: thresholds[i + 1],
            k_t: thresholds[i],
        })
        .collect();
    Ok(SplitResult {
        u: u.clone(),
        h: h.to_vec(),
        eps,
        levels,
        thresholds: Some(thresholds),
        pieces,
        budgets,
        budget_slack: slack,
        active_cells: active,
    })
}

// ---------------------------------------------------------------------------
// property verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SplitPropertyReport {
    pub piece_count: usize,
    /// (b) gradient support inside the band.
    pub support_violation: f64,
    /// (c) grad u_i = grad u on the band.
    pub gradient_match_violation: f64,
    /// (d) |u_i| <= |u|.
    pub dominated_violation: f64,
    /// (e) u u_i >= 0.
    pub sign_violation: f64,
    /// (f) sum u_i = u.
    pub sum_violation: f64,
    /// (g) u_i grad u = sum_{j<=i} u_i grad u_j.
    pub lower_telescope_violation: f64,
    /// (h) u grad u_i = sum_{j>=i} u_j grad u_i.
    pub upper_telescope_violation: f64,
    /// Pairwise band overlap (should be empty).
    pub disjointness_violation: f64,
    /// Worst |budget_i - eps^n| over interior pieces, relative to eps^n.
    pub budget_violation: f64,
    /// Mean-zero variant: worst |int u_i| relative to |u|_{L^1}.
    pub mean_violation: Option<f64>,
    pub count_bound_ok: bool,
    pub worst: f64,
}

/// Evaluates the clamp algebra of the splitting at random sample points
/// and the integral budgets exactly; reports worst violations.
pub fn verify_split(
    result: &SplitResult,
    sample_count: usize,
    rng: &mut impl rand::Rng,
) -> SplitPropertyReport {
    let mesh = &result.u.mesh;
    let n_pieces = result.pieces.len();
    let mut support = 0.0f64;
    let mut grad_match = 0.0f64;
    let mut dominated = 0.0f64;
    let mut sign = 0.0f64;
    let mut sum_v = 0.0f64;
    let mut lower = 0.0f64;
    let mut upper = 0.0f64;
    let scale = result.u.max_abs().max(1e-300);

    for _ in 0..sample_count {
        let c = rng.gen_range(0..mesh.num_cells());
        let p = mesh.cell_coords(c);
        // uniform barycentric sample
        let mut e = [
            -(rng.gen::<f64>()).ln(),
            -(rng.gen::<f64>()).ln(),
            -(rng.gen::<f64>()).ln(),
            -(rng.gen::<f64>()).ln(),
        ];
        let tot: f64 = e.iter().sum();
        for v in &mut e {
            *v /= tot;
        }
        let x = crate::fe::bary_point(&p, &e);
        let uval = result.u.evaluate_in_cell(c, x);
        let grad_u = if result.active_cells[c] {
            result.u.gradient(c)
        } else {
            [0.0; 3]
        };
        let piece_vals: Vec<f64> = result.pieces.iter().map(|pc| pc.apply(uval)).collect();
        let piece_active: Vec<bool> = result
            .pieces
            .iter()
            .map(|pc| result.active_cells[c] && pc.grad_active(uval))
            .collect();
        let piece_grads: Vec<[f64; 3]> = piece_active
            .iter()
            .map(|&a| if a { grad_u } else { [0.0; 3] })
            .collect();

        // (b) + (c): active pieces carry exactly grad u, inactive zero
        for i in 0..n_pieces {
            if piece_active[i] {
                let d = geom::norm(geom::sub(piece_grads[i], grad_u));
                grad_match = grad_match.max(d);
            } else {
                support = support.max(geom::norm(piece_grads[i]));
            }
            dominated = dominated.max(piece_vals[i].abs() - uval.abs());
            sign = sign.max(-(uval * piece_vals[i]));
        }
        let total: f64 = piece_vals.iter().sum();
        sum_v = sum_v.max((total - uval).abs());

        // (g): u_i grad u = sum_{j<=i} u_i grad u_j
        for i in 0..n_pieces {
            let lhs = geom::scale(grad_u, piece_vals[i]);
            let mut rhs = [0.0; 3];
            for pg in piece_grads.iter().take(i + 1) {
                rhs = geom::add(rhs, geom::scale(*pg, piece_vals[i]));
            }
            lower = lower.max(geom::norm(geom::sub(lhs, rhs)));
        }
        // (h): u grad u_i = sum_{j>=i} u_j grad u_i
        for i in 0..n_pieces {
            let lhs = geom::scale(piece_grads[i], uval);
            let mut rhs = [0.0; 3];
            for &pv in piece_vals.iter().skip(i) {
                rhs = geom::add(rhs, geom::scale(piece_grads[i], pv));
            }
            upper = upper.max(geom::norm(geom::sub(lhs, rhs)));
        }
    }

    // disjointness of the bands as intervals
    let mut overlap = 0.0f64;
    for i in 0..n_pieces {
        for j in (i + 1)..n_pieces {
            let o = band_overlap(&result.pieces[i], &result.pieces[j]);
            overlap = overlap.max(o);
        }
    }

    let eps_n = result.eps.powf(DIM_N);
    let mut budget_violation = 0.0f64;
    for i in 0..n_pieces.saturating_sub(1) {
        budget_violation = budget_violation.max((result.budget(i) - eps_n).abs() / eps_n);
    }
    if n_pieces >= 1 {
        let last = result.budget(n_pieces - 1);
        if last > eps_n * (1.0 + 1e-10) {
            budget_violation = budget_violation.max((last - eps_n) / eps_n);
        }
    }

    let mean_violation = result.thresholds.as_ref().map(|_| {
        let l1 = l1_norm(&result.u).max(1e-300);
        (0..n_pieces)
            .map(|i| result.piece_integral(i).abs() / l1)
            .fold(0.0f64, f64::max)
    });

    let count_bound_ok = (result.pieces.len() as f64) <= result.count_bound() + 1e-9;

    let grad_scale = (0..mesh.num_cells())
        .map(|c| geom::norm(result.u.gradient(c)))
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let worst = [
        support / grad_scale,
        grad_match / grad_scale,
        dominated / scale,
        sign / (scale * scale),
        sum_v / scale,
        lower / (scale * grad_scale),
        upper / (scale * grad_scale),
        overlap,
    ]
    .into_iter()
    .fold(0.0f64, f64::max);

    SplitPropertyReport {
        piece_count: n_pieces,
        support_violation: support,
        gradient_match_violation: grad_match,
        dominated_violation: dominated,
        sign_violation: sign,
        sum_violation: sum_v,
        lower_telescope_violation: lower,
        upper_telescope_violation: upper,
        disjointness_violation: overlap,
        budget_violation,
        mean_violation,
        count_bound_ok,
        worst,
    }
}

/// The value of a piece as a function of u: five intervals `(a, b]` with
/// an affine value `alpha + beta u` on each.
fn piece_branches(piece: &ClampPiece) -> [(f64, f64, f64, f64); 5] {
    match *piece {
        ClampPiece::Plain { lo, hi } => [
            (f64::NEG_INFINITY, -hi, lo - hi, 0.0),
            (-hi, -lo, lo, 1.0),
            (-lo, lo, 0.0, 0.0),
            (lo, hi, -lo, 1.0),
            (hi, f64::INFINITY, hi - lo, 0.0),
        ],
        ClampPiece::MeanZero { s, t, k_s, k_t } => [
            (f64::NEG_INFINITY, k_t, k_t - k_s, 0.0),
            (k_t, k_s, -k_s, 1.0),
            (k_s, s, 0.0, 0.0),
            (s, t, -s, 1.0),
            (t, f64::INFINITY, t - s, 0.0),
        ],
    }
}

fn band_overlap(a: &ClampPiece, b: &ClampPiece) -> f64 {
    let ivs = |p: &ClampPiece| -> Vec<(f64, f64)> {
        match *p {
            ClampPiece::Plain { lo, hi } => vec![(lo, hi)],
            ClampPiece::MeanZero { s, t, k_s, k_t } => vec![(s, t), (k_t, k_s)],
        }
    };
    let mut worst = 0.0f64;
    for (a0, a1) in ivs(a) {
        for &(b0, b1) in &ivs(b) {
            worst = worst.max((a1.min(b1) - a0.max(b0)).max(0.0));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::FeFunction;
    use crate::mesh::build_box_mesh;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn cube(res: usize) -> crate::mesh::MeshRef {
        Arc::new(build_box_mesh([0.0; 3], [1.0; 3], [res, res, res]).unwrap())
    }

    #[test]
    fn threshold_symmetry() {
        let m = cube(4);
        let u = FeFunction::interpolate(m, |x| x[0] - 0.5).unwrap();
        // l = 0 gives k = 0 by symmetry of the distribution
        let k0 = threshold_k(&u, 0.0).unwrap();
        assert!(k0.abs() < 1e-10, "k0 = {k0}");
        // l = 0.25 gives k = -0.25 by mirror symmetry
        let k = threshold_k(&u, 0.25).unwrap();
        assert!((k + 0.25).abs() < 1e-9, "k = {k}");
        // l -> max u gives k -> min u
        let km = threshold_k(&u, 0.5).unwrap();
        assert!((km + 0.5).abs() < 1e-12);
        let km2 = threshold_k(&u, 7.0).unwrap();
        assert!((km2 + 0.5).abs() < 1e-12);
    }

    #[test]
    fn threshold_asymmetric_cross_check() {
        let m = cube(4);
        let mut u = FeFunction::interpolate(m, |x| x[0] * x[0] - 0.2 * x[1]).unwrap();
        // enforce mean zero by shifting
        let mean = u.mean();
        for v in &mut u.values {
            *v -= mean;
        }
        let l = 0.1;
        let k = threshold_k(&u, l).unwrap();
        // independent residual check of the defining identity
        let lhs = rhs_of_l(&u, l);
        let rhs = g_of_k(&u, k);
        assert!(
            (lhs - rhs).abs() < 1e-10 * l1_norm(&u),
            "identity residual {}",
            (lhs - rhs).abs()
        );
    }

    #[test]
    fn threshold_rejects_nonzero_mean() {
        let m = cube(2);
        let u = FeFunction::interpolate(m, |x| x[0]).unwrap();
        assert!(matches!(
            threshold_k(&u, 0.1),
            Err(Error::NotMeanZero { .. })
        ));
    }

    #[test]
    fn zero_weight_single_piece() {
        let m = cube(3);
        let u = FeFunction::interpolate(m, |x| x[0] * x[1]).unwrap();
        let h = vec![0.0; u.mesh.num_cells()];
        let r = split_plain(&u, &h, 0.5).unwrap();
        assert_eq!(r.piece_count(), 1);
        // single piece equals u at sample points
        for &x in &[[0.3, 0.3, 0.3], [0.9, 0.1, 0.5]] {
            let uval = u.evaluate(x).unwrap();
            assert!((r.pieces[0].apply(uval) - uval).abs() < 1e-14);
        }
    }

    #[test]
    fn large_eps_single_piece() {
        let m = cube(3);
        let u = FeFunction::interpolate(m, |x| x[0]).unwrap();
        let h = vec![1.0; u.mesh.num_cells()];
        // |h|_{L^3} = 1 on the unit cube
        let r = split_plain(&u, &h, 1.0).unwrap();
        assert_eq!(r.piece_count(), 1);
    }

    #[test]
    fn half_budget_split_level() {
        let m = cube(4);
        let u = FeFunction::interpolate(m, |x| x[0]).unwrap();
        let h = vec![1.0; u.mesh.num_cells()];
        let eps = 0.5f64.powf(1.0 / 3.0);
        let r = split_plain(&u, &h, eps).unwrap();
        assert_eq!(r.piece_count(), 2);
        // the slab above s_1 has volume 1/2, so s_1 = 1/2
        assert!((r.levels[1] - 0.5).abs() < 1e-10, "s1 = {}", r.levels[1]);
        let mut rng = StdRng::seed_from_u64(3);
        let rep = verify_split(&r, 200, &mut rng);
        assert!(rep.worst < 1e-12, "{rep:?}");
        assert!(rep.budget_violation < 1e-10);
        assert!(rep.count_bound_ok);
    }

    #[test]
    fn mean_zero_split_two_pieces() {
        let m = cube(4);
        let u = FeFunction::interpolate(m, |x| x[0] - 0.5).unwrap();
        let h = vec![1.0; u.mesh.num_cells()];
        // total weight over the active set is 1; eps^3 = 1/2 gives N = 2
        let eps = 0.5f64.powf(1.0 / 3.0);
        let r = split_mean_zero(&u, &h, eps).unwrap();
        assert_eq!(r.piece_count(), 2);
        let mut rng = StdRng::seed_from_u64(4);
        let rep = verify_split(&r, 300, &mut rng);
        assert!(rep.worst < 1e-12, "{rep:?}");
        let mv = rep.mean_violation.unwrap();
        assert!(mv < 1e-10, "mean violation {mv}");
    }

    #[test]
    fn mean_zero_trivial_split() {
        let m = cube(3);
        let u = FeFunction::interpolate(m, |x| x[0] - 0.5).unwrap();
        let h = vec![0.0; u.mesh.num_cells()];
        let r = split_mean_zero(&u, &h, 0.3).unwrap();
        assert_eq!(r.piece_count(), 1);
        assert!(r.piece_integral(0).abs() < 1e-12);
        // the single piece reproduces u
        for &x in &[[0.2, 0.8, 0.4], [0.7, 0.3, 0.9]] {
            let uval = u.evaluate(x).unwrap();
            assert!((r.pieces[0].apply(uval) - uval).abs() < 1e-12);
        }
    }

    #[test]
    fn telescoping_on_random_points() {
        let m = cube(3);
        let mut u = FeFunction::interpolate(m, |x| {
            (3.1 * x[0]).sin() + x[1] * x[1] - 0.8 * x[2]
        })
        .unwrap();
        let mean = u.mean();
        for v in &mut u.values {
            *v -= mean;
        }
        let h: Vec<f64> = (0..u.mesh.num_cells())
            .map(|c| 0.5 + 0.1 * (c % 7) as f64)
            .collect();
        let eps = 0.35;
        let rp = split_plain(&u, &h, eps).unwrap();
        let rm = split_mean_zero(&u, &h, eps).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        for r in [&rp, &rm] {
            let rep = verify_split(r, 100, &mut rng);
            assert!(rep.worst < 1e-12, "{rep:?}");
            assert!(rep.count_bound_ok);
        }
        // sum of pieces telescopes back to u at 100 random points
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let uval = u.evaluate(x).unwrap();
            for r in [&rp, &rm] {
                let s: f64 = r.pieces.iter().map(|p| p.apply(uval)).sum();
                assert!((s - uval).abs() < 1e-12, "telescope {s} vs {uval}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = cube(2);
        let u = FeFunction::interpolate(m, |x| x[0]).unwrap();
        let h = vec![1.0; u.mesh.num_cells()];
        assert!(split_plain(&u, &h, 0.0).is_err());
        assert!(split_plain(&u, &h[1..], 0.5).is_err());
        assert!(split_mean_zero(&u, &h, 0.5).is_err()); // not mean zero
    }
}
