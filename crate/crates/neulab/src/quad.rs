//! Symmetric quadrature rules on reference simplices (triangles and
//! tetrahedra), built by the Grundmann-Moller construction for any odd
//! degree. Every rule verifies its own exactness on monomials when built.

use crate::error::{Error, Result};

/// Quadrature rule on the reference `dim`-simplex, stored in barycentric
/// coordinates (`dim + 1` entries per point). Weights sum to the reference
/// simplex volume `1/dim!`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub dim: usize,
    pub order: usize,
    /// Barycentric coordinates, `dim + 1` per point, flattened.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * (self.dim + 1)..(q + 1) * (self.dim + 1)]
    }

    /// Build a rule exact for polynomials of total degree `order`.
    pub fn simplex(dim: usize, order: usize) -> Result<Self> {
        let s = order.saturating_sub(1).div_ceil(2);
        let rule = grundmann_moller(dim, s);
        rule.verify_exactness(order)?;
        Ok(rule)
    }

    /// Checks the rule against the Dirichlet closed form
    /// `int_T prod x_i^{a_i} = prod a_i! / (dim + |a|)!` for every monomial
    /// of total degree at most `order`.
    pub fn verify_exactness(&self, order: usize) -> Result<()> {
        let m = self.dim;
        let mut expo = vec![0usize; m];
        let mut worst = 0.0f64;
        verify_rec(self, order, 0, &mut expo, &mut worst);
        if worst > 1e-12 {
            return Err(Error::QuadratureExactness { order, err: worst });
        }
        Ok(())
    }
}

fn verify_rec(rule: &QuadratureRule, budget: usize, i: usize, expo: &mut Vec<usize>, worst: &mut f64) {
    let m = rule.dim;
    if i == m {
        let total: usize = expo.iter().sum();
        let exact = expo.iter().map(|&a| factorial(a)).product::<f64>() / factorial(m + total);
        let mut approx = 0.0;
        for q in 0..rule.len() {
            let lam = rule.point(q);
            // cartesian coordinates of the reference simplex are lam[1..]
            let mut v = 1.0;
            for (k, &a) in expo.iter().enumerate() {
                v *= lam[k + 1].powi(a as i32);
            }
            approx += rule.weights[q] * v;
        }
        *worst = worst.max((approx - exact).abs() / exact.max(1e-300));
        return;
    }
    for a in 0..=budget {
        expo[i] = a;
        verify_rec(rule, budget - a, i + 1, expo, worst);
    }
    expo[i] = 0;
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Grundmann-Moller rule of degree `2s + 1` on the `dim`-simplex.
fn grundmann_moller(dim: usize, s: usize) -> QuadratureRule {
    let m = dim;
    let d = 2 * s + 1;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in 0..=s {
        let denom = (d + m - 2 * i) as f64;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let w = sign * 0.25f64.powi(s as i32) * denom.powi(d as i32)
            / (factorial(i) * factorial(d + m - i));
        for beta in compositions(s - i, m + 1) {
            for &b in &beta {
                points.push((2 * b + 1) as f64 / denom);
            }
            weights.push(w);
        }
    }
    QuadratureRule {
        dim,
        order: d,
        points,
        weights,
    }
}

/// All vectors in N_0^parts with entries summing to `total`.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; parts];
    fn rec(total: usize, i: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i + 1 == cur.len() {
            cur[i] = total;
            out.push(cur.clone());
            return;
        }
        for a in 0..=total {
            cur[i] = a;
            rec(total - a, i + 1, cur, out);
        }
    }
    rec(total, 0, &mut cur, &mut out);
    out
}

/// Positive 4-point degree-2 rule on the tetrahedron, used where indicator
/// functions make negative weights unacceptable.
pub fn tet_rule_positive_deg2() -> QuadratureRule {
    let a = (5.0 - 5.0f64.sqrt()) / 20.0;
    let b = (5.0 + 3.0 * 5.0f64.sqrt()) / 20.0;
    let mut points = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            points.push(if i == j { b } else { a });
        }
    }
    QuadratureRule {
        dim: 3,
        order: 2,
        points,
        weights: vec![1.0 / 24.0; 4],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_reference_volume() {
        for (dim, refvol) in [(2usize, 0.5), (3usize, 1.0 / 6.0)] {
            for order in [1usize, 2, 3, 4, 5, 6, 7] {
                let r = QuadratureRule::simplex(dim, order).unwrap();
                let sum: f64 = r.weights.iter().sum();
                assert!(
                    (sum - refvol).abs() < 1e-13,
                    "dim {dim} order {order}: sum {sum}"
                );
            }
        }
    }

    #[test]
    fn exactness_is_checked_at_build() {
        // orders up to 7 on both triangles and tetrahedra
        for dim in [2usize, 3] {
            for order in 1..=7usize {
                QuadratureRule::simplex(dim, order).unwrap();
            }
        }
    }

    #[test]
    fn positive_rule_integrates_quadratics() {
        let r = tet_rule_positive_deg2();
        r.verify_exactness(2).unwrap();
        assert!(r.weights.iter().all(|&w| w > 0.0));
    }
}
