//! Acceptance suite: every release criterion runs at its pinned tolerance
//! and prints one pass/fail line. Criteria map one-to-one onto registry
//! experiments whose internal checks carry the thresholds.

use neulab::experiments::{find, RunParams};
use neulab::report::EstimateReport;

struct Criterion {
    id: usize,
    title: &'static str,
    experiment: &'static str,
    /// Checks that must be present and passing, beyond `report.passed`.
    required_checks: &'static [&'static str],
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        title: "kernel dichotomy on the unit cube (dimension 1 for d=0 with the normalized constant, 0 for d=1, gap >= 10)",
        experiment: "kernel-dim-cube",
        required_checks: &[
            "d0_dimension_is_1",
            "d0_spectral_gap",
            "d0_uhat_constant_residual",
            "d1_dimension_is_0",
        ],
    },
    Criterion {
        id: 2,
        title: "eigen-cube: >= 3 near-zero singular values shrinking >= 3x per refinement",
        experiment: "eigen-cube",
        required_checks: &["sigma_0_shrink", "sigma_1_shrink", "sigma_2_shrink"],
    },
    Criterion {
        id: 3,
        title: "1-D drift profile: |f(delta*) - 1| < 1e-12, derivative residual < 1e-10, sign checks",
        experiment: "appendix-1d",
        required_checks: &[
            "f_delta_residual",
            "u_prime_right",
            "f_at_2_exact_zero",
            "f_at_0_above_1",
        ],
    },
    Criterion {
        id: 4,
        title: "tensor kernel on (-1,1)^3: dimension >= 2, kernel captures >= 99% of both tensor fields",
        experiment: "appendix-tensor-kernel",
        required_checks: &[
            "dimension_ge_2",
            "spectral_gap",
            "projection_energy_ux",
            "projection_energy_uy",
        ],
    },
    Criterion {
        id: 5,
        title: "Green symmetry: exact transpose pairing <= 1e-9, nodal deviation decreases under refinement",
        experiment: "green-symmetry",
        required_checks: &[
            "symmetric_paired_deviation",
            "nonsym_nodal_deviation_decreases",
        ],
    },
    Criterion {
        id: 6,
        title: "Green scaling covariance for r in {1/2, 2} within 1e-9",
        experiment: "green-scaling",
        required_checks: &["scaling_deviation_r_0.5", "scaling_deviation_r_2"],
    },
    Criterion {
        id: 7,
        title: "Green pointwise constant stable (< 1.5x) and the three weak norms finite and stable",
        experiment: "green-pointwise",
        required_checks: &[
            "pointwise_constant_stability",
            "interior_weak_stability",
            "gradient_weak_stability",
            "boundary_weak_stability",
        ],
    },
    Criterion {
        id: 8,
        title: "representation formula < 5% at the fine level, halving >= 2x, duality pairing < 1e-9",
        experiment: "green-representation",
        required_checks: &["f_error_at_fine", "f_error_halving", "duality_pairing"],
    },
    Criterion {
        id: 9,
        title: "Lorentz engine: indicator closed forms to 1e-12, equimeasurability to 1e-8",
        experiment: "lorentz-closed-forms",
        required_checks: &[
            "indicator_weak_norms",
            "indicator_strong_norms",
            "equimeasurability",
        ],
    },
    Criterion {
        id: 10,
        title: "splitting on 50 random P1 functions: pointwise < 1e-12, budgets < 1e-10, means < 1e-10, count bound",
        experiment: "splitting-properties",
        required_checks: &[
            "worst_pointwise_violation",
            "worst_budget_violation",
            "worst_mean_violation",
            "count_bound_always",
        ],
    },
    Criterion {
        id: 11,
        title: "solution-to-data ratio invariant under dilations r in {1/2,1,2,4} to 1e-9",
        experiment: "scale-invariance",
        required_checks: &[
            "ratio_invariance_r_0.5",
            "ratio_invariance_r_2",
            "ratio_invariance_r_4",
        ],
    },
    Criterion {
        id: 12,
        title: "subsolution rigidity: residual sum identity exact, solution residuals <= 1e-10",
        experiment: "subsolution-rigidity",
        required_checks: &["sum_identity", "solution_residual", "solution_class"],
    },
    Criterion {
        id: 13,
        title: "d_s blow-up family: gradient-energy slope -(n-2) and mass slope (n-2) within 10%",
        experiment: "appendix-ds-family",
        required_checks: &["energy_slope", "mass_slope"],
    },
    Criterion {
        id: 14,
        title: "condition checker: half-space drift fails via bottom hats, d >= 0 passes, cone exactness",
        experiment: "condition-checker",
        required_checks: &[
            "half_space_fails",
            "negative_hats_are_bottom",
            "zero_drift_passes",
            "random_cone_combinations",
            "cone_linearity",
        ],
    },
];

fn run_criterion(c: &Criterion, params: &RunParams) -> (bool, EstimateReport) {
    let exp = find(c.experiment).expect("registered experiment");
    match (exp.run)(params) {
        Ok(report) => {
            let mut ok = report.passed;
            for name in c.required_checks {
                let found = report
                    .checks
                    .iter()
                    .find(|chk| chk.name == *name)
                    .map(|chk| chk.passed);
                match found {
                    Some(true) => {}
                    Some(false) => ok = false,
                    None => {
                        eprintln!(
                            "criterion {:02}: required check '{}' missing from report",
                            c.id, name
                        );
                        ok = false;
                    }
                }
            }
            (ok, report)
        }
        Err(err) => {
            let mut failed = EstimateReport::new(c.experiment, params.seed);
            failed.check_true(&format!("runner error: {err}"), false);
            (false, failed)
        }
    }
}

#[test]
fn acceptance_criteria() {
    let params = RunParams::default();
    let mut failures = Vec::new();
    for c in CRITERIA {
        let (ok, report) = run_criterion(c, &params);
        let status = if ok { "PASS" } else { "FAIL" };
        println!("criterion {:02} [{status}] {}", c.id, c.title);
        if !ok {
            for chk in report.checks.iter().filter(|chk| !chk.passed) {
                println!(
                    "    failed: {} (measured {:e}, {} {:e})",
                    chk.name, chk.measured, chk.direction, chk.threshold
                );
            }
            failures.push(c.id);
        }
    }
    assert!(
        failures.is_empty(),
        "acceptance criteria failed: {failures:?}"
    );
}
