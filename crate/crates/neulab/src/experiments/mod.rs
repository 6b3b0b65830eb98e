//! Named, reproducible verification experiments with machine-readable
//! reports. The registry drives both the CLI and the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::EstimateReport;

pub mod appendix;
pub mod estimates;
pub mod green_checks;
pub mod kernels;
pub mod lorentz_checks;
pub mod splitting_checks;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunParams {
    /// Base resolution for meshes (cells per axis).
    pub resolution: usize,
    /// Extra uniform refinement levels for convergence sweeps.
    pub refinement_levels: usize,
    pub seed: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            resolution: 8,
            refinement_levels: 1,
            seed: 0x00c0ffee,
        }
    }
}

pub struct Experiment {
    pub name: &'static str,
    pub description: &'static str,
    /// Which statement of the underlying theory the experiment exercises.
    pub anchor: &'static str,
    pub run: fn(&RunParams) -> Result<EstimateReport>,
}

/// The experiment registry, in stable order.
pub fn registry() -> Vec<Experiment> {
    vec![
        Experiment {
            name: "kernel-dim-cube",
            description: "kernel dimension dichotomy on the unit cube: 1 for d = 0, 0 for d = 1",
            anchor: "kernel dimension is 1 iff the reaction integrates to zero",
            run: kernels::kernel_dim_cube,
        },
        Experiment {
            name: "eigen-cube",
            description: "three near-zero singular values for -Laplace - 1 on the pi cube",
            anchor: "negative reaction admits a kernel of dimension at least three",
            run: kernels::eigen_cube,
        },
        Experiment {
            name: "appendix-1d",
            description: "one-dimensional drift profile: bisection of f(delta) = 1 and the Neumann derivative residuals",
            anchor: "one-dimensional building block of the tensor kernel counterexample",
            run: appendix::one_dimensional_delta,
        },
        Experiment {
            name: "appendix-tensor-kernel",
            description: "kernel dimension >= 2 for the tensor drift on (-1,1)^3 with d = -2 = div b",
            anchor: "interior sign condition alone does not bound the kernel dimension",
            run: appendix::tensor_kernel,
        },
        Experiment {
            name: "appendix-log-singular",
            description: "unbounded solutions with admissible drift: log singularities on half-ball and cone",
            anchor: "boundary flux sign is necessary for boundedness",
            run: appendix::log_singular,
        },
        Experiment {
            name: "appendix-ds-family",
            description: "reaction family d_s with vanishing integral but exploding gradient energy",
            anchor: "estimate constants genuinely depend on delta_0",
            run: appendix::ds_family,
        },
        Experiment {
            name: "green-symmetry",
            description: "G(x,y) = G*(y,x) between direct and adjoint Green tables",
            anchor: "Green function symmetry under simultaneous sign conditions",
            run: green_checks::symmetry,
        },
        Experiment {
            name: "green-scaling",
            description: "G_Omega(x,y) = r^{2-n} G_{Omega_r}(x/r, y/r) under exact problem rescaling",
            anchor: "Green function dilation covariance",
            run: green_checks::scaling,
        },
        Experiment {
            name: "green-pointwise",
            description: "sup |x-y|^{n-2} |G| stability and the three weak norms under refinement",
            anchor: "pointwise bound |G(x,y)| <= C |x-y|^{2-n}",
            run: green_checks::pointwise,
        },
        Experiment {
            name: "green-representation",
            description: "representation formula against direct adjoint solves; duality pairing",
            anchor: "v(y) = int G f + int grad G . F + int_bdy G g",
            run: green_checks::representation,
        },
        Experiment {
            name: "lorentz-closed-forms",
            description: "Lorentz norms of indicators against closed forms; equimeasurability",
            anchor: "decreasing rearrangement and L^{p,q} definitions",
            run: lorentz_checks::closed_forms,
        },
        Experiment {
            name: "splitting-properties",
            description: "clamp algebra, budgets and piece counts on random P1 functions",
            anchor: "constructive splitting with prescribed L^n weight budgets",
            run: splitting_checks::properties,
        },
        Experiment {
            name: "scale-invariance",
            description: "solution-to-data norm ratio invariant under problem dilations",
            anchor: "scale invariant a priori estimates",
            run: estimates::scale_invariance,
        },
        Experiment {
            name: "subsolution-rigidity",
            description: "discrete subsolutions with compatible data are solutions (zero reaction)",
            anchor: "subsolutions are solutions under the compatibility condition",
            run: estimates::subsolution_rigidity,
        },
        Experiment {
            name: "condition-checker",
            description: "hat-cone exactness of the sign condition; the half-space drift fails it",
            anchor: "b . nu >= 0 on the boundary is part of the sign condition",
            run: estimates::condition_checker,
        },
        Experiment {
            name: "poincare",
            description: "Sobolev-Poincare ratios: plain, vanishing-set and drift-modified variants",
            anchor: "Poincare constants depend only on n, delta and the Lipschitz character",
            run: estimates::poincare,
        },
        Experiment {
            name: "trace-inequality",
            description: "boundary trace norms against Sobolev norms, strong and weak",
            anchor: "trace embedding into L^{p(n-1)/(n-p)} of the boundary",
            run: estimates::trace_inequality,
        },
        Experiment {
            name: "main-estimate",
            description: "gradient energy of solutions against the split-piece data bound",
            anchor: "main splitting estimate for subsolutions and solutions",
            run: estimates::main_estimate,
        },
        Experiment {
            name: "avg-inequality",
            description: "drift average bound int(c . grad u+ + d u+) <= int f+ + int g+",
            anchor: "choice of the averaging constants a_i",
            run: estimates::avg_inequality,
        },
        Experiment {
            name: "caccioppoli",
            description: "interior energy bounded by scaled L2 mass on doubled balls",
            anchor: "Caccioppoli estimate on balls",
            run: estimates::caccioppoli,
        },
        Experiment {
            name: "pointwise-suite",
            description: "sup bounds of subsolutions by averages and Lorentz data norms",
            anchor: "scale invariant pointwise estimates",
            run: estimates::pointwise_suite,
        },
        Experiment {
            name: "reflection-extension",
            description: "reflected coefficients and functions keep norms up to (n, M) factors",
            anchor: "extension by reflection across the graph boundary",
            run: estimates::reflection_extension,
        },
        Experiment {
            name: "mms-convergence",
            description: "manufactured-solution convergence of the Neumann solvers",
            anchor: "Galerkin consistency of the discrete weak form",
            run: estimates::mms_convergence,
        },
    ]
}

pub fn find(name: &str) -> Result<Experiment> {
    registry()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownExperiment(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_populated() {
        let reg = registry();
        assert!(reg.len() >= 15, "only {} experiments", reg.len());
        for e in &reg {
            assert!(!e.anchor.is_empty());
            assert!(!e.description.is_empty());
        }
        let names: Vec<_> = reg.iter().map(|e| e.name).collect();
        for required in [
            "green-symmetry",
            "green-scaling",
            "main-estimate",
            "appendix-tensor-kernel",
        ] {
            assert!(names.contains(&required), "{required} missing");
        }
    }

    #[test]
    fn unknown_name_rejected() {
        assert!(matches!(
            find("no-such-experiment"),
            Err(Error::UnknownExperiment(_))
        ));
    }
}
