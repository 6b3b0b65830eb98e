//! JSON configuration: mesh builders, coefficient fields with the small
//! expression grammar, problem specs and run configs for the CLI.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr;
use crate::fe::{CoefficientField, FieldValue};
use crate::mesh::{
    build_box_mesh, build_graph_domain_mesh, mesh_from_json, GraphBase, GraphDomainSpec, MeshRef,
    SimplicialMesh,
};
use crate::operator::{ProblemSpec, Variant};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshBuilderConfig {
    Box {
        lo: [f64; 3],
        hi: [f64; 3],
        subdivisions: [usize; 3],
    },
    GraphSquare {
        radius: f64,
        lipschitz_m: f64,
        /// Expression in x1, x2 for the graph function; empty means flat.
        #[serde(default)]
        psi: Option<String>,
        resolution: usize,
    },
    GraphDisk {
        radius: f64,
        segments: usize,
        resolution: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default)]
    pub builder: Option<MeshBuilderConfig>,
    #[serde(default)]
    pub path: Option<String>,
}

pub fn build_mesh(cfg: &MeshConfig) -> Result<SimplicialMesh> {
    match (&cfg.builder, &cfg.path) {
        (Some(builder), None) => build_mesh_from_builder(builder),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            mesh_from_json(&text)
        }
        _ => Err(Error::Config(
            "mesh config needs exactly one of `builder` or `path`".into(),
        )),
    }
}

pub fn build_mesh_from_builder(builder: &MeshBuilderConfig) -> Result<SimplicialMesh> {
    match builder {
        MeshBuilderConfig::Box {
            lo,
            hi,
            subdivisions,
        } => build_box_mesh(*lo, *hi, *subdivisions),
        MeshBuilderConfig::GraphSquare {
            radius,
            lipschitz_m,
            psi,
            resolution,
        } => {
            let spec = match psi {
                None => GraphDomainSpec::flat(GraphBase::Square, *radius),
                Some(text) => {
                    let e = expr::parse(text)?;
                    GraphDomainSpec::with_psi(
                        GraphBase::Square,
                        *radius,
                        *lipschitz_m,
                        move |p| e.eval([p[0], p[1], 0.0]),
                    )
                }
            };
            build_graph_domain_mesh(&spec, *resolution)
        }
        MeshBuilderConfig::GraphDisk {
            radius,
            segments,
            resolution,
        } => {
            let spec = GraphDomainSpec::flat(
                GraphBase::Disk {
                    segments: *segments,
                },
                *radius,
            );
            build_graph_domain_mesh(&spec, *resolution)
        }
    }
}

/// A coefficient definition: a constant (scalar, vector or matrix by
/// shape), per-cell values, or expressions in x1..x3.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Constant {
        #[serde(default)]
        value: Option<f64>,
        #[serde(default)]
        vector: Option<[f64; 3]>,
        #[serde(default)]
        matrix: Option<[[f64; 3]; 3]>,
    },
    PerCell { values: Vec<f64> },
    Expr {
        #[serde(default)]
        value: Option<String>,
        #[serde(default)]
        components: Option<[String; 3]>,
    },
}

pub fn build_field(cfg: &FieldConfig) -> Result<CoefficientField> {
    match cfg {
        FieldConfig::Constant {
            value,
            vector,
            matrix,
        } => match (value, vector, matrix) {
            (Some(v), None, None) => Ok(CoefficientField::scalar(*v)),
            (None, Some(v), None) => Ok(CoefficientField::vector(*v)),
            (None, None, Some(m)) => Ok(CoefficientField::matrix(*m)),
            _ => Err(Error::Config(
                "constant field needs exactly one of value, vector, matrix".into(),
            )),
        },
        FieldConfig::PerCell { values } => Ok(CoefficientField::PerCell(
            values.iter().map(|&v| FieldValue::Scalar(v)).collect(),
        )),
        FieldConfig::Expr { value, components } => match (value, components) {
            (Some(text), None) => {
                let e = expr::parse(text)?;
                Ok(CoefficientField::analytic_scalar(move |x| e.eval(x)))
            }
            (None, Some(texts)) => {
                let es: Vec<expr::Expr> =
                    texts.iter().map(|t| expr::parse(t)).collect::<Result<_>>()?;
                let es: Arc<[expr::Expr; 3]> =
                    Arc::new([es[0].clone(), es[1].clone(), es[2].clone()]);
                Ok(CoefficientField::analytic_vector(move |x| {
                    [es[0].eval(x), es[1].eval(x), es[2].eval(x)]
                }))
            }
            _ => Err(Error::Config(
                "expr field needs exactly one of value (scalar) or components (vector)".into(),
            )),
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub mesh: MeshConfig,
    #[serde(default, rename = "A")]
    pub a: Option<FieldConfig>,
    #[serde(default)]
    pub b: Option<FieldConfig>,
    #[serde(default)]
    pub c: Option<FieldConfig>,
    #[serde(default)]
    pub d: Option<FieldConfig>,
    #[serde(default)]
    pub f: Option<FieldConfig>,
    #[serde(default, rename = "F")]
    pub big_f: Option<FieldConfig>,
    #[serde(default)]
    pub g: Option<FieldConfig>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub big_lambda: Option<f64>,
    /// `direct`, `adjoint` or `reduced_drift`.
    #[serde(default)]
    pub variant: Option<String>,
}

pub fn build_problem(cfg: &ProblemConfig) -> Result<ProblemSpec> {
    let mesh: MeshRef = Arc::new(build_mesh(&cfg.mesh)?);
    let mut spec = ProblemSpec::laplace(mesh);
    if let Some(a) = &cfg.a {
        spec.a = build_field(a)?;
    }
    if let Some(b) = &cfg.b {
        spec.b = build_field(b)?;
    }
    if let Some(c) = &cfg.c {
        spec.c = build_field(c)?;
    }
    if let Some(d) = &cfg.d {
        spec.d = build_field(d)?;
    }
    if let Some(f) = &cfg.f {
        spec.f = build_field(f)?;
    }
    if let Some(big_f) = &cfg.big_f {
        spec.big_f = build_field(big_f)?;
    }
    if let Some(g) = &cfg.g {
        spec.g = build_field(g)?;
    }
    if let Some(l) = cfg.lambda {
        spec.lambda = l;
    }
    if let Some(l) = cfg.big_lambda {
        spec.big_lambda = l;
    }
    spec.variant = match cfg.variant.as_deref() {
        None | Some("direct") => Variant::Direct,
        Some("adjoint") => Variant::Adjoint,
        Some("reduced_drift") => Variant::ReducedDrift,
        Some(other) => {
            return Err(Error::Config(format!("unknown variant '{other}'")));
        }
    };
    Ok(spec)
}

/// Top-level CLI run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Experiment names, or the single entry "all".
    pub experiments: Vec<String>,
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default)]
    pub refinement_levels: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Optional standalone problem solved and reported alongside the
    /// named experiments.
    #[serde(default)]
    pub problem: Option<ProblemConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        Ok(cfg)
    }

    pub fn canonical_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }

    /// Resolves "all" and validates every name against the registry.
    pub fn experiment_names(&self) -> Result<Vec<String>> {
        if self.experiments.len() == 1 && self.experiments[0] == "all" {
            return Ok(crate::experiments::registry()
                .iter()
                .map(|e| e.name.to_string())
                .collect());
        }
        for name in &self.experiments {
            crate::experiments::find(name)?;
        }
        Ok(self.experiments.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_builder_round_trip() {
        let text = r#"{
            "builder": {"kind": "box", "lo": [0,0,0], "hi": [1,1,1], "subdivisions": [2,2,2]}
        }"#;
        let cfg: MeshConfig = serde_json::from_str(text).unwrap();
        let mesh = build_mesh(&cfg).unwrap();
        assert_eq!(mesh.num_cells(), 48);
    }

    #[test]
    fn graph_builder_with_expression() {
        let text = r#"{
            "builder": {"kind": "graph_square", "radius": 1.0, "lipschitz_m": 0.5,
                        "psi": "0.5 * x1", "resolution": 2}
        }"#;
        let cfg: MeshConfig = serde_json::from_str(text).unwrap();
        let mesh = build_mesh(&cfg).unwrap();
        assert!((mesh.character.unwrap().m - 0.5).abs() < 1e-12);
    }

    #[test]
    fn expression_field_evaluates() {
        let cfg = FieldConfig::Expr {
            value: Some("cos(pi * x1) + x2".into()),
            components: None,
        };
        let field = build_field(&cfg).unwrap();
        let v = field.scalar_at([1.0, 0.25, 0.0], 0, false).unwrap();
        assert!((v - (-0.75)).abs() < 1e-15);
    }

    #[test]
    fn problem_config_solves() {
        let text = r#"{
            "mesh": {"builder": {"kind": "box", "lo": [0,0,0], "hi": [1,1,1], "subdivisions": [3,3,3]}},
            "d": {"kind": "constant", "value": 1.0},
            "f": {"kind": "expr", "value": "1 + x1"}
        }"#;
        let cfg: ProblemConfig = serde_json::from_str(text).unwrap();
        let spec = build_problem(&cfg).unwrap();
        let sol = crate::operator::solve_neumann(&spec).unwrap();
        assert!(sol.relative_residual < 1e-10);
        assert!(sol.u.max_abs() > 0.1);
    }

    #[test]
    fn run_config_validates_names() {
        let cfg = RunConfig::from_json(
            r#"{"experiments": ["kernel-dim-cube", "green-scaling"], "seed": 7}"#,
        )
        .unwrap();
        assert_eq!(cfg.experiment_names().unwrap().len(), 2);
        let bad = RunConfig::from_json(r#"{"experiments": ["no-such"]}"#).unwrap();
        assert!(bad.experiment_names().is_err());
        let all = RunConfig::from_json(r#"{"experiments": ["all"]}"#).unwrap();
        assert!(all.experiment_names().unwrap().len() >= 15);
    }

    #[test]
    fn config_round_trip_lossless() {
        let text = r#"{"experiments":["poincare"],"resolution":4,"seed":11}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let back = serde_json::to_value(&cfg).unwrap();
        let again: RunConfig = serde_json::from_value(back.clone()).unwrap();
        assert_eq!(serde_json::to_value(&again).unwrap(), back);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"experiments": [], "bogus": 1}"#).is_err());
    }
}
