//! The model-file format: a single TOML document with expression strings
//! in the standard text grammar. Unknown keys are rejected.

use crate::abstraction::{FacetDecl, Region};
use crate::cegis::BarrierSpec;
use crate::model::{
    InitialSet, Mode, ModelError, RwsSpec, SemialgebraicSet, SetKind, SwitchedSystem,
    SynthesisParams, Template,
};
use crate::runtime::SimOptions;
use crate::symexpr::{parse_expr, Expr, Interval, IntervalBox, ParseError, VarContext};
use serde::Deserialize;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{context}: {err}")]
    Expr { context: String, err: ParseError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ModelFileError {
    ModelFileError::Invalid(msg.into())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    name: String,
    variables: Vec<String>,
    #[serde(rename = "mode")]
    modes: Vec<ModeDoc>,
    sets: SetsDoc,
    template: Option<TemplateDoc>,
    params: ParamsDoc,
    simulation: Option<SimDoc>,
    #[serde(rename = "barrier", default)]
    barriers: Vec<BarrierDoc>,
    abstraction: Option<AbstractionDoc>,
    #[serde(rename = "region", default)]
    regions: Vec<RegionDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeDoc {
    id: String,
    field: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetsDoc {
    enclosure: Vec<[f64; 2]>,
    safe: Vec<String>,
    goal: Vec<String>,
    init: Option<Vec<String>>,
}

#[derive(Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateDoc {
    basis: Vec<String>,
    coeff_min: Option<f64>,
    coeff_max: Option<f64>,
    coeff_bounds: Option<Vec<[f64; 2]>>,
    /// Fixed additive part, entered as a pinned unit coefficient.
    offset: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    epsilon: f64,
    epsilon_s: Option<f64>,
    lambda: f64,
    barrier_lambda: Option<f64>,
    delta: Option<f64>,
    max_iterations: Option<usize>,
}

#[derive(Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimDoc {
    step: Option<f64>,
    t_max: Option<f64>,
    tol_goal: Option<f64>,
    tol_safe: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BarrierDoc {
    alias_v: Option<bool>,
    fixed: Option<String>,
    template: Option<TemplateDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AbstractionDoc {
    goal_regions: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionDoc {
    id: String,
    safe: Vec<String>,
    enclosure: Vec<[f64; 2]>,
    template: Option<TemplateDoc>,
    #[serde(rename = "facet", default)]
    facets: Vec<FacetDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FacetDoc {
    label: String,
    predicates: Vec<usize>,
    neighbors: Vec<String>,
    fat_goal: Option<Vec<String>>,
    template: Option<TemplateDoc>,
}

/// A fully lowered model: system, specification, templates, and optional
/// decomposition.
#[derive(Debug)]
pub struct LoadedModel {
    pub name: String,
    pub sys: SwitchedSystem,
    pub spec: RwsSpec,
    pub template: Option<Template>,
    pub barriers: Vec<BarrierSpec>,
    pub params: SynthesisParams,
    pub sim: SimOptions,
    pub regions: Vec<Region>,
}

fn parse_in(s: &str, ctx: &VarContext, context: &str) -> Result<Arc<Expr>, ModelFileError> {
    parse_expr(s, ctx).map_err(|err| ModelFileError::Expr {
        context: format!("{context}: '{s}'"),
        err,
    })
}

fn parse_set(
    preds: &[String],
    ctx: &VarContext,
    kind: SetKind,
    context: &str,
) -> Result<SemialgebraicSet, ModelFileError> {
    let exprs = preds
        .iter()
        .map(|s| parse_in(s, ctx, context))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SemialgebraicSet::new(exprs, kind))
}

fn parse_box(bounds: &[[f64; 2]], dim: usize, context: &str) -> Result<IntervalBox, ModelFileError> {
    if bounds.len() != dim {
        return Err(invalid(format!(
            "{context}: expected {dim} interval(s), got {}",
            bounds.len()
        )));
    }
    for b in bounds {
        if !(b[0] <= b[1]) {
            return Err(invalid(format!("{context}: empty interval [{}, {}]", b[0], b[1])));
        }
    }
    Ok(IntervalBox::new(
        bounds.iter().map(|b| Interval::new(b[0], b[1])).collect(),
    ))
}

fn lower_template(
    doc: &TemplateDoc,
    ctx: &VarContext,
    context: &str,
) -> Result<Template, ModelFileError> {
    if doc.basis.is_empty() {
        return Err(invalid(format!("{context}: template basis is empty")));
    }
    let mut basis = doc
        .basis
        .iter()
        .map(|s| parse_in(s, ctx, context))
        .collect::<Result<Vec<_>, _>>()?;
    let mut dims: Vec<Interval> = match (&doc.coeff_bounds, doc.coeff_min, doc.coeff_max) {
        (Some(bounds), None, None) => {
            if bounds.len() != basis.len() {
                return Err(invalid(format!(
                    "{context}: coeff_bounds length {} does not match basis length {}",
                    bounds.len(),
                    basis.len()
                )));
            }
            bounds.iter().map(|b| Interval::new(b[0], b[1])).collect()
        }
        (None, Some(lo), Some(hi)) => vec![Interval::new(lo, hi); basis.len()],
        _ => {
            return Err(invalid(format!(
                "{context}: provide either coeff_min/coeff_max or coeff_bounds"
            )))
        }
    };
    if let Some(off) = &doc.offset {
        basis.push(parse_in(off, ctx, context)?);
        dims.push(Interval::new(1.0, 1.0));
    }
    Ok(Template::new(basis, IntervalBox::new(dims)))
}

/// Parse and lower a model document.
pub fn load_model(text: &str) -> Result<LoadedModel, ModelFileError> {
    let doc: ModelDoc = toml::from_str(text)?;
    let ctx = VarContext::new(doc.variables.clone());
    let n = ctx.len();

    let modes = doc
        .modes
        .iter()
        .map(|m| {
            let field = m
                .field
                .iter()
                .map(|s| parse_in(s, &ctx, &format!("mode '{}'", m.id)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Mode { id: m.id.clone(), field })
        })
        .collect::<Result<Vec<_>, ModelFileError>>()?;
    let sys = SwitchedSystem::new(ctx.clone(), modes)?;

    let enclosure = parse_box(&doc.sets.enclosure, n, "sets.enclosure")?;
    let safe = parse_set(&doc.sets.safe, &ctx, SetKind::BasicNondegenerate, "sets.safe")?;
    if safe.predicates.is_empty() {
        return Err(invalid("sets.safe must have at least one predicate"));
    }
    if doc.sets.goal.is_empty() {
        return Err(invalid("sets.goal must have at least one predicate"));
    }
    let goal = parse_set(&doc.sets.goal, &ctx, SetKind::General, "sets.goal")?;
    let init = match &doc.sets.init {
        None => InitialSet::Uninitialized,
        Some(preds) => {
            InitialSet::Set(parse_set(preds, &ctx, SetKind::General, "sets.init")?)
        }
    };
    let spec = RwsSpec { safe, goal, init, enclosure };

    let template = doc
        .template
        .as_ref()
        .map(|t| lower_template(t, &ctx, "template"))
        .transpose()?;

    let barriers = doc
        .barriers
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let context = format!("barrier[{i}]");
            match (b.alias_v.unwrap_or(false), &b.fixed, &b.template) {
                (true, None, None) => Ok(BarrierSpec::AliasV),
                (false, Some(e), None) => Ok(BarrierSpec::Fixed(parse_in(e, &ctx, &context)?)),
                (false, None, Some(t)) => {
                    Ok(BarrierSpec::Templated(lower_template(t, &ctx, &context)?))
                }
                _ => Err(invalid(format!(
                    "{context}: exactly one of alias_v, fixed, template required"
                ))),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let epsilon = doc.params.epsilon;
    let params = SynthesisParams {
        epsilon,
        epsilon_s: doc.params.epsilon_s.unwrap_or(epsilon / 2.0),
        lambda: doc.params.lambda,
        barrier_lambda: doc.params.barrier_lambda.unwrap_or(doc.params.lambda),
        delta_sat_precision: doc.params.delta.unwrap_or(1e-4),
        max_iterations: doc.params.max_iterations.unwrap_or(100),
    };
    params.validate().map_err(invalid)?;

    let defaults = SimOptions::default();
    let sim = match doc.simulation {
        None => defaults,
        Some(s) => SimOptions {
            step: s.step.unwrap_or(defaults.step),
            t_max: s.t_max.unwrap_or(defaults.t_max),
            tol_goal: s.tol_goal.unwrap_or(defaults.tol_goal),
            tol_safe: s.tol_safe.unwrap_or(defaults.tol_safe),
        },
    };

    let goal_region_ids: Vec<String> = doc
        .abstraction
        .as_ref()
        .map(|a| a.goal_regions.clone())
        .unwrap_or_default();
    if !doc.regions.is_empty() && goal_region_ids.is_empty() {
        return Err(invalid(
            "regions are declared but abstraction.goal_regions is missing",
        ));
    }
    let mut regions = Vec::with_capacity(doc.regions.len());
    for r in &doc.regions {
        let context = format!("region '{}'", r.id);
        let set = parse_set(&r.safe, &ctx, SetKind::BasicNondegenerate, &context)?;
        let region_enclosure = parse_box(&r.enclosure, n, &format!("{context}.enclosure"))?;
        let template = r
            .template
            .as_ref()
            .map(|t| lower_template(t, &ctx, &context))
            .transpose()?;
        let mut facets = Vec::with_capacity(r.facets.len());
        for f in &r.facets {
            for &j in &f.predicates {
                if j >= set.predicates.len() {
                    return Err(invalid(format!(
                        "{context}: facet '{}' references predicate {j} (region has {})",
                        f.label,
                        set.predicates.len()
                    )));
                }
            }
            facets.push(FacetDecl {
                label: f.label.clone(),
                predicate_indices: f.predicates.clone(),
                neighbors: f.neighbors.clone(),
                fat_goal: f
                    .fat_goal
                    .as_ref()
                    .map(|g| parse_set(g, &ctx, SetKind::General, &format!("{context}.fat_goal")))
                    .transpose()?,
                template: f
                    .template
                    .as_ref()
                    .map(|t| lower_template(t, &ctx, &format!("{context}.facet template")))
                    .transpose()?,
            });
        }
        regions.push(Region {
            id: r.id.clone(),
            set,
            enclosure: region_enclosure,
            facets,
            template,
            is_goal: goal_region_ids.contains(&r.id),
        });
    }
    for g in &goal_region_ids {
        if !regions.iter().any(|r| &r.id == g) {
            return Err(invalid(format!("goal region '{g}' is not declared")));
        }
    }

    Ok(LoadedModel {
        name: doc.name,
        sys,
        spec,
        template,
        barriers,
        params,
        sim,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "mini"
variables = ["x"]

[[mode]]
id = "q1"
field = ["-1"]

[sets]
enclosure = [[0.0, 1.0]]
safe = ["x*(x-1)"]
goal = ["x - 0.1"]

[template]
basis = ["x"]
coeff_min = -2.0
coeff_max = 2.0

[params]
epsilon = 0.1
lambda = 20.0
"#;

    #[test]
    fn minimal_model_loads() {
        let m = load_model(MINIMAL).unwrap();
        assert_eq!(m.name, "mini");
        assert_eq!(m.sys.modes.len(), 1);
        assert_eq!(m.spec.safe.predicates.len(), 1);
        assert!((m.params.epsilon_s - 0.05).abs() < 1e-12);
        assert_eq!(m.params.max_iterations, 100);
        assert!(m.template.is_some());
        assert!(!m.spec.is_initialized());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("[params]", "[params]\nbogus_key = 1.0");
        let err = load_model(&bad).unwrap_err();
        assert!(matches!(err, ModelFileError::Toml(_)), "{err}");
    }

    #[test]
    fn malformed_expression_reported_with_context() {
        let bad = MINIMAL.replace("\"x*(x-1)\"", "\"x*(y-1)\"");
        let err = load_model(&bad).unwrap_err();
        match err {
            ModelFileError::Expr { context, .. } => assert!(context.contains("sets.safe")),
            other => panic!("expected expr error, got {other}"),
        }
    }

    #[test]
    fn offset_becomes_pinned_coefficient() {
        let with_offset = MINIMAL.replace(
            "coeff_max = 2.0",
            "coeff_max = 2.0\noffset = \"-1\"",
        );
        let m = load_model(&with_offset).unwrap();
        let t = m.template.unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.coeff_box.get(1).lo(), 1.0);
        assert_eq!(t.coeff_box.get(1).hi(), 1.0);
        let inst = t.instantiate(&[0.5, 1.0]);
        assert!((inst.eval_point(&[2.0]).unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let bad = MINIMAL.replace("enclosure = [[0.0, 1.0]]", "enclosure = [[0.0, 1.0], [0.0, 1.0]]");
        assert!(load_model(&bad).is_err());
    }

    #[test]
    fn regions_require_goal_markers() {
        let with_region = format!(
            "{MINIMAL}\n[[region]]\nid = \"R1\"\nsafe = [\"x*(x-1)\"]\nenclosure = [[0.0, 1.0]]\n"
        );
        let err = load_model(&with_region).unwrap_err();
        assert!(err.to_string().contains("goal_regions"));
    }
}
