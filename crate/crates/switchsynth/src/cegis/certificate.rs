//! Concrete certificates and their persistence format.
//!
//! A certificate bundles the synthesized function, any barriers, the
//! parameter snapshot, and the per-mode predicate/barrier tables, together
//! with cached Lie derivatives used by the controller and the simulator.
//! Documents are versioned JSON with expressions in the standard text
//! grammar; saving and re-loading is lossless.

use crate::model::{RwsSpec, SwitchedSystem, SynthesisParams};
use crate::symexpr::{lie_derivative, parse_expr, Expr, VarContext};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "counterexample")]
pub enum VerificationStatus {
    Valid,
    CounterexampleFound(Vec<f64>),
    Unknown,
    Unchecked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    AliasV,
    Fixed,
    Templated,
}

#[derive(Clone, Debug)]
pub struct ConcreteBarrier {
    pub expr: Arc<Expr>,
    pub kind: BarrierKind,
}

/// A synthesized (or externally supplied) certificate with cached per-mode
/// Lie derivatives.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub v: Arc<Expr>,
    pub coeffs: Vec<f64>,
    pub basis: Vec<Arc<Expr>>,
    pub barriers: Vec<ConcreteBarrier>,
    pub params: SynthesisParams,
    pub jq: Vec<Vec<usize>>,
    pub bq: Vec<Vec<usize>>,
    pub verification: VerificationStatus,
    /// Lie derivative of `v` along each mode's field.
    pub vdot: Vec<Arc<Expr>>,
    /// Lie derivative of each safe predicate along each mode: `pdot[q][j]`.
    pub pdot: Vec<Vec<Arc<Expr>>>,
    /// Lie derivative of each barrier along each mode: `bdot[q][b]`.
    pub bdot: Vec<Vec<Arc<Expr>>>,
}

impl Certificate {
    /// Assemble a certificate and populate the derivative caches.
    pub fn assemble(
        sys: &SwitchedSystem,
        spec: &RwsSpec,
        v: Arc<Expr>,
        coeffs: Vec<f64>,
        basis: Vec<Arc<Expr>>,
        barriers: Vec<ConcreteBarrier>,
        params: SynthesisParams,
        jq: Vec<Vec<usize>>,
        bq: Vec<Vec<usize>>,
        verification: VerificationStatus,
    ) -> Self {
        let vdot = sys.modes.iter().map(|m| lie_derivative(&v, &m.field)).collect();
        let pdot = sys
            .modes
            .iter()
            .map(|m| {
                spec.safe
                    .predicates
                    .iter()
                    .map(|p| lie_derivative(p, &m.field))
                    .collect()
            })
            .collect();
        let bdot = sys
            .modes
            .iter()
            .map(|m| {
                barriers
                    .iter()
                    .map(|b| lie_derivative(&b.expr, &m.field))
                    .collect()
            })
            .collect();
        Certificate {
            v,
            coeffs,
            basis,
            barriers,
            params,
            jq,
            bq,
            verification,
            vdot,
            pdot,
            bdot,
        }
    }
}

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BarrierDoc {
    kind: BarrierKind,
    expr: String,
}

/// On-disk certificate document.
#[derive(Serialize, Deserialize)]
pub struct CertificateDoc {
    pub format_version: u32,
    pub variables: Vec<String>,
    pub modes: Vec<String>,
    pub v: String,
    pub basis: Vec<String>,
    pub coefficients: Vec<f64>,
    barriers: Vec<BarrierDoc>,
    pub params: SynthesisParams,
    pub jq: Vec<Vec<usize>>,
    pub bq: Vec<Vec<usize>>,
    pub verification: VerificationStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum CertificateIoError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported certificate format version {0}")]
    Version(u32),
    #[error("certificate variables {doc:?} do not match the system variables {sys:?}")]
    VariableMismatch { doc: Vec<String>, sys: Vec<String> },
    #[error("certificate was produced for modes {doc:?}, system has {sys:?}")]
    ModeMismatch { doc: Vec<String>, sys: Vec<String> },
    #[error("expression parse error: {0}")]
    Parse(#[from] crate::symexpr::ParseError),
}

impl Certificate {
    pub fn to_document(&self, sys: &SwitchedSystem) -> CertificateDoc {
        let ctx = &sys.vars;
        CertificateDoc {
            format_version: FORMAT_VERSION,
            variables: ctx.names().to_vec(),
            modes: sys.modes.iter().map(|m| m.id.clone()).collect(),
            v: self.v.display(ctx).to_string(),
            basis: self.basis.iter().map(|g| g.display(ctx).to_string()).collect(),
            coefficients: self.coeffs.clone(),
            barriers: self
                .barriers
                .iter()
                .map(|b| BarrierDoc {
                    kind: b.kind,
                    expr: b.expr.display(ctx).to_string(),
                })
                .collect(),
            params: self.params,
            jq: self.jq.clone(),
            bq: self.bq.clone(),
            verification: self.verification.clone(),
        }
    }

    pub fn to_json(&self, sys: &SwitchedSystem) -> String {
        serde_json::to_string_pretty(&self.to_document(sys)).expect("certificate serialization")
    }

    pub fn from_document(
        doc: &CertificateDoc,
        sys: &SwitchedSystem,
        spec: &RwsSpec,
    ) -> Result<Self, CertificateIoError> {
        if doc.format_version != FORMAT_VERSION {
            return Err(CertificateIoError::Version(doc.format_version));
        }
        let sys_vars: Vec<String> = sys.vars.names().to_vec();
        if doc.variables != sys_vars {
            return Err(CertificateIoError::VariableMismatch {
                doc: doc.variables.clone(),
                sys: sys_vars,
            });
        }
        let sys_modes: Vec<String> = sys.modes.iter().map(|m| m.id.clone()).collect();
        if doc.modes != sys_modes {
            return Err(CertificateIoError::ModeMismatch {
                doc: doc.modes.clone(),
                sys: sys_modes,
            });
        }
        let ctx: &VarContext = &sys.vars;
        let v = parse_expr(&doc.v, ctx)?;
        let basis = doc
            .basis
            .iter()
            .map(|s| parse_expr(s, ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let barriers = doc
            .barriers
            .iter()
            .map(|b| {
                Ok(ConcreteBarrier {
                    expr: parse_expr(&b.expr, ctx)?,
                    kind: b.kind,
                })
            })
            .collect::<Result<Vec<_>, CertificateIoError>>()?;
        Ok(Certificate::assemble(
            sys,
            spec,
            v,
            doc.coefficients.clone(),
            basis,
            barriers,
            doc.params,
            doc.jq.clone(),
            doc.bq.clone(),
            doc.verification.clone(),
        ))
    }

    pub fn from_json(
        json: &str,
        sys: &SwitchedSystem,
        spec: &RwsSpec,
    ) -> Result<Self, CertificateIoError> {
        let doc: CertificateDoc = serde_json::from_str(json)?;
        Certificate::from_document(&doc, sys, spec)
    }
}
