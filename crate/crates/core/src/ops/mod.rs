//! The two-level operation catalog: logical families and the physical
//! operations inside each of them.

mod apply;
mod prompt;

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::script::{Literal, OpCall};

pub use apply::apply_physical;
pub use prompt::{prompt_for, resolve_prompt, PromptSubject, ResolvedPrompt};
pub(crate) use prompt::parse_value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpError {
    #[error("BadParam: {0}")]
    BadParam(String),
    #[error("EmptyResult: {0}")]
    EmptyResult(String),
    #[error("UnknownColumn: {0}")]
    UnknownColumn(String),
    #[error("Overflow: {0}")]
    Overflow(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Imputer,
    OutlierHandler,
    Scaler,
    Discretizer,
    FeatureGenerator,
    FeatureSelector,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Imputer,
        Family::OutlierHandler,
        Family::Scaler,
        Family::Discretizer,
        Family::FeatureGenerator,
        Family::FeatureSelector,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Imputer => "Imputer",
            Family::OutlierHandler => "OutlierHandler",
            Family::Scaler => "Scaler",
            Family::Discretizer => "Discretizer",
            Family::FeatureGenerator => "FeatureGenerator",
            Family::FeatureSelector => "FeatureSelector",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            Family::Imputer => "Fill in missing cells",
            Family::OutlierHandler => "Replace or clip outlying values",
            Family::Scaler => "Rescale numeric features",
            Family::Discretizer => "Bin numeric features into discrete codes or labels",
            Family::FeatureGenerator => "Derive new features from existing ones",
            Family::FeatureSelector => "Drop uninformative or redundant features",
        }
    }

    pub fn coarse_prompt(self) -> &'static str {
        match self {
            Family::Imputer => "Impute the missing values",
            Family::OutlierHandler => "Deal with the outliers",
            Family::Scaler => "Scale the features",
            Family::Discretizer => "Discretize the features",
            Family::FeatureGenerator => "Generate interaction features",
            Family::FeatureSelector => "Select the informative features",
        }
    }

    /// Operation used when a coarse prompt must be made concrete without a
    /// model to choose one.
    pub fn default_op(self) -> &'static PhysicalOperation {
        let name = match self {
            Family::Imputer => "median_impute",
            Family::OutlierHandler => "replace_value",
            Family::Scaler => "standard_scale",
            Family::Discretizer => "quantile_bins",
            Family::FeatureGenerator => "poly_features",
            Family::FeatureSelector => "variance_threshold",
        };
        lookup(name).expect("default op is in the catalog")
    }

    pub fn ops(self) -> impl Iterator<Item = &'static PhysicalOperation> {
        catalog().iter().filter(move |op| op.family == self)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Number,
    Text,
    NumberList,
    TextList,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    pub default: Option<Literal>,
    /// Optional parameters may be omitted entirely (no default value).
    pub optional: bool,
}

impl ParamSpec {
    fn new(name: &'static str, kind: ParamKind, default: Option<Literal>) -> Self {
        Self { name, kind, default, optional: false }
    }

    fn accepts(&self, lit: &Literal) -> bool {
        match (self.kind, lit) {
            (ParamKind::Number, Literal::Int(_) | Literal::Float(_)) => true,
            (ParamKind::Text, Literal::Str(_)) => true,
            (ParamKind::NumberList, Literal::List(items)) => items.iter().all(|i| i.as_f64().is_some()),
            (ParamKind::TextList, Literal::List(items)) => items.iter().all(|i| i.as_str().is_some()),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalOperation {
    pub name: &'static str,
    pub family: Family,
    pub params: Vec<ParamSpec>,
    pub prompt_template: &'static str,
}

impl PhysicalOperation {
    /// Action index of this operation within the catalog.
    pub fn index(&self) -> usize {
        catalog()
            .iter()
            .position(|op| op.name == self.name)
            .expect("operation is in the catalog")
    }

    /// PrepScript call pattern, e.g. `{target} = iqr_clip({target}, 1.5)`.
    pub fn dsl_template(&self) -> String {
        let mut parts = vec!["{target}".to_string()];
        for p in &self.params {
            parts.push(match &p.default {
                Some(d) => d.to_string(),
                None => format!("<{}>", p.name),
            });
        }
        format!("{{target}} = {}({})", self.name, parts.join(", "))
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn p(name: &'static str, kind: ParamKind, default: Literal) -> ParamSpec {
    ParamSpec::new(name, kind, Some(default))
}

fn build_catalog() -> Vec<PhysicalOperation> {
    use Family::*;
    use Literal::{Float, Int, Str};
    use ParamKind::*;
    let op = |name, family, params, prompt_template| PhysicalOperation {
        name,
        family,
        params,
        prompt_template,
    };
    let mut labels = ParamSpec::new("labels", TextList, None);
    labels.optional = true;
    vec![
        op("mean_impute", Imputer, vec![], "Fill the missing values{scope} with the mean of each column"),
        op("median_impute", Imputer, vec![], "Fill the missing values{scope} with the median of each column"),
        op("mode_impute", Imputer, vec![], "Fill the missing values{scope} with the most frequent value of each column"),
        op("const_impute", Imputer, vec![p("value", Number, Int(0))], "Fill the missing values{scope} with the constant {value}"),
        op(
            "replace_value",
            OutlierHandler,
            vec![p("value", Number, Int(0)), p("stat", Text, Str("median".into()))],
            "Remove the outlier value {value}{scope} and replace it with the {stat} of each column",
        ),
        op("iqr_clip", OutlierHandler, vec![p("k", Number, Float(1.5))], "Clip the outliers{scope} to {k} interquartile ranges beyond the quartiles"),
        op("zscore_clip", OutlierHandler, vec![p("z", Number, Int(3))], "Clip the values{scope} to within {z} standard deviations of the mean"),
        op("min_max_scale", Scaler, vec![], "Scale the features{scope} to the range between 0 and 1"),
        op("standard_scale", Scaler, vec![], "Standardize features{scope} by removing the mean and scaling to unit variance"),
        op("max_abs_scale", Scaler, vec![], "Scale each feature{scope} by its maximum absolute value"),
        op("robust_scale", Scaler, vec![], "Scale the features{scope} using the median and the interquartile range"),
        op("equal_width_bins", Discretizer, vec![p("k", Number, Int(5))], "Discretize the features{scope} into {k} equal-width bins"),
        op("quantile_bins", Discretizer, vec![p("k", Number, Int(5))], "Discretize the features{scope} into {k} quantile bins"),
        op(
            "custom_bins",
            Discretizer,
            vec![ParamSpec::new("edges", NumberList, None), labels],
            "Discretize the features{scope} with the bin edges {edges} and the labels {labels}",
        ),
        op("poly_features", FeatureGenerator, vec![p("degree", Number, Int(2))], "Generate polynomial features{scope} of degree {degree}"),
        op("interactions_only", FeatureGenerator, vec![], "Generate pairwise interaction features{scope}"),
        op(
            "variance_threshold",
            FeatureSelector,
            vec![p("threshold", Number, Float(0.0))],
            "Remove the features{scope} whose variance is at most {threshold}",
        ),
        op(
            "correlation_filter",
            FeatureSelector,
            vec![p("threshold", Number, Float(0.95))],
            "Remove the later feature{scope} of each pair whose absolute correlation is at least {threshold}",
        ),
    ]
}

pub fn catalog() -> &'static [PhysicalOperation] {
    static CATALOG: OnceLock<Vec<PhysicalOperation>> = OnceLock::new();
    CATALOG.get_or_init(build_catalog)
}

pub fn lookup(name: &str) -> Option<&'static PhysicalOperation> {
    catalog().iter().find(|op| op.name == name)
}

/// Families with their operations, in catalog order.
pub fn families() -> Vec<(Family, Vec<&'static PhysicalOperation>)> {
    Family::ALL.into_iter().map(|f| (f, f.ops().collect())).collect()
}

/// An operation with every parameter resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundOp {
    pub op: &'static PhysicalOperation,
    /// One entry per `op.params`; `None` only for omitted optional params.
    pub values: Vec<Option<Literal>>,
    /// Restricts the operation to these columns when present.
    pub columns: Option<Vec<String>>,
}

impl BoundOp {
    /// Binds call arguments (after the dataset) against the parameter schema.
    /// `columns=[...]` is accepted by every operation.
    pub fn bind(
        op: &'static PhysicalOperation,
        positional: &[Literal],
        kwargs: &[(String, Literal)],
    ) -> Result<BoundOp, OpError> {
        if positional.len() > op.params.len() {
            return Err(OpError::BadParam(format!(
                "{} takes at most {} parameters, got {}",
                op.name,
                op.params.len(),
                positional.len()
            )));
        }
        let mut values: Vec<Option<Literal>> = vec![None; op.params.len()];
        for (slot, lit) in values.iter_mut().zip(positional) {
            *slot = Some(lit.clone());
        }
        let mut columns = None;
        for (k, v) in kwargs {
            if k == "columns" {
                let names = match v {
                    Literal::List(items) => items
                        .iter()
                        .map(|i| i.as_str().map(str::to_string))
                        .collect::<Option<Vec<_>>>(),
                    Literal::Str(s) => Some(vec![s.clone()]),
                    _ => None,
                };
                columns = Some(names.ok_or_else(|| {
                    OpError::BadParam(format!("{}: columns must be a list of names", op.name))
                })?);
                continue;
            }
            let i = op
                .params
                .iter()
                .position(|p| p.name == k)
                .ok_or_else(|| OpError::BadParam(format!("{} has no parameter '{k}'", op.name)))?;
            if values[i].is_some() {
                return Err(OpError::BadParam(format!("{}: parameter '{k}' given twice", op.name)));
            }
            values[i] = Some(v.clone());
        }
        for (spec, slot) in op.params.iter().zip(values.iter_mut()) {
            if slot.is_none() {
                *slot = spec.default.clone();
            }
            match slot {
                Some(lit) if !spec.accepts(lit) => {
                    return Err(OpError::BadParam(format!(
                        "{}: parameter '{}' expects {:?}, got {lit}",
                        op.name, spec.name, spec.kind
                    )))
                }
                None if !spec.optional => {
                    return Err(OpError::BadParam(format!(
                        "{}: missing required parameter '{}'",
                        op.name, spec.name
                    )))
                }
                _ => {}
            }
        }
        Ok(BoundOp { op, values, columns })
    }

    pub fn with_defaults(op: &'static PhysicalOperation) -> Result<BoundOp, OpError> {
        Self::bind(op, &[], &[])
    }

    pub fn value(&self, name: &str) -> Option<&Literal> {
        let i = self.op.params.iter().position(|p| p.name == name)?;
        self.values[i].as_ref()
    }

    pub fn number(&self, name: &str) -> Result<f64, OpError> {
        self.value(name)
            .and_then(Literal::as_f64)
            .ok_or_else(|| OpError::BadParam(format!("{}: '{name}' must be a number", self.op.name)))
    }

    /// The call to splice into a program. Parameters equal to their default
    /// are left out, except where a later positional parameter needs them.
    pub fn to_call(&self) -> OpCall {
        let last = self
            .op
            .params
            .iter()
            .zip(&self.values)
            .rposition(|(spec, v)| v.is_some() && *v != spec.default);
        let mut call = OpCall::new(self.op.name);
        if let Some(last) = last {
            for v in self.values[..=last].iter().flatten() {
                call = call.arg(v.clone());
            }
        }
        if let Some(cols) = &self.columns {
            let list = cols.iter().map(|c| Literal::Str(c.clone())).collect();
            call = call.kwarg("columns", Literal::List(list));
        }
        call
    }
}
