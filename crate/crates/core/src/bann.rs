//! Binary-activated neural networks: sign-activated hidden layers followed by
//! a linear output unit.
//!
//! Weights are stored in the standardized input space of the training data;
//! the model carries the standardization so callers pass raw feature values.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureScale};
use crate::error::ModelError;

pub const FORMAT_VERSION: u64 = 1;

/// `+1` for `v >= 0`, `-1` otherwise. The tie at zero is fixed to `+1`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neuron {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Neuron {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Neuron { weights, bias }
    }

    #[inline]
    pub fn pre_activation(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    #[inline]
    pub fn activate(&self, x: &[f64]) -> f64 {
        sign(self.pre_activation(x))
    }

    pub fn support(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinaryLayer {
    pub neurons: Vec<Neuron>,
}

impl BinaryLayer {
    pub fn new(neurons: Vec<Neuron>) -> Self {
        BinaryLayer { neurons }
    }

    pub fn width(&self) -> usize {
        self.neurons.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ActivationPattern, ModelError> {
        for n in &self.neurons {
            if n.weights.len() != x.len() {
                return Err(ModelError::DimensionMismatch {
                    expected: n.weights.len(),
                    found: x.len(),
                });
            }
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> ActivationPattern {
        ActivationPattern {
            bits: self
                .neurons
                .iter()
                .map(|n| if n.pre_activation(x) >= 0.0 { 1 } else { -1 })
                .collect(),
        }
    }
}

pub fn layer_forward(layer: &BinaryLayer, x: &[f64]) -> Result<ActivationPattern, ModelError> {
    layer.forward(x)
}

/// Output of a layer as a vector over {-1, +1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationPattern {
    pub bits: Vec<i8>,
}

impl ActivationPattern {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub dataset_name: String,
    pub train_mse: f64,
    pub valid_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BannModel {
    pub hidden_layers: Vec<BinaryLayer>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
    pub feature_names: Vec<String>,
    pub standardization: Option<Vec<FeatureScale>>,
    pub metadata: ModelMetadata,
}

impl BannModel {
    /// Checks the dimension chain `d -> d1 -> ... -> d_last -> 1`.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_layers.is_empty() {
            return Err(ModelError::Invalid("model needs at least one hidden layer".into()));
        }
        let d = self.feature_names.len();
        if let Some(s) = &self.standardization {
            if s.len() != d {
                return Err(ModelError::Invalid(format!(
                    "standardization has {} entries for {d} features",
                    s.len()
                )));
            }
        }
        let mut width = d;
        for (k, layer) in self.hidden_layers.iter().enumerate() {
            for (j, n) in layer.neurons.iter().enumerate() {
                if n.weights.len() != width {
                    return Err(ModelError::Invalid(format!(
                        "layer {} neuron {} has {} weights, expected {width}",
                        k + 1,
                        j + 1,
                        n.weights.len()
                    )));
                }
                if !n.bias.is_finite() || n.weights.iter().any(|w| !w.is_finite()) {
                    return Err(ModelError::Invalid(format!(
                        "layer {} neuron {} has non-finite parameters",
                        k + 1,
                        j + 1
                    )));
                }
            }
            width = layer.width();
        }
        if self.output_weights.len() != width {
            return Err(ModelError::Invalid(format!(
                "{} output weights for a last hidden layer of width {width}",
                self.output_weights.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn depth(&self) -> usize {
        self.hidden_layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.hidden_layers.iter().map(BinaryLayer::width).collect()
    }

    pub fn n_neurons(&self) -> usize {
        self.widths().iter().sum()
    }

    /// Input features with a non-zero weight in some first-layer neuron.
    pub fn retained_features(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.hidden_layers[0]
            .neurons
            .iter()
            .flat_map(Neuron::support)
            .collect();
        set.into_iter().collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Maps raw feature values into the space the weights live in.
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardization {
            None => x.to_vec(),
            Some(s) => x.iter().zip(s).map(|(v, s)| s.apply(*v)).collect(),
        }
    }

    /// Patterns of every hidden layer for an already standardized input.
    pub fn patterns_standardized(&self, z: &[f64]) -> Vec<ActivationPattern> {
        let mut out = Vec::with_capacity(self.depth());
        let mut input = z.to_vec();
        for layer in &self.hidden_layers {
            let p = layer.forward_unchecked(&input);
            input = p.to_f64();
            out.push(p);
        }
        out
    }

    /// Output unit applied to a last-hidden-layer pattern.
    pub fn output(&self, last: &ActivationPattern) -> f64 {
        let acts: Vec<f64> = last.to_f64();
        dot(&self.output_weights, &acts) + self.output_bias
    }

    pub fn predict_standardized(&self, z: &[f64]) -> f64 {
        let patterns = self.patterns_standardized(z);
        self.output(patterns.last().expect("validated model has a hidden layer"))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_dim(x)?;
        Ok(self.predict_standardized(&self.standardize(x)))
    }

    pub fn region_code(&self, x: &[f64], k: usize) -> Result<ActivationPattern, ModelError> {
        if k == 0 || k > self.depth() {
            return Err(ModelError::LayerOutOfRange { k, depth: self.depth() });
        }
        self.check_dim(x)?;
        let mut patterns = self.patterns_standardized(&self.standardize(x));
        Ok(patterns.swap_remove(k - 1))
    }

    /// Rows of `data` in the model's weight space. Data already carrying the
    /// model's standardization is used as-is.
    pub fn model_space_rows(&self, data: &Dataset) -> Result<Vec<Vec<f64>>, ModelError> {
        if data.n_features() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                found: data.n_features(),
            });
        }
        if data.standardization == self.standardization {
            return Ok(data.features.rows().into_iter().map(|r| r.to_vec()).collect());
        }
        let raw = data.raw_features();
        Ok(rows_of(raw.view()).iter().map(|r| self.standardize(r)).collect())
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        Ok(self
            .model_space_rows(data)?
            .iter()
            .map(|z| self.predict_standardized(z))
            .collect())
    }

    pub fn mse(&self, data: &Dataset) -> Result<f64, ModelError> {
        let preds = self.predict_dataset(data)?;
        Ok(mse(&preds, &data.labels))
    }
}

fn rows_of(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn mse(pred: &[f64], labels: &[f64]) -> f64 {
    pred.iter().zip(labels).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / labels.len() as f64
}

pub fn predict(model: &BannModel, x: &[f64]) -> Result<f64, ModelError> {
    model.predict(x)
}

pub fn region_code(model: &BannModel, x: &[f64], k: usize) -> Result<ActivationPattern, ModelError> {
    model.region_code(x, k)
}

// ---------------------------------------------------------------------------
// Equation rendering

/// Formats `v` with `digits` significant digits, or the shortest exact
/// representation when `digits` is `None`.
pub fn format_number(v: f64, digits: Option<usize>) -> String {
    let Some(digits) = digits else {
        return format!("{v}");
    };
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Comparison used by one indicator term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Ge,
    Gt,
    Le,
    Lt,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Ge => "≥",
            Relation::Gt => ">",
            Relation::Le => "≤",
            Relation::Lt => "<",
        }
    }

    fn flipped(self) -> Self {
        match self {
            Relation::Ge => Relation::Le,
            Relation::Gt => Relation::Lt,
            Relation::Le => Relation::Ge,
            Relation::Lt => Relation::Gt,
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Ge => lhs >= rhs,
            Relation::Gt => lhs > rhs,
            Relation::Le => lhs <= rhs,
            Relation::Lt => lhs < rhs,
        }
    }
}

/// `coefficient · 𝟙{Σ feature_coefs·x relation threshold}` in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorTerm {
    pub neuron: usize,
    pub coefficient: f64,
    /// (feature index, coefficient); the largest-magnitude one is exactly 1.
    pub features: Vec<(usize, f64)>,
    pub relation: Relation,
    pub threshold: f64,
}

/// A single-hidden-layer model rewritten as `base + Σ coefᵢ·𝟙{...}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveForm {
    pub base: f64,
    pub terms: Vec<IndicatorTerm>,
    pub retained: Vec<usize>,
}

impl AdditiveForm {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.base
            + self
                .terms
                .iter()
                .filter(|t| {
                    let lhs: f64 = t.features.iter().map(|&(j, a)| a * x[j]).sum();
                    t.relation.holds(lhs, t.threshold)
                })
                .map(|t| t.coefficient)
                .sum::<f64>()
    }
}

/// Rewrites `c·sgn(u) = 2|c|·𝟙{...} - |c|` per neuron so every printed
/// coefficient is positive, with the constants folded into the base.
pub fn additive_form(model: &BannModel) -> Result<AdditiveForm, ModelError> {
    if model.depth() != 1 {
        return Err(ModelError::NotSingleLayer(model.depth()));
    }
    let d = model.input_dim();
    let scales: Vec<FeatureScale> = model
        .standardization
        .clone()
        .unwrap_or_else(|| vec![FeatureScale { mean: 0.0, std: 1.0 }; d]);
    let mut base = model.output_bias;
    let mut terms = Vec::new();
    for (j, (neuron, &c)) in model.hidden_layers[0]
        .neurons
        .iter()
        .zip(&model.output_weights)
        .enumerate()
    {
        // raw-unit pre-activation a·x + beta
        let a: Vec<f64> = neuron.weights.iter().zip(&scales).map(|(w, s)| w / s.std).collect();
        let beta = neuron.bias
            - neuron
                .weights
                .iter()
                .zip(&scales)
                .map(|(w, s)| w * s.mean / s.std)
                .sum::<f64>();
        let support: Vec<usize> = (0..d).filter(|&i| neuron.weights[i] != 0.0).collect();
        if support.is_empty() {
            base += c * sign(beta);
            continue;
        }
        if c == 0.0 {
            continue;
        }
        base -= c.abs();
        // 𝟙{a·x + beta ≥ 0}, or its complement when c < 0
        let mut relation = if c > 0.0 { Relation::Ge } else { Relation::Lt };
        let lead = support
            .iter()
            .copied()
            .max_by(|&p, &q| a[p].abs().total_cmp(&a[q].abs()).then(q.cmp(&p)))
            .expect("non-empty support");
        let scale = a[lead];
        if scale < 0.0 {
            relation = relation.flipped();
        }
        let features = support
            .iter()
            .map(|&i| (i, if i == lead { 1.0 } else { a[i] / scale }))
            .collect();
        terms.push(IndicatorTerm {
            neuron: j,
            coefficient: 2.0 * c.abs(),
            features,
            relation,
            threshold: -beta / scale,
        });
    }
    terms.sort_by(|p, q| q.coefficient.total_cmp(&p.coefficient));
    Ok(AdditiveForm {
        base,
        terms,
        retained: model.retained_features(),
    })
}

/// Additive indicator equation of a single-hidden-layer model.
/// `digits = None` prints every number exactly (round-trippable).
pub fn render_equation(model: &BannModel, digits: Option<usize>) -> Result<String, ModelError> {
    let form = additive_form(model)?;
    let names = &model.feature_names;
    let args: Vec<&str> = form.retained.iter().map(|&j| names[j].as_str()).collect();
    let mut out = format!("B({}) = {}", args.join(", "), format_number(form.base, digits));
    for t in &form.terms {
        let mut lhs = String::new();
        for (k, &(j, a)) in t.features.iter().enumerate() {
            let (sep, mag) = match (k, a < 0.0) {
                (0, false) => ("", a),
                (0, true) => ("-", -a),
                (_, false) => (" + ", a),
                (_, true) => (" - ", -a),
            };
            lhs.push_str(sep);
            if mag == 1.0 {
                lhs.push_str(&names[j]);
            } else {
                let _ = write!(lhs, "{}·{}", format_number(mag, digits), names[j]);
            }
        }
        let _ = write!(
            out,
            " + {}·𝟙{{{} {} {}}}",
            format_number(t.coefficient, digits),
            lhs,
            t.relation.symbol(),
            format_number(t.threshold, digits)
        );
    }
    Ok(out)
}

/// Layer-by-layer textual dump, used for models without an equation form.
pub fn render_layered(model: &BannModel, digits: Option<usize>) -> String {
    let f = |v: f64| format_number(v, digits);
    let mut out = String::new();
    let _ = writeln!(out, "inputs (standardized): {}", model.feature_names.join(", "));
    for (k, layer) in model.hidden_layers.iter().enumerate() {
        let inputs: Vec<String> = if k == 0 {
            model.feature_names.clone()
        } else {
            (1..=model.hidden_layers[k - 1].width()).map(|j| format!("h{k}.{j}")).collect()
        };
        let _ = writeln!(out, "layer {}:", k + 1);
        for (j, n) in layer.neurons.iter().enumerate() {
            let lin: Vec<String> = n
                .weights
                .iter()
                .zip(&inputs)
                .filter(|(w, _)| **w != 0.0)
                .map(|(w, name)| format!("{}·{}", f(*w), name))
                .collect();
            let _ = writeln!(
                out,
                "  h{}.{} = sgn({} + {})",
                k + 1,
                j + 1,
                if lin.is_empty() { "0".to_string() } else { lin.join(" + ") },
                f(n.bias)
            );
        }
    }
    let k = model.depth();
    let terms: Vec<String> = model
        .output_weights
        .iter()
        .enumerate()
        .map(|(j, w)| format!("{}·h{}.{}", f(*w), k, j + 1))
        .collect();
    let _ = writeln!(
        out,
        "output = {}{}",
        terms.iter().map(|t| format!("{t} + ")).collect::<String>(),
        f(model.output_bias)
    );
    out
}

// ---------------------------------------------------------------------------
// Model file

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u64,
    feature_names: Vec<String>,
    standardization: Option<Vec<FeatureScale>>,
    hidden_layers: Vec<BinaryLayer>,
    output_weights: Vec<f64>,
    output_bias: f64,
    metadata: ModelMetadata,
}

pub fn serialize(model: &BannModel) -> String {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        feature_names: model.feature_names.clone(),
        standardization: model.standardization.clone(),
        hidden_layers: model.hidden_layers.clone(),
        output_weights: model.output_weights.clone(),
        output_bias: model.output_bias,
        metadata: model.metadata.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
    s.push('\n');
    s
}

pub fn deserialize(text: &str) -> Result<BannModel, ModelError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ModelError::Schema {
        path: ".".into(),
        message: e.to_string(),
    })?;
    match value.get("format_version") {
        None => {
            return Err(ModelError::Schema {
                path: "format_version".into(),
                message: "missing field `format_version`".into(),
            })
        }
        Some(v) => match v.as_u64() {
            Some(FORMAT_VERSION) => {}
            Some(found) => {
                return Err(ModelError::UnsupportedVersion {
                    found,
                    supported: FORMAT_VERSION,
                })
            }
            None => {
                return Err(ModelError::Schema {
                    path: "format_version".into(),
                    message: format!("expected an unsigned integer, got {v}"),
                })
            }
        },
    }
    let file: ModelFile = serde_path_to_error::deserialize(value).map_err(|e| ModelError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let model = BannModel {
        hidden_layers: file.hidden_layers,
        output_weights: file.output_weights,
        output_bias: file.output_bias,
        feature_names: file.feature_names,
        standardization: file.standardization,
        metadata: file.metadata,
    };
    model.validate()?;
    Ok(model)
}
