//! Exact interventional Shapley values and relative SHAP importance (rSI).
//!
//! Networks built greedily keep only a handful of input features, so every
//! coalition can be enumerated. The value of a coalition `S` for input `x` is
//! the mean, over background rows `z`, of `f` at the point that takes `x` on
//! `S` and `z` elsewhere.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bann::{dot, BannModel};
use crate::dataset::Dataset;
use crate::error::{ExplainError, ModelError};

pub const MAX_EXACT_FEATURES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapExplanation {
    pub example: Vec<f64>,
    /// The players, as indices into `example`.
    pub features: Vec<usize>,
    /// `phi[i]` is the attribution of `features[i]`.
    pub phi: Vec<f64>,
    pub base_value: f64,
    pub model_output: f64,
}

/// Mean of `f` over `background` with the coordinates in `coalition` taken
/// from `x`.
pub fn coalition_value<F>(f: F, x: &[f64], coalition: &[usize], background: &[Vec<f64>]) -> Result<f64, ExplainError>
where
    F: Fn(&[f64]) -> f64,
{
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    let mut point = vec![0.0; x.len()];
    let total: f64 = background
        .iter()
        .map(|z| {
            point.copy_from_slice(z);
            for &j in coalition {
                point[j] = x[j];
            }
            f(&point)
        })
        .sum();
    Ok(total / background.len() as f64)
}

/// `|S|!(n-|S|-1)!/n!` for every coalition size `|S|` in `0..n`.
fn shapley_weights(n: usize) -> Vec<f64> {
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    (0..n).map(|s| fact(s) * fact(n - s - 1) / fact(n)).collect()
}

/// Exact Shapley values of `f` at `x` with players `features`.
///
/// Coordinates outside `features` stay at `x`'s values in every coalition, so
/// `base_value + Σ phi = f(x)` holds for any choice of players.
pub fn shapley_exact<F>(f: F, x: &[f64], background: &[Vec<f64>], features: &[usize]) -> Result<ShapExplanation, ExplainError>
where
    F: Fn(&[f64]) -> f64,
{
    let n = features.len();
    if n > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures(n));
    }
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    let fixed: Vec<usize> = (0..x.len()).filter(|j| !features.contains(j)).collect();
    let values: Vec<f64> = (0..1usize << n)
        .map(|mask| {
            let mut coalition = fixed.clone();
            coalition.extend((0..n).filter(|i| mask >> i & 1 == 1).map(|i| features[i]));
            coalition_value(&f, x, &coalition, background)
        })
        .collect::<Result<_, _>>()?;
    let weights = shapley_weights(n);
    let phi = (0..n)
        .map(|i| {
            (0..1usize << n)
                .filter(|mask| mask >> i & 1 == 0)
                .map(|mask| weights[mask.count_ones() as usize] * (values[mask | 1 << i] - values[mask]))
                .sum()
        })
        .collect();
    Ok(ShapExplanation {
        example: x.to_vec(),
        features: features.to_vec(),
        phi,
        base_value: values[0],
        model_output: f(x),
    })
}

/// Shapley values of `w·a + b` at `a` against a background of `a` vectors:
/// `wⱼ·(aⱼ - mean(background aⱼ))`.
pub fn linear_shapley(weights: &[f64], a: &[f64], background_mean: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .zip(a.iter().zip(background_mean))
        .map(|(w, (v, mu))| w * (v - mu))
        .collect()
}

/// `SI / ΣSI`, or all zeros when every SI is zero.
pub fn relative(si: &[f64]) -> Vec<f64> {
    let total: f64 = si.iter().sum();
    if total > 0.0 {
        si.iter().map(|v| v / total).collect()
    } else {
        vec![0.0; si.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronImportance {
    /// Input indices with a non-zero weight (features for layer 1, previous
    /// layer neurons otherwise).
    pub inputs: Vec<usize>,
    pub si: Vec<f64>,
    pub rsi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub feature_names: Vec<String>,
    pub feature_si: Vec<f64>,
    pub feature_rsi: Vec<f64>,
    /// Neurons of the last hidden layer, as players of the output unit.
    pub neuron_si: Vec<f64>,
    pub neuron_rsi: Vec<f64>,
    /// Per hidden layer, per neuron: attribution of its pre-activation to
    /// its inputs.
    pub neuron_level: Vec<Vec<NeuronImportance>>,
    pub explained: usize,
    pub background: usize,
}

/// Seeded subsample of at most `size` rows.
pub fn background_sample(data: &Dataset, size: usize, seed: u64) -> Dataset {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(size.min(data.len()));
    data.select(&idx)
}

fn mean_abs(rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v.abs();
        }
    }
    out.iter().map(|v| v / rows.len() as f64).collect()
}

/// Attributions of a linear game `w·a + b` over the given players, exact
/// enumeration when small enough and the closed form otherwise.
fn linear_game(
    weights: &[f64],
    bias: f64,
    players: &[usize],
    explain: &[Vec<f64>],
    background: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, ExplainError> {
    let f = |a: &[f64]| dot(weights, a) + bias;
    if players.len() <= MAX_EXACT_FEATURES {
        explain
            .iter()
            .map(|a| shapley_exact(f, a, background, players).map(|e| e.phi))
            .collect()
    } else {
        let dim = weights.len();
        let mut mu = vec![0.0; dim];
        for b in background {
            for (m, v) in mu.iter_mut().zip(b) {
                *m += v / background.len() as f64;
            }
        }
        Ok(explain
            .iter()
            .map(|a| {
                let all = linear_shapley(weights, a, &mu);
                players.iter().map(|&j| all[j]).collect()
            })
            .collect())
    }
}

pub fn importance_report(model: &BannModel, explain_set: &Dataset, background: &Dataset) -> Result<ImportanceReport, ExplainError> {
    if explain_set.is_empty() {
        return Err(ExplainError::EmptyExplainSet);
    }
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    let d = model.input_dim();
    let ex_rows = model.model_space_rows(explain_set)?;
    let bg_rows = model.model_space_rows(background)?;

    // predictor level, input features
    let retained = model.retained_features();
    let f = |z: &[f64]| model.predict_standardized(z);
    let mut feature_phi = Vec::with_capacity(ex_rows.len());
    for z in &ex_rows {
        let e = shapley_exact(f, z, &bg_rows, &retained)?;
        let mut full = vec![0.0; d];
        for (&j, &p) in e.features.iter().zip(&e.phi) {
            full[j] = p;
        }
        feature_phi.push(full);
    }
    let feature_si = mean_abs(&feature_phi, d);

    // activations of every layer, explain and background
    let layer_inputs = |rows: &[Vec<f64>]| -> Vec<Vec<Vec<f64>>> {
        // [layer][row] -> input vector of that layer
        let mut per_layer = vec![rows.to_vec()];
        for k in 0..model.depth() {
            let next = per_layer[k]
                .iter()
                .map(|u| model.hidden_layers[k].forward_unchecked(u).to_f64())
                .collect();
            per_layer.push(next);
        }
        per_layer
    };
    let ex_inputs = layer_inputs(&ex_rows);
    let bg_inputs = layer_inputs(&bg_rows);

    // predictor level, last hidden layer as players of the output unit
    let depth = model.depth();
    let width = model.hidden_layers[depth - 1].width();
    let players: Vec<usize> = (0..width).collect();
    let neuron_phi = linear_game(
        &model.output_weights,
        model.output_bias,
        &players,
        &ex_inputs[depth],
        &bg_inputs[depth],
    )?;
    let neuron_si = if width == 0 { Vec::new() } else { mean_abs(&neuron_phi, width) };

    // neuron level, pre-activations over each neuron's own inputs
    let mut neuron_level = Vec::with_capacity(depth);
    for k in 0..depth {
        let mut layer = Vec::new();
        for n in &model.hidden_layers[k].neurons {
            let inputs = n.support();
            let phi = linear_game(&n.weights, n.bias, &inputs, &ex_inputs[k], &bg_inputs[k])?;
            let si = mean_abs(&phi, inputs.len());
            layer.push(NeuronImportance {
                rsi: relative(&si),
                inputs,
                si,
            });
        }
        neuron_level.push(layer);
    }

    Ok(ImportanceReport {
        feature_names: model.feature_names.clone(),
        feature_rsi: relative(&feature_si),
        feature_si,
        neuron_rsi: relative(&neuron_si),
        neuron_si,
        neuron_level,
        explained: ex_rows.len(),
        background: bg_rows.len(),
    })
}

fn pct(v: f64) -> String {
    format!("{:.0}%", 100.0 * v)
}

/// Graphviz rendering of a single-hidden-layer report. Node labels carry
/// predictor-level rSI; input edges get darker with neuron-level rSI.
pub fn report_to_dot(report: &ImportanceReport, model: &BannModel) -> Result<String, ExplainError> {
    if model.depth() != 1 {
        return Err(ModelError::NotSingleLayer(model.depth()).into());
    }
    let mut features = model.retained_features();
    features.sort_by(|&a, &b| report.feature_rsi[b].total_cmp(&report.feature_rsi[a]).then(a.cmp(&b)));
    let mut neurons: Vec<usize> = (0..model.hidden_layers[0].width()).collect();
    neurons.sort_by(|&a, &b| report.neuron_rsi[b].total_cmp(&report.neuron_rsi[a]).then(a.cmp(&b)));

    let mut out = String::from("digraph bann {\n  rankdir=LR;\n  node [shape=box];\n");
    for &j in &features {
        let _ = writeln!(
            out,
            "  x{j} [label=\"{}\\n{}\"];",
            report.feature_names[j].replace('"', "\\\""),
            pct(report.feature_rsi[j])
        );
    }
    for &h in &neurons {
        let _ = writeln!(out, "  h{h} [label=\"𝟙 h{}\\n{}\"];", h + 1, pct(report.neuron_rsi[h]));
    }
    out.push_str("  out [label=\"Σ\"];\n");
    for &h in &neurons {
        let imp = &report.neuron_level[0][h];
        for (&j, &rsi) in imp.inputs.iter().zip(&imp.rsi) {
            // gray0 is black; gray90 is the lightest stroke used
            let gray = (90.0 * (1.0 - rsi)).round() as u32;
            let _ = writeln!(out, "  x{j} -> h{h} [color=\"gray{gray}\", penwidth=2];");
        }
    }
    for &h in &neurons {
        let _ = writeln!(out, "  h{h} -> out;");
    }
    out.push_str("}\n");
    Ok(out)
}

/// Plain-text table of the report; works for any depth.
pub fn report_to_table(report: &ImportanceReport, model: &BannModel) -> String {
    let mut out = String::from("feature importance (predictor level)\n");
    let _ = writeln!(out, "{:<20} {:>14} {:>8}", "feature", "SI", "rSI");
    for j in 0..report.feature_names.len() {
        let _ = writeln!(
            out,
            "{:<20} {:>14.6} {:>8.4}",
            report.feature_names[j], report.feature_si[j], report.feature_rsi[j]
        );
    }
    let _ = writeln!(out, "\nlast hidden layer (layer {}) importance", model.depth());
    let _ = writeln!(out, "{:<20} {:>14} {:>8}", "neuron", "SI", "rSI");
    for (h, (si, rsi)) in report.neuron_si.iter().zip(&report.neuron_rsi).enumerate() {
        let _ = writeln!(out, "{:<20} {:>14.6} {:>8.4}", format!("h{}.{}", model.depth(), h + 1), si, rsi);
    }
    out.push_str("\nneuron level (rSI of each input)\n");
    for (k, layer) in report.neuron_level.iter().enumerate() {
        for (h, imp) in layer.iter().enumerate() {
            let parts: Vec<String> = imp
                .inputs
                .iter()
                .zip(&imp.rsi)
                .map(|(&j, r)| {
                    let name = if k == 0 { report.feature_names[j].clone() } else { format!("h{}.{}", k, j + 1) };
                    format!("{name}={r:.4}")
                })
                .collect();
            let _ = writeln!(out, "h{}.{}: {}", k + 1, h + 1, parts.join(", "));
        }
    }
    out
}
