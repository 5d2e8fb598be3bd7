//! Greedy construction of binary-activated networks, one neuron at a time.
//!
//! Each neuron is fit to the current residuals: a sparse Lasso direction, a
//! bias chosen by exhaustive split search on the sorted projections, and a
//! closed-form output weight/bias from the two side means. Neurons already
//! in the layer are revisited by random replacement, and finished layers are
//! frozen to serve as ±1 features for the next one.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bann::{mse, sign, BannModel, BinaryLayer, ModelMetadata, Neuron};
use crate::dataset::Dataset;
use crate::error::TrainError;
use crate::lasso::{Gram, LassoConfig, SparsityTarget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_width: usize,
    pub max_hidden_layers: usize,
    pub sparsity: SparsityTarget,
    /// Consecutive additions without a new best validation MSE before a
    /// layer stops growing.
    pub patience: usize,
    pub seed: u64,
    pub improvement1_enabled: bool,
    pub lasso: LassoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_width: 1000,
            max_hidden_layers: 3,
            sparsity: SparsityTarget::default(),
            patience: 10,
            seed: 0,
            improvement1_enabled: true,
            lasso: LassoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, d: usize) -> Result<(), TrainError> {
        if self.max_width == 0 || self.max_hidden_layers == 0 || self.patience == 0 {
            return Err(TrainError::InvalidConfig(
                "max_width, max_hidden_layers and patience must be at least 1".into(),
            ));
        }
        self.sparsity.check(d).map_err(TrainError::InvalidConfig)
    }
}

/// Best split of the sorted projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitObjective {
    /// `(n₋/m)·Var(r₋) + (n₊/m)·Var(r₊)`
    pub value: f64,
    /// Examples on the -1 side (smaller projections).
    pub left_count: usize,
    pub right_count: usize,
    pub margin: f64,
    /// The bias `b`; `sign(w·x + b)` reproduces the split.
    pub threshold: f64,
}

/// A replacement must lower the training MSE by more than this relative
/// amount; smaller changes are rounding noise from the add-back.
const ACCEPT_EPS: f64 = 1e-12;

/// Relative slack under which two split objectives count as tied.
const TIE_EPS: f64 = 1e-12;

/// Exhaustive bias search along direction `w`.
pub fn search_bias(w: &[f64], x: ArrayView2<f64>, r: &[f64]) -> Result<SplitObjective, TrainError> {
    if w.iter().all(|v| *v == 0.0) {
        return Err(TrainError::ZeroDirection);
    }
    let proj: Vec<f64> = x.rows().into_iter().map(|row| dot_row(w, row)).collect();
    search_bias_projections(&proj, r)
}

/// Bias search on precomputed projections `s_i = w·x_i`.
///
/// Sorts once, then scores every cut between consecutive distinct values with
/// prefix sums of the (centered) residuals and their squares. Among cuts
/// within `TIE_EPS` of the best objective the widest gap wins, then the
/// lowest cut.
pub fn search_bias_projections(proj: &[f64], r: &[f64]) -> Result<SplitObjective, TrainError> {
    let m = proj.len();
    assert_eq!(m, r.len(), "projection and residual lengths differ");
    if m < 2 {
        return Err(TrainError::TooFewExamples);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));

    let mean = r.iter().sum::<f64>() / m as f64;
    let mut total = 0.0;
    let mut total_sq = 0.0;
    for &v in r {
        let c = v - mean;
        total += c;
        total_sq += c * c;
    }

    let mut best: Option<(f64, usize)> = None;
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for k in 1..m {
        let c = r[order[k - 1]] - mean;
        sum += c;
        sum_sq += c * c;
        let (lo, hi) = (proj[order[k - 1]], proj[order[k]]);
        if lo == hi {
            continue;
        }
        let nl = k as f64;
        let nr = (m - k) as f64;
        let sse_left = (sum_sq - sum * sum / nl).max(0.0);
        let sse_right = ((total_sq - sum_sq) - (total - sum).powi(2) / nr).max(0.0);
        let value = (sse_left + sse_right) / m as f64;
        candidates.push((k, value));
        if best.is_none_or(|(v, _)| value < v) {
            best = Some((value, k));
        }
    }
    let (best_value, _) = best.ok_or(TrainError::NoValidSplit)?;
    let slack = TIE_EPS * (total_sq / m as f64).max(f64::MIN_POSITIVE);
    let mut chosen: Option<(usize, f64, f64)> = None;
    for &(k, value) in &candidates {
        if value <= best_value + slack {
            let gap = proj[order[k]] - proj[order[k - 1]];
            if chosen.is_none_or(|(_, g, _)| gap > g) {
                chosen = Some((k, gap, value));
            }
        }
    }
    let (k, margin, value) = chosen.expect("best split is a candidate");
    let (lo, hi) = (proj[order[k - 1]], proj[order[k]]);
    let mut threshold = -(lo + (hi - lo) / 2.0);
    if !(lo + threshold < 0.0 && hi + threshold >= 0.0) {
        // midpoint rounded onto an endpoint
        threshold = -hi;
    }
    Ok(SplitObjective {
        value,
        left_count: k,
        right_count: m - k,
        margin,
        threshold,
    })
}

/// Least-squares output weight and bias for one ±1 feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputFit {
    pub w_out: f64,
    pub b_out: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub plus_count: usize,
    pub minus_count: usize,
}

impl OutputFit {
    /// Mean squared error removed from residuals `r` by this fit.
    pub fn mse_drop(&self) -> f64 {
        let m = (self.plus_count + self.minus_count) as f64;
        (self.plus_count as f64 * self.rho_plus.powi(2)
            + self.minus_count as f64 * self.rho_minus.powi(2))
            / m
    }

    #[inline]
    pub fn contribution(&self, side: f64) -> f64 {
        self.w_out * side + self.b_out
    }
}

pub fn fit_output(r: &[f64], sides: &[f64]) -> Result<OutputFit, TrainError> {
    let (mut sp, mut sm, mut np, mut nm) = (0.0, 0.0, 0usize, 0usize);
    for (&v, &s) in r.iter().zip(sides) {
        if s > 0.0 {
            sp += v;
            np += 1;
        } else {
            sm += v;
            nm += 1;
        }
    }
    if np == 0 || nm == 0 {
        return Err(TrainError::EmptySide);
    }
    let rho_plus = sp / np as f64;
    let rho_minus = sm / nm as f64;
    Ok(OutputFit {
        w_out: (rho_plus - rho_minus) / 2.0,
        b_out: (rho_plus + rho_minus) / 2.0,
        rho_plus,
        rho_minus,
        plus_count: np,
        minus_count: nm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Add,
    Replace,
}

/// One add or replacement step.
///
/// For replacements `train_mse_after` is the candidate's MSE; the layer keeps
/// it only when `accepted`. `valid_mse` is measured after the decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub layer: usize,
    pub t: usize,
    pub event: Event,
    pub neuron: usize,
    pub accepted: bool,
    pub train_mse_before: f64,
    pub train_mse_after: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub plus_count: usize,
    pub minus_count: usize,
    pub w_out: f64,
    pub b_out: f64,
    pub margin: f64,
    pub valid_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    WidthCap,
    Degenerate,
    NoDecrease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub neurons_built: usize,
    pub frozen_width: usize,
    pub best_valid_mse: f64,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub depth: usize,
    pub widths: Vec<usize>,
    pub valid_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub iterations: Vec<IterationRecord>,
    pub layers: Vec<LayerSummary>,
    pub checkpoint: Option<Checkpoint>,
}

impl TrainTrace {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trace serializes");
        s.push('\n');
        s
    }
}

/// A hidden neuron together with its output connection.
#[derive(Debug, Clone)]
struct Unit {
    neuron: Neuron,
    out: OutputFit,
    margin: f64,
    train_sides: Vec<f64>,
    valid_sides: Vec<f64>,
}

/// Why a fit could not produce a usable neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    ZeroDirection,
    NoValidSplit,
}

/// Growing state of one hidden layer over fixed inputs.
pub struct LayerBuilder<'a> {
    layer: usize,
    x_train: ArrayView2<'a, f64>,
    x_valid: ArrayView2<'a, f64>,
    y_train: &'a [f64],
    y_valid: &'a [f64],
    gram: Gram,
    sparsity: SparsityTarget,
    lasso: LassoConfig,
    residuals: Vec<f64>,
    valid_pred: Vec<f64>,
    units: Vec<Unit>,
}

pub enum AddOutcome {
    Added(IterationRecord),
    Degenerate(Degeneracy),
    NoDecrease,
}

/// Same summation order as `Neuron::pre_activation`, so projections and
/// activations agree bit for bit.
#[inline]
fn dot_row(w: &[f64], row: ArrayView1<f64>) -> f64 {
    w.iter().zip(row.iter()).map(|(a, b)| a * b).sum()
}

fn sides_of(neuron: &Neuron, x: ArrayView2<f64>) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|row| sign(dot_row(&neuron.weights, row) + neuron.bias))
        .collect()
}

fn mean_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

impl<'a> LayerBuilder<'a> {
    pub fn new(
        layer: usize,
        x_train: ArrayView2<'a, f64>,
        y_train: &'a [f64],
        x_valid: ArrayView2<'a, f64>,
        y_valid: &'a [f64],
        config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        let gram = Gram::new(x_train)?;
        Ok(LayerBuilder {
            layer,
            x_train,
            x_valid,
            y_train,
            y_valid,
            gram,
            sparsity: SparsityTarget::new(config.sparsity.max_nnz.min(x_train.ncols())),
            lasso: config.lasso,
            residuals: y_train.to_vec(),
            valid_pred: vec![0.0; y_valid.len()],
            units: Vec::new(),
        })
    }

    pub fn width(&self) -> usize {
        self.units.len()
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn train_mse(&self) -> f64 {
        mean_sq(&self.residuals)
    }

    pub fn valid_mse(&self) -> f64 {
        mse(&self.valid_pred, self.y_valid)
    }

    pub fn layer(&self) -> BinaryLayer {
        BinaryLayer::new(self.units.iter().map(|u| u.neuron.clone()).collect())
    }

    pub fn output_weights(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.out.w_out).collect()
    }

    pub fn output_bias(&self) -> f64 {
        self.units.iter().map(|u| u.out.b_out).sum()
    }

    /// Direction, bias and output fit for residuals `r`.
    fn fit_unit(&self, r: &[f64]) -> Result<Result<Unit, Degeneracy>, TrainError> {
        let corr = self.gram.correlations(self.x_train, r.into())?;
        let sol = self.gram.fit_with_sparsity(&corr, self.sparsity, &self.lasso);
        if sol.is_zero() {
            return Ok(Err(Degeneracy::ZeroDirection));
        }
        let split = match search_bias(&sol.weights, self.x_train, r) {
            Ok(s) => s,
            Err(TrainError::NoValidSplit) => return Ok(Err(Degeneracy::NoValidSplit)),
            Err(e) => return Err(e),
        };
        let neuron = Neuron::new(sol.weights, split.threshold);
        let train_sides = sides_of(&neuron, self.x_train);
        let out = fit_output(r, &train_sides)?;
        let valid_sides = sides_of(&neuron, self.x_valid);
        Ok(Ok(Unit {
            neuron,
            out,
            margin: split.margin,
            train_sides,
            valid_sides,
        }))
    }

    fn record(&self, t: usize, event: Event, neuron: usize, accepted: bool, before: f64, after: f64, unit: &Unit) -> IterationRecord {
        IterationRecord {
            layer: self.layer,
            t,
            event,
            neuron,
            accepted,
            train_mse_before: before,
            train_mse_after: after,
            rho_plus: unit.out.rho_plus,
            rho_minus: unit.out.rho_minus,
            plus_count: unit.out.plus_count,
            minus_count: unit.out.minus_count,
            w_out: unit.out.w_out,
            b_out: unit.out.b_out,
            margin: unit.margin,
            valid_mse: self.valid_mse(),
        }
    }

    /// Appends one neuron fit to the current residuals.
    pub fn add_neuron(&mut self) -> Result<AddOutcome, TrainError> {
        let unit = match self.fit_unit(&self.residuals)? {
            Ok(u) => u,
            Err(d) => return Ok(AddOutcome::Degenerate(d)),
        };
        let before = self.train_mse();
        let next: Vec<f64> = self
            .residuals
            .iter()
            .zip(&unit.train_sides)
            .map(|(r, &s)| r - unit.out.contribution(s))
            .collect();
        let after = mean_sq(&next);
        if after >= before {
            return Ok(AddOutcome::NoDecrease);
        }
        self.residuals = next;
        for (p, &s) in self.valid_pred.iter_mut().zip(&unit.valid_sides) {
            *p += unit.out.contribution(s);
        }
        self.units.push(unit);
        self.debug_check_residuals();
        let t = self.width();
        let rec = self.record(t, Event::Add, t, true, before, after, &self.units[t - 1]);
        Ok(AddOutcome::Added(rec))
    }

    /// Refits neuron `p` (0-based) against the residuals it left behind and
    /// keeps the refit only if the training MSE strictly drops.
    pub fn replace_neuron(&mut self, p: usize) -> Result<IterationRecord, TrainError> {
        let before = self.train_mse();
        let saved = self.units[p].clone();
        let added_back: Vec<f64> = self
            .residuals
            .iter()
            .zip(&saved.train_sides)
            .map(|(r, &s)| r + saved.out.contribution(s))
            .collect();
        let t = self.width();
        let candidate = match self.fit_unit(&added_back)? {
            Ok(u) => u,
            Err(_) => {
                return Ok(self.record(t, Event::Replace, p + 1, false, before, before, &saved));
            }
        };
        let next: Vec<f64> = added_back
            .iter()
            .zip(&candidate.train_sides)
            .map(|(r, &s)| r - candidate.out.contribution(s))
            .collect();
        let after = mean_sq(&next);
        if after < before - ACCEPT_EPS * before {
            self.residuals = next;
            for ((v, &old), &new) in self
                .valid_pred
                .iter_mut()
                .zip(&saved.valid_sides)
                .zip(&candidate.valid_sides)
            {
                *v += candidate.out.contribution(new) - saved.out.contribution(old);
            }
            self.units[p] = candidate;
            self.debug_check_residuals();
            Ok(self.record(t, Event::Replace, p + 1, true, before, after, &self.units[p]))
        } else {
            Ok(self.record(t, Event::Replace, p + 1, false, before, after, &candidate))
        }
    }

    /// Picks a neuron uniformly at random and attempts to replace it.
    pub fn replace_random_neuron(&mut self, rng: &mut ChaCha8Rng) -> Result<IterationRecord, TrainError> {
        let p = rng.gen_range(0..self.width());
        self.replace_neuron(p)
    }

    fn debug_check_residuals(&self) {
        if cfg!(debug_assertions) {
            for (i, (&y, &r)) in self.y_train.iter().zip(&self.residuals).enumerate() {
                let pred: f64 = self.units.iter().map(|u| u.out.contribution(u.train_sides[i])).sum();
                let expect = y - pred;
                debug_assert!(
                    (expect - r).abs() <= 1e-8 * (1.0 + y.abs()),
                    "residual drift at {i}: {r} vs {expect}"
                );
            }
        }
    }
}

fn activations(layer: &BinaryLayer, x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), layer.width()));
    for (i, row) in x.rows().into_iter().enumerate() {
        let row = row.to_vec();
        for (j, n) in layer.neurons.iter().enumerate() {
            out[[i, j]] = sign(n.pre_activation(&row));
        }
    }
    out
}

/// Full training run: grows up to `max_hidden_layers` layers and returns the
/// network with the lowest validation MSE seen at any point.
///
/// `train` and `valid` must share feature layout; they are used in whatever
/// units they carry (normally standardized), and the model records that
/// standardization.
pub fn train(train: &Dataset, valid: &Dataset, config: &TrainConfig) -> Result<(BannModel, TrainTrace), TrainError> {
    config.validate(train.n_features())?;
    if train.len() < 2 || valid.is_empty() {
        return Err(TrainError::TooFewExamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = TrainTrace::default();
    let mut frozen: Vec<BinaryLayer> = Vec::new();
    let mut x_train = train.features.clone();
    let mut x_valid = valid.features.clone();
    let mut best: Option<(f64, BannModel)> = None;

    let make_model = |layers: Vec<BinaryLayer>, weights: Vec<f64>, bias: f64| BannModel {
        hidden_layers: layers,
        output_weights: weights,
        output_bias: bias,
        feature_names: train.feature_names.clone(),
        standardization: train.standardization.clone(),
        metadata: ModelMetadata {
            seed: config.seed,
            dataset_name: train.name.clone(),
            train_mse: 0.0,
            valid_mse: 0.0,
        },
    };

    for z in 1..=config.max_hidden_layers {
        let mut builder = LayerBuilder::new(z, x_train.view(), &train.labels, x_valid.view(), &valid.labels, config)?;
        let mut layer_best: Option<(f64, BinaryLayer)> = None;
        let mut since_best = 0;
        let stop = loop {
            if builder.width() >= config.max_width {
                break StopReason::WidthCap;
            }
            match builder.add_neuron()? {
                AddOutcome::Added(rec) => trace.iterations.push(rec),
                AddOutcome::Degenerate(_) => break StopReason::Degenerate,
                AddOutcome::NoDecrease => break StopReason::NoDecrease,
            }
            let t = builder.width();
            if config.improvement1_enabled && t > 1 {
                for _ in 0..t {
                    let rec = builder.replace_random_neuron(&mut rng)?;
                    trace.iterations.push(rec);
                }
            }
            let valid_mse = builder.valid_mse();
            log::debug!(
                "layer {z} width {t}: train mse {:.6}, valid mse {valid_mse:.6}",
                builder.train_mse()
            );
            if layer_best.as_ref().is_none_or(|(v, _)| valid_mse < *v) {
                layer_best = Some((valid_mse, builder.layer()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if best.as_ref().is_none_or(|(v, _)| valid_mse < *v) {
                let mut layers = frozen.clone();
                layers.push(builder.layer());
                best = Some((valid_mse, make_model(layers, builder.output_weights(), builder.output_bias())));
            }
            if since_best >= config.patience {
                break StopReason::Patience;
            }
        };
        let built = builder.width();
        trace.layers.push(LayerSummary {
            layer: z,
            neurons_built: built,
            frozen_width: layer_best.as_ref().map_or(0, |(_, l)| l.width()),
            best_valid_mse: layer_best.as_ref().map_or(f64::NAN, |(v, _)| *v),
            stop,
        });
        log::info!("layer {z}: built {built} neurons, stopped by {stop:?}");
        let Some((_, layer)) = layer_best else { break };
        if z == config.max_hidden_layers {
            break;
        }
        x_train = activations(&layer, x_train.view());
        x_valid = activations(&layer, x_valid.view());
        frozen.push(layer);
    }

    let mut model = match best {
        Some((_, m)) => m,
        None => {
            // nothing could be fit: constant predictor on the mean label
            make_model(vec![BinaryLayer::default()], Vec::new(), train.label_mean())
        }
    };
    model.metadata.train_mse = model.mse(train)?;
    model.metadata.valid_mse = model.mse(valid)?;
    trace.checkpoint = Some(Checkpoint {
        depth: model.depth(),
        widths: model.widths(),
        valid_mse: model.metadata.valid_mse,
    });
    Ok((model, trace))
}
