//! Lower bounds on training MSE from label variance inside activation regions.
//!
//! A network's prediction is constant on each region of its input space that
//! shares one activation pattern, so no setting of the later layers can beat
//! predicting each region's mean label. Deeper layers only merge regions,
//! which gives the chain `b₁ ≤ b₂ ≤ … ≤ b_out ≤ ℓ`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::bann::{mse, ActivationPattern, BannModel};
use crate::dataset::Dataset;
use crate::error::ModelError;

/// Absolute slack allowed on each inequality of the chain.
pub const CHAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionStats {
    pub pattern: Vec<i8>,
    pub count: usize,
    pub label_mean: f64,
    /// Population variance.
    pub label_variance: f64,
}

/// Bound contributed by a set of regions over `m` examples.
pub fn weighted_variance(regions: &[RegionStats], m: usize) -> f64 {
    regions
        .iter()
        .map(|r| r.count as f64 / m as f64 * r.label_variance)
        .sum()
}

fn group_stats(groups: BTreeMap<Vec<i8>, Vec<f64>>) -> Vec<RegionStats> {
    groups
        .into_iter()
        .map(|(pattern, ys)| {
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
            RegionStats {
                pattern,
                count: ys.len(),
                label_mean: mean,
                label_variance: var,
            }
        })
        .collect()
}

/// Groups the examples of `data` by their layer-`k` activation pattern.
pub fn partition_regions(model: &BannModel, data: &Dataset, k: usize) -> Result<Vec<RegionStats>, ModelError> {
    if k == 0 || k > model.depth() {
        return Err(ModelError::LayerOutOfRange { k, depth: model.depth() });
    }
    let rows = model.model_space_rows(data)?;
    let mut groups: BTreeMap<Vec<i8>, Vec<f64>> = BTreeMap::new();
    for (z, &y) in rows.iter().zip(&data.labels) {
        let mut patterns = model.patterns_standardized(z);
        groups.entry(patterns.swap_remove(k - 1).bits).or_default().push(y);
    }
    Ok(group_stats(groups))
}

/// Regions of the output unit: examples sharing an exact prediction value.
fn output_regions(preds: &[f64], labels: &[f64]) -> Vec<RegionStats> {
    let mut groups: BTreeMap<Vec<i8>, Vec<f64>> = BTreeMap::new();
    for (p, &y) in preds.iter().zip(labels) {
        let key = p.to_bits().to_be_bytes().map(|b| b as i8).to_vec();
        groups.entry(key).or_default().push(y);
    }
    group_stats(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainLevel {
    /// 1-based hidden layer index; `None` for the output unit.
    pub layer: Option<usize>,
    pub regions: usize,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundChain {
    /// Hidden layers in order, then the output unit.
    pub levels: Vec<ChainLevel>,
    pub train_mse: f64,
}

impl BoundChain {
    pub fn bounds(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.bound).collect()
    }

    pub fn holds(&self) -> bool {
        let b = self.bounds();
        b.windows(2).all(|w| w[0] <= w[1] + CHAIN_SLACK)
            && b.last().is_none_or(|last| *last <= self.train_mse + CHAIN_SLACK)
    }

    /// Fixed-precision table: level, regions, bound, ℓ.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8} {:>8} {:>16} {:>16}\n", "layer", "regions", "bound", "train_mse");
        for l in &self.levels {
            let name = l.layer.map_or("output".to_string(), |k| k.to_string());
            out.push_str(&format!(
                "{:<8} {:>8} {:>16.6} {:>16.6}\n",
                name, l.regions, l.bound, self.train_mse
            ));
        }
        out.push_str(&format!("chain holds: {}\n", self.holds()));
        out
    }
}

pub fn bound_chain(model: &BannModel, data: &Dataset) -> Result<BoundChain, ModelError> {
    let m = data.len();
    let mut levels = Vec::new();
    for k in 1..=model.depth() {
        let regions = partition_regions(model, data, k)?;
        levels.push(ChainLevel {
            layer: Some(k),
            regions: regions.len(),
            bound: weighted_variance(&regions, m),
        });
    }
    let preds = model.predict_dataset(data)?;
    let out = output_regions(&preds, &data.labels);
    levels.push(ChainLevel {
        layer: None,
        regions: out.len(),
        bound: weighted_variance(&out, m),
    });
    Ok(BoundChain {
        levels,
        train_mse: mse(&preds, &data.labels),
    })
}

/// Pools layer-`k` regions by their layer-`k+1` image (law of total
/// variance) and returns the resulting layer-`k+1` bound.
pub fn pooled_next_bound(model: &BannModel, fine: &[RegionStats], k: usize, m: usize) -> f64 {
    let next = &model.hidden_layers[k];
    let mut pools: BTreeMap<ActivationPattern, Vec<&RegionStats>> = BTreeMap::new();
    for r in fine {
        let input: Vec<f64> = r.pattern.iter().map(|&b| b as f64).collect();
        pools.entry(next.forward_unchecked(&input)).or_default().push(r);
    }
    pools
        .values()
        .map(|group| {
            let n: f64 = group.iter().map(|r| r.count as f64).sum();
            let mean = group.iter().map(|r| r.count as f64 * r.label_mean).sum::<f64>() / n;
            let within: f64 = group
                .iter()
                .map(|r| r.count as f64 * (r.label_variance + (r.label_mean - mean).powi(2)))
                .sum();
            within / m as f64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bann::tests::{random_model, single_layer};
    use crate::bann::Neuron;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(x: Array2<f64>, y: Vec<f64>) -> Dataset {
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Dataset::new("t", x, y, names).unwrap()
    }

    #[test]
    fn one_neuron_two_regions() {
        let m = single_layer(vec![Neuron::new(vec![1.0], 0.0)], vec![1.0], 0.0, &["x0"]);
        let d = data(array![[-2.0], [-1.0], [1.0], [2.0]], vec![1.0, 2.0, 3.0, 4.0]);
        let regions = partition_regions(&m, &d, 1).unwrap();
        assert_eq!(regions.iter().map(|r| r.count).collect::<Vec<_>>(), vec![2, 2]);
        assert_eq!(regions.iter().map(|r| r.count).sum::<usize>(), 4);
    }

    #[test]
    fn two_neurons_at_most_four_regions() {
        let m = single_layer(
            vec![Neuron::new(vec![1.0, 0.3], 0.1), Neuron::new(vec![-0.4, 1.0], -0.2)],
            vec![1.0, 1.0],
            0.0,
            &["x0", "x1"],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((100, 2), |_| rng.gen_range(-3.0..3.0));
        let d = data(x, (0..100).map(|i| i as f64).collect());
        let regions = partition_regions(&m, &d, 1).unwrap();
        assert!(regions.len() <= 4);
    }

    #[test]
    fn identical_points_one_region() {
        let m = single_layer(vec![Neuron::new(vec![1.0], 0.0)], vec![1.0], 0.0, &["x0"]);
        let d = data(array![[1.0], [1.0], [1.0]], vec![1.0, 2.0, 6.0]);
        let regions = partition_regions(&m, &d, 1).unwrap();
        assert_eq!(regions.len(), 1);
        assert!((regions[0].label_variance - 14.0 / 3.0).abs() < 1e-12);
        let chain = bound_chain(&m, &d).unwrap();
        assert!((chain.levels[0].bound - 14.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn region_mean_predictor_meets_the_bound() {
        // one neuron; output chosen so each side predicts its mean label
        let d = data(array![[-2.0], [-1.0], [1.0], [2.0]], vec![1.0, 3.0, 10.0, 14.0]);
        let (lo, hi) = (2.0, 12.0);
        let m = single_layer(vec![Neuron::new(vec![1.0], 0.0)], vec![(hi - lo) / 2.0], (hi + lo) / 2.0, &["x0"]);
        let chain = bound_chain(&m, &d).unwrap();
        assert!((chain.train_mse - chain.levels[0].bound).abs() < 1e-12);
        assert!((chain.train_mse - chain.levels[1].bound).abs() < 1e-12);
        assert!(chain.holds());
    }

    #[test]
    fn random_models_satisfy_chain_and_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let model = random_model(&mut rng, 3, &[6, 4, 2]);
            let x = Array2::from_shape_fn((150, 3), |_| rng.gen_range(-8.0..8.0));
            let y: Vec<f64> = (0..150).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let d = data(x, y);
            let chain = bound_chain(&model, &d).unwrap();
            assert!(chain.holds(), "{}", chain.to_table());
            for k in 1..model.depth() {
                let fine = partition_regions(&model, &d, k).unwrap();
                let pooled = pooled_next_bound(&model, &fine, k, d.len());
                assert!((pooled - chain.levels[k].bound).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bound_ignores_neuron_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_model(&mut rng, 2, &[5]);
        let x = Array2::from_shape_fn((80, 2), |_| rng.gen_range(-8.0..8.0));
        let d = data(x, (0..80).map(|_| rng.gen_range(0.0..1.0)).collect());
        let mut shuffled = model.clone();
        shuffled.hidden_layers[0].neurons.reverse();
        shuffled.output_weights.reverse();
        let a = bound_chain(&model, &d).unwrap();
        let b = bound_chain(&shuffled, &d).unwrap();
        assert!((a.levels[0].bound - b.levels[0].bound).abs() < 1e-12);
    }
}
