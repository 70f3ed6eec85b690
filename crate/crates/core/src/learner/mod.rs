//! History-conditioned Gaussian policy trained by weighted behavior cloning.

mod eval;
pub mod features;
pub mod net;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use eval::{evaluate, evaluate_controller, EvalReport, PolicyController, TrialRecord};
pub use features::FeatureSpec;
pub use net::{grad_check, Architecture, Example, Gaussian, GradCheck, ACTION_DIM, LOG_STD_MAX, LOG_STD_MIN};

use crate::dataset::{HistoryEntry, WeightedDataset};
use crate::error::{CoreError, Result};
use crate::types::{Action, GRIP_CLOSED, GRIP_OPEN, MOTION_LIMIT};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs between stored checkpoints.
    pub eval_interval: usize,
    /// Feed the environment's stage index to the policy.
    pub use_stage_hint: bool,
    /// Anneal the learning rate along a cosine from `learning_rate` down to
    /// a tenth of it over the run; constant when false.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            batch_size: 16,
            steps_per_epoch: 500,
            epochs: 10,
            seed: 0,
            eval_interval: 5,
            use_stage_hint: false,
            cosine_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(CoreError::Parameter("hidden sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CoreError::Parameter("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.epochs == 0 || self.eval_interval == 0 {
            return Err(CoreError::Parameter("batch size, steps, epochs and eval interval must be positive".into()));
        }
        Ok(())
    }
}

/// Trained policy: network, normalization and everything needed to rebuild
/// features. Serialized as a versioned JSON checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub version: u32,
    pub architecture: Architecture,
    pub history_len: usize,
    pub features: FeatureSpec,
    /// Per-feature mean and scale, shared by every history slot.
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub params: Vec<f64>,
}

/// Normalized action vector of an integer action.
pub fn normalize_action(a: &Action) -> [f64; ACTION_DIM] {
    a.to_array().map(|v| f64::from(v) / f64::from(MOTION_LIMIT))
}

/// Integer action for a normalized mean: motions are clipped and rounded,
/// the gripper closes on a non-negative command.
pub fn denormalize_action(mean: &[f64; ACTION_DIM]) -> Action {
    let mut motion = [0; 6];
    for (m, v) in motion.iter_mut().zip(mean) {
        *m = (v.clamp(-1.0, 1.0) * f64::from(MOTION_LIMIT)).round() as i32;
    }
    Action { motion, grip: if mean[6] >= 0.0 { GRIP_CLOSED } else { GRIP_OPEN } }
}

impl PolicyParams {
    /// Randomly initialized policy with Glorot-uniform weights, zero biases
    /// and unit standard deviation.
    pub fn init(
        features: FeatureSpec,
        history_len: usize,
        hidden: Vec<usize>,
        normalization: (Vec<f64>, Vec<f64>),
        seed: u64,
        config_hash: String,
    ) -> Self {
        let architecture = Architecture::new(history_len * features.width(), hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(architecture.param_count());
        for (fan_in, fan_out) in architecture.layers() {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        params.extend([0.0; ACTION_DIM]);
        let (feature_mean, feature_scale) = normalization;
        Self {
            version: CHECKPOINT_VERSION,
            architecture,
            history_len,
            features,
            feature_mean,
            feature_scale,
            seed,
            config_hash,
            params,
        }
    }

    /// Policy with identity normalization, for tests and untrained baselines.
    pub fn untrained(features: FeatureSpec, history_len: usize, hidden: Vec<usize>, seed: u64) -> Self {
        let w = features.width();
        Self::init(features, history_len, hidden, (vec![0.0; w], vec![1.0; w]), seed, String::new())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    fn normalize_into(&self, row: &[f64], out: &mut Vec<f64>) {
        out.extend(row.iter().zip(&self.feature_mean).zip(&self.feature_scale).map(|((x, m), s)| (x - m) / s));
    }

    /// Network input for raw feature rows, oldest first.
    pub fn input_from_rows<'a>(&self, rows: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.architecture.input_dim);
        for row in rows {
            self.normalize_into(row, &mut x);
        }
        x
    }

    pub fn forward_input(&self, input: &[f64]) -> Result<Gaussian> {
        net::forward(&self.architecture, &self.params, input)
    }

    /// Action distribution for an explicit history of length `history_len`.
    pub fn forward(&self, history: &[HistoryEntry]) -> Result<Gaussian> {
        if history.len() != self.history_len {
            return Err(CoreError::Parameter(format!(
                "history has {} entries, expected {}",
                history.len(),
                self.history_len
            )));
        }
        let rows: Vec<Vec<f64>> = history.iter().map(|h| self.features.row(&h.obs, &h.prev_action)).collect();
        self.forward_input(&self.input_from_rows(rows.iter().map(Vec::as_slice)))
    }

    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        net::loss(&self.architecture, &self.params, batch)
    }

    pub fn loss_and_grad(&self, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
        net::loss_and_grad(&self.architecture, &self.params, batch)
    }

    pub fn grad_check(&self, batch: &[Example], epsilon: f64) -> Result<GradCheck> {
        net::grad_check(&self.architecture, &self.params, batch, epsilon, self.seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if p.version != CHECKPOINT_VERSION {
            return Err(CoreError::Format(format!("unsupported checkpoint version {}", p.version)));
        }
        if p.params.len() != p.architecture.param_count()
            || p.architecture.input_dim != p.history_len * p.features.width()
            || p.feature_mean.len() != p.features.width()
            || p.feature_scale.len() != p.features.width()
        {
            return Err(CoreError::Format("checkpoint shapes are inconsistent".into()));
        }
        if !p.is_finite() {
            return Err(CoreError::Format("checkpoint has non-finite parameters".into()));
        }
        Ok(p)
    }
}

/// Feature rows of every episode, computed once per training run.
pub struct TrainingSet<'a> {
    dataset: &'a WeightedDataset,
    rows: Vec<Vec<Vec<f64>>>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(dataset: &'a WeightedDataset, features: &FeatureSpec) -> Self {
        let rows = dataset
            .episodes
            .iter()
            .map(|ep| ep.observations.iter().zip(&ep.prev_actions).map(|(o, a)| features.row(o, a)).collect())
            .collect();
        Self { dataset, rows }
    }

    /// Per-feature mean and scale over the current-step rows of all
    /// samples; near-constant features keep unit scale.
    pub fn normalization(&self) -> (Vec<f64>, Vec<f64>) {
        let width = self.rows.iter().flatten().next().map_or(0, Vec::len);
        let n = self.dataset.samples.len().max(1) as f64;
        let mut mean = vec![0.0; width];
        for s in &self.dataset.samples {
            for (m, x) in mean.iter_mut().zip(&self.rows[s.episode][s.t]) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; width];
        for s in &self.dataset.samples {
            for ((v, x), m) in var.iter_mut().zip(&self.rows[s.episode][s.t]).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v.sqrt() > 1e-6 { v.sqrt() } else { 1.0 }).collect();
        (mean, scale)
    }

    pub fn example(&self, policy: &PolicyParams, i: usize, weight: f64) -> Example {
        let s = &self.dataset.samples[i];
        let rows = &self.rows[s.episode];
        let input = policy.input_from_rows(self.dataset.history_indices(s.t).map(|j| rows[j].as_slice()));
        Example { input, target: normalize_action(&s.target), weight }
    }

    /// Every sample with its dataset weight.
    pub fn weighted_examples(&self, policy: &PolicyParams) -> Vec<Example> {
        (0..self.dataset.len()).map(|i| self.example(policy, i, self.dataset.samples[i].weight)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: PolicyParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    /// Snapshots every `eval_interval` epochs; the last one is the final
    /// parameters.
    pub checkpoints: Vec<Checkpoint>,
    /// Median minibatch loss of every epoch.
    pub epoch_median_loss: Vec<f64>,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn config_hash(cfg: &TrainConfig, features: &FeatureSpec, history_len: usize) -> String {
    let text = serde_json::to_string(&(cfg, features, history_len)).expect("config serializes");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// Draws `n` sample indices with probability proportional to weight.
fn sample_batch(cumulative: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let total = *cumulative.last().expect("non-empty");
    (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
        })
        .collect()
}

/// Weighted behavior cloning with Adam. Minibatches are drawn in proportion
/// to sample weights and scored with unit weights, so each sample's
/// expected contribution to the gradient is proportional to its weight.
pub fn train(dataset: &WeightedDataset, features: &FeatureSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(CoreError::Parameter("empty dataset".into()));
    }
    if dataset.samples.iter().any(|s| !(s.weight >= 0.0 && s.weight.is_finite())) {
        return Err(CoreError::Parameter("weights must be finite and non-negative".into()));
    }
    let set = TrainingSet::new(dataset, features);
    let hash = config_hash(cfg, features, dataset.history_len);
    let mut policy =
        PolicyParams::init(features.clone(), dataset.history_len, cfg.hidden.clone(), set.normalization(), cfg.seed, hash);
    let mut cumulative = Vec::with_capacity(dataset.len());
    let mut acc = 0.0;
    for s in &dataset.samples {
        acc += s.weight;
        cumulative.push(acc);
    }
    if acc <= 0.0 {
        return Err(CoreError::Parameter("no sample has positive weight".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb47c_4e5a_11ad_0001);
    let n = policy.params.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut last_finite = policy.clone();
    let mut checkpoints = Vec::new();
    let mut epoch_median_loss = Vec::with_capacity(cfg.epochs);
    let mut update = 0usize;
    let total_updates = (cfg.epochs * cfg.steps_per_epoch) as f64;
    for epoch in 1..=cfg.epochs {
        let mut losses = Vec::with_capacity(cfg.steps_per_epoch);
        for _ in 0..cfg.steps_per_epoch {
            let batch: Vec<Example> = sample_batch(&cumulative, cfg.batch_size, &mut rng)
                .into_iter()
                .map(|i| set.example(&policy, i, 1.0))
                .collect();
            let (loss, grad) = policy.loss_and_grad(&batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(CoreError::Diverged {
                    update,
                    reason: format!("non-finite loss {loss}"),
                    last_finite: Box::new(last_finite),
                });
            }
            update += 1;
            let c1 = 1.0 - b1.powi(update as i32);
            let c2 = 1.0 - b2.powi(update as i32);
            let lr = if cfg.cosine_decay {
                let progress = (update - 1) as f64 / total_updates;
                cfg.learning_rate * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * progress).cos()))
            } else {
                cfg.learning_rate
            };
            for i in 0..n {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                policy.params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            if !policy.is_finite() {
                return Err(CoreError::Diverged {
                    update,
                    reason: "non-finite parameters".into(),
                    last_finite: Box::new(last_finite),
                });
            }
            last_finite.params.copy_from_slice(&policy.params);
            losses.push(loss);
        }
        epoch_median_loss.push(median(&mut losses));
        if epoch % cfg.eval_interval == 0 || epoch == cfg.epochs {
            checkpoints.push(Checkpoint { epoch, params: policy.clone() });
        }
    }
    Ok(TrainOutcome { params: policy, checkpoints, epoch_median_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{aggregate, assign_weights, WeightParams, WeightScheme};
    use crate::env::{rollout, Env, RolloutConfig, ScriptedExpert};

    fn demo_dataset(n: usize) -> (Env, WeightedDataset) {
        let env = Env::builtin("pickplace").unwrap();
        let demos: Vec<_> = (0..n as u64)
            .map(|s| rollout(&env, s, &mut ScriptedExpert::default(), None, &RolloutConfig::default()).unwrap())
            .collect();
        let ds = aggregate(&demos, &[], 10).unwrap();
        (env, ds)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { hidden: vec![16], steps_per_epoch: 50, epochs: 2, eval_interval: 1, ..TrainConfig::default() }
    }

    #[test]
    fn action_mapping_round_trips_on_the_grid() {
        for v in -100..=100 {
            for grip in [GRIP_OPEN, GRIP_CLOSED] {
                let a = Action::new(v, -v, v / 2, 0, 3, -7, grip);
                assert_eq!(denormalize_action(&normalize_action(&a)), a);
            }
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (env, ds) = demo_dataset(2);
        let spec = FeatureSpec::for_env(&env, false);
        let a = train(&ds, &spec, &small_cfg()).unwrap();
        let b = train(&ds, &spec, &small_cfg()).unwrap();
        assert_eq!(a.params.params, b.params.params);
        assert_eq!(a.checkpoints.len(), 2);
        let c = train(&ds, &spec, &TrainConfig { seed: 1, ..small_cfg() }).unwrap();
        assert_ne!(a.params.params, c.params.params);
    }

    #[test]
    fn checkpoint_round_trips() {
        let (env, ds) = demo_dataset(1);
        let p = train(&ds, &FeatureSpec::for_env(&env, false), &small_cfg()).unwrap().params;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save(&path).unwrap();
        assert_eq!(PolicyParams::load(&path).unwrap(), p);
    }

    #[test]
    fn zero_weight_samples_are_never_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cumulative = [0.0, 1.0, 1.0, 3.0, 3.0];
        for i in sample_batch(&cumulative, 1000, &mut rng) {
            assert!(i == 1 || i == 3, "{i}");
        }
    }

    #[test]
    fn hg_dagger_zero_weights_match_removal() {
        let (env, ds) = demo_dataset(1);
        let spec = FeatureSpec::for_env(&env, false);
        let ds = assign_weights(ds, WeightScheme::Bc, &WeightParams::default()).unwrap();
        let set = TrainingSet::new(&ds, &spec);
        let p = PolicyParams::untrained(spec.clone(), 10, vec![8], 3);
        let mut full = set.weighted_examples(&p);
        for (i, e) in full.iter_mut().enumerate() {
            if i % 3 == 0 {
                e.weight = 0.0;
            }
        }
        let kept: Vec<Example> = full.iter().filter(|e| e.weight > 0.0).cloned().collect();
        let (la, ga) = p.loss_and_grad(&full).unwrap();
        let (lb, gb) = p.loss_and_grad(&kept).unwrap();
        assert!((la - lb).abs() <= 1e-10);
        assert!(ga.iter().zip(&gb).all(|(a, b)| (a - b).abs() <= 1e-10));
    }
}
