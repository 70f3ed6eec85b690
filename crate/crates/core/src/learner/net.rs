//! Feedforward network with a diagonal Gaussian head, weighted negative
//! log-likelihood and its analytic gradient.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const ACTION_DIM: usize = 7;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Width of the flattened, normalized history.
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        Self { input_dim, hidden, output_dim: ACTION_DIM }
    }

    /// `(fan_in, fan_out)` of every affine layer, head last.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Offset of the log-std block in the flat parameter vector.
    pub fn log_std_offset(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn param_count(&self) -> usize {
        self.log_std_offset() + self.output_dim
    }
}

/// Diagonal Gaussian over normalized actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: [f64; ACTION_DIM],
    pub std: [f64; ACTION_DIM],
}

/// One training example in network space.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Normalized, flattened history.
    pub input: Vec<f64>,
    /// Normalized action target in `[-1, 1]`.
    pub target: [f64; ACTION_DIM],
    pub weight: f64,
}

fn clamp_log_std(v: f64) -> f64 {
    v.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// Whether the clamp passes gradients through at `v`.
pub fn log_std_is_free(v: f64) -> bool {
    v > LOG_STD_MIN && v < LOG_STD_MAX
}

/// Activations of every layer; the last entry is the Gaussian mean.
fn activations(arch: &Architecture, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let layers = arch.layers();
    let n = layers.len();
    let mut acts = Vec::with_capacity(n + 1);
    acts.push(x.to_vec());
    let mut off = 0;
    for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let w = &params[off..off + fan_in * fan_out];
        let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        let input = &acts[l];
        let out: Vec<f64> = (0..fan_out)
            .map(|o| {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let z = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                if l + 1 < n {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect();
        acts.push(out);
        off += fan_in * fan_out + fan_out;
    }
    acts
}

pub fn forward(arch: &Architecture, params: &[f64], x: &[f64]) -> Result<Gaussian> {
    if x.len() != arch.input_dim {
        return Err(CoreError::Parameter(format!("input has {} values, expected {}", x.len(), arch.input_dim)));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::Numeric(format!("non-finite input at {i}")));
    }
    let acts = activations(arch, params, x);
    let mu = acts.last().expect("network has a head");
    let ls = &params[arch.log_std_offset()..];
    let mut g = Gaussian { mean: [0.0; ACTION_DIM], std: [0.0; ACTION_DIM] };
    for d in 0..ACTION_DIM {
        g.mean[d] = mu[d];
        g.std[d] = clamp_log_std(ls[d]).exp();
    }
    Ok(g)
}

fn total_weight(batch: &[Example]) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::Parameter("empty batch".into()));
    }
    if batch.iter().any(|e| !(e.weight >= 0.0) || !e.weight.is_finite()) {
        return Err(CoreError::Parameter("weights must be finite and non-negative".into()));
    }
    let w: f64 = batch.iter().map(|e| e.weight).sum();
    if w <= 0.0 {
        return Err(CoreError::Parameter("all weights are zero".into()));
    }
    Ok(w)
}

/// Weighted mean negative log-likelihood.
pub fn loss(arch: &Architecture, params: &[f64], batch: &[Example]) -> Result<f64> {
    Ok(loss_and_grad_impl(arch, params, batch, false)?.0)
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad(arch: &Architecture, params: &[f64], batch: &[Example]) -> Result<(f64, Vec<f64>)> {
    loss_and_grad_impl(arch, params, batch, true)
}

fn loss_and_grad_impl(arch: &Architecture, params: &[f64], batch: &[Example], want_grad: bool) -> Result<(f64, Vec<f64>)> {
    let total = total_weight(batch)?;
    let layers = arch.layers();
    let ls_off = arch.log_std_offset();
    let log_std: Vec<f64> = params[ls_off..].iter().map(|&v| clamp_log_std(v)).collect();
    let mut grad = if want_grad { vec![0.0; params.len()] } else { Vec::new() };
    let mut acc = 0.0;
    for e in batch.iter().filter(|e| e.weight > 0.0) {
        if e.input.len() != arch.input_dim {
            return Err(CoreError::Parameter(format!("input has {} values, expected {}", e.input.len(), arch.input_dim)));
        }
        let acts = activations(arch, params, &e.input);
        let mu = acts.last().expect("network has a head");
        let c = e.weight / total;
        let mut nll = 0.0;
        let mut delta = vec![0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            let s = log_std[d].exp();
            let r = (e.target[d] - mu[d]) / s;
            nll += 0.5 * r * r + log_std[d] + HALF_LN_2PI;
            if want_grad {
                delta[d] = -c * r / s;
                if log_std_is_free(params[ls_off + d]) {
                    grad[ls_off + d] += c * (1.0 - r * r);
                }
            }
        }
        acc += c * nll;
        if !want_grad {
            continue;
        }
        let mut off = ls_off;
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            off -= fan_in * fan_out + fan_out;
            let input = &acts[l];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for o in 0..fan_out {
                gb[o] += delta[o];
                let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += delta[o] * a;
                }
            }
            if l > 0 {
                let w = &params[off..off + fan_in * fan_out];
                let mut back = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    for (b, wv) in back.iter_mut().zip(row) {
                        *b += wv * delta[o];
                    }
                }
                for (b, a) in back.iter_mut().zip(input) {
                    *b *= 1.0 - a * a;
                }
                delta = back;
            }
        }
    }
    Ok((acc, grad))
}

/// Result of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Log-std coordinates sitting on a clamp boundary.
    pub skipped: Vec<usize>,
}

/// Coordinates compared per check.
pub const GRAD_CHECK_COORDS: usize = 200;
/// Denominator floor of the relative error, so coordinates with vanishing
/// gradients are judged on absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Compares analytic gradients with central differences on a seeded random
/// subset of coordinates.
pub fn grad_check(arch: &Architecture, params: &[f64], batch: &[Example], epsilon: f64, seed: u64) -> Result<GradCheck> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(CoreError::Parameter(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let (_, analytic) = loss_and_grad(arch, params, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.len();
    let coords = sample(&mut rng, n, GRAD_CHECK_COORDS.min(n)).into_vec();
    let ls_off = arch.log_std_offset();
    let mut p = params.to_vec();
    let mut report = GradCheck { max_relative_error: 0.0, checked: 0, skipped: Vec::new() };
    for c in coords {
        if c >= ls_off && !(params[c] - epsilon > LOG_STD_MIN && params[c] + epsilon < LOG_STD_MAX) {
            report.skipped.push(c);
            continue;
        }
        p[c] = params[c] + epsilon;
        let up = loss(arch, &p, batch)?;
        p[c] = params[c] - epsilon;
        let down = loss(arch, &p, batch)?;
        p[c] = params[c];
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[c];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
