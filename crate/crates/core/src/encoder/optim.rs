use serde::{Deserialize, Serialize};

use super::{EncoderParams, GradientBundle, Side};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Decoupled weight decay, applied as `p -= lr * weight_decay * p`.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one pair per projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }
}

/// One optimizer step. Matrices without a gradient row still decay and, for
/// AdamW, still move along their accumulated momentum.
pub fn apply_update(
    params: &mut EncoderParams,
    grads: &GradientBundle,
    state: &mut OptimizerState,
    lr: f64,
) {
    state.step += 1;
    let dim = params.config.dim;
    let wd = state.config.weight_decay;
    let sides = [Side::Query, Side::Document];
    let n_mats = if params.document.is_some() { 2 } else { 1 };

    if let OptimizerKind::AdamW { .. } = state.config.kind {
        if state.moments.len() != n_mats {
            state.moments = (0..n_mats)
                .map(|_| {
                    let n = params.query.len();
                    (vec![0.0; n], vec![0.0; n])
                })
                .collect();
        }
    }

    for (m_idx, matrix) in params.matrices_mut().enumerate() {
        let rows = grads.rows(sides[m_idx]);
        if wd != 0.0 {
            let keep = 1.0 - lr * wd;
            matrix.iter_mut().for_each(|p| *p *= keep);
        }
        match state.config.kind {
            OptimizerKind::Sgd => {
                for (&f, row) in rows {
                    for (p, g) in matrix[f * dim..(f + 1) * dim].iter_mut().zip(row) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::AdamW { beta1, beta2, eps } => {
                let (m, v) = &mut state.moments[m_idx];
                let t = state.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                // decay every moment, then add the sparse gradient rows
                m.iter_mut().for_each(|x| *x *= beta1);
                v.iter_mut().for_each(|x| *x *= beta2);
                for (&f, row) in rows {
                    let base = f * dim;
                    for (k, g) in row.iter().enumerate() {
                        m[base + k] += (1.0 - beta1) * g;
                        v[base + k] += (1.0 - beta2) * g * g;
                    }
                }
                for ((p, mi), vi) in matrix.iter_mut().zip(m.iter()).zip(v.iter()) {
                    if *mi != 0.0 {
                        *p -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
