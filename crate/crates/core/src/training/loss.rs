//! List-wise contrastive and pairwise logistic ranking losses, each with its
//! gradient with respect to the predicted scores.

use serde::{Deserialize, Serialize};

use super::CandidateSet;
use crate::data::SupportLevel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub pairwise_weight: f64,
    /// Compare the positive against the other candidates in the pairwise
    /// term, so that full > partial pairs exist.
    pub include_positive_in_pairs: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.05,
            pairwise_weight: 1.0,
            include_positive_in_pairs: true,
        }
    }
}

/// Loss terms for one candidate set plus `d total / d score`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub list: f64,
    pub pair: f64,
    pub total: f64,
    pub grad: Vec<f64>,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !self.pairwise_weight.is_finite() {
            return Err(Error::InvalidArgument("pairwise_weight must be finite".into()));
        }
        Ok(())
    }

    pub fn evaluate(
        &self,
        scores: &[f64],
        labels: &[SupportLevel],
        positive: usize,
    ) -> Result<LossValue> {
        self.validate()?;
        if scores.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        let (list, mut grad) = list_loss_with_grad(scores, positive, self.temperature)?;
        let mut pair = 0.0;
        if self.pairwise_weight != 0.0 {
            let skip = (!self.include_positive_in_pairs).then_some(positive);
            let (p, pair_grad) = pair_loss_with_grad(labels, scores, skip);
            pair = p;
            for (g, pg) in grad.iter_mut().zip(pair_grad) {
                *g += self.pairwise_weight * pg;
            }
        }
        Ok(LossValue {
            list,
            pair,
            total: list + self.pairwise_weight * pair,
            grad,
        })
    }
}

/// `-log softmax(scores / tau)[positive]`.
pub fn list_loss(scores: &[f64], positive: usize, tau: f64) -> Result<f64> {
    list_loss_with_grad(scores, positive, tau).map(|(l, _)| l)
}

pub fn list_loss_with_grad(scores: &[f64], positive: usize, tau: f64) -> Result<(f64, Vec<f64>)> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if positive >= scores.len() {
        return Err(Error::InvalidArgument(format!(
            "positive index {positive} out of range for {} candidates",
            scores.len()
        )));
    }
    if scores.len() < 2 {
        return Err(Error::InvalidArgument(
            "list-wise loss needs at least one negative".into(),
        ));
    }
    let logits: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let (arg, &max) = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty");
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, l)| (l - max).exp())
        .sum();
    // log-sum-exp minus the positive logit, kept accurate near zero
    let loss = (max - logits[positive]) + rest.ln_1p();
    let lse = max + rest.ln_1p();
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let p = (l - lse).exp();
            (p - if i == positive { 1.0 } else { 0.0 }) / tau
        })
        .collect();
    Ok((loss, grad))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum of `log(1 + exp(s_lo - s_hi))` over ordered pairs whose labels
/// strictly differ. `skip` removes one candidate from the comparison set.
pub fn pair_loss(labels: &[SupportLevel], scores: &[f64], skip: Option<usize>) -> f64 {
    pair_loss_with_grad(labels, scores, skip).0
}

pub fn pair_loss_with_grad(
    labels: &[SupportLevel],
    scores: &[f64],
    skip: Option<usize>,
) -> (f64, Vec<f64>) {
    let n = labels.len().min(scores.len());
    let mut grad = vec![0.0; scores.len()];
    let mut loss = 0.0;
    for hi in 0..n {
        if Some(hi) == skip {
            continue;
        }
        for lo in 0..n {
            if Some(lo) == skip || labels[hi] <= labels[lo] {
                continue;
            }
            let margin = scores[lo] - scores[hi];
            loss += softplus(margin);
            let s = sigmoid(margin);
            grad[lo] += s;
            grad[hi] -= s;
        }
    }
    (loss, grad)
}

impl CandidateSet {
    /// Pairwise term over this set's stored predicted scores.
    pub fn pair_loss(&self, cfg: &LossConfig) -> f64 {
        let labels: Vec<_> = self.candidates.iter().map(|c| c.label).collect();
        let scores: Vec<_> = self.candidates.iter().map(|c| c.score).collect();
        let skip = (!cfg.include_positive_in_pairs).then_some(self.positive);
        pair_loss(&labels, &scores, skip)
    }

    pub fn list_loss(&self, cfg: &LossConfig) -> Result<f64> {
        let scores: Vec<_> = self.candidates.iter().map(|c| c.score).collect();
        list_loss(&scores, self.positive, cfg.temperature)
    }
}

/// `list_loss + pairwise_weight * pair_loss` over the stored scores.
pub fn total_loss(set: &CandidateSet, cfg: &LossConfig) -> Result<f64> {
    let scores: Vec<_> = set.candidates.iter().map(|c| c.score).collect();
    let labels: Vec<_> = set.candidates.iter().map(|c| c.label).collect();
    cfg.evaluate(&scores, &labels, set.positive).map(|v| v.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use SupportLevel::*;

    #[test]
    fn list_loss_closed_forms() {
        assert_abs_diff_eq!(list_loss(&[0.3; 4], 0, 1.0).unwrap(), 4f64.ln(), epsilon = 1e-12);
        // ln(1 + 2 e^-2), evaluated directly from the softmax definition
        let direct = -((2.0f64).exp() / ((2.0f64).exp() + 2.0)).ln();
        let l = list_loss(&[1.0, 0.0, 0.0], 0, 0.5).unwrap();
        assert_abs_diff_eq!(l, direct, epsilon = 1e-12);
        assert_abs_diff_eq!(l, 0.23954, epsilon = 1e-5);
        let dominant = list_loss(&[50.0, 0.0], 0, 1.0).unwrap();
        assert!(dominant > 0.0 && dominant < 1e-20);
    }

    #[test]
    fn list_loss_needs_a_negative() {
        assert!(list_loss(&[1.0], 0, 1.0).is_err());
        assert!(list_loss(&[1.0, 0.0], 2, 1.0).is_err());
        assert!(list_loss(&[1.0, 0.0], 0, 0.0).is_err());
    }

    #[test]
    fn pair_loss_closed_forms() {
        let three = pair_loss(&[Full, Partial, No], &[0.2; 3], None);
        assert_abs_diff_eq!(three, 3.0 * 2f64.ln(), epsilon = 1e-12);
        let one = pair_loss(&[Full, No], &[3f64.ln(), 0.0], None);
        assert_abs_diff_eq!(one, (4.0f64 / 3.0).ln(), epsilon = 1e-12);
        assert_eq!(pair_loss(&[Partial, Partial, Partial], &[0.1, 0.5, 0.9], None), 0.0);
    }

    #[test]
    fn skipping_positive_drops_its_pairs() {
        let labels = [Full, Partial, No];
        let with = pair_loss(&labels, &[0.0; 3], None);
        let without = pair_loss(&labels, &[0.0; 3], Some(0));
        assert_abs_diff_eq!(with - without, 2.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn total_combines_terms() {
        let cfg = LossConfig {
            temperature: 1.0,
            pairwise_weight: 1.0,
            include_positive_in_pairs: true,
        };
        let v = cfg.evaluate(&[0.0; 3], &[Full, Partial, No], 0).unwrap();
        assert_abs_diff_eq!(v.total, 3f64.ln() + 3.0 * 2f64.ln(), epsilon = 1e-12);
        let no_pair = LossConfig {
            pairwise_weight: 0.0,
            ..cfg
        };
        let v0 = no_pair.evaluate(&[0.4, 0.1, -0.2], &[Full, Partial, No], 0).unwrap();
        assert_eq!(v0.total, list_loss(&[0.4, 0.1, -0.2], 0, 1.0).unwrap());
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        let cfg = LossConfig {
            temperature: 0.3,
            ..Default::default()
        };
        let labels = [Full, Partial, No, Partial];
        let scores = [0.2, 0.5, -0.1, 0.05];
        let v = cfg.evaluate(&scores, &labels, 0).unwrap();
        let h = 1e-6;
        for i in 0..scores.len() {
            let mut up = scores;
            let mut down = scores;
            up[i] += h;
            down[i] -= h;
            let fd = (cfg.evaluate(&up, &labels, 0).unwrap().total
                - cfg.evaluate(&down, &labels, 0).unwrap().total)
                / (2.0 * h);
            assert_abs_diff_eq!(v.grad[i], fd, epsilon = 1e-7);
        }
    }
}
