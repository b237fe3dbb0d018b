//! Margin-aware preference optimization over the tabular policy.
//!
//! For a pair `(y_w, y_l)` with scores `s_w > s_l` the per-pair loss is
//!
//! ```text
//! z    = β·(log π(y_w) − log π_ref(y_w)) − β·(log π(y_l) − log π_ref(y_l)) − Δr
//! loss = −log σ(z) = softplus(−z),        Δr = g(s_w) − g(s_l),  g(s) = λ·s
//! ```
//!
//! With `Δr = 0` this is plain DPO. The partition term `Z(x)` cancels in the
//! pairwise difference and is never formed.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};

use crate::contracts::{PolicyParams, SparseGrad};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::pairs::PreferenceRecord;

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_MARGIN_SCALE: f64 = 1.0;
pub const DEFAULT_LEARNING_RATE: f64 = 1.0;
pub const DEFAULT_EPOCHS: usize = 3;
pub const DEFAULT_BATCH_SIZE: usize = 4;
pub const MIN_GUMBEL_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    /// Slope `λ` of the score map `g(s) = λ·s`.
    pub margin_scale: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Forces `Δr = 0`.
    pub naive_dpo: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            margin_scale: DEFAULT_MARGIN_SCALE,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            naive_dpo: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.margin_scale >= 0.0 && self.margin_scale.is_finite()) {
            return Err(Error::Config(format!(
                "margin scale must be non-negative, got {}",
                self.margin_scale
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Policy and reference log-probabilities of one pair plus its margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLogits {
    pub lw: f64,
    pub ll: f64,
    pub lw_ref: f64,
    pub ll_ref: f64,
    pub delta_r: f64,
}

impl PairLogits {
    fn check(&self) -> Result<()> {
        let vals = [self.lw, self.ll, self.lw_ref, self.ll_ref, self.delta_r];
        if vals.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric(format!("NaN in pair logits {self:?}")));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("infinite pair logits {self:?}")));
        }
        Ok(())
    }

    /// Implicit reward difference `β·Δlog-ratio`, without the margin.
    pub fn reward_gap(&self, beta: f64) -> f64 {
        beta * (self.lw - self.lw_ref) - beta * (self.ll - self.ll_ref)
    }

    /// Argument of the sigmoid: reward gap minus `Δr`.
    pub fn z(&self, beta: f64) -> f64 {
        self.reward_gap(beta) - self.delta_r
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `Δr = λ·(s_w − s_l)`.
pub fn margin(s_w: f64, s_l: f64, lambda: f64) -> Result<f64> {
    if !(s_w > s_l) {
        return Err(Error::ContractViolation(format!(
            "margin needs s_w > s_l, got s_w = {s_w}, s_l = {s_l}"
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("margin scale must be non-negative, got {lambda}")));
    }
    Ok(lambda * (s_w - s_l))
}

pub fn pair_loss(p: &PairLogits, beta: f64) -> Result<f64> {
    p.check()?;
    Ok(softplus(-p.z(beta)))
}

/// Plain DPO loss `−log σ(r_w − r_l)`; ignores `delta_r`.
pub fn dpo_loss(p: &PairLogits, beta: f64) -> Result<f64> {
    p.check()?;
    Ok(softplus(-p.reward_gap(beta)))
}

/// `d loss / d z = −σ(−z)`.
pub fn loss_slope(p: &PairLogits, beta: f64) -> f64 {
    -sigmoid(-p.z(beta))
}

/// Gradient of [`pair_loss`] w.r.t. the policy logits of context `ctx`.
/// Reference terms are constants.
pub fn pair_loss_grad(
    p: &PairLogits,
    beta: f64,
    policy: &PolicyParams,
    ctx: &str,
    winner: &str,
    loser: &str,
) -> Result<SparseGrad> {
    p.check()?;
    let slope = loss_slope(p, beta);
    let mut grad = SparseGrad::default();
    grad.accumulate(&policy.log_prob_grad(ctx, winner)?, slope * beta);
    grad.accumulate(&policy.log_prob_grad(ctx, loser)?, -slope * beta);
    Ok(grad)
}

pub fn record_margin(record: &PreferenceRecord, cfg: &LossConfig) -> Result<f64> {
    if cfg.naive_dpo {
        return Ok(0.0);
    }
    margin(record.winner.score, record.loser.score, cfg.margin_scale)
}

pub fn pair_logits(
    policy: &PolicyParams,
    reference: &PolicyParams,
    record: &PreferenceRecord,
    cfg: &LossConfig,
) -> Result<PairLogits> {
    let ctx = &record.context_key;
    Ok(PairLogits {
        lw: policy.log_prob(ctx, &record.winner.response_id)?,
        ll: policy.log_prob(ctx, &record.loser.response_id)?,
        lw_ref: reference.log_prob(ctx, &record.winner.response_id)?,
        ll_ref: reference.log_prob(ctx, &record.loser.response_id)?,
        delta_r: record_margin(record, cfg)?,
    })
}

/// Loss and policy gradient for one record.
pub fn record_loss_grad(
    policy: &PolicyParams,
    reference: &PolicyParams,
    record: &PreferenceRecord,
    cfg: &LossConfig,
) -> Result<(f64, SparseGrad)> {
    let p = pair_logits(policy, reference, record, cfg)?;
    let loss = pair_loss(&p, cfg.beta)?;
    let grad = pair_loss_grad(
        &p,
        cfg.beta,
        policy,
        &record.context_key,
        &record.winner.response_id,
        &record.loser.response_id,
    )?;
    Ok((loss, grad))
}

/// Monte-Carlo estimate of `P(R_w − R_l > Δr)` for
/// `R_w ~ Gumbel(r_w, 1)`, `R_l ~ Gumbel(r_l, 1)`.
pub fn gumbel_preference_prob_mc(
    r_w: f64,
    r_l: f64,
    delta_r: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples < MIN_GUMBEL_SAMPLES {
        return Err(Error::Config(format!(
            "need at least {MIN_GUMBEL_SAMPLES} samples, got {samples}"
        )));
    }
    let gw = Gumbel::new(r_w, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
    let gl = Gumbel::new(r_l, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..samples)
        .filter(|_| gw.sample(&mut rng) - gl.sample(&mut rng) > delta_r)
        .count();
    Ok(hits as f64 / samples as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    /// Mean per-record loss of each epoch, evaluated before each batch update.
    pub epoch_losses: Vec<f64>,
}

fn check_coverage(policy: &PolicyParams, reference: &PolicyParams, dataset: &[PreferenceRecord]) -> Result<()> {
    for (i, r) in dataset.iter().enumerate() {
        for (table, name) in [(policy, "policy"), (reference, "reference")] {
            for id in [&r.winner.response_id, &r.loser.response_id] {
                if !table.contains(&r.context_key, id) {
                    return Err(Error::Data(format!(
                        "record {i} (origin `{}`, t={}): {name} has no entry for context `{}`, response `{id}`",
                        r.origin, r.timestep, r.context_key
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Mini-batch gradient descent on the margin-aware loss against a frozen
/// reference. Record order is reshuffled every epoch from `seed`; within a
/// batch gradients are summed in order and averaged.
pub fn train_epochs(
    policy: &PolicyParams,
    reference: &PolicyParams,
    dataset: &[PreferenceRecord],
    cfg: &LossConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty preference dataset".into()));
    }
    check_coverage(policy, reference, dataset)?;
    let mut policy = policy.clone();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"epoch", &(epoch as u64).to_le_bytes()]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = SparseGrad::default();
            for &i in batch {
                let (loss, g) = record_loss_grad(&policy, reference, &dataset[i], cfg)?;
                total += loss;
                grad.accumulate(&g, 1.0);
            }
            policy.apply_step(&grad, cfg.learning_rate / batch.len() as f64)?;
        }
        epoch_losses.push(total / dataset.len() as f64);
    }
    Ok(TrainOutcome {
        policy,
        epoch_losses,
    })
}

/// Two-column `epoch mean_loss` text, epochs numbered from 1.
pub fn render_loss_curve(losses: &[f64]) -> String {
    let mut out = String::from("# epoch mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{} {l:.16e}", i + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::ScoredResponse;
    use proptest::prelude::*;

    fn same(delta_r: f64) -> PairLogits {
        PairLogits {
            lw: -1.2,
            ll: -0.7,
            lw_ref: -1.2,
            ll_ref: -0.7,
            delta_r,
        }
    }

    #[test]
    fn margin_examples() {
        assert!((margin(0.9, 0.4, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(margin(0.9, 0.4, 0.0).unwrap(), 0.0);
        let eps = 1e-9;
        assert!((margin(0.3 + eps, 0.3, 2.0).unwrap() - 2.0 * eps).abs() < 1e-15);
        assert!(matches!(margin(0.4, 0.4, 1.0), Err(Error::ContractViolation(_))));
        assert!(matches!(margin(0.3, 0.4, 1.0), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn loss_examples() {
        assert!((pair_loss(&same(0.0), 0.1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // softplus(1) = ln(1 + e)
        let expected = (1.0 + std::f64::consts::E).ln();
        assert!((pair_loss(&same(1.0), 0.1).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 1.313262).abs() < 1e-6);
        let mut p = same(0.0);
        p.lw = f64::NAN;
        assert!(matches!(pair_loss(&p, 0.1), Err(Error::Numeric(_))));
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn saturated_pair_has_vanishing_slope() {
        let mut p = same(0.0);
        p.lw = 0.0;
        p.ll = -1e4;
        assert!(loss_slope(&p, 1.0).abs() < 1e-300);
        assert_eq!(loss_slope(&same(0.0), 0.1), -0.5);
    }

    #[test]
    fn gumbel_needs_enough_samples() {
        assert!(matches!(gumbel_preference_prob_mc(0.0, 0.0, 0.0, 100, 1), Err(Error::Config(_))));
        let p = gumbel_preference_prob_mc(0.3, 0.3, 0.0, 40_000, 1).unwrap();
        assert!((p - 0.5).abs() < 4.0 / 200.0);
    }

    fn record(ctx: &str) -> PreferenceRecord {
        PreferenceRecord {
            origin: "o".into(),
            round: 1,
            timestep: 0,
            context_key: ctx.into(),
            history: vec![],
            winner: ScoredResponse {
                response_id: "w".into(),
                score: 0.8,
            },
            loser: ScoredResponse {
                response_id: "l".into(),
                score: 0.3,
            },
        }
    }

    fn tables() -> (PolicyParams, PolicyParams) {
        let mut p = PolicyParams::new();
        p.ensure_row("c", ["w", "l", "x"]);
        (p.clone(), p)
    }

    #[test]
    fn training_errors() {
        let (p, r) = tables();
        let cfg = LossConfig::default();
        assert!(matches!(train_epochs(&p, &r, &[], &cfg, 0), Err(Error::Data(_))));
        let e = train_epochs(&p, &r, &[record("missing")], &cfg, 0).unwrap_err();
        assert!(e.to_string().contains("record 0"), "{e}");
        let bad = LossConfig { beta: 0.0, ..cfg };
        assert!(matches!(train_epochs(&p, &r, &[record("c")], &bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_lr_is_null_update() {
        let (p, r) = tables();
        let cfg = LossConfig {
            learning_rate: 0.0,
            ..LossConfig::default()
        };
        let out = train_epochs(&p, &r, &[record("c")], &cfg, 3).unwrap();
        assert_eq!(out.policy.to_checkpoint_string(), p.to_checkpoint_string());
        assert!(out.epoch_losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn winner_ratio_grows_without_margin() {
        let (p, r) = tables();
        let cfg = LossConfig {
            margin_scale: 0.0,
            ..LossConfig::default()
        };
        let mut cur = p;
        let mut last = f64::NEG_INFINITY;
        for seed in 0..5 {
            cur = train_epochs(&cur, &r, &[record("c")], &cfg, seed).unwrap().policy;
            let ratio = cur.log_prob("c", "w").unwrap() - r.log_prob("c", "w").unwrap();
            assert!(ratio > last);
            last = ratio;
        }
    }

    #[test]
    fn loss_curve_format() {
        assert_eq!(
            render_loss_curve(&[0.5, 0.25]),
            "# epoch mean_loss\n1 5.0000000000000000e-1\n2 2.5000000000000000e-1\n"
        );
    }

    proptest! {
        #[test]
        fn loss_strictly_increases_in_margin(
            lw in -5.0f64..0.0, ll in -5.0f64..0.0, lwr in -5.0f64..0.0, llr in -5.0f64..0.0,
            d in 0.0f64..3.0, step in 1e-3f64..1.0, beta in 0.01f64..2.0,
        ) {
            let p = PairLogits { lw, ll, lw_ref: lwr, ll_ref: llr, delta_r: d };
            let q = PairLogits { delta_r: d + step, ..p };
            prop_assert!(pair_loss(&q, beta).unwrap() > pair_loss(&p, beta).unwrap());
        }

        #[test]
        fn zero_margin_is_plain_dpo(
            lw in -20.0f64..0.0, ll in -20.0f64..0.0, lwr in -20.0f64..0.0, llr in -20.0f64..0.0, beta in 0.01f64..5.0,
        ) {
            let p = PairLogits { lw, ll, lw_ref: lwr, ll_ref: llr, delta_r: 0.0 };
            prop_assert_eq!(pair_loss(&p, beta).unwrap().to_bits(), dpo_loss(&p, beta).unwrap().to_bits());
        }
    }
}
