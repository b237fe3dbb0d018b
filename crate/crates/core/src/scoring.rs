//! Candidate scoring: current score, sampled next-step lookahead, the
//! γ-combination of the two, and consensus weighting across two evaluators.
//!
//! ```text
//! s_e     = s_cur_e + γ · s_nxt_e            (γ treated as 0 at the last step)
//! s_final = ((s_1 + s_2) / 2) · exp(−|s_1 − s_2|)
//! ```

use serde::{Deserialize, Serialize};

use crate::chain::{CandidateSet, ReasoningChain};
use crate::contracts::{checked_evaluate, Evaluator, GenerationContext, Generator, ResponseText, Token};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::region::RegionProposal;

pub const DEFAULT_GAMMA: f64 = 0.3;
pub const DEFAULT_J_SAMPLES: usize = 2;

/// Per-candidate scores. Second-evaluator fields are `None` in
/// single-evaluator mode, where `s_final = s_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    pub s_cur_1: f64,
    pub s_cur_2: Option<f64>,
    pub s_nxt_1: f64,
    pub s_nxt_2: Option<f64>,
    pub gamma: f64,
    pub s_1: f64,
    pub s_2: Option<f64>,
    pub s_final: f64,
}

impl ScoreBreakdown {
    /// A breakdown carrying only a final score; handy for tests and replays.
    pub fn single(s_final: f64) -> Self {
        Self {
            s_cur_1: s_final,
            s_cur_2: None,
            s_nxt_1: 0.0,
            s_nxt_2: None,
            gamma: 0.0,
            s_1: s_final,
            s_2: None,
            s_final,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringConfig {
    pub gamma: f64,
    pub j_samples: usize,
    pub horizon: usize,
    pub single_evaluator: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            j_samples: DEFAULT_J_SAMPLES,
            horizon: crate::chain::DEFAULT_HORIZON,
            single_evaluator: false,
        }
    }
}

/// One line of the score ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLedgerRecord {
    pub origin: String,
    pub t: usize,
    pub hypothesis_id: String,
    pub s_cur_1: f64,
    pub s_cur_2: Option<f64>,
    pub s_nxt_1: f64,
    pub s_nxt_2: Option<f64>,
    pub s_1: f64,
    pub s_2: Option<f64>,
    pub s_final: f64,
}

impl ScoreLedgerRecord {
    pub fn from_set(origin: &str, set: &CandidateSet) -> Result<Vec<Self>> {
        set.candidates
            .iter()
            .map(|c| {
                let s = c.scores.as_ref().ok_or_else(|| {
                    Error::State(format!("candidate `{}` is unscored", c.hypothesis_id))
                })?;
                Ok(Self {
                    origin: origin.to_string(),
                    t: set.timestep,
                    hypothesis_id: c.hypothesis_id.clone(),
                    s_cur_1: s.s_cur_1,
                    s_cur_2: s.s_cur_2,
                    s_nxt_1: s.s_nxt_1,
                    s_nxt_2: s.s_nxt_2,
                    s_1: s.s_1,
                    s_2: s.s_2,
                    s_final: s.s_final,
                })
            })
            .collect()
    }
}

pub fn score_current(
    evaluator: &dyn Evaluator,
    candidate: &ResponseText,
    history: &[ResponseText],
) -> Result<f64> {
    checked_evaluate(evaluator, candidate, history)
}

/// Inputs needed to sample next-step responses after a candidate.
#[derive(Debug, Clone, Copy)]
pub struct LookaheadScene<'a> {
    pub image: &'a ImageGrid,
    pub regions: &'a [(usize, RegionProposal)],
    pub question: &'a [Token],
}

fn lookahead_seed(seed: u64, candidate_id: &str, sample: usize) -> u64 {
    derive_seed(
        seed,
        &[b"lookahead", candidate_id.as_bytes(), &(sample as u64).to_le_bytes()],
    )
}

/// Draws `j_samples` responses for timestep `t + 1` conditioned on the
/// history extended with `candidate`. Each draw picks its region and its
/// generator variant from a seed derived from (candidate id, sample index).
pub fn sample_next_responses(
    generator: &dyn Generator,
    scene: &LookaheadScene<'_>,
    candidate: &ResponseText,
    chain: &ReasoningChain,
    j_samples: usize,
    seed: u64,
) -> Result<Vec<ResponseText>> {
    if j_samples == 0 {
        return Err(Error::Config("j_samples must be at least 1".into()));
    }
    if scene.regions.is_empty() {
        return Err(Error::Pipeline("lookahead needs at least one region".into()));
    }
    let mut history = chain.history();
    history.push(candidate.clone());
    (0..j_samples)
        .map(|j| {
            let s = lookahead_seed(seed, &candidate.response_id, j);
            let pick = derive_seed(s, &[b"region"]) % scene.regions.len() as u64;
            let ctx = GenerationContext {
                image: scene.image,
                region: Some(&scene.regions[pick as usize].1),
                question: scene.question,
                history: &history,
            };
            generator.generate(&ctx, s)
        })
        .collect()
}

/// Mean evaluator score of already-sampled next responses.
pub fn lookahead_mean(
    evaluator: &dyn Evaluator,
    samples: &[ResponseText],
    history_with_candidate: &[ResponseText],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("j_samples must be at least 1".into()));
    }
    let total = samples
        .iter()
        .map(|y| checked_evaluate(evaluator, y, history_with_candidate))
        .sum::<Result<f64>>()?;
    Ok(total / samples.len() as f64)
}

/// Sampled estimate of `E_j[f_eval(y_{t+1}^j | y_{0:t-1}, y_t^i)]`.
/// Returns 0 without sampling when `t` is the last timestep.
#[allow(clippy::too_many_arguments)]
pub fn score_lookahead(
    evaluator: &dyn Evaluator,
    generator: &dyn Generator,
    scene: &LookaheadScene<'_>,
    candidate: &ResponseText,
    chain: &ReasoningChain,
    j_samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    if j_samples == 0 {
        return Err(Error::Config("j_samples must be at least 1".into()));
    }
    if chain.t() + 1 >= horizon {
        return Ok(0.0);
    }
    let samples = sample_next_responses(generator, scene, candidate, chain, j_samples, seed)?;
    let mut history = chain.history();
    history.push(candidate.clone());
    lookahead_mean(evaluator, &samples, &history)
}

pub fn combine_score(s_cur: f64, s_nxt: f64, gamma: f64, is_last: bool) -> Result<f64> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!("gamma must be finite and non-negative, got {gamma}")));
    }
    for (name, v) in [("s_cur", s_cur), ("s_nxt", s_nxt)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Precondition(format!("{name} = {v} outside [0, 1]")));
        }
    }
    if is_last {
        return Ok(s_cur);
    }
    Ok(s_cur + gamma * s_nxt)
}

/// Mean of two evaluator scores damped by `exp(−|s1 − s2|)`.
pub fn consensus_weight(s1: f64, s2: f64) -> Result<f64> {
    if s1.is_nan() || s2.is_nan() {
        return Err(Error::Numeric("consensus weight of NaN".into()));
    }
    if !(s1.is_finite() && s2.is_finite()) || s1 < 0.0 || s2 < 0.0 {
        return Err(Error::Precondition(format!(
            "consensus inputs must be finite and non-negative, got ({s1}, {s2})"
        )));
    }
    Ok(((s1 + s2) / 2.0) * (-(s1 - s2).abs()).exp())
}

/// Fills every candidate's [`ScoreBreakdown`]. Both evaluators score the
/// same sampled next responses.
#[allow(clippy::too_many_arguments)]
pub fn score_candidates(
    set: &mut CandidateSet,
    chain: &ReasoningChain,
    scene: &LookaheadScene<'_>,
    generator: &dyn Generator,
    evaluators: &[&dyn Evaluator],
    cfg: &ScoringConfig,
    seed: u64,
) -> Result<()> {
    let needed = if cfg.single_evaluator { 1 } else { 2 };
    if evaluators.len() < needed {
        return Err(Error::Config(format!(
            "scoring needs {needed} evaluators, {} configured",
            evaluators.len()
        )));
    }
    if cfg.j_samples == 0 {
        return Err(Error::Config("j_samples must be at least 1".into()));
    }
    let history = chain.history();
    let is_last = chain.t() + 1 >= cfg.horizon;
    for cand in &mut set.candidates {
        let mut with_cand = history.clone();
        with_cand.push(cand.response.clone());
        let samples = if is_last {
            Vec::new()
        } else {
            sample_next_responses(generator, scene, &cand.response, chain, cfg.j_samples, seed)?
        };
        let per_eval = |e: &dyn Evaluator| -> Result<(f64, f64, f64)> {
            let cur = score_current(e, &cand.response, &history)?;
            let nxt = if is_last { 0.0 } else { lookahead_mean(e, &samples, &with_cand)? };
            Ok((cur, nxt, combine_score(cur, nxt, cfg.gamma, is_last)?))
        };
        let (s_cur_1, s_nxt_1, s_1) = per_eval(evaluators[0])?;
        let breakdown = if cfg.single_evaluator {
            ScoreBreakdown {
                s_cur_1,
                s_cur_2: None,
                s_nxt_1,
                s_nxt_2: None,
                gamma: cfg.gamma,
                s_1,
                s_2: None,
                s_final: s_1,
            }
        } else {
            let (s_cur_2, s_nxt_2, s_2) = per_eval(evaluators[1])?;
            ScoreBreakdown {
                s_cur_1,
                s_cur_2: Some(s_cur_2),
                s_nxt_1,
                s_nxt_2: Some(s_nxt_2),
                gamma: cfg.gamma,
                s_1,
                s_2: Some(s_2),
                s_final: consensus_weight(s_1, s_2)?,
            }
        };
        cand.scores = Some(breakdown);
    }
    Ok(())
}
