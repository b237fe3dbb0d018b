//! The T-step reasoning loop: region-conditioned candidate generation and
//! forwarding of the single best-scoring response into the preserved chain.

use serde::{Deserialize, Serialize};

use crate::contracts::{GenerationContext, Generator, ResponseText, Token};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::region::RegionProposal;
use crate::scoring::ScoreBreakdown;

pub const DEFAULT_HORIZON: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStep {
    pub response: ResponseText,
    pub hypothesis_id: String,
    pub final_score: f64,
}

/// The preserved chain `y_{1:t}` for one input pair. The input itself is
/// unscored context and is not stored as a step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningChain {
    pub origin: String,
    pub steps: Vec<ChainStep>,
}

impl ReasoningChain {
    pub fn new(origin: impl Into<String>) -> Self {
        Self {
            origin: origin.into(),
            steps: Vec::new(),
        }
    }

    pub fn t(&self) -> usize {
        self.steps.len()
    }

    pub fn history(&self) -> Vec<ResponseText> {
        self.steps.iter().map(|s| s.response.clone()).collect()
    }

    pub fn history_ids(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.response.response_id.as_str()).collect()
    }

    pub fn dump_records(&self) -> Vec<ChainDumpRecord> {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, s)| ChainDumpRecord {
                origin: self.origin.clone(),
                t,
                hypothesis_id: s.hypothesis_id.clone(),
                response_id: s.response.response_id.clone(),
                tokens: s.response.tokens.clone(),
                final_score: s.final_score,
            })
            .collect()
    }
}

/// One line of the chain dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDumpRecord {
    pub origin: String,
    pub t: usize,
    pub hypothesis_id: String,
    pub response_id: String,
    pub tokens: Vec<Token>,
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResponse {
    /// Position of the hypothesis in the hypothesis set; used for tie-breaks.
    pub hypothesis_index: usize,
    pub hypothesis_id: String,
    pub response: ResponseText,
    pub scores: Option<ScoreBreakdown>,
}

impl CandidateResponse {
    pub fn final_score(&self) -> Result<f64> {
        self.scores.as_ref().map(|s| s.s_final).ok_or_else(|| {
            Error::State(format!(
                "candidate `{}` ({}) has not been scored",
                self.response.response_id, self.hypothesis_id
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub timestep: usize,
    pub candidates: Vec<CandidateResponse>,
}

pub(crate) fn candidate_seed(seed: u64, hypothesis_id: &str) -> u64 {
    derive_seed(seed, &[b"candidate", hypothesis_id.as_bytes()])
}

/// One candidate per region, in region order. `regions` pairs each proposal
/// with its hypothesis index.
pub fn generate_candidates(
    chain: &ReasoningChain,
    image: &ImageGrid,
    regions: &[(usize, RegionProposal)],
    question: &[Token],
    generator: &dyn Generator,
    horizon: usize,
    seed: u64,
) -> Result<CandidateSet> {
    let t = chain.t();
    if regions.is_empty() {
        return Err(Error::Pipeline(format!("no viable hypotheses at timestep {t}")));
    }
    if t >= horizon {
        return Err(Error::State(format!(
            "chain `{}` already has {t} of {horizon} steps",
            chain.origin
        )));
    }
    let history = chain.history();
    let candidates = regions
        .iter()
        .map(|(index, region)| {
            let ctx = GenerationContext {
                image,
                region: Some(region),
                question,
                history: &history,
            };
            Ok(CandidateResponse {
                hypothesis_index: *index,
                hypothesis_id: region.hypothesis_id.clone(),
                response: generator.generate(&ctx, candidate_seed(seed, &region.hypothesis_id))?,
                scores: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSet {
        timestep: t,
        candidates,
    })
}

/// Index into `scored.candidates` of the highest final score, ties going to
/// the lowest hypothesis index.
pub fn best_candidate(scored: &CandidateSet) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in scored.candidates.iter().enumerate() {
        let s = c.final_score()?;
        best = match best {
            None => Some((i, s)),
            Some((j, bs)) => {
                let incumbent = &scored.candidates[j];
                if s > bs || (s == bs && c.hypothesis_index < incumbent.hypothesis_index) {
                    Some((i, s))
                } else {
                    Some((j, bs))
                }
            }
        };
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::State("cannot advance on an empty candidate set".into()))
}

pub fn advance_chain(chain: &ReasoningChain, scored: &CandidateSet) -> Result<ReasoningChain> {
    if scored.timestep != chain.t() {
        return Err(Error::State(format!(
            "candidate set is for timestep {} but chain is at {}",
            scored.timestep,
            chain.t()
        )));
    }
    let winner = &scored.candidates[best_candidate(scored)?];
    let mut next = chain.clone();
    next.steps.push(ChainStep {
        response: winner.response.clone(),
        hypothesis_id: winner.hypothesis_id.clone(),
        final_score: winner.final_score()?,
    });
    Ok(next)
}
