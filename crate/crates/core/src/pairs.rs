//! Preference-pair construction and the line-delimited preference dataset.
//!
//! Candidates are ranked by final score (descending, ties by hypothesis
//! index) and pair `i` joins the `i`-th best with the `i`-th worst. Pairs
//! whose members coincide or tie on score are dropped.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::{CandidateSet, ReasoningChain};
use crate::contracts::{context_key, Token};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 2;
pub const DATASET_SCHEMA: &str = "clincot-preferences";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub response_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub origin: String,
    pub round: usize,
    pub timestep: usize,
    pub context_key: String,
    pub history: Vec<String>,
    pub winner: ScoredResponse,
    pub loser: ScoredResponse,
}

impl PreferenceRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.winner.score > self.loser.score) {
            return Err(Error::Data(format!(
                "record ({}, t={}) has s_w = {} not above s_l = {}",
                self.origin, self.timestep, self.winner.score, self.loser.score
            )));
        }
        if self.winner.response_id == self.loser.response_id {
            return Err(Error::Data(format!(
                "record ({}, t={}) pairs `{}` with itself",
                self.origin, self.timestep, self.winner.response_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

/// Rounds to 12 significant digits so serialized scores are byte-stable.
pub fn round_sig12(x: f64) -> f64 {
    format!("{x:.11e}").parse().expect("formatted float parses")
}

pub fn build_pairs(
    scored: &CandidateSet,
    chain: &ReasoningChain,
    k: usize,
    round: usize,
    question: &[Token],
) -> Result<Vec<PreferenceRecord>> {
    if scored.candidates.len() < 2 {
        return Ok(Vec::new());
    }
    let mut ranked = scored
        .candidates
        .iter()
        .map(|c| Ok((c, c.final_score()?)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|(a, sa), (b, sb)| {
        sb.total_cmp(sa)
            .then(a.hypothesis_index.cmp(&b.hypothesis_index))
    });
    let history: Vec<String> = chain.history_ids().iter().map(|s| s.to_string()).collect();
    let ids: Vec<&str> = history.iter().map(String::as_str).collect();
    let ctx = context_key(question, &ids, None);
    let n = ranked.len();
    let mut out = Vec::new();
    for i in 0..k.min(n / 2) {
        let (w, sw) = ranked[i];
        let (l, sl) = ranked[n - 1 - i];
        let (sw, sl) = (round_sig12(sw), round_sig12(sl));
        if !(sw > sl) || w.response.response_id == l.response.response_id {
            continue;
        }
        out.push(PreferenceRecord {
            origin: chain.origin.clone(),
            round,
            timestep: scored.timestep,
            context_key: ctx.clone(),
            history: history.clone(),
            winner: ScoredResponse {
                response_id: w.response.response_id.clone(),
                score: sw,
            },
            loser: ScoredResponse {
                response_id: l.response.response_id.clone(),
                score: sl,
            },
        });
    }
    Ok(out)
}

pub fn dataset_header() -> String {
    let h = Header {
        schema: DATASET_SCHEMA.into(),
        version: DATASET_VERSION,
    };
    serde_json::to_string(&h).expect("header serializes") + "\n"
}

pub fn render_records(records: &[PreferenceRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        r.validate()?;
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    Ok(out)
}

/// Header plus records, as written to a fresh dataset file.
pub fn render_dataset(records: &[PreferenceRecord]) -> Result<String> {
    Ok(dataset_header() + &render_records(records)?)
}

/// Appends `records` to `path`, writing the header first when the file is
/// new or empty. Returns the number of records written.
pub fn write_dataset(records: &[PreferenceRecord], path: &Path) -> Result<usize> {
    let body = render_records(records)?;
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        file.write_all(dataset_header().as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    file.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

pub fn parse_dataset(text: &str, path: Option<&Path>) -> Result<Vec<PreferenceRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path.map(Path::to_path_buf), 1, "missing dataset header"))?;
    let h: Header = serde_json::from_str(header)
        .map_err(|e| Error::parse(path.map(Path::to_path_buf), 1, format!("bad header: {e}")))?;
    if h.schema != DATASET_SCHEMA || h.version != DATASET_VERSION {
        return Err(Error::parse(
            path.map(Path::to_path_buf),
            1,
            format!("unsupported dataset {} v{}", h.schema, h.version),
        ));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let r: PreferenceRecord = serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("record {i}: {e}")))?;
            r.validate().map_err(|e| Error::Data(format!("record {i}: {e}")))?;
            Ok(r)
        })
        .collect()
}

pub fn read_dataset(path: &Path) -> Result<Vec<PreferenceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, Some(path))
}
