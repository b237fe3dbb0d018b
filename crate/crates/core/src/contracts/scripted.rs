//! Fixture-driven generator and evaluators.
//!
//! The bank is line-delimited JSON. The first line is the versioned header
//! `{"schema":"clincot-fixture-bank","version":1}`; each following line is a
//! record tagged by `kind`:
//!
//! ```text
//! {"kind":"generation","hypothesis_id":"nodule","timestep":0,"variants":[{"response_id":"nodule.t0.v0","tokens":[3,9,14]}]}
//! {"kind":"evaluation","evaluator":"e1","response_id":"nodule.t0.v0","history_len":0,"score":0.8}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Evaluator, GenerationContext, Generator, ResponseText, Token};
use crate::digest::{derive_seed, unit_interval};
use crate::error::{Error, Result};

pub const FIXTURE_SCHEMA: &str = "clincot-fixture-bank";
const FIXTURE_VERSION: u32 = 1;

/// Key used by the generator when a context carries no region.
const GLOBAL_KEY: &str = "global";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub response_id: String,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FixtureRecord {
    Generation {
        hypothesis_id: String,
        timestep: usize,
        variants: Vec<Variant>,
    },
    Evaluation {
        evaluator: String,
        response_id: String,
        history_len: usize,
        score: f64,
    },
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    bank: BTreeMap<(String, usize), Vec<ResponseText>>,
}

impl ScriptedGenerator {
    pub fn insert(&mut self, hypothesis_id: &str, timestep: usize, variants: Vec<ResponseText>) -> Result<()> {
        if variants.is_empty() {
            return Err(Error::Config(format!(
                "generation fixture ({hypothesis_id}, {timestep}) has no variants"
            )));
        }
        self.bank.insert((hypothesis_id.to_string(), timestep), variants);
        Ok(())
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, ctx: &GenerationContext<'_>, seed: u64) -> Result<ResponseText> {
        ctx.validate()?;
        let hyp = ctx.hypothesis_id().unwrap_or(GLOBAL_KEY);
        let t = ctx.timestep();
        let variants = self.bank.get(&(hyp.to_string(), t)).ok_or_else(|| {
            Error::Config(format!(
                "fixture bank has no generation entry for (hypothesis `{hyp}`, timestep {t})"
            ))
        })?;
        let pick = derive_seed(seed, &[ctx.key().as_bytes()]) % variants.len() as u64;
        Ok(variants[pick as usize].clone())
    }
}

/// Looks scores up by `(response_id, history_len)`; optionally falls back to
/// a seeded hash of the same key when the table has no entry.
#[derive(Debug, Clone)]
pub struct ScriptedEvaluator {
    name: String,
    table: HashMap<(String, usize), f64>,
    fallback_seed: Option<u64>,
}

impl ScriptedEvaluator {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            table: HashMap::new(),
            fallback_seed: None,
        }
    }

    pub fn hashed(name: impl Into<String>, seed: u64) -> Self {
        Self {
            fallback_seed: Some(seed),
            ..Self::new(name)
        }
    }

    pub fn insert(&mut self, response_id: &str, history_len: usize, score: f64) {
        self.table.insert((response_id.to_string(), history_len), score);
    }
}

impl Evaluator for ScriptedEvaluator {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, response: &ResponseText, history: &[ResponseText]) -> Result<f64> {
        let key = (response.response_id.clone(), history.len());
        if let Some(s) = self.table.get(&key) {
            return Ok(*s);
        }
        match self.fallback_seed {
            Some(seed) => Ok(unit_interval(derive_seed(
                seed,
                &[
                    self.name.as_bytes(),
                    response.response_id.as_bytes(),
                    &(history.len() as u64).to_le_bytes(),
                ],
            ))),
            None => Err(Error::Config(format!(
                "evaluator `{}` has no score for (response `{}`, history length {})",
                self.name,
                response.response_id,
                history.len()
            ))),
        }
    }
}

/// Parsed fixture bank: one generator plus evaluators in order of first
/// appearance.
#[derive(Debug, Clone, Default)]
pub struct FixtureBank {
    pub generator: ScriptedGenerator,
    pub evaluators: Vec<ScriptedEvaluator>,
}

impl FixtureBank {
    pub fn parse(text: &str, path: Option<&Path>) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(path.map(Path::to_path_buf), line, msg);
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| err(1, "empty fixture bank".into()))?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| err(1, format!("bad header: {e}")))?;
        if header.schema != FIXTURE_SCHEMA || header.version != FIXTURE_VERSION {
            return Err(err(
                1,
                format!("unsupported fixture bank {} v{}", header.schema, header.version),
            ));
        }
        let mut bank = FixtureBank::default();
        for (i, line) in lines {
            let record: FixtureRecord =
                serde_json::from_str(line).map_err(|e| err(i + 1, e.to_string()))?;
            bank.add(record).map_err(|e| err(i + 1, e.to_string()))?;
        }
        Ok(bank)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, Some(path))
    }

    pub fn add(&mut self, record: FixtureRecord) -> Result<()> {
        match record {
            FixtureRecord::Generation {
                hypothesis_id,
                timestep,
                variants,
            } => {
                let variants = variants
                    .into_iter()
                    .map(|v| ResponseText::new(v.response_id, v.tokens))
                    .collect::<Result<Vec<_>>>()?;
                self.generator.insert(&hypothesis_id, timestep, variants)
            }
            FixtureRecord::Evaluation {
                evaluator,
                response_id,
                history_len,
                score,
            } => {
                if !score.is_finite() {
                    return Err(Error::Config(format!("non-finite score for `{response_id}`")));
                }
                let idx = match self.evaluators.iter().position(|e| e.name == evaluator) {
                    Some(i) => i,
                    None => {
                        self.evaluators.push(ScriptedEvaluator::new(evaluator));
                        self.evaluators.len() - 1
                    }
                };
                self.evaluators[idx].insert(&response_id, history_len, score);
                Ok(())
            }
        }
    }

    pub fn render(records: &[FixtureRecord]) -> String {
        let header = Header {
            schema: FIXTURE_SCHEMA.into(),
            version: FIXTURE_VERSION,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in records {
            out.push_str(&serde_json::to_string(r).expect("fixture record serializes"));
            out.push('\n');
        }
        out
    }
}
