//! Pluggable contracts for the target generator, the evaluators and the
//! trainable policy, with deterministic scripted implementations driven by a
//! fixture bank.

mod policy;
mod scripted;

pub use policy::{PolicyParams, SparseGrad, CHECKPOINT_HEADER};
pub use scripted::{FixtureBank, FixtureRecord, ScriptedEvaluator, ScriptedGenerator, Variant, FIXTURE_SCHEMA};

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::region::RegionProposal;

/// Token ids over a small closed vocabulary.
pub type Token = u16;

/// Largest vocabulary the scripted models accept.
pub const MAX_VOCAB: Token = 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResponseText {
    pub response_id: String,
    pub tokens: Vec<Token>,
}

impl ResponseText {
    pub fn new(response_id: impl Into<String>, tokens: Vec<Token>) -> Result<Self> {
        let response_id = response_id.into();
        if response_id.is_empty() || response_id.chars().any(char::is_whitespace) {
            return Err(Error::Precondition(format!(
                "response id `{response_id}` must be non-empty without whitespace"
            )));
        }
        if tokens.is_empty() {
            return Err(Error::Precondition(format!("response `{response_id}` has no tokens")));
        }
        if let Some(t) = tokens.iter().find(|t| **t >= MAX_VOCAB) {
            return Err(Error::Precondition(format!(
                "response `{response_id}` token {t} outside vocabulary of {MAX_VOCAB}"
            )));
        }
        Ok(Self {
            response_id,
            tokens,
        })
    }
}

/// Everything the generator conditions on at one timestep: the global
/// image, the optional localized region, the question and the preserved
/// chain. The timestep is the history length.
#[derive(Debug, Clone, Copy)]
pub struct GenerationContext<'a> {
    pub image: &'a ImageGrid,
    pub region: Option<&'a RegionProposal>,
    pub question: &'a [Token],
    pub history: &'a [ResponseText],
}

impl GenerationContext<'_> {
    pub fn timestep(&self) -> usize {
        self.history.len()
    }

    pub fn hypothesis_id(&self) -> Option<&str> {
        self.region.map(|r| r.hypothesis_id.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        if self.question.is_empty() {
            return Err(Error::Precondition("generation context has an empty question".into()));
        }
        Ok(())
    }

    pub fn key(&self) -> String {
        let ids: Vec<&str> = self.history.iter().map(|r| r.response_id.as_str()).collect();
        context_key(self.question, &ids, self.hypothesis_id())
    }
}

/// Stable digest of (question tokens, ordered history ids, region hypothesis).
///
/// Preference records use `hypothesis = None`: every candidate of a
/// timestep competes in the same decision context.
pub fn context_key(question: &[Token], history: &[&str], hypothesis: Option<&str>) -> String {
    let mut buf = String::from("q:");
    for t in question {
        buf.push_str(&t.to_string());
        buf.push(',');
    }
    buf.push_str("|h:");
    for id in history {
        buf.push_str(&id.len().to_string());
        buf.push(':');
        buf.push_str(id);
    }
    buf.push_str("|r:");
    if let Some(h) = hypothesis {
        buf.push_str(h);
    } else {
        buf.push('-');
    }
    sha256_hex(buf.as_bytes())[..16].to_string()
}

/// Target model `f_tar`.
pub trait Generator: Send + Sync {
    fn generate(&self, ctx: &GenerationContext<'_>, seed: u64) -> Result<ResponseText>;
}

/// Evaluator model `f_eval`: scores a response given its preceding chain.
pub trait Evaluator: Send + Sync {
    fn name(&self) -> &str;

    fn evaluate(&self, response: &ResponseText, history: &[ResponseText]) -> Result<f64>;
}

/// Calls `evaluator` and rejects scores outside `[0, 1]` instead of clamping.
pub fn checked_evaluate(
    evaluator: &dyn Evaluator,
    response: &ResponseText,
    history: &[ResponseText],
) -> Result<f64> {
    if response.tokens.is_empty() {
        return Err(Error::Precondition(format!(
            "cannot evaluate empty response `{}`",
            response.response_id
        )));
    }
    let score = evaluator.evaluate(response, history)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::ContractViolation(format!(
            "evaluator `{}` returned {score} for `{}`; scores must lie in [0, 1]",
            evaluator.name(),
            response.response_id
        )));
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(f64);

    impl Evaluator for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }

        fn evaluate(&self, _: &ResponseText, _: &[ResponseText]) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn range_guard_is_a_hard_error() {
        let r = ResponseText::new("r", vec![1]).unwrap();
        assert_eq!(checked_evaluate(&Fixed(0.8), &r, &[]).unwrap(), 0.8);
        assert_eq!(checked_evaluate(&Fixed(1.0), &r, &[]).unwrap(), 1.0);
        assert!(matches!(checked_evaluate(&Fixed(1.2), &r, &[]), Err(Error::ContractViolation(_))));
        assert!(matches!(checked_evaluate(&Fixed(-0.1), &r, &[]), Err(Error::ContractViolation(_))));
        assert!(matches!(checked_evaluate(&Fixed(f64::NAN), &r, &[]), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn response_validation() {
        assert!(ResponseText::new("a b", vec![1]).is_err());
        assert!(ResponseText::new("a", vec![]).is_err());
        assert!(ResponseText::new("a", vec![64]).is_err());
    }

    #[test]
    fn context_key_depends_on_every_part() {
        let base = context_key(&[1, 2], &["a", "b"], Some("x"));
        assert_eq!(base, context_key(&[1, 2], &["a", "b"], Some("x")));
        assert_ne!(base, context_key(&[1, 3], &["a", "b"], Some("x")));
        assert_ne!(base, context_key(&[1, 2], &["b", "a"], Some("x")));
        assert_ne!(base, context_key(&[1, 2], &["a", "b"], Some("y")));
        assert_ne!(base, context_key(&[1, 2], &["a", "b"], None));
        assert_ne!(context_key(&[1], &["ab", "c"], None), context_key(&[1], &["a", "bc"], None));
        assert_eq!(base.len(), 16);
    }
}
