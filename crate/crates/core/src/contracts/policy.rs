//! Tabular softmax policy: one row of logits per context key, one entry per
//! candidate response offered in that context.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::digest::sha256_hex;
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "CLINCOT-POLICY v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyParams {
    rows: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Sparse gradient keyed by `(context_key, response_id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    pub entries: BTreeMap<(String, String), f64>,
}

impl SparseGrad {
    pub fn add(&mut self, ctx: &str, id: &str, value: f64) {
        *self
            .entries
            .entry((ctx.to_string(), id.to_string()))
            .or_insert(0.0) += value;
    }

    pub fn get(&self, ctx: &str, id: &str) -> f64 {
        self.entries
            .get(&(ctx.to_string(), id.to_string()))
            .copied()
            .unwrap_or(0.0)
    }

    /// `self += scale * other`
    pub fn accumulate(&mut self, other: &SparseGrad, scale: f64) {
        for ((c, y), v) in &other.entries {
            self.add(c, y, scale * v);
        }
    }
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl PolicyParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds any missing `ids` to the row for `ctx` with a zero logit.
    pub fn ensure_row<'a>(&mut self, ctx: &str, ids: impl IntoIterator<Item = &'a str>) {
        let row = self.rows.entry(ctx.to_string()).or_default();
        for id in ids {
            row.entry(id.to_string()).or_insert(0.0);
        }
    }

    pub fn row(&self, ctx: &str) -> Result<&BTreeMap<String, f64>> {
        self.rows
            .get(ctx)
            .ok_or_else(|| Error::Lookup(format!("policy has no row for context `{ctx}`")))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, f64>)> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, ctx: &str, id: &str) -> bool {
        self.rows.get(ctx).is_some_and(|r| r.contains_key(id))
    }

    pub fn logit(&self, ctx: &str, id: &str) -> Result<f64> {
        self.row(ctx)?
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("context `{ctx}` has no response `{id}`")))
    }

    pub fn set_logit(&mut self, ctx: &str, id: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite logit {value} for ({ctx}, {id})")));
        }
        let slot = self
            .rows
            .get_mut(ctx)
            .and_then(|r| r.get_mut(id))
            .ok_or_else(|| Error::Lookup(format!("no policy entry ({ctx}, {id})")))?;
        *slot = value;
        Ok(())
    }

    /// `log π(id | ctx)`: the logit minus the row's log-sum-exp.
    pub fn log_prob(&self, ctx: &str, id: &str) -> Result<f64> {
        let row = self.row(ctx)?;
        let logit = self.logit(ctx, id)?;
        Ok(logit - logsumexp(row.values().copied()))
    }

    /// Gradient of [`Self::log_prob`] w.r.t. every logit of the row:
    /// `1{y' = y} − softmax(row)[y']`.
    pub fn log_prob_grad(&self, ctx: &str, id: &str) -> Result<SparseGrad> {
        let row = self.row(ctx)?;
        self.logit(ctx, id)?;
        let lse = logsumexp(row.values().copied());
        let mut grad = SparseGrad::default();
        for (y, logit) in row {
            let p = (logit - lse).exp();
            let indicator = if y == id { 1.0 } else { 0.0 };
            grad.add(ctx, y, indicator - p);
        }
        Ok(grad)
    }

    /// `θ ← θ − lr · grad`. Entries absent from the table are a lookup error.
    pub fn apply_step(&mut self, grad: &SparseGrad, lr: f64) -> Result<()> {
        for ((c, y), g) in &grad.entries {
            let v = self.logit(c, y)? - lr * g;
            self.set_logit(c, y, v)?;
        }
        Ok(())
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut out = format!("{CHECKPOINT_HEADER}\n{}\n", self.len());
        for (ctx, row) in &self.rows {
            for (id, logit) in row {
                let _ = writeln!(out, "{ctx} {id} {logit:.16e}");
            }
        }
        out
    }

    /// SHA-256 of the checkpoint serialization.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_checkpoint_string().as_bytes())
    }

    pub fn parse_checkpoint(text: &str, path: Option<&Path>) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(path.map(Path::to_path_buf), line, msg);
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_HEADER) {
            return Err(err(1, format!("missing `{CHECKPOINT_HEADER}` header")));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| err(2, "missing row count".into()))?;
        let mut policy = PolicyParams::new();
        for i in 0..count {
            let line_no = i + 3;
            let line = lines
                .next()
                .ok_or_else(|| err(line_no, format!("expected {count} entries, found {i}")))?;
            let parts: Vec<&str> = line.split(' ').collect();
            let [ctx, id, logit] = parts.as_slice() else {
                return Err(err(line_no, format!("expected `context response logit`, got `{line}`")));
            };
            let logit: f64 = logit
                .parse()
                .map_err(|_| err(line_no, format!("bad logit `{logit}`")))?;
            if !logit.is_finite() {
                return Err(err(line_no, "non-finite logit".into()));
            }
            if policy.contains(ctx, id) {
                return Err(err(line_no, format!("duplicate entry ({ctx}, {id})")));
            }
            policy
                .rows
                .entry(ctx.to_string())
                .or_default()
                .insert(id.to_string(), logit);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(err(count + 3, "trailing content after declared entries".into()));
        }
        Ok(policy)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_checkpoint(&text, Some(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn policy(row: &[(&str, f64)]) -> PolicyParams {
        let mut p = PolicyParams::new();
        p.ensure_row("c", row.iter().map(|(id, _)| *id));
        for (id, v) in row {
            p.set_logit("c", id, *v).unwrap();
        }
        p
    }

    #[test]
    fn log_prob_examples() {
        let p = policy(&[("a", 0.0), ("b", 0.0)]);
        assert!((p.log_prob("c", "a").unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let p = policy(&[("a", 1.0), ("b", 0.0)]);
        let expected = 1.0 - (1f64.exp() + 1.0).ln();
        assert!((p.log_prob("c", "a").unwrap() - expected).abs() < 1e-15);
        assert!((expected + 0.3133).abs() < 1e-4);
        let p = policy(&[("a", 3.7)]);
        assert_eq!(p.log_prob("c", "a").unwrap(), 0.0);
    }

    #[test]
    fn lookup_errors() {
        let p = policy(&[("a", 0.0)]);
        assert!(matches!(p.log_prob("x", "a"), Err(Error::Lookup(_))));
        assert!(matches!(p.log_prob("c", "z"), Err(Error::Lookup(_))));
        assert!(matches!(p.log_prob_grad("c", "z"), Err(Error::Lookup(_))));
    }

    #[test]
    fn grad_examples() {
        let p = policy(&[("a", 0.0), ("b", 0.0)]);
        let g = p.log_prob_grad("c", "a").unwrap();
        assert_eq!(g.get("c", "a"), 0.5);
        assert_eq!(g.get("c", "b"), -0.5);
        let p = policy(&[("a", 2.0)]);
        assert_eq!(p.log_prob_grad("c", "a").unwrap().get("c", "a"), 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut p = policy(&[("a", 0.1), ("b", -1.0 / 3.0)]);
        p.ensure_row("d", ["x"]);
        let text = p.to_checkpoint_string();
        assert!(text.starts_with("CLINCOT-POLICY v1\n3\n"));
        assert_eq!(PolicyParams::parse_checkpoint(&text, None).unwrap(), p);
        assert!(PolicyParams::parse_checkpoint("CLINCOT-POLICY v1\n2\nc a 0\n", None).is_err());
        assert!(PolicyParams::parse_checkpoint("nope\n0\n", None).is_err());
    }

    #[test]
    fn rejects_non_finite_logits() {
        let mut p = policy(&[("a", 0.0)]);
        assert!(matches!(p.set_logit("c", "a", f64::NAN), Err(Error::Numeric(_))));
    }

    proptest! {
        #[test]
        fn row_probabilities_sum_to_one(logits in prop::collection::vec(-30.0f64..30.0, 1..12)) {
            let ids: Vec<String> = (0..logits.len()).map(|i| format!("r{i}")).collect();
            let row: Vec<(&str, f64)> = ids.iter().map(String::as_str).zip(logits.iter().copied()).collect();
            let p = policy(&row);
            let total: f64 = ids.iter().map(|id| p.log_prob("c", id).unwrap().exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for id in &ids {
                prop_assert!(p.log_prob("c", id).unwrap() <= 0.0);
                let g = p.log_prob_grad("c", id).unwrap();
                let s: f64 = g.entries.values().sum();
                prop_assert!(s.abs() < 1e-12);
            }
        }

        #[test]
        fn grad_matches_central_differences(logits in prop::collection::vec(-4.0f64..4.0, 1..8), pick in 0usize..8) {
            let ids: Vec<String> = (0..logits.len()).map(|i| format!("r{i}")).collect();
            let row: Vec<(&str, f64)> = ids.iter().map(String::as_str).zip(logits.iter().copied()).collect();
            let p = policy(&row);
            let target = &ids[pick % ids.len()];
            let g = p.log_prob_grad("c", target).unwrap();
            let h = 1e-5;
            for id in &ids {
                let base = p.logit("c", id).unwrap();
                let mut up = p.clone();
                up.set_logit("c", id, base + h).unwrap();
                let mut down = p.clone();
                down.set_logit("c", id, base - h).unwrap();
                let fd = (up.log_prob("c", target).unwrap() - down.log_prob("c", target).unwrap()) / (2.0 * h);
                let an = g.get("c", id);
                prop_assert!((fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()) + 1e-10, "{id}: fd {fd} vs {an}");
            }
        }
    }
}
