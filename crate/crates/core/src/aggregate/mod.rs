//! Team-level answer strategies over a set of [`CandidateAnswer`]s.
//!
//! Selectors (`bon`, `mv`, `wmv`, `fewtool`) return one candidate; scores
//! (`avg`, `pass_at_k`) need a gold answer and a [`Judge`]. Every rule is
//! invariant under permutation of its input: the last tie-break is always
//! the lowest agent id.

mod judge;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::CandidateAnswer;

pub use judge::{ExactMatchJudge, Judge, ModelJudge};

/// Confidence sums closer than this are ties.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("no candidates to aggregate")]
    Empty,
    #[error("rule needs a gold answer")]
    MissingGold,
    #[error("k = {k} is outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("`{0}` scores a team; it does not select an answer")]
    NotASelector(AggregationRule),
    #[error("unknown aggregation rule `{0}`")]
    UnknownRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AggregationRule {
    Bon,
    Mv,
    Wmv,
    FewTool,
    Avg,
    /// `None` means k = N.
    PassAtK(Option<usize>),
}

impl AggregationRule {
    pub const SELECTORS: [AggregationRule; 4] = [Self::Bon, Self::Mv, Self::Wmv, Self::FewTool];

    pub fn is_selector(self) -> bool {
        Self::SELECTORS.contains(&self)
    }
}

impl fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bon => f.write_str("bon"),
            Self::Mv => f.write_str("mv"),
            Self::Wmv => f.write_str("wmv"),
            Self::FewTool => f.write_str("fewtool"),
            Self::Avg => f.write_str("avg"),
            Self::PassAtK(None) => f.write_str("pass_at_k"),
            Self::PassAtK(Some(k)) => write!(f, "pass_at_{k}"),
        }
    }
}

impl FromStr for AggregationRule {
    type Err = AggregateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "bon" => Self::Bon,
            "mv" => Self::Mv,
            "wmv" => Self::Wmv,
            "fewtool" => Self::FewTool,
            "avg" => Self::Avg,
            "pass_at_k" | "pass@k" | "pass" => Self::PassAtK(None),
            other => {
                let k = other.strip_prefix("pass_at_").or_else(|| other.strip_prefix("pass@"));
                match k.and_then(|k| k.parse().ok()) {
                    Some(k) => Self::PassAtK(Some(k)),
                    None => return Err(AggregateError::UnknownRule(s.to_string())),
                }
            }
        })
    }
}

impl TryFrom<String> for AggregationRule {
    type Error = AggregateError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AggregationRule> for String {
    fn from(r: AggregationRule) -> String {
        r.to_string()
    }
}

/// Pairwise answer equivalence used to form MV/WMV classes.
pub trait Equivalence {
    fn equivalent(&self, a: &str, b: &str) -> bool;
}

/// Case-insensitive equality after dropping punctuation and collapsing whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedMatch;

pub fn normalize_answer(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .flat_map(|c| if c.is_alphanumeric() { c.to_lowercase().collect::<Vec<_>>() } else { vec![' '] })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Equivalence for NormalizedMatch {
    fn equivalent(&self, a: &str, b: &str) -> bool {
        normalize_answer(a) == normalize_answer(b)
    }
}

impl<J: Judge> Equivalence for J {
    fn equivalent(&self, a: &str, b: &str) -> bool {
        self.judge(a, b)
    }
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= TIE_EPSILON {
        Ordering::Equal
    } else {
        a.partial_cmp(&b).unwrap_or(Ordering::Equal)
    }
}

fn by_agent(candidates: &[CandidateAnswer]) -> Result<Vec<&CandidateAnswer>, AggregateError> {
    if candidates.is_empty() {
        return Err(AggregateError::Empty);
    }
    let mut sorted: Vec<&CandidateAnswer> = candidates.iter().collect();
    sorted.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
    Ok(sorted)
}

/// Highest confidence, then lowest agent id.
fn better_by_confidence(a: &CandidateAnswer, b: &CandidateAnswer) -> bool {
    match cmp_f64(a.confidence, b.confidence) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.agent_id < b.agent_id,
    }
}

pub fn bon(candidates: &[CandidateAnswer]) -> Result<&CandidateAnswer, AggregateError> {
    let sorted = by_agent(candidates)?;
    Ok(sorted.into_iter().reduce(|best, c| if better_by_confidence(c, best) { c } else { best }).expect("nonempty"))
}

pub fn fewtool(candidates: &[CandidateAnswer]) -> Result<&CandidateAnswer, AggregateError> {
    let sorted = by_agent(candidates)?;
    Ok(sorted
        .into_iter()
        .reduce(|best, c| match c.tool_calls.cmp(&best.tool_calls) {
            Ordering::Less => c,
            Ordering::Greater => best,
            Ordering::Equal if better_by_confidence(c, best) => c,
            Ordering::Equal => best,
        })
        .expect("nonempty"))
}

/// One equivalence class of answers.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerClass<'a> {
    pub members: Vec<&'a CandidateAnswer>,
    /// Highest-confidence member, lowest agent id among equals.
    pub representative: &'a CandidateAnswer,
    pub total_confidence: f64,
}

/// Groups candidates into classes. Each candidate joins the first class
/// (in agent-id order of founding member) whose founder it matches.
pub fn answer_classes<'a>(candidates: &'a [CandidateAnswer], eq: &dyn Equivalence) -> Result<Vec<AnswerClass<'a>>, AggregateError> {
    let mut classes: Vec<Vec<&CandidateAnswer>> = Vec::new();
    for c in by_agent(candidates)? {
        match classes.iter_mut().find(|cls| eq.equivalent(&cls[0].answer, &c.answer)) {
            Some(cls) => cls.push(c),
            None => classes.push(vec![c]),
        }
    }
    Ok(classes
        .into_iter()
        .map(|members| {
            let representative = members.iter().copied().reduce(|b, c| if better_by_confidence(c, b) { c } else { b }).expect("nonempty");
            let total_confidence = members.iter().map(|c| c.confidence).sum();
            AnswerClass { members, representative, total_confidence }
        })
        .collect())
}

/// Secondary rules shared by MV and WMV: higher max confidence, then lower agent id of the representative.
fn class_tiebreak(a: &AnswerClass, b: &AnswerClass) -> bool {
    better_by_confidence(a.representative, b.representative)
}

fn pick_class<'a>(classes: Vec<AnswerClass<'a>>, primary: impl Fn(&AnswerClass, &AnswerClass) -> Ordering) -> &'a CandidateAnswer {
    classes
        .into_iter()
        .reduce(|best, c| match primary(&c, &best) {
            Ordering::Greater => c,
            Ordering::Less => best,
            Ordering::Equal if class_tiebreak(&c, &best) => c,
            Ordering::Equal => best,
        })
        .expect("nonempty")
        .representative
}

/// Plurality class; returns its representative.
pub fn mv<'a>(candidates: &'a [CandidateAnswer], eq: &dyn Equivalence) -> Result<&'a CandidateAnswer, AggregateError> {
    let classes = answer_classes(candidates, eq)?;
    Ok(pick_class(classes, |a, b| a.members.len().cmp(&b.members.len())))
}

/// Class with the largest summed confidence; returns its representative.
pub fn wmv<'a>(candidates: &'a [CandidateAnswer], eq: &dyn Equivalence) -> Result<&'a CandidateAnswer, AggregateError> {
    let classes = answer_classes(candidates, eq)?;
    Ok(pick_class(classes, |a, b| cmp_f64(a.total_confidence, b.total_confidence)))
}

/// Mean per-candidate correctness.
pub fn avg(candidates: &[CandidateAnswer], gold: Option<&str>, judge: &dyn Judge) -> Result<f64, AggregateError> {
    let gold = gold.ok_or(AggregateError::MissingGold)?;
    if candidates.is_empty() {
        return Err(AggregateError::Empty);
    }
    let correct = candidates.iter().filter(|c| judge.judge(&c.answer, gold)).count();
    Ok(correct as f64 / candidates.len() as f64)
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// `1 - C(n-c, k) / C(n, k)`: probability that a uniformly drawn k-subset
/// of n candidates contains at least one of the c correct ones.
pub fn pass_at_k_counts(n: usize, c: usize, k: usize) -> Result<f64, AggregateError> {
    if k == 0 || k > n {
        return Err(AggregateError::KOutOfRange { k, n });
    }
    let c = c.min(n);
    let miss = binomial(n - c, k);
    let all = binomial(n, k);
    // one rounding step: the exact ratio (all - miss) / all, correctly rounded
    Ok((all - miss) as f64 / all as f64)
}

pub fn pass_at_k(candidates: &[CandidateAnswer], gold: Option<&str>, judge: &dyn Judge, k: usize) -> Result<f64, AggregateError> {
    let gold = gold.ok_or(AggregateError::MissingGold)?;
    if candidates.is_empty() {
        return Err(AggregateError::Empty);
    }
    let c = candidates.iter().filter(|c| judge.judge(&c.answer, gold)).count();
    pass_at_k_counts(candidates.len(), c, k)
}

/// The answer chosen by a selector rule.
pub fn select<'a>(rule: AggregationRule, candidates: &'a [CandidateAnswer], eq: &dyn Equivalence) -> Result<&'a CandidateAnswer, AggregateError> {
    match rule {
        AggregationRule::Bon => bon(candidates),
        AggregationRule::Mv => mv(candidates, eq),
        AggregationRule::Wmv => wmv(candidates, eq),
        AggregationRule::FewTool => fewtool(candidates),
        other => Err(AggregateError::NotASelector(other)),
    }
}

/// Per-rule scores for one candidate set against a gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub n: usize,
    pub pass_at_n: f64,
    pub bon: f64,
    pub mv: f64,
    pub wmv: f64,
    pub fewtool: f64,
    pub avg: f64,
}

pub fn score_row(candidates: &[CandidateAnswer], gold: &str, judge: &dyn Judge) -> Result<ScoreRow, AggregateError> {
    let hit = |c: &CandidateAnswer| if judge.judge(&c.answer, gold) { 1.0 } else { 0.0 };
    Ok(ScoreRow {
        n: candidates.len(),
        pass_at_n: pass_at_k(candidates, Some(gold), judge, candidates.len())?,
        bon: hit(bon(candidates)?),
        mv: hit(mv(candidates, &NormalizedMatch)?),
        wmv: hit(wmv(candidates, &NormalizedMatch)?),
        fewtool: hit(fewtool(candidates)?),
        avg: avg(candidates, Some(gold), judge)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(id: &str, answer: &str, conf: f64, tools: u32) -> CandidateAnswer {
        CandidateAnswer::new(id, answer, conf, tools)
    }

    #[test]
    fn bon_strict_argmax_and_tie() {
        let set = [c("a0", "X", 0.9, 1), c("a1", "Y", 0.4, 1)];
        assert_eq!(bon(&set).unwrap().answer, "X");
        let tie = [c("a1", "Y", 0.7, 1), c("a0", "X", 0.7, 1)];
        assert_eq!(bon(&tie).unwrap().answer, "X");
        let one = [c("z", "Q", 0.1, 3)];
        assert_eq!(bon(&one).unwrap(), &one[0]);
        assert_eq!(bon(&[]).unwrap_err(), AggregateError::Empty);
    }

    #[test]
    fn mv_plurality_and_ties() {
        let set = [c("a", "X", 0.5, 1), c("b", "x.", 0.5, 1), c("c", "Y", 0.9, 1)];
        assert_eq!(normalize_answer(&mv(&set, &NormalizedMatch).unwrap().answer), "x");
        let count_beats_conf = [c("a", "X", 0.9, 1), c("b", "Y", 0.5, 1), c("c", "Y", 0.6, 1)];
        assert_eq!(mv(&count_beats_conf, &NormalizedMatch).unwrap().answer, "Y");
        let tie = [c("a", "X", 0.9, 1), c("b", "Y", 0.8, 1)];
        assert_eq!(mv(&tie, &NormalizedMatch).unwrap().answer, "X");
    }

    #[test]
    fn wmv_sums_confidence() {
        let y_wins = [c("a", "X", 0.9, 1), c("b", "Y", 0.5, 1), c("c", "Y", 0.5, 1)];
        assert_eq!(wmv(&y_wins, &NormalizedMatch).unwrap().answer, "Y");
        let x_wins = [c("a", "X", 0.9, 1), c("b", "Y", 0.5, 1), c("c", "Y", 0.3, 1)];
        assert_eq!(wmv(&x_wins, &NormalizedMatch).unwrap().answer, "X");
    }

    #[test]
    fn fewtool_argmin_then_confidence() {
        let set = [c("a", "X", 0.5, 40), c("b", "Y", 0.5, 12)];
        assert_eq!(fewtool(&set).unwrap().answer, "Y");
        let tie = [c("a", "X", 0.9, 10), c("b", "Y", 0.5, 10)];
        assert_eq!(fewtool(&tie).unwrap().answer, "X");
    }

    #[test]
    fn avg_and_pass_at_k() {
        let j = ExactMatchJudge;
        let set = [c("a", "1853", 0.5, 1), c("b", "1885", 0.5, 1)];
        assert_eq!(avg(&set, Some("1853"), &j).unwrap(), 0.5);
        assert_eq!(avg(&set, None, &j).unwrap_err(), AggregateError::MissingGold);
        assert_eq!(pass_at_k(&set, Some("1853"), &j, 1).unwrap(), 0.5);
        assert_eq!(pass_at_k(&set, Some("1853"), &j, 2).unwrap(), 1.0);
        assert_eq!(pass_at_k(&set, Some("1900"), &j, 2).unwrap(), 0.0);
        assert_eq!(pass_at_k(&set, Some("1853"), &j, 3).unwrap_err(), AggregateError::KOutOfRange { k: 3, n: 2 });
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(8, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(60, 30), 118264581564861424);
    }

    #[test]
    fn rule_names_round_trip() {
        for r in [AggregationRule::Bon, AggregationRule::Mv, AggregationRule::Wmv, AggregationRule::FewTool, AggregationRule::Avg, AggregationRule::PassAtK(None), AggregationRule::PassAtK(Some(3))] {
            assert_eq!(r.to_string().parse::<AggregationRule>().unwrap(), r);
        }
        assert_eq!("pass@2".parse::<AggregationRule>().unwrap(), AggregationRule::PassAtK(Some(2)));
        assert!("median".parse::<AggregationRule>().is_err());
        assert!(matches!(select(AggregationRule::Avg, &[c("a", "x", 0.1, 1)], &NormalizedMatch), Err(AggregateError::NotASelector(_))));
    }

    fn candidate_set() -> impl Strategy<Value = Vec<CandidateAnswer>> {
        prop::collection::vec((0..3usize, 0..=10u32, 1..=5u32), 1..=5).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (a, conf, t))| c(&format!("a{i}"), ["X", "Y", "Z"][a], conf as f64 / 10.0, t))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn selectors_are_order_independent(set in candidate_set(), rot in 0..5usize) {
            let mut shuffled = set.clone();
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
            for rule in AggregationRule::SELECTORS {
                prop_assert_eq!(select(rule, &set, &NormalizedMatch).unwrap(), select(rule, &shuffled, &NormalizedMatch).unwrap());
            }
        }

        #[test]
        fn pass_at_k_monotone_in_k(n in 1..12usize, c in 0..12usize) {
            let c = c.min(n);
            let mut prev = 0.0;
            for k in 1..=n {
                let p = pass_at_k_counts(n, c, k).unwrap();
                prop_assert!(p + 1e-12 >= prev);
                prev = p;
            }
            prop_assert_eq!(prev, if c >= 1 { 1.0 } else { 0.0 });
        }

        #[test]
        fn wmv_equals_mv_under_equal_confidence(set in candidate_set(), conf in 1..=10u32) {
            let flat: Vec<_> = set.iter().map(|x| c(x.agent_id.as_str(), &x.answer, conf as f64 / 10.0, x.tool_calls)).collect();
            let a = wmv(&flat, &NormalizedMatch).unwrap();
            let b = mv(&flat, &NormalizedMatch).unwrap();
            prop_assert_eq!(normalize_answer(&a.answer), normalize_answer(&b.answer));
        }

        #[test]
        fn singleton_rules_agree(a in 0..3usize, conf in 0..=10u32) {
            let one = [c("a0", ["X", "Y", "Z"][a], conf as f64 / 10.0, 1)];
            prop_assert_eq!(bon(&one).unwrap(), mv(&one, &NormalizedMatch).unwrap());
            prop_assert_eq!(bon(&one).unwrap(), wmv(&one, &NormalizedMatch).unwrap());
        }
    }
}
