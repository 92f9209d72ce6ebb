//! Evaluation suite over test-question judgments and vote records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::aggregate::{Split, VoteRecord};
use crate::corpus::UniversalTag;
use crate::rng::derive_rng;
use crate::router::TaskKind;

/// Valid judgments collected for one test question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestJudgments {
    pub test_id: String,
    pub gold: UniversalTag,
    pub bangor: UniversalTag,
    pub crowd: Vec<UniversalTag>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no test questions")]
    Empty,
    #[error("test {0} has no crowd judgments")]
    NoJudgments(String),
    #[error("k must be at least 1")]
    ZeroK,
}

fn counts(tags: impl IntoIterator<Item = UniversalTag>) -> [u32; UniversalTag::COUNT] {
    let mut c = [0; UniversalTag::COUNT];
    for t in tags {
        c[t.index()] += 1;
    }
    c
}

/// Returns (tied set size, whether gold is in it) for the plurality of
/// `counts`. The tied set is empty only if every count is zero.
fn plurality(counts: &[u32; UniversalTag::COUNT], gold: UniversalTag) -> (u32, bool) {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return (0, false);
    }
    let tied = counts.iter().filter(|&&c| c == max).count() as u32;
    (tied, counts[gold.index()] == max)
}

/// Credit for a plurality against gold: 1/|tied set| if gold is tied for
/// the top count, else 0.
pub fn plurality_credit(tags: &[UniversalTag], gold: UniversalTag) -> f64 {
    match plurality(&counts(tags.iter().copied()), gold) {
        (n, true) => 1.0 / n as f64,
        _ => 0.0,
    }
}

fn check(tests: &[TestJudgments]) -> Result<(), MetricsError> {
    if tests.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(t) = tests.iter().find(|t| t.crowd.is_empty()) {
        return Err(MetricsError::NoJudgments(t.test_id.clone()));
    }
    Ok(())
}

pub fn mv_accuracy(tests: &[TestJudgments]) -> Result<f64, MetricsError> {
    check(tests)?;
    let total: f64 = tests.iter().map(|t| plurality_credit(&t.crowd, t.gold)).sum();
    Ok(total / tests.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SubsetMode {
    /// Exhaustive when C(n,k) <= cap, else Monte-Carlo.
    Auto { cap: u64, samples: u32, seed: u64 },
    Exhaustive,
    MonteCarlo { samples: u32, seed: u64 },
}

impl Default for SubsetMode {
    fn default() -> Self {
        SubsetMode::Auto {
            cap: 10_000,
            samples: 10_000,
            seed: 0,
        }
    }
}

/// Exact non-negative fraction. Arithmetic is checked; overflow discards
/// exactness rather than producing a wrong value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub numer: u128,
    pub denom: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Fraction {
    fn new(numer: u128, denom: u128) -> Self {
        let g = gcd(numer, denom).max(1);
        Fraction {
            numer: numer / g,
            denom: denom / g,
        }
    }

    fn checked_add(self, other: Fraction) -> Option<Fraction> {
        let g = gcd(self.denom, other.denom);
        let denom = (self.denom / g).checked_mul(other.denom)?;
        let a = self.numer.checked_mul(denom / self.denom)?;
        let b = other.numer.checked_mul(denom / other.denom)?;
        Some(Fraction::new(a.checked_add(b)?, denom))
    }

    pub fn to_f64(self) -> f64 {
        self.numer as f64 / self.denom as f64
    }
}

pub fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

fn lcm_upto(m: u32) -> u128 {
    (1..=m as u128).fold(1, |acc, x| acc / gcd(acc, x) * x)
}

/// Visits every size-`k` index subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPlusOne {
    pub k: usize,
    /// Mean over evaluated tests; `None` when none had k judgments.
    pub value: Option<f64>,
    /// Exact value, present when every evaluated test was enumerated.
    pub exact: Option<Fraction>,
    pub evaluated: usize,
    pub skipped: usize,
    pub sampled: usize,
}

enum TestValue {
    Exact(Fraction),
    Sampled(f64),
}

fn exhaustive_value(test: &TestJudgments, k: usize, subsets: u64) -> Fraction {
    let n = test.crowd.len();
    let l = lcm_upto(k as u32 + 1);
    let mut units: u128 = 0;
    let mut c = [0u32; UniversalTag::COUNT];
    c[test.bangor.index()] += 1;
    for_each_subset(n, k, |idx| {
        for &i in idx {
            c[test.crowd[i].index()] += 1;
        }
        if let (tied, true) = plurality(&c, test.gold) {
            units += l / tied as u128;
        }
        for &i in idx {
            c[test.crowd[i].index()] -= 1;
        }
    });
    Fraction::new(units, l * subsets as u128)
}

fn sampled_value(test: &TestJudgments, k: usize, samples: u32, seed: u64, index: usize) -> f64 {
    let mut rng = derive_rng(seed, &[index as u64, k as u64]);
    let n = test.crowd.len();
    let mut total = 0.0;
    let mut c = [0u32; UniversalTag::COUNT];
    c[test.bangor.index()] += 1;
    for _ in 0..samples {
        let idx = sample(&mut rng, n, k);
        for i in idx.iter() {
            c[test.crowd[i].index()] += 1;
        }
        if let (tied, true) = plurality(&c, test.gold) {
            total += 1.0 / tied as f64;
        }
        for i in idx.iter() {
            c[test.crowd[i].index()] -= 1;
        }
    }
    total / samples as f64
}

/// Majority-vote accuracy re-estimated over size-`k` subsets of each test's
/// crowd judgments plus its mapped tag. Tests with fewer than `k`
/// judgments are skipped and counted.
pub fn accuracy_k_plus_1(
    tests: &[TestJudgments],
    k: usize,
    mode: SubsetMode,
) -> Result<KPlusOne, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if tests.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut values = Vec::with_capacity(tests.len());
    let mut skipped = 0;
    for (index, test) in tests.iter().enumerate() {
        let n = test.crowd.len();
        if n < k {
            skipped += 1;
            continue;
        }
        let subsets = binomial(n as u64, k as u64);
        let value = match mode {
            SubsetMode::Exhaustive => TestValue::Exact(exhaustive_value(
                test,
                k,
                subsets.expect("subset count fits in u64"),
            )),
            SubsetMode::MonteCarlo { samples, seed } => {
                TestValue::Sampled(sampled_value(test, k, samples, seed, index))
            }
            SubsetMode::Auto { cap, samples, seed } => match subsets {
                Some(s) if s <= cap => TestValue::Exact(exhaustive_value(test, k, s)),
                _ => TestValue::Sampled(sampled_value(test, k, samples, seed, index)),
            },
        };
        values.push(value);
    }
    if skipped > 0 {
        warn!("accuracy({k}+1): skipped {skipped} test(s) with fewer than {k} judgments");
    }

    let evaluated = values.len();
    let sampled = values
        .iter()
        .filter(|v| matches!(v, TestValue::Sampled(_)))
        .count();
    let exact = if sampled == 0 && evaluated > 0 {
        values
            .iter()
            .try_fold(Fraction::new(0, 1), |acc, v| match v {
                TestValue::Exact(f) => acc.checked_add(*f),
                TestValue::Sampled(_) => None,
            })
            .and_then(|sum| {
                Some(Fraction::new(
                    sum.numer,
                    sum.denom.checked_mul(evaluated as u128)?,
                ))
            })
    } else {
        None
    };
    let value = match exact {
        Some(f) => Some(f.to_f64()),
        None if evaluated > 0 => {
            let sum: f64 = values
                .iter()
                .map(|v| match v {
                    TestValue::Exact(f) => f.to_f64(),
                    TestValue::Sampled(x) => *x,
                })
                .sum();
            Some(sum / evaluated as f64)
        }
        None => None,
    };
    Ok(KPlusOne {
        k,
        value,
        exact,
        evaluated,
        skipped,
        sampled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleJudgmentStats {
    pub accuracy: f64,
    pub agreement_with_mv: f64,
}

/// Per test: share of judgments equal to gold, and share equal to the
/// plurality tag. Both averaged over tests without weighting.
pub fn single_judgment_stats(tests: &[TestJudgments]) -> Result<SingleJudgmentStats, MetricsError> {
    check(tests)?;
    let (mut acc, mut agree) = (0.0, 0.0);
    for t in tests {
        let c = counts(t.crowd.iter().copied());
        let n = t.crowd.len() as f64;
        acc += c[t.gold.index()] as f64 / n;
        agree += *c.iter().max().unwrap() as f64 / n;
    }
    let tests = tests.len() as f64;
    Ok(SingleJudgmentStats {
        accuracy: acc / tests,
        agreement_with_mv: agree / tests,
    })
}

pub fn split_counts<'a>(records: impl IntoIterator<Item = &'a VoteRecord>) -> BTreeMap<Split, usize> {
    let mut out: BTreeMap<Split, usize> = Split::ALL.into_iter().map(|s| (s, 0)).collect();
    for r in records {
        *out.get_mut(&r.split).unwrap() += 1;
    }
    out
}

/// 100 * count / total per split category; `None` for no records.
pub fn vote_split_percentages<'a>(
    records: impl IntoIterator<Item = &'a VoteRecord>,
) -> Option<BTreeMap<Split, f64>> {
    let counts = split_counts(records);
    let total: usize = counts.values().sum();
    (total > 0).then(|| {
        counts
            .into_iter()
            .map(|(s, c)| (s, 100.0 * c as f64 / total as f64))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Recall {
    Value(f64),
    /// No gold tests for this tag; rendered as "X".
    NotApplicable(NotApplicable),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NotApplicable {
    X,
}

impl Recall {
    pub fn value(self) -> Option<f64> {
        match self {
            Recall::Value(v) => Some(v),
            Recall::NotApplicable(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRecall {
    pub recall: BTreeMap<UniversalTag, Recall>,
    pub average: Option<f64>,
}

pub fn per_tag_recall(tests: &[TestJudgments]) -> TagRecall {
    let mut credit = [0.0f64; UniversalTag::COUNT];
    let mut seen = [0u32; UniversalTag::COUNT];
    for t in tests {
        seen[t.gold.index()] += 1;
        credit[t.gold.index()] += plurality_credit(&t.crowd, t.gold);
    }
    let recall: BTreeMap<_, _> = UniversalTag::ALL
        .into_iter()
        .map(|tag| {
            let i = tag.index();
            let r = if seen[i] == 0 {
                Recall::NotApplicable(NotApplicable::X)
            } else {
                Recall::Value(credit[i] / seen[i] as f64)
            };
            (tag, r)
        })
        .collect();
    let applicable: Vec<f64> = recall.values().filter_map(|r| r.value()).collect();
    let average = (!applicable.is_empty())
        .then(|| applicable.iter().sum::<f64>() / applicable.len() as f64);
    TagRecall { recall, average }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskKind,
    pub test_questions: usize,
    pub avg_judgments_per_test: Option<f64>,
    pub mv_accuracy: Option<f64>,
    pub avg_single_judgment_accuracy: Option<f64>,
    pub avg_agreement_with_mv: Option<f64>,
    pub accuracy_k_plus_1: Vec<KPlusOne>,
    pub vote_records: usize,
    pub split_counts: BTreeMap<Split, usize>,
    pub split_percentages: Option<BTreeMap<Split, f64>>,
    pub per_tag_recall: TagRecall,
    /// Human-readable markers for sections without data.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub no_data: Vec<String>,
}

pub const REPORT_KS: [usize; 4] = [1, 2, 3, 4];

/// Assembles the report for one task. Tests without judgments are left out
/// of the test-based measures.
pub fn compute_report(
    task: TaskKind,
    tests: &[TestJudgments],
    records: &[&VoteRecord],
    mode: SubsetMode,
) -> MetricsReport {
    let judged: Vec<TestJudgments> = tests.iter().filter(|t| !t.crowd.is_empty()).cloned().collect();
    let mut no_data = Vec::new();
    let sj = single_judgment_stats(&judged).ok();
    let mv = mv_accuracy(&judged).ok();
    if judged.is_empty() {
        no_data.push("no judged test questions".to_string());
    }
    let kp1 = if judged.is_empty() {
        Vec::new()
    } else {
        REPORT_KS
            .iter()
            .map(|&k| accuracy_k_plus_1(&judged, k, mode).expect("k >= 1 and tests non-empty"))
            .collect()
    };
    let split_percentages = vote_split_percentages(records.iter().copied());
    if split_percentages.is_none() {
        no_data.push("no decided vote records".to_string());
    }
    let total_judgments: usize = judged.iter().map(|t| t.crowd.len()).sum();
    MetricsReport {
        task,
        test_questions: judged.len(),
        avg_judgments_per_test: (!judged.is_empty())
            .then(|| total_judgments as f64 / judged.len() as f64),
        mv_accuracy: mv,
        avg_single_judgment_accuracy: sj.map(|s| s.accuracy),
        avg_agreement_with_mv: sj.map(|s| s.agreement_with_mv),
        accuracy_k_plus_1: kp1,
        vote_records: records.len(),
        split_counts: split_counts(records.iter().copied()),
        split_percentages,
        per_tag_recall: per_tag_recall(&judged),
        no_data,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let head: Vec<&str> = reports.iter().map(|r| r.task.as_str()).collect();
    let row = |out: &mut String, label: &str, cells: Vec<String>| {
        let _ = write!(out, "{label:<28}");
        for c in cells {
            let _ = write!(out, "{c:>10}");
        }
        out.push('\n');
    };
    row(&mut out, "", head.iter().map(|s| s.to_string()).collect());
    row(
        &mut out,
        "Avg. # judgments per TQ",
        reports
            .iter()
            .map(|r| r.avg_judgments_per_test.map_or("-".into(), |v| format!("{v:.2}")))
            .collect(),
    );
    row(&mut out, "MV accuracy", reports.iter().map(|r| fmt_opt(r.mv_accuracy)).collect());
    row(
        &mut out,
        "Avg. acc of SJ per TQ",
        reports.iter().map(|r| fmt_opt(r.avg_single_judgment_accuracy)).collect(),
    );
    row(
        &mut out,
        "Avg. agreement with MV",
        reports.iter().map(|r| fmt_opt(r.avg_agreement_with_mv)).collect(),
    );
    for (i, k) in REPORT_KS.iter().enumerate() {
        row(
            &mut out,
            &format!("Accuracy({k}+1)"),
            reports
                .iter()
                .map(|r| fmt_opt(r.accuracy_k_plus_1.get(i).and_then(|x| x.value)))
                .collect(),
        );
    }
    out.push('\n');
    for split in Split::ALL {
        row(
            &mut out,
            &format!("{split} (%)"),
            reports
                .iter()
                .map(|r| {
                    r.split_percentages
                        .as_ref()
                        .map_or("-".into(), |p| format!("{:.2}", p[&split]))
                })
                .collect(),
        );
    }
    out.push('\n');
    for tag in UniversalTag::ALL {
        row(
            &mut out,
            &format!("recall {tag}"),
            reports
                .iter()
                .map(|r| match r.per_tag_recall.recall[&tag] {
                    Recall::Value(v) => format!("{v:.2}"),
                    Recall::NotApplicable(_) => "X".into(),
                })
                .collect(),
        );
    }
    row(
        &mut out,
        "recall average",
        reports.iter().map(|r| fmt_opt(r.per_tag_recall.average)).collect(),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::vote_record;
    use num_rational::Ratio;
    use proptest::prelude::*;
    use UniversalTag::*;

    fn test(gold: UniversalTag, bangor: UniversalTag, crowd: &[(UniversalTag, usize)]) -> TestJudgments {
        TestJudgments {
            test_id: "t".into(),
            gold,
            bangor,
            crowd: crowd
                .iter()
                .flat_map(|&(t, n)| std::iter::repeat_n(t, n))
                .collect(),
        }
    }

    #[test]
    fn mv_examples() {
        let tests = vec![test(Noun, Noun, &[(Noun, 2)]), test(Verb, Noun, &[(Verb, 3), (Noun, 1)])];
        assert_eq!(mv_accuracy(&tests).unwrap(), 1.0);
        assert_eq!(mv_accuracy(&[]), Err(MetricsError::Empty));

        // Both tie-break choices: A wins (1) or B wins (0); mean 0.5.
        let tie = test(Adj, Noun, &[(Adj, 3), (Adv, 3)]);
        let choices = [Adj, Adv].map(|pick| f64::from(u8::from(pick == Adj)));
        assert_eq!(mv_accuracy(&[tie]).unwrap(), choices.iter().sum::<f64>() / 2.0);

        let mut ten: Vec<_> = (0..9).map(|_| test(Noun, Noun, &[(Noun, 2)])).collect();
        ten.push(test(Noun, Noun, &[(Verb, 2)]));
        assert!((mv_accuracy(&ten).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn k_plus_one_hand_enumeration() {
        // Singletons: 9 x (NOUN,NOUN) -> 1, 1 x (VERB,NOUN) -> 1/2.
        let t = test(Noun, Noun, &[(Noun, 9), (Verb, 1)]);
        let r = accuracy_k_plus_1(std::slice::from_ref(&t), 1, SubsetMode::Exhaustive).unwrap();
        assert_eq!(r.exact, Some(Fraction { numer: 19, denom: 20 }));
        assert_eq!(r.value, Some(0.95));

        let all = test(Noun, Noun, &[(Noun, 4)]);
        let r = accuracy_k_plus_1(&[all], 4, SubsetMode::Exhaustive).unwrap();
        assert_eq!(r.value, Some(1.0));
    }

    #[test]
    fn k_plus_one_skips_short_tests() {
        let tests = vec![test(Noun, Noun, &[(Noun, 2)]), test(Noun, Noun, &[(Noun, 5)])];
        let r = accuracy_k_plus_1(&tests, 3, SubsetMode::default()).unwrap();
        assert_eq!((r.evaluated, r.skipped), (1, 1));
        assert_eq!(accuracy_k_plus_1(&tests, 0, SubsetMode::default()), Err(MetricsError::ZeroK));
        let r = accuracy_k_plus_1(&tests[..1], 3, SubsetMode::default()).unwrap();
        assert_eq!(r.value, None);
    }

    #[test]
    fn auto_mode_switches_to_sampling_above_cap() {
        let t = test(Noun, Verb, &[(Noun, 40), (Verb, 16)]);
        assert!(binomial(56, 4).unwrap() > 10_000);
        let r = accuracy_k_plus_1(std::slice::from_ref(&t), 4, SubsetMode::default()).unwrap();
        assert_eq!(r.sampled, 1);
        assert!(r.exact.is_none());
        let r2 = accuracy_k_plus_1(&[t], 2, SubsetMode::default()).unwrap();
        assert_eq!(r2.sampled, 0);
    }

    fn oracle(t: &TestJudgments, k: usize) -> Ratio<u64> {
        // Bitmask enumeration, independent of the lexicographic walker.
        let n = t.crowd.len();
        let mut total = Ratio::from_integer(0u64);
        let mut subsets = 0u64;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            subsets += 1;
            let mut tags = vec![t.bangor];
            tags.extend((0..n).filter(|i| mask & (1 << i) != 0).map(|i| t.crowd[i]));
            let best = UniversalTag::ALL
                .iter()
                .map(|x| tags.iter().filter(|y| *y == x).count())
                .max()
                .unwrap();
            let tied: Vec<_> = UniversalTag::ALL
                .iter()
                .filter(|x| tags.iter().filter(|y| y == x).count() == best)
                .collect();
            if tied.contains(&&t.gold) {
                total += Ratio::new(1, tied.len() as u64);
            }
        }
        total / subsets
    }

    fn small_test() -> impl Strategy<Value = TestJudgments> {
        let tag = (0usize..4).prop_map(|i| UniversalTag::ALL[i]);
        (tag.clone(), tag.clone(), proptest::collection::vec(tag, 1..=8)).prop_map(|(gold, bangor, crowd)| {
            TestJudgments {
                test_id: "p".into(),
                gold,
                bangor,
                crowd,
            }
        })
    }

    proptest! {
        #[test]
        fn exhaustive_matches_bitmask_oracle(t in small_test(), k in 1usize..=4) {
            prop_assume!(t.crowd.len() >= k);
            let r = accuracy_k_plus_1(std::slice::from_ref(&t), k, SubsetMode::Exhaustive).unwrap();
            let expected = oracle(&t, k);
            let exact = r.exact.unwrap();
            prop_assert_eq!(
                Ratio::new(exact.numer as u64, exact.denom as u64),
                expected
            );
        }

        #[test]
        fn fractions_stay_in_unit_interval(tests in proptest::collection::vec(small_test(), 1..6)) {
            let mv = mv_accuracy(&tests).unwrap();
            prop_assert!((0.0..=1.0).contains(&mv));
            let sj = single_judgment_stats(&tests).unwrap();
            prop_assert!((0.0..=1.0).contains(&sj.accuracy));
            prop_assert!((0.0..=1.0).contains(&sj.agreement_with_mv));
            for r in per_tag_recall(&tests).recall.values() {
                if let Some(v) = r.value() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn split_percentages_sum_to_100(
            triples in proptest::collection::vec((0usize..17, 0usize..17, 0usize..17), 1..200)
        ) {
            let records: Vec<_> = triples
                .iter()
                .map(|&(a, b, c)| vote_record(
                    "t".into(),
                    [UniversalTag::ALL[a], UniversalTag::ALL[b]],
                    UniversalTag::ALL[c],
                ))
                .collect();
            let pct = vote_split_percentages(&records).unwrap();
            prop_assert!((pct.values().sum::<f64>() - 100.0).abs() <= 0.01);
        }
    }

    #[test]
    fn single_judgment_examples() {
        let t = test(Noun, Noun, &[(Noun, 8), (Verb, 2)]);
        let s = single_judgment_stats(&[t]).unwrap();
        assert!((s.accuracy - 0.8).abs() < 1e-12);
        assert!((s.agreement_with_mv - 0.8).abs() < 1e-12);

        let a = test(Noun, Noun, &[(Noun, 9), (Verb, 1)]);
        let b = test(Noun, Noun, &[(Noun, 7), (Verb, 3)]);
        let s = single_judgment_stats(&[a, b]).unwrap();
        assert!((s.accuracy - 0.8).abs() < 1e-12);

        let perfect = test(Adj, Adj, &[(Adj, 3)]);
        let s = single_judgment_stats(&[perfect]).unwrap();
        assert_eq!((s.accuracy, s.agreement_with_mv), (1.0, 1.0));
    }

    #[test]
    fn split_percentage_fixture() {
        let mut records = Vec::new();
        let make = |crowd: [UniversalTag; 2], bangor| vote_record("t".into(), crowd, bangor);
        records.extend((0..12).map(|_| make([Det, Det], Det)));
        records.extend((0..5).map(|_| make([Det, Pron], Det)));
        records.extend((0..2).map(|_| make([Det, Det], Pron)));
        records.push(make([Det, Pron], Noun));
        let pct = vote_split_percentages(&records).unwrap();
        assert_eq!(
            pct.values().copied().collect::<Vec<_>>(),
            vec![60.0, 25.0, 10.0, 5.0]
        );
        let unanimous = vec![make([Det, Det], Det)];
        let pct = vote_split_percentages(&unanimous).unwrap();
        assert_eq!(pct[&Split::Unanimous3_0], 100.0);
        assert_eq!(pct[&Split::ThreeWay], 0.0);
        assert!(vote_split_percentages(&[]).is_none());
    }

    #[test]
    fn recall_examples() {
        // A gold ADV word mostly read as a noun.
        let mut tests: Vec<_> = (0..4).map(|_| test(Adv, Noun, &[(Noun, 24), (Adv, 4)])).collect();
        tests.push(test(Adv, Noun, &[(Adv, 10)]));
        let r = per_tag_recall(&tests);
        assert!((r.recall[&Adv].value().unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(r.recall[&Propn], Recall::NotApplicable(NotApplicable::X));
        assert_eq!(serde_json::to_string(&r.recall[&Propn]).unwrap(), "\"X\"");

        let perfect: Vec<_> = [Noun, Verb, Adj].map(|t| test(t, t, &[(t, 2)])).to_vec();
        let r = per_tag_recall(&perfect);
        assert_eq!(r.average, Some(1.0));
        assert!(r.recall.values().filter_map(|v| v.value()).all(|v| v == 1.0));
    }

    #[test]
    fn empty_report_marks_no_data() {
        let report = compute_report(TaskKind::Tsq, &[], &[], SubsetMode::default());
        assert_eq!(report.mv_accuracy, None);
        assert_eq!(report.no_data.len(), 2);
        let table = render_table(&[report]);
        assert!(table.contains("MV accuracy"));
    }
}
