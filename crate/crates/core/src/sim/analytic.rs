//! Closed enumerations over (crowd, crowd, mapped) tag triples. Written
//! without the aggregation module so it can check it.

use std::collections::BTreeMap;

use super::model::Confusion;
use crate::aggregate::Split;
use crate::corpus::UniversalTag;

const N: usize = UniversalTag::COUNT;

fn answer_dist(p: f64, gold: usize, confusion: &Confusion) -> [f64; N] {
    let g = UniversalTag::from_index(gold).unwrap();
    let mut d = [0.0; N];
    for (t, slot) in d.iter_mut().enumerate() {
        *slot = if t == gold {
            p
        } else {
            (1.0 - p) * confusion.prob(g, UniversalTag::from_index(t).unwrap())
        };
    }
    d
}

/// Probability of each triple given gold, visited with a callback. Gold is
/// uniform over the 17 tags.
fn enumerate(p_crowd: f64, p_bangor: f64, confusion: &Confusion, mut visit: impl FnMut(usize, [usize; 3], f64)) {
    let prior = 1.0 / N as f64;
    for gold in 0..N {
        let c = answer_dist(p_crowd, gold, confusion);
        let b = answer_dist(p_bangor, gold, confusion);
        for (a, pa) in c.iter().enumerate() {
            if *pa == 0.0 {
                continue;
            }
            for (bb, pb) in c.iter().enumerate() {
                if *pb == 0.0 {
                    continue;
                }
                for (m, pm) in b.iter().enumerate() {
                    if *pm == 0.0 {
                        continue;
                    }
                    visit(gold, [a, bb, m], prior * pa * pb * pm);
                }
            }
        }
    }
}

/// Expected majority-vote accuracy with 1/3 credit per tag on a three-way tie.
pub fn analytic_mv_accuracy(p_crowd: f64, p_bangor: f64, confusion: &Confusion) -> f64 {
    let mut acc = 0.0;
    enumerate(p_crowd, p_bangor, confusion, |gold, [a, b, m], p| {
        let votes_for_gold = [a, b, m].iter().filter(|t| **t == gold).count();
        let credit = if votes_for_gold >= 2 {
            1.0
        } else if votes_for_gold == 1 && a != b && a != m && b != m {
            1.0 / 3.0
        } else {
            0.0
        };
        acc += p * credit;
    });
    acc
}

/// Expected share of each vote split.
pub fn analytic_split_distribution(p_crowd: f64, p_bangor: f64, confusion: &Confusion) -> BTreeMap<Split, f64> {
    let mut out: BTreeMap<Split, f64> = Split::ALL.iter().map(|s| (*s, 0.0)).collect();
    enumerate(p_crowd, p_bangor, confusion, |_, [a, b, m], p| {
        let split = if a == b && b == m {
            Split::Unanimous3_0
        } else if a == b {
            Split::BangorInMinority
        } else if m == a || m == b {
            Split::BangorInMajority
        } else {
            Split::ThreeWay
        };
        *out.get_mut(&split).unwrap() += p;
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits() {
        let u = Confusion::Uniform;
        assert!((analytic_mv_accuracy(1.0, 1.0, &u) - 1.0).abs() < 1e-12);
        assert!((analytic_mv_accuracy(1.0, 0.0, &u) - 1.0).abs() < 1e-12);
        let s = analytic_split_distribution(1.0, 1.0, &u);
        assert!((s[&Split::Unanimous3_0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_hand_derivation_under_uniform_confusion() {
        // Gold wins when at least two of three agree with it; a single gold
        // vote scores 1/3 when the two wrong votes differ (prob 15/16).
        for (p, q) in [(0.88, 0.8), (0.5, 0.7), (0.0, 0.0), (0.7, 1.0)] {
            let (w, v) = (1.0 - p, 1.0 - q);
            let two_plus = p * p + 2.0 * p * w * q;
            let one = 2.0 * p * w * v * (15.0 / 16.0) + w * w * q * (15.0 / 16.0);
            let expected = two_plus + one / 3.0;
            let got = analytic_mv_accuracy(p, q, &Confusion::Uniform);
            assert!((got - expected).abs() < 1e-12, "{p} {q}: {got} vs {expected}");
        }
    }

    #[test]
    fn split_shares_sum_to_one() {
        let s = analytic_split_distribution(0.7, 0.5, &Confusion::Uniform);
        let total: f64 = s.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Unanimous needs three gold votes or three identical wrong ones.
        let expected = 0.7 * 0.7 * 0.5 + 0.3 * 0.3 * 0.5 / 256.0;
        assert!((s[&Split::Unanimous3_0] - expected).abs() < 1e-12);
    }
}
