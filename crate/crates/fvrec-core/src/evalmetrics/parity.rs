//! Recommendation-parity metrics between two demographic groups: the
//! eligibility-adjusted chi-square statistic and the extended Kendall-Tau
//! distance between group-aggregated top-k lists.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::evalmetrics::ranking::{rank_discount, RecommendationList};

/// Missing-item penalty in the Kendall-Tau extension.
pub const KT_MISSING_PENALTY: f64 = 0.5;

/// Minimum per-cell expected count for an item to enter the chi-square.
pub const CHI2_MIN_EXPECTED: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chi2Result {
    pub statistic: f64,
    pub items_used: usize,
}

/// Per-user view the parity metrics consume: top-k list, group bit, and the
/// sorted fold-in items defining eligibility (a user is eligible for an item
/// they have not interacted with).
pub struct GroupedLists<'a> {
    pub lists: &'a [RecommendationList],
    pub groups: &'a [u8],
    pub foldin: &'a [Vec<u32>],
    pub n_items: usize,
}

impl GroupedLists<'_> {
    fn validate(&self) -> Result<()> {
        if self.lists.len() != self.groups.len() || self.lists.len() != self.foldin.len() {
            return Err(Error::Shape("grouped lists length mismatch".into()));
        }
        if !self.groups.contains(&0) || !self.groups.contains(&1) {
            return Err(Error::Metric("a group has no users".into()));
        }
        Ok(())
    }
}

/// Chi-square statistic over the most-recommended items whose per-group
/// expected counts all reach [`CHI2_MIN_EXPECTED`]. Expected counts are
/// eligibility-adjusted: exp(item, g) = total(item) * eligible_g(item) /
/// eligible(item). `weights` resamples users (None = all weight 1).
pub fn chi2_at_k(data: &GroupedLists<'_>, weights: Option<&[f64]>) -> Result<Chi2Result> {
    data.validate()?;
    let n = data.lists.len();
    let w = |u: usize| weights.map_or(1.0, |w| w[u]);
    // observed counts per (item, group) and fold-in hits for eligibility
    let mut observed: Vec<[f64; 2]> = vec![[0.0; 2]; data.n_items];
    let mut foldin_hits: Vec<[f64; 2]> = vec![[0.0; 2]; data.n_items];
    let mut group_sizes = [0.0f64; 2];
    for u in 0..n {
        let g = data.groups[u] as usize;
        let wu = w(u);
        if wu == 0.0 {
            continue;
        }
        group_sizes[g] += wu;
        for &item in &data.lists[u].items {
            observed[item as usize][g] += wu;
        }
        for &item in &data.foldin[u] {
            foldin_hits[item as usize][g] += wu;
        }
    }
    // most-recommended first, ties by item index
    let mut order: Vec<u32> = (0..data.n_items as u32).collect();
    order.sort_by(|&a, &b| {
        let ta = observed[a as usize][0] + observed[a as usize][1];
        let tb = observed[b as usize][0] + observed[b as usize][1];
        tb.partial_cmp(&ta).unwrap().then(a.cmp(&b))
    });
    let mut statistic = 0.0;
    let mut items_used = 0;
    for &item in &order {
        let i = item as usize;
        let total = observed[i][0] + observed[i][1];
        if total == 0.0 {
            break;
        }
        let eligible = [
            group_sizes[0] - foldin_hits[i][0],
            group_sizes[1] - foldin_hits[i][1],
        ];
        let elig_total = eligible[0] + eligible[1];
        if elig_total <= 0.0 {
            break;
        }
        let expected = [
            total * eligible[0] / elig_total,
            total * eligible[1] / elig_total,
        ];
        if expected[0] < CHI2_MIN_EXPECTED || expected[1] < CHI2_MIN_EXPECTED {
            break;
        }
        for g in 0..2 {
            let diff = observed[i][g] - expected[g];
            statistic += diff * diff / expected[g];
        }
        items_used += 1;
    }
    if items_used == 0 {
        return Err(Error::Metric(format!(
            "no item reaches the chi-square expectation threshold of {CHI2_MIN_EXPECTED}"
        )));
    }
    Ok(Chi2Result {
        statistic,
        items_used,
    })
}

/// Group-aggregated top-k list: an item's score is the sum over the group's
/// users of the rank discount at which the item appears; top k by score,
/// ties by ascending item index.
fn group_ranking(data: &GroupedLists<'_>, group: u8, k: usize, weights: Option<&[f64]>) -> Vec<u32> {
    let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
    for u in 0..data.lists.len() {
        if data.groups[u] != group {
            continue;
        }
        let wu = weights.map_or(1.0, |w| w[u]);
        if wu == 0.0 {
            continue;
        }
        for (rank0, &item) in data.lists[u].items.iter().enumerate() {
            *scores.entry(item).or_insert(0.0) += wu * rank_discount(rank0 + 1);
        }
    }
    let mut items: Vec<(u32, f64)> = scores.into_iter().collect();
    items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    items.truncate(k);
    items.into_iter().map(|(i, _)| i).collect()
}

/// Extended Kendall-Tau between two ranked lists: pair penalties over the
/// union (1 for definite discordance, `p` for pairs visible in only one
/// list), normalized so identical lists give 1 and disjoint lists -1.
pub fn kendall_tau_lists(list_a: &[u32], list_b: &[u32], p: f64) -> Result<f64> {
    if list_a.is_empty() || list_b.is_empty() {
        return Err(Error::Metric("kendall-tau on an empty list".into()));
    }
    let rank_a: BTreeMap<u32, usize> = list_a.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let rank_b: BTreeMap<u32, usize> = list_b.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let mut union: Vec<u32> = list_a.iter().chain(list_b.iter()).copied().collect();
    union.sort_unstable();
    union.dedup();
    let mut distance = 0.0;
    for (x, &i) in union.iter().enumerate() {
        for &j in &union[x + 1..] {
            let (ai, aj) = (rank_a.get(&i), rank_a.get(&j));
            let (bi, bj) = (rank_b.get(&i), rank_b.get(&j));
            distance += match ((ai, aj), (bi, bj)) {
                // both items in both lists: plain concordance
                ((Some(ai), Some(aj)), (Some(bi), Some(bj))) => {
                    if (ai < aj) == (bi < bj) {
                        0.0
                    } else {
                        1.0
                    }
                }
                // both in A, one in B: B implies the present item is ahead
                ((Some(ai), Some(aj)), (Some(_), None)) => f64::from(aj < ai),
                ((Some(ai), Some(aj)), (None, Some(_))) => f64::from(ai < aj),
                ((Some(_), None), (Some(bi), Some(bj))) => f64::from(bj < bi),
                ((None, Some(_)), (Some(bi), Some(bj))) => f64::from(bi < bj),
                // i only in one list, j only in the other: definite discordance
                ((Some(_), None), (None, Some(_))) => 1.0,
                ((None, Some(_)), (Some(_), None)) => 1.0,
                // both only in the same list: no information, penalty p
                ((Some(_), Some(_)), (None, None)) => p,
                ((None, None), (Some(_), Some(_))) => p,
                _ => unreachable!("items outside both lists cannot be in the union"),
            };
        }
    }
    let (na, nb) = (list_a.len() as f64, list_b.len() as f64);
    let max_distance = na * nb + p * (na * (na - 1.0) / 2.0 + nb * (nb - 1.0) / 2.0);
    Ok(1.0 - 2.0 * distance / max_distance)
}

/// Kendall-Tau@k between the two groups' aggregated rankings.
pub fn kendall_tau_at_k(
    data: &GroupedLists<'_>,
    k: usize,
    weights: Option<&[f64]>,
) -> Result<f64> {
    data.validate()?;
    let list0 = group_ranking(data, 0, k, weights);
    let list1 = group_ranking(data, 1, k, weights);
    kendall_tau_lists(&list0, &list1, KT_MISSING_PENALTY)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk_lists(specs: &[(u8, Vec<u32>)], n_items: usize) -> (Vec<RecommendationList>, Vec<u8>, Vec<Vec<u32>>, usize) {
        let lists: Vec<RecommendationList> = specs
            .iter()
            .enumerate()
            .map(|(u, (_, items))| RecommendationList {
                user: u,
                items: items.clone(),
            })
            .collect();
        let groups: Vec<u8> = specs.iter().map(|(g, _)| *g).collect();
        let foldin: Vec<Vec<u32>> = specs.iter().map(|_| Vec::new()).collect();
        (lists, groups, foldin, n_items)
    }

    #[test]
    fn chi2_identical_recommendations_is_zero() {
        let mut specs = Vec::new();
        for _ in 0..10 {
            specs.push((0u8, vec![0u32, 1, 2]));
            specs.push((1u8, vec![0u32, 1, 2]));
        }
        let (lists, groups, foldin, n_items) = mk_lists(&specs, 5);
        let data = GroupedLists {
            lists: &lists,
            groups: &groups,
            foldin: &foldin,
            n_items,
        };
        let r = chi2_at_k(&data, None).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert_eq!(r.items_used, 3);
    }

    #[test]
    fn chi2_hand_example() {
        // one item; 50 users per group, all eligible; observed 10 vs 20
        let mut specs = Vec::new();
        for i in 0..50 {
            specs.push((0u8, if i < 10 { vec![0u32] } else { vec![] }));
        }
        for i in 0..50 {
            specs.push((1u8, if i < 20 { vec![0u32] } else { vec![] }));
        }
        let (lists, groups, foldin, n_items) = mk_lists(&specs, 1);
        let data = GroupedLists {
            lists: &lists,
            groups: &groups,
            foldin: &foldin,
            n_items,
        };
        let r = chi2_at_k(&data, None).unwrap();
        assert!((r.statistic - 10.0 / 3.0).abs() < 1e-12, "{}", r.statistic);
        assert_eq!(r.items_used, 1);
    }

    #[test]
    fn chi2_doubles_when_counts_and_eligibility_double() {
        let build = |scale: usize| {
            let mut specs = Vec::new();
            for i in 0..50 * scale {
                specs.push((0u8, if i < 10 * scale { vec![0u32, 1] } else { vec![1u32] }));
            }
            for i in 0..50 * scale {
                specs.push((1u8, if i < 20 * scale { vec![0u32, 1] } else { vec![1u32] }));
            }
            specs
        };
        let stat = |specs: &[(u8, Vec<u32>)]| {
            let (lists, groups, foldin, n_items) = mk_lists(specs, 2);
            let data = GroupedLists {
                lists: &lists,
                groups: &groups,
                foldin: &foldin,
                n_items,
            };
            chi2_at_k(&data, None).unwrap().statistic
        };
        let s1 = stat(&build(1));
        let s2 = stat(&build(2));
        assert!((s2 - 2.0 * s1).abs() < 1e-9, "{s1} vs {s2}");
    }

    #[test]
    fn chi2_eligibility_adjusts_expectations() {
        // half of group 1 already interacted with item 0 (fold-in), so they
        // are ineligible and item 0's expectation shifts toward group 0.
        let mut specs = Vec::new();
        for _ in 0..20 {
            specs.push((0u8, vec![0u32]));
        }
        for _ in 0..20 {
            specs.push((1u8, vec![1u32]));
        }
        let (lists, groups, mut foldin, n_items) = mk_lists(&specs, 2);
        for item in foldin.iter_mut().skip(20).take(10) {
            item.push(0);
        }
        let data = GroupedLists {
            lists: &lists,
            groups: &groups,
            foldin: &foldin,
            n_items,
        };
        // item 0: total 20, eligible (20, 10) -> expected (40/3, 20/3);
        //   (20 - 40/3)^2/(40/3) + (0 - 20/3)^2/(20/3) = 10/3 + 20/3 = 10
        // item 1: total 20, eligible (20, 20) -> expected (10, 10) -> 20
        let r = chi2_at_k(&data, None).unwrap();
        assert_eq!(r.items_used, 2);
        assert!((r.statistic - 30.0).abs() < 1e-9, "{}", r.statistic);
    }

    #[test]
    fn chi2_no_item_meets_threshold_is_metric_error() {
        let specs = vec![(0u8, vec![0u32]), (1u8, vec![1u32])];
        let (lists, groups, foldin, n_items) = mk_lists(&specs, 2);
        let data = GroupedLists {
            lists: &lists,
            groups: &groups,
            foldin: &foldin,
            n_items,
        };
        assert!(matches!(chi2_at_k(&data, None), Err(Error::Metric(_))));
    }

    #[test]
    fn kendall_identical_lists_is_one() {
        let v = kendall_tau_lists(&[1, 2, 3, 4], &[1, 2, 3, 4], 0.5).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_disjoint_lists_is_minus_one() {
        let v = kendall_tau_lists(&[1, 2, 3], &[4, 5, 6], 0.5).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_hand_enumerated_example() {
        // A = [a b c d e], B = [b a c f g]; shared a,b,c with one swap.
        // Pairs: (a,b) discordant = 1; shared-vs-missing pairs all concordant;
        // (d,f),(d,g),(e,f),(e,g) = 4; (d,e) and (f,g) = 2p = 1. K = 6.
        // Kmax = 25 + 20p = 35 -> 1 - 12/35 = 23/35.
        let a = [0u32, 1, 2, 3, 4];
        let b = [1u32, 0, 2, 5, 6];
        let v = kendall_tau_lists(&a, &b, 0.5).unwrap();
        assert!((v - 23.0 / 35.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn kendall_group_metric_is_symmetric() {
        let specs = vec![
            (0u8, vec![0u32, 1, 2, 3]),
            (0u8, vec![1u32, 0, 4, 2]),
            (1u8, vec![4u32, 3, 0, 5]),
            (1u8, vec![3u32, 4, 5, 1]),
        ];
        let (lists, groups, foldin, n_items) = mk_lists(&specs, 6);
        let data = GroupedLists {
            lists: &lists,
            groups: &groups,
            foldin: &foldin,
            n_items,
        };
        let a = kendall_tau_at_k(&data, 4, None).unwrap();
        let flipped: Vec<u8> = groups.iter().map(|g| 1 - g).collect();
        let data_f = GroupedLists {
            lists: &lists,
            groups: &flipped,
            foldin: &foldin,
            n_items,
        };
        let b = kendall_tau_at_k(&data_f, 4, None).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn group_with_no_users_is_metric_error() {
        let specs = vec![(0u8, vec![0u32]), (0u8, vec![1u32])];
        let (lists, groups, foldin, n_items) = mk_lists(&specs, 2);
        let data = GroupedLists {
            lists: &lists,
            groups: &groups,
            foldin: &foldin,
            n_items,
        };
        assert!(matches!(
            kendall_tau_at_k(&data, 2, None),
            Err(Error::Metric(_))
        ));
    }
}
