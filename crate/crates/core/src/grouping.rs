//! Optimal grouping of uneven windows.
//!
//! Windows are the items of a multiple subset-sum problem with identical
//! capacities: each group holds at most `g_s` tokens and the goal is to use few
//! groups. The partition repeatedly runs a 0/1 subset-sum knapsack on the
//! remaining windows and removes the selected subset until nothing is left.
//! The sweep then picks the group size whose partition has the lowest attention
//! FLOPs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Selects a subset of `sizes` whose sum is the largest achievable value not
/// exceeding `capacity`. Indices are returned in increasing order.
///
/// Bottom-up table `K[i][w]` over the first `i` items and capacity `w`; ties
/// among optimal subsets are broken by backtracking from the last item, taking
/// item `i - 1` whenever `K[i][w] != K[i - 1][w]`.
pub fn knapsack(capacity: usize, sizes: &[usize]) -> Vec<usize> {
    let n = sizes.len();
    let width = capacity + 1;
    let mut table = vec![0usize; (n + 1) * width];

    for i in 1..=n {
        let size = sizes[i - 1];
        let (prev, cur) = table.split_at_mut(i * width);
        let prev = &prev[(i - 1) * width..];
        let cur = &mut cur[..width];
        for w in 1..width {
            cur[w] = if size <= w {
                (size + prev[w - size]).max(prev[w])
            } else {
                prev[w]
            };
        }
    }

    let mut res = table[n * width + capacity];
    let mut w = capacity;
    let mut picked = Vec::new();
    for i in (1..=n).rev() {
        if res == 0 {
            break;
        }
        if res == table[(i - 1) * width + w] {
            continue;
        }
        picked.push(i - 1);
        res -= sizes[i - 1];
        w -= sizes[i - 1];
    }
    picked.reverse();
    picked
}

/// Assignment of windows to equal-capacity groups.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupPlan {
    /// Slots per group, `g_s`.
    pub group_size: usize,
    /// Window ids per group, in selection order.
    pub groups: Vec<Vec<usize>>,
    /// Tokens placed in each group.
    pub fill: Vec<usize>,
    /// `group_size - fill` per group.
    pub padding: Vec<usize>,
}

impl GroupPlan {
    /// Number of groups `n_g`.
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Total padding slots.
    pub fn total_padding(&self) -> usize {
        self.padding.iter().sum()
    }

    /// Attention FLOPs of this plan at channel width `channels`.
    pub fn cost(&self, channels: usize) -> Result<u64> {
        attention_cost(self.group_size, self.num_groups(), channels)
    }

    /// Renames window indices: index `k` becomes `ids[k]`. Used to lift a plan
    /// computed over the nonempty windows back to layout window ids.
    pub fn remap(&self, ids: &[usize]) -> Result<GroupPlan> {
        let groups = self
            .groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&k| {
                        ids.get(k).copied().ok_or_else(|| {
                            Error::PlanMismatch(alloc::format!("window index {k} has no id"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupPlan {
            groups,
            ..self.clone()
        })
    }
}

fn check_sizes(sizes: &[usize]) -> Result<usize> {
    if sizes.is_empty() {
        return Err(Error::EmptySizes);
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::ZeroSize(i));
    }
    Ok(sizes.iter().copied().max().unwrap_or(0))
}

/// Partitions windows into groups of capacity `group_size` by repeated knapsack.
pub fn partition(group_size: usize, sizes: &[usize]) -> Result<GroupPlan> {
    let max_size = check_sizes(sizes)?;
    if group_size < max_size {
        return Err(Error::CapacityBelowMax {
            group_size,
            max_size,
        });
    }

    let mut remaining: Vec<usize> = (0..sizes.len()).collect();
    let mut remaining_sizes: Vec<usize> = sizes.to_vec();
    let mut groups = Vec::new();
    let mut fill = Vec::new();

    while !remaining.is_empty() {
        let picked = knapsack(group_size, &remaining_sizes);
        // group_size >= every size >= 1, so at least one window fits
        debug_assert!(!picked.is_empty());
        let group: Vec<usize> = picked.iter().map(|&k| remaining[k]).collect();
        fill.push(picked.iter().map(|&k| remaining_sizes[k]).sum());
        groups.push(group);

        let mut keep = picked.iter().peekable();
        let mut next = Vec::with_capacity(remaining.len() - picked.len());
        let mut next_sizes = Vec::with_capacity(remaining.len() - picked.len());
        for (k, (&id, &size)) in remaining.iter().zip(&remaining_sizes).enumerate() {
            if keep.peek() == Some(&&k) {
                keep.next();
            } else {
                next.push(id);
                next_sizes.push(size);
            }
        }
        remaining = next;
        remaining_sizes = next_sizes;
    }

    let padding = fill.iter().map(|f| group_size - f).collect();
    Ok(GroupPlan {
        group_size,
        groups,
        fill,
        padding,
    })
}

/// FLOPs of multi-head attention over `num_groups` groups of `group_size`
/// tokens with `channels` channels: `n_g * (4 g_s C^2 + 2 g_s^2 C)`.
pub fn attention_cost(group_size: usize, num_groups: usize, channels: usize) -> Result<u64> {
    let g = group_size as u128;
    let c = channels as u128;
    let linear = g
        .checked_mul(c)
        .and_then(|gc| gc.checked_mul(c))
        .and_then(|x| x.checked_mul(4));
    let quadratic = g
        .checked_mul(g)
        .and_then(|gg| gg.checked_mul(c))
        .and_then(|x| x.checked_mul(2));
    let total = linear
        .zip(quadratic)
        .and_then(|(l, q)| l.checked_add(q))
        .and_then(|per_group| per_group.checked_mul(num_groups as u128))
        .ok_or(Error::Overflow)?;
    u64::try_from(total).map_err(|_| Error::Overflow)
}

/// Group sizes to evaluate in the sweep.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Candidates {
    /// Every integer from the largest window to the total token count.
    #[default]
    Full,
    /// Only these sizes; values below the largest window are dropped.
    List(Vec<usize>),
}

/// One evaluated group size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Candidate {
    /// `g_s`.
    pub group_size: usize,
    /// `n_g` from the partition.
    pub num_groups: usize,
    /// Attention FLOPs.
    pub flops: u64,
}

/// Result of a group-size sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostReport {
    /// Channel width used for the costs.
    pub channels: usize,
    /// Every evaluated size, ascending.
    pub candidates: Vec<Candidate>,
    /// Cheapest size (smallest among ties).
    pub optimum: Candidate,
}

/// Sweeps every group size from `max(sizes)` to `sum(sizes)` and returns the
/// cheapest plan.
pub fn optimal_grouping(sizes: &[usize], channels: usize) -> Result<(GroupPlan, CostReport)> {
    optimal_grouping_with(sizes, channels, &Candidates::Full)
}

/// [`optimal_grouping`] over a chosen candidate set.
pub fn optimal_grouping_with(
    sizes: &[usize],
    channels: usize,
    candidates: &Candidates,
) -> Result<(GroupPlan, CostReport)> {
    let max_size = check_sizes(sizes)?;
    if channels == 0 {
        return Err(Error::ZeroDimension("channels"));
    }
    let total: usize = sizes.iter().sum();
    let range: Vec<usize> = match candidates {
        Candidates::Full => (max_size..=total).collect(),
        Candidates::List(list) => {
            let mut list: Vec<usize> = list.iter().copied().filter(|&g| g >= max_size).collect();
            list.sort_unstable();
            list.dedup();
            list
        }
    };
    if range.is_empty() {
        return Err(Error::NoFeasibleCandidate(max_size));
    }

    let mut evaluated = Vec::with_capacity(range.len());
    let mut best: Option<(GroupPlan, Candidate)> = None;
    for group_size in range {
        let plan = partition(group_size, sizes)?;
        let flops = plan.cost(channels)?;
        let cand = Candidate {
            group_size,
            num_groups: plan.num_groups(),
            flops,
        };
        evaluated.push(cand);
        // strict: the first (smallest) optimum is kept
        if best.as_ref().is_none_or(|(_, b)| flops < b.flops) {
            best = Some((plan, cand));
        }
    }
    let (plan, optimum) = best.expect("range is nonempty");
    Ok((
        plan,
        CostReport {
            channels,
            candidates: evaluated,
            optimum,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_best(capacity: usize, sizes: &[usize]) -> usize {
        (0u32..1 << sizes.len())
            .map(|m| {
                (0..sizes.len())
                    .filter(|i| m >> i & 1 == 1)
                    .map(|i| sizes[i])
                    .sum::<usize>()
            })
            .filter(|&s| s <= capacity)
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn knapsack_small() {
        assert_eq!(brute_force_best(10, &[7, 3, 5]), 10);
        assert_eq!(knapsack(10, &[7, 3, 5]), vec![0, 1]);
        assert!(knapsack(5, &[]).is_empty());
        assert_eq!(knapsack(49, &[49, 49, 49]).len(), 1);
        assert!(knapsack(2, &[3, 4]).is_empty());
    }

    #[test]
    fn partition_saturated() {
        let plan = partition(49, &[49, 49, 49, 49]).unwrap();
        assert_eq!(plan.num_groups(), 4);
        assert!(plan.groups.iter().all(|g| g.len() == 1));
        assert_eq!(plan.total_padding(), 0);
    }

    #[test]
    fn partition_two_full_bins() {
        let plan = partition(12, &[7, 3, 5, 6, 3]).unwrap();
        assert_eq!(plan.num_groups(), 2);
        assert_eq!(plan.fill, vec![12, 12]);
        assert_eq!(plan.total_padding(), 0);
        // backtracking from the last item settles on {7, 5} first
        assert_eq!(plan.groups, vec![vec![0, 2], vec![1, 3, 4]]);
    }

    #[test]
    fn partition_errors() {
        assert_eq!(
            partition(5, &[7, 3]),
            Err(Error::CapacityBelowMax {
                group_size: 5,
                max_size: 7
            })
        );
        assert_eq!(partition(5, &[]), Err(Error::EmptySizes));
        assert_eq!(partition(5, &[2, 0]), Err(Error::ZeroSize(1)));
    }

    #[test]
    fn cost_model() {
        assert_eq!(attention_cost(49, 4, 128).unwrap(), 15_303_680);
        assert_eq!(attention_cost(1, 1, 1).unwrap(), 6);
        assert_eq!(
            attention_cost(30, 10, 64).unwrap(),
            2 * attention_cost(30, 5, 64).unwrap()
        );
        assert_eq!(
            attention_cost(usize::MAX, usize::MAX, usize::MAX),
            Err(Error::Overflow)
        );
    }

    #[test]
    fn sweep_unmasked_picks_window_area() {
        let (plan, report) = optimal_grouping(&[49; 64], 128).unwrap();
        assert_eq!(plan.group_size, 49);
        assert_eq!(plan.num_groups(), 64);
        assert_eq!(report.optimum.group_size, 49);
        assert_eq!(report.candidates.len(), 64 * 49 - 49 + 1);
    }

    #[test]
    fn sweep_single_token() {
        let c = 16;
        let (plan, report) = optimal_grouping(&[1], c).unwrap();
        assert_eq!(plan.group_size, 1);
        assert_eq!(plan.num_groups(), 1);
        assert_eq!(report.optimum.flops, (4 * c * c + 2 * c) as u64);
    }

    #[test]
    fn candidate_override() {
        let sizes = [20, 30, 40, 10];
        let (plan, report) =
            optimal_grouping_with(&sizes, 32, &Candidates::List(vec![10, 49, 98, 49])).unwrap();
        assert_eq!(
            report
                .candidates
                .iter()
                .map(|c| c.group_size)
                .collect::<Vec<_>>(),
            vec![49, 98]
        );
        assert!(plan.group_size == 49 || plan.group_size == 98);
        assert_eq!(
            optimal_grouping_with(&sizes, 32, &Candidates::List(vec![5])),
            Err(Error::NoFeasibleCandidate(40))
        );
    }

    #[test]
    fn remap_ids() {
        let plan = partition(12, &[7, 3, 5, 6, 3]).unwrap();
        let lifted = plan.remap(&[10, 11, 12, 13, 14]).unwrap();
        assert_eq!(lifted.groups, vec![vec![10, 12], vec![11, 13, 14]]);
        assert!(plan.remap(&[1]).is_err());
    }
}
