//! Pack planning: partition the trie's trajectories into packs whose
//! materialized token counts fit a budget, reusing shared prefixes as much as
//! possible.
//!
//! The planner walks each root's subtree bottom-up carrying "bundles": sets
//! of trajectories that will be materialized together. At every node the
//! bundles coming up from below may be merged; a merge is admissible when the
//! merged bundle, plus the path back to the root, still fits the budget. With
//! few bundles the merge grouping is solved exactly by a subset-partition DP
//! over bitmasks; past `dp_width` bundles it falls back to first-fit
//! decreasing. Merged costs are always recomputed from the induced subtree
//! rather than maintained incrementally.
//!
//! [`brute_force_plan`] enumerates every set partition (small batches only)
//! and serves as the optimality oracle for the heuristic.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use thiserror::Error;

use crate::trie::Trie;

/// Maximum trajectory count accepted by the brute-force oracle.
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// A partition of the batch into budget-feasible packs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackPlan {
    /// Trajectory-id sets; together they partition the batch.
    pub packs: Vec<BTreeSet<String>>,
    pub budget: usize,
    /// Induced-subtree token count of each pack.
    pub cost_per_pack: Vec<usize>,
    pub total_cost: usize,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(
        "trajectory `{traj_id}` needs {length} tokens but the budget is {budget}; \
         sequence splitting is out of scope"
    )]
    InfeasibleTrajectory {
        traj_id: String,
        length: usize,
        budget: usize,
    },
    #[error("dp_width must be at least 1")]
    InvalidDpWidth,
    #[error("{count} trajectories exceed the brute-force limit of {limit}")]
    TooManyTrajectories { count: usize, limit: usize },
}

/// Outcome of checking a plan against its trie.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationReport {
    Ok,
    Violation(PlanViolation),
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, ValidationReport::Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanViolation {
    Partition(String),
    Budget {
        pack: usize,
        cost: usize,
        budget: usize,
    },
    Cost {
        pack: usize,
        stated: usize,
        actual: usize,
    },
    Total {
        stated: usize,
        actual: usize,
    },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::Partition(msg) => write!(f, "partition violation: {msg}"),
            PlanViolation::Budget { pack, cost, budget } => {
                write!(f, "pack {pack} costs {cost} tokens, over budget {budget}")
            }
            PlanViolation::Cost {
                pack,
                stated,
                actual,
            } => write!(f, "pack {pack} states cost {stated}, actual {actual}"),
            PlanViolation::Total { stated, actual } => {
                write!(f, "total_cost states {stated}, actual {actual}")
            }
        }
    }
}

/// Tokens materialized when the named trajectories share one pack: the union
/// of their root-to-terminal paths, measured in run tokens.
pub fn pack_cost<'a>(trie: &Trie, members: impl IntoIterator<Item = &'a str>) -> usize {
    let terminals = members.into_iter().filter_map(|id| trie.terminal_node(id));
    induced_cost_from(trie, None, terminals)
}

/// Induced-subtree size from `top` (inclusive) down to the given terminals.
/// `None` measures from the forest roots.
fn induced_cost_from(
    trie: &Trie,
    top: Option<usize>,
    terminals: impl IntoIterator<Item = usize>,
) -> usize {
    let mut visited = HashSet::new();
    let mut cost = 0usize;
    for terminal in terminals {
        let mut cur = terminal;
        loop {
            if !visited.insert(cur) {
                break;
            }
            cost += trie.nodes[cur].run_len();
            if top == Some(cur) {
                break;
            }
            match trie.nodes[cur].parent {
                Some(p) => cur = p,
                None => break,
            }
        }
    }
    cost
}

/// Index-based view of the batch: trajectory ids sorted, each with its
/// terminal node, so bundles can be small integer sets.
struct Batch<'t> {
    trie: &'t Trie,
    ids: Vec<String>,
    terminals: Vec<usize>,
}

impl<'t> Batch<'t> {
    fn new(trie: &'t Trie) -> Self {
        let ids: Vec<String> = trie.trajectory_ids().map(str::to_string).collect();
        let terminals = ids
            .iter()
            .map(|id| trie.terminal_node(id).expect("id from the trie"))
            .collect();
        Batch {
            trie,
            ids,
            terminals,
        }
    }

    fn cost_at(&self, top: Option<usize>, members: &[u32]) -> usize {
        induced_cost_from(
            self.trie,
            top,
            members.iter().map(|&m| self.terminals[m as usize]),
        )
    }

    /// Rejects any trajectory longer than the budget, naming the worst one.
    fn check_feasible(&self, budget: usize) -> Result<(), PlanError> {
        let mut worst: Option<(usize, &str)> = None;
        for id in &self.ids {
            let len = self.trie.trajectory_len(id).unwrap();
            if len > budget && worst.is_none_or(|(l, _)| len > l) {
                worst = Some((len, id));
            }
        }
        match worst {
            Some((length, traj_id)) => Err(PlanError::InfeasibleTrajectory {
                traj_id: traj_id.to_string(),
                length,
                budget,
            }),
            None => Ok(()),
        }
    }

    fn into_plan(self, budget: usize, mut member_sets: Vec<Vec<u32>>) -> PackPlan {
        member_sets.sort_by_key(|m| m.iter().copied().min());
        let packs: Vec<BTreeSet<String>> = member_sets
            .iter()
            .map(|m| m.iter().map(|&i| self.ids[i as usize].clone()).collect())
            .collect();
        let cost_per_pack: Vec<usize> = member_sets.iter().map(|m| self.cost_at(None, m)).collect();
        let total_cost = cost_per_pack.iter().sum();
        PackPlan {
            packs,
            budget,
            cost_per_pack,
            total_cost,
        }
    }
}

#[derive(Debug, Clone)]
struct Bundle {
    /// Sorted trajectory indices.
    members: Vec<u32>,
    /// Induced-subtree tokens measured from the current node, inclusive.
    cost: usize,
}

fn merge_members(groups: &[&Bundle]) -> Vec<u32> {
    let mut members: Vec<u32> = groups
        .iter()
        .flat_map(|b| b.members.iter().copied())
        .collect();
    members.sort_unstable();
    members
}

/// Exact subset-partition DP over at most `dp_width` bundles: minimize total
/// merged cost, then group count. Singleton groups are always feasible, so a
/// solution exists.
fn merge_exact(batch: &Batch, node: usize, bundles: Vec<Bundle>, capacity: usize) -> Vec<Bundle> {
    let k = bundles.len();
    let full = (1usize << k) - 1;

    let mut cost = vec![0usize; full + 1];
    let mut feasible = vec![false; full + 1];
    for mask in 1..=full {
        let group: Vec<&Bundle> = (0..k)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| &bundles[i])
            .collect();
        let members = merge_members(&group);
        cost[mask] = batch.cost_at(Some(node), &members);
        feasible[mask] = cost[mask] <= capacity;
    }

    const UNSET: (usize, usize) = (usize::MAX, usize::MAX);
    let mut best = vec![UNSET; full + 1];
    let mut choice = vec![0usize; full + 1];
    best[0] = (0, 0);
    for mask in 1..=full {
        let low = mask & mask.wrapping_neg();
        // Enumerate submasks of `mask` containing the lowest set bit.
        let mut sub = mask;
        while sub > 0 {
            if sub & low != 0 && feasible[sub] && best[mask ^ sub] != UNSET {
                let cand = (best[mask ^ sub].0 + cost[sub], best[mask ^ sub].1 + 1);
                if cand < best[mask] {
                    best[mask] = cand;
                    choice[mask] = sub;
                }
            }
            sub = (sub - 1) & mask;
        }
        debug_assert_ne!(best[mask], UNSET, "singletons are always feasible");
    }

    let mut merged = Vec::new();
    let mut mask = full;
    while mask > 0 {
        let sub = choice[mask];
        let group: Vec<&Bundle> = (0..k)
            .filter(|i| sub >> i & 1 == 1)
            .map(|i| &bundles[i])
            .collect();
        merged.push(Bundle {
            members: merge_members(&group),
            cost: cost[sub],
        });
        mask ^= sub;
    }
    merged.sort_by_key(|b| b.members[0]);
    merged
}

/// First-fit decreasing by cost; union costs are recomputed per attempt.
fn merge_ffd(batch: &Batch, node: usize, mut bundles: Vec<Bundle>, capacity: usize) -> Vec<Bundle> {
    bundles.sort_by(|a, b| b.cost.cmp(&a.cost).then(a.members[0].cmp(&b.members[0])));
    let mut groups: Vec<Bundle> = Vec::new();
    for bundle in bundles {
        let mut placed = false;
        for group in groups.iter_mut() {
            let members = merge_members(&[group, &bundle]);
            let cost = batch.cost_at(Some(node), &members);
            if cost <= capacity {
                group.members = members;
                group.cost = cost;
                placed = true;
                break;
            }
        }
        if !placed {
            groups.push(bundle);
        }
    }
    groups.sort_by_key(|b| b.members[0]);
    groups
}

fn plan_subtree(batch: &Batch, node: usize, budget: usize, dp_width: usize) -> Vec<Bundle> {
    let trie = batch.trie;
    let mut bundles: Vec<Bundle> = Vec::new();
    for &child in &trie.nodes[node].children {
        bundles.extend(plan_subtree(batch, child, budget, dp_width));
    }
    // Every open bundle now also materializes this node's run.
    let run_len = trie.nodes[node].run_len();
    for bundle in &mut bundles {
        bundle.cost += run_len;
    }
    // Trajectories terminating here open fresh singleton bundles.
    for id in &trie.nodes[node].leaf_ids {
        let index = batch
            .ids
            .binary_search(id)
            .expect("terminal id is in the batch") as u32;
        bundles.push(Bundle {
            members: vec![index],
            cost: run_len,
        });
    }

    if bundles.len() <= 1 {
        return bundles;
    }
    // Merges must leave room for the path from the root down to this node.
    let capacity = budget - trie.nodes[node].start_depth.min(budget);
    if bundles.len() <= dp_width {
        merge_exact(batch, node, bundles, capacity)
    } else {
        merge_ffd(batch, node, bundles, capacity)
    }
}

/// Plans packs bottom-up over the trie.
///
/// The budget must cover the longest trajectory; `dp_width` bounds the bundle
/// count handled by the exact merge DP (greedy first-fit beyond it).
pub fn plan_packs(trie: &Trie, budget: usize, dp_width: usize) -> Result<PackPlan, PlanError> {
    if dp_width == 0 {
        return Err(PlanError::InvalidDpWidth);
    }
    let batch = Batch::new(trie);
    batch.check_feasible(budget)?;

    let mut member_sets = Vec::new();
    for &root in &trie.roots {
        for bundle in plan_subtree(&batch, root, budget, dp_width) {
            member_sets.push(bundle.members);
        }
    }
    Ok(batch.into_plan(budget, member_sets))
}

/// Enumerates every set partition of the batch (guarded to
/// [`BRUTE_FORCE_LIMIT`] trajectories) and returns a feasible partition
/// minimizing total cost, then pack count, tie-broken by the
/// lexicographically smallest partition encoding.
pub fn brute_force_plan(trie: &Trie, budget: usize) -> Result<PackPlan, PlanError> {
    let batch = Batch::new(trie);
    let n = batch.ids.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(PlanError::TooManyTrajectories {
            count: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    batch.check_feasible(budget)?;

    // Subset costs once; partitions only look them up.
    let full = (1usize << n) - 1;
    let cost: Vec<usize> = (0..=full)
        .map(|mask| {
            let members: Vec<u32> = (0..n as u32).filter(|i| mask >> i & 1 == 1).collect();
            batch.cost_at(None, &members)
        })
        .collect();

    // Restricted-growth strings enumerate partitions in lexicographic order;
    // keeping only strictly better candidates makes the first optimum win.
    let mut assignment = vec![0usize; n];
    let mut best: Option<(usize, usize, Vec<usize>)> = None;
    enumerate_partitions(&mut assignment, 1, 1, &mut |assignment| {
        let n_groups = assignment.iter().copied().max().unwrap() + 1;
        let mut masks = vec![0usize; n_groups];
        for (i, &g) in assignment.iter().enumerate() {
            masks[g] |= 1 << i;
        }
        let mut total = 0usize;
        for &m in &masks {
            if cost[m] > budget {
                return;
            }
            total += cost[m];
        }
        let key = (total, n_groups);
        if best.as_ref().is_none_or(|(t, g, _)| key < (*t, *g)) {
            best = Some((total, n_groups, assignment.to_vec()));
        }
    });

    let (_, n_groups, assignment) =
        best.expect("a partition into singletons is feasible after the length check");
    let mut member_sets = vec![Vec::new(); n_groups];
    for (i, &g) in assignment.iter().enumerate() {
        member_sets[g].push(i as u32);
    }
    Ok(batch.into_plan(budget, member_sets))
}

fn enumerate_partitions(
    assignment: &mut [usize],
    index: usize,
    n_groups: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if index == assignment.len() {
        visit(assignment);
        return;
    }
    for group in 0..=n_groups {
        assignment[index] = group;
        let next = n_groups.max(group + 1);
        enumerate_partitions(assignment, index + 1, next, visit);
    }
}

/// Checks partition coverage, per-pack budgets, and cost arithmetic; reports
/// the first violation found.
pub fn validate_plan(plan: &PackPlan, trie: &Trie) -> ValidationReport {
    use ValidationReport::Violation;

    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for pack in &plan.packs {
        for id in pack {
            if trie.terminal_node(id).is_none() {
                return Violation(PlanViolation::Partition(format!(
                    "pack contains unknown trajectory `{id}`"
                )));
            }
            if !seen.insert(id) {
                return Violation(PlanViolation::Partition(format!(
                    "trajectory `{id}` appears in more than one pack"
                )));
            }
        }
    }
    if seen.len() != trie.n_trajectories {
        let missing = trie
            .trajectory_ids()
            .find(|id| !seen.contains(id))
            .unwrap_or("?");
        return Violation(PlanViolation::Partition(format!(
            "trajectory `{missing}` is missing from the plan"
        )));
    }
    if plan.cost_per_pack.len() != plan.packs.len() {
        return Violation(PlanViolation::Partition(format!(
            "{} packs but {} cost entries",
            plan.packs.len(),
            plan.cost_per_pack.len()
        )));
    }

    for (i, &stated) in plan.cost_per_pack.iter().enumerate() {
        if stated > plan.budget {
            return Violation(PlanViolation::Budget {
                pack: i,
                cost: stated,
                budget: plan.budget,
            });
        }
    }

    for (i, (pack, &stated)) in plan.packs.iter().zip(&plan.cost_per_pack).enumerate() {
        let actual = pack_cost(trie, pack.iter().map(String::as_str));
        if actual != stated {
            return Violation(PlanViolation::Cost {
                pack: i,
                stated,
                actual,
            });
        }
    }

    let actual_total: usize = plan.cost_per_pack.iter().sum();
    if actual_total != plan.total_cost {
        return Violation(PlanViolation::Total {
            stated: plan.total_cost,
            actual: actual_total,
        });
    }
    ValidationReport::Ok
}
