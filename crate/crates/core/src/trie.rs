//! Radix-compressed prefix tree over trajectories.
//!
//! Trajectories from one task share long token prefixes. Storing them in a
//! trie represents every shared prefix once; packing and encoding then scale
//! with node count rather than token count, which is why runs are maximal
//! unbranched segments instead of single tokens.
//!
//! Loss masks ride along verbatim on each run. Two trajectories may share a
//! node only if they agree on both tokens and mask bits over that prefix.
//! Masks derived from message paths always agree; conflicting inputs are
//! rejected rather than silently duplicated.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::trajectory::Trajectory;

/// One maximal unbranched token run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrieNode {
    pub node_id: usize,
    /// Non-empty token run.
    pub tokens: Vec<u32>,
    /// Per-token 0/1 loss mask for the run; may be heterogeneous.
    pub mask_run: Vec<u8>,
    pub parent: Option<usize>,
    /// Child node ids, ordered by the child run's first token.
    pub children: Vec<usize>,
    /// Trajectory ids terminating exactly at the end of this run, sorted.
    pub leaf_ids: Vec<String>,
    /// Trajectories whose path passes through or ends at this node.
    pub leaf_count: usize,
    /// Token offset of the run's first token within any containing
    /// trajectory; equals the total run length of all strict ancestors.
    pub start_depth: usize,
}

impl TrieNode {
    pub fn run_len(&self) -> usize {
        self.tokens.len()
    }
}

/// Prefix forest over a batch of trajectories.
#[derive(Debug, Clone)]
pub struct Trie {
    pub nodes: Vec<TrieNode>,
    /// Root node ids, ordered by first token.
    pub roots: Vec<usize>,
    pub n_trajectories: usize,
    terminals: BTreeMap<String, usize>,
}

/// Token accounting for a trie.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrieStats {
    /// Sum of trajectory lengths.
    pub unpacked_tokens: usize,
    /// Sum of run lengths: tokens materialized when every prefix is shared.
    pub unique_tokens: usize,
    /// unpacked / unique; 1.0 means no sharing.
    pub sharing_ratio: f64,
}

#[derive(Debug, Error)]
pub enum TrieError {
    #[error("no trajectories to build a trie from")]
    Empty,
    #[error("trajectory `{0}` has no tokens")]
    EmptyTrajectory(String),
    #[error("duplicate trajectory id `{0}`")]
    DuplicateTrajId(String),
    #[error(
        "trajectory `{traj_id}` disagrees with an earlier trajectory on the loss mask at \
         shared token offset {offset}; masks over a shared prefix must match"
    )]
    MaskConflict { traj_id: String, offset: usize },
}

impl Trie {
    /// Node where this trajectory terminates, if the id is known.
    pub fn terminal_node(&self, traj_id: &str) -> Option<usize> {
        self.terminals.get(traj_id).copied()
    }

    /// All trajectory ids, sorted.
    pub fn trajectory_ids(&self) -> impl Iterator<Item = &str> {
        self.terminals.keys().map(String::as_str)
    }

    /// Token length of the named trajectory.
    pub fn trajectory_len(&self, traj_id: &str) -> Option<usize> {
        let t = self.terminal_node(traj_id)?;
        Some(self.nodes[t].start_depth + self.nodes[t].run_len())
    }

    /// Reconstructs tokens and mask by walking root → terminal.
    pub fn reconstruct(&self, traj_id: &str) -> Option<(Vec<u32>, Vec<u8>)> {
        let mut chain = Vec::new();
        let mut cur = self.terminal_node(traj_id)?;
        loop {
            chain.push(cur);
            match self.nodes[cur].parent {
                Some(p) => cur = p,
                None => break,
            }
        }
        chain.reverse();
        let mut tokens = Vec::new();
        let mut mask = Vec::new();
        for id in chain {
            tokens.extend_from_slice(&self.nodes[id].tokens);
            mask.extend_from_slice(&self.nodes[id].mask_run);
        }
        Some((tokens, mask))
    }

    /// Canonical text form: depth-first, children ordered by first token,
    /// fields in fixed order, node ids omitted. Equal up to node-id renaming
    /// means equal strings.
    pub fn to_canonical_string(&self) -> String {
        fn walk(trie: &Trie, node_id: usize, indent: usize, out: &mut String) {
            let n = &trie.nodes[node_id];
            let _ = writeln!(
                out,
                "{:indent$}depth={} run={:?} mask={:?} leaves={:?} leaf_count={}",
                "",
                n.start_depth,
                n.tokens,
                n.mask_run,
                n.leaf_ids,
                n.leaf_count,
                indent = indent
            );
            for &c in &n.children {
                walk(trie, c, indent + 2, out);
            }
        }
        let mut out = String::new();
        for &r in &self.roots {
            walk(self, r, 0, &mut out);
        }
        out
    }
}

struct Builder {
    nodes: Vec<TrieNode>,
    roots: Vec<usize>,
    terminals: BTreeMap<String, usize>,
}

impl Builder {
    fn new_node(&mut self, tokens: Vec<u32>, mask: Vec<u8>, parent: Option<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TrieNode {
            node_id: id,
            tokens,
            mask_run: mask,
            parent,
            children: Vec::new(),
            leaf_ids: Vec::new(),
            leaf_count: 0,
            start_depth: 0,
        });
        id
    }

    /// Splits `node` so its run keeps the first `at` tokens; the remainder
    /// moves into a fresh child that inherits children and terminating ids.
    fn split(&mut self, node: usize, at: usize) {
        debug_assert!(at > 0 && at < self.nodes[node].tokens.len());
        let tail_tokens = self.nodes[node].tokens.split_off(at);
        let tail_mask = self.nodes[node].mask_run.split_off(at);
        let tail_children = std::mem::take(&mut self.nodes[node].children);
        let tail_leaves = std::mem::take(&mut self.nodes[node].leaf_ids);
        let tail = self.new_node(tail_tokens, tail_mask, Some(node));
        self.nodes[tail].children = tail_children;
        self.nodes[tail].leaf_ids = tail_leaves;
        for &c in &self.nodes[tail].children.clone() {
            self.nodes[c].parent = Some(tail);
        }
        for (id, terminal) in self.terminals.iter_mut() {
            let _ = id;
            if *terminal == node {
                *terminal = tail;
            }
        }
        self.nodes[node].children = vec![tail];
    }

    fn insert(&mut self, traj: &Trajectory) -> Result<(), TrieError> {
        if traj.tokens.is_empty() {
            return Err(TrieError::EmptyTrajectory(traj.traj_id.clone()));
        }
        if self.terminals.contains_key(&traj.traj_id) {
            return Err(TrieError::DuplicateTrajId(traj.traj_id.clone()));
        }

        let tokens = &traj.tokens;
        let mask = &traj.loss_mask;
        let mut pos = 0usize;
        let mut cur = match self
            .roots
            .iter()
            .copied()
            .find(|&r| self.nodes[r].tokens[0] == tokens[0])
        {
            Some(r) => r,
            None => {
                let root = self.new_node(tokens.clone(), mask.to_vec(), None);
                self.roots.push(root);
                self.nodes[root].leaf_ids.push(traj.traj_id.clone());
                self.terminals.insert(traj.traj_id.clone(), root);
                return Ok(());
            }
        };

        loop {
            let run = &self.nodes[cur].tokens;
            let run_mask = &self.nodes[cur].mask_run;
            let remaining = tokens.len() - pos;
            let mut matched = 0usize;
            while matched < run.len()
                && matched < remaining
                && run[matched] == tokens[pos + matched]
            {
                if run_mask[matched] != mask[pos + matched] {
                    return Err(TrieError::MaskConflict {
                        traj_id: traj.traj_id.clone(),
                        offset: pos + matched,
                    });
                }
                matched += 1;
            }
            debug_assert!(matched > 0, "descended into a non-matching node");

            if matched < run.len() {
                self.split(cur, matched);
            }
            pos += matched;
            if pos == tokens.len() {
                self.nodes[cur].leaf_ids.push(traj.traj_id.clone());
                self.terminals.insert(traj.traj_id.clone(), cur);
                return Ok(());
            }
            match self.nodes[cur]
                .children
                .iter()
                .copied()
                .find(|&c| self.nodes[c].tokens[0] == tokens[pos])
            {
                Some(c) => cur = c,
                None => {
                    let child =
                        self.new_node(tokens[pos..].to_vec(), mask[pos..].to_vec(), Some(cur));
                    self.nodes[cur].children.push(child);
                    self.nodes[child].leaf_ids.push(traj.traj_id.clone());
                    self.terminals.insert(traj.traj_id.clone(), child);
                    return Ok(());
                }
            }
        }
    }

    fn finish(mut self, n_trajectories: usize) -> Trie {
        // Deterministic orderings: roots and children by first token,
        // terminating ids lexicographic.
        self.roots.sort_by_key(|&r| self.nodes[r].tokens[0]);
        for i in 0..self.nodes.len() {
            let mut children = std::mem::take(&mut self.nodes[i].children);
            children.sort_by_key(|&c| self.nodes[c].tokens[0]);
            self.nodes[i].children = children;
            self.nodes[i].leaf_ids.sort();
        }

        // start_depth top-down, leaf_count bottom-up over an explicit stack.
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<usize> = self.roots.clone();
        while let Some(id) = stack.pop() {
            order.push(id);
            let base = self.nodes[id].start_depth + self.nodes[id].run_len();
            let children = self.nodes[id].children.clone();
            for c in children {
                self.nodes[c].start_depth = base;
                stack.push(c);
            }
        }
        for &id in order.iter().rev() {
            let sum: usize = self.nodes[id]
                .children
                .iter()
                .map(|&c| self.nodes[c].leaf_count)
                .sum();
            self.nodes[id].leaf_count = sum + self.nodes[id].leaf_ids.len();
        }

        Trie {
            nodes: self.nodes,
            roots: self.roots,
            n_trajectories,
            terminals: self.terminals,
        }
    }
}

/// Builds the radix trie over a non-empty batch of trajectories.
///
/// Identical trajectories are allowed and share one terminal (all their ids
/// in its `leaf_ids`); duplicate ids and mask disagreement over a shared
/// token prefix are errors.
pub fn build_trie(trajectories: &[Trajectory]) -> Result<Trie, TrieError> {
    if trajectories.is_empty() {
        return Err(TrieError::Empty);
    }
    let mut builder = Builder {
        nodes: Vec::new(),
        roots: Vec::new(),
        terminals: BTreeMap::new(),
    };
    for traj in trajectories {
        builder.insert(traj)?;
    }
    Ok(builder.finish(trajectories.len()))
}

/// Token accounting over the whole trie.
pub fn trie_stats(trie: &Trie) -> TrieStats {
    let unpacked_tokens: usize = trie.nodes.iter().map(|n| n.leaf_count * n.run_len()).sum();
    let unique_tokens: usize = trie.nodes.iter().map(|n| n.run_len()).sum();
    TrieStats {
        unpacked_tokens,
        unique_tokens,
        sharing_ratio: unpacked_tokens as f64 / unique_tokens as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn traj(id: &str, tokens: Vec<u32>) -> Trajectory {
        let loss_mask = vec![1u8; tokens.len()];
        Trajectory {
            traj_id: id.into(),
            tokens,
            loss_mask,
        }
    }

    fn three_trajectories() -> Vec<Trajectory> {
        vec![
            traj("t1", vec![5, 7, 9]),
            traj("t2", vec![5, 7, 8]),
            traj("t3", vec![5, 2]),
        ]
    }

    #[test]
    fn shared_prefixes_become_shared_nodes() {
        let trie = build_trie(&three_trajectories()).unwrap();
        assert_eq!(trie.roots.len(), 1);
        let root = &trie.nodes[trie.roots[0]];
        assert_eq!(root.tokens, vec![5]);
        assert_eq!(root.leaf_count, 3);
        assert_eq!(root.children.len(), 2);
        let first: Vec<u32> = root
            .children
            .iter()
            .map(|&c| trie.nodes[c].tokens[0])
            .collect();
        assert_eq!(first, vec![2, 7]);
        let seven = root
            .children
            .iter()
            .copied()
            .find(|&c| trie.nodes[c].tokens[0] == 7)
            .unwrap();
        assert_eq!(trie.nodes[seven].leaf_count, 2);
        assert_eq!(trie.nodes[seven].children.len(), 2);
    }

    #[test]
    fn single_trajectory_is_one_run() {
        let trie = build_trie(&[traj("a", vec![1, 2, 3])]).unwrap();
        assert_eq!(trie.nodes.len(), 1);
        assert_eq!(trie.nodes[0].tokens, vec![1, 2, 3]);
        assert_eq!(trie.nodes[0].leaf_ids, vec!["a"]);
    }

    #[test]
    fn distinct_first_tokens_make_a_forest() {
        let trie = build_trie(&[traj("a", vec![4]), traj("b", vec![6])]).unwrap();
        assert_eq!(trie.roots.len(), 2);
    }

    #[test]
    fn reconstruction_is_exact() {
        let trajs = three_trajectories();
        let trie = build_trie(&trajs).unwrap();
        for t in &trajs {
            let (tokens, mask) = trie.reconstruct(&t.traj_id).unwrap();
            assert_eq!(tokens, t.tokens);
            assert_eq!(mask, t.loss_mask);
        }
    }

    #[test]
    fn prefix_trajectory_splits_run() {
        // "ab" terminates inside what was a single run "abc".
        let trie = build_trie(&[traj("long", vec![1, 2, 3]), traj("short", vec![1, 2])]).unwrap();
        let (tokens, _) = trie.reconstruct("short").unwrap();
        assert_eq!(tokens, vec![1, 2]);
        let (tokens, _) = trie.reconstruct("long").unwrap();
        assert_eq!(tokens, vec![1, 2, 3]);
        let root = &trie.nodes[trie.roots[0]];
        assert_eq!(root.tokens, vec![1, 2]);
        assert_eq!(root.leaf_ids, vec!["short"]);
        assert_eq!(root.leaf_count, 2);
    }

    #[test]
    fn identical_trajectories_share_a_terminal() {
        let trie = build_trie(&[traj("a", vec![9, 9]), traj("b", vec![9, 9])]).unwrap();
        assert_eq!(trie.nodes.len(), 1);
        assert_eq!(trie.nodes[0].leaf_ids, vec!["a", "b"]);
        assert_eq!(trie.nodes[0].leaf_count, 2);
    }

    #[test]
    fn duplicate_id_rejected() {
        let r = build_trie(&[traj("a", vec![1]), traj("a", vec![2])]);
        assert!(matches!(r, Err(TrieError::DuplicateTrajId(_))));
    }

    #[test]
    fn mask_conflict_rejected() {
        let a = Trajectory {
            traj_id: "a".into(),
            tokens: vec![3, 4],
            loss_mask: vec![1, 1],
        };
        let b = Trajectory {
            traj_id: "b".into(),
            tokens: vec![3, 5],
            loss_mask: vec![0, 1],
        };
        match build_trie(&[a, b]) {
            Err(TrieError::MaskConflict { traj_id, offset }) => {
                assert_eq!(traj_id, "b");
                assert_eq!(offset, 0);
            }
            other => panic!("expected mask conflict, got {other:?}"),
        }
    }

    #[test]
    fn stats_count_sharing() {
        let trie = build_trie(&three_trajectories()).unwrap();
        let stats = trie_stats(&trie);
        assert_eq!(stats.unpacked_tokens, 8);
        assert_eq!(stats.unique_tokens, 5);
        assert!((stats.sharing_ratio - 1.6).abs() < 1e-12);
    }

    #[test]
    fn disjoint_forest_ratio_is_one() {
        let trie = build_trie(&[traj("a", vec![1, 2]), traj("b", vec![3, 4])]).unwrap();
        let stats = trie_stats(&trie);
        assert_eq!(stats.unpacked_tokens, stats.unique_tokens);
        assert_eq!(stats.sharing_ratio, 1.0);
    }

    #[test]
    fn identical_duplicates_multiply_ratio() {
        let trajs: Vec<_> = (0..4)
            .map(|i| traj(&format!("t{i}"), (0..10).collect()))
            .collect();
        let stats = trie_stats(&build_trie(&trajs).unwrap());
        assert_eq!(stats.unique_tokens, 10);
        assert_eq!(stats.unpacked_tokens, 40);
        assert_eq!(stats.sharing_ratio, 4.0);
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let mut trajs = three_trajectories();
        trajs.push(traj("t4", vec![5, 7]));
        let forward = build_trie(&trajs).unwrap();
        trajs.reverse();
        let backward = build_trie(&trajs).unwrap();
        assert_eq!(
            forward.to_canonical_string(),
            backward.to_canonical_string()
        );
    }

    #[test]
    fn start_depths_follow_runs() {
        let trie = build_trie(&three_trajectories()).unwrap();
        for node in &trie.nodes {
            match node.parent {
                None => assert_eq!(node.start_depth, 0),
                Some(p) => assert_eq!(
                    node.start_depth,
                    trie.nodes[p].start_depth + trie.nodes[p].run_len()
                ),
            }
        }
    }

    #[test]
    fn leaf_counts_are_consistent() {
        let trie = build_trie(&three_trajectories()).unwrap();
        for node in &trie.nodes {
            let child_sum: usize = node
                .children
                .iter()
                .map(|&c| trie.nodes[c].leaf_count)
                .sum();
            assert_eq!(node.leaf_count, child_sum + node.leaf_ids.len());
        }
        let root_sum: usize = trie.roots.iter().map(|&r| trie.nodes[r].leaf_count).sum();
        assert_eq!(root_sum, trie.n_trajectories);
    }

    #[test]
    fn runs_are_maximal() {
        // A node with exactly one child must terminate a trajectory; an
        // unbranched pass-through run would not be maximal.
        let mut rng = crate::rng::Lcg::new(4);
        for _ in 0..50 {
            let trajs: Vec<Trajectory> = (0..rng.next_range(1, 6))
                .map(|i| {
                    let len = rng.next_range(1, 10);
                    traj(
                        &format!("t{i}"),
                        (0..len).map(|_| rng.next_below(4) as u32).collect(),
                    )
                })
                .collect();
            let trie = build_trie(&trajs).unwrap();
            for node in &trie.nodes {
                assert!(
                    node.children.len() != 1 || !node.leaf_ids.is_empty(),
                    "non-maximal run at node {}",
                    node.node_id
                );
            }
        }
    }
}
