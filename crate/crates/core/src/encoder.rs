//! Pack encoding: flatten a pack's induced subtree into training-ready
//! arrays.
//!
//! A packed token carries three things a training kernel needs: its parent
//! link (the previous token of its trajectory, −1 at depth 0), its depth (the
//! token's offset within any containing trajectory, which doubles as its
//! position id), and its segment (trie node id). Attention is restricted to
//! the ancestor chain, so packed positions see exactly the prefix they would
//! see unpacked.
//!
//! Loss targets carry the tree-structured scaler weight. Naively reusing a
//! shared prefix once would weight its next-token losses as if one trajectory
//! produced them; the scaler instead weights each distinct continuation by
//! the number of pack trajectories taking it, over a batch-global normalizer.
//! Summed across the packs of any plan, every continuation receives exactly
//! its full-batch weight, so the packed loss equals the unpacked loss no
//! matter how the planner split the batch.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::trie::Trie;

/// How the batch loss is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Mean over trajectories of summed token losses: each trajectory's
    /// targets weigh 1/N.
    TrajectoryMean,
    /// Mean over all unmasked targets in the batch: each weighs 1/M.
    TokenMean,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::TrajectoryMean => "trajectory_mean",
            Normalization::TokenMean => "token_mean",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trajectory_mean" => Ok(Normalization::TrajectoryMean),
            "token_mean" => Ok(Normalization::TokenMean),
            other => Err(format!(
                "unknown normalization `{other}` (expected trajectory_mean or token_mean)"
            )),
        }
    }
}

/// One weighted next-token prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTarget {
    /// Conditioning position within the pack's token array.
    pub context_pos: usize,
    pub target_token: u32,
    pub weight: f64,
}

/// A pack flattened for training.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPack {
    /// Depth-first over the induced subtree, children by first token.
    pub tokens: Vec<u32>,
    /// Index of each token's predecessor within its trajectory; −1 at depth 0.
    pub parent: Vec<i64>,
    /// Trajectory offset of each token; position ids for packed attention.
    pub depth: Vec<usize>,
    /// Trie node id owning each token.
    pub segment: Vec<usize>,
    pub targets: Vec<LossTarget>,
}

impl EncodedPack {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.targets.iter().map(|t| t.weight).sum()
    }
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("pack contains trajectory `{0}`, which is not in the trie")]
    UnknownTrajectory(String),
    #[error("pack is empty")]
    EmptyPack,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("token index {index} out of range for pack of {len} tokens")]
pub struct TokenIndexError {
    pub index: usize,
    pub len: usize,
}

/// Number of unmasked prediction targets across the whole batch: positions at
/// depth ≥ 1 with mask 1, counted once per trajectory through them. This is
/// the `M` of token-mean normalization.
pub fn batch_unmasked_targets(trie: &Trie) -> usize {
    trie.nodes
        .iter()
        .map(|node| {
            node.mask_run
                .iter()
                .enumerate()
                .filter(|&(k, &m)| m == 1 && node.start_depth + k >= 1)
                .count()
                * node.leaf_count
        })
        .sum()
}

/// Flattens the induced subtree of `pack` and emits scaler-weighted loss
/// targets.
///
/// `n_total_trajectories` is the full-batch trajectory count N; the per-pack
/// multiplicities divide by it (or by the batch-global target count M under
/// token-mean), so weights stay comparable across packs of one plan.
pub fn encode_pack(
    trie: &Trie,
    pack: &BTreeSet<String>,
    normalization: Normalization,
    n_total_trajectories: usize,
) -> Result<EncodedPack, EncodeError> {
    if pack.is_empty() {
        return Err(EncodeError::EmptyPack);
    }
    // Multiplicity of each induced node: pack trajectories through it.
    let mut multiplicity: HashMap<usize, usize> = HashMap::new();
    for id in pack {
        let terminal = trie
            .terminal_node(id)
            .ok_or_else(|| EncodeError::UnknownTrajectory(id.clone()))?;
        let mut cur = terminal;
        loop {
            *multiplicity.entry(cur).or_insert(0) += 1;
            match trie.nodes[cur].parent {
                Some(p) => cur = p,
                None => break,
            }
        }
    }

    let denominator = match normalization {
        Normalization::TrajectoryMean => n_total_trajectories as f64,
        Normalization::TokenMean => batch_unmasked_targets(trie) as f64,
    };

    let mut tokens = Vec::new();
    let mut parent = Vec::new();
    let mut depth = Vec::new();
    let mut segment = Vec::new();
    let mut targets = Vec::new();

    // Iterative DFS; (node, packed position of the parent node's last token).
    let mut stack: Vec<(usize, i64)> = trie
        .roots
        .iter()
        .rev()
        .filter(|r| multiplicity.contains_key(r))
        .map(|&r| (r, -1))
        .collect();
    while let Some((node_id, link)) = stack.pop() {
        let node = &trie.nodes[node_id];
        let m = multiplicity[&node_id] as f64;
        let mut prev = link;
        for (k, (&tok, &mask)) in node.tokens.iter().zip(&node.mask_run).enumerate() {
            let pos = tokens.len();
            tokens.push(tok);
            parent.push(prev);
            depth.push(node.start_depth + k);
            segment.push(node_id);
            if prev >= 0 && mask == 1 {
                targets.push(LossTarget {
                    context_pos: prev as usize,
                    target_token: tok,
                    weight: m / denominator,
                });
            }
            prev = pos as i64;
        }
        for &child in node.children.iter().rev() {
            if multiplicity.contains_key(&child) {
                stack.push((child, prev));
            }
        }
    }

    Ok(EncodedPack {
        tokens,
        parent,
        depth,
        segment,
        targets,
    })
}

/// Positions token `i` may attend to: its ancestor chain plus itself,
/// ascending. Always `depth[i] + 1` positions.
pub fn attention_allowed(pack: &EncodedPack, i: usize) -> Result<Vec<usize>, TokenIndexError> {
    if i >= pack.len() {
        return Err(TokenIndexError {
            index: i,
            len: pack.len(),
        });
    }
    let mut allowed = Vec::with_capacity(pack.depth[i] + 1);
    let mut cur = i as i64;
    while cur >= 0 {
        allowed.push(cur as usize);
        cur = pack.parent[cur as usize];
    }
    allowed.reverse();
    Ok(allowed)
}

/// Materializes the full boolean attention mask; test-scale packs only.
pub fn dense_mask(pack: &EncodedPack) -> Vec<Vec<bool>> {
    let n = pack.len();
    let mut mask = vec![vec![false; n]; n];
    for (i, row) in mask.iter_mut().enumerate() {
        for j in attention_allowed(pack, i).expect("index in range") {
            row[j] = true;
        }
    }
    mask
}
