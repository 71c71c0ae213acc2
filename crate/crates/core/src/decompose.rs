//! Tree-structured trajectory splitting.
//!
//! Compression checkpoints and mode switches break the dependency chain of a
//! session: tokens after the boundary were produced against the compressed or
//! switched context, not the literal prior messages. Cutting every parent
//! edge that enters a boundary-flagged message yields locally coherent
//! subtrees, each trained independently. The boundary message itself becomes
//! the root of the new subtree, so downstream context starts from the
//! compressed state.

use crate::masking::{mask_values_for_path, MaskPolicy};
use crate::trajectory::{Boundary, SessionTree, Trajectory};

/// A connected component of a session after boundary cuts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subtree {
    /// Message index of the component root (a boundary message or message 0).
    pub root_message: usize,
    /// Member message indices in session order; connected under parent links.
    pub messages: Vec<usize>,
    /// Session this subtree came from.
    pub origin: String,
}

/// Cuts the session at every boundary-flagged message and returns one subtree
/// per connected component, ordered by root index.
///
/// Every message lands in exactly one subtree. A boundary flag on message 0
/// has no edge to cut and leaves the root component in place.
pub fn decompose(session: &SessionTree) -> Vec<Subtree> {
    let n = session.messages.len();
    let mut component_root = vec![0usize; n];
    for i in 0..n {
        component_root[i] = if i == 0 || session.messages[i].boundary != Boundary::None {
            i
        } else {
            component_root[session.effective_parent(i).expect("non-root has parent")]
        };
    }

    let mut roots: Vec<usize> = component_root.clone();
    roots.sort_unstable();
    roots.dedup();

    roots
        .into_iter()
        .map(|root| Subtree {
            root_message: root,
            messages: (0..n).filter(|&i| component_root[i] == root).collect(),
            origin: session.session_id.clone(),
        })
        .collect()
}

/// Linearizes and masks every root-to-leaf path of the subtree.
///
/// Leaves are members that no other member continues from; masking applies
/// the usual rules with the error state restricted to the subtree's own path.
pub fn subtree_trajectories(
    subtree: &Subtree,
    session: &SessionTree,
    policy: MaskPolicy,
) -> Vec<Trajectory> {
    let member = |i: usize| subtree.messages.binary_search(&i).is_ok();
    let mut has_child = vec![false; session.messages.len()];
    for &i in &subtree.messages {
        if i != subtree.root_message {
            if let Some(p) = session.effective_parent(i) {
                has_child[p] = true;
            }
        }
    }

    let mut out = Vec::new();
    for &leaf in &subtree.messages {
        if has_child[leaf] {
            continue;
        }
        // Path from subtree root to this leaf, all within the subtree.
        let mut path = vec![leaf];
        let mut cur = leaf;
        while cur != subtree.root_message {
            let p = session.effective_parent(cur).expect("non-root has parent");
            debug_assert!(member(p), "subtree path escaped the component");
            path.push(p);
            cur = p;
        }
        path.reverse();

        let values = mask_values_for_path(session, &path, policy);
        let mut tokens = Vec::new();
        let mut loss_mask = Vec::new();
        for (&idx, &value) in path.iter().zip(&values) {
            let msg = &session.messages[idx];
            tokens.extend_from_slice(&msg.tokens);
            loss_mask.extend(std::iter::repeat_n(value, msg.tokens.len()));
        }
        out.push(Trajectory {
            traj_id: format!("{}:{}:{}", session.session_id, subtree.root_message, leaf),
            tokens,
            loss_mask,
        });
    }
    out
}

impl Subtree {
    /// Re-materializes the subtree as a standalone session: members keep
    /// their order, parent indices are remapped, and the boundary flag on the
    /// new root is cleared.
    pub fn to_session(&self, session: &SessionTree) -> SessionTree {
        let local_index = |i: usize| {
            self.messages
                .binary_search(&i)
                .expect("parent of a member is a member")
        };
        let messages = self
            .messages
            .iter()
            .enumerate()
            .map(|(local, &i)| {
                let mut msg = session.messages[i].clone();
                msg.parent = if i == self.root_message {
                    None
                } else {
                    Some(local_index(session.effective_parent(i).unwrap()))
                };
                if i == self.root_message {
                    msg.boundary = Boundary::None;
                }
                // A remapped parent of local-1 must stay explicit only when it
                // differs from the positional default.
                if msg.parent == Some(local.wrapping_sub(1)) {
                    msg.parent = None;
                }
                msg
            })
            .collect();
        SessionTree {
            session_id: format!("{}:{}", self.origin, self.root_message),
            messages,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Message, Role};

    fn msg(tokens: Vec<u32>, boundary: Boundary, parent: Option<usize>) -> Message {
        Message {
            role: Role::Assistant,
            tokens,
            tool_call: None,
            boundary,
            parent,
        }
    }

    fn linear_session(n: usize, boundaries: &[usize]) -> SessionTree {
        let messages = (0..n)
            .map(|i| {
                let b = if boundaries.contains(&i) {
                    Boundary::Compression
                } else {
                    Boundary::None
                };
                msg(vec![i as u32], b, None)
            })
            .collect();
        let s = SessionTree {
            session_id: "s".into(),
            messages,
        };
        s.validate().unwrap();
        s
    }

    #[test]
    fn single_cut_splits_in_two() {
        let s = linear_session(6, &[3]);
        let subtrees = decompose(&s);
        assert_eq!(subtrees.len(), 2);
        assert_eq!(subtrees[0].messages, vec![0, 1, 2]);
        assert_eq!(subtrees[1].messages, vec![3, 4, 5]);
        assert_eq!(subtrees[1].root_message, 3);
    }

    #[test]
    fn no_boundaries_one_subtree_even_with_branch() {
        let s = SessionTree {
            session_id: "s".into(),
            messages: vec![
                msg(vec![0], Boundary::None, None),
                msg(vec![1], Boundary::None, None),
                msg(vec![2], Boundary::None, Some(0)),
            ],
        };
        s.validate().unwrap();
        let subtrees = decompose(&s);
        assert_eq!(subtrees.len(), 1);
        assert_eq!(subtrees[0].messages, vec![0, 1, 2]);
    }

    #[test]
    fn two_cuts_three_subtrees() {
        let s = linear_session(6, &[2, 4]);
        let subtrees = decompose(&s);
        let members: Vec<_> = subtrees.iter().map(|t| t.messages.clone()).collect();
        assert_eq!(members, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
    }

    #[test]
    fn partition_is_exact() {
        let s = SessionTree {
            session_id: "s".into(),
            messages: vec![
                msg(vec![0], Boundary::None, None),
                msg(vec![1], Boundary::None, None),
                msg(vec![2], Boundary::ModeSwitch, Some(0)),
                msg(vec![3], Boundary::None, Some(2)),
                msg(vec![4], Boundary::None, Some(1)),
            ],
        };
        s.validate().unwrap();
        let subtrees = decompose(&s);
        let total: usize = subtrees.iter().map(|t| t.messages.len()).sum();
        assert_eq!(total, s.messages.len());
        let mut seen = vec![false; s.messages.len()];
        for t in &subtrees {
            for &i in &t.messages {
                assert!(!seen[i], "message {i} in two subtrees");
                seen[i] = true;
            }
        }
        assert_eq!(subtrees.len(), 2);
    }

    #[test]
    fn subtree_of_linear_chain_yields_one_trajectory() {
        let s = linear_session(2, &[]);
        let subtrees = decompose(&s);
        let trajs = subtree_trajectories(&subtrees[0], &s, MaskPolicy::default());
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].tokens, vec![0, 1]);
    }

    #[test]
    fn branching_subtree_yields_one_trajectory_per_leaf() {
        let s = SessionTree {
            session_id: "s".into(),
            messages: vec![
                msg(vec![7, 8], Boundary::None, None),
                msg(vec![1], Boundary::None, None),
                msg(vec![2], Boundary::None, Some(0)),
            ],
        };
        s.validate().unwrap();
        let subtrees = decompose(&s);
        let trajs = subtree_trajectories(&subtrees[0], &s, MaskPolicy::default());
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].tokens, vec![7, 8, 1]);
        assert_eq!(trajs[1].tokens, vec![7, 8, 2]);
    }

    #[test]
    fn boundary_root_tokens_start_every_trajectory() {
        let mut s = linear_session(4, &[1]);
        s.messages[1].tokens = vec![40, 41, 42, 43];
        s.messages.push(msg(vec![9], Boundary::None, Some(1)));
        s.validate().unwrap();
        let subtrees = decompose(&s);
        let second = &subtrees[1];
        assert_eq!(second.root_message, 1);
        let trajs = subtree_trajectories(second, &s, MaskPolicy::default());
        assert_eq!(trajs.len(), 2);
        for t in &trajs {
            assert_eq!(&t.tokens[..4], &[40, 41, 42, 43]);
        }
    }

    #[test]
    fn rematerialized_subtree_decomposes_to_itself() {
        let s = linear_session(6, &[2, 4]);
        for subtree in decompose(&s) {
            let standalone = subtree.to_session(&s);
            standalone.validate().unwrap();
            let again = decompose(&standalone);
            assert_eq!(again.len(), 1);
            assert_eq!(again[0].messages.len(), subtree.messages.len());
        }
    }

    #[test]
    fn trajectories_contain_no_internal_boundary() {
        let s = linear_session(7, &[3, 5]);
        for subtree in decompose(&s) {
            for &i in &subtree.messages {
                if i != subtree.root_message {
                    assert_eq!(s.messages[i].boundary, Boundary::None);
                }
            }
        }
    }

    #[test]
    fn boundary_on_root_is_a_noop_cut() {
        let s = linear_session(3, &[0]);
        let subtrees = decompose(&s);
        assert_eq!(subtrees.len(), 1);
        assert_eq!(subtrees[0].root_message, 0);
    }
}
