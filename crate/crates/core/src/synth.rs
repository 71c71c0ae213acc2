//! Deterministic synthetic corpora for tests and demos.
//!
//! Everything here is a pure function of the seed, so randomized suites are
//! reproducible across runs and platforms. Loss masks are derived from a hash
//! of the token prefix: trajectories that share a token prefix automatically
//! agree on its mask bits, exactly as masks derived from shared message paths
//! do.

use crate::encoder::Normalization;
use crate::rng::Lcg;
use crate::trajectory::{
    Boundary, Message, Role, SessionTree, ToolOutcome, ToolStatus, Trajectory,
};
use crate::trie::{build_trie, trie_stats};

/// One randomized packing/verification case.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub vocab: usize,
    pub hidden: usize,
    pub trajectories: Vec<Trajectory>,
    pub normalization: Normalization,
    /// Feasible by construction: at least the longest trajectory, at most the
    /// trie's unique token count.
    pub budget: usize,
}

fn mask_bit(salt: u64, prefix_hash: u64) -> u8 {
    ((prefix_hash ^ salt) >> 32 & 1) as u8
}

fn prefix_hash(h: u64, token: u32) -> u64 {
    (h ^ (token as u64 + 1)).wrapping_mul(0x100000001b3)
}

/// Builds a batch of 2–8 trajectories of length 2–16 over a vocabulary of
/// 5–16 tokens, with random shared prefixes and prefix-consistent random
/// masks, plus a random feasible budget and normalization mode.
pub fn random_case(seed: u64) -> RandomCase {
    let mut rng = Lcg::new(seed);
    let vocab = rng.next_range(5, 16);
    let hidden = [2, 4, 6, 8][rng.next_below(4)];
    let n_traj = rng.next_range(2, 8);

    let mut token_seqs: Vec<Vec<u32>> = Vec::new();
    for i in 0..n_traj {
        let len = rng.next_range(2, 16);
        let mut tokens: Vec<u32> = Vec::with_capacity(len);
        if i > 0 && rng.next_f64() < 0.8 {
            let donor = &token_seqs[rng.next_below(i)];
            let take = rng.next_range(1, donor.len().min(len));
            tokens.extend_from_slice(&donor[..take]);
        }
        while tokens.len() < len {
            tokens.push(rng.next_below(vocab) as u32);
        }
        token_seqs.push(tokens);
    }

    let salt = rng.next_u64();
    let trajectories: Vec<Trajectory> = token_seqs
        .iter()
        .enumerate()
        .map(|(i, tokens)| {
            let mut mask = Vec::with_capacity(tokens.len());
            let mut h = 0xcbf29ce484222325u64;
            for &t in tokens {
                h = prefix_hash(h, t);
                mask.push(mask_bit(salt, h));
            }
            Trajectory {
                traj_id: format!("t{i}"),
                tokens: tokens.clone(),
                loss_mask: mask,
            }
        })
        .collect();

    let trie = build_trie(&trajectories).expect("generated batch is consistent");
    let unique = trie_stats(&trie).unique_tokens;
    let max_len = trajectories.iter().map(|t| t.len()).max().unwrap();
    let budget = rng.next_range(max_len, unique.max(max_len));
    let normalization = if rng.next_below(2) == 0 {
        Normalization::TrajectoryMean
    } else {
        Normalization::TokenMean
    };

    RandomCase {
        vocab,
        hidden,
        trajectories,
        normalization,
        budget,
    }
}

/// Builds `count` sessions with planted tool errors, recovery turns, branch
/// points, and compression/mode-switch boundaries (never on the root).
///
/// Every message that can start a trajectory (a session root or a boundary
/// message) opens with a corpus-unique token, the way real prompts and
/// compression summaries are distinct. Trajectories from different subtrees
/// therefore never collide on a shared prefix with different masks.
pub fn synthetic_sessions(seed: u64, count: usize) -> Vec<SessionTree> {
    let mut rng = Lcg::new(seed);
    let mut next_opener = 1000u32;
    let mut opener = |rng: &mut Lcg| {
        let mut tokens = random_tokens(rng);
        tokens[0] = next_opener;
        next_opener += 1;
        tokens
    };
    (0..count)
        .map(|s| {
            let n = rng.next_range(4, 12);
            let mut messages = Vec::with_capacity(n);
            let root_tokens = opener(&mut rng);
            messages.push(Message {
                role: if rng.next_below(4) == 0 {
                    Role::System
                } else {
                    Role::User
                },
                tokens: root_tokens,
                tool_call: None,
                boundary: Boundary::None,
                parent: None,
            });
            let mut planted_error = false;
            // First tokens already used under each parent; sibling messages
            // get distinct first tokens so trie branches align with message
            // boundaries (masks are path functions, so this keeps masks
            // prefix-consistent).
            let mut sibling_firsts: std::collections::HashMap<usize, Vec<u32>> =
                std::collections::HashMap::new();
            for i in 1..n {
                let parent = if rng.next_f64() < 0.2 {
                    Some(rng.next_below(i))
                } else {
                    None
                };
                let effective_parent = parent.unwrap_or(i - 1);
                let boundary = if rng.next_f64() < 0.15 {
                    if rng.next_below(2) == 0 {
                        Boundary::Compression
                    } else {
                        Boundary::ModeSwitch
                    }
                } else {
                    Boundary::None
                };
                let role = match rng.next_below(4) {
                    0 => Role::User,
                    1 => Role::Tool,
                    _ => Role::Assistant,
                };
                // Guarantee at least one erroneous call per even session so
                // the corpus genuinely exercises error masking.
                let force_error = s % 2 == 0 && !planted_error && i + 2 >= n;
                let tool_call = if role == Role::Assistant && (force_error || rng.next_f64() < 0.5)
                {
                    let status = if force_error || rng.next_f64() < 0.3 {
                        planted_error = true;
                        ToolStatus::Error
                    } else {
                        ToolStatus::Ok
                    };
                    Some(ToolOutcome {
                        name: format!("tool{}", rng.next_below(3)),
                        status,
                    })
                } else {
                    None
                };
                let tokens = if boundary != Boundary::None {
                    opener(&mut rng)
                } else {
                    let used = sibling_firsts.entry(effective_parent).or_default();
                    let mut tokens = random_tokens(&mut rng);
                    while used.contains(&tokens[0]) {
                        tokens[0] = rng.next_below(48) as u32;
                    }
                    used.push(tokens[0]);
                    tokens
                };
                messages.push(Message {
                    role,
                    tokens,
                    tool_call,
                    boundary,
                    parent,
                });
            }
            let session = SessionTree {
                session_id: format!("s{s}"),
                messages,
            };
            session.validate().expect("generated session is valid");
            session
        })
        .collect()
}

fn random_tokens(rng: &mut Lcg) -> Vec<u32> {
    let len = rng.next_range(1, 4);
    (0..len).map(|_| rng.next_below(48) as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_reproducible() {
        let a = random_case(17);
        let b = random_case(17);
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(a.budget, b.budget);
    }

    #[test]
    fn cases_respect_the_advertised_ranges() {
        for seed in 0..50 {
            let case = random_case(seed);
            assert!((5..=16).contains(&case.vocab));
            assert!([2, 4, 6, 8].contains(&case.hidden));
            assert!((2..=8).contains(&case.trajectories.len()));
            for t in &case.trajectories {
                assert!((2..=16).contains(&t.len()));
                assert!(t.tokens.iter().all(|&tok| (tok as usize) < case.vocab));
            }
            let max_len = case.trajectories.iter().map(|t| t.len()).max().unwrap();
            assert!(case.budget >= max_len);
        }
    }

    #[test]
    fn masks_agree_on_shared_prefixes() {
        for seed in 0..100 {
            let case = random_case(seed);
            assert!(build_trie(&case.trajectories).is_ok(), "seed {seed}");
        }
    }

    #[test]
    fn sessions_contain_planted_signals() {
        let sessions = synthetic_sessions(0, 20);
        assert_eq!(sessions.len(), 20);
        let errors = sessions
            .iter()
            .flat_map(|s| &s.messages)
            .filter(|m| {
                m.tool_call
                    .as_ref()
                    .is_some_and(|c| c.status == ToolStatus::Error)
            })
            .count();
        let boundaries = sessions
            .iter()
            .flat_map(|s| &s.messages)
            .filter(|m| m.boundary != Boundary::None)
            .count();
        assert!(errors >= 10, "only {errors} planted errors");
        assert!(boundaries >= 5, "only {boundaries} planted boundaries");
        for s in &sessions {
            assert_eq!(s.messages[0].boundary, Boundary::None);
        }
    }
}
