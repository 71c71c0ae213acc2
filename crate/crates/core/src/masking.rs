//! Error-masked loss masks.
//!
//! Erroneous tool calls stay in the context window but contribute no
//! gradient: every token of an assistant message whose tool call failed gets
//! mask 0. Assistant messages after the failure keep their mask, so the model
//! still learns the recovery behaviour. Whole messages are masked, never
//! sub-spans, since the session format does not delimit call syntax within a
//! message.

use crate::trajectory::{IndexError, Role, SessionTree, ToolStatus, Trajectory};

/// Knobs for mask construction.
#[derive(Debug, Clone, Copy)]
pub struct MaskPolicy {
    /// Mask system/user/tool tokens (standard SFT practice).
    pub mask_non_assistant: bool,
    /// Keep loss on assistant messages that follow an erroneous call.
    /// Disabling also masks everything after the first error on the path.
    pub preserve_recovery: bool,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy {
            mask_non_assistant: true,
            preserve_recovery: true,
        }
    }
}

/// Per-message mask values along an explicit root-to-leaf message path.
///
/// Shared by full-session masking and subtree masking: the error state is
/// computed only from messages on the given path.
pub(crate) fn mask_values_for_path(
    session: &SessionTree,
    path: &[usize],
    policy: MaskPolicy,
) -> Vec<u8> {
    let mut error_seen = false;
    let mut values = Vec::with_capacity(path.len());
    for &idx in path {
        let msg = &session.messages[idx];
        let erroneous = msg
            .tool_call
            .as_ref()
            .is_some_and(|c| c.status == ToolStatus::Error);
        let value = match msg.role {
            Role::Assistant if erroneous => 0,
            Role::Assistant if error_seen && !policy.preserve_recovery => 0,
            Role::Assistant => 1,
            _ => u8::from(!policy.mask_non_assistant),
        };
        error_seen |= erroneous;
        values.push(value);
    }
    values
}

/// Builds the loss-masked trajectory for the root-to-`leaf` path.
///
/// Tokens are exactly those of the linearized path; only the mask differs
/// from the all-ones placeholder.
pub fn build_loss_mask(
    session: &SessionTree,
    leaf: usize,
    policy: MaskPolicy,
) -> Result<Trajectory, IndexError> {
    let path = session.path_to(leaf)?;
    let values = mask_values_for_path(session, &path, policy);
    let mut tokens = Vec::new();
    let mut loss_mask = Vec::new();
    for (&idx, &value) in path.iter().zip(&values) {
        let msg = &session.messages[idx];
        tokens.extend_from_slice(&msg.tokens);
        loss_mask.extend(std::iter::repeat_n(value, msg.tokens.len()));
    }
    Ok(Trajectory {
        traj_id: format!("{}:{}", session.session_id, leaf),
        tokens,
        loss_mask,
    })
}
