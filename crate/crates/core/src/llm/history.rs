use thiserror::Error;

use super::{ChatMessage, Conversation, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("token budget {budget} cannot hold the system prefix and latest user message ({required} tokens)")]
    BudgetTooSmall { budget: usize, required: usize },
}

/// Drops the oldest non-system messages until the conversation fits `token_budget`.
///
/// System messages and the most recent user message are always kept, and the
/// relative order of the survivors is unchanged.
pub fn truncate_history(
    conversation: &Conversation,
    token_budget: usize,
    estimator: &dyn Fn(&str) -> usize,
) -> Result<Conversation, HistoryError> {
    let messages = conversation.messages();
    let sizes: Vec<usize> = messages.iter().map(|m| estimator(&m.content)).collect();
    let latest_user = messages.iter().rposition(|m| m.role == Role::User);

    let pinned = |i: usize| messages[i].role == Role::System || Some(i) == latest_user;
    let required: usize = (0..messages.len()).filter(|&i| pinned(i)).map(|i| sizes[i]).sum();
    if required > token_budget {
        return Err(HistoryError::BudgetTooSmall { budget: token_budget, required });
    }

    let mut total: usize = sizes.iter().sum();
    if total <= token_budget {
        return Ok(conversation.clone());
    }

    let mut keep = vec![true; messages.len()];
    for i in 0..messages.len() {
        if total <= token_budget {
            break;
        }
        if !pinned(i) {
            keep[i] = false;
            total -= sizes[i];
        }
    }

    let kept: Vec<ChatMessage> = messages.iter().zip(keep).filter(|&(_, k)| k).map(|(m, _)| m.clone()).collect();
    Ok(Conversation::from_trusted(kept))
}
