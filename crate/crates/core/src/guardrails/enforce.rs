use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rail::{placeholders, FieldSpec, OnFailAction, RailSpec};
use super::validators::ValidatorRegistry;
use crate::generation::{ChatModel, GenerationError};
use crate::prompting::{Message, RenderedPrompt, Role};

/// One re-ask after the first answer.
pub const DEFAULT_MAX_ATTEMPTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

/// Result of one validator on one attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardrailEvent {
    /// 1-based generation attempt.
    pub attempt: usize,
    pub field: String,
    pub validator_id: String,
    pub outcome: Outcome,
    /// Action taken on failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<OnFailAction>,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum GuardrailError {
    #[error("validator '{0}' is not registered")]
    Unregistered(String),
    #[error("max_attempts must be at least 1")]
    NoAttempts,
    #[error("generation failed: {0}")]
    Generation(#[from] GenerationError),
    #[error("output rejected by {validator} after {attempts} attempt(s) (on-fail {action})")]
    Terminal {
        attempts: usize,
        validator: String,
        action: OnFailAction,
        last_text: String,
        events: Vec<GuardrailEvent>,
    },
}

/// Output that passed every validator, possibly after filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enforced {
    pub text: String,
    pub events: Vec<GuardrailEvent>,
    /// Generation calls made.
    pub attempts: usize,
}

/// Runs every validator of `field` over `text`, in declaration order.
pub fn validate(
    text: &str,
    field: &FieldSpec,
    registry: &ValidatorRegistry,
    attempt: usize,
) -> Result<Vec<GuardrailEvent>, GuardrailError> {
    field
        .validators
        .iter()
        .map(|spec| {
            let validator = registry
                .get(&spec.id)
                .ok_or_else(|| GuardrailError::Unregistered(spec.id.clone()))?;
            let outcome = validator.validate(text, &spec.params);
            Ok(GuardrailEvent {
                attempt,
                field: field.name.clone(),
                validator_id: spec.id.clone(),
                outcome: if outcome.passed { Outcome::Pass } else { Outcome::Fail },
                action: (!outcome.passed).then(|| field.action_for(&spec.id)),
                detail: outcome.detail(),
            })
        })
        .collect()
}

fn reask_prompt(original: &RenderedPrompt, spec: &RailSpec, rejected: &str, failures: &[&GuardrailEvent]) -> RenderedPrompt {
    let mut body = spec.prompt_template.clone();
    let names: Vec<String> = placeholders(&spec.prompt_template)
        .unwrap_or_default()
        .into_iter()
        .map(str::to_string)
        .collect();
    for name in names {
        body = body.replace(&format!("${{{name}}}"), rejected);
    }
    body.push_str("\n\nThe previous answer failed these checks:\n");
    for f in failures {
        body.push_str(&format!("- {}: {}\n", f.validator_id, f.detail));
    }
    body.push_str("Answer the original question again so that every check passes.");

    let mut messages = original.messages.clone();
    messages.push(Message::new(Role::Assistant, rejected));
    messages.push(Message::new(Role::User, body));
    RenderedPrompt {
        messages,
        question: original.question.clone(),
    }
}

/// Generates, validates, and applies on-fail actions.
///
/// `exception` fails at once; `reask` retries with a prompt built from the
/// spec's template (rejected output substituted, failure details appended)
/// until `max_attempts` generations have been made; `filter` redacts the
/// offending spans; `noop` accepts the output as is.
pub fn enforce(
    prompt: &RenderedPrompt,
    model: &dyn ChatModel,
    spec: &RailSpec,
    registry: &ValidatorRegistry,
    max_attempts: usize,
) -> Result<Enforced, GuardrailError> {
    if max_attempts == 0 {
        return Err(GuardrailError::NoAttempts);
    }
    let fields = spec.fields();
    let mut events = Vec::new();
    let mut current = prompt.clone();

    for attempt in 1..=max_attempts {
        let text = model.complete(&current)?.text;
        let first = events.len();
        for field in &fields {
            events.extend(validate(&text, field, registry, attempt)?);
        }
        let failures: Vec<&GuardrailEvent> = events[first..]
            .iter()
            .filter(|e| e.outcome == Outcome::Fail)
            .collect();

        let terminal = |validator: &str, action| GuardrailError::Terminal {
            attempts: attempt,
            validator: validator.to_string(),
            action,
            last_text: text.clone(),
            events: events.clone(),
        };
        if let Some(f) = failures.iter().find(|e| e.action == Some(OnFailAction::Exception)) {
            return Err(terminal(&f.validator_id, OnFailAction::Exception));
        }
        let reasks: Vec<&GuardrailEvent> = failures
            .iter()
            .copied()
            .filter(|e| e.action == Some(OnFailAction::Reask))
            .collect();
        if let Some(first_reask) = reasks.first() {
            if attempt == max_attempts {
                return Err(terminal(&first_reask.validator_id, OnFailAction::Reask));
            }
            current = reask_prompt(prompt, spec, &text, &reasks);
            continue;
        }

        let mut text = text;
        for f in failures.iter().filter(|e| e.action == Some(OnFailAction::Filter)) {
            let field = fields.iter().find(|fs| fs.name == f.field).expect("event field exists");
            let params = field
                .validators
                .iter()
                .find(|v| v.id == f.validator_id)
                .map(|v| v.params.as_str())
                .unwrap_or("");
            let validator = registry
                .get(&f.validator_id)
                .ok_or_else(|| GuardrailError::Unregistered(f.validator_id.clone()))?;
            text = validator.redact(&text, params);
        }
        return Ok(Enforced {
            text,
            events,
            attempts: attempt,
        });
    }
    unreachable!("loop returns on its final attempt")
}
