//! RAIL guardrail documents and validator enforcement.
//!
//! A RAIL document declares output fields with validators in a `format`
//! attribute (`"no-violence: true; no-profanity: true"`), the corrective
//! action per validator in `on-fail-<validator>` attributes, and a prompt
//! template used when re-asking the model. [`enforce`] generates, validates,
//! and re-asks until the output passes or the attempt budget runs out.

mod enforce;
mod rail;
mod validators;

pub use enforce::{enforce, validate, Enforced, GuardrailError, GuardrailEvent, Outcome, DEFAULT_MAX_ATTEMPTS};
pub use rail::{
    parse_rail, parse_rail_with, ContainerKind, ContainerSpec, FieldSpec, OnFailAction, OutputElement, RailError,
    RailErrorKind, RailSpec, ValidatorSpec,
};
pub use validators::{parse_lexicon, Detection, LexiconValidator, Validator, ValidatorOutcome, ValidatorRegistry};

/// The shipped example guardrail: one `answer` string checked for violence
/// and profanity, re-asking on failure.
pub const DEFAULT_RAIL: &str = include_str!("../../assets/rail/qa_response.rail");
