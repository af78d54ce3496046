use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

const VIOLENCE_LEXICON: &str = include_str!("../../assets/lexicons/violence.txt");
const PROFANITY_LEXICON: &str = include_str!("../../assets/lexicons/profanity.txt");

const REDACTION: &str = "[redacted]";

/// A matched span, in byte offsets into the validated text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub start: usize,
    pub end: usize,
    pub matched: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidatorOutcome {
    pub passed: bool,
    pub detections: Vec<Detection>,
}

impl ValidatorOutcome {
    pub fn pass() -> Self {
        Self {
            passed: true,
            detections: Vec::new(),
        }
    }

    /// Human-readable summary of the detections.
    pub fn detail(&self) -> String {
        self.detections
            .iter()
            .map(|d| format!("matched {:?} at {}..{}", d.matched, d.start, d.end))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

pub trait Validator: Send + Sync {
    fn id(&self) -> &str;

    /// `params` is the text after the colon in the format attribute.
    fn validate(&self, text: &str, params: &str) -> ValidatorOutcome;

    /// Output with every failing span removed; used by the `filter` action.
    fn redact(&self, text: &str, params: &str) -> String;
}

/// Parses a word list: one term per line, `#` starts a comment line.
pub fn parse_lexicon(body: &str) -> Vec<String> {
    body.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Case-insensitive, word-boundary term matching. Multi-word terms match
/// across any run of whitespace.
#[derive(Debug, Clone)]
pub struct LexiconValidator {
    id: String,
    terms: Vec<String>,
    pattern: Option<Regex>,
}

impl LexiconValidator {
    pub fn new<I, S>(id: impl Into<String>, terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut terms: Vec<String> = terms.into_iter().map(Into::into).collect();
        terms.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        terms.dedup();
        let pattern = (!terms.is_empty()).then(|| {
            let alternatives: Vec<String> = terms
                .iter()
                .map(|t| {
                    t.split_whitespace()
                        .map(regex::escape)
                        .collect::<Vec<_>>()
                        .join(r"\s+")
                })
                .collect();
            Regex::new(&format!(r"(?i)\b(?:{})\b", alternatives.join("|"))).expect("escaped terms form a valid regex")
        });
        Self {
            id: id.into(),
            terms,
            pattern,
        }
    }

    pub fn from_file(id: impl Into<String>, path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(id, parse_lexicon(&std::fs::read_to_string(path)?)))
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    fn enabled(params: &str) -> bool {
        !params.trim().eq_ignore_ascii_case("false")
    }
}

impl Validator for LexiconValidator {
    fn id(&self) -> &str {
        &self.id
    }

    fn validate(&self, text: &str, params: &str) -> ValidatorOutcome {
        let Some(pattern) = self.pattern.as_ref().filter(|_| Self::enabled(params)) else {
            return ValidatorOutcome::pass();
        };
        let detections: Vec<Detection> = pattern
            .find_iter(text)
            .map(|m| Detection {
                start: m.start(),
                end: m.end(),
                matched: m.as_str().to_string(),
            })
            .collect();
        ValidatorOutcome {
            passed: detections.is_empty(),
            detections,
        }
    }

    fn redact(&self, text: &str, params: &str) -> String {
        match self.pattern.as_ref().filter(|_| Self::enabled(params)) {
            Some(p) => p.replace_all(text, REDACTION).into_owned(),
            None => text.to_string(),
        }
    }
}

/// Validators by id. Immutable once shared.
#[derive(Clone)]
pub struct ValidatorRegistry {
    validators: BTreeMap<String, Arc<dyn Validator>>,
}

impl std::fmt::Debug for ValidatorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValidatorRegistry")
            .field("ids", &self.ids())
            .finish()
    }
}

impl ValidatorRegistry {
    pub fn empty() -> Self {
        Self {
            validators: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, validator: Arc<dyn Validator>) {
        self.validators.insert(validator.id().to_string(), validator);
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn Validator>> {
        self.validators.get(id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.validators.keys().map(String::as_str).collect()
    }

    /// Default registry with lexicons read from `violence.txt` and
    /// `profanity.txt` in `dir`, where present.
    pub fn with_lexicon_dir(dir: &Path) -> std::io::Result<Self> {
        let mut reg = Self::default();
        for (id, file) in [("no-violence", "violence.txt"), ("no-profanity", "profanity.txt")] {
            let path = dir.join(file);
            if path.exists() {
                reg.register(Arc::new(LexiconValidator::from_file(id, &path)?));
            }
        }
        Ok(reg)
    }
}

impl Default for ValidatorRegistry {
    /// `no-violence` and `no-profanity` with the shipped word lists.
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(LexiconValidator::new(
            "no-violence",
            parse_lexicon(VIOLENCE_LEXICON),
        )));
        reg.register(Arc::new(LexiconValidator::new(
            "no-profanity",
            parse_lexicon(PROFANITY_LEXICON),
        )));
        reg
    }
}
