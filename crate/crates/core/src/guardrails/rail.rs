use std::collections::{BTreeMap, HashSet};
use std::fmt;

use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::validators::ValidatorRegistry;

/// Corrective action when a validator fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnFailAction {
    Reask,
    Exception,
    Filter,
    Noop,
}

impl OnFailAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            OnFailAction::Reask => "reask",
            OnFailAction::Exception => "exception",
            OnFailAction::Filter => "filter",
            OnFailAction::Noop => "noop",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s.trim() {
            "reask" => OnFailAction::Reask,
            "exception" => OnFailAction::Exception,
            "filter" => OnFailAction::Filter,
            "noop" => OnFailAction::Noop,
            _ => return None,
        })
    }
}

impl fmt::Display for OnFailAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One `key: params` entry of a `format` attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorSpec {
    pub id: String,
    pub params: String,
}

/// A scalar output field (`<string>`, `<integer>`, `<float>`, `<bool>`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: String,
    pub description: Option<String>,
    /// In declaration order.
    pub validators: Vec<ValidatorSpec>,
    /// One entry per validator; `reask` unless the document says otherwise.
    pub on_fail: BTreeMap<String, OnFailAction>,
}

impl FieldSpec {
    pub fn action_for(&self, validator_id: &str) -> OnFailAction {
        self.on_fail.get(validator_id).copied().unwrap_or(OnFailAction::Reask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    Object,
    List,
}

/// `<object>` or `<list>`. Its `format` is kept verbatim and not enforced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerSpec {
    pub kind: ContainerKind,
    pub name: String,
    pub description: Option<String>,
    pub format: Option<String>,
    pub children: Vec<OutputElement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "element", rename_all = "lowercase")]
pub enum OutputElement {
    Container(ContainerSpec),
    Field(FieldSpec),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RailSpec {
    pub version: String,
    pub output: Vec<OutputElement>,
    pub prompt_template: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RailErrorKind {
    Syntax(String),
    MissingElement(&'static str),
    UnexpectedElement(String),
    MissingAttribute { element: String, attribute: &'static str },
    UnexpectedAttribute { element: String, attribute: String },
    NoFields,
    DuplicateName(String),
    UnknownValidator { id: String, registered: Vec<String> },
    DuplicateValidator(String),
    EmptyValidatorId,
    UndeclaredOnFail(String),
    UnknownAction(String),
    UndeclaredPlaceholder(String),
    UnterminatedPlaceholder,
}

impl fmt::Display for RailErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RailErrorKind::Syntax(m) => write!(f, "malformed markup: {m}"),
            RailErrorKind::MissingElement(e) => write!(f, "missing <{e}> element"),
            RailErrorKind::UnexpectedElement(e) => write!(f, "unexpected <{e}> element"),
            RailErrorKind::MissingAttribute { element, attribute } => {
                write!(f, "<{element}> is missing the '{attribute}' attribute")
            }
            RailErrorKind::UnexpectedAttribute { element, attribute } => {
                write!(f, "<{element}> has unsupported attribute '{attribute}'")
            }
            RailErrorKind::NoFields => write!(f, "<output> declares no fields"),
            RailErrorKind::DuplicateName(n) => write!(f, "duplicate output name '{n}'"),
            RailErrorKind::UnknownValidator { id, registered } => {
                write!(f, "unknown validator '{id}' (registered: {})", registered.join(", "))
            }
            RailErrorKind::DuplicateValidator(id) => write!(f, "validator '{id}' listed twice"),
            RailErrorKind::EmptyValidatorId => write!(f, "format entry has an empty validator id"),
            RailErrorKind::UndeclaredOnFail(id) => {
                write!(f, "on-fail-{id} refers to a validator not in the format attribute")
            }
            RailErrorKind::UnknownAction(a) => {
                write!(f, "unknown on-fail action '{a}' (expected reask, exception, filter or noop)")
            }
            RailErrorKind::UndeclaredPlaceholder(p) => write!(f, "prompt placeholder '${{{p}}}' is not declared"),
            RailErrorKind::UnterminatedPlaceholder => write!(f, "prompt has an unterminated '${{' placeholder"),
        }
    }
}

/// Parse failure with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct RailError {
    pub line: u32,
    pub column: u32,
    pub kind: RailErrorKind,
}

type Result<T, E = RailError> = std::result::Result<T, E>;

const SCALARS: [&str; 4] = ["string", "integer", "float", "bool"];

struct Parser<'a, 'input> {
    doc: &'a Document<'input>,
    registry: &'a ValidatorRegistry,
}

impl<'a, 'input> Parser<'a, 'input> {
    fn err_at(&self, pos: usize, kind: RailErrorKind) -> RailError {
        let p = self.doc.text_pos_at(pos);
        RailError {
            line: p.row,
            column: p.col,
            kind,
        }
    }

    fn err(&self, node: Node, kind: RailErrorKind) -> RailError {
        self.err_at(node.range().start, kind)
    }

    fn elements<'n>(node: Node<'n, 'input>) -> impl Iterator<Item = Node<'n, 'input>> {
        node.children().filter(|c| c.is_element())
    }

    fn required_attr(&self, node: Node<'a, 'input>, attribute: &'static str) -> Result<&'a str> {
        node.attribute(attribute).ok_or_else(|| {
            self.err(
                node,
                RailErrorKind::MissingAttribute {
                    element: node.tag_name().name().to_string(),
                    attribute,
                },
            )
        })
    }

    fn rail(&self) -> Result<RailSpec> {
        let root = self.doc.root_element();
        if root.tag_name().name() != "rail" {
            return Err(self.err(root, RailErrorKind::UnexpectedElement(root.tag_name().name().into())));
        }
        let version = self.required_attr(root, "version")?.to_string();
        for attr in root.attributes() {
            if attr.name() != "version" {
                return Err(self.err_at(
                    attr.range().start,
                    RailErrorKind::UnexpectedAttribute {
                        element: "rail".into(),
                        attribute: attr.name().into(),
                    },
                ));
            }
        }

        let mut output = None;
        let mut prompt = None;
        for child in Self::elements(root) {
            let slot = match child.tag_name().name() {
                "output" => &mut output,
                "prompt" => &mut prompt,
                other => return Err(self.err(child, RailErrorKind::UnexpectedElement(other.into()))),
            };
            if slot.is_some() {
                return Err(self.err(child, RailErrorKind::UnexpectedElement(child.tag_name().name().into())));
            }
            *slot = Some(child);
        }
        let output_node = output.ok_or_else(|| self.err(root, RailErrorKind::MissingElement("output")))?;
        let prompt_node = prompt.ok_or_else(|| self.err(root, RailErrorKind::MissingElement("prompt")))?;

        let output = self.children(output_node)?;
        let mut leaves = Vec::new();
        collect_fields(&output, &mut leaves);
        if leaves.is_empty() {
            return Err(self.err(output_node, RailErrorKind::NoFields));
        }

        let prompt_template: String = prompt_node
            .children()
            .filter(|c| c.is_text())
            .filter_map(|c| c.text())
            .collect::<String>()
            .trim()
            .to_string();
        let allowed: HashSet<String> = std::iter::once("output".to_string())
            .chain(leaves.iter().map(|f| format!("output_{}", f.name)))
            .collect();
        check_placeholders(&prompt_template, &allowed).map_err(|kind| self.err(prompt_node, kind))?;

        Ok(RailSpec {
            version,
            output,
            prompt_template,
        })
    }

    fn children(&self, parent: Node<'a, 'input>) -> Result<Vec<OutputElement>> {
        let mut names = HashSet::new();
        let mut out = Vec::new();
        for node in Self::elements(parent) {
            let element = self.element(node)?;
            let name = match &element {
                OutputElement::Container(c) => &c.name,
                OutputElement::Field(f) => &f.name,
            };
            if !names.insert(name.clone()) {
                return Err(self.err(node, RailErrorKind::DuplicateName(name.clone())));
            }
            out.push(element);
        }
        Ok(out)
    }

    fn element(&self, node: Node<'a, 'input>) -> Result<OutputElement> {
        let tag = node.tag_name().name();
        let kind = match tag {
            "object" => Some(ContainerKind::Object),
            "list" => Some(ContainerKind::List),
            t if SCALARS.contains(&t) => None,
            other => return Err(self.err(node, RailErrorKind::UnexpectedElement(other.into()))),
        };
        let name = self.required_attr(node, "name")?.to_string();
        let description = node.attribute("description").map(str::to_string);
        let format = node.attribute("format");

        if let Some(kind) = kind {
            for attr in node.attributes() {
                if !matches!(attr.name(), "name" | "description" | "format") {
                    return Err(self.err_at(
                        attr.range().start,
                        RailErrorKind::UnexpectedAttribute {
                            element: tag.into(),
                            attribute: attr.name().into(),
                        },
                    ));
                }
            }
            return Ok(OutputElement::Container(ContainerSpec {
                kind,
                name,
                description,
                format: format.map(str::to_string),
                children: self.children(node)?,
            }));
        }

        if let Some(child) = Self::elements(node).next() {
            return Err(self.err(child, RailErrorKind::UnexpectedElement(child.tag_name().name().into())));
        }
        let format_pos = node
            .attributes()
            .find(|a| a.name() == "format")
            .map_or(node.range().start, |a| a.range().start);
        let validators = match format {
            Some(f) => parse_format(f).map_err(|k| self.err_at(format_pos, k))?,
            None => Vec::new(),
        };
        let mut seen = HashSet::new();
        for v in &validators {
            if !seen.insert(v.id.as_str()) {
                return Err(self.err_at(format_pos, RailErrorKind::DuplicateValidator(v.id.clone())));
            }
            if self.registry.get(&v.id).is_none() {
                return Err(self.err_at(
                    format_pos,
                    RailErrorKind::UnknownValidator {
                        id: v.id.clone(),
                        registered: self.registry.ids().into_iter().map(str::to_string).collect(),
                    },
                ));
            }
        }

        let mut on_fail: BTreeMap<String, OnFailAction> =
            validators.iter().map(|v| (v.id.clone(), OnFailAction::Reask)).collect();
        for attr in node.attributes() {
            match attr.name() {
                "name" | "description" | "format" => {}
                other => {
                    let Some(id) = other.strip_prefix("on-fail-") else {
                        return Err(self.err_at(
                            attr.range().start,
                            RailErrorKind::UnexpectedAttribute {
                                element: tag.into(),
                                attribute: other.into(),
                            },
                        ));
                    };
                    if !seen.contains(id) {
                        return Err(self.err_at(attr.range().start, RailErrorKind::UndeclaredOnFail(id.into())));
                    }
                    let action = OnFailAction::parse(attr.value())
                        .ok_or_else(|| self.err_at(attr.range().start, RailErrorKind::UnknownAction(attr.value().into())))?;
                    on_fail.insert(id.to_string(), action);
                }
            }
        }

        Ok(OutputElement::Field(FieldSpec {
            name,
            kind: tag.to_string(),
            description,
            validators,
            on_fail,
        }))
    }
}

fn collect_fields<'s>(elements: &'s [OutputElement], out: &mut Vec<&'s FieldSpec>) {
    for e in elements {
        match e {
            OutputElement::Field(f) => out.push(f),
            OutputElement::Container(c) => collect_fields(&c.children, out),
        }
    }
}

/// `"a: x; b: y z; c"` into ordered (id, params) pairs.
fn parse_format(format: &str) -> std::result::Result<Vec<ValidatorSpec>, RailErrorKind> {
    format
        .split(';')
        .map(str::trim)
        .filter(|part| !part.is_empty())
        .map(|part| {
            let (id, params) = part.split_once(':').unwrap_or((part, ""));
            let id = id.trim();
            if id.is_empty() {
                return Err(RailErrorKind::EmptyValidatorId);
            }
            Ok(ValidatorSpec {
                id: id.to_string(),
                params: params.trim().to_string(),
            })
        })
        .collect()
}

/// Names of `${...}` placeholders, in order of appearance.
pub(crate) fn placeholders(template: &str) -> std::result::Result<Vec<&str>, RailErrorKind> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(i) = rest.find("${") {
        let after = &rest[i + 2..];
        let end = after.find('}').ok_or(RailErrorKind::UnterminatedPlaceholder)?;
        out.push(after[..end].trim());
        rest = &after[end + 1..];
    }
    Ok(out)
}

fn check_placeholders(template: &str, allowed: &HashSet<String>) -> std::result::Result<(), RailErrorKind> {
    for name in placeholders(template)? {
        if !allowed.contains(name) {
            return Err(RailErrorKind::UndeclaredPlaceholder(name.to_string()));
        }
    }
    Ok(())
}

/// Parses against the default validator registry.
pub fn parse_rail(document: &str) -> Result<RailSpec> {
    parse_rail_with(document, &ValidatorRegistry::default())
}

pub fn parse_rail_with(document: &str, registry: &ValidatorRegistry) -> Result<RailSpec> {
    let doc = Document::parse(document).map_err(|e| {
        let p = e.pos();
        RailError {
            line: p.row,
            column: p.col,
            kind: RailErrorKind::Syntax(e.to_string()),
        }
    })?;
    Parser {
        doc: &doc,
        registry,
    }
    .rail()
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

impl RailSpec {
    /// Scalar fields in document order.
    pub fn fields(&self) -> Vec<&FieldSpec> {
        let mut out = Vec::new();
        collect_fields(&self.output, &mut out);
        out
    }

    pub fn validator_count(&self) -> usize {
        self.fields().iter().map(|f| f.validators.len()).sum()
    }

    /// Distinct on-fail actions in first-use order.
    pub fn actions(&self) -> Vec<OnFailAction> {
        let mut out = Vec::new();
        for f in self.fields() {
            for v in &f.validators {
                let a = f.action_for(&v.id);
                if !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        out
    }

    /// One-line description, e.g. `1 field, 2 validators, on-fail reask`.
    pub fn summary(&self) -> String {
        let fields = self.fields().len();
        let validators = self.validator_count();
        let actions: Vec<&str> = self.actions().iter().map(OnFailAction::as_str).collect();
        let mut s = format!(
            "{fields} field{}, {validators} validator{}",
            if fields == 1 { "" } else { "s" },
            if validators == 1 { "" } else { "s" },
        );
        if !actions.is_empty() {
            s.push_str(&format!(", on-fail {}", actions.join("/")));
        }
        s
    }

    /// Serializes back to RAIL markup. Every on-fail action is written out.
    pub fn to_rail_string(&self) -> String {
        let mut out = format!("<rail version=\"{}\">\n<output>\n", escape(&self.version));
        for e in &self.output {
            write_element(&mut out, e, 1);
        }
        out.push_str("</output>\n<prompt>\n");
        out.push_str(&escape(&self.prompt_template));
        out.push_str("\n</prompt>\n</rail>\n");
        out
    }
}

fn write_element(out: &mut String, element: &OutputElement, depth: usize) {
    let pad = "    ".repeat(depth);
    match element {
        OutputElement::Container(c) => {
            let tag = match c.kind {
                ContainerKind::Object => "object",
                ContainerKind::List => "list",
            };
            out.push_str(&format!("{pad}<{tag} name=\"{}\"", escape(&c.name)));
            if let Some(d) = &c.description {
                out.push_str(&format!(" description=\"{}\"", escape(d)));
            }
            if let Some(f) = &c.format {
                out.push_str(&format!(" format=\"{}\"", escape(f)));
            }
            out.push_str(">\n");
            for child in &c.children {
                write_element(out, child, depth + 1);
            }
            out.push_str(&format!("{pad}</{tag}>\n"));
        }
        OutputElement::Field(f) => {
            out.push_str(&format!("{pad}<{} name=\"{}\"", f.kind, escape(&f.name)));
            if let Some(d) = &f.description {
                out.push_str(&format!(" description=\"{}\"", escape(d)));
            }
            if !f.validators.is_empty() {
                let format: Vec<String> = f
                    .validators
                    .iter()
                    .map(|v| {
                        if v.params.is_empty() {
                            v.id.clone()
                        } else {
                            format!("{}: {}", v.id, v.params)
                        }
                    })
                    .collect();
                out.push_str(&format!(" format=\"{}\"", escape(&format.join("; "))));
            }
            for v in &f.validators {
                out.push_str(&format!(" on-fail-{}=\"{}\"", v.id, f.action_for(&v.id)));
            }
            out.push_str("/>\n");
        }
    }
}
