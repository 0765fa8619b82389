//! Prompt rendering from template assets.
//!
//! Templates use a small mustache subset: `{{name}}` slots and one repeated
//! section, `{{#shots}} ... {{/shots}}`. Inside the section the slots
//! `shot_number`, `question`, `option_set`, `context`, `answer_letter`,
//! `answer_text` and `letter_list` refer to the current shot. Outside it,
//! `new_question`, `new_option_set`, `new_context` and `letter_list` refer to
//! the question being asked. An unknown slot is an error, never blank output.
//!
//! Assets live at `templates/<family>/<purpose>.tmpl` with a
//! `templates/<family>/family.toml` naming the option style, and shots at
//! `shots/<benchmark>/<pair>.json`. A single trailing newline at the end of a
//! template file is not part of the template.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{letter, BenchmarkRecord};
use crate::hashing::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template `{template}`: {reason}")]
    Syntax { template: String, reason: String },
    #[error("template `{template}`: unknown slot `{slot}`")]
    UnknownSlot { template: String, slot: String },
    #[error("shot {index} is missing `{field}`")]
    ShotMissing { index: usize, field: &'static str },
    #[error("unknown template family `{0}`")]
    UnknownFamily(String),
    #[error("family `{family}` has no `{purpose}` template")]
    MissingTemplate { family: String, purpose: Purpose },
    #[error("k_contexts {k} exceeds the {available} available contexts")]
    TooManyContexts { k: usize, available: usize },
    #[error("grounding order violated: option-focused context at position {0} follows an option-free one")]
    Ordering(usize),
    #[error("no shot set `{benchmark}/{pair}`")]
    UnknownShots { benchmark: String, pair: String },
    #[error("asset {path}: {reason}")]
    Asset { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    OptionFocused,
    OptionFree,
    ReaderGrounded,
    ReaderUngrounded,
}

impl Purpose {
    pub const ALL: [Purpose; 4] = [
        Purpose::OptionFocused,
        Purpose::OptionFree,
        Purpose::ReaderGrounded,
        Purpose::ReaderUngrounded,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            Purpose::OptionFocused => "option_focused",
            Purpose::OptionFree => "option_free",
            Purpose::ReaderGrounded => "reader_grounded",
            Purpose::ReaderUngrounded => "reader_ungrounded",
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

/// How a lettered option line is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionStyle {
    /// `- text` (no letter)
    Dash,
    /// `A. text`
    Dot,
    /// `(A) text`
    Paren,
}

pub fn option_set(options: &[String], style: OptionStyle) -> String {
    let lines: Vec<String> = options
        .iter()
        .enumerate()
        .map(|(i, o)| match style {
            OptionStyle::Dash => format!("- {o}"),
            OptionStyle::Dot => format!("{}. {o}", letter(i)),
            OptionStyle::Paren => format!("({}) {o}", letter(i)),
        })
        .collect();
    lines.join("\n")
}

/// "A, B, C or D" for four options.
pub fn letter_list(n: usize) -> String {
    let letters: Vec<String> = (0..n).map(|i| letter(i).to_string()).collect();
    match letters.len() {
        0 => String::new(),
        1 => letters[0].clone(),
        k => format!("{} or {}", letters[..k - 1].join(", "), letters[k - 1]),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Text(String),
    Slot(String),
    Shots(Vec<Node>),
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: String,
    pub family: String,
    pub body: String,
    nodes: Vec<Node>,
}

impl PromptTemplate {
    pub fn parse(name: &str, family: &str, body: &str) -> Result<Self, PromptError> {
        let err = |reason: String| PromptError::Syntax {
            template: name.to_string(),
            reason,
        };
        let mut stack: Vec<Vec<Node>> = vec![Vec::new()];
        let mut rest = body;
        while let Some(open) = rest.find("{{") {
            if open > 0 {
                stack.last_mut().unwrap().push(Node::Text(rest[..open].to_string()));
            }
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| err("unterminated `{{`".into()))?;
            let tag = after[..close].trim();
            rest = &after[close + 2..];
            if let Some(sec) = tag.strip_prefix('#') {
                if sec != "shots" {
                    return Err(err(format!("unknown section `{sec}`")));
                }
                if stack.len() > 1 {
                    return Err(err("nested `shots` section".into()));
                }
                stack.push(Vec::new());
            } else if let Some(sec) = tag.strip_prefix('/') {
                if sec != "shots" || stack.len() != 2 {
                    return Err(err(format!("unexpected close `{sec}`")));
                }
                let inner = stack.pop().unwrap();
                stack.last_mut().unwrap().push(Node::Shots(inner));
            } else if tag.is_empty() || !tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(err(format!("bad slot name `{tag}`")));
            } else {
                stack.last_mut().unwrap().push(Node::Slot(tag.to_string()));
            }
        }
        if !rest.is_empty() {
            stack.last_mut().unwrap().push(Node::Text(rest.to_string()));
        }
        if stack.len() != 1 {
            return Err(err("unclosed `shots` section".into()));
        }
        Ok(PromptTemplate {
            name: name.to_string(),
            family: family.to_string(),
            body: body.to_string(),
            nodes: stack.pop().unwrap(),
        })
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.body.as_bytes())
    }

    /// Render with the outer slot map and one slot map per shot.
    pub fn render(
        &self,
        outer: &BTreeMap<&str, String>,
        shots: &[BTreeMap<&str, String>],
    ) -> Result<String, PromptError> {
        let mut out = String::new();
        for node in &self.nodes {
            match node {
                Node::Text(t) => out.push_str(t),
                Node::Slot(s) => out.push_str(self.lookup(s, &[outer])?),
                Node::Shots(inner) => {
                    for shot in shots {
                        for n in inner {
                            match n {
                                Node::Text(t) => out.push_str(t),
                                Node::Slot(s) => out.push_str(self.lookup(s, &[shot])?),
                                Node::Shots(_) => unreachable!("nesting rejected at parse"),
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn lookup<'a>(&self, slot: &str, scopes: &[&'a BTreeMap<&str, String>]) -> Result<&'a str, PromptError> {
        scopes
            .iter()
            .find_map(|m| m.get(slot))
            .map(String::as_str)
            .ok_or_else(|| PromptError::UnknownSlot {
                template: self.name.clone(),
                slot: slot.to_string(),
            })
    }

    /// Slot names used inside and outside the shots section.
    pub fn slots(&self) -> (Vec<String>, Vec<String>) {
        let mut outer = Vec::new();
        let mut inner = Vec::new();
        for n in &self.nodes {
            match n {
                Node::Slot(s) => outer.push(s.clone()),
                Node::Shots(ns) => {
                    for m in ns {
                        if let Node::Slot(s) = m {
                            inner.push(s.clone());
                        }
                    }
                }
                Node::Text(_) => {}
            }
        }
        (outer, inner)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct FamilyMeta {
    option_style: OptionStyle,
}

#[derive(Debug, Clone)]
pub struct Family {
    pub name: String,
    pub style: OptionStyle,
    pub templates: BTreeMap<Purpose, PromptTemplate>,
}

impl Family {
    pub fn template(&self, purpose: Purpose) -> Result<&PromptTemplate, PromptError> {
        self.templates.get(&purpose).ok_or_else(|| PromptError::MissingTemplate {
            family: self.name.clone(),
            purpose,
        })
    }
}

/// All template families, either the embedded defaults or loaded from disk.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub families: BTreeMap<String, Family>,
}

macro_rules! embedded_templates {
    ($( $fam:literal / $purpose:ident => $file:literal ),* $(,)?) => {
        &[$( ($fam, Purpose::$purpose, include_str!(concat!("../assets/templates/", $fam, "/", $file))) ),*]
    };
}

const EMBEDDED_TEMPLATES: &[(&str, Purpose, &str)] = embedded_templates![
    "plain" / OptionFocused => "option_focused.tmpl",
    "plain" / OptionFree => "option_free.tmpl",
    "zephyr" / ReaderGrounded => "reader_grounded.tmpl",
    "zephyr" / ReaderUngrounded => "reader_ungrounded.tmpl",
    "llama2-chat" / ReaderGrounded => "reader_grounded.tmpl",
    "llama2-chat" / ReaderUngrounded => "reader_ungrounded.tmpl",
    "pmc-llama" / ReaderUngrounded => "reader_ungrounded.tmpl",
    "llama3-instruct" / ReaderGrounded => "reader_grounded.tmpl",
    "phi3" / ReaderGrounded => "reader_grounded.tmpl",
];

const EMBEDDED_FAMILIES: &[(&str, &str)] = &[
    ("plain", include_str!("../assets/templates/plain/family.toml")),
    ("zephyr", include_str!("../assets/templates/zephyr/family.toml")),
    ("llama2-chat", include_str!("../assets/templates/llama2-chat/family.toml")),
    ("pmc-llama", include_str!("../assets/templates/pmc-llama/family.toml")),
    ("llama3-instruct", include_str!("../assets/templates/llama3-instruct/family.toml")),
    ("phi3", include_str!("../assets/templates/phi3/family.toml")),
];

fn strip_one_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

impl TemplateSet {
    pub fn embedded() -> Self {
        let mut families = BTreeMap::new();
        for (name, meta) in EMBEDDED_FAMILIES {
            let meta: FamilyMeta = toml::from_str(meta).expect("embedded family.toml");
            families.insert(
                name.to_string(),
                Family {
                    name: name.to_string(),
                    style: meta.option_style,
                    templates: BTreeMap::new(),
                },
            );
        }
        for (fam, purpose, body) in EMBEDDED_TEMPLATES {
            let t = PromptTemplate::parse(&format!("{fam}/{purpose}"), fam, strip_one_newline(body))
                .expect("embedded template parses");
            families.get_mut(*fam).unwrap().templates.insert(*purpose, t);
        }
        TemplateSet { families }
    }

    /// Load `<dir>/<family>/{family.toml,<purpose>.tmpl}`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let asset_err = |p: &Path, reason: String| PromptError::Asset {
            path: p.display().to_string(),
            reason,
        };
        let mut families = BTreeMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| asset_err(dir, e.to_string()))?;
        let mut dirs: Vec<_> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for d in dirs {
            let name = d.file_name().unwrap().to_string_lossy().to_string();
            let meta_path = d.join("family.toml");
            let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| asset_err(&meta_path, e.to_string()))?;
            let meta: FamilyMeta = toml::from_str(&meta_text).map_err(|e| asset_err(&meta_path, e.to_string()))?;
            let mut templates = BTreeMap::new();
            for purpose in Purpose::ALL {
                let p = d.join(format!("{}.tmpl", purpose.file_stem()));
                if p.exists() {
                    let body = std::fs::read_to_string(&p).map_err(|e| asset_err(&p, e.to_string()))?;
                    let t = PromptTemplate::parse(&format!("{name}/{purpose}"), &name, strip_one_newline(&body))?;
                    templates.insert(purpose, t);
                }
            }
            families.insert(
                name.clone(),
                Family {
                    name,
                    style: meta.option_style,
                    templates,
                },
            );
        }
        Ok(TemplateSet { families })
    }

    pub fn family(&self, name: &str) -> Result<&Family, PromptError> {
        self.families
            .get(name)
            .ok_or_else(|| PromptError::UnknownFamily(name.to_string()))
    }

    pub fn generation(&self) -> Result<&Family, PromptError> {
        self.family("plain")
    }
}

/// A demonstration. Generation shots need a context; reader shots also need an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotExample {
    pub question: String,
    #[serde(default)]
    pub options: Option<Vec<String>>,
    #[serde(default)]
    pub context: Option<String>,
    /// Answer letter.
    #[serde(default)]
    pub answer: Option<char>,
}

impl ShotExample {
    fn options(&self, index: usize) -> Result<&[String], PromptError> {
        self.options
            .as_deref()
            .ok_or(PromptError::ShotMissing { index, field: "options" })
    }

    fn context(&self, index: usize) -> Result<&str, PromptError> {
        self.context
            .as_deref()
            .ok_or(PromptError::ShotMissing { index, field: "context" })
    }

    fn answer_index(&self, index: usize) -> Result<usize, PromptError> {
        let n = self.options(index)?.len();
        self.answer
            .and_then(crate::corpus::letter_index)
            .filter(|&i| i < n)
            .ok_or(PromptError::ShotMissing { index, field: "answer" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSet {
    pub benchmark: String,
    pub pair: String,
    pub shots: Vec<ShotExample>,
}

const EMBEDDED_SHOTS: &[(&str, &str, &str)] = &[
    ("generation", "option-focused", include_str!("../assets/shots/generation/option-focused.json")),
    ("generation", "option-free", include_str!("../assets/shots/generation/option-free.json")),
    ("medqa", "H", include_str!("../assets/shots/medqa/H.json")),
    ("medqa", "A1", include_str!("../assets/shots/medqa/A1.json")),
    ("medqa", "A2", include_str!("../assets/shots/medqa/A2.json")),
    ("medqa", "A3", include_str!("../assets/shots/medqa/A3.json")),
    ("medqa", "long", include_str!("../assets/shots/medqa/long.json")),
    ("medmcqa", "H", include_str!("../assets/shots/medmcqa/H.json")),
    ("medmcqa", "A1", include_str!("../assets/shots/medmcqa/A1.json")),
    ("medmcqa", "A2", include_str!("../assets/shots/medmcqa/A2.json")),
    ("medmcqa", "A3", include_str!("../assets/shots/medmcqa/A3.json")),
];

/// Shot fixtures for MMLU are the MedMCQA ones.
fn shot_benchmark(benchmark: &str) -> &str {
    match benchmark {
        b if b.starts_with("medqa") => "medqa",
        b if b.starts_with("mmlu") || b.starts_with("medmcqa") => "medmcqa",
        other => other,
    }
}

impl ShotSet {
    pub fn builtin(benchmark: &str, pair: &str) -> Result<ShotSet, PromptError> {
        let b = shot_benchmark(benchmark);
        EMBEDDED_SHOTS
            .iter()
            .find(|(eb, ep, _)| *eb == b && *ep == pair)
            .map(|(_, _, json)| serde_json::from_str(json).expect("embedded shots parse"))
            .ok_or_else(|| PromptError::UnknownShots {
                benchmark: benchmark.to_string(),
                pair: pair.to_string(),
            })
    }

    pub fn load(path: &Path) -> Result<ShotSet, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Asset {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| PromptError::Asset {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("shots serialize").as_bytes())
    }
}

/// Default reader shot pair for a family on a benchmark.
pub fn default_shot_pair(family: &str, benchmark: &str) -> &'static str {
    match (family, shot_benchmark(benchmark), benchmark.starts_with("mmlu")) {
        ("llama3-instruct" | "phi3", "medqa", _) => "long",
        ("zephyr", "medqa", _) => "H",
        ("zephyr", _, true) => "A1",
        ("zephyr", _, false) => "A2",
        (_, _, true) => "A2",
        _ => "A1",
    }
}

/// Provenance of one grounding passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextView {
    OptionFocused,
    OptionFree,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grounding {
    pub text: String,
    pub view: ContextView,
}

/// Check that no option-focused passage follows an option-free one.
pub fn check_ordering(grounding: &[Grounding]) -> Result<(), PromptError> {
    let mut seen_free = false;
    for (i, g) in grounding.iter().enumerate() {
        match g.view {
            ContextView::OptionFree => seen_free = true,
            ContextView::OptionFocused if seen_free => return Err(PromptError::Ordering(i)),
            _ => {}
        }
    }
    Ok(())
}

pub const DEFAULT_CONTEXT_SEPARATOR: &str = "\n";

#[derive(Debug, Clone)]
pub struct Renderer {
    pub templates: TemplateSet,
    pub context_separator: String,
}

impl Default for Renderer {
    fn default() -> Self {
        Renderer {
            templates: TemplateSet::embedded(),
            context_separator: DEFAULT_CONTEXT_SEPARATOR.to_string(),
        }
    }
}

impl Renderer {
    pub fn new(templates: TemplateSet) -> Self {
        Renderer {
            templates,
            context_separator: DEFAULT_CONTEXT_SEPARATOR.to_string(),
        }
    }

    fn generation_shot_maps(
        shots: &[ShotExample],
        style: OptionStyle,
        with_options: bool,
    ) -> Result<Vec<BTreeMap<&'static str, String>>, PromptError> {
        shots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut m = BTreeMap::new();
                m.insert("shot_number", (i + 1).to_string());
                m.insert("question", s.question.clone());
                m.insert("context", s.context(i)?.to_string());
                if with_options {
                    m.insert("option_set", option_set(s.options(i)?, style));
                }
                Ok(m)
            })
            .collect()
    }

    fn render_generation(
        &self,
        record: &BenchmarkRecord,
        shots: &[ShotExample],
        purpose: Purpose,
    ) -> Result<String, PromptError> {
        let fam = self.templates.generation()?;
        let tpl = fam.template(purpose)?;
        let with_options = purpose == Purpose::OptionFocused;
        let shot_maps = Self::generation_shot_maps(shots, fam.style, with_options)?;
        let mut outer = BTreeMap::new();
        outer.insert("new_question", record.question.clone());
        if with_options {
            outer.insert("new_option_set", option_set(&record.options, fam.style));
        }
        tpl.render(&outer, &shot_maps)
    }

    /// Option-focused generation prompt.
    pub fn render_option_focused(&self, record: &BenchmarkRecord, shots: &[ShotExample]) -> Result<String, PromptError> {
        self.render_generation(record, shots, Purpose::OptionFocused)
    }

    /// Option-free generation prompt; options never appear.
    pub fn render_option_free(&self, record: &BenchmarkRecord, shots: &[ShotExample]) -> Result<String, PromptError> {
        self.render_generation(record, shots, Purpose::OptionFree)
    }

    /// Reader prompt over the first `k` grounding passages. `k = 0` uses the
    /// ungrounded template of the family.
    pub fn render_reader_prompt(
        &self,
        record: &BenchmarkRecord,
        grounding: &[Grounding],
        shots: &[ShotExample],
        family: &str,
        k: usize,
    ) -> Result<String, PromptError> {
        check_ordering(grounding)?;
        if k > grounding.len() {
            return Err(PromptError::TooManyContexts {
                k,
                available: grounding.len(),
            });
        }
        let fam = self.templates.family(family)?;
        let grounded = k > 0;
        let tpl = fam.template(if grounded {
            Purpose::ReaderGrounded
        } else {
            Purpose::ReaderUngrounded
        })?;
        let shot_maps = shots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let opts = s.options(i)?;
                let ans = s.answer_index(i)?;
                let mut m = BTreeMap::new();
                m.insert("shot_number", (i + 1).to_string());
                m.insert("question", s.question.clone());
                m.insert("option_set", option_set(opts, fam.style));
                m.insert("answer_letter", letter(ans).to_string());
                m.insert("answer_text", opts[ans].clone());
                m.insert("letter_list", letter_list(opts.len()));
                if grounded {
                    m.insert("context", s.context(i)?.to_string());
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>, PromptError>>()?;
        let mut outer = BTreeMap::new();
        outer.insert("new_question", record.question.clone());
        outer.insert("new_option_set", option_set(&record.options, fam.style));
        outer.insert("letter_list", letter_list(record.options.len()));
        if grounded {
            let texts: Vec<&str> = grounding[..k].iter().map(|g| g.text.as_str()).collect();
            outer.insert("new_context", texts.join(&self.context_separator));
        }
        tpl.render(&outer, &shot_maps)
    }
}
