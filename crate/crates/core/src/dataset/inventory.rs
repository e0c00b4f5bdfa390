//! Role lexicons and frame templates, loaded from editable TOML files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

/// Environment variable naming a directory that holds `lexicons.toml` and
/// `templates.toml`.
pub const CONFIG_DIR_ENV: &str = "ROLECIRC_CONFIG_DIR";
pub const LEXICON_FILE: &str = "lexicons.toml";
pub const TEMPLATE_FILE: &str = "templates.toml";

const DEFAULT_LEXICONS: &str = include_str!("../../data/lexicons.toml");
const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.toml");

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub role: String,
    pub fillers: Vec<String>,
    /// Scaffolds keyed by word count.
    pub scaffolds: BTreeMap<usize, Vec<String>>,
}

impl Lexicon {
    pub fn scaffold_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.scaffolds.keys().copied()
    }

    pub fn all_scaffolds(&self) -> impl Iterator<Item = &String> {
        self.scaffolds.values().flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub frame: String,
    pub verb: String,
    pub agents: Vec<String>,
    pub themes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<Vec<String>>,
}

impl Template {
    pub fn allows(&self, role: &str) -> bool {
        self.roles
            .as_ref()
            .is_none_or(|r| r.iter().any(|x| x == role))
    }
}

#[derive(Deserialize)]
struct RoleRecord {
    name: String,
    fillers: Vec<String>,
    scaffolds: Vec<String>,
}

#[derive(Deserialize)]
struct LexiconFile {
    role: Vec<RoleRecord>,
}

#[derive(Deserialize)]
struct TemplateFile {
    template: Vec<Template>,
}

/// Lexicons, templates and the tokenizer over their closed vocabulary.
#[derive(Clone, Debug)]
pub struct Inventory {
    pub lexicons: Vec<Lexicon>,
    pub templates: Vec<Template>,
    pub tokenizer: Tokenizer,
}

fn single_word(word: &str, what: &str) -> Result<()> {
    if word.split_whitespace().count() != 1 {
        return Err(Error::Config(format!(
            "{what} {word:?} must be exactly one word"
        )));
    }
    Ok(())
}

impl Inventory {
    pub fn from_toml(lexicons: &str, templates: &str) -> Result<Self> {
        let lex: LexiconFile =
            toml::from_str(lexicons).map_err(|e| Error::parse(LEXICON_FILE, e))?;
        let tmpl: TemplateFile =
            toml::from_str(templates).map_err(|e| Error::parse(TEMPLATE_FILE, e))?;
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for rec in lex.role {
            let role = rec.name.to_lowercase();
            if !seen.insert(role.clone()) {
                return Err(Error::Config(format!("role {role:?} defined twice")));
            }
            if rec.fillers.is_empty() || rec.scaffolds.is_empty() {
                return Err(Error::Config(format!(
                    "role {role:?} needs fillers and scaffolds"
                )));
            }
            for f in &rec.fillers {
                single_word(f, "filler")?;
            }
            let mut scaffolds: BTreeMap<usize, Vec<String>> = BTreeMap::new();
            for s in rec.scaffolds {
                let norm = s
                    .split_whitespace()
                    .map(str::to_lowercase)
                    .collect::<Vec<_>>();
                if norm.is_empty() {
                    return Err(Error::Config(format!(
                        "role {role:?} has an empty scaffold"
                    )));
                }
                scaffolds
                    .entry(norm.len())
                    .or_default()
                    .push(norm.join(" "));
            }
            out.push(Lexicon {
                role,
                fillers: rec.fillers.iter().map(|f| f.to_lowercase()).collect(),
                scaffolds,
            });
        }
        if tmpl.template.is_empty() {
            return Err(Error::Config("no templates defined".into()));
        }
        for t in &tmpl.template {
            single_word(&t.verb, "verb")?;
            if t.agents.is_empty() || t.themes.is_empty() {
                return Err(Error::Config(format!(
                    "template {:?} needs agents and themes",
                    t.frame
                )));
            }
            for w in t.agents.iter().chain(&t.themes) {
                single_word(w, "template word")?;
            }
            for r in t.roles.iter().flatten() {
                if !seen.contains(&r.to_lowercase()) {
                    return Err(Error::Config(format!(
                        "template {:?} names unknown role {r:?}",
                        t.frame
                    )));
                }
            }
        }
        let mut words: Vec<String> = vec!["the".into()];
        for l in &out {
            words.extend(l.fillers.iter().cloned());
            words.extend(l.all_scaffolds().cloned());
        }
        for t in &tmpl.template {
            words.push(t.verb.clone());
            words.extend(t.agents.iter().cloned());
            words.extend(t.themes.iter().cloned());
        }
        Ok(Inventory {
            lexicons: out,
            templates: tmpl.template,
            tokenizer: Tokenizer::new(words),
        })
    }

    /// The shipped role inventory.
    pub fn builtin() -> Self {
        Inventory::from_toml(DEFAULT_LEXICONS, DEFAULT_TEMPLATES)
            .expect("built-in inventory is valid")
    }

    /// Reads `lexicons.toml` and `templates.toml` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        Inventory::from_toml(&read(LEXICON_FILE)?, &read(TEMPLATE_FILE)?)
    }

    pub fn lexicon(&self, role: &str) -> Result<&Lexicon> {
        self.lexicons
            .iter()
            .find(|l| l.role == role.to_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown role {role:?}")))
    }

    pub fn roles(&self) -> Vec<&str> {
        self.lexicons.iter().map(|l| l.role.as_str()).collect()
    }
}
