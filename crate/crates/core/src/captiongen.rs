//! Templated captions, socio-linguistic modifier lexicons and natural-caption rewrites.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Category;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaptionError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {0} needs an adjective")]
    MissingAdjective(String),
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error("rewrite not applicable: {0}")]
    NotApplicable(String),
    #[error("empty caption component")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModifierFamily {
    Cultural,
    Economic,
    Gender,
    Emotion,
    Sociopolitical,
}

impl ModifierFamily {
    pub const ALL: [ModifierFamily; 5] = [
        ModifierFamily::Cultural,
        ModifierFamily::Economic,
        ModifierFamily::Gender,
        ModifierFamily::Emotion,
        ModifierFamily::Sociopolitical,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModifierFamily::Cultural => "cultural",
            ModifierFamily::Economic => "economic",
            ModifierFamily::Gender => "gender",
            ModifierFamily::Emotion => "emotion",
            ModifierFamily::Sociopolitical => "sociopolitical",
        }
    }
}

impl fmt::Display for ModifierFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModifierFamily {
    type Err = CaptionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModifierFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| CaptionError::InvalidLexicon(format!("unknown family {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    Base,
    Attribute,
    Left,
    Right,
}

impl FromStr for Template {
    type Err = CaptionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Template::Base),
            "attr" | "attribute" => Ok(Template::Attribute),
            "left" => Ok(Template::Left),
            "right" => Ok(Template::Right),
            other => Err(CaptionError::UnknownTemplate(other.to_string())),
        }
    }
}

/// Indefinite-article rule: vowel-initial words take "an", with prefix exceptions either way.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArticleRules {
    #[serde(default)]
    pub a: Vec<String>,
    #[serde(default)]
    pub an: Vec<String>,
}

impl ArticleRules {
    pub fn article(&self, word: &str) -> &'static str {
        let lower = word.to_lowercase();
        if self.a.iter().any(|p| lower.starts_with(p.as_str())) {
            return "a";
        }
        if self.an.iter().any(|p| lower.starts_with(p.as_str())) {
            return "an";
        }
        match lower.chars().next() {
            Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
            _ => "a",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconFamily {
    pub family: ModifierFamily,
    pub modifiers: Vec<String>,
    pub neutrals: Vec<String>,
    #[serde(default)]
    pub antonyms: BTreeMap<String, String>,
    /// Which parts of the entry are editorial fills rather than attested lists.
    #[serde(default)]
    pub editorial: Vec<String>,
    /// Only person or animal objects accept these modifiers.
    #[serde(default)]
    pub requires_animate: bool,
    /// Person or animal objects reject these modifiers.
    #[serde(default)]
    pub forbids_animate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    #[serde(default)]
    pub articles: ArticleRules,
    pub families: Vec<LexiconFamily>,
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self, CaptionError> {
        let lex: Lexicon =
            serde_json::from_str(text).map_err(|e| CaptionError::InvalidLexicon(e.to_string()))?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn builtin() -> Self {
        Self::from_json(include_str!("../data/lexicon.json")).expect("bundled lexicon is valid")
    }

    fn validate(&self) -> Result<(), CaptionError> {
        let mut seen = BTreeMap::new();
        for fam in &self.families {
            if fam.neutrals.is_empty() {
                return Err(CaptionError::InvalidLexicon(format!("{} has no neutral control", fam.family)));
            }
            for m in &fam.modifiers {
                if let Some(prev) = seen.insert(m.to_lowercase(), fam.family) {
                    return Err(CaptionError::InvalidLexicon(format!(
                        "{m} listed under both {prev} and {}",
                        fam.family
                    )));
                }
            }
            for (k, v) in &fam.antonyms {
                if !fam.modifiers.contains(k) || !fam.modifiers.contains(v) {
                    return Err(CaptionError::InvalidLexicon(format!(
                        "antonym {k}->{v} leaves family {}",
                        fam.family
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn family(&self, family: ModifierFamily) -> Option<&LexiconFamily> {
        self.families.iter().find(|f| f.family == family)
    }

    /// Case-insensitive lookup of the family that owns `modifier`, with its canonical spelling.
    pub fn lookup(&self, modifier: &str) -> Option<(&LexiconFamily, &str)> {
        self.families.iter().find_map(|f| {
            f.modifiers
                .iter()
                .find(|m| m.eq_ignore_ascii_case(modifier))
                .map(|m| (f, m.as_str()))
        })
    }

    pub fn render(&self, template: Template, object: &str, adjective: Option<&str>) -> Result<String, CaptionError> {
        render_with(&self.articles, template, object, adjective)
    }
}

fn render_with(
    rules: &ArticleRules,
    template: Template,
    object: &str,
    adjective: Option<&str>,
) -> Result<String, CaptionError> {
    let object = object.trim();
    if object.is_empty() {
        return Err(CaptionError::Empty);
    }
    let phrase = match (template, adjective) {
        (Template::Attribute, Some(adj)) if !adj.trim().is_empty() => format!("{} {object}", adj.trim()),
        (Template::Attribute, _) => return Err(CaptionError::MissingAdjective("attr".into())),
        _ => object.to_string(),
    };
    let art = rules.article(&phrase);
    Ok(match template {
        Template::Left => format!("There is {art} {phrase} on the left."),
        Template::Right => format!("There is {art} {phrase} on the right."),
        _ => format!("There is {art} {phrase}."),
    })
}

/// Renders a caption by template id (`base`, `attr`, `left`, `right`).
pub fn render(
    lexicon: &Lexicon,
    template_id: &str,
    object: &str,
    adjective: Option<&str>,
) -> Result<String, CaptionError> {
    lexicon.render(template_id.parse()?, object, adjective)
}

/// Pool entry closest to `modifier` by (character difference, token difference), then
/// alphabetically.
pub fn length_match<'a>(modifier: &str, pool: &'a [String]) -> Option<&'a str> {
    let chars = modifier.trim().chars().count() as i64;
    let tokens = modifier.split_whitespace().count() as i64;
    pool.iter()
        .min_by(|a, b| {
            let key = |s: &str| {
                (
                    (s.trim().chars().count() as i64 - chars).abs(),
                    (s.split_whitespace().count() as i64 - tokens).abs(),
                )
            };
            key(a).cmp(&key(b)).then_with(|| a.cmp(b))
        })
        .map(String::as_str)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Animacy,
    Implausible,
    UnknownModifier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

pub fn compatibility_screen(lexicon: &Lexicon, adjective: &str, category: Category) -> Verdict {
    let Some((fam, _)) = lexicon.lookup(adjective) else {
        return Verdict::Reject(RejectReason::UnknownModifier);
    };
    let animate = category.is_animate();
    if fam.requires_animate && !animate {
        Verdict::Reject(RejectReason::Animacy)
    } else if fam.forbids_animate && animate {
        Verdict::Reject(RejectReason::Implausible)
    } else {
        Verdict::Accept
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionVariant {
    pub key: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ModifierFamily>,
    /// For modifier captions, the key of the neutral caption matched to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_matched_to: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedPair {
    pub object: String,
    pub modifier: String,
    pub reason: RejectReason,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionSet {
    pub variants: Vec<CaptionVariant>,
    pub rejected: Vec<RejectedPair>,
}

impl CaptionSet {
    pub fn as_map(&self) -> BTreeMap<String, String> {
        self.variants.iter().map(|v| (v.key.clone(), v.text.clone())).collect()
    }
}

/// Base caption plus, for every screened-in modifier of the requested families, the modifier
/// caption and its length-matched neutral caption.
pub fn caption_set(
    lexicon: &Lexicon,
    object: &str,
    category: Category,
    families: &[ModifierFamily],
) -> Result<CaptionSet, CaptionError> {
    let mut set = CaptionSet::default();
    set.variants.push(CaptionVariant {
        key: "base".into(),
        text: lexicon.render(Template::Base, object, None)?,
        family: None,
        length_matched_to: None,
    });
    let mut neutrals: BTreeMap<String, ModifierFamily> = BTreeMap::new();
    for fam in lexicon.families.iter().filter(|f| families.contains(&f.family)) {
        for m in &fam.modifiers {
            if let Verdict::Reject(reason) = compatibility_screen(lexicon, m, category) {
                set.rejected.push(RejectedPair { object: object.into(), modifier: m.clone(), reason });
                continue;
            }
            let neutral = length_match(m, &fam.neutrals).expect("validated nonempty pool");
            let nkey = format!("neutral:{neutral}");
            neutrals.entry(neutral.to_string()).or_insert(fam.family);
            set.variants.push(CaptionVariant {
                key: format!("modifier:{m}"),
                text: lexicon.render(Template::Attribute, object, Some(m))?,
                family: Some(fam.family),
                length_matched_to: Some(nkey),
            });
        }
    }
    for neutral in neutrals.keys() {
        set.variants.push(CaptionVariant {
            key: format!("neutral:{neutral}"),
            text: lexicon.render(Template::Attribute, object, Some(neutral))?,
            family: None,
            length_matched_to: None,
        });
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rewrite {
    pub modifier: String,
    pub family: ModifierFamily,
    pub neutralized: String,
    pub alternate: Option<String>,
}

/// Byte ranges of whole words (alphanumeric runs).
fn words(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

fn match_case(original: &str, replacement: &str) -> String {
    let upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        Some(c) if upper => c.to_uppercase().chain(chars).collect(),
        _ => replacement.to_string(),
    }
}

fn substitute(lexicon: &Lexicon, text: &str, spans: &[(usize, usize)], hit: usize, word: &str) -> String {
    let (s, e) = spans[hit];
    // Capitalise only at sentence start; elsewhere the lexicon spelling decides.
    let sentence_start = text[..s].trim_end().is_empty()
        || text[..s].trim_end().ends_with(['.', '!', '?']);
    let replacement = if sentence_start { match_case(&text[s..e], word) } else { word.to_string() };
    let mut prefix = text[..s].to_string();
    if hit > 0 {
        let (ps, pe) = spans[hit - 1];
        let prev = &text[ps..pe];
        if (prev.eq_ignore_ascii_case("a") || prev.eq_ignore_ascii_case("an"))
            && text[pe..s].chars().all(char::is_whitespace)
        {
            let art = match_case(prev, lexicon.articles.article(word));
            prefix = format!("{}{}{}", &text[..ps], art, &text[pe..s]);
        }
    }
    format!("{prefix}{replacement}{}", &text[e..])
}

/// Neutralized and counterfactual versions of a natural caption containing exactly one
/// lexicon modifier. The preceding indefinite article is re-fixed; all other bytes are kept.
pub fn rewrite_natural(lexicon: &Lexicon, caption: &str) -> Result<Rewrite, CaptionError> {
    let spans = words(caption);
    let hits: Vec<usize> = spans
        .iter()
        .enumerate()
        .filter(|(_, &(s, e))| lexicon.lookup(&caption[s..e]).is_some())
        .map(|(i, _)| i)
        .collect();
    let hit = match hits.as_slice() {
        [one] => *one,
        [] => return Err(CaptionError::NotApplicable("no lexicon modifier".into())),
        _ => return Err(CaptionError::NotApplicable(format!("{} lexicon modifiers", hits.len()))),
    };
    let (s, e) = spans[hit];
    let (fam, canonical) = lexicon.lookup(&caption[s..e]).expect("hit");
    let neutral = length_match(canonical, &fam.neutrals).expect("validated nonempty pool");
    let alternate = fam
        .antonyms
        .get(canonical)
        .map(|alt| substitute(lexicon, caption, &spans, hit, alt));
    Ok(Rewrite {
        modifier: canonical.to_string(),
        family: fam.family,
        neutralized: substitute(lexicon, caption, &spans, hit, neutral),
        alternate,
    })
}
