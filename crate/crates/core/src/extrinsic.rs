//! VQA answer aggregation: alias normalization, majority voting, XNA and XDP.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{CulturalDimension, NationalityOrder, OntologyError, OntologyRegistry};
use crate::par::Execution;
use crate::prompt::TemplateKind;

/// Answer text recorded by the answering side when a model call failed.
pub const ERROR_ANSWER: &str = "__error__";
pub const CANT_TELL: &str = "can't tell";

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("answer file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("alias `{alias}` maps to both `{first}` and `{second}`")]
    AliasConflict {
        alias: String,
        first: String,
        second: String,
    },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A normalized answer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum AnswerLabel {
    Named(String),
    CantTell,
}

impl AnswerLabel {
    pub fn name(&self) -> Option<&str> {
        match self {
            AnswerLabel::Named(n) => Some(n),
            AnswerLabel::CantTell => None,
        }
    }
}

impl fmt::Display for AnswerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name().unwrap_or(CANT_TELL))
    }
}

impl From<String> for AnswerLabel {
    fn from(s: String) -> Self {
        if s == CANT_TELL {
            AnswerLabel::CantTell
        } else {
            AnswerLabel::Named(s)
        }
    }
}

impl From<AnswerLabel> for String {
    fn from(l: AnswerLabel) -> Self {
        l.to_string()
    }
}

/// Which question an answer responds to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum QuestionId {
    Xna,
    Xdp(String),
    Coverage,
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionId::Xna => f.write_str("xna"),
            QuestionId::Xdp(d) => write!(f, "xdp:{d}"),
            QuestionId::Coverage => f.write_str("coverage"),
        }
    }
}

impl FromStr for QuestionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xna" => Ok(QuestionId::Xna),
            "coverage" => Ok(QuestionId::Coverage),
            _ => match s.strip_prefix("xdp:") {
                Some(d) if !d.is_empty() => Ok(QuestionId::Xdp(d.to_string())),
                _ => Err(format!("unknown question id `{s}`")),
            },
        }
    }
}

impl TryFrom<String> for QuestionId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<QuestionId> for String {
    fn from(q: QuestionId) -> Self {
        q.to_string()
    }
}

/// One line of an answer file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaAnswer {
    pub model: String,
    pub concept: String,
    pub pt: TemplateKind,
    pub lang: String,
    pub image_index: u32,
    pub question_id: QuestionId,
    pub answer: String,
    pub source: String,
}

impl VqaAnswer {
    pub fn is_error(&self) -> bool {
        self.answer.trim() == ERROR_ANSWER
    }

    fn set(&self) -> AnswerSet {
        AnswerSet {
            source: self.source.clone(),
            model: self.model.clone(),
            concept: self.concept.clone(),
            pt: self.pt,
            lang: self.lang.clone(),
        }
    }
}

/// Parses an answer file. Blank lines are skipped.
pub fn read_answers(reader: impl BufRead) -> Result<Vec<VqaAnswer>, AnswerError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let answer: VqaAnswer = serde_json::from_str(&line).map_err(|e| AnswerError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if answer.answer.trim().is_empty() {
            return Err(AnswerError::Parse {
                line: i + 1,
                reason: "empty answer".into(),
            });
        }
        out.push(answer);
    }
    Ok(out)
}

/// Checks every record against the registry.
pub fn validate_answers(
    answers: &[VqaAnswer],
    registry: &OntologyRegistry,
) -> Result<(), AnswerError> {
    for a in answers {
        registry.language(&a.lang)?;
        registry.concept(&a.concept)?;
        if let QuestionId::Xdp(d) = &a.question_id {
            registry.dimension(d)?;
        }
    }
    Ok(())
}

/// Lowercases, turns punctuation into spaces and splits on whitespace.
pub fn answer_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    cleaned
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect()
}

/// Alias phrases mapped to labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    entries: Vec<(Vec<String>, String)>,
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an alias. Re-adding the same alias for the same label is a no-op.
    pub fn add(&mut self, alias: &str, label: &str) -> Result<(), AnswerError> {
        let tokens = answer_tokens(alias);
        if tokens.is_empty() {
            return Ok(());
        }
        if let Some((_, existing)) = self.entries.iter().find(|(t, _)| *t == tokens) {
            if existing == label {
                return Ok(());
            }
            return Err(AnswerError::AliasConflict {
                alias: tokens.join(" "),
                first: existing.clone(),
                second: label.to_string(),
            });
        }
        self.entries.push((tokens, label.to_string()));
        Ok(())
    }

    /// Every nationality name plus its country aliases.
    pub fn nationalities(registry: &OntologyRegistry) -> Result<Self, AnswerError> {
        let mut table = Self::new();
        for nat in registry.nationalities() {
            table.add(&nat.primary_name, &nat.primary_name)?;
            for alias in &nat.country_aliases {
                table.add(alias, &nat.primary_name)?;
            }
            for name in &nat.additional_names {
                table.add(name, name)?;
            }
            for (name, aliases) in &nat.additional_aliases {
                for alias in aliases {
                    table.add(alias, name)?;
                }
            }
        }
        Ok(table)
    }

    /// Pole names and synonyms of one dimension.
    pub fn dimension(dimension: &CulturalDimension) -> Result<Self, AnswerError> {
        let mut table = Self::new();
        for pole in [&dimension.pole_positive, &dimension.pole_negative] {
            table.add(&pole.name, &pole.name)?;
            table.add(&pole.answer, &pole.name)?;
            for alias in &pole.aliases {
                table.add(alias, &pole.name)?;
            }
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Longest whole-word alias match; equal-length matches resolve to the one
/// starting first. Unmatched text is [`AnswerLabel::CantTell`].
pub fn normalize_answer(raw_text: &str, aliases: &AliasTable) -> AnswerLabel {
    let words = answer_tokens(raw_text);
    let mut best: Option<(usize, usize, usize, &str)> = None;
    for (tokens, label) in &aliases.entries {
        let n = tokens.len();
        if n > words.len() {
            continue;
        }
        let Some(pos) = words.windows(n).position(|w| w == tokens.as_slice()) else {
            continue;
        };
        let chars: usize = tokens.iter().map(|t| t.chars().count()).sum();
        let better = match best {
            None => true,
            Some((bn, bc, bp, _)) => (n, chars) > (bn, bc) || ((n, chars) == (bn, bc) && pos < bp),
        };
        if better {
            best = Some((n, chars, pos, label));
        }
    }
    match best {
        Some((_, _, _, label)) => AnswerLabel::Named(label.to_string()),
        None => AnswerLabel::CantTell,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub label: AnswerLabel,
    /// Votes per label, including can't-tell.
    pub counts: BTreeMap<AnswerLabel, usize>,
}

impl VoteOutcome {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Majority over already normalized labels. A unique maximum wins; any tie
/// for the top count yields can't-tell.
pub fn majority_of(labels: &[AnswerLabel]) -> VoteOutcome {
    let mut counts: BTreeMap<AnswerLabel, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.clone()).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let mut leaders = counts.iter().filter(|(_, &c)| c == top).map(|(l, _)| l);
    let label = match (leaders.next(), leaders.next()) {
        (Some(l), None) => l.clone(),
        _ => AnswerLabel::CantTell,
    };
    VoteOutcome { label, counts }
}

/// Normalizes each answer and takes the majority.
pub fn majority_vote<S: AsRef<str>>(answers: &[S], aliases: &AliasTable) -> VoteOutcome {
    let labels: Vec<AnswerLabel> = answers
        .iter()
        .map(|a| normalize_answer(a.as_ref(), aliases))
        .collect();
    majority_of(&labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XnaResult {
    pub score: f64,
    pub correct: usize,
    pub total: usize,
}

/// Fraction of vote outcomes naming an accepted nationality of their
/// ground-truth language. Can't-tell counts as incorrect.
pub fn xna_score(
    outcomes: &[(String, VoteOutcome)],
    registry: &OntologyRegistry,
    order: NationalityOrder,
) -> Result<XnaResult, AnswerError> {
    let mut correct = 0;
    for (lang, outcome) in outcomes {
        let accepted = registry.nationality_for(lang, order)?;
        if let Some(name) = outcome.label.name() {
            if accepted.iter().any(|a| a == name) {
                correct += 1;
            }
        }
    }
    let total = outcomes.len();
    Ok(XnaResult {
        score: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        correct,
        total,
    })
}

/// One image set as seen by one answer source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnswerSet {
    pub source: String,
    pub model: String,
    pub concept: String,
    pub pt: TemplateKind,
    pub lang: String,
}

/// Answers to `question`, grouped per (source, image set) in image order.
/// Failed answers are dropped.
pub fn group_answers<'a>(
    answers: &'a [VqaAnswer],
    question: &QuestionId,
) -> BTreeMap<AnswerSet, Vec<&'a VqaAnswer>> {
    let mut groups: BTreeMap<AnswerSet, Vec<&VqaAnswer>> = BTreeMap::new();
    for a in answers {
        if &a.question_id == question && !a.is_error() {
            groups.entry(a.set()).or_default().push(a);
        }
    }
    for list in groups.values_mut() {
        list.sort_by_key(|a| a.image_index);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetVote {
    pub set: AnswerSet,
    pub outcome: VoteOutcome,
}

/// Majority vote of every (source, image set) for the origin question.
pub fn xna_votes(answers: &[VqaAnswer], aliases: &AliasTable, exec: Execution) -> Vec<SetVote> {
    let groups: Vec<(AnswerSet, Vec<&VqaAnswer>)> = group_answers(answers, &QuestionId::Xna)
        .into_iter()
        .collect();
    exec.map(&groups, |(set, list)| {
        let texts: Vec<&str> = list.iter().map(|a| a.answer.as_str()).collect();
        SetVote {
            set: set.clone(),
            outcome: majority_vote(&texts, aliases),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XnaCell {
    pub source: String,
    pub model: String,
    pub lang: String,
    pub result: XnaResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XnaLanguageMean {
    pub source: String,
    pub lang: String,
    /// Mean of the per-model scores.
    pub mean: f64,
    pub models: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XnaSummary {
    pub order: NationalityOrder,
    pub cells: Vec<XnaCell>,
    pub language_means: Vec<XnaLanguageMean>,
}

/// XNA per (source, model, language) and the per-language mean across models.
pub fn xna_summary(
    votes: &[SetVote],
    registry: &OntologyRegistry,
    order: NationalityOrder,
) -> Result<XnaSummary, AnswerError> {
    let mut grouped: BTreeMap<(String, String, String), Vec<(String, VoteOutcome)>> =
        BTreeMap::new();
    for v in votes {
        grouped
            .entry((
                v.set.source.clone(),
                v.set.model.clone(),
                v.set.lang.clone(),
            ))
            .or_default()
            .push((v.set.lang.clone(), v.outcome.clone()));
    }
    let mut cells = Vec::with_capacity(grouped.len());
    let mut per_lang: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for ((source, model, lang), outcomes) in grouped {
        let result = xna_score(&outcomes, registry, order)?;
        per_lang
            .entry((source.clone(), lang.clone()))
            .or_default()
            .push(result.score);
        cells.push(XnaCell {
            source,
            model,
            lang,
            result,
        });
    }
    let language_means = per_lang
        .into_iter()
        .map(|((source, lang), scores)| XnaLanguageMean {
            source,
            lang,
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
            models: scores.len(),
        })
        .collect();
    Ok(XnaSummary {
        order,
        cells,
        language_means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XdpScore {
    pub dimension_id: String,
    pub value: f64,
    pub frac_d0: f64,
    pub frac_d1: f64,
    pub frac_cant: f64,
}

/// XDP over individual answers: share naming the first pole minus share
/// naming the second.
pub fn xdp_score<S: AsRef<str>>(
    answers: &[S],
    dimension: &CulturalDimension,
    aliases: &AliasTable,
) -> XdpScore {
    let labels: Vec<AnswerLabel> = answers
        .iter()
        .map(|a| normalize_answer(a.as_ref(), aliases))
        .collect();
    xdp_from_labels(&labels, dimension)
}

pub fn xdp_from_labels(labels: &[AnswerLabel], dimension: &CulturalDimension) -> XdpScore {
    let n = labels.len();
    let count = |pole: &str| labels.iter().filter(|l| l.name() == Some(pole)).count();
    let d0 = count(&dimension.pole_positive.name);
    let d1 = count(&dimension.pole_negative.name);
    let (frac_d0, frac_d1, frac_cant) = if n == 0 {
        (0.0, 0.0, 1.0)
    } else {
        let n = n as f64;
        (
            d0 as f64 / n,
            d1 as f64 / n,
            (labels.len() - d0 - d1) as f64 / n,
        )
    };
    XdpScore {
        dimension_id: dimension.id.clone(),
        value: frac_d0 - frac_d1,
        frac_d0,
        frac_d1,
        frac_cant,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XdpRecord {
    pub source: String,
    pub model: String,
    pub pt: TemplateKind,
    pub lang: String,
    pub score: XdpScore,
}

/// XDP per (source, model, template, language) for one dimension, pooling
/// the answers of every concept.
pub fn xdp_records(
    answers: &[VqaAnswer],
    dimension: &CulturalDimension,
    exec: Execution,
) -> Result<Vec<XdpRecord>, AnswerError> {
    let aliases = AliasTable::dimension(dimension)?;
    let question = QuestionId::Xdp(dimension.id.clone());
    let mut pooled: BTreeMap<(String, String, TemplateKind, String), Vec<&str>> = BTreeMap::new();
    for (set, list) in group_answers(answers, &question) {
        pooled
            .entry((set.source, set.model, set.pt, set.lang))
            .or_default()
            .extend(list.iter().map(|a| a.answer.as_str()));
    }
    let pooled: Vec<_> = pooled.into_iter().collect();
    Ok(
        exec.map(&pooled, |((source, model, pt, lang), texts)| XdpRecord {
            source: source.clone(),
            model: model.clone(),
            pt: *pt,
            lang: lang.clone(),
            score: xdp_score(texts, dimension, &aliases),
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn registry() -> &'static OntologyRegistry {
        OntologyRegistry::bundled_shared()
    }

    fn named(s: &str) -> AnswerLabel {
        AnswerLabel::Named(s.into())
    }

    #[test]
    fn bundled_alias_tables_are_consistent() {
        let reg = registry();
        assert!(!AliasTable::nationalities(reg).unwrap().is_empty());
        for d in reg.dimensions() {
            AliasTable::dimension(d).unwrap();
        }
    }

    #[test]
    fn normalization_examples() {
        let t = AliasTable::nationalities(registry()).unwrap();
        assert_eq!(normalize_answer("Russian Federation", &t), named("Russian"));
        assert_eq!(
            normalize_answer("I cannot determine", &t),
            AnswerLabel::CantTell
        );
        let hindi = registry().nationality("HI").unwrap().primary_name.clone();
        assert_eq!(
            normalize_answer("the photo is from India", &t),
            named(&hindi)
        );
        assert_eq!(normalize_answer("SPAIN!", &t), named("Spanish"));
        assert_eq!(normalize_answer("Mexico.", &t), named("Mexican"));
    }

    #[test]
    fn longest_alias_wins_and_whole_words_only() {
        let mut t = AliasTable::new();
        t.add("america", "American").unwrap();
        t.add("south america", "Southern").unwrap();
        t.add("india", "Hindi").unwrap();
        assert_eq!(normalize_answer("South America", &t), named("Southern"));
        assert_eq!(normalize_answer("indiana", &t), AnswerLabel::CantTell);
        t.add("spain", "Spanish").unwrap();
        assert_eq!(normalize_answer("india or spain", &t), named("Hindi"));
        assert_eq!(normalize_answer("spain or india", &t), named("Spanish"));
        t.add("russian federation", "Russian").unwrap();
        assert_eq!(
            normalize_answer("india, not the russian federation", &t),
            named("Russian")
        );
    }

    #[test]
    fn alias_conflicts_rejected() {
        let mut t = AliasTable::new();
        t.add("georgia", "Georgian").unwrap();
        t.add("Georgia", "Georgian").unwrap();
        assert!(matches!(
            t.add("georgia", "American"),
            Err(AnswerError::AliasConflict { .. })
        ));
    }

    #[test]
    fn vote_examples() {
        let t = AliasTable::nationalities(registry()).unwrap();
        let v = majority_vote(&["Russia", "Russia", "Russia", "France"], &t);
        assert_eq!(v.label, named("Russian"));
        assert_eq!(v.counts[&named("Russian")], 3);
        assert_eq!(v.total(), 4);
        assert_eq!(
            majority_vote(&["Russia", "Russia", "France", "France"], &t).label,
            AnswerLabel::CantTell
        );
        assert_eq!(majority_vote(&["Spain"], &t).label, named("Spanish"));
        // Can't-tell competes like any other label.
        assert_eq!(
            majority_vote(&["no idea", "unclear", "Spain"], &t).label,
            AnswerLabel::CantTell
        );
    }

    #[test]
    fn xna_examples() {
        let reg = registry();
        let out = |l: AnswerLabel| VoteOutcome {
            label: l,
            counts: BTreeMap::new(),
        };
        let outcomes = vec![
            ("RU".to_string(), out(named("Russian"))),
            ("ES".to_string(), out(named("Spanish"))),
            ("DE".to_string(), out(named("German"))),
            ("FR".to_string(), out(AnswerLabel::CantTell)),
        ];
        assert_eq!(
            xna_score(&outcomes, reg, NationalityOrder::Primary)
                .unwrap()
                .score,
            0.75
        );
        let cant: Vec<_> = outcomes
            .iter()
            .map(|(l, _)| (l.clone(), out(AnswerLabel::CantTell)))
            .collect();
        assert_eq!(
            xna_score(&cant, reg, NationalityOrder::Primary)
                .unwrap()
                .score,
            0.0
        );
        let mex = vec![("ES".to_string(), out(named("Mexican")))];
        assert_eq!(
            xna_score(&mex, reg, NationalityOrder::Primary)
                .unwrap()
                .score,
            0.0
        );
        assert_eq!(
            xna_score(&mex, reg, NationalityOrder::Extended)
                .unwrap()
                .score,
            1.0
        );
        let bad = vec![("XX".to_string(), out(named("Russian")))];
        assert!(xna_score(&bad, reg, NationalityOrder::Primary).is_err());
    }

    fn modern() -> CulturalDimension {
        registry().dimension("modern_ancient").unwrap().clone()
    }

    #[test]
    fn xdp_examples() {
        let dim = modern();
        let t = AliasTable::dimension(&dim).unwrap();
        let mut answers = vec!["modern"; 6];
        answers.extend(["ancient"; 3]);
        answers.push("hard to say");
        let s = xdp_score(&answers, &dim, &t);
        assert!((s.value - 0.3).abs() < 1e-12);
        assert!((s.frac_d0 + s.frac_d1 + s.frac_cant - 1.0).abs() < 1e-9);
        assert_eq!(xdp_score(&["Modern", "modernity"], &dim, &t).value, 1.0);
        assert_eq!(xdp_score(&["modern", "ancient"], &dim, &t).value, 0.0);
    }

    fn answer(source: &str, lang: &str, idx: u32, q: QuestionId, text: &str) -> VqaAnswer {
        VqaAnswer {
            model: "sd".into(),
            concept: "food".into(),
            pt: TemplateKind::FullyTranslated,
            lang: lang.into(),
            image_index: idx,
            question_id: q,
            answer: text.into(),
            source: source.into(),
        }
    }

    #[test]
    fn sources_kept_apart_and_errors_dropped() {
        let reg = registry();
        let t = AliasTable::nationalities(reg).unwrap();
        let answers = vec![
            answer("blip", "RU", 0, QuestionId::Xna, "Russia"),
            answer("blip", "RU", 1, QuestionId::Xna, ERROR_ANSWER),
            answer("blip", "RU", 2, QuestionId::Xna, "France"),
            answer("gpt", "RU", 0, QuestionId::Xna, "Russia"),
            answer("gpt", "RU", 1, QuestionId::Xna, "Russia"),
            answer(
                "blip",
                "RU",
                3,
                QuestionId::Xdp("modern_ancient".into()),
                "modern",
            ),
        ];
        let votes = xna_votes(&answers, &t, Execution::Sequential);
        assert_eq!(votes.len(), 2);
        assert_eq!(votes[0].set.source, "blip");
        assert_eq!(votes[0].outcome.total(), 2);
        assert_eq!(votes[0].outcome.label, AnswerLabel::CantTell);
        assert_eq!(votes[1].outcome.label, named("Russian"));
        let summary = xna_summary(&votes, reg, NationalityOrder::Primary).unwrap();
        assert_eq!(summary.language_means.len(), 2);
        let recs = xdp_records(&answers, &modern(), Execution::Sequential).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].score.value, 1.0);
    }

    #[test]
    fn answer_file_round_trip() {
        let a = answer(
            "blip",
            "RU",
            0,
            QuestionId::Xdp("modern_ancient".into()),
            "modern",
        );
        let line = serde_json::to_string(&a).unwrap();
        assert!(line.contains("\"question_id\":\"xdp:modern_ancient\""));
        let parsed = read_answers(format!("{line}\n\n").as_bytes()).unwrap();
        assert_eq!(parsed, vec![a]);
        let bad = line.replace("\"modern\"", "\"  \"");
        assert!(matches!(
            read_answers(bad.as_bytes()),
            Err(AnswerError::Parse { line: 1, .. })
        ));
        assert!("xdp:".parse::<QuestionId>().is_err());
        let mut unknown = answer("b", "RU", 0, QuestionId::Xdp("nope".into()), "x");
        assert!(validate_answers(std::slice::from_ref(&unknown), registry()).is_err());
        unknown.question_id = QuestionId::Xna;
        validate_answers(&[unknown], registry()).unwrap();
    }

    fn label_strategy() -> impl Strategy<Value = AnswerLabel> {
        prop_oneof![
            Just(AnswerLabel::CantTell),
            Just(named("a")),
            Just(named("b")),
            Just(named("c")),
        ]
    }

    proptest! {
        #[test]
        fn vote_is_permutation_invariant(labels in prop::collection::vec(label_strategy(), 1..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = labels.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = majority_of(&labels);
            let b = majority_of(&shuffled);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.total(), labels.len());
        }

        #[test]
        fn xdp_bounded(labels in prop::collection::vec(prop_oneof![
            Just(named("Modern")), Just(named("Ancient")), Just(AnswerLabel::CantTell)
        ], 1..20)) {
            let s = xdp_from_labels(&labels, &modern());
            prop_assert!(s.value.abs() <= 1.0 - s.frac_cant + 1e-12);
            prop_assert!((s.frac_d0 + s.frac_d1 + s.frac_cant - 1.0).abs() < 1e-9);
        }

        #[test]
        fn xna_monotone(correct in prop::collection::vec(any::<bool>(), 1..20), flip in any::<prop::sample::Index>()) {
            let reg = registry();
            let make = |ok: &[bool]| -> Vec<(String, VoteOutcome)> {
                ok.iter().map(|&c| ("RU".to_string(), VoteOutcome {
                    label: if c { named("Russian") } else { named("French") },
                    counts: BTreeMap::new(),
                })).collect()
            };
            let before = xna_score(&make(&correct), reg, NationalityOrder::Primary).unwrap().score;
            let mut after = correct.clone();
            after[flip.index(correct.len())] = true;
            let after = xna_score(&make(&after), reg, NationalityOrder::Primary).unwrap().score;
            prop_assert!(after >= before);
        }
    }
}
