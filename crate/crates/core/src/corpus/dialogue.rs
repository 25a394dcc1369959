//! Dialogue types and the two source-format parsers.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One turn of a dialogue.
///
/// Persona-Chat files pair every partner utterance with the reply and the
/// published candidate list, so a Persona turn carries `response` and
/// `candidates`. CMUDoG turns are single utterances tagged with the index of
/// the document section being discussed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub candidates: Vec<String>,
    #[serde(default)]
    pub section: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    /// Persona sentences, or the ordered document sections for CMUDoG.
    pub knowledge: Vec<String>,
    pub turns: Vec<Turn>,
}

const SELF_PERSONA: &str = "your persona:";
const PARTNER_PERSONA: &str = "partner's persona:";

/// Parse the numbered-line Persona-Chat format.
///
/// ```text
/// 1 your persona: i like dogs.
/// 2 hi there\ti love dogs !\t\tcand a|cand b|i love dogs !
/// ```
///
/// A line number of 1 starts a new episode. Only the speaker's own persona
/// is kept as knowledge; `partner's persona:` lines are skipped.
pub fn parse_persona_chat<R: BufRead>(input: R) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    let mut cur: Option<Dialogue> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (num, rest) = line.split_once(' ').ok_or_else(|| Error::MalformedLine {
            line: lineno,
            reason: "missing line index".into(),
        })?;
        let num: usize = num.parse().map_err(|_| Error::MalformedLine {
            line: lineno,
            reason: format!("line index `{num}` is not a number"),
        })?;
        if num == 1 {
            if let Some(d) = cur.take() {
                out.push(d);
            }
            cur = Some(Dialogue {
                id: format!("{}", out.len()),
                knowledge: Vec::new(),
                turns: Vec::new(),
            });
        }
        let dialogue = cur.as_mut().ok_or_else(|| Error::MalformedLine {
            line: lineno,
            reason: "episode does not start at index 1".into(),
        })?;
        if let Some(p) = rest.strip_prefix(SELF_PERSONA) {
            dialogue.knowledge.push(p.trim().to_string());
            continue;
        }
        if rest.starts_with(PARTNER_PERSONA) {
            continue;
        }
        let fields: Vec<&str> = rest.split('\t').collect();
        if fields.len() < 2 {
            return Err(Error::MalformedLine {
                line: lineno,
                reason: "exchange line needs `utterance\\tresponse`".into(),
            });
        }
        let candidates = match fields.get(3) {
            Some(c) if !c.is_empty() => c.split('|').map(str::to_string).collect(),
            _ => Vec::new(),
        };
        dialogue.turns.push(Turn {
            speaker: "partner".into(),
            text: fields[0].to_string(),
            response: Some(fields[1].to_string()),
            candidates,
            section: None,
        });
    }
    out.extend(cur);
    Ok(out)
}

#[derive(Deserialize)]
struct CmuRecord {
    #[serde(default)]
    id: Option<String>,
    document: Vec<String>,
    turns: Vec<CmuTurn>,
}

#[derive(Deserialize)]
struct CmuTurn {
    speaker: String,
    text: String,
    section: usize,
}

/// Minimum number of turns a CMUDoG conversation needs to be kept.
pub const CMUDOG_MIN_TURNS: usize = 4;

/// Parse line-delimited CMUDoG records:
///
/// ```text
/// {"id": "c1", "document": ["section 0", "section 1"],
///  "turns": [{"speaker": "user1", "text": "hi", "section": 0}, ...]}
/// ```
///
/// Both collection scenarios share this format and are simply concatenated.
/// Conversations with fewer than four turns are dropped.
pub fn parse_cmudog<R: BufRead>(input: R) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CmuRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            record: i + 1,
            reason: e.to_string(),
        })?;
        if let Some(t) = rec.turns.iter().find(|t| t.section >= rec.document.len()) {
            return Err(Error::MalformedRecord {
                record: i + 1,
                reason: format!(
                    "turn refers to section {} of a {}-section document",
                    t.section,
                    rec.document.len()
                ),
            });
        }
        if rec.turns.len() < CMUDOG_MIN_TURNS {
            continue;
        }
        out.push(Dialogue {
            id: rec.id.unwrap_or_else(|| format!("line{}", i + 1)),
            knowledge: rec.document,
            turns: rec
                .turns
                .into_iter()
                .map(|t| Turn {
                    speaker: t.speaker,
                    text: t.text,
                    response: None,
                    candidates: Vec::new(),
                    section: Some(t.section),
                })
                .collect(),
        });
    }
    Ok(out)
}

/// Conversation and turn totals, as reported in dataset statistics tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub conversations: usize,
    pub turns: usize,
}

pub fn corpus_stats(dialogues: &[Dialogue]) -> CorpusStats {
    CorpusStats {
        conversations: dialogues.len(),
        turns: dialogues.iter().map(|d| d.turns.len()).sum(),
    }
}
