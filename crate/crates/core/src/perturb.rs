//! Text perturbation primitives: homoglyph tables, single-character
//! edits, and the replacement budget.
//!
//! Candidates always preserve the character count of the original text;
//! edits are recorded against the original so they can be replayed or
//! reversed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("position {position} out of range for text of length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("replacing {0:?} with itself is not an edit")]
    IdentityReplacement(char),
    #[error("homoglyph table maps {0:?} to itself")]
    SelfMapping(char),
    #[error("homoglyph table entry for {0:?} is empty")]
    EmptyReplacements(char),
    #[error("homoglyph table is missing letter {0:?}")]
    MissingLetter(char),
    #[error("failed to read homoglyph table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse homoglyph table {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("homoglyph table key {0:?} must be a single character")]
    BadKey(String),
}

/// Which replacement pool produced an edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Any other character from the base vocabulary.
    Char,
    /// A visually confusable character from the homoglyph table.
    Homo,
    /// No edit (the original text).
    None,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::Char => "char",
            Strategy::Homo => "homo",
            Strategy::None => "none",
        };
        f.write_str(s)
    }
}

/// A single-position substitution relative to the original text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub position: usize,
    pub old: char,
    pub new: char,
    pub strategy: Strategy,
}

/// Map from a character to its visually confusable replacements.
#[derive(Debug, Clone)]
pub struct HomoglyphTable {
    map: BTreeMap<char, Vec<char>>,
}

impl HomoglyphTable {
    /// The table shipped with the binary: every ASCII letter maps to its
    /// mathematical-italic form, plus Cyrillic/Greek lookalikes for the
    /// classic confusable pairs.
    pub fn builtin() -> Self {
        let mut map: BTreeMap<char, Vec<char>> = BTreeMap::new();
        for c in ('a'..='z').chain('A'..='Z') {
            map.insert(c, vec![math_italic(c)]);
        }
        let extras: &[(char, &[char])] = &[
            ('a', &['а']),
            ('c', &['с']),
            ('e', &['е']),
            ('i', &['і']),
            ('j', &['ј']),
            ('o', &['о', 'ο']),
            ('p', &['р']),
            ('s', &['ѕ']),
            ('x', &['х']),
            ('y', &['у']),
            ('v', &['ν']),
            ('A', &['А']),
            ('B', &['В']),
            ('C', &['С']),
            ('E', &['Е']),
            ('H', &['Н']),
            ('I', &['І']),
            ('J', &['Ј']),
            ('K', &['К']),
            ('M', &['М']),
            ('O', &['О']),
            ('P', &['Р']),
            ('S', &['Ѕ']),
            ('T', &['Т']),
            ('X', &['Х']),
            ('Y', &['У']),
        ];
        for (base, glyphs) in extras {
            map.get_mut(base).expect("letters present").extend(*glyphs);
        }
        let table = Self { map };
        table.validate().expect("builtin table is well-formed");
        table
    }

    /// Loads a table from a JSON object `{char: [replacements...]}`.
    pub fn load(path: &Path) -> Result<Self, PerturbError> {
        let text = std::fs::read_to_string(path).map_err(|source| PerturbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|source| PerturbError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        let mut map = BTreeMap::new();
        for (key, values) in raw {
            let mut chars = key.chars();
            let base = chars
                .next()
                .filter(|_| chars.next().is_none())
                .ok_or_else(|| PerturbError::BadKey(key.clone()))?;
            let mut glyphs = Vec::new();
            for value in values {
                let mut vc = value.chars();
                let glyph = vc
                    .next()
                    .filter(|_| vc.next().is_none())
                    .ok_or_else(|| PerturbError::BadKey(value.clone()))?;
                glyphs.push(glyph);
            }
            map.insert(base, glyphs);
        }
        let table = Self { map };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), PerturbError> {
        for (base, glyphs) in &self.map {
            if glyphs.is_empty() {
                return Err(PerturbError::EmptyReplacements(*base));
            }
            if glyphs.contains(base) {
                return Err(PerturbError::SelfMapping(*base));
            }
        }
        for c in ('a'..='z').chain('A'..='Z') {
            if !self.map.contains_key(&c) {
                return Err(PerturbError::MissingLetter(c));
            }
        }
        Ok(())
    }

    /// Replacement candidates for `c`, or an empty slice when the table
    /// has no entry.
    pub fn replacements(&self, c: char) -> &[char] {
        self.map.get(&c).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Every character that appears as a replacement of `base`, paired.
    pub fn entries(&self) -> impl Iterator<Item = (char, &[char])> {
        self.map.iter().map(|(c, v)| (*c, v.as_slice()))
    }
}

/// Mathematical-italic form of an ASCII letter (the glyph most fonts
/// render nearly identically to the original).
fn math_italic(c: char) -> char {
    // U+1D455 is reserved; Unicode carved out U+210E for italic h.
    if c == 'h' {
        return '\u{210E}';
    }
    let cp = match c {
        'a'..='z' => 0x1D44E + (c as u32 - 'a' as u32),
        'A'..='Z' => 0x1D434 + (c as u32 - 'A' as u32),
        _ => unreachable!("math_italic is only called on ASCII letters"),
    };
    char::from_u32(cp).expect("valid mathematical alphanumeric codepoint")
}

/// A perturbed text with its edit history relative to the original.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateText {
    chars: Vec<char>,
    edits: Vec<Edit>,
    strategy: Strategy,
}

impl CandidateText {
    /// Wraps an unmodified text.
    pub fn original(chars: Vec<char>) -> Self {
        Self {
            chars,
            edits: Vec::new(),
            strategy: Strategy::None,
        }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Edits relative to the original text, at unique positions.
    pub fn edits(&self) -> &[Edit] {
        &self.edits
    }

    /// Strategy of the most recent edit.
    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Returns a copy with `position` replaced by `new`.
    ///
    /// The edit list stays keyed to the original text: re-editing an
    /// already edited position rewrites that entry, and restoring the
    /// original character drops it.
    pub fn with_edit(
        &self,
        position: usize,
        new: char,
        strategy: Strategy,
    ) -> Result<CandidateText, PerturbError> {
        if position >= self.chars.len() {
            return Err(PerturbError::PositionOutOfRange {
                position,
                len: self.chars.len(),
            });
        }
        if self.chars[position] == new {
            return Err(PerturbError::IdentityReplacement(new));
        }
        let mut next = self.clone();
        next.chars[position] = new;
        next.strategy = strategy;
        match next.edits.iter().position(|e| e.position == position) {
            Some(i) => {
                if next.edits[i].old == new {
                    next.edits.remove(i);
                } else {
                    next.edits[i].new = new;
                    next.edits[i].strategy = strategy;
                }
            }
            None => {
                next.edits.push(Edit {
                    position,
                    old: self.chars[position],
                    new,
                    strategy,
                });
                next.edits.sort_by_key(|e| e.position);
            }
        }
        Ok(next)
    }

    /// Replays the recorded edits onto `original`; the result must equal
    /// this candidate (round-trip invariant, exercised in tests).
    pub fn replay(&self, original: &[char]) -> Vec<char> {
        let mut out = original.to_vec();
        for edit in &self.edits {
            out[edit.position] = edit.new;
        }
        out
    }

    /// Undoes the recorded edits, recovering the original text.
    pub fn revert(&self) -> Vec<char> {
        let mut out = self.chars.clone();
        for edit in &self.edits {
            out[edit.position] = edit.old;
        }
        out
    }
}

/// Single-position substitution on a pristine text.
pub fn apply_edit(
    original: &[char],
    position: usize,
    new: char,
    strategy: Strategy,
) -> Result<CandidateText, PerturbError> {
    CandidateText::original(original.to_vec()).with_edit(position, new, strategy)
}

/// Maximum number of replaced positions for a text of `len` characters:
/// `ceil(ratio * len)`, never below one so short texts stay attackable.
pub fn budget(len: usize, ratio: f64) -> usize {
    assert!(len >= 1, "budget of an empty text");
    assert!(ratio > 0.0 && ratio <= 1.0, "ratio must be in (0, 1]");
    ((ratio * len as f64).ceil() as usize).max(1)
}
