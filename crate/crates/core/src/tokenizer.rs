//! Word-level prompt tokenizer with `[sot]`/`[eot]`/`[qa]`/`[pad]` specials.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOT: usize = 1;
pub const EOT: usize = 2;
pub const QA: usize = 3;
pub const UNK: usize = 4;

const SPECIALS: [&str; 5] = ["[pad]", "[sot]", "[eot]", "[qa]", "[unk]"];

/// Which special token closes the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    Eot,
    Qa,
}

impl Terminal {
    pub fn id(self) -> usize {
        match self {
            Terminal::Eot => EOT,
            Terminal::Qa => QA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

impl Vocab {
    /// Keeps the `max_size - 5` most frequent words (ties broken
    /// lexicographically) after the four specials and `[unk]`.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        if max_size < SPECIALS.len() {
            return Err(Error::Config(format!(
                "vocabulary size {max_size} leaves no room for the {} reserved tokens",
                SPECIALS.len()
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for w in split_words(text.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());

        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Word ids for `text`; out-of-vocabulary words become `[unk]`.
    pub fn word_ids(&self, text: &str) -> Vec<usize> {
        split_words(text)
            .map(|w| match self.index.get(&w) {
                Some(&id) if id > UNK => id,
                _ => UNK,
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(out, "{t}\t{i}").expect("writing to a String");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let bad = |msg: &str| Error::Data(format!("vocab line {}: {msg}", line_no + 1));
            let (tok, id) = line.split_once('\t').ok_or_else(|| bad("expected token<TAB>id"))?;
            let id: usize = id.trim().parse().map_err(|_| bad("id is not an integer"))?;
            if id != tokens.len() {
                return Err(bad("ids must be dense and in order"));
            }
            if id < SPECIALS.len() && tok != SPECIALS[id] {
                return Err(bad("reserved ids must hold the special tokens"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < SPECIALS.len() {
            return Err(Error::Data("vocab file is missing reserved tokens".into()));
        }
        Ok(Self::from_tokens(tokens))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    /// `[sot]`, up to `len - 2` words, the terminal token, then `[pad]`s.
    pub fn encode(&self, text: &str, len: usize, terminal: Terminal) -> Result<TokenSequence> {
        if len < 3 {
            return Err(Error::Config(format!("context length {len} is below 3")));
        }
        let mut ids = Vec::with_capacity(len);
        ids.push(SOT);
        ids.extend(self.word_ids(text).into_iter().take(len - 2));
        let terminal_pos = ids.len();
        ids.push(terminal.id());
        ids.resize(len, PAD);
        Ok(TokenSequence {
            ids,
            terminal_pos,
            terminal,
        })
    }

    /// Words between `[sot]` and the terminal token.
    pub fn decode(&self, seq: &TokenSequence) -> Vec<String> {
        seq.ids[1..seq.terminal_pos]
            .iter()
            .map(|&id| self.token(id).unwrap_or("[unk]").to_string())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub terminal_pos: usize,
    pub terminal: Terminal,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The same sequence closed by a different terminal token.
    pub fn with_terminal(&self, terminal: Terminal) -> Self {
        let mut out = self.clone();
        out.ids[self.terminal_pos] = terminal.id();
        out.terminal = terminal;
        out
    }

    pub fn is_pad(&self, pos: usize) -> bool {
        pos > self.terminal_pos
    }
}
