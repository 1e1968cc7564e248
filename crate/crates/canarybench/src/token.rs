//! Deterministic tokenizer shared by every stage of the pipeline.
//!
//! "100 tokens" only means something if every model, the benchmark builder,
//! and the scorer agree on what a token is. Model tokenizers all disagree, so
//! the harness defines its own coordinate system: byte-level segmentation
//! with identifier, digit, and whitespace runs merged. Detokenization is
//! plain concatenation, so `detokenize(tokenize(s)) == s` for any input.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Reserved id for left-padding model contexts.
pub const PAD_ID: u32 = 0;
/// Reserved id for tokens never seen when the vocabulary was built.
pub const UNK_ID: u32 = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Canonicalize line endings (CRLF/CR to LF) and strip trailing whitespace
/// from every line. This is the only rewriting the harness performs; it must
/// be applied identically at ingest time and at attack time.
pub fn normalize(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut out = String::with_capacity(unified.len());
    for (i, line) in unified.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(line.trim_end_matches([' ', '\t']));
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Ident,
    Digit,
    Space,
    Other,
}

fn class_of(c: char) -> CharClass {
    if c.is_alphabetic() || c == '_' {
        CharClass::Ident
    } else if c.is_ascii_digit() {
        CharClass::Digit
    } else if c == ' ' || c == '\t' {
        CharClass::Space
    } else {
        CharClass::Other
    }
}

/// Split text into tokens: identifier runs (`[A-Za-z_][A-Za-z0-9_]*`), digit
/// runs, space/tab runs, and single characters for everything else (each
/// newline is its own token). Concatenating the tokens reproduces the input.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        let class = class_of(c);
        let cont = |next: char| match class {
            // Identifiers absorb trailing digits: `x12` is one token.
            CharClass::Ident => matches!(class_of(next), CharClass::Ident | CharClass::Digit),
            CharClass::Digit => class_of(next) == CharClass::Digit,
            CharClass::Space => class_of(next) == CharClass::Space,
            CharClass::Other => false,
        };
        let end = loop {
            match iter.peek() {
                Some(&(j, next)) if cont(next) => {
                    let _ = j;
                    iter.next();
                }
                Some(&(j, _)) => break j,
                None => break text.len(),
            }
        };
        tokens.push(&text[start..end]);
        start = end;
        let _ = i;
    }
    tokens
}

/// Inverse of [`tokenize`]: plain concatenation.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(|t| t.as_ref()).collect()
}

/// Bidirectional token string <-> id table. Ids 0 and 1 are reserved for
/// pad and unk; real tokens are numbered in first-seen order, which makes
/// the table deterministic for a fixed document order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut v = Vocab::new();
        for text in texts {
            for tok in tokenize(text) {
                v.intern(tok);
            }
        }
        v
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Id of a token, or [`UNK_ID`] if it was never interned.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK_TOKEN)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        // Reserved tokens are always present.
        false
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).into_iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&id| self.token(id)).collect()
    }

    /// Stable identifier of segmentation rules + table contents, recorded in
    /// corpus manifests so mismatched artifacts are detectable.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0xff]);
        }
        let digest = hasher.finalize();
        let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        format!("bytews-v1:{hex}")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut v: Vocab = serde_json::from_reader(std::io::BufReader::new(file))?;
        v.rebuild_index();
        Ok(v)
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}
