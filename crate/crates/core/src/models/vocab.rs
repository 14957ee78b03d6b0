use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
/// Masked-token placeholder for text-encoder pre-training.
pub const MASK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<mask>"];

/// Character-level ASR vocabulary with reserved ids `PAD=0, BOS=1, EOS=2, MASK=3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(symbols: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(symbols);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Sorted set of characters occurring in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let chars: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        Self::new(chars.into_iter().map(String::from))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// `BOS + characters + EOS`.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(text.len() + 2);
        ids.push(BOS);
        for c in text.chars() {
            let mut buf = [0u8; 4];
            let id = self
                .id(c.encode_utf8(&mut buf))
                .ok_or_else(|| Error::Input(format!("character {c:?} is not in the vocabulary")))?;
            ids.push(id);
        }
        ids.push(EOS);
        Ok(ids)
    }

    /// Concatenate non-reserved tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i >= RESERVED.len())
            .filter_map(|&i| self.token(i))
            .collect()
    }

    /// Non-reserved tokens in id order.
    pub fn symbols(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self.symbols()).expect("strings serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let symbols: Vec<String> =
            serde_json::from_str(s).map_err(|e| Error::Load(format!("bad vocabulary metadata: {e}")))?;
        Self::new(symbols)
    }
}

/// Ordered intent names with dense ids in `[0, I)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentLabelSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl IntentLabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Validation("intent label set is empty".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate intent `{n}`")));
            }
        }
        Ok(Self { names, index })
    }

    /// Sorted unique names.
    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let set: BTreeSet<&str> = names.into_iter().collect();
        Self::new(set.into_iter().map(String::from).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.names).expect("strings serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let names: Vec<String> =
            serde_json::from_str(s).map_err(|e| Error::Load(format!("bad intent metadata: {e}")))?;
        Self::new(names)
    }
}

/// Joint label for an (action, object, location) triple.
pub fn joint_intent(action: &str, object: &str, location: &str) -> String {
    format!("{action}|{object}|{location}")
}
