//! Token vocabulary shared by every task.
//!
//! The symbol space is closed: one fixed set of tokens covers all tasks, so
//! the single GEN token and cross-task replay live in one id space. Ids 0–3
//! are reserved for PAD, GEN, SEP, EOS in that order.

use std::collections::HashMap;

use crate::error::{CoreError, Result};
use crate::textdata::qa::{QAPair, Source};

pub const PAD_ID: usize = 0;
pub const GEN_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const EOS_ID: usize = 3;

pub const PAD: &str = "<pad>";
pub const GEN: &str = "<gen>";
pub const SEP: &str = "<sep>";
pub const EOS: &str = "<eos>";

const RESERVED: [&str; 4] = [PAD, GEN, SEP, EOS];

/// Token <-> id bijection with the four reserved symbols at the front.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Build from content tokens; reserved symbols are prepended.
    pub fn new<I, T>(content: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for t in content {
            tokens.push(t.into());
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CoreError::InvalidArgument(format!(
                    "duplicate vocabulary token `{t}`"
                )));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// The standard desk-scale symbol set: 48 content words, three
    /// question-style markers, label/tag/key/value tokens. 75 ids total.
    pub fn default_desk() -> Vocab {
        let mut content: Vec<String> = (0..48).map(|i| format!("w{i:02}")).collect();
        content.extend(["ask-label", "ask-tags", "ask-slots"].map(String::from));
        content.extend((0..4).map(|i| format!("lab{i}")));
        content.extend((0..4).map(|i| format!("tag{i}")));
        content.extend((0..4).map(|i| format!("key{i}")));
        content.extend((0..8).map(|i| format!("val{i}")));
        Vocab::new(content).expect("desk vocabulary has no duplicates")
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn is_reserved(token: &str) -> bool {
        RESERVED.contains(&token)
    }

    pub fn is_reserved_id(id: usize) -> bool {
        id < RESERVED.len()
    }

    fn encode_words(&self, words: &[String], out: &mut Vec<usize>) -> Result<()> {
        for w in words {
            if Self::is_reserved(w) {
                return Err(CoreError::ReservedToken(w.clone()));
            }
            let id = self
                .id(w)
                .ok_or_else(|| CoreError::InvalidArgument(format!("unknown token `{w}`")))?;
            out.push(id);
        }
        Ok(())
    }

    /// Serialize a pair to ids with the layout `[GEN] x [SEP] y [EOS]`.
    pub fn encode(&self, pair: &QAPair) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(pair.question().len() + pair.answer().len() + 3);
        out.push(GEN_ID);
        self.encode_words(pair.question(), &mut out)?;
        out.push(SEP_ID);
        self.encode_words(pair.answer(), &mut out)?;
        out.push(EOS_ID);
        Ok(out)
    }

    /// Inverse of `encode`: strict `[GEN] x [SEP] y [EOS]` layout with
    /// nonempty x and y and no reserved ids inside either span.
    pub fn decode(&self, ids: &[usize]) -> Result<QAPair> {
        let bad = |msg: &str| CoreError::InvalidArgument(format!("decode: {msg}"));
        if ids.first() != Some(&GEN_ID) {
            return Err(bad("missing leading GEN"));
        }
        if ids.last() != Some(&EOS_ID) {
            return Err(bad("missing terminal EOS"));
        }
        let body = &ids[1..ids.len() - 1];
        let sep_at = body
            .iter()
            .position(|&id| id == SEP_ID)
            .ok_or_else(|| bad("missing SEP"))?;
        let (q_ids, a_ids) = (&body[..sep_at], &body[sep_at + 1..]);
        let words = |span: &[usize]| -> Result<Vec<String>> {
            span.iter()
                .map(|&id| {
                    if Vocab::is_reserved_id(id) {
                        return Err(bad("reserved id inside question or answer"));
                    }
                    self.token(id)
                        .map(str::to_string)
                        .ok_or(CoreError::TokenOutOfRange {
                            id,
                            vocab: self.size(),
                        })
                })
                .collect()
        };
        QAPair::new(words(q_ids)?, words(a_ids)?, Source::Real)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_fixed() {
        let v = Vocab::default_desk();
        assert_eq!(v.id(PAD), Some(PAD_ID));
        assert_eq!(v.id(GEN), Some(GEN_ID));
        assert_eq!(v.id(SEP), Some(SEP_ID));
        assert_eq!(v.id(EOS), Some(EOS_ID));
        assert_eq!(v.size(), 75);
    }

    #[test]
    fn bijection() {
        let v = Vocab::default_desk();
        for id in 0..v.size() {
            let t = v.token(id).unwrap();
            assert_eq!(v.id(t), Some(id));
        }
    }

    #[test]
    fn encode_layout() {
        let v = Vocab::default_desk();
        let p = QAPair::new(
            vec!["w00".into(), "w01".into()],
            vec!["lab0".into()],
            Source::Real,
        )
        .unwrap();
        let ids = v.encode(&p).unwrap();
        assert_eq!(ids[0], GEN_ID);
        assert_eq!(ids[3], SEP_ID);
        assert_eq!(*ids.last().unwrap(), EOS_ID);
        let back = v.decode(&ids).unwrap();
        assert_eq!(back.question(), p.question());
        assert_eq!(back.answer(), p.answer());
    }

    #[test]
    fn duplicate_token_rejected() {
        assert!(Vocab::new(["a", "a"]).is_err());
    }
}
