//! Tokenization, vocabulary construction, and extended-vocabulary encoding.
//!
//! The encoding layer is where copying becomes representable: every source
//! token gets an id in an *extended* vocabulary that is the union of the
//! base vocabulary and the out-of-vocabulary tokens of that one example.
//! Source OOVs receive temporary ids `vocab.size + k`, where `k` is the
//! token's first-appearance index in the example's `oov_list`. Duplicate
//! source tokens share one extended id, which is what lets a scatter-add
//! realize "sum attention over every position holding this token".

use serde::Deserialize;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

/// Display forms of the reserved ids. These never appear in corpus text
/// (the tokenizer splits `<` and `>` off via the quote/punct rule only if
/// listed; they are filtered during vocabulary construction regardless).
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Punctuation characters split into standalone tokens.
const SPLIT_PUNCT: [char; 10] = ['.', ',', '!', '?', ';', ':', '(', ')', '"', '\''];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid JSON object: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("extended id {id} out of range for vocab size {vocab_size} + {oov_len} OOVs")]
    IdOutOfRange {
        id: usize,
        vocab_size: usize,
        oov_len: usize,
    },
    #[error("vocabulary file lists special token {0:?} explicitly")]
    ExplicitSpecial(String),
}

/// Lowercase, split on whitespace, then split listed punctuation characters
/// into standalone tokens. A `.` or `,` flanked by digits on both sides is
/// kept inside its token so numbers like `3.5` or `1,000` survive whole;
/// hyphens are never split, so scores like `142-139` stay single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if SPLIT_PUNCT.contains(&c) {
                let numeric_interior = (c == '.' || c == ',')
                    && i > 0
                    && i + 1 < chars.len()
                    && chars[i - 1].is_ascii_digit()
                    && chars[i + 1].is_ascii_digit();
                if numeric_interior {
                    current.push(c);
                } else {
                    if !current.is_empty() {
                        out.push(std::mem::take(&mut current));
                    }
                    out.push(c.to_string());
                }
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Fixed-size token table with four reserved ids. Lookup of an unknown
/// token falls back to [`UNK`]; ids `4..size` biject with regular tokens.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Build from a corpus of token lists. Tokens with frequency below
    /// `min_freq` are dropped; the rest are ranked by descending frequency
    /// with lexicographic tie-breaks and truncated so the total table size
    /// (including the four specials) does not exceed `max_size`.
    pub fn build(corpus: &[Vec<String>], max_size: usize, min_freq: usize) -> Vocabulary {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            for tok in doc {
                *freq.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(tok, n)| *n >= min_freq && !SPECIAL_TOKENS.contains(tok))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let capacity = max_size.saturating_sub(SPECIAL_TOKENS.len());
        ranked.truncate(capacity);

        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.iter().map(|(tok, _)| tok.to_string()));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(id, tok)| (tok.clone(), id))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Base-vocabulary id of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    /// Plain-text persistence: one regular token per line, line number + 4
    /// giving the id. Specials are implicit.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = File::create(path)?;
        for tok in &self.id_to_token[SPECIAL_TOKENS.len()..] {
            writeln!(f, "{tok}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary, CorpusError> {
        let reader = BufReader::new(File::open(path)?);
        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for line in reader.lines() {
            let tok = line?;
            if tok.is_empty() {
                continue;
            }
            if SPECIAL_TOKENS.contains(&tok.as_str()) {
                return Err(CorpusError::ExplicitSpecial(tok));
            }
            id_to_token.push(tok);
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(id, tok)| (tok.clone(), id))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }
}

/// One source/target pair, fully encoded for training and decoding.
///
/// `src_ids`/`tgt_ids` live in the base vocabulary (OOV mapped to UNK);
/// `src_ext_ids`/`tgt_ext_ids` live in the extended vocabulary of this
/// example. Target *id* sequences carry BOS/EOS sentinels; the token-level
/// fields (`tgt_tokens`, `copy_candidate`, `in_vocab`) do not, so
/// `tgt_ids[t + 1]` corresponds to `tgt_tokens[t]`.
#[derive(Debug, Clone)]
pub struct EncodedExample {
    pub src_tokens: Vec<String>,
    pub src_ids: Vec<usize>,
    pub src_ext_ids: Vec<usize>,
    pub tgt_tokens: Vec<String>,
    pub tgt_ids: Vec<usize>,
    pub tgt_ext_ids: Vec<usize>,
    pub oov_list: Vec<String>,
    /// Per target position: does the token occur anywhere in the source
    /// (exact string match)?
    pub copy_candidate: Vec<bool>,
    /// Per target position: is the token in the base vocabulary?
    pub in_vocab: Vec<bool>,
}

impl EncodedExample {
    /// Slot count of this example's extended vocabulary.
    pub fn ext_size(&self, vocab: &Vocabulary) -> usize {
        vocab.size() + self.oov_list.len()
    }
}

/// Encode one pair against a fixed vocabulary. Source OOVs are collected in
/// first-appearance order; target tokens absent from both the vocabulary
/// and the source encode as UNK.
pub fn encode_example(src: &str, tgt: &str, vocab: &Vocabulary) -> EncodedExample {
    let src_tokens = tokenize(src);
    let tgt_tokens = tokenize(tgt);

    let mut oov_list: Vec<String> = Vec::new();
    let mut oov_index: HashMap<&str, usize> = HashMap::new();
    let mut src_ids = Vec::with_capacity(src_tokens.len());
    let mut src_ext_ids = Vec::with_capacity(src_tokens.len());
    for tok in &src_tokens {
        src_ids.push(vocab.id(tok));
        if vocab.contains(tok) {
            src_ext_ids.push(vocab.id(tok));
        } else {
            let next = oov_list.len();
            let k = *oov_index.entry(tok.as_str()).or_insert(next);
            if k == next {
                oov_list.push(tok.clone());
            }
            src_ext_ids.push(vocab.size() + k);
        }
    }
    // Values in oov_index borrow from src_tokens; rebuild an owned map view
    // for target-side lookups below.
    let oov_pos: HashMap<&str, usize> = oov_list
        .iter()
        .enumerate()
        .map(|(k, tok)| (tok.as_str(), k))
        .collect();

    let src_set: HashSet<&str> = src_tokens.iter().map(|s| s.as_str()).collect();
    let mut copy_candidate = Vec::with_capacity(tgt_tokens.len());
    let mut in_vocab = Vec::with_capacity(tgt_tokens.len());
    let mut tgt_ids = vec![BOS];
    let mut tgt_ext_ids = vec![BOS];
    for tok in &tgt_tokens {
        copy_candidate.push(src_set.contains(tok.as_str()));
        in_vocab.push(vocab.contains(tok));
        tgt_ids.push(vocab.id(tok));
        let ext = if vocab.contains(tok) {
            vocab.id(tok)
        } else if let Some(&k) = oov_pos.get(tok.as_str()) {
            vocab.size() + k
        } else {
            UNK
        };
        tgt_ext_ids.push(ext);
    }
    tgt_ids.push(EOS);
    tgt_ext_ids.push(EOS);

    EncodedExample {
        src_tokens,
        src_ids,
        src_ext_ids,
        tgt_tokens,
        tgt_ids,
        tgt_ext_ids,
        oov_list,
        copy_candidate,
        in_vocab,
    }
}

/// Map extended ids back to tokens. EOS terminates the output; BOS and PAD
/// are dropped; ids at or past `vocab.size` index into `oov_list`.
pub fn decode_ids(
    ext_ids: &[usize],
    vocab: &Vocabulary,
    oov_list: &[String],
) -> Result<Vec<String>, CorpusError> {
    let mut out = Vec::new();
    for &id in ext_ids {
        if id == EOS {
            break;
        }
        if id == BOS || id == PAD {
            continue;
        }
        if id < vocab.size() {
            out.push(vocab.token(id).expect("id < size implies a table entry").to_string());
        } else {
            let k = id - vocab.size();
            let tok = oov_list
                .get(k)
                .ok_or(CorpusError::IdOutOfRange {
                    id,
                    vocab_size: vocab.size(),
                    oov_len: oov_list.len(),
                })?;
            out.push(tok.clone());
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct PairLine {
    src: String,
    tgt: String,
}

/// Stream `{"src": ..., "tgt": ...}` objects from a JSONL file, reporting
/// the 1-based line number on parse failures. Blank lines are skipped.
pub fn load_pairs(
    path: &Path,
) -> Result<impl Iterator<Item = Result<(String, String), CorpusError>>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader.lines().enumerate().filter_map(|(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(CorpusError::Io(e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(
            serde_json::from_str::<PairLine>(&line)
                .map(|p| (p.src, p.tgt))
                .map_err(|source| CorpusError::Parse { line: i + 1, source }),
        )
    }))
}

/// Lazy stream of encoded examples in file order.
pub fn load_jsonl<'v>(
    path: &Path,
    vocab: &'v Vocabulary,
) -> Result<impl Iterator<Item = Result<EncodedExample, CorpusError>> + 'v, CorpusError> {
    Ok(load_pairs(path)?
        .map(move |pair| pair.map(|(src, tgt)| encode_example(&src, &tgt, vocab))))
}
