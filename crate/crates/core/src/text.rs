//! Vocabulary loading and BOS/EOS-delimited tokenization.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Width of the embedding table; no produced id reaches this value.
pub const VOCAB_CAPACITY: usize = 64_014;

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

const SPECIALS: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Ids `[HASH_BAND_START, VOCAB_CAPACITY)` are reserved for hashed
/// out-of-vocabulary words.
pub const HASH_BAND_SIZE: usize = 8_192;
pub const HASH_BAND_START: usize = VOCAB_CAPACITY - HASH_BAND_SIZE;

pub const DEFAULT_MAX_LENGTH: usize = 128;

/// Bijective token/id map. Ids 0..=3 are always `<pad> <s> </s> <unk>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<&str>()).expect("specials always fit")
    }
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in order, after the four specials.
    /// Special tokens appearing in the input keep their reserved ids.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary { tokens: Vec::new(), ids: HashMap::new() };
        for s in SPECIALS {
            vocab.push(s);
        }
        for (line, token) in tokens.into_iter().enumerate() {
            let token = token.as_ref();
            if SPECIALS.contains(&token) {
                continue;
            }
            if vocab.ids.contains_key(token) {
                return Err(Error::Vocab(format!("duplicate token {token:?} (entry {})", line + 1)));
            }
            if vocab.tokens.len() >= VOCAB_CAPACITY {
                return Err(Error::Vocab(format!(
                    "vocabulary exceeds {VOCAB_CAPACITY} entries"
                )));
            }
            vocab.push(token);
        }
        Ok(vocab)
    }

    fn push(&mut self, token: &str) {
        self.ids.insert(token.to_string(), self.tokens.len() as u32);
        self.tokens.push(token.to_string());
    }

    /// Number of stored tokens, specials included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn capacity(&self) -> usize {
        VOCAB_CAPACITY
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Stored tokens in id order, specials included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        id <= UNK_ID
    }
}

/// One token per line, UTF-8. Blank lines are ignored.
pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path.as_ref())?;
    Vocabulary::from_tokens(text.lines().map(str::trim_end).filter(|l| !l.is_empty()))
}

/// Token ids plus attention mask, always `max_length` long.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of real (unmasked) positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Index of the last unmasked position.
    pub fn last_real(&self) -> Option<usize> {
        self.attention_mask.iter().rposition(|&m| m == 1)
    }

    pub fn valid(&self) -> Vec<bool> {
        self.attention_mask.iter().map(|&m| m == 1).collect()
    }
}

/// Splits on whitespace and emits ASCII punctuation as separate words.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if c.is_ascii_punctuation() {
                if start < i {
                    out.push(&chunk[start..i]);
                }
                out.push(&chunk[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < chunk.len() {
            out.push(&chunk[start..]);
        }
    }
    out
}

/// Maps words to content ids (no BOS/EOS).
pub trait Tokenizer {
    fn vocab(&self) -> &Vocabulary;

    fn word_id(&self, word: &str) -> u32;

    fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text).into_iter().map(|w| self.word_id(w)).collect()
    }
}

fn lookup(vocab: &Vocabulary, word: &str) -> Option<u32> {
    vocab.id(word).or_else(|| {
        let lower = word.to_lowercase();
        (lower != word).then(|| vocab.id(&lower)).flatten()
    })
}

/// Whitespace/punctuation word tokenizer; unknown words map to `<unk>`.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    vocab: Vocabulary,
}

impl WordTokenizer {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl Tokenizer for WordTokenizer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn word_id(&self, word: &str) -> u32 {
        lookup(&self.vocab, word).unwrap_or(UNK_ID)
    }
}

/// Word tokenizer that sends unknown words to a stable hash bucket in the
/// reserved band instead of `<unk>`.
#[derive(Debug, Clone)]
pub struct HashedTokenizer {
    vocab: Vocabulary,
}

impl HashedTokenizer {
    pub fn new(vocab: Vocabulary) -> Result<Self> {
        if vocab.len() > HASH_BAND_START {
            return Err(Error::Vocab(format!(
                "hashed tokenizer needs vocabulary below id {HASH_BAND_START}, got {} tokens",
                vocab.len()
            )));
        }
        Ok(Self { vocab })
    }
}

/// 64-bit FNV-1a; stable across builds and platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Tokenizer for HashedTokenizer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn word_id(&self, word: &str) -> u32 {
        lookup(&self.vocab, word).unwrap_or_else(|| {
            let bucket = fnv1a(word.to_lowercase().as_bytes()) % HASH_BAND_SIZE as u64;
            (HASH_BAND_START as u64 + bucket) as u32
        })
    }
}

/// Serializable choice of tokenizer, stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    Word,
    Hashed,
}

/// Either tokenizer behind one type.
#[derive(Debug, Clone)]
pub enum AnyTokenizer {
    Word(WordTokenizer),
    Hashed(HashedTokenizer),
}

impl AnyTokenizer {
    pub fn new(kind: TokenizerKind, vocab: Vocabulary) -> Result<Self> {
        Ok(match kind {
            TokenizerKind::Word => AnyTokenizer::Word(WordTokenizer::new(vocab)),
            TokenizerKind::Hashed => AnyTokenizer::Hashed(HashedTokenizer::new(vocab)?),
        })
    }

    pub fn kind(&self) -> TokenizerKind {
        match self {
            AnyTokenizer::Word(_) => TokenizerKind::Word,
            AnyTokenizer::Hashed(_) => TokenizerKind::Hashed,
        }
    }
}

impl Tokenizer for AnyTokenizer {
    fn vocab(&self) -> &Vocabulary {
        match self {
            AnyTokenizer::Word(t) => t.vocab(),
            AnyTokenizer::Hashed(t) => t.vocab(),
        }
    }

    fn word_id(&self, word: &str) -> u32 {
        match self {
            AnyTokenizer::Word(t) => t.word_id(word),
            AnyTokenizer::Hashed(t) => t.word_id(word),
        }
    }
}

/// `[<s>] + words + [</s>]`, truncated so `</s>` always survives, then
/// padded with `<pad>` to `max_length`.
pub fn tokenize<T: Tokenizer + ?Sized>(text: &str, tokenizer: &T, max_length: usize) -> TokenSequence {
    let max_length = max_length.max(2);
    let mut ids = Vec::with_capacity(max_length);
    ids.push(BOS_ID);
    ids.extend(tokenizer.encode(text).into_iter().take(max_length - 2));
    ids.push(EOS_ID);
    let real = ids.len();
    ids.resize(max_length, PAD_ID);
    let attention_mask = (0..max_length).map(|i| u8::from(i < real)).collect();
    TokenSequence { ids, attention_mask }
}

/// Joins the non-special tokens with single spaces. Ids that are in range
/// but not stored (unused capacity, hash band) render as `<unk>`.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocabulary) -> Result<String> {
    let mut words = Vec::new();
    for &id in &seq.ids {
        if id as usize >= VOCAB_CAPACITY {
            return Err(Error::Vocab(format!("id {id} outside vocabulary of {VOCAB_CAPACITY}")));
        }
        if Vocabulary::is_special(id) && id != UNK_ID {
            continue;
        }
        words.push(vocab.token(id).unwrap_or(UNK_TOKEN));
    }
    Ok(words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_vocab() -> Vocabulary {
        Vocabulary::from_tokens(["hello", "world", "the", "cat"]).unwrap()
    }

    #[test]
    fn four_lines_plus_specials() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "hello\nworld\nthe\ncat\n").unwrap();
        let vocab = load_vocab(&path).unwrap();
        assert_eq!(vocab.len(), 8);
        assert_eq!(vocab.capacity(), VOCAB_CAPACITY);
        assert_eq!(vocab.id("hello"), Some(4));
        assert_eq!(vocab.id(BOS_TOKEN), Some(BOS_ID));
    }

    #[test]
    fn specials_in_file_keep_reserved_ids() {
        let vocab = Vocabulary::from_tokens(["<s>", "a", "<pad>", "b"]).unwrap();
        assert_eq!(vocab.len(), 6);
        assert_eq!(vocab.id("<s>"), Some(BOS_ID));
        assert_eq!(vocab.id("a"), Some(4));
        assert_eq!(vocab.id("b"), Some(5));
    }

    #[test]
    fn duplicate_is_vocab_error() {
        assert!(matches!(Vocabulary::from_tokens(["a", "b", "a"]), Err(Error::Vocab(_))));
    }

    #[test]
    fn overflow_is_vocab_error() {
        let too_many = (0..VOCAB_CAPACITY).map(|i| format!("w{i}"));
        assert!(matches!(Vocabulary::from_tokens(too_many), Err(Error::Vocab(_))));
        let exact = (0..VOCAB_CAPACITY - 4).map(|i| format!("w{i}"));
        assert_eq!(Vocabulary::from_tokens(exact).unwrap().len(), VOCAB_CAPACITY);
    }

    #[test]
    fn id_token_round_trip() {
        let vocab = small_vocab();
        for id in 0..vocab.len() as u32 {
            assert_eq!(vocab.id(vocab.token(id).unwrap()), Some(id));
        }
    }

    #[test]
    fn empty_text() {
        let seq = tokenize("", &WordTokenizer::new(small_vocab()), 6);
        assert_eq!(seq.ids, vec![BOS_ID, EOS_ID, 0, 0, 0, 0]);
        assert_eq!(seq.attention_mask, vec![1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn single_known_word() {
        let vocab = small_vocab();
        let seq = tokenize("hello", &WordTokenizer::new(vocab.clone()), 5);
        assert_eq!(seq.ids, vec![BOS_ID, vocab.id("hello").unwrap(), EOS_ID, PAD_ID, PAD_ID]);
    }

    #[test]
    fn truncation_keeps_eos() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_tokens(&words).unwrap();
        let seq = tokenize(&words.join(" "), &WordTokenizer::new(vocab.clone()), 5);
        let w = |i: usize| vocab.id(&words[i]).unwrap();
        assert_eq!(seq.ids, vec![BOS_ID, w(0), w(1), w(2), EOS_ID]);
        assert_eq!(seq.attention_mask, vec![1; 5]);
    }

    #[test]
    fn unknown_words() {
        let vocab = small_vocab();
        let word = WordTokenizer::new(vocab.clone());
        assert_eq!(tokenize("zebra", &word, 4).ids[1], UNK_ID);
        let hashed = HashedTokenizer::new(vocab).unwrap();
        let id = tokenize("zebra", &hashed, 4).ids[1] as usize;
        assert!((HASH_BAND_START..VOCAB_CAPACITY).contains(&id));
        assert_eq!(hashed.word_id("zebra"), hashed.word_id("zebra"));
        assert_eq!(hashed.word_id("Zebra"), hashed.word_id("zebra"));
    }

    #[test]
    fn punctuation_is_split() {
        assert_eq!(split_words("hi, you!  ok"), vec!["hi", ",", "you", "!", "ok"]);
        let vocab = small_vocab();
        assert_eq!(WordTokenizer::new(vocab.clone()).word_id("Hello"), vocab.id("hello").unwrap());
    }

    #[test]
    fn detokenize_cases() {
        let vocab = small_vocab();
        let h = vocab.id("hello").unwrap();
        let seq = TokenSequence { ids: vec![BOS_ID, h, EOS_ID], attention_mask: vec![1, 1, 1] };
        assert_eq!(detokenize(&seq, &vocab).unwrap(), "hello");
        let seq = TokenSequence { ids: vec![BOS_ID, EOS_ID], attention_mask: vec![1, 1] };
        assert_eq!(detokenize(&seq, &vocab).unwrap(), "");
        let seq = TokenSequence { ids: vec![BOS_ID, 70_000], attention_mask: vec![1, 1] };
        assert!(matches!(detokenize(&seq, &vocab), Err(Error::Vocab(_))));
    }

    #[test]
    fn json_debug_form() {
        let seq = tokenize("hello", &WordTokenizer::new(small_vocab()), 4);
        let json = serde_json::to_string(&seq).unwrap();
        assert_eq!(json, r#"{"ids":[1,4,2,0],"attention_mask":[1,1,1,0]}"#);
        assert_eq!(serde_json::from_str::<TokenSequence>(&json).unwrap(), seq);
    }

    proptest! {
        #[test]
        fn round_trip_on_vocab_sentences(idx in prop::collection::vec(0usize..40, 0..20)) {
            let words: Vec<String> = (0..40).map(|i| format!("tok{i}")).collect();
            let vocab = Vocabulary::from_tokens(&words).unwrap();
            let text = idx.iter().map(|&i| words[i].as_str()).collect::<Vec<_>>().join(" ");
            let seq = tokenize(&text, &WordTokenizer::new(vocab.clone()), 32);
            prop_assert_eq!(detokenize(&seq, &vocab).unwrap(), text);
        }

        #[test]
        fn sequences_are_well_formed(text in "\\PC{0,200}", max_length in 2usize..40) {
            let hashed = HashedTokenizer::new(small_vocab()).unwrap();
            let seq = tokenize(&text, &hashed, max_length);
            prop_assert_eq!(seq.len(), max_length);
            prop_assert_eq!(seq.ids[0], BOS_ID);
            let last = seq.last_real().unwrap();
            prop_assert_eq!(seq.ids[last], EOS_ID);
            prop_assert!(seq.ids.iter().all(|&id| (id as usize) < VOCAB_CAPACITY));
            for (i, (&id, &m)) in seq.ids.iter().zip(&seq.attention_mask).enumerate() {
                prop_assert_eq!(m == 0, i > last);
                if m == 0 { prop_assert_eq!(id, PAD_ID); }
            }
        }
    }
}
