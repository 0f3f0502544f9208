use std::hash::Hasher;

use fnv::FnvHasher;

/// Padding id; masked out of every pooled representation.
pub const PAD_ID: usize = 0;
/// Separator placed between the two texts of a sentence pair.
pub const SEP_ID: usize = 1;

const FIRST_WORD_ID: usize = 2;

/// Whitespace tokenization with lowercasing; every word is hashed (64-bit
/// FNV-1a) into `[2, vocab_size)`. Sentence pairs are joined with
/// [`SEP_ID`]. The id sequence is truncated to `max_len`, then padded with
/// [`PAD_ID`]; the mask is 1 exactly at real positions.
///
/// # Panics
///
/// If `vocab_size < 3` or `max_len == 0`.
pub fn tokenize(text: &str, text_pair: Option<&str>, vocab_size: usize, max_len: usize) -> (Vec<usize>, Vec<f64>) {
    assert!(vocab_size > FIRST_WORD_ID, "vocab_size must exceed {FIRST_WORD_ID}");
    assert!(max_len >= 1, "max_len must be positive");

    let mut ids: Vec<usize> = words(text, vocab_size).collect();
    if let Some(pair) = text_pair {
        ids.push(SEP_ID);
        ids.extend(words(pair, vocab_size));
    }
    ids.truncate(max_len);
    let mut mask = vec![1.0; ids.len()];
    ids.resize(max_len, PAD_ID);
    mask.resize(max_len, 0.0);
    (ids, mask)
}

fn words(text: &str, vocab_size: usize) -> impl Iterator<Item = usize> + '_ {
    text.split_whitespace().map(move |w| hash_word(&w.to_lowercase(), vocab_size))
}

fn hash_word(word: &str, vocab_size: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(word.as_bytes());
    FIRST_WORD_ID + (h.finish() % (vocab_size - FIRST_WORD_ID) as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_all_padding() {
        let (ids, mask) = tokenize("", None, 100, 8);
        assert_eq!(ids, vec![0; 8]);
        assert_eq!(mask, vec![0.0; 8]);
    }

    #[test]
    fn long_text_truncates_to_max_len() {
        let text = (0..100).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let (ids, mask) = tokenize(&text, None, 4096, 64);
        assert_eq!(ids.len(), 64);
        assert!(mask.iter().all(|&m| m == 1.0));
        assert!(ids.iter().all(|&id| (2..4096).contains(&id)));
    }

    #[test]
    fn hashing_is_stable_and_case_insensitive() {
        let (a, _) = tokenize("Hello world", None, 4096, 4);
        let (b, _) = tokenize("hello   WORLD", None, 4096, 4);
        assert_eq!(a, b);
        // FNV-1a is fixed by definition, so ids are stable across runs and builds.
        let mut h = FnvHasher::default();
        h.write(b"hello");
        assert_eq!(h.finish(), 0xa430d84680aabd0b);
        assert_eq!(a[0], 2 + (0xa430d84680aabd0b_u64 % 4094) as usize);
    }

    #[test]
    fn pairs_are_separated() {
        let (ids, mask) = tokenize("a b", Some("c"), 50, 6);
        assert_eq!(ids[2], SEP_ID);
        assert_eq!(mask, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(ids[4..], [PAD_ID, PAD_ID]);
    }
}
