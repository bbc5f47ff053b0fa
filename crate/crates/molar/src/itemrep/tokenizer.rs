//! Deterministic hashing tokenizer.
//!
//! Lowercases, splits on non-alphanumeric characters, serializes attributes
//! as `key value` pairs after the title, and hashes every token into
//! `[0, vocab_size)` with FNV-1a. No process-dependent state: the same text
//! maps to the same ids on every run and platform.

use crate::numcore::fnv1a;

pub fn tokenize(title: &str, attributes: &[(String, String)], vocab_size: usize) -> Vec<u32> {
    debug_assert!(vocab_size > 0);
    let mut tokens = Vec::new();
    let push_words = |text: &str, tokens: &mut Vec<u32>| {
        for word in text
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            tokens.push((fnv1a(word.as_bytes()) % vocab_size as u64) as u32);
        }
    };
    push_words(title, &mut tokens);
    for (key, value) in attributes {
        push_words(key, &mut tokens);
        push_words(value, &mut tokens);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn title_and_attributes_tokenize_stably() {
        let attrs = vec![("price".to_string(), "10".to_string())];
        let a = tokenize("Red Shirt", &attrs, 8192);
        let b = tokenize("Red Shirt", &attrs, 8192);
        assert_eq!(a.len(), 4); // red, shirt, price, 10
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| t < 8192));
    }

    #[test]
    fn identical_strings_give_identical_ids() {
        let a = tokenize("same same", &[], 100);
        assert_eq!(a[0], a[1]);
    }

    #[test]
    fn vocab_of_one_pigeonholes_everything() {
        let t = tokenize("many different words here", &[], 1);
        assert!(t.iter().all(|&id| id == 0));
    }

    #[test]
    fn empty_text_gives_empty_list() {
        assert!(tokenize("", &[], 100).is_empty());
        assert!(tokenize("!!! --- ???", &[], 100).is_empty());
    }

    #[test]
    fn case_and_punctuation_are_normalized() {
        assert_eq!(tokenize("Red-Shirt", &[], 512), tokenize("red shirt", &[], 512));
    }
}
