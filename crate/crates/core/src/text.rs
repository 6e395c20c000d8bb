//! Token-level F1 between a generated and a golden string.

use std::collections::HashMap;

/// Lowercased tokens. Whitespace splits words and surrounding punctuation is
/// stripped; runs of non-Latin letters (CJK and similar unsegmented scripts)
/// contribute one token per character.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let word = word.trim_matches(|c: char| !c.is_alphanumeric());
        if word.is_empty() {
            continue;
        }
        let lower = word.to_lowercase();
        if lower.chars().any(is_unsegmented) {
            let mut latin = String::new();
            for c in lower.chars() {
                if is_unsegmented(c) {
                    if !latin.is_empty() {
                        tokens.push(std::mem::take(&mut latin));
                    }
                    tokens.push(c.to_string());
                } else if c.is_alphanumeric() || !latin.is_empty() {
                    latin.push(c);
                }
            }
            let latin = latin.trim_end_matches(|c: char| !c.is_alphanumeric());
            if !latin.is_empty() {
                tokens.push(latin.to_string());
            }
        } else {
            tokens.push(lower);
        }
    }
    tokens
}

fn is_unsegmented(c: char) -> bool {
    c.is_alphabetic()
        && !c.is_ascii()
        && !matches!(c, '\u{00C0}'..='\u{024F}' | '\u{1E00}'..='\u{1EFF}')
        && !matches!(c, '\u{0370}'..='\u{03FF}' | '\u{0400}'..='\u{04FF}')
}

/// Multiset token F1: precision over generated tokens, recall over golden.
/// Two empty strings agree perfectly; one empty side scores 0.
pub fn text_f1(generated: &str, golden: &str) -> f64 {
    let gen = tokenize(generated);
    let gold = tokenize(golden);
    if gen.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if gen.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &gen {
        if let Some(n) = counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / gen.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_strings() {
        assert_eq!(text_f1("Night Mode", "Night Mode"), 1.0);
    }

    #[test]
    fn worked_examples() {
        // {gold, price} vs {today's, gold, price}: P = 1, R = 2/3
        assert!((text_f1("Gold Price", "Today's Gold Price") - 0.8).abs() < 1e-12);
        // {black, tea, latte} vs {latte}: P = 1/3, R = 1
        assert!((text_f1("Black tea Latte", "Latte") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tokenization_rules() {
        assert_eq!(tokenize("  Hello, World!  "), vec!["hello", "world"]);
        assert_eq!(tokenize("Today's"), vec!["today's"]);
        assert_eq!(tokenize("... --"), Vec::<String>::new());
        assert_eq!(tokenize("黑茶拿铁"), vec!["黑", "茶", "拿", "铁"]);
        assert_eq!(tokenize("iPhone手机"), vec!["iphone", "手", "机"]);
        assert_eq!(tokenize("Café"), vec!["café"]);
    }

    #[test]
    fn cjk_partial_overlap() {
        // {拿, 铁} vs {黑, 茶, 拿, 铁}: P = 1, R = 1/2
        assert!((text_f1("拿铁", "黑茶拿铁") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sides() {
        assert_eq!(text_f1("", ""), 1.0);
        assert_eq!(text_f1("a", ""), 0.0);
        assert_eq!(text_f1("", "a"), 0.0);
        assert_eq!(text_f1("a", "b"), 0.0);
    }

    fn multiset(s: &str) -> Vec<String> {
        let mut t = tokenize(s);
        t.sort();
        t
    }

    proptest! {
        #[test]
        fn bounded_and_one_iff_equal_multisets(a in "[a-c ]{0,10}", b in "[a-c ]{0,10}") {
            let f = text_f1(&a, &b);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert_eq!((f - 1.0).abs() < 1e-12, multiset(&a) == multiset(&b));
            prop_assert!((f - text_f1(&b, &a)).abs() < 1e-12);
        }
    }
}
