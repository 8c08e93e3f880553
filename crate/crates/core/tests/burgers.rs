//! Stack reduction against a rewriting reducer.
//!
//! The oracle applies the word relations directly until none fits:
//! `Hh = Cc = HF = CF = empty` and `Hc = cH`, `Ch = hC` (an order slides left past a burger it cannot eat).

use motsim::burgers::{generate_word, reduce, reduce_and_track, BurgerWord, Symbol};
use proptest::prelude::*;

mod common;
use common::{all_words, counts, rewrite};

fn check_word(chars: &[char]) {
    let s: String = chars.iter().collect();
    let word = BurgerWord::parse(&s, 0.0).unwrap();
    let tr = reduce_and_track(&word);
    for k in 0..=chars.len() {
        let (c, d) = counts(&rewrite(&chars[..k]));
        assert_eq!((tr.c_path[k], tr.d_path[k]), (c, d), "word {s} prefix {k}");
    }
    let normal = rewrite(chars);
    let r = reduce(&word.symbols);
    let ours: String = r.orders.iter().chain(&r.burgers).map(|s| s.as_char()).collect();
    assert_eq!(ours, normal.iter().collect::<String>(), "word {s}");
}

#[test]
fn all_words_up_to_length_six() {
    let mut total = 0;
    for len in 0..=6 {
        for chars in all_words(len) {
            check_word(&chars);
            total += 1;
        }
    }
    assert_eq!(total, (5usize.pow(7) - 1) / 4);
}

#[test]
fn symbol_frequencies_match_probabilities() {
    let (p, n) = (0.3, 1_000_000);
    let w = generate_word(p, n, 17).unwrap();
    let probs = [0.25, 0.25, (1.0 - p) / 4.0, (1.0 - p) / 4.0, p / 2.0];
    for (sym, q) in Symbol::ALL.iter().zip(probs) {
        let k = w.symbols.iter().filter(|s| *s == sym).count() as f64;
        let se = (n as f64 * q * (1.0 - q)).sqrt();
        assert!((k - n as f64 * q).abs() < 5.0 * se, "{sym:?}: {k} vs {}", n as f64 * q);
    }
    assert!(!generate_word(0.0, 10_000, 3).unwrap().symbols.contains(&Symbol::Fresh));
}

proptest! {
    #[test]
    fn long_words_agree_with_rewriting(p in 0.0f64..=1.0, seed in any::<u64>(), n in 0usize..60) {
        let w = generate_word(p, n, seed).unwrap();
        let chars: Vec<char> = w.symbols.iter().map(|s| s.as_char()).collect();
        check_word(&chars);
    }

    #[test]
    fn reduction_is_a_semigroup_homomorphism(p in 0.0f64..=1.0, seed in any::<u64>(), n in 0usize..200, cut in 0usize..200) {
        let w = generate_word(p, n, seed).unwrap();
        let cut = cut.min(n);
        let (a, b) = w.symbols.split_at(cut);
        prop_assert_eq!(reduce(&w.symbols), reduce(a).concat(&reduce(b)));
    }

    #[test]
    fn walk_increments_are_unit(p in 0.0f64..=1.0, seed in any::<u64>(), n in 1usize..2000) {
        let tr = reduce_and_track(&generate_word(p, n, seed).unwrap());
        prop_assert_eq!(tr.c_path[0], 0);
        prop_assert_eq!(tr.d_path[0], 0);
        for k in 0..n {
            prop_assert_eq!((tr.c_path[k + 1] - tr.c_path[k]).abs(), 1);
            prop_assert!((tr.d_path[k + 1] - tr.d_path[k]).abs() <= 1);
        }
    }
}
