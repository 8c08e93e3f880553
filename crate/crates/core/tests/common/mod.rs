//! Oracles shared by the integration tests.

#![allow(dead_code)]

/// Applies `Hh = Cc = HF = CF = empty`, `Hc = cH` and `Ch = hC` until no relation fits.
pub fn rewrite(word: &[char]) -> Vec<char> {
    let mut w = word.to_vec();
    loop {
        let mut changed = false;
        let mut i = 0;
        while i + 1 < w.len() {
            match (w[i], w[i + 1]) {
                ('H', 'h') | ('C', 'c') | ('H', 'F') | ('C', 'F') => {
                    w.drain(i..i + 2);
                    changed = true;
                    i = i.saturating_sub(1);
                }
                ('H', 'c') | ('C', 'h') => {
                    w.swap(i, i + 1);
                    changed = true;
                    i = i.saturating_sub(1);
                }
                _ => i += 1,
            }
        }
        if !changed {
            return w;
        }
    }
}

/// `(C, D)` of a normal form: burgers count +1 and orders -1 in `C`; an unmatched F leaves `D` alone.
pub fn counts(reduced: &[char]) -> (i64, i64) {
    reduced.iter().fold((0, 0), |(c, d), ch| match ch {
        'H' => (c + 1, d + 1),
        'C' => (c + 1, d - 1),
        'h' => (c - 1, d - 1),
        'c' => (c - 1, d + 1),
        _ => (c - 1, d),
    })
}

/// All words over `HChcF` of length `len`.
pub fn all_words(len: u32) -> impl Iterator<Item = Vec<char>> {
    const ALPHABET: [char; 5] = ['H', 'C', 'h', 'c', 'F'];
    (0..5usize.pow(len)).map(move |code| {
        let mut x = code;
        (0..len)
            .map(|_| {
                let ch = ALPHABET[x % 5];
                x /= 5;
                ch
            })
            .collect()
    })
}

/// Index `s` is covered iff some `i < s < j <= m` has `(u_i, v_i)` not dominating `(u_j, v_j)` while every
/// `k` strictly between dominates it.
pub fn covered_brute_force(u: &[f64], v: &[f64], m: usize) -> Vec<bool> {
    let mut free = vec![true; m + 1];
    for (s, slot) in free.iter_mut().enumerate().take(m).skip(1) {
        'search: for j in s + 1..=m {
            if (s..j).any(|k| u[k] < u[j] || v[k] < v[j]) {
                continue;
            }
            for i in (0..s).rev() {
                if u[i] < u[j] || v[i] < v[j] {
                    *slot = false;
                    break 'search;
                }
            }
        }
    }
    free
}

/// Backward running-infimum times of `a` on `0..=m`.
pub fn infimum_brute_force(a: &[f64], m: usize) -> Vec<bool> {
    (0..=m).map(|s| (s..=m).all(|k| a[s] <= a[k])).collect()
}
