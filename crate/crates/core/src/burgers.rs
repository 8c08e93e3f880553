//! Hamburger-cheeseburger words, their last-come-first-serve reduction and
//! the burger count / discrepancy walks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{map_trials, trial_rng};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    /// `H`
    Hamburger,
    /// `C`
    Cheeseburger,
    /// `h`
    HamburgerOrder,
    /// `c`
    CheeseburgerOrder,
    /// `F`
    Fresh,
}

impl Symbol {
    pub const ALL: [Symbol; 5] =
        [Symbol::Hamburger, Symbol::Cheeseburger, Symbol::HamburgerOrder, Symbol::CheeseburgerOrder, Symbol::Fresh];

    pub fn as_char(self) -> char {
        match self {
            Symbol::Hamburger => 'H',
            Symbol::Cheeseburger => 'C',
            Symbol::HamburgerOrder => 'h',
            Symbol::CheeseburgerOrder => 'c',
            Symbol::Fresh => 'F',
        }
    }

    pub fn from_char(c: char) -> Option<Symbol> {
        Some(match c {
            'H' => Symbol::Hamburger,
            'C' => Symbol::Cheeseburger,
            'h' => Symbol::HamburgerOrder,
            'c' => Symbol::CheeseburgerOrder,
            'F' => Symbol::Fresh,
            _ => return None,
        })
    }

    pub fn is_burger(self) -> bool {
        matches!(self, Symbol::Hamburger | Symbol::Cheeseburger)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurgerWord {
    pub symbols: Vec<Symbol>,
    pub p: f64,
}

impl BurgerWord {
    /// Parse a word such as `"H C c h"`; whitespace is ignored.
    pub fn parse(s: &str, p: f64) -> Result<Self> {
        let symbols = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| Symbol::from_char(c).ok_or_else(|| SimError::InvalidParameter(format!("unknown symbol {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { symbols, p })
    }

    pub fn to_string_compact(&self) -> String {
        self.symbols.iter().map(|s| s.as_char()).collect()
    }
}

/// The fresh-order fraction `p` corresponds to the FK cluster weight via `sqrt(q) = 2p / (1 - p)`.
pub fn fk_weight(p: f64) -> f64 {
    (2.0 * p / (1.0 - p)).powi(2)
}

/// I.i.d. word: H and C with probability 1/4 each, h and c with (1-p)/4 each, F with p/2.
pub fn generate_word(p: f64, n: usize, seed: u64) -> Result<BurgerWord> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SimError::InvalidParameter(format!("p = {p} outside [0, 1]")));
    }
    let mut rng = trial_rng(seed, 0);
    let symbols = (0..n).map(|_| draw_symbol(&mut rng, p)).collect();
    Ok(BurgerWord { symbols, p })
}

fn draw_symbol<R: Rng>(rng: &mut R, p: f64) -> Symbol {
    let u: f64 = rng.random();
    let order = (1.0 - p) / 4.0;
    if u < 0.25 {
        Symbol::Hamburger
    } else if u < 0.5 {
        Symbol::Cheeseburger
    } else if u < 0.5 + order {
        Symbol::HamburgerOrder
    } else if u < 0.5 + 2.0 * order {
        Symbol::CheeseburgerOrder
    } else {
        Symbol::Fresh
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurgerTrajectory {
    /// Burgers on the stack minus unfulfilled orders.
    pub c_path: Vec<i64>,
    /// Hamburger-type net count minus cheeseburger-type net count.
    pub d_path: Vec<i64>,
}

/// Reduced form of a word: unmatched orders (in order of arrival) followed by the burger stack.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReducedWord {
    pub orders: Vec<Symbol>,
    pub burgers: Vec<Symbol>,
}

/// Burger stack that finds the topmost burger of each type in O(1).
#[derive(Debug, Default, Clone)]
struct Stacks {
    /// positions (arrival index) of unconsumed hamburgers / cheeseburgers
    ham: Vec<usize>,
    cheese: Vec<usize>,
}

impl Stacks {
    fn push(&mut self, s: Symbol, pos: usize) {
        match s {
            Symbol::Hamburger => self.ham.push(pos),
            Symbol::Cheeseburger => self.cheese.push(pos),
            _ => unreachable!("only burgers are stacked"),
        }
    }

    /// Serve an order; returns the burger consumed, if any.
    fn serve(&mut self, order: Symbol) -> Option<Symbol> {
        match order {
            Symbol::HamburgerOrder => self.ham.pop().map(|_| Symbol::Hamburger),
            Symbol::CheeseburgerOrder => self.cheese.pop().map(|_| Symbol::Cheeseburger),
            Symbol::Fresh => match (self.ham.last(), self.cheese.last()) {
                (Some(h), Some(c)) if h > c => self.ham.pop().map(|_| Symbol::Hamburger),
                (_, Some(_)) => self.cheese.pop().map(|_| Symbol::Cheeseburger),
                (Some(_), None) => self.ham.pop().map(|_| Symbol::Hamburger),
                (None, None) => None,
            },
            _ => unreachable!("burgers are not orders"),
        }
    }

    fn into_sequence(self) -> Vec<Symbol> {
        let mut all: Vec<(usize, Symbol)> = self
            .ham
            .into_iter()
            .map(|p| (p, Symbol::Hamburger))
            .chain(self.cheese.into_iter().map(|p| (p, Symbol::Cheeseburger)))
            .collect();
        all.sort_unstable_by_key(|&(p, _)| p);
        all.into_iter().map(|(_, s)| s).collect()
    }
}

/// Increments (dC, dD) of one symbol given what it consumed.
fn increments(s: Symbol, consumed: Option<Symbol>) -> (i64, i64) {
    match s {
        Symbol::Hamburger => (1, 1),
        Symbol::Cheeseburger => (1, -1),
        Symbol::HamburgerOrder => (-1, -1),
        Symbol::CheeseburgerOrder => (-1, 1),
        Symbol::Fresh => match consumed {
            Some(Symbol::Hamburger) => (-1, -1),
            Some(Symbol::Cheeseburger) => (-1, 1),
            _ => (-1, 0),
        },
    }
}

/// Last-come-first-serve reduction producing the (C, D) walks.
///
/// An F arriving at an empty stack stays unfulfilled: it never consumes a later burger.
pub fn reduce_and_track(word: &BurgerWord) -> BurgerTrajectory {
    let n = word.symbols.len();
    let mut c_path = Vec::with_capacity(n + 1);
    let mut d_path = Vec::with_capacity(n + 1);
    let (mut c, mut d) = (0i64, 0i64);
    c_path.push(0);
    d_path.push(0);
    let mut stacks = Stacks::default();
    for (pos, &s) in word.symbols.iter().enumerate() {
        let consumed = if s.is_burger() {
            stacks.push(s, pos);
            None
        } else {
            stacks.serve(s)
        };
        let (dc, dd) = increments(s, consumed);
        c += dc;
        d += dd;
        c_path.push(c);
        d_path.push(d);
    }
    BurgerTrajectory { c_path, d_path }
}

/// Reduce a word with the stack machine.
pub fn reduce(symbols: &[Symbol]) -> ReducedWord {
    let mut stacks = Stacks::default();
    let mut orders = Vec::new();
    for (pos, &s) in symbols.iter().enumerate() {
        if s.is_burger() {
            stacks.push(s, pos);
        } else if stacks.serve(s).is_none() {
            orders.push(s);
        }
    }
    ReducedWord { orders, burgers: stacks.into_sequence() }
}

impl ReducedWord {
    /// Product in the word semigroup: reduce(a ++ b) == reduce(a).concat(reduce(b)).
    pub fn concat(&self, other: &ReducedWord) -> ReducedWord {
        let mut stacks = Stacks::default();
        for (pos, &s) in self.burgers.iter().enumerate() {
            stacks.push(s, pos);
        }
        let mut orders = self.orders.clone();
        for &o in &other.orders {
            if stacks.serve(o).is_none() {
                orders.push(o);
            }
        }
        let mut burgers = stacks.into_sequence();
        burgers.extend_from_slice(&other.burgers);
        ReducedWord { orders, burgers }
    }

    /// C and D of the reduced word, which equal the walk endpoints of the original.
    pub fn counts(&self) -> (i64, i64) {
        let c = self.burgers.len() as i64 - self.orders.len() as i64;
        let mut d = 0i64;
        for &s in self.burgers.iter().chain(&self.orders) {
            d += match s {
                Symbol::Hamburger | Symbol::CheeseburgerOrder => 1,
                Symbol::Cheeseburger | Symbol::HamburgerOrder => -1,
                Symbol::Fresh => 0,
            };
        }
        (c, d)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingEstimate {
    pub p: f64,
    pub n: usize,
    pub trials: usize,
    pub alpha_hat: f64,
    pub alpha_target: f64,
    /// Per-step variance of C (exactly 1 in law).
    pub var_ratio: f64,
    /// Correlation of the block increments of C and D.
    pub corr: f64,
    /// Var(D_n)/n from the first measured increment of each trial.
    pub d_variance_per_step: f64,
}

/// Consecutive length-`n` increments measured per trial after the burn-in.
pub const SCALING_BLOCKS: usize = 10;
/// Burn-in, in multiples of `n`, so that fresh orders in the measured window find burgers from
/// an effectively infinite past, as in the stationary bi-infinite word.
pub const BURN_IN_FACTOR: usize = 4;

/// Estimate the time-change ratio alpha = Var(D_n)/Var(C_n) together with Var(C_n)/n and corr(C_n, D_n).
///
/// Each trial reduces one word of length `(BURN_IN_FACTOR + SCALING_BLOCKS) n` and records
/// [`SCALING_BLOCKS`] consecutive increments of length `n` after the burn-in. Starting from an
/// empty stack biases Var(D_n) upward, since early fresh orders have nothing to eat.
pub fn scaling_estimates(p: f64, n: usize, trials: usize, seed: u64) -> Result<ScalingEstimate> {
    if n < 10_000 {
        return Err(SimError::InvalidParameter(format!("n = {n} < 10^4")));
    }
    if trials < 2 {
        return Err(SimError::SampleTooSmall(format!("{trials} trials")));
    }
    let burn = BURN_IN_FACTOR * n;
    let block = n;
    // per trial: block increments of (C, D) and D's first-increment variance
    type Trial = (Vec<(f64, f64)>, f64);
    let per_trial: Vec<Result<Trial>> = map_trials(trials, |t| {
        let word = generate_word(p, burn + SCALING_BLOCKS * n, crate::batch::child_seed(seed, t as u64))?;
        let traj = reduce_and_track(&word);
        let incs = (0..SCALING_BLOCKS)
            .map(|b| {
                let (i, j) = (burn + b * block, burn + (b + 1) * block);
                ((traj.c_path[j] - traj.c_path[i]) as f64, (traj.d_path[j] - traj.d_path[i]) as f64)
            })
            .collect();
        Ok((incs, traj.d_path[burn + n] as f64 - traj.d_path[burn] as f64))
    });
    let mut pairs = Vec::with_capacity(trials * SCALING_BLOCKS);
    let mut ends = Vec::with_capacity(trials);
    for r in per_trial {
        let (incs, end) = r?;
        pairs.extend(incs);
        ends.push(end);
    }
    let m = pairs.len() as f64;
    let (mc, md) = pairs.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c / m, b + d / m));
    let (mut vc, mut vd, mut cov) = (0.0, 0.0, 0.0);
    for (c, d) in &pairs {
        vc += (c - mc).powi(2);
        vd += (d - md).powi(2);
        cov += (c - mc) * (d - md);
    }
    let me = ends.iter().sum::<f64>() / ends.len() as f64;
    let ve = ends.iter().map(|e| (e - me).powi(2)).sum::<f64>() / (ends.len() - 1) as f64;
    Ok(ScalingEstimate {
        p,
        n,
        trials,
        alpha_hat: vd / vc,
        alpha_target: (1.0 - 2.0 * p).max(0.0),
        var_ratio: vc / (m - 1.0) / block as f64,
        corr: cov / (vc * vd).sqrt(),
        d_variance_per_step: ve / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(s: &str) -> BurgerWord {
        BurgerWord::parse(s, 0.0).unwrap()
    }

    #[test]
    fn perfect_match_empties_stack() {
        let w = word("H h");
        assert_eq!(reduce(&w.symbols), ReducedWord::default());
        assert_eq!(*reduce_and_track(&w).c_path.last().unwrap(), 0);
    }

    #[test]
    fn lcfs_order_matching() {
        let w = word("H C c h");
        assert_eq!(reduce(&w.symbols), ReducedWord::default());
        let t = reduce_and_track(&w);
        assert_eq!(t.c_path, vec![0, 1, 2, 1, 0]);
        assert_eq!(t.d_path, vec![0, 1, 0, 1, 0]);
    }

    #[test]
    fn fresh_takes_topmost_and_unmatched_fresh_waits_for_nothing() {
        let r = reduce(&word("H C F").symbols);
        assert_eq!(r.burgers, vec![Symbol::Hamburger]);
        let r = reduce(&word("F H").symbols);
        assert_eq!(r.orders, vec![Symbol::Fresh]);
        assert_eq!(r.burgers, vec![Symbol::Hamburger]);
    }

    #[test]
    fn p_zero_has_no_fresh_orders() {
        let w = generate_word(0.0, 100_000, 1).unwrap();
        assert!(!w.symbols.contains(&Symbol::Fresh));
    }

    #[test]
    fn half_fresh_is_q_four() {
        assert!((fk_weight(0.5) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn symbol_frequencies_within_multinomial_ci() {
        let p = 0.3;
        let n = 1_000_000;
        let w = generate_word(p, n, 42).unwrap();
        let probs = [0.25, 0.25, (1.0 - p) / 4.0, (1.0 - p) / 4.0, p / 2.0];
        for (s, q) in Symbol::ALL.iter().zip(probs) {
            let k = w.symbols.iter().filter(|x| *x == s).count() as f64;
            let sd = (n as f64 * q * (1.0 - q)).sqrt();
            assert!((k - n as f64 * q).abs() < 4.0 * sd, "{s:?}: {k}");
        }
    }

    #[test]
    fn reduced_counts_match_walk_endpoints() {
        let w = generate_word(0.4, 5000, 8).unwrap();
        let t = reduce_and_track(&w);
        assert_eq!(reduce(&w.symbols).counts(), (t.c_path[5000], t.d_path[5000]));
    }

    #[test]
    fn p_zero_alpha_is_one_in_expectation() {
        let e = scaling_estimates(0.0, 10_000, 400, 3).unwrap();
        assert!((e.alpha_hat - 1.0).abs() < 0.1, "{e:?}");
        assert!((e.var_ratio - 1.0).abs() < 0.1, "{e:?}");
    }
}
