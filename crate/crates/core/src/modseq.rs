//! Sequential `n mod m`: long division, the divisibility automaton and
//! precomputed sum/product tables.
//!
//! The automaton reads `n` most significant digit first and its state after
//! a prefix is that prefix's value mod `m`, so `δ(i, b) = (2i + b) mod m`.
//! States are identified with residues.

use std::fmt::Write as _;

use thiserror::Error;

use crate::bitnum::{Bitstring, OpCounter};

/// Largest modulus for which [`ModTables::build`] materialises both tables.
pub const TABLE_LIMIT: u64 = 4096;

/// Largest modulus for which an automaton keeps an explicit transition table.
pub const DFA_DENSE_LIMIT: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModError {
    #[error("modulus must be at least 1")]
    ModulusZero,
    #[error("modulus {m} exceeds the limit {limit} for {what}")]
    SizeLimit { m: String, limit: u64, what: &'static str },
    #[error("residue {value} is not below the modulus {m}")]
    Range { value: u64, m: u64 },
}

/// `n mod m` by the digit scan: append the next digit of `n`, subtract `m`
/// once if the running remainder reached it. The result has `|m|` digits.
pub fn division_modulo(n: &Bitstring, m: &Bitstring) -> Result<Bitstring, ModError> {
    division_modulo_with(n, m, None)
}

/// [`division_modulo`] charging comparisons and subtractions to `ops`.
pub fn division_modulo_with(
    n: &Bitstring,
    m: &Bitstring,
    ops: Option<&OpCounter>,
) -> Result<Bitstring, ModError> {
    if m.is_zero() {
        return Err(ModError::ModulusZero);
    }
    let width = m.len();
    let modulus = m.trimmed();
    let k = modulus.len();
    if n.len() < k {
        return Ok(n.pad_left(width));
    }
    // ans < m holds after every iteration, so ans·2 + 1 < 2m fits in k+1 digits
    let mut ans = if k > 1 {
        n.slice(1, k - 1).expect("prefix shorter than n").pad_left(k + 1)
    } else {
        Bitstring::zero(k + 1)
    };
    for i in k..=n.len() {
        let bit = n.bit(i).expect("index within n");
        ans = ans.append_bit(bit).low_bits(k + 1);
        if ans.cmp_with(&modulus, ops) != std::cmp::Ordering::Less {
            ans = ans.sub_with(&modulus, ops).expect("ans >= m");
        }
    }
    Ok(ans.low_bits(width))
}

/// Divisibility automaton for a fixed modulus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dfa {
    modulus: u64,
    /// `delta[i][b]`; absent above [`DFA_DENSE_LIMIT`], where transitions are
    /// evaluated in closed form.
    delta: Option<Vec<[u64; 2]>>,
}

impl Dfa {
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn start(&self) -> u64 {
        0
    }

    pub fn is_dense(&self) -> bool {
        self.delta.is_some()
    }

    pub fn delta(&self, state: u64, bit: u8) -> u64 {
        match &self.delta {
            Some(table) => table[state as usize][bit as usize],
            None => ((2 * state as u128 + bit as u128) % self.modulus as u128) as u64,
        }
    }

    /// `m=<value>` followed by `<i> <δ(i,0)> <δ(i,1)>` per state.
    pub fn dump(&self) -> String {
        let mut out = format!("m={}\n", self.modulus);
        for i in 0..self.modulus {
            writeln!(out, "{i} {} {}", self.delta(i, 0), self.delta(i, 1)).unwrap();
        }
        out
    }
}

fn check_modulus(m: u64, limit: u64, what: &'static str) -> Result<(), ModError> {
    if m == 0 {
        return Err(ModError::ModulusZero);
    }
    if m > limit {
        return Err(ModError::SizeLimit { m: m.to_string(), limit, what });
    }
    Ok(())
}

/// Fills the table in state order with a running target `v`. The first
/// `⌊m/2⌋` states take targets `0, 1, …, m − 1` (or `m − 2` for odd `m`);
/// for odd `m` the middle state's 1-transition wraps `v` to 0 and the
/// remaining states start over from `v`.
pub fn build_dfa_loop(m: u64) -> Result<Dfa, ModError> {
    check_modulus(m, DFA_DENSE_LIMIT, "an explicit transition table")?;
    let size = m as usize;
    let half = size >> 1;
    let odd = m & 1 == 1;
    let mut delta = vec![[0u64; 2]; size];
    let mut v = 0u64;
    let mut i = 0usize;
    while i < half {
        delta[i][0] = v;
        v += 1;
        delta[i][1] = v;
        v += 1;
        i += 1;
    }
    if odd {
        delta[i][0] = v;
        v = 0;
        delta[i][1] = v;
        v += 1;
        i += 1;
    } else {
        v = 0;
    }
    while i < size {
        delta[i][0] = v;
        v += 1;
        delta[i][1] = v;
        v += 1;
        i += 1;
    }
    Ok(Dfa { modulus: m, delta: Some(delta) })
}

/// `δ(i, b) = (2i + b) mod m`, tabulated up to [`DFA_DENSE_LIMIT`].
pub fn build_dfa_closed(m: u64) -> Result<Dfa, ModError> {
    if m == 0 {
        return Err(ModError::ModulusZero);
    }
    let mut dfa = Dfa { modulus: m, delta: None };
    if m <= DFA_DENSE_LIMIT {
        dfa.delta = Some((0..m).map(|i| [dfa.delta(i, 0), dfa.delta(i, 1)]).collect());
    }
    Ok(dfa)
}

/// Final state after reading `n` from the start state.
pub fn dfa_run(d: &Dfa, n: &Bitstring) -> u64 {
    dfa_run_with(d, n, None)
}

/// [`dfa_run`] charging one bit operation per transition.
pub fn dfa_run_with(d: &Dfa, n: &Bitstring, ops: Option<&OpCounter>) -> u64 {
    let state = n.digits().iter().fold(d.start(), |q, &b| d.delta(q, b));
    if let Some(ops) = ops {
        ops.add_bit_ops(n.len() as u64);
    }
    state
}

/// Modular sum and product lookup tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModTables {
    modulus: u64,
    /// Row-major `m × m` tables; absent for on-demand tables.
    dense: Option<(Vec<u16>, Vec<u16>)>,
}

impl ModTables {
    /// Builds `δ_sum` by counting around the residues and `δ_mul` row by row
    /// from it: `δ_mul[i][j] = δ_sum[δ_mul[i][j − 1]][i]`.
    pub fn build(m: u64) -> Result<Self, ModError> {
        check_modulus(m, TABLE_LIMIT, "transition tables")?;
        let size = m as usize;
        let mut sum = vec![0u16; size * size];
        for i in 0..size {
            let mut v = i;
            for j in 0..size {
                sum[i * size + j] = v as u16;
                v += 1;
                if v == size {
                    v = 0;
                }
            }
        }
        let mut mul = vec![0u16; size * size];
        for i in 0..size {
            for j in 1..size {
                let prev = mul[i * size + j - 1] as usize;
                mul[i * size + j] = sum[prev * size + i];
            }
        }
        Ok(ModTables { modulus: m, dense: Some((sum, mul)) })
    }

    /// Same lookups for a modulus too large to tabulate; each entry is
    /// computed when asked for. Stands in for a table that cannot be stored.
    pub fn on_demand(m: u64) -> Result<Self, ModError> {
        if m == 0 {
            return Err(ModError::ModulusZero);
        }
        Ok(ModTables { modulus: m, dense: None })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    pub fn delta_sum(&self, x: u64, y: u64) -> u64 {
        match &self.dense {
            Some((sum, _)) => sum[(x * self.modulus + y) as usize] as u64,
            None => ((x as u128 + y as u128) % self.modulus as u128) as u64,
        }
    }

    pub fn delta_mul(&self, x: u64, y: u64) -> u64 {
        match &self.dense {
            Some((_, mul)) => mul[(x * self.modulus + y) as usize] as u64,
            None => ((x as u128 * y as u128) % self.modulus as u128) as u64,
        }
    }

    fn check(&self, x: u64, y: u64) -> Result<(), ModError> {
        for value in [x, y] {
            if value >= self.modulus {
                return Err(ModError::Range { value, m: self.modulus });
            }
        }
        Ok(())
    }
}

/// `(x·y) mod m` by one lookup.
pub fn table_mod_mul(t: &ModTables, x: u64, y: u64, ops: Option<&OpCounter>) -> Result<u64, ModError> {
    t.check(x, y)?;
    if let Some(ops) = ops {
        ops.add_bit_ops(1);
    }
    Ok(t.delta_mul(x, y))
}

/// `(x + y) mod m` by one lookup.
pub fn table_mod_sum(t: &ModTables, x: u64, y: u64, ops: Option<&OpCounter>) -> Result<u64, ModError> {
    t.check(x, y)?;
    if let Some(ops) = ops {
        ops.add_bit_ops(1);
    }
    Ok(t.delta_sum(x, y))
}
