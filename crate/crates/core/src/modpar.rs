//! `n mod m` on a binary node tree.
//!
//! `n` is cut into chunks of `w = |m|/2` digits, one per leaf; a chunk is
//! already a residue. Node `i` has children `2i` and `2i + 1`, and with
//! `shift.i` the number of digits covered by its right child,
//!
//! ```text
//! ans.i = (ans.(2i) · 2^shift.i + ans.(2i+1)) mod m
//! ```
//!
//! The powers `pow.i = 2^shift.i mod m` are built by squaring up the tree.
//! Ids: `1..2k` for `k` leaves, leaves are `k..2k`.

use std::sync::OnceLock;

use rand::{Rng, RngCore};

use crate::bitnum::{Bitstring, OpCounter, OpCounts};
use crate::engine::{EngineError, GlobalState, NodeId, NodeProgram, ReadView};
use crate::karatsuba::seq_karatsuba;
use crate::modseq::{
    build_dfa_closed, build_dfa_loop, dfa_run_with, division_modulo, division_modulo_with,
    table_mod_mul, table_mod_sum, Dfa, ModError, ModTables, DFA_DENSE_LIMIT, TABLE_LIMIT,
};

/// How products and sums of residues are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModBackendKind {
    LongDivision,
    Dfa,
    Tables,
}

impl ModBackendKind {
    pub const ALL: [ModBackendKind; 3] =
        [ModBackendKind::LongDivision, ModBackendKind::Dfa, ModBackendKind::Tables];

    pub fn name(self) -> &'static str {
        match self {
            ModBackendKind::LongDivision => "div",
            ModBackendKind::Dfa => "dfa",
            ModBackendKind::Tables => "tables",
        }
    }
}

impl std::str::FromStr for ModBackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown backend {s:?} (expected div, dfa or tables)"))
    }
}

/// Residue arithmetic for a fixed modulus, with an operation counter.
///
/// Residues are `|m|`-digit bitstrings. Multiplication goes through the
/// sequential Karatsuba routine and only the reduction is charged to the
/// counter; the tables backend replaces multiply-and-reduce by one lookup.
pub struct ModBackend {
    kind: ModBackendKind,
    modulus: Bitstring,
    width: usize,
    dfa: Option<Dfa>,
    tables: Option<ModTables>,
    ops: OpCounter,
}

impl ModBackend {
    /// `m` may carry leading zeros; they set the residue width.
    pub fn new(kind: ModBackendKind, m: &Bitstring) -> Result<Self, ModError> {
        if m.is_zero() {
            return Err(ModError::ModulusZero);
        }
        let value = || {
            m.to_u64().ok_or(ModError::SizeLimit {
                m: m.trimmed().to_string(),
                limit: u64::MAX,
                what: "automaton and table backends",
            })
        };
        let (dfa, tables) = match kind {
            ModBackendKind::LongDivision => (None, None),
            ModBackendKind::Dfa => {
                let v = value()?;
                let dfa = if v <= DFA_DENSE_LIMIT {
                    build_dfa_loop(v)?
                } else {
                    build_dfa_closed(v)?
                };
                (Some(dfa), None)
            }
            ModBackendKind::Tables => {
                let v = value()?;
                let t = if v <= TABLE_LIMIT {
                    ModTables::build(v)?
                } else {
                    ModTables::on_demand(v)?
                };
                (None, Some(t))
            }
        };
        Ok(ModBackend {
            kind,
            modulus: m.trimmed(),
            width: m.len(),
            dfa,
            tables,
            ops: OpCounter::new(),
        })
    }

    pub fn kind(&self) -> ModBackendKind {
        self.kind
    }

    pub fn modulus(&self) -> &Bitstring {
        &self.modulus
    }

    /// Digits per residue.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn counter(&self) -> &OpCounter {
        &self.ops
    }

    pub fn counts(&self) -> OpCounts {
        self.ops.snapshot()
    }

    fn as_u64(x: &Bitstring) -> u64 {
        x.to_u64().expect("residue of a u64 modulus fits in u64")
    }

    fn residue(&self, v: u64) -> Bitstring {
        Bitstring::from_u64(v, self.width)
    }

    /// Reduces an arbitrary value to a `width`-digit residue.
    fn reduce(&self, x: &Bitstring) -> Bitstring {
        match &self.dfa {
            Some(dfa) => self.residue(dfa_run_with(dfa, x, Some(&self.ops))),
            None => division_modulo_with(x, &self.modulus.pad_left(self.width), Some(&self.ops))
                .expect("modulus is non-zero"),
        }
    }

    /// `(x·y) mod m` for residues `x, y < m`.
    pub fn mul_mod(&self, x: &Bitstring, y: &Bitstring) -> Bitstring {
        if let Some(t) = &self.tables {
            let v = table_mod_mul(t, Self::as_u64(x), Self::as_u64(y), Some(&self.ops))
                .expect("operands are residues");
            return self.residue(v);
        }
        let product = seq_karatsuba(x, y)
            .fit_to(2 * self.width)
            .expect("product of residues fits in 2|m| digits");
        self.reduce(&product)
    }

    /// `(x + y) mod m` for residues `x, y < m`.
    pub fn add_mod(&self, x: &Bitstring, y: &Bitstring) -> Bitstring {
        if let Some(t) = &self.tables {
            let v = table_mod_sum(t, Self::as_u64(x), Self::as_u64(y), Some(&self.ops))
                .expect("operands are residues");
            return self.residue(v);
        }
        let sum = x.add(y).fit_to(self.width + 1).expect("sum of residues fits in |m|+1 digits");
        self.reduce(&sum)
    }

    /// `(left·pow + right) mod m`, the internal-node combine.
    pub fn combine(&self, left: &Bitstring, pow: &Bitstring, right: &Bitstring) -> Bitstring {
        self.add_mod(&self.mul_mod(left, pow), right)
    }
}

/// Local variables of one tree node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuloNodeState {
    /// Digits of `n` covered by the right child.
    pub shift: u64,
    pub pow: Bitstring,
    pub ans: Bitstring,
}

pub const RULE_SHIFT: usize = 0;
pub const RULE_POW: usize = 1;
pub const RULE_ANS: usize = 2;

const RULE_NAMES: &[&str] = &["shift", "pow", "ans"];

/// The modulo tree for fixed `n`, `m` and residue backend.
pub struct ModuloProgram {
    n: Bitstring,
    backend: ModBackend,
    chunk: usize,
    leaves: usize,
    /// `2^w mod m`.
    base_pow: Bitstring,
    one: Bitstring,
    intended: OnceLock<Vec<ModuloNodeState>>,
}

impl ModuloProgram {
    /// Left-pads `m` to even length and `n` to a power-of-two number of
    /// `|m|/2`-digit chunks, at least two.
    pub fn new(n: &Bitstring, m: &Bitstring, kind: ModBackendKind) -> Result<Self, ModError> {
        if m.is_zero() {
            return Err(ModError::ModulusZero);
        }
        let trimmed = m.trimmed();
        let width = trimmed.len() + trimmed.len() % 2;
        let chunk = width / 2;
        let leaves = n.len().div_ceil(chunk).max(2).next_power_of_two();
        let backend = ModBackend::new(kind, &trimmed.pad_left(width))?;
        let modulus = trimmed.pad_left(width);
        let reduce = |x: &Bitstring| division_modulo(x, &modulus).expect("modulus is non-zero");
        Ok(ModuloProgram {
            n: n.pad_left(leaves * chunk),
            base_pow: reduce(&Bitstring::one().shl(chunk)),
            one: reduce(&Bitstring::one()),
            backend,
            chunk,
            leaves,
            intended: OnceLock::new(),
        })
    }

    pub fn backend(&self) -> &ModBackend {
        &self.backend
    }

    /// `n` as padded.
    pub fn padded_n(&self) -> &Bitstring {
        &self.n
    }

    /// Chunk width `|m|/2`.
    pub fn chunk(&self) -> usize {
        self.chunk
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        node >= self.leaves
    }

    /// 1 at the leaves, growing towards the root.
    pub fn level(&self, node: NodeId) -> u32 {
        self.leaves.trailing_zeros() - node.ilog2() + 1
    }

    /// Residue in `ans.1`.
    pub fn result(&self, state: &GlobalState<ModuloNodeState>) -> Bitstring {
        state.get(1).ans.clone()
    }

    /// 1-based inclusive digit range of the padded `n` below `node`.
    pub fn covered(&self, node: NodeId) -> (usize, usize) {
        let span = 1usize << (self.level(node) - 1);
        let first = node * span - self.leaves;
        (first * self.chunk + 1, (first + span) * self.chunk)
    }

    fn leaf_residue(&self, node: NodeId) -> Bitstring {
        let (i, j) = self.covered(node);
        let chunk = self.n.slice(i, j).expect("leaf range inside padded n");
        let chunk = chunk.pad_left(self.backend.width());
        if chunk.cmp_value(self.backend.modulus()).is_lt() {
            chunk
        } else {
            // only m = 1 has chunks that are not already residues
            division_modulo(&chunk, &self.backend.modulus().pad_left(self.backend.width()))
                .expect("modulus is non-zero")
        }
    }

    /// Shift, power and answer of every node, derived from the tree position
    /// and the reference long division.
    pub fn intended_state(&self) -> &[ModuloNodeState] {
        self.intended.get_or_init(|| {
            let modulus = self.backend.modulus().pad_left(self.backend.width());
            let reduce = |x: &Bitstring| division_modulo(x, &modulus).expect("modulus is non-zero");
            (1..2 * self.leaves)
                .map(|i| {
                    let level = self.level(i);
                    let shift = if level == 1 { 0 } else { (self.chunk as u64) << (level - 2) };
                    let (a, b) = self.covered(i);
                    ModuloNodeState {
                        shift,
                        pow: reduce(&Bitstring::one().shl(shift as usize)),
                        ans: reduce(&self.n.slice(a, b).unwrap()),
                    }
                })
                .collect()
        })
    }

    fn target_shift(&self, node: NodeId, view: &ReadView<'_, ModuloNodeState>) -> Option<u64> {
        if self.is_leaf(node) {
            return Some(0);
        }
        let (l, r) = (view.peer(2 * node).shift, view.peer(2 * node + 1).shift);
        match (l, r) {
            (0, 0) => Some(self.chunk as u64),
            (l, r) if l == r => Some(l.saturating_mul(2)),
            _ => None,
        }
    }

    fn target_pow(&self, node: NodeId, view: &ReadView<'_, ModuloNodeState>) -> Option<Bitstring> {
        let own = view.own();
        if own.shift == 0 {
            Some(self.one.clone())
        } else if own.shift == self.chunk as u64 {
            Some(self.base_pow.clone())
        } else if self.is_leaf(node) {
            None
        } else {
            let child = &view.peer(2 * node).pow;
            Some(self.backend.mul_mod(child, child))
        }
    }

    fn target_ans(&self, node: NodeId, view: &ReadView<'_, ModuloNodeState>) -> Bitstring {
        if self.is_leaf(node) {
            return self.leaf_residue(node);
        }
        let (l, r) = (view.peer(2 * node), view.peer(2 * node + 1));
        self.backend.combine(&l.ans, &view.own().pow, &r.ans)
    }
}

impl NodeProgram for ModuloProgram {
    type State = ModuloNodeState;

    fn node_count(&self) -> usize {
        2 * self.leaves - 1
    }

    fn neighbors(&self, node: NodeId) -> Vec<NodeId> {
        if self.is_leaf(node) {
            Vec::new()
        } else {
            vec![2 * node, 2 * node + 1]
        }
    }

    fn rule_names(&self) -> &'static [&'static str] {
        RULE_NAMES
    }

    fn guard(&self, rule: usize, node: NodeId, view: &ReadView<'_, ModuloNodeState>) -> bool {
        let own = view.own();
        match rule {
            RULE_SHIFT => self.target_shift(node, view).is_some_and(|t| t != own.shift),
            RULE_POW => self
                .target_pow(node, view)
                .is_some_and(|p| !p.value_eq(&own.pow)),
            RULE_ANS => !self.target_ans(node, view).value_eq(&own.ans),
            _ => unreachable!("unknown rule {rule}"),
        }
    }

    fn action(&self, rule: usize, node: NodeId, view: &ReadView<'_, ModuloNodeState>) -> ModuloNodeState {
        let mut next = view.own().clone();
        match rule {
            RULE_SHIFT => next.shift = self.target_shift(node, view).expect("shift rule fired"),
            RULE_POW => next.pow = self.target_pow(node, view).expect("pow rule fired"),
            RULE_ANS => next.ans = self.target_ans(node, view),
            _ => unreachable!("unknown rule {rule}"),
        }
        next
    }

    fn zero_state(&self, _node: NodeId) -> ModuloNodeState {
        let width = self.backend.width();
        ModuloNodeState {
            shift: 0,
            pow: Bitstring::zero(width),
            ans: Bitstring::zero(width),
        }
    }

    fn arbitrary_state(&self, _node: NodeId, rng: &mut dyn RngCore) -> ModuloNodeState {
        let width = self.backend.width();
        let modulus = self.backend.modulus();
        ModuloNodeState {
            shift: rng.random_range(0..=self.n.len() as u64),
            pow: Bitstring::random_below(modulus, width, rng),
            ans: Bitstring::random_below(modulus, width, rng),
        }
    }

    fn target(&self, state: &GlobalState<ModuloNodeState>) -> bool {
        let want = self.intended_state();
        state.iter().all(|(i, s)| {
            let w = &want[i - 1];
            s.shift == w.shift && s.pow.value_eq(&w.pow) && s.ans.value_eq(&w.ans)
        })
    }

    fn render_state(&self, s: &ModuloNodeState) -> String {
        format!("shift={},pow={},ans={}", s.shift, s.pow, s.ans)
    }

    fn parse_state(&self, text: &str) -> Result<ModuloNodeState, EngineError> {
        let bad = |reason: &str| EngineError::StateParse {
            input: text.to_string(),
            reason: reason.to_string(),
        };
        let mut fields = [None; 3];
        for part in text.split(',') {
            let (key, value) = part.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let slot = ["shift", "pow", "ans"]
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| bad("unknown field"))?;
            fields[slot] = Some(value);
        }
        let get = |k: usize| fields[k].ok_or_else(|| bad("missing field"));
        let bits = |k: usize| -> Result<Bitstring, EngineError> {
            get(k)?.parse().map_err(|_| bad("bad bitstring"))
        };
        Ok(ModuloNodeState {
            shift: get(0)?.parse().map_err(|_| bad("bad shift"))?,
            pow: bits(1)?,
            ans: bits(2)?,
        })
    }
}
