//! Karatsuba multiplication, sequential and as a ternary node tree.
//!
//! With `x = a·z + b`, `y = c·z + d` and `z = 2^h`:
//!
//! ```text
//! x·y = ac·z² + ((a+b)(c+d) − ac − bd)·z + bd
//! ```
//!
//! The half-sums `a+b` and `c+d` have `h + 1` digits. Only their low `h`
//! digits go to the third sub-multiplication; the two carry digits are kept
//! by the node and folded back in when combining:
//!
//! ```text
//! (a+b)(c+d) = s·t + carry_m·t·z + carry_n·s·z + carry_m·carry_n·z²
//! ```
//!
//! where `s`, `t` are the low halves. This keeps every operand length a power
//! of two, so a tree over operands of `L` digits has `(3^(lg L + 1) − 1)/2`
//! nodes.
//!
//! In the tree, node `i` has children `3i − 1` (left: `a`, `c`), `3i`
//! (middle: `b`, `d`) and `3i + 1` (right: low halves of the sums). Every
//! node only ever writes its own variables; a child pulls its operands from
//! its parent.

use std::sync::OnceLock;

use rand::{Rng, RngCore};

use crate::bitnum::{school_mul, Bitstring};
use crate::engine::{EngineError, GlobalState, NodeId, NodeProgram, ReadView};

/// `x · y` by Karatsuba recursion down to single digits.
///
/// Operands are zero-padded to a common power-of-two length `L`; the
/// product has `2L` digits.
pub fn seq_karatsuba(x: &Bitstring, y: &Bitstring) -> Bitstring {
    let len = x.len().max(y.len()).next_power_of_two();
    karatsuba_rec(&x.pad_left(len), &y.pad_left(len))
}

fn karatsuba_rec(x: &Bitstring, y: &Bitstring) -> Bitstring {
    let len = x.len();
    if len == 1 {
        let bit = x.digits()[0] & y.digits()[0];
        return Bitstring::from_u64(bit as u64, 2);
    }
    let h = len / 2;
    let (a, b) = halves(x);
    let (c, d) = halves(y);
    let ac = karatsuba_rec(&a, &c);
    let bd = karatsuba_rec(&b, &d);
    let (s, carry_m) = split_sum(&a, &b);
    let (t, carry_n) = split_sum(&c, &d);
    let st = karatsuba_rec(&s, &t);
    let (product, clamped) = combine(&ac, &bd, &st, &s, &t, carry_m, carry_n, h);
    debug_assert!(!clamped);
    product.fit_to(2 * len).expect("product of two L-digit numbers fits in 2L digits")
}

/// First and second half of an even-length string.
fn halves(x: &Bitstring) -> (Bitstring, Bitstring) {
    let h = x.len() / 2;
    (
        x.slice(1, h).expect("half slice"),
        x.slice(h + 1, x.len()).expect("half slice"),
    )
}

/// `a + b` split into its low `|a|` digits and the carry digit.
fn split_sum(a: &Bitstring, b: &Bitstring) -> (Bitstring, bool) {
    let sum = a.add(b);
    let carry = sum.digits()[0] == 1;
    (sum.low_bits(a.len()), carry)
}

/// `ac·2^(2h) + mid·2^h + bd` with `mid = S − ac − bd` and
/// `S = st + carry_m·t·2^h + carry_n·s·2^h + carry_m·carry_n·2^(2h)`.
///
/// A negative `mid` (possible while children are still settling) is clamped
/// to zero; the second return value reports whether that happened.
#[allow(clippy::too_many_arguments)]
pub fn combine(
    ac: &Bitstring,
    bd: &Bitstring,
    st: &Bitstring,
    s: &Bitstring,
    t: &Bitstring,
    carry_m: bool,
    carry_n: bool,
    h: usize,
) -> (Bitstring, bool) {
    let mut cross = st.clone();
    if carry_m {
        cross = cross.add(&t.shl(h));
    }
    if carry_n {
        cross = cross.add(&s.shl(h));
    }
    if carry_m && carry_n {
        cross = cross.add(&Bitstring::one().shl(2 * h));
    }
    let outer = ac.add(bd);
    let (mid, clamped) = match cross.checked_sub(&outer) {
        Ok(mid) => (mid, false),
        Err(_) => (Bitstring::zero(1), true),
    };
    let product = ac.shl(2 * h).add(&mid.shl(h)).add(bd);
    (product, clamped)
}

/// Local variables of one tree node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KaratsubaNodeState {
    pub m: Bitstring,
    pub n: Bitstring,
    /// Digit count `h` with `z = 2^h`.
    pub shift: u64,
    pub ans: Bitstring,
    /// Carry digit of the half-sum of `m` handed to the right child.
    pub carry_m: bool,
    /// Carry digit of the half-sum of `n` handed to the right child.
    pub carry_n: bool,
}

pub const RULE_SHIFT: usize = 0;
pub const RULE_TOPDOWN: usize = 1;
pub const RULE_BOTTOMUP: usize = 2;

const RULE_NAMES: &[&str] = &["shift", "topdown", "bottomup"];

/// The ternary Karatsuba tree for fixed inputs.
pub struct KaratsubaProgram {
    n: Bitstring,
    m: Bitstring,
    operand_len: usize,
    depth: Vec<u8>,
    intended: OnceLock<Vec<KaratsubaNodeState>>,
}

impl KaratsubaProgram {
    /// Pads both operands on the left to the smallest common power-of-two
    /// length and lays out the tree.
    pub fn new(n: &Bitstring, m: &Bitstring) -> Self {
        let operand_len = n.len().max(m.len()).next_power_of_two();
        let levels = operand_len.trailing_zeros() as usize;
        let mut depth = Vec::new();
        let mut width = 1usize;
        for d in 0..=levels {
            depth.extend(std::iter::repeat_n(d as u8, width));
            width *= 3;
        }
        KaratsubaProgram {
            n: n.pad_left(operand_len),
            m: m.pad_left(operand_len),
            operand_len,
            depth,
            intended: OnceLock::new(),
        }
    }

    /// `(3^(lg L + 1) − 1) / 2` for padded operand length `L`.
    pub fn node_count_for(operand_len: usize) -> usize {
        let levels = operand_len.next_power_of_two().trailing_zeros();
        (3usize.pow(levels + 1) - 1) / 2
    }

    pub fn operand_len(&self) -> usize {
        self.operand_len
    }

    pub fn levels(&self) -> u32 {
        self.operand_len.trailing_zeros()
    }

    pub fn inputs(&self) -> (&Bitstring, &Bitstring) {
        (&self.n, &self.m)
    }

    /// Distance from the root.
    pub fn depth(&self, node: NodeId) -> usize {
        self.depth[node - 1] as usize
    }

    /// Operand length held by `node`.
    pub fn node_len(&self, node: NodeId) -> usize {
        self.operand_len >> self.depth(node)
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.node_len(node) == 1
    }

    pub fn parent(node: NodeId) -> Option<NodeId> {
        (node > 1).then(|| (node + 1) / 3)
    }

    pub fn children(node: NodeId) -> [NodeId; 3] {
        [3 * node - 1, 3 * node, 3 * node + 1]
    }

    /// Value of `ans.1`, without leading zeros.
    pub fn product(&self, state: &GlobalState<KaratsubaNodeState>) -> Bitstring {
        state.get(1).ans.trimmed()
    }

    /// The unique quiescent state, computed top-down from the inputs with the
    /// reference multiplier at every node.
    pub fn intended_state(&self) -> &[KaratsubaNodeState] {
        self.intended.get_or_init(|| {
            let count = self.node_count();
            let mut out: Vec<Option<KaratsubaNodeState>> = vec![None; count];
            let mut stack = vec![(1usize, self.m.clone(), self.n.clone())];
            while let Some((i, m, n)) = stack.pop() {
                let len = m.len();
                let mut state = KaratsubaNodeState {
                    ans: school_mul(&m, &n),
                    shift: (len / 2) as u64,
                    carry_m: false,
                    carry_n: false,
                    m: m.clone(),
                    n: n.clone(),
                };
                if len > 1 {
                    let h = len / 2;
                    let (a, b) = (m.slice(1, h).unwrap(), m.slice(h + 1, len).unwrap());
                    let (c, d) = (n.slice(1, h).unwrap(), n.slice(h + 1, len).unwrap());
                    let sum_m = a.add(&b);
                    let sum_n = c.add(&d);
                    state.carry_m = sum_m.bit(1) == Some(1);
                    state.carry_n = sum_n.bit(1) == Some(1);
                    let [l, c_, r] = Self::children(i);
                    stack.push((l, a, c));
                    stack.push((c_, b, d));
                    stack.push((r, sum_m.low_bits(h), sum_n.low_bits(h)));
                }
                out[i - 1] = Some(state);
            }
            out.into_iter().map(|s| s.expect("every node visited")).collect()
        })
    }

    /// Whether `state` equals the intended state of `node` (`ans` by value).
    pub fn node_is_final(&self, node: NodeId, state: &KaratsubaNodeState) -> bool {
        let want = &self.intended_state()[node - 1];
        state.m == want.m
            && state.n == want.n
            && state.shift == want.shift
            && state.carry_m == want.carry_m
            && state.carry_n == want.carry_n
            && state.ans.value_eq(&want.ans)
    }

    fn target_shift(&self, node: NodeId, view: &ReadView<'_, KaratsubaNodeState>) -> Option<u64> {
        if self.is_leaf(node) {
            return Some(0);
        }
        let [l, c, r] = Self::children(node);
        let (sl, sc, sr) = (view.peer(l).shift, view.peer(c).shift, view.peer(r).shift);
        // children at equal height must agree before the parent derives its own
        if sl != sc || sc != sr {
            return None;
        }
        Some(if sl == 0 { 1 } else { sl.saturating_mul(2) })
    }

    /// Operands this node should hold according to its parent (or the
    /// program inputs at the root).
    fn target_operands(
        &self,
        node: NodeId,
        view: &ReadView<'_, KaratsubaNodeState>,
    ) -> (Bitstring, Bitstring) {
        let Some(p) = Self::parent(node) else {
            return (self.m.clone(), self.n.clone());
        };
        let h = self.node_len(node);
        let parent = view.peer(p);
        let pm = fit(&parent.m, 2 * h);
        let pn = fit(&parent.n, 2 * h);
        match node + 1 - 3 * p {
            0 => (pm.slice(1, h).unwrap(), pn.slice(1, h).unwrap()),
            1 => (pm.slice(h + 1, 2 * h).unwrap(), pn.slice(h + 1, 2 * h).unwrap()),
            _ => {
                let (a, b) = halves(&pm);
                let (c, d) = halves(&pn);
                (a.add(&b).low_bits(h), c.add(&d).low_bits(h))
            }
        }
    }

    fn carries(&self, node: NodeId, m: &Bitstring, n: &Bitstring) -> (bool, bool) {
        if self.is_leaf(node) {
            return (false, false);
        }
        let (a, b) = halves(m);
        let (c, d) = halves(n);
        (split_sum(&a, &b).1, split_sum(&c, &d).1)
    }

    fn topdown_stale(&self, node: NodeId, view: &ReadView<'_, KaratsubaNodeState>) -> bool {
        let own = view.own();
        let (m, n) = self.target_operands(node, view);
        if own.m != m || own.n != n {
            return true;
        }
        self.carries(node, &m, &n) != (own.carry_m, own.carry_n)
    }

    fn target_ans(&self, node: NodeId, view: &ReadView<'_, KaratsubaNodeState>) -> Bitstring {
        let own = view.own();
        if self.is_leaf(node) {
            let bit = own.m.digits()[own.m.len() - 1] & own.n.digits()[own.n.len() - 1];
            return Bitstring::from_u64(bit as u64, 1);
        }
        let [l, c, r] = Self::children(node);
        let (left, middle, right) = (view.peer(l), view.peer(c), view.peer(r));
        let h = own.shift as usize;
        let (product, _) = combine(
            &left.ans,
            &middle.ans,
            &right.ans,
            &right.m,
            &right.n,
            own.carry_m,
            own.carry_n,
            h,
        );
        product.trimmed()
    }
}

fn fit(x: &Bitstring, len: usize) -> Bitstring {
    if x.len() == len {
        x.clone()
    } else {
        x.low_bits(len)
    }
}

impl NodeProgram for KaratsubaProgram {
    type State = KaratsubaNodeState;

    fn node_count(&self) -> usize {
        self.depth.len()
    }

    fn neighbors(&self, node: NodeId) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(4);
        out.extend(Self::parent(node));
        if !self.is_leaf(node) {
            out.extend(Self::children(node));
        }
        out
    }

    fn rule_names(&self) -> &'static [&'static str] {
        RULE_NAMES
    }

    fn guard(&self, rule: usize, node: NodeId, view: &ReadView<'_, KaratsubaNodeState>) -> bool {
        let own = view.own();
        match rule {
            RULE_SHIFT => self
                .target_shift(node, view)
                .is_some_and(|t| t != own.shift),
            RULE_TOPDOWN => self.topdown_stale(node, view),
            RULE_BOTTOMUP => !own.ans.value_eq(&self.target_ans(node, view)),
            _ => unreachable!("unknown rule {rule}"),
        }
    }

    fn action(
        &self,
        rule: usize,
        node: NodeId,
        view: &ReadView<'_, KaratsubaNodeState>,
    ) -> KaratsubaNodeState {
        let mut next = view.own().clone();
        match rule {
            RULE_SHIFT => {
                next.shift = self
                    .target_shift(node, view)
                    .expect("shift rule fired without a target");
            }
            RULE_TOPDOWN => {
                let (m, n) = self.target_operands(node, view);
                let (cm, cn) = self.carries(node, &m, &n);
                next.m = m;
                next.n = n;
                next.carry_m = cm;
                next.carry_n = cn;
            }
            RULE_BOTTOMUP => next.ans = self.target_ans(node, view),
            _ => unreachable!("unknown rule {rule}"),
        }
        next
    }

    fn zero_state(&self, node: NodeId) -> KaratsubaNodeState {
        let len = self.node_len(node);
        KaratsubaNodeState {
            m: Bitstring::zero(len),
            n: Bitstring::zero(len),
            shift: 0,
            ans: Bitstring::zero(1),
            carry_m: false,
            carry_n: false,
        }
    }

    fn arbitrary_state(&self, node: NodeId, rng: &mut dyn RngCore) -> KaratsubaNodeState {
        let len = self.node_len(node);
        KaratsubaNodeState {
            m: Bitstring::random(len, rng),
            n: Bitstring::random(len, rng),
            shift: rng.random_range(0..=self.operand_len as u64),
            ans: Bitstring::random(2 * len, rng),
            carry_m: rng.random_bool(0.5),
            carry_n: rng.random_bool(0.5),
        }
    }

    fn target(&self, state: &GlobalState<KaratsubaNodeState>) -> bool {
        state.iter().all(|(i, s)| self.node_is_final(i, s))
    }

    fn render_state(&self, s: &KaratsubaNodeState) -> String {
        format!(
            "m={},n={},shift={},ans={},cm={},cn={}",
            s.m, s.n, s.shift, s.ans, s.carry_m as u8, s.carry_n as u8
        )
    }

    fn parse_state(&self, text: &str) -> Result<KaratsubaNodeState, EngineError> {
        let bad = |reason: &str| EngineError::StateParse {
            input: text.to_string(),
            reason: reason.to_string(),
        };
        let mut fields = [None; 6];
        for part in text.split(',') {
            let (key, value) = part.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let slot = ["m", "n", "shift", "ans", "cm", "cn"]
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| bad("unknown field"))?;
            fields[slot] = Some(value);
        }
        let get = |k: usize| fields[k].ok_or_else(|| bad("missing field"));
        let bits = |k: usize| -> Result<Bitstring, EngineError> {
            get(k)?.parse().map_err(|_| bad("bad bitstring"))
        };
        let flag = |k: usize| -> Result<bool, EngineError> {
            match get(k)? {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad("carry must be 0 or 1")),
            }
        };
        Ok(KaratsubaNodeState {
            m: bits(0)?,
            n: bits(1)?,
            shift: get(2)?.parse().map_err(|_| bad("bad shift"))?,
            ans: bits(3)?,
            carry_m: flag(4)?,
            carry_n: flag(5)?,
        })
    }
}
