//! Multi-index arithmetic, canonical composite operators, and exhaustive
//! enumeration of the operator basis by dimension.
//!
//! A composite operator is a product of derivative factors
//! `d^{a_1} phi * ... * d^{a_n} phi`, represented by the multiset of its
//! multi-indices. The engineering dimension is `sum_i (1 + |a_i|)`; the empty
//! product is the identity operator of dimension zero.

use serde::{Deserialize, Serialize};
use std::fmt;

// ---------------------------------------------------------------------------
// MultiIndex
// ---------------------------------------------------------------------------

/// Derivative counts along the four Euclidean axes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub [u32; 4]);

impl MultiIndex {
    /// The zero multi-index (no derivatives).
    pub const ZERO: MultiIndex = MultiIndex([0, 0, 0, 0]);

    /// Total derivative order `|alpha|`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Component-wise sum.
    pub fn plus(&self, rhs: &MultiIndex) -> MultiIndex {
        MultiIndex([
            self.0[0] + rhs.0[0],
            self.0[1] + rhs.0[1],
            self.0[2] + rhs.0[2],
            self.0[3] + rhs.0[3],
        ])
    }

    /// Component-wise difference, or `None` if any component would go
    /// negative.
    pub fn checked_sub(&self, rhs: &MultiIndex) -> Option<MultiIndex> {
        let mut out = [0u32; 4];
        for mu in 0..4 {
            out[mu] = self.0[mu].checked_sub(rhs.0[mu])?;
        }
        Some(MultiIndex(out))
    }

    /// `alpha! = prod_mu alpha_mu!` as a float (exact for the orders used
    /// here; factorials up to 170 stay within binary64 range).
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&k| factorial(k)).product()
    }

    /// All multi-indices of total order exactly `d`, in ascending
    /// lexicographic order. There are `binomial(d+3, 3)` of them.
    pub fn all_of_order(d: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for a in 0..=d {
            for b in 0..=(d - a) {
                for c in 0..=(d - a - b) {
                    out.push(MultiIndex([a, b, c, d - a - b - c]));
                }
            }
        }
        out.sort();
        out
    }

    /// Applies a signed axis map: component `mu` of the result is the
    /// component `perm[mu]` of `self`, and the returned sign is
    /// `prod_mu signs[perm[mu]]^{alpha_{perm[mu]}}` — the factor picked up by
    /// `d^alpha` when the coordinate axes are permuted and flipped.
    pub fn axis_transformed(&self, perm: &[usize; 4], signs: &[i8; 4]) -> (MultiIndex, f64) {
        let mut out = [0u32; 4];
        let mut sign = 1.0f64;
        for mu in 0..4 {
            let src = perm[mu];
            out[mu] = self.0[src];
            if signs[src] < 0 && self.0[src] % 2 == 1 {
                sign = -sign;
            }
        }
        (MultiIndex(out), sign)
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{},{},{},{}]",
            self.0[0], self.0[1], self.0[2], self.0[3]
        )
    }
}

/// `k!` as a float.
pub(crate) fn factorial(k: u32) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

// ---------------------------------------------------------------------------
// CompositeOp
// ---------------------------------------------------------------------------

/// A product of derivative factors of the basic field, stored as the
/// canonically (lexicographically) sorted list of factor multi-indices.
/// The empty list is the identity operator `1`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CompositeOp {
    factors: Vec<MultiIndex>,
}

impl CompositeOp {
    /// The identity operator (empty product, dimension 0).
    pub fn identity() -> CompositeOp {
        CompositeOp { factors: Vec::new() }
    }

    /// The basic field (one underived factor, dimension 1).
    pub fn phi() -> CompositeOp {
        CompositeOp {
            factors: vec![MultiIndex::ZERO],
        }
    }

    /// `phi^k` (k underived factors).
    pub fn phi_power(k: usize) -> CompositeOp {
        CompositeOp {
            factors: vec![MultiIndex::ZERO; k],
        }
    }

    /// Builds an operator from factors in any order; the canonical sorted
    /// form is stored (factors commute — the theory is bosonic).
    pub fn new(mut factors: Vec<MultiIndex>) -> CompositeOp {
        factors.sort();
        CompositeOp { factors }
    }

    /// The canonical factor list (sorted ascending).
    pub fn factors(&self) -> &[MultiIndex] {
        &self.factors
    }

    /// Number of field factors (`n`); 0 for the identity.
    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn is_identity(&self) -> bool {
        self.factors.is_empty()
    }

    /// Engineering dimension `sum_i (1 + |a_i|)`; 0 for the identity.
    pub fn dimension(&self) -> u32 {
        self.factors.iter().map(|a| 1 + a.order()).sum()
    }

    /// `prod_k m_k!` over the multiplicities of repeated factors. This is the
    /// symmetry factor that converts raw matching sums into coefficients in
    /// the canonical monomial basis (see `matchings::free_ope`).
    pub fn multiplicity_normalization(&self) -> f64 {
        let mut norm = 1.0f64;
        let mut run = 1u32;
        for w in self.factors.windows(2) {
            if w[0] == w[1] {
                run += 1;
                norm *= run as f64;
            } else {
                run = 1;
            }
        }
        norm
    }

    /// Applies a signed axis map to every factor; returns the transformed
    /// operator (re-canonicalized) and the accumulated sign.
    pub fn axis_transformed(&self, perm: &[usize; 4], signs: &[i8; 4]) -> (CompositeOp, f64) {
        let mut sign = 1.0f64;
        let factors = self
            .factors
            .iter()
            .map(|a| {
                let (t, s) = a.axis_transformed(perm, signs);
                sign *= s;
                t
            })
            .collect();
        (CompositeOp::new(factors), sign)
    }

    /// Parses the operator grammar:
    ///
    /// ```text
    /// op     := "1" | factor ("*" factor)*
    /// factor := base ("^" count)?
    /// base   := "phi" | "d[" n "," n "," n "," n "]phi"
    /// ```
    ///
    /// `base^k` repeats the base factor `k` times (`k >= 1`). No whitespace.
    /// Errors carry the byte offset of the first offending character.
    pub fn parse(input: &str) -> Result<CompositeOp, OpParseError> {
        Parser::new(input).parse_op()
    }
}

impl fmt::Display for CompositeOp {
    /// Formats in the operator grammar; inverse of [`CompositeOp::parse`]
    /// up to `^k` contraction of repeated factors.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        let mut i = 0;
        let mut first = true;
        while i < self.factors.len() {
            let mut j = i + 1;
            while j < self.factors.len() && self.factors[j] == self.factors[i] {
                j += 1;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            let a = self.factors[i];
            if a == MultiIndex::ZERO {
                write!(f, "phi")?;
            } else {
                write!(f, "d[{},{},{},{}]phi", a.0[0], a.0[1], a.0[2], a.0[3])?;
            }
            if j - i > 1 {
                write!(f, "^{}", j - i)?;
            }
            i = j;
        }
        Ok(())
    }
}

impl fmt::Debug for CompositeOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

// ---------------------------------------------------------------------------
// Free functions (module-level operations)
// ---------------------------------------------------------------------------

/// Engineering dimension of an operator (free-function form of
/// [`CompositeOp::dimension`]).
pub fn dimension(op: &CompositeOp) -> u32 {
    op.dimension()
}

/// Every canonical operator of dimension exactly `d`, each exactly once,
/// ordered by (factor count, then lexicographic factor list).
pub fn enumerate_ops(d: u32) -> Vec<CompositeOp> {
    enumerate_ops_with_max_factors(d, d as usize)
}

/// Like [`enumerate_ops`] but keeping only operators with at most
/// `max_factors` field factors. Matching sums use this to skip operators that
/// cannot contract against a fixed number of remaining slots.
pub fn enumerate_ops_with_max_factors(d: u32, max_factors: usize) -> Vec<CompositeOp> {
    if d == 0 {
        return vec![CompositeOp::identity()];
    }
    let mut out = Vec::new();
    let max_n = (d as usize).min(max_factors);
    for n in 1..=max_n {
        let mut partial = Vec::with_capacity(n);
        collect_ops(n, d - n as u32, None, &mut partial, &mut out);
    }
    out.sort_by(|a, b| {
        (a.n_factors(), a.factors()).cmp(&(b.n_factors(), b.factors()))
    });
    out
}

/// Recursively extends `partial` by nondecreasing factors until `remaining`
/// factor slots consume exactly `budget` derivative orders.
fn collect_ops(
    remaining: usize,
    budget: u32,
    min_factor: Option<MultiIndex>,
    partial: &mut Vec<MultiIndex>,
    out: &mut Vec<CompositeOp>,
) {
    if remaining == 0 {
        if budget == 0 {
            out.push(CompositeOp {
                factors: partial.clone(),
            });
        }
        return;
    }
    // The last factor must absorb the whole leftover budget; earlier factors
    // may take any order up to the budget.
    for order in 0..=budget {
        if remaining == 1 && order != budget {
            continue;
        }
        for alpha in MultiIndex::all_of_order(order) {
            if let Some(min) = min_factor {
                if alpha < min {
                    continue;
                }
            }
            partial.push(alpha);
            collect_ops(remaining - 1, budget - order, Some(alpha), partial, out);
            partial.pop();
        }
    }
}

// ---------------------------------------------------------------------------
// Operator grammar parser
// ---------------------------------------------------------------------------

/// Parse failure with the byte offset of the offending position.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("operator parse error at byte {offset}: {message}")]
pub struct OpParseError {
    pub offset: usize,
    pub message: String,
}

type ParseResult<T> = Result<T, OpParseError>;

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(input: &'a str) -> Self {
        Parser {
            input: input.as_bytes(),
            pos: 0,
        }
    }

    fn fail<T>(&self, message: impl Into<String>) -> ParseResult<T> {
        Err(OpParseError {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> ParseResult<()> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected '{}'", b as char))
        }
    }

    fn parse_op(&mut self) -> ParseResult<CompositeOp> {
        if self.peek() == Some(b'1') {
            self.pos += 1;
            if self.pos != self.input.len() {
                return self.fail("identity operator '1' cannot be combined with factors");
            }
            return Ok(CompositeOp::identity());
        }
        let mut factors = Vec::new();
        self.parse_factor(&mut factors)?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            self.parse_factor(&mut factors)?;
        }
        if self.pos != self.input.len() {
            return self.fail("trailing input after operator");
        }
        Ok(CompositeOp::new(factors))
    }

    fn parse_factor(&mut self, factors: &mut Vec<MultiIndex>) -> ParseResult<()> {
        let alpha = self.parse_base()?;
        let mut count = 1usize;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let n = self.parse_uint()?;
            if n == 0 {
                return self.fail("repeat count must be at least 1");
            }
            count = n as usize;
        }
        factors.extend(std::iter::repeat(alpha).take(count));
        Ok(())
    }

    fn parse_base(&mut self) -> ParseResult<MultiIndex> {
        match self.peek() {
            Some(b'p') => {
                self.expect_keyword("phi")?;
                Ok(MultiIndex::ZERO)
            }
            Some(b'd') => {
                self.pos += 1;
                self.eat(b'[')?;
                let mut entries = [0u32; 4];
                for (mu, slot) in entries.iter_mut().enumerate() {
                    *slot = self.parse_uint()?;
                    if mu < 3 {
                        self.eat(b',')?;
                    }
                }
                self.eat(b']')?;
                self.expect_keyword("phi")?;
                Ok(MultiIndex(entries))
            }
            _ => self.fail("expected 'phi' or 'd[...]phi'"),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> ParseResult<()> {
        if self.input[self.pos..].starts_with(kw.as_bytes()) {
            self.pos += kw.len();
            Ok(())
        } else {
            self.fail(format!("expected '{kw}'"))
        }
    }

    fn parse_uint(&mut self) -> ParseResult<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == start {
            return self.fail("expected a number");
        }
        std::str::from_utf8(&self.input[start..self.pos])
            .unwrap()
            .parse::<u32>()
            .map_err(|_| OpParseError {
                offset: start,
                message: "number too large".into(),
            })
    }
}

// ---------------------------------------------------------------------------
