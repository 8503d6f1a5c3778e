//! Closed-form decay envelopes for truncated factorization remainders,
//! dimension-capped contraction sums, pairing-matrix entries and propagator
//! Taylor expansions, plus a least-squares fitter for the two free constants
//! of the remainder envelope.
//!
//! Every envelope is assembled in log space, so extreme parameters degrade
//! gracefully to `0.0` or `+inf` instead of producing NaN, and validation
//! errors are reported through [`BoundError`] rather than panics.

use std::collections::BTreeMap;

use crate::multiindex::MultiIndex;
use crate::propagator::{propagator_derivative, MassParam, Point4};
use crate::trees::{Branch, TreeError, VertexId, WeightedTree};

/// Rejected inputs and out-of-domain configurations for the bound evaluators.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoundError {
    /// The regulator must be positive and at most `max`.
    #[error("epsilon must lie in (0, {max:.6e}], got {eps:.6e}")]
    EpsilonRange { eps: f64, max: f64 },
    /// The interpolation exponent is outside its admissible interval.
    #[error("delta must lie in [0, {max}], got {delta}")]
    DeltaRange { delta: f64, max: f64 },
    /// The separation ratio of the split configuration must be below one.
    #[error("separation ratio must be below one, got {xi}")]
    SeparationTooLarge { xi: f64 },
    /// The geometric ratio of the dimension tail must be below one.
    #[error("geometric ratio must be below one, got {q}")]
    RatioTooLarge { q: f64 },
    /// A geometric degeneracy puts the configuration outside the envelope's
    /// domain (coincident points, missing siblings, single-child vertices).
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    /// Structurally invalid input (length mismatches, missing caps, ...).
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

// ---------------------------------------------------------------------------
// Remainder envelope (truncated factorization)
// ---------------------------------------------------------------------------

/// Separation ratio of a split configuration: the spread of the leading
/// `split` points around the junction `points[split - 1]`, divided by the
/// smallest distance from the junction to any trailing point.
pub fn separation_ratio_at(points: &[Point4], split: usize) -> Result<f64, BoundError> {
    let n = points.len();
    if n < 2 {
        return Err(BoundError::Invalid(format!(
            "need at least two points, got {n}"
        )));
    }
    if split == 0 || split >= n {
        return Err(BoundError::Invalid(format!(
            "split must lie in 1..{n}, got {split}"
        )));
    }
    let junction = points[split - 1];
    let spread = points[..split]
        .iter()
        .map(|p| p.dist(&junction))
        .fold(0.0f64, f64::max);
    let gap = points[split..]
        .iter()
        .map(|p| p.dist(&junction))
        .fold(f64::INFINITY, f64::min);
    if gap == 0.0 {
        return Err(BoundError::Degenerate(
            "a trailing point coincides with the junction point".into(),
        ));
    }
    Ok(spread / gap)
}

/// Natural log of the mass/separation factor shared by the remainder
/// envelope and the constant fitter:
/// `(target_dim + 1) * ln max(1/m, max_i |x_i - x_last|)
///  - (sum slot_dims + 1) * ln min_{i<j} |x_i - x_j|`.
///
/// A vanishing mass makes the first factor infinite, so the massless value
/// is `+inf` (the envelope built on it is vacuous but still valid).
pub fn envelope_geometry_ln(
    slot_dims: &[u32],
    target_dim: u32,
    points: &[Point4],
    mass: MassParam,
) -> Result<f64, BoundError> {
    let n = points.len();
    if slot_dims.len() != n || n < 2 {
        return Err(BoundError::Invalid(format!(
            "need matching dims/points with at least two entries, got {} dims and {n} points",
            slot_dims.len()
        )));
    }
    let last = points[n - 1];
    let inv_mass = if mass.is_massless() {
        f64::INFINITY
    } else {
        1.0 / mass.value()
    };
    let spread = points
        .iter()
        .map(|p| p.dist(&last))
        .fold(inv_mass, f64::max);
    let mut min_gap = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            min_gap = min_gap.min(points[i].dist(&points[j]));
        }
    }
    if min_gap == 0.0 {
        return Err(BoundError::Degenerate("two points coincide".into()));
    }
    let slot_sum: u32 = slot_dims.iter().sum();
    Ok(f64::from(target_dim + 1) * spread.ln() - f64::from(slot_sum + 1) * min_gap.ln())
}

/// Decay envelope for the error of factorizing an `n`-point coefficient
/// through intermediate operators of dimension at most `truncation`, with the
/// leading `split` slots expanded around `points[split - 1]`:
///
/// `k * xi^((D+1)/2) * ((D+2)/(sqrt(xi)-xi))^(c * dim_sum) * geometry`
///
/// where `xi` is [`separation_ratio_at`], `dim_sum` is the total operator
/// dimension of all slots plus the target, and `geometry` is
/// `exp(`[`envelope_geometry_ln`]`)`. Requires `0 < xi < 1`. The result may
/// be `+inf` for extreme parameters; that is a vacuous but valid bound.
#[allow(clippy::too_many_arguments)]
pub fn remainder_envelope(
    slot_dims: &[u32],
    target_dim: u32,
    points: &[Point4],
    split: usize,
    truncation: u32,
    k_const: f64,
    c_const: f64,
    mass: MassParam,
) -> Result<f64, BoundError> {
    if !(k_const > 0.0 && k_const.is_finite()) || !c_const.is_finite() {
        return Err(BoundError::Invalid(format!(
            "constants must be finite with k positive, got k = {k_const}, c = {c_const}"
        )));
    }
    if slot_dims.len() != points.len() {
        return Err(BoundError::Invalid(format!(
            "got {} slot dimensions for {} points",
            slot_dims.len(),
            points.len()
        )));
    }
    let xi = separation_ratio_at(points, split)?;
    if xi == 0.0 {
        return Err(BoundError::Degenerate(
            "all leading points sit on the junction point, the envelope needs a positive spread"
                .into(),
        ));
    }
    if !(xi < 1.0) {
        return Err(BoundError::SeparationTooLarge { xi });
    }
    let geometry = envelope_geometry_ln(slot_dims, target_dim, points, mass)?;
    let slot_sum: u32 = slot_dims.iter().sum();
    let dim_sum = f64::from(slot_sum + target_dim);
    let d = f64::from(truncation);
    let ln_bound = k_const.ln()
        + 0.5 * (d + 1.0) * xi.ln()
        + c_const * dim_sum * ((d + 2.0) / (xi.sqrt() - xi)).ln()
        + geometry;
    Ok(ln_bound.exp())
}

// ---------------------------------------------------------------------------
// Contraction envelope (dimension-capped tree sums)
// ---------------------------------------------------------------------------

/// Parameters of the contraction envelope.
#[derive(Clone, Debug)]
pub struct TreeBoundParams {
    /// Regulator; must lie in `(0, 2^-(total_dim + 4*order + 3)]` where
    /// `total_dim` is the sum of all leaf and root operator dimensions.
    pub eps: f64,
    /// Interpolation exponent per internal vertex, each in `[0, 1)`.
    /// Missing vertices default to zero (their factor is dropped).
    pub delta: BTreeMap<VertexId, f64>,
    /// Overall constant in front of the combinatorial factor.
    pub k_const: f64,
    /// Dimension cap per internal non-root vertex; keys must match the
    /// tree's internal non-root vertex set exactly.
    pub dims: BTreeMap<VertexId, u32>,
    /// Constant-point branch to favour; `None` selects the tree's default
    /// branch deterministically.
    pub branch: Option<Branch>,
}

impl TreeBoundParams {
    /// Envelope parameters with regulator `eps`, caps `dims`, no
    /// interpolation exponents, unit constant and the default branch.
    pub fn new(eps: f64, dims: BTreeMap<VertexId, u32>) -> TreeBoundParams {
        TreeBoundParams {
            eps,
            delta: BTreeMap::new(),
            k_const: 1.0,
            dims,
            branch: None,
        }
    }
}

fn validate_dims_map(
    tree: &WeightedTree,
    dims: &BTreeMap<VertexId, u32>,
) -> Result<(), BoundError> {
    let mut expected: Vec<VertexId> = tree.internal_nonroot().to_vec();
    expected.sort_unstable();
    let got: Vec<VertexId> = dims.keys().copied().collect();
    if got != expected {
        return Err(BoundError::Invalid(format!(
            "dimension caps must cover exactly the internal non-root vertices {expected:?}, got {got:?}"
        )));
    }
    Ok(())
}

fn resolve_branch(tree: &WeightedTree, requested: &Option<Branch>) -> Result<Branch, BoundError> {
    match requested {
        None => Ok(tree.default_branch()),
        Some(b) => {
            if !tree.branches().contains(b) {
                return Err(BoundError::Invalid(
                    "the requested branch is not a leaf-to-root path of this tree".into(),
                ));
            }
            let anchor = tree.point(b.leaf);
            if b.path.iter().any(|&v| tree.point(v) != anchor) {
                return Err(BoundError::Invalid(
                    "the requested branch must sit on a single point".into(),
                ));
            }
            Ok(b.clone())
        }
    }
}

/// Upper envelope for the modulus of a dimension-capped contraction sum over
/// a weighted tree at the given interaction order. The three log-space blocks
/// are: naive power counting in the tree's separations, the combinatorial
/// factor controlled by the regulator and the favoured branch, and the
/// mass-dependent interpolation factors activated by positive `delta`.
///
/// Requires a positive mass and at least two children under every internal
/// vertex. The result may be `+inf`; that is a vacuous but valid bound.
pub fn contraction_envelope(
    tree: &WeightedTree,
    order: u32,
    params: &TreeBoundParams,
    mass: MassParam,
) -> Result<f64, BoundError> {
    if mass.is_massless() {
        return Err(BoundError::Invalid(
            "the contraction envelope requires a positive mass".into(),
        ));
    }
    if !(params.k_const > 0.0 && params.k_const.is_finite()) {
        return Err(BoundError::Invalid(format!(
            "the overall constant must be finite and positive, got {}",
            params.k_const
        )));
    }
    if order > 10 {
        return Err(BoundError::Invalid(format!(
            "interaction order capped at 10 for this envelope, got {order}"
        )));
    }
    validate_dims_map(tree, &params.dims)?;
    for (&v, &d) in &params.delta {
        if v >= tree.vertex_count() || !tree.is_internal(v) {
            return Err(BoundError::Invalid(format!(
                "delta exponent attached to non-internal vertex {v}"
            )));
        }
        if !(0.0..1.0).contains(&d) {
            return Err(BoundError::DeltaRange { delta: d, max: 1.0 });
        }
    }
    let root = tree.root();
    for v in tree.internal() {
        if tree.children(v).len() < 2 {
            return Err(BoundError::Degenerate(format!(
                "internal vertex {v} has fewer than two children"
            )));
        }
    }

    // Total leaf + root operator dimension fixes the admissible regulator.
    let total_dim: u32 = tree
        .leaves()
        .iter()
        .copied()
        .chain(std::iter::once(root))
        .map(|v| tree.op_required(v).dimension())
        .sum();
    let eps_max = (2.0f64).powi(-(total_dim as i32 + 4 * order as i32 + 3));
    if !(params.eps > 0.0 && params.eps <= eps_max) {
        return Err(BoundError::EpsilonRange {
            eps: params.eps,
            max: eps_max,
        });
    }
    let branch = resolve_branch(tree, &params.branch)?;
    let on_branch = |v: VertexId| branch.path.contains(&v);

    // Block 1: power counting. Root spread to the power of the root
    // dimension, over each leaf's nearest-sibling gap to the power of its
    // dimension, times the separation ratio of every capped vertex raised to
    // its cap.
    let mut ln_total = 0.0f64;
    let root_dim = tree.op_required(root).dimension();
    let root_spread = tree
        .children(root)
        .iter()
        .map(|&c| tree.point(c).dist(&tree.point(root)))
        .fold(0.0f64, f64::max);
    if root_dim > 0 {
        if root_spread == 0.0 {
            return Err(BoundError::Degenerate(
                "every root child sits on the root point".into(),
            ));
        }
        ln_total += f64::from(root_dim) * root_spread.ln();
    }
    for &leaf in tree.leaves() {
        let dim = tree.op_required(leaf).dimension();
        if dim == 0 {
            continue;
        }
        let gap = tree
            .siblings(leaf)
            .iter()
            .map(|&s| tree.point(s).dist(&tree.point(leaf)))
            .fold(f64::INFINITY, f64::min);
        if !gap.is_finite() || gap == 0.0 {
            return Err(BoundError::Degenerate(format!(
                "leaf {leaf} needs a sibling at a positive distance"
            )));
        }
        ln_total -= f64::from(dim) * gap.ln();
    }
    for &v in tree.internal_nonroot() {
        let cap = params.dims[&v];
        if cap == 0 {
            continue;
        }
        let xi = tree.xi(v)?;
        if xi == 0.0 {
            return Err(BoundError::Degenerate(format!(
                "capped vertex {v} has no spread around its point"
            )));
        }
        ln_total += f64::from(cap) * xi.ln();
    }

    // Block 2: combinatorics. Branch caps feed the (1 + eps) powers and the
    // polynomial factors; everything off the branch pays an inverse power of
    // the regulator.
    let power = (8.0f64).powi(order as i32 + 1);
    let branch_cap_sum: f64 = branch.path.iter().map(|v| f64::from(params.dims[v])).sum();
    let off_cap_sum: f64 = tree
        .internal_nonroot()
        .iter()
        .filter(|&&v| !on_branch(v))
        .map(|v| f64::from(params.dims[v]))
        .sum();
    let off_dim_sum = f64::from(total_dim) + off_cap_sum;
    let branch_ln_poly: f64 = branch
        .path
        .iter()
        .map(|v| f64::from(params.dims[v] + 1).ln())
        .sum();
    ln_total += params.k_const.ln()
        + power
            * (branch_cap_sum * params.eps.ln_1p()
                + off_dim_sum * (1.0 / params.eps).ln()
                + f64::from(total_dim) * branch_ln_poly);

    // Block 3: interpolation factors for vertices with a positive delta.
    let vertex_dim = |v: VertexId| -> f64 {
        if tree.is_leaf(v) || v == root {
            f64::from(tree.op_required(v).dimension())
        } else {
            f64::from(params.dims[&v])
        }
    };
    let m = mass.value();
    for v in tree.internal() {
        let delta = params.delta.get(&v).copied().unwrap_or(0.0);
        if delta == 0.0 {
            continue;
        }
        let children = tree.children(v);
        let spread = children
            .iter()
            .map(|&c| tree.point(c).dist(&tree.point(v)))
            .fold(0.0f64, f64::max);
        let mut min_pair = f64::INFINITY;
        for (a, &i) in children.iter().enumerate() {
            for &j in &children[a + 1..] {
                min_pair = min_pair.min(tree.point(i).dist(&tree.point(j)));
            }
        }
        if min_pair == 0.0 {
            return Err(BoundError::Degenerate(format!(
                "two children of vertex {v} share a point"
            )));
        }
        let excess: f64 = children.iter().map(|&c| vertex_dim(c)).sum::<f64>() - vertex_dim(v);
        let theta = if excess > 0.0 { 1.0 } else { 0.0 };
        ln_total +=
            delta * (spread.max(1.0 / m).ln() - theta * m.ln() - (1.0 + theta) * min_pair.ln());
    }

    Ok(ln_total.exp())
}

// ---------------------------------------------------------------------------
// Pairing-entry envelope
// ---------------------------------------------------------------------------

/// One internal vertex on the path from a paired slot up to (but excluding)
/// the junction where the two paths meet, listed bottom-up.
#[derive(Clone, Copy, Debug)]
pub struct ChainLink {
    /// Degree assigned to this vertex by the pairing's degree vector.
    pub degree: u32,
    /// Separation ratio of the vertex (child spread over sibling gap).
    pub xi: f64,
    /// Whether the vertex lies on the favoured constant-point branch.
    pub on_branch: bool,
}

/// The second endpoint of a pairing: either another leaf slot (with its own
/// chain) or the root slot.
#[derive(Clone, Debug)]
pub enum PairingPartner<'a> {
    Leaf {
        /// Derivative order carried by the partner slot.
        derivative_order: u32,
        /// Distance from the partner's leaf to its nearest sibling.
        min_sibling_gap: f64,
        /// The partner's bottom-up chain towards the junction.
        chain: &'a [ChainLink],
    },
    Root {
        /// Derivative order carried by the root slot.
        derivative_order: u32,
        /// Largest distance from a root child to the root point.
        max_root_child_gap: f64,
    },
}

/// Log of the chain product: checks that degrees never decrease from the
/// slot upwards (the entry vanishes otherwise, reported as `None`) and sums
/// `exponent(d) * ln(scale(link))` over the chain.
fn chain_ln_product(
    base_order: u32,
    chain: &[ChainLink],
    scale: impl Fn(&ChainLink) -> f64,
    exponent: impl Fn(u32) -> f64,
) -> Result<Option<f64>, BoundError> {
    let mut prev = base_order;
    let mut ln_prod = 0.0f64;
    for link in chain {
        if !(link.xi > 0.0 && link.xi.is_finite()) {
            return Err(BoundError::Invalid(format!(
                "chain separation ratios must be positive and finite, got {}",
                link.xi
            )));
        }
        if link.degree < prev {
            return Ok(None);
        }
        ln_prod += exponent(link.degree) * scale(link).ln();
        prev = link.degree;
    }
    Ok(Some(ln_prod))
}

/// Envelope for the modulus of one pairing-matrix entry: the weight carried
/// by a pairing between a derivative slot (order `derivative_order`, nearest
/// sibling at `min_sibling_gap`, path `chain`) and `partner`, after lifting
/// both slots to the junction of their paths.
///
/// The entry vanishes — and the envelope returns exactly `0.0` — whenever the
/// degrees along either chain decrease on the way up. A positive `delta`
/// buys a factor `1/(m * junction_gap)^delta` and is only available in the
/// leaf–leaf case with nonempty chains on both sides; `junction_gap` is the
/// distance between the two topmost chain vertices. `total_dim` is the sum
/// of all leaf and root operator dimensions of the ambient tree and fixes
/// the admissible regulator range `(0, 2^-(total_dim+3))`.
#[allow(clippy::too_many_arguments)]
pub fn pairing_entry_envelope(
    derivative_order: u32,
    min_sibling_gap: f64,
    chain: &[ChainLink],
    partner: &PairingPartner<'_>,
    junction_gap: f64,
    eps: f64,
    delta: f64,
    mass: MassParam,
    total_dim: u32,
) -> Result<f64, BoundError> {
    let eps_max = (2.0f64).powi(-(total_dim as i32 + 3));
    if !(eps > 0.0 && eps < eps_max) {
        return Err(BoundError::EpsilonRange { eps, max: eps_max });
    }
    if !(min_sibling_gap > 0.0 && min_sibling_gap.is_finite()) {
        return Err(BoundError::Degenerate(format!(
            "the slot needs a sibling at a positive finite distance, got {min_sibling_gap}"
        )));
    }
    if delta < 0.0 || !delta.is_finite() {
        return Err(BoundError::DeltaRange {
            delta,
            max: f64::INFINITY,
        });
    }
    let chi = |link: &ChainLink| {
        if link.on_branch {
            link.xi * (1.0 + eps)
        } else {
            link.xi / (eps * eps)
        }
    };
    match *partner {
        PairingPartner::Leaf {
            derivative_order: partner_order,
            min_sibling_gap: partner_gap,
            chain: partner_chain,
        } => {
            if !(partner_gap > 0.0 && partner_gap.is_finite()) {
                return Err(BoundError::Degenerate(format!(
                    "the partner slot needs a sibling at a positive finite distance, got {partner_gap}"
                )));
            }
            if delta > 0.0 {
                if mass.is_massless() {
                    return Err(BoundError::Invalid(
                        "a positive delta requires a positive mass".into(),
                    ));
                }
                if chain.is_empty() || partner_chain.is_empty() {
                    return Err(BoundError::Invalid(
                        "a positive delta requires nonempty chains on both sides".into(),
                    ));
                }
                if !(junction_gap > 0.0 && junction_gap.is_finite()) {
                    return Err(BoundError::Degenerate(format!(
                        "a positive delta requires a positive junction separation, got {junction_gap}"
                    )));
                }
            }
            let Some(ln_a) =
                chain_ln_product(derivative_order, chain, chi, |d| f64::from(d) + 1.0)?
            else {
                return Ok(0.0);
            };
            let Some(ln_b) =
                chain_ln_product(partner_order, partner_chain, chi, |d| f64::from(d) + 1.0)?
            else {
                return Ok(0.0);
            };
            let mut ln_bound = ln_gamma(f64::from(derivative_order + partner_order) + delta + 1.0)
                + ln_a
                + ln_b
                - f64::from(derivative_order + 1) * (eps * eps * min_sibling_gap).ln()
                - f64::from(partner_order + 1) * (eps * eps * partner_gap).ln();
            if delta > 0.0 {
                ln_bound -= delta * (mass.value().ln() + (eps * eps * junction_gap).ln());
            }
            Ok(ln_bound.exp())
        }
        PairingPartner::Root {
            derivative_order: root_order,
            max_root_child_gap,
        } => {
            if delta != 0.0 {
                return Err(BoundError::Invalid(
                    "the root pairing case takes no delta augmentation".into(),
                ));
            }
            if !(max_root_child_gap > 0.0 && max_root_child_gap.is_finite()) {
                return Err(BoundError::Degenerate(format!(
                    "the root needs a child at a positive finite distance, got {max_root_child_gap}"
                )));
            }
            let Some(ln_chain) =
                chain_ln_product(derivative_order, chain, |link| link.xi, f64::from)?
            else {
                return Ok(0.0);
            };
            let ln_bound = f64::from(root_order + 1) * max_root_child_gap.ln()
                - f64::from(derivative_order + 1) * min_sibling_gap.ln()
                + ln_chain;
            Ok(ln_bound.exp())
        }
    }
}

// ---------------------------------------------------------------------------
// Taylor expansion bound for the two-point function
// ---------------------------------------------------------------------------

/// Evaluates both sides of the staged Taylor bound for the two-point
/// function and returns `(lhs, rhs)` with `lhs <= rhs` guaranteed on the
/// validated domain.
///
/// The left side is the exact modulus of the staged expansion: stage `i`
/// sums `offsets[i]^v / v!` times a derivative of the two-point function
/// over all multi-indices `v` of order `stage_degrees[i]`, the stages
/// compose, and a final derivative `w` acts on top; everything is evaluated
/// at `y`. The right side is the closed-form envelope
///
/// `(|w| + delta)! * prod_{i<r-1} (|x_i|/eps^2)^{d_i} * ((1+eps)|x_r|)^{d_r}
///  / (eps^(4+2|w|+2delta) * |y|^(2+|w|+sum d+delta) * m^delta)`.
///
/// Requires `eps` in `(0, 1/(8r)]` with `r = stage_degrees.len()`, `delta`
/// in `[0, 1]` (positive only with a positive mass) and `y != 0`.
pub fn taylor_expansion_bound(
    stage_degrees: &[u32],
    w: &MultiIndex,
    offsets: &[Point4],
    y: Point4,
    eps: f64,
    delta: f64,
    mass: MassParam,
) -> Result<(f64, f64), BoundError> {
    let stages = stage_degrees.len();
    if stages == 0 || offsets.len() != stages {
        return Err(BoundError::Invalid(format!(
            "need one offset per stage degree, got {} offsets for {stages} degrees",
            offsets.len()
        )));
    }
    let eps_max = 1.0 / (8.0 * stages as f64);
    if !(eps > 0.0 && eps <= eps_max) {
        return Err(BoundError::EpsilonRange { eps, max: eps_max });
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(BoundError::DeltaRange { delta, max: 1.0 });
    }
    if delta > 0.0 && mass.is_massless() {
        return Err(BoundError::Invalid(
            "a positive delta requires a positive mass".into(),
        ));
    }
    if y.norm_sq() == 0.0 {
        return Err(BoundError::Invalid(
            "the expansion point must be nonzero".into(),
        ));
    }

    // Exact left side: fold the staged sums into one map from accumulated
    // derivative multi-index to coefficient, then contract with the
    // derivatives of the two-point function.
    let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    acc.insert(MultiIndex::ZERO, 1.0);
    for (i, &d) in stage_degrees.iter().enumerate() {
        let mut next: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for v in MultiIndex::all_of_order(d) {
            let weight = offsets[i].monomial(&v) / v.factorial();
            if weight == 0.0 {
                continue;
            }
            for (mi, c) in &acc {
                *next.entry(mi.plus(&v)).or_insert(0.0) += c * weight;
            }
        }
        acc = next;
    }
    let mut lhs_sum = 0.0f64;
    for (mi, c) in &acc {
        let deriv = propagator_derivative(&mi.plus(w), y, mass)
            .expect("y validated nonzero above, the derivative is regular");
        lhs_sum += c * deriv;
    }
    let lhs = lhs_sum.abs();

    // Closed-form right side, assembled in log space.
    let w_order = f64::from(w.order());
    let degree_sum: u32 = stage_degrees.iter().sum();
    let mut ln_rhs = ln_gamma(w_order + delta + 1.0)
        - (4.0 + 2.0 * w_order + 2.0 * delta) * eps.ln()
        - (2.0 + w_order + f64::from(degree_sum) + delta) * y.norm().ln();
    for (i, &d) in stage_degrees.iter().enumerate() {
        if d == 0 {
            continue;
        }
        let factor = if i + 1 == stages {
            (1.0 + eps) * offsets[i].norm()
        } else {
            offsets[i].norm() / (eps * eps)
        };
        ln_rhs += f64::from(d) * factor.ln();
    }
    if delta > 0.0 {
        ln_rhs -= delta * mass.value().ln();
    }
    Ok((lhs, ln_rhs.exp()))
}

// ---------------------------------------------------------------------------
// Dimension tail
// ---------------------------------------------------------------------------

fn validate_tail_inputs(ratio: f64, power: u32) -> Result<(), BoundError> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(BoundError::Invalid(format!(
            "the geometric ratio must be positive and finite, got {ratio}"
        )));
    }
    if !(ratio < 1.0) {
        return Err(BoundError::RatioTooLarge { q: ratio });
    }
    if power > 64 {
        return Err(BoundError::Invalid(format!(
            "polynomial power capped at 64, got {power}"
        )));
    }
    Ok(())
}

/// Numeric value of the polynomially weighted geometric tail
/// `sum_{d > truncation} ratio^d * (d+1)^power`, summed term by term until
/// the terms are negligible. Requires `0 < ratio < 1` and a peak term within
/// binary64 range.
pub fn dimension_tail_sum(ratio: f64, truncation: u32, power: u32) -> Result<f64, BoundError> {
    validate_tail_inputs(ratio, power)?;
    let p = f64::from(power);
    let ln_q = ratio.ln();
    // The terms peak near d* = power / ln(1/ratio); reject summations whose
    // peak overflows.
    let d_star = p / -ln_q;
    let ln_peak = p * (d_star + 2.0).ln() + d_star * ln_q;
    if ln_peak > 700.0 {
        return Err(BoundError::Invalid(format!(
            "the series peak (~exp({ln_peak:.0})) exceeds binary64 range"
        )));
    }
    let mut sum = 0.0f64;
    let mut d = f64::from(truncation) + 1.0;
    loop {
        let term = (p * (d + 1.0).ln() + d * ln_q).exp();
        sum += term;
        if d > d_star && (term < sum * 1e-18 || term == 0.0) {
            break;
        }
        d += 1.0;
        if d > 1e8 {
            return Err(BoundError::Invalid(
                "the tail converges too slowly to sum directly".into(),
            ));
        }
    }
    Ok(sum)
}

/// Closed-form envelope dominating [`dimension_tail_sum`]:
/// `ratio^(truncation+1) * ((truncation+2)/(1-ratio))^(power+1) * power!`.
pub fn dimension_tail_envelope(ratio: f64, truncation: u32, power: u32) -> Result<f64, BoundError> {
    validate_tail_inputs(ratio, power)?;
    let p = f64::from(power);
    let d = f64::from(truncation);
    let ln_bound = (d + 1.0) * ratio.ln()
        + (p + 1.0) * ((d + 2.0) / (1.0 - ratio)).ln()
        + ln_gamma(p + 1.0);
    Ok(ln_bound.exp())
}

// ---------------------------------------------------------------------------
// Constant fitting
// ---------------------------------------------------------------------------

/// One measured remainder used to calibrate the envelope constants.
#[derive(Clone, Debug)]
pub struct RemainderSample {
    /// Dimension cap of the factorization.
    pub truncation: u32,
    /// Separation ratio of the configuration, in `(0, 1)`.
    pub xi: f64,
    /// Total operator dimension of all slots plus the target.
    pub dim_sum: u32,
    /// `ln` of the configuration's mass/separation factor
    /// ([`envelope_geometry_ln`]).
    pub geometry_ln: f64,
    /// Measured remainder modulus; nonpositive samples are skipped.
    pub remainder_abs: f64,
}

/// Calibrates `(k, c)` of [`remainder_envelope`] against measured
/// remainders: `c` comes from a log-space least-squares fit of the decay
/// exponent, and `k` is then the smallest constant that dominates every
/// usable sample. Callers wanting a safety margin should scale `k` up.
pub fn fit_envelope_constants(samples: &[RemainderSample]) -> Result<(f64, f64), BoundError> {
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for s in samples {
        if !(s.remainder_abs > 0.0 && s.remainder_abs.is_finite()) {
            continue;
        }
        if !(s.xi > 0.0 && s.xi < 1.0) {
            return Err(BoundError::Invalid(format!(
                "sample separation ratio must lie in (0, 1), got {}",
                s.xi
            )));
        }
        if !s.geometry_ln.is_finite() {
            continue;
        }
        let d = f64::from(s.truncation);
        let y = s.remainder_abs.ln() - 0.5 * (d + 1.0) * s.xi.ln() - s.geometry_ln;
        let a = f64::from(s.dim_sum) * ((d + 2.0) / (s.xi.sqrt() - s.xi)).ln();
        rows.push((a, y));
    }
    let n = rows.len() as f64;
    if rows.len() < 2 {
        return Err(BoundError::Invalid(format!(
            "need at least two usable samples, got {}",
            rows.len()
        )));
    }
    let sa: f64 = rows.iter().map(|r| r.0).sum();
    let sy: f64 = rows.iter().map(|r| r.1).sum();
    let saa: f64 = rows.iter().map(|r| r.0 * r.0).sum();
    let say: f64 = rows.iter().map(|r| r.0 * r.1).sum();
    let det = n * saa - sa * sa;
    let c = if det.abs() <= 1e-12 * (n * saa).abs().max(sa * sa) {
        // All predictors coincide; the exponent is undetermined, any value
        // reproduces the data once k absorbs the level. Pick one.
        1.0
    } else {
        (n * say - sa * sy) / det
    };
    let ln_k = rows
        .iter()
        .map(|&(a, y)| y - c * a)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((ln_k.exp(), c))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchings::merged_contraction;
    use crate::propagator::propagator;
    use crate::trees::{build_tree, VertexSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64, z: f64, w: f64) -> Point4 {
        Point4([x, y, z, w])
    }

    fn mass(m: f64) -> MassParam {
        MassParam::new(m).expect("valid mass")
    }

    // -- remainder envelope --------------------------------------------

    #[test]
    fn remainder_envelope_matches_a_hand_evaluated_value() {
        let points = [p(0.25, 0.0, 0.0, 0.0), p(0.0, 0.0, 0.0, 0.0), p(0.0, 1.0, 0.0, 0.0)];
        let dims = [1u32, 1, 1];
        let (k, c, truncation) = (2.0, 1.25, 6u32);
        let got = remainder_envelope(&dims, 1, &points, 2, truncation, k, c, mass(1.0)).unwrap();

        // Same quantity assembled directly from the definition.
        let xi = 0.25f64; // spread 0.25 around x2, nearest trailing point at 1
        let spread = (0.25f64.powi(2) + 1.0).sqrt().max(1.0); // max(|x1-x3|, |x2-x3|, 1/m)
        let min_gap = 0.25f64;
        let geometry = spread.powi(2) / min_gap.powi(4);
        let d = f64::from(truncation);
        let expected =
            k * xi.powf((d + 1.0) / 2.0) * ((d + 2.0) / (xi.sqrt() - xi)).powf(c * 4.0) * geometry;
        assert!(
            (got - expected).abs() <= 1e-12 * expected,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn remainder_envelope_requires_the_separation_domain() {
        let points = [p(2.0, 0.0, 0.0, 0.0), p(0.0, 0.0, 0.0, 0.0), p(0.0, 1.0, 0.0, 0.0)];
        let err = remainder_envelope(&[1, 1, 1], 1, &points, 2, 4, 1.0, 1.0, mass(1.0))
            .expect_err("spread 2 against gap 1 is outside the domain");
        assert!(matches!(err, BoundError::SeparationTooLarge { .. }));

        // A split of 1 has zero spread around the junction: degenerate.
        let err = remainder_envelope(&[1, 1, 1], 1, &points, 1, 4, 1.0, 1.0, mass(1.0))
            .expect_err("zero spread cannot calibrate the envelope");
        assert!(matches!(err, BoundError::Degenerate(_)));
    }

    #[test]
    fn remainder_envelope_eventually_decreases_in_the_truncation() {
        let points = [p(0.3, 0.0, 0.0, 0.0), p(0.0, 0.0, 0.0, 0.0), p(0.0, 1.0, 0.0, 0.0)];
        let dims = [1u32, 1, 1];
        let at = |d: u32| {
            remainder_envelope(&dims, 1, &points, 2, d, 1.0, 1.0, mass(1.0)).unwrap()
        };
        for d in 6..12 {
            assert!(
                at(d + 1) < at(d),
                "envelope should decrease from D = {d} on at ratio 0.3"
            );
        }
        assert!(at(40) < 1e-6 * at(6), "the tail must become geometric");
    }

    // -- contraction envelope --------------------------------------------

    /// Root (phi^2 at x3) over a merge vertex at x2 (leaves phi at x1, x2)
    /// and a leaf phi^2 at the root point. Total field count is even, so
    /// even dimension caps give nonvanishing contraction sums.
    fn two_level_tree() -> WeightedTree {
        let x1 = p(0.1, 0.0, 0.0, 0.0);
        let x2 = p(0.0, 0.0, 0.0, 0.0);
        let x3 = p(2.0, 1.0, 0.0, 0.0);
        build_tree(&[
            VertexSpec {
                id: 0,
                parent: None,
                point: x3,
                op: Some(CompositeOp::phi_power(2)),
            },
            VertexSpec {
                id: 1,
                parent: Some(0),
                point: x2,
                op: None,
            },
            VertexSpec {
                id: 2,
                parent: Some(1),
                point: x1,
                op: Some(CompositeOp::phi()),
            },
            VertexSpec {
                id: 3,
                parent: Some(1),
                point: x2,
                op: Some(CompositeOp::phi()),
            },
            VertexSpec {
                id: 4,
                parent: Some(0),
                point: x3,
                op: Some(CompositeOp::phi_power(2)),
            },
        ])
        .expect("valid tree")
    }

    use crate::multiindex::CompositeOp;

    #[test]
    fn contraction_envelope_dominates_with_a_rapidly_shrinking_margin() {
        let tree = two_level_tree();
        let u = tree.internal_nonroot()[0];
        let m = mass(1.0);
        // Total leaf+root dimension is 6, so at order zero eps <= 2^-9.
        let eps = (2.0f64).powi(-9);
        let mut ratios = Vec::new();
        for cap in [2u32, 4, 6] {
            let dims: BTreeMap<VertexId, u32> = [(u, cap)].into();
            let value = merged_contraction(&tree, &dims, m).abs();
            assert!(value > 0.0, "even caps must contribute, cap {cap} gave zero");
            let envelope =
                contraction_envelope(&tree, 0, &TreeBoundParams::new(eps, dims), m).unwrap();
            assert!(envelope.is_finite() && envelope > 0.0);
            ratios.push(value / envelope);
        }
        for pair in ratios.windows(2) {
            assert!(
                pair[1] < pair[0],
                "the capped sum must fall ever deeper below the envelope, got {ratios:?}"
            );
        }
        assert!(
            ratios[0] < 1.0,
            "the unit-constant envelope already dominates here, got ratio {}",
            ratios[0]
        );
    }

    #[test]
    fn contraction_envelope_interpolation_factors_scale_as_stated() {
        let tree = two_level_tree();
        let u = tree.internal_nonroot()[0];
        let root = tree.root();
        let m = mass(1.0);
        let eps = (2.0f64).powi(-9);
        let dims: BTreeMap<VertexId, u32> = [(u, 3)].into();
        let base = contraction_envelope(&tree, 0, &TreeBoundParams::new(eps, dims.clone()), m)
            .unwrap();
        let mut params = TreeBoundParams::new(eps, dims);
        params.delta = [(root, 0.5)].into();
        let with_delta = contraction_envelope(&tree, 0, &params, m).unwrap();

        // Root children sit at x2 and x3 (gap sqrt(5), also the spread and
        // the pair gap); the root dimension excess is 1 + 3 - 2 > 0, so the
        // factor is (max(sqrt(5), 1) / (1 * sqrt(5)^2))^0.5.
        let g = 5.0f64.sqrt();
        let expected = base * (g / (g * g)).powf(0.5);
        assert!(
            (with_delta - expected).abs() <= 1e-12 * expected,
            "got {with_delta}, expected {expected}"
        );
    }

    #[test]
    fn contraction_envelope_validates_its_inputs() {
        let tree = two_level_tree();
        let u = tree.internal_nonroot()[0];
        let dims: BTreeMap<VertexId, u32> = [(u, 2)].into();

        let err = contraction_envelope(
            &tree,
            0,
            &TreeBoundParams::new(0.25, dims.clone()),
            mass(1.0),
        )
        .expect_err("regulator far above the admissible range");
        assert!(matches!(err, BoundError::EpsilonRange { .. }));

        let err = contraction_envelope(
            &tree,
            0,
            &TreeBoundParams::new((2.0f64).powi(-9), BTreeMap::new()),
            mass(1.0),
        )
        .expect_err("missing dimension caps");
        assert!(matches!(err, BoundError::Invalid(_)));

        let err = contraction_envelope(
            &tree,
            0,
            &TreeBoundParams::new((2.0f64).powi(-9), dims.clone()),
            MassParam::massless(),
        )
        .expect_err("massless envelope is undefined");
        assert!(matches!(err, BoundError::Invalid(_)));

        let mut params = TreeBoundParams::new((2.0f64).powi(-9), dims);
        params.delta = [(tree.root(), 1.0)].into();
        let err = contraction_envelope(&tree, 0, &params, mass(1.0))
            .expect_err("delta of one is outside the open interval");
        assert!(matches!(err, BoundError::DeltaRange { .. }));
    }

    // -- pairing entries --------------------------------------------

    #[test]
    fn pairing_entry_envelope_reproduces_its_formula() {
        let eps = (2.0f64).powi(-10);
        let chain_v = [ChainLink { degree: 2, xi: 0.4, on_branch: true }];
        let chain_w = [ChainLink { degree: 1, xi: 0.2, on_branch: false }];
        let got = pairing_entry_envelope(
            1,
            0.5,
            &chain_v,
            &PairingPartner::Leaf {
                derivative_order: 0,
                min_sibling_gap: 0.3,
                chain: &chain_w,
            },
            1.25,
            eps,
            0.5,
            mass(1.0),
            6,
        )
        .unwrap();

        let num = libm::tgamma(1.0 + 0.0 + 0.5 + 1.0)
            * (0.4 * (1.0 + eps)).powi(3)
            * (0.2 / (eps * eps)).powi(2);
        let den = (eps * eps * 0.5).powi(2)
            * (eps * eps * 0.3)
            * 1.0f64.powf(0.5)
            * (eps * eps * 1.25).powf(0.5);
        let expected = num / den;
        assert!(
            (got - expected).abs() <= 1e-12 * expected,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn pairing_entry_envelope_root_case_is_regulator_free() {
        let chain = [ChainLink { degree: 2, xi: 0.4, on_branch: true }];
        let got = pairing_entry_envelope(
            1,
            0.5,
            &chain,
            &PairingPartner::Root {
                derivative_order: 2,
                max_root_child_gap: 2.0,
            },
            0.0,
            (2.0f64).powi(-10),
            0.0,
            mass(1.0),
            6,
        )
        .unwrap();
        // 2^3 / 0.5^2 * 0.4^2
        let expected = 8.0 / 0.25 * 0.16;
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn pairing_entry_envelope_vanishes_on_decreasing_chains() {
        let chain = [
            ChainLink { degree: 3, xi: 0.4, on_branch: true },
            ChainLink { degree: 2, xi: 0.4, on_branch: true },
        ];
        let got = pairing_entry_envelope(
            1,
            0.5,
            &chain,
            &PairingPartner::Root {
                derivative_order: 2,
                max_root_child_gap: 2.0,
            },
            0.0,
            (2.0f64).powi(-10),
            0.0,
            mass(1.0),
            6,
        )
        .unwrap();
        assert_eq!(got, 0.0, "degrees drop from 3 to 2 towards the junction");

        // Equal degrees are allowed: the entry does not vanish.
        let flat = [
            ChainLink { degree: 2, xi: 0.4, on_branch: true },
            ChainLink { degree: 2, xi: 0.4, on_branch: true },
        ];
        let got = pairing_entry_envelope(
            2,
            0.5,
            &flat,
            &PairingPartner::Root {
                derivative_order: 2,
                max_root_child_gap: 2.0,
            },
            0.0,
            (2.0f64).powi(-10),
            0.0,
            mass(1.0),
            6,
        )
        .unwrap();
        assert!(got > 0.0);
    }

    #[test]
    fn pairing_entry_envelope_validates_the_delta_augmentation() {
        let err = pairing_entry_envelope(
            1,
            0.5,
            &[],
            &PairingPartner::Leaf {
                derivative_order: 0,
                min_sibling_gap: 0.3,
                chain: &[],
            },
            1.0,
            (2.0f64).powi(-10),
            0.5,
            mass(1.0),
            6,
        )
        .expect_err("empty chains cannot carry the delta factor");
        assert!(matches!(err, BoundError::Invalid(_)));

        let err = pairing_entry_envelope(
            1,
            0.5,
            &[],
            &PairingPartner::Root {
                derivative_order: 0,
                max_root_child_gap: 1.0,
            },
            0.0,
            (2.0f64).powi(-10),
            0.5,
            mass(1.0),
            6,
        )
        .expect_err("the root case has no delta factor");
        assert!(matches!(err, BoundError::Invalid(_)));
    }

    // -- Taylor bound --------------------------------------------

    #[test]
    fn staged_taylor_sums_converge_to_the_shifted_two_point_function() {
        // Taylor's theorem: summing the signed degree-d stages over all d
        // reconstructs the function at the shifted point. The signed stages
        // are assembled here in the test; the evaluator must report their
        // moduli, and the envelope must dominate every one of them.
        let m = mass(1.0);
        let y = p(0.0, 0.7, -0.2, 0.0);
        let x = p(0.05, -0.02, 0.03, 0.01);
        let shifted = propagator(y.add(&x), m).unwrap();
        let mut partial = 0.0f64;
        for d in 0..18u32 {
            let mut signed = 0.0f64;
            for v in MultiIndex::all_of_order(d) {
                signed += x.monomial(&v) / v.factorial()
                    * propagator_derivative(&v, y, m).unwrap();
            }
            let (lhs, rhs) =
                taylor_expansion_bound(&[d], &MultiIndex::ZERO, &[x], y, 0.125, 0.0, m).unwrap();
            assert!(
                (lhs - signed.abs()).abs() <= 1e-12 * signed.abs().max(1e-300),
                "stage {d}: evaluator said {lhs}, direct sum said {signed}"
            );
            assert!(lhs <= rhs * (1.0 + 1e-12), "stage {d} violates the bound");
            partial += signed;
        }
        assert!(
            (partial - shifted).abs() <= 1e-9 * shifted.abs(),
            "partial sums reached {partial}, function value is {shifted}"
        );
    }

    #[test]
    fn taylor_bound_holds_on_random_configurations() {
        let m_values = [0.5, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0xB0514D);
        for trial in 0..2000 {
            let stages = rng.gen_range(1..=3);
            let degrees: Vec<u32> = (0..stages).map(|_| rng.gen_range(0..=4)).collect();
            let w_order = rng.gen_range(0..=2);
            let all_w = MultiIndex::all_of_order(w_order);
            let w = all_w[rng.gen_range(0..all_w.len())];
            let offsets: Vec<Point4> = (0..stages)
                .map(|_| {
                    let scale = rng.gen_range(0.01..0.8f64);
                    let mut v = [0.0; 4];
                    for slot in &mut v {
                        *slot = rng.gen_range(-1.0..1.0);
                    }
                    let norm = Point4(v).norm().max(1e-9);
                    Point4(v).scale(scale / norm)
                })
                .collect();
            let mut yv = [0.0; 4];
            for slot in &mut yv {
                *slot = rng.gen_range(-1.0..1.0);
            }
            let y_norm = rng.gen_range(0.5..3.0f64);
            let y = Point4(yv).scale(y_norm / Point4(yv).norm().max(1e-9));
            let delta = if rng.gen_bool(0.5) { 0.0 } else { 0.5 };
            let m = mass(m_values[rng.gen_range(0..2)]);
            let eps = 1.0 / (8.0 * stages as f64);
            let (lhs, rhs) =
                taylor_expansion_bound(&degrees, &w, &offsets, y, eps, delta, m).unwrap();
            assert!(
                lhs <= rhs * (1.0 + 1e-12),
                "violation in trial {trial}: lhs {lhs} > rhs {rhs} \
                 (degrees {degrees:?}, w {w:?}, delta {delta})"
            );
        }
    }

    #[test]
    fn taylor_bound_validates_inputs() {
        let x = [p(0.1, 0.0, 0.0, 0.0)];
        let y = p(0.0, 1.0, 0.0, 0.0);
        let err = taylor_expansion_bound(&[2], &MultiIndex::ZERO, &x, y, 0.2, 0.0, mass(1.0))
            .expect_err("eps above 1/8");
        assert!(matches!(err, BoundError::EpsilonRange { .. }));
        let err = taylor_expansion_bound(&[2], &MultiIndex::ZERO, &x, y, 0.1, 1.5, mass(1.0))
            .expect_err("delta above one");
        assert!(matches!(err, BoundError::DeltaRange { .. }));
        let err = taylor_expansion_bound(
            &[2],
            &MultiIndex::ZERO,
            &x,
            y,
            0.1,
            0.5,
            MassParam::massless(),
        )
        .expect_err("positive delta needs a mass");
        assert!(matches!(err, BoundError::Invalid(_)));
        let err = taylor_expansion_bound(
            &[2],
            &MultiIndex::ZERO,
            &x,
            p(0.0, 0.0, 0.0, 0.0),
            0.1,
            0.0,
            mass(1.0),
        )
        .expect_err("expansion point at the singularity");
        assert!(matches!(err, BoundError::Invalid(_)));
    }

    // -- dimension tail --------------------------------------------

    #[test]
    fn dimension_tail_closed_form_dominates_the_series() {
        for &q in &[0.3, 0.6, 0.9] {
            for &d in &[2u32, 6, 10] {
                for &pw in &[8u32, 24, 48] {
                    let lhs = dimension_tail_sum(q, d, pw).unwrap();
                    let rhs = dimension_tail_envelope(q, d, pw).unwrap();
                    assert!(lhs.is_finite() && lhs > 0.0);
                    assert!(
                        lhs <= rhs * (1.0 + 1e-12),
                        "q {q}, D {d}, power {pw}: series {lhs} above envelope {rhs}"
                    );
                }
            }
        }
        assert!(matches!(
            dimension_tail_sum(1.0, 2, 8),
            Err(BoundError::RatioTooLarge { .. })
        ));
    }

    #[test]
    fn dimension_tail_sum_matches_a_plain_geometric_series() {
        // power 0 reduces the tail to q^(D+1) / (1 - q).
        let (q, d) = (0.55, 4u32);
        let got = dimension_tail_sum(q, d, 0).unwrap();
        let expected = q.powi(d as i32 + 1) / (1.0 - q);
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    // -- constant fitting --------------------------------------------

    #[test]
    fn fitted_constants_recover_a_synthetic_law_and_dominate_its_samples() {
        let (k_true, c_true) = (0.7, 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0xF17);
        let mut samples = Vec::new();
        for _ in 0..40 {
            let truncation = rng.gen_range(2u32..=10);
            let xi = rng.gen_range(0.15..0.7f64);
            let dim_sum = rng.gen_range(3u32..=8);
            let geometry_ln = rng.gen_range(-1.0..2.0f64);
            let d = f64::from(truncation);
            let exact = k_true
                * xi.powf((d + 1.0) / 2.0)
                * ((d + 2.0) / (xi.sqrt() - xi)).powf(c_true * f64::from(dim_sum))
                * geometry_ln.exp();
            // The measured remainder sits somewhere below the law.
            let remainder_abs = exact * rng.gen_range(0.5..1.0);
            samples.push(RemainderSample {
                truncation,
                xi,
                dim_sum,
                geometry_ln,
                remainder_abs,
            });
        }
        let (k, c) = fit_envelope_constants(&samples).unwrap();
        assert!(
            (c - c_true).abs() < 0.2,
            "fitted exponent {c} too far from {c_true}"
        );
        for s in &samples {
            let d = f64::from(s.truncation);
            let bound = k
                * s.xi.powf((d + 1.0) / 2.0)
                * ((d + 2.0) / (s.xi.sqrt() - s.xi)).powf(c * f64::from(s.dim_sum))
                * s.geometry_ln.exp();
            assert!(
                s.remainder_abs <= bound * (1.0 + 1e-9),
                "fitted constants fail to dominate a fitted sample"
            );
        }
    }

    #[test]
    fn fitting_needs_at_least_two_usable_samples() {
        let sample = RemainderSample {
            truncation: 4,
            xi: 0.3,
            dim_sum: 4,
            geometry_ln: 0.0,
            remainder_abs: 1e-3,
        };
        assert!(matches!(
            fit_envelope_constants(&[sample]),
            Err(BoundError::Invalid(_))
        ));
    }
}
