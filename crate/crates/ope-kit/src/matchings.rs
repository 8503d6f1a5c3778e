//! Matching sums: the pair-weight matrix over field slots, perfect-pairing
//! enumeration, free coefficients as pruned hafnians, and the merged-matching
//! formula that evaluates a whole tree of nested coefficient sums in one
//! pass using Taylor-expansion weights along internal chains.
//!
//! Conventions:
//! - Every field factor of a leaf operator or the root operator occupies one
//!   slot. Pair weights between slots of the same vertex vanish.
//! - Leaf–leaf weight: `(-1)^|b| d^(a+b) Delta(x_a - x_b)` for factor
//!   multi-indices `a`, `b`.
//! - Leaf–root weight: `(x_a - x_R)^(b - a) / (b - a)!` when `b - a` is
//!   componentwise nonnegative, else `0` (with `0^0 = 1`).
//! - Raw pairing sums are divided by the product of factorials of the root
//!   operator's factor multiplicities, which converts them into coefficients
//!   with respect to the canonical (sorted-monomial) operator basis.

use crate::multiindex::MultiIndex;
use crate::par;
use crate::propagator::{propagator_derivative, MassParam, Point4};
use crate::trees::{VertexId, WeightedTree};
use std::collections::{BTreeMap, HashMap};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// One field factor of one vertex operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Slot {
    pub vertex: VertexId,
    pub factor: usize,
}

/// A set of unordered slot pairs covering every slot exactly once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerfectMatching {
    pub pairs: Vec<(Slot, Slot)>,
}

/// Taylor degrees on merged pairs: `(internal vertex, pair index) -> degree`.
/// For each internal non-root vertex `u` the degrees of the pairs crossing it
/// satisfy `sum (d + 1) = D_u`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeAssignment {
    pub degrees: BTreeMap<(VertexId, usize), u32>,
}

// ---------------------------------------------------------------------------
// Slot collection and pair weights
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct SlotInfo {
    vertex: VertexId,
    point: Point4,
    alpha: MultiIndex,
    is_root: bool,
}

/// All slots of a tree: leaf slots in ascending vertex order (factors in
/// canonical operator order), then the root's slots.
fn collect_slots(tree: &WeightedTree) -> Vec<SlotInfo> {
    let mut slots = Vec::new();
    for &leaf in tree.leaves() {
        for &alpha in tree.op_required(leaf).factors() {
            slots.push(SlotInfo {
                vertex: leaf,
                point: tree.point(leaf),
                alpha,
                is_root: false,
            });
        }
    }
    let root = tree.root();
    for &alpha in tree.op_required(root).factors() {
        slots.push(SlotInfo {
            vertex: root,
            point: tree.point(root),
            alpha,
            is_root: true,
        });
    }
    slots
}

/// Leaf–root weight: the `a`-derivative of the Taylor monomial
/// `(x - x_R)^b / b!` at the leaf position.
fn leaf_root_weight(leaf_alpha: &MultiIndex, leaf_point: Point4, root_alpha: &MultiIndex, root_point: Point4) -> f64 {
    match root_alpha.checked_sub(leaf_alpha) {
        None => 0.0,
        Some(rem) => leaf_point.sub(&root_point).monomial(&rem) / rem.factorial(),
    }
}

/// Leaf–leaf weight: `(-1)^|b| d^(a+b) Delta(x_a - x_b)`.
fn leaf_leaf_weight(
    a_alpha: &MultiIndex,
    a_point: Point4,
    b_alpha: &MultiIndex,
    b_point: Point4,
    m: MassParam,
) -> f64 {
    let sign = if b_alpha.order() % 2 == 0 { 1.0 } else { -1.0 };
    let total = a_alpha.plus(b_alpha);
    sign * propagator_derivative(&total, a_point.sub(&b_point), m)
        .expect("leaf points are pairwise distinct in a valid tree")
}

/// The full pair-weight value between two slots (0 on the same vertex).
fn pair_weight(a: &SlotInfo, b: &SlotInfo, m: MassParam) -> f64 {
    if a.vertex == b.vertex {
        return 0.0;
    }
    match (a.is_root, b.is_root) {
        (false, false) => leaf_leaf_weight(&a.alpha, a.point, &b.alpha, b.point, m),
        (false, true) => leaf_root_weight(&a.alpha, a.point, &b.alpha, b.point),
        (true, false) => leaf_root_weight(&b.alpha, b.point, &a.alpha, a.point),
        (true, true) => unreachable!("two root slots share a vertex"),
    }
}

// ---------------------------------------------------------------------------
// Pairing enumeration
// ---------------------------------------------------------------------------

/// Number of perfect pairings of `n` labeled slots: `(n-1)!!` for even `n`,
/// `0` for odd `n` (and `1` for `n = 0`).
pub fn pairing_count(n: usize) -> u128 {
    if n % 2 == 1 {
        return 0;
    }
    let mut count: u128 = 1;
    let mut k = n as u128;
    while k > 1 {
        count *= k - 1;
        k -= 2;
    }
    count
}

/// Visits every perfect pairing of `0..n` for which every pair satisfies
/// `allowed`; pairs arrive in canonical order (first members ascending).
fn for_each_pairing(
    n: usize,
    allowed: &impl Fn(usize, usize) -> bool,
    visit: &mut impl FnMut(&[(usize, usize)]),
) {
    assert!(n <= 32, "slot count {n} exceeds the enumeration limit");
    let mut pairs = Vec::with_capacity(n / 2);
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    recurse_pairings(full, allowed, &mut pairs, visit);
}

fn recurse_pairings(
    mask: u32,
    allowed: &impl Fn(usize, usize) -> bool,
    pairs: &mut Vec<(usize, usize)>,
    visit: &mut impl FnMut(&[(usize, usize)]),
) {
    if mask == 0 {
        visit(pairs);
        return;
    }
    let i = mask.trailing_zeros() as usize;
    let rest = mask & !(1u32 << i);
    let mut mj = rest;
    while mj != 0 {
        let j = mj.trailing_zeros() as usize;
        mj &= mj - 1;
        if allowed(i, j) {
            pairs.push((i, j));
            recurse_pairings(rest & !(1u32 << j), allowed, pairs, visit);
            pairs.pop();
        }
    }
}

/// All perfect matchings of a tree's slots with nonvanishing same-vertex
/// structure (same-vertex pairs are pruned). Exposed for inspection and
/// tests; the numeric entry points below do not materialize this list.
pub fn enumerate_matchings(tree: &WeightedTree) -> Vec<PerfectMatching> {
    let slots = collect_slots(tree);
    let labels: Vec<Slot> = {
        let mut labels = Vec::with_capacity(slots.len());
        let mut counts: BTreeMap<VertexId, usize> = BTreeMap::new();
        for s in &slots {
            let c = counts.entry(s.vertex).or_insert(0);
            labels.push(Slot {
                vertex: s.vertex,
                factor: *c,
            });
            *c += 1;
        }
        labels
    };
    let mut out = Vec::new();
    for_each_pairing(
        slots.len(),
        &|i, j| slots[i].vertex != slots[j].vertex,
        &mut |pairs| {
            out.push(PerfectMatching {
                pairs: pairs.iter().map(|&(i, j)| (labels[i], labels[j])).collect(),
            });
        },
    );
    out
}

// ---------------------------------------------------------------------------
// Free coefficients (single-level trees)
// ---------------------------------------------------------------------------

/// Sum over perfect pairings of the subset `mask`, of the product of pair
/// weights, memoized on the subset. The recursion always expands the lowest
/// free slot and scans partners in ascending order, so the floating-point
/// fold order is reproducible.
fn pairing_sum(matrix: &[f64], n: usize, mask: u32, memo: &mut HashMap<u32, f64>) -> f64 {
    if mask == 0 {
        return 1.0;
    }
    if let Some(&v) = memo.get(&mask) {
        return v;
    }
    let i = mask.trailing_zeros() as usize;
    let rest = mask & !(1u32 << i);
    let mut sum = 0.0;
    let mut mj = rest;
    while mj != 0 {
        let j = mj.trailing_zeros() as usize;
        mj &= mj - 1;
        let w = matrix[i * n + j];
        if w != 0.0 {
            sum += w * pairing_sum(matrix, n, rest & !(1u32 << j), memo);
        }
    }
    memo.insert(mask, sum);
    sum
}

/// The free coefficient of a single-level tree (every leaf a child of the
/// root): the pairing sum of the slot-weight matrix, normalized by the root
/// operator's factor multiplicities. Odd slot counts give 0.
///
/// Panics if the tree has internal vertices besides the root; those trees
/// are the domain of [`merged_contraction`].
pub fn free_ope(tree: &WeightedTree, m: MassParam) -> f64 {
    assert!(
        tree.internal_nonroot().is_empty(),
        "free coefficients require a single-level tree"
    );
    let slots = collect_slots(tree);
    let n = slots.len();
    if n % 2 == 1 {
        return 0.0;
    }
    if n == 0 {
        // Identity onto identity: the empty pairing.
        return 1.0;
    }
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                matrix[i * n + j] = pair_weight(&slots[i], &slots[j], m);
            }
        }
    }
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let rest = full & !1u32;
    // Partition by the first slot's partner; each branch sums its own
    // completions with a local memo. The fold over branches runs in index
    // order, so parallel and sequential builds agree bit for bit.
    let total = par::indexed_sum(n - 1, |t| {
        let j = t + 1;
        let w = matrix[j];
        if w == 0.0 {
            return 0.0;
        }
        let mut memo = HashMap::new();
        w * pairing_sum(&matrix, n, rest & !(1u32 << j), &mut memo)
    });
    total / tree.op_required(tree.root()).multiplicity_normalization()
}

// ---------------------------------------------------------------------------
// Merged contractions (multi-level trees)
// ---------------------------------------------------------------------------

/// Expansion state of one side of a merged pair: Taylor weights accumulated
/// along the chain of internal vertices, ending at the chain's top point.
struct SideExpansion {
    top: Point4,
    /// `(accumulated multi-index, weight)`, sorted by multi-index.
    terms: Vec<(MultiIndex, f64)>,
}

/// Walks a slot's multi-index up a chain of internal vertices, applying at
/// each step the homogeneous Taylor component that raises the running degree
/// to that vertex's assigned degree. A required negative order annihilates
/// the side (no terms).
fn expand_side(start_point: Point4, start_alpha: MultiIndex, chain: &[(Point4, u32)]) -> SideExpansion {
    let mut terms: Vec<(MultiIndex, f64)> = vec![(start_alpha, 1.0)];
    let mut cur_point = start_point;
    let mut cur_degree = start_alpha.order();
    for &(point, degree) in chain {
        if degree < cur_degree {
            return SideExpansion {
                top: point,
                terms: Vec::new(),
            };
        }
        let step = degree - cur_degree;
        let displacement = cur_point.sub(&point);
        let mut next: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for &(alpha, weight) in &terms {
            for beta in MultiIndex::all_of_order(step) {
                let mono = displacement.monomial(&beta) / beta.factorial();
                if mono != 0.0 {
                    *next.entry(alpha.plus(&beta)).or_insert(0.0) += weight * mono;
                }
            }
        }
        terms = next.into_iter().collect();
        cur_point = point;
        cur_degree = degree;
    }
    SideExpansion {
        top: cur_point,
        terms,
    }
}

/// The merged pair weight: both slots expanded along their chains, combined
/// through the ordinary pair weight at the chain tops.
fn merged_pair_weight(
    a: &SlotInfo,
    chain_a: &[(Point4, u32)],
    b: &SlotInfo,
    chain_b: &[(Point4, u32)],
    m: MassParam,
) -> f64 {
    let side_a = expand_side(a.point, a.alpha, chain_a);
    if b.is_root {
        debug_assert!(chain_b.is_empty(), "the root has no internal ancestors");
        let mut sum = 0.0;
        for &(alpha, weight) in &side_a.terms {
            sum += weight * leaf_root_weight(&alpha, side_a.top, &b.alpha, b.point);
        }
        sum
    } else {
        let side_b = expand_side(b.point, b.alpha, chain_b);
        let mut sum = 0.0;
        for &(alpha_a, w_a) in &side_a.terms {
            for &(alpha_b, w_b) in &side_b.terms {
                sum += w_a
                    * w_b
                    * leaf_leaf_weight(&alpha_a, side_a.top, &alpha_b, side_b.top, m);
            }
        }
        sum
    }
}

/// Evaluates the product over internal non-root vertices `u` of the sums
/// over all operators of dimension `dims[u]` at `u`, of the corresponding
/// products of free coefficients — in one pass over merged matchings of the
/// leaf and root slots, with Taylor weights distributed along internal
/// chains. A tree without internal non-root vertices reduces exactly to
/// [`free_ope`].
pub fn merged_contraction(
    tree: &WeightedTree,
    dims: &BTreeMap<VertexId, u32>,
    m: MassParam,
) -> f64 {
    let internal = tree.internal_nonroot();
    assert_eq!(
        dims.len(),
        internal.len(),
        "dimension map must cover exactly the internal non-root vertices"
    );
    for &u in internal {
        assert!(dims.contains_key(&u), "missing dimension for vertex {u}");
    }

    let slots = collect_slots(tree);
    let n = slots.len();
    if n % 2 == 1 {
        return 0.0;
    }
    if n == 0 {
        return if internal.iter().all(|u| dims[u] == 0) { 1.0 } else { 0.0 };
    }

    // Bottom-up internal ancestor chain per leaf vertex.
    let mut leaf_chain: HashMap<VertexId, Vec<VertexId>> = HashMap::new();
    for &leaf in tree.leaves() {
        let mut chain = tree.ancestors(leaf);
        chain.pop(); // the root is not a merge vertex
        leaf_chain.insert(leaf, chain);
    }

    let evaluator = MergedEvaluator {
        tree,
        dims,
        m,
        slots: &slots,
        leaf_chain: &leaf_chain,
    };

    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let rest = full & !1u32;
    let total = par::indexed_sum(n - 1, |t| {
        let j = t + 1;
        if slots[0].vertex == slots[j].vertex {
            return 0.0;
        }
        let mut branch_sum = 0.0;
        let mut pairs = vec![(0usize, j)];
        recurse_pairings(
            rest & !(1u32 << j),
            &|i, k| slots[i].vertex != slots[k].vertex,
            &mut pairs,
            &mut |complete| branch_sum += evaluator.matching_value(complete),
        );
        branch_sum
    });
    total / tree.op_required(tree.root()).multiplicity_normalization()
}

struct MergedEvaluator<'a> {
    tree: &'a WeightedTree,
    dims: &'a BTreeMap<VertexId, u32>,
    m: MassParam,
    slots: &'a [SlotInfo],
    leaf_chain: &'a HashMap<VertexId, Vec<VertexId>>,
}

impl MergedEvaluator<'_> {
    /// Sum over degree assignments for one matching of the product of merged
    /// pair weights.
    fn matching_value(&self, pairs: &[(usize, usize)]) -> f64 {
        // Split each pair's endpoint chains at the common suffix: the
        // vertices below the pair's meeting point are its merge vertices.
        let mut pair_chains: Vec<(Vec<VertexId>, Vec<VertexId>)> = Vec::with_capacity(pairs.len());
        let mut crossing: BTreeMap<VertexId, Vec<usize>> = BTreeMap::new();
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            let empty: Vec<VertexId> = Vec::new();
            let ca = self
                .leaf_chain
                .get(&self.slots[i].vertex)
                .unwrap_or(&empty);
            let cb = self
                .leaf_chain
                .get(&self.slots[j].vertex)
                .unwrap_or(&empty);
            let mut la = ca.len();
            let mut lb = cb.len();
            while la > 0 && lb > 0 && ca[la - 1] == cb[lb - 1] {
                la -= 1;
                lb -= 1;
            }
            let side_a: Vec<VertexId> = ca[..la].to_vec();
            let side_b: Vec<VertexId> = cb[..lb].to_vec();
            for &u in side_a.iter().chain(side_b.iter()) {
                crossing.entry(u).or_default().push(idx);
            }
            pair_chains.push((side_a, side_b));
        }

        // Feasibility: a vertex with no crossing pairs admits no degrees, so
        // its dimension must be zero; a vertex crossed by k pairs needs
        // dimension at least k (each crossing pair consumes degree + 1).
        for &u in self.tree.internal_nonroot() {
            let k = crossing.get(&u).map_or(0, |v| v.len()) as u32;
            let d = self.dims[&u];
            if (k == 0 && d != 0) || d < k {
                return 0.0;
            }
        }

        // Enumerate degree assignments: per vertex, compositions of
        // (D_u - k_u) into k_u parts; then the cartesian product.
        let vertices: Vec<VertexId> = crossing.keys().copied().collect();
        let per_vertex: Vec<Vec<Vec<u32>>> = vertices
            .iter()
            .map(|u| compositions(self.dims[u] - crossing[u].len() as u32, crossing[u].len()))
            .collect();

        let mut total = 0.0;
        let mut choice = vec![0usize; vertices.len()];
        loop {
            // Assemble (vertex -> degree) per pair for this choice.
            let mut degrees: HashMap<(usize, VertexId), u32> = HashMap::new();
            for (vi, u) in vertices.iter().enumerate() {
                let comp = &per_vertex[vi][choice[vi]];
                for (slot_pos, &pair_idx) in crossing[u].iter().enumerate() {
                    degrees.insert((pair_idx, *u), comp[slot_pos]);
                }
            }
            let mut product = 1.0;
            for (idx, &(i, j)) in pairs.iter().enumerate() {
                let (ref side_a, ref side_b) = pair_chains[idx];
                let chain_a: Vec<(Point4, u32)> = side_a
                    .iter()
                    .map(|&u| (self.tree.point(u), degrees[&(idx, u)]))
                    .collect();
                let chain_b: Vec<(Point4, u32)> = side_b
                    .iter()
                    .map(|&u| (self.tree.point(u), degrees[&(idx, u)]))
                    .collect();
                let w = if self.slots[j].is_root || !self.slots[i].is_root {
                    merged_pair_weight(&self.slots[i], &chain_a, &self.slots[j], &chain_b, self.m)
                } else {
                    merged_pair_weight(&self.slots[j], &chain_b, &self.slots[i], &chain_a, self.m)
                };
                product *= w;
                if product == 0.0 {
                    break;
                }
            }
            total += product;

            // Advance the odometer.
            let mut pos = 0;
            loop {
                if pos == vertices.len() {
                    return total;
                }
                choice[pos] += 1;
                if choice[pos] < per_vertex[pos].len() {
                    break;
                }
                choice[pos] = 0;
                pos += 1;
            }
        }
    }
}

/// All ordered lists of `parts` nonnegative integers summing to `total`,
/// in lexicographic order. `parts = 0` yields one empty composition when
/// `total = 0`, none otherwise.
fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    if parts == 0 {
        return if total == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    let mut cur = vec![0u32; parts];
    fill_compositions(total, 0, &mut cur, &mut out);
    out
}

fn fill_compositions(remaining: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for v in 0..=remaining {
        cur[pos] = v;
        fill_compositions(remaining - v, pos + 1, cur, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiindex::CompositeOp;
    use crate::propagator::propagator;
    use crate::trees::{build_tree, VertexSpec};

    fn op(text: &str) -> CompositeOp {
        CompositeOp::parse(text).unwrap()
    }

    fn pt(coords: [f64; 4]) -> Point4 {
        Point4(coords)
    }

    /// Single-level tree: leaves with given ops and points, root op at the
    /// point of the child with index `root_at`.
    fn star(leaves: &[(&str, [f64; 4])], root_op: &str, root_at: usize) -> WeightedTree {
        let mut specs = vec![VertexSpec {
            id: 0,
            parent: None,
            point: pt(leaves[root_at].1),
            op: Some(op(root_op)),
        }];
        for (k, (text, coords)) in leaves.iter().enumerate() {
            specs.push(VertexSpec {
                id: (k + 1) as u64,
                parent: Some(0),
                point: pt(*coords),
                op: Some(op(text)),
            });
        }
        build_tree(&specs).unwrap()
    }

    const X1: [f64; 4] = [0.4, -0.3, 0.2, 0.1];
    const X2: [f64; 4] = [-0.5, 0.1, 0.6, -0.2];
    const X3: [f64; 4] = [0.2, 0.7, -0.4, 0.3];

    fn rel_close(a: f64, b: f64, tol: f64) {
        let scale = a.abs().max(b.abs()).max(1e-300);
        assert!(
            (a - b).abs() <= tol * scale,
            "values differ: {a} vs {b} (rel {})",
            (a - b).abs() / scale
        );
    }

    #[test]
    fn pairing_enumeration_matches_double_factorial() {
        let double_factorials: [u128; 7] = [1, 1, 3, 15, 105, 945, 10_395];
        for (k, &expected) in double_factorials.iter().enumerate() {
            let n = 2 * k;
            let mut seen = 0u128;
            for_each_pairing(n, &|_, _| true, &mut |_| seen += 1);
            assert_eq!(seen, expected, "enumeration mismatch at {n} slots");
            assert_eq!(pairing_count(n), expected);
        }
        assert_eq!(pairing_count(5), 0);
    }

    #[test]
    fn two_fields_onto_identity_is_the_propagator() {
        let m = MassParam::new(1.0).unwrap();
        let t = star(&[("phi", X1), ("phi", X2)], "1", 1);
        let expect = propagator(pt(X1).sub(&pt(X2)), m).unwrap();
        rel_close(free_ope(&t, m), expect, 1e-14);
    }

    #[test]
    fn odd_slot_counts_vanish() {
        let m = MassParam::new(1.0).unwrap();
        let t = star(&[("phi", X1)], "1", 0);
        assert_eq!(free_ope(&t, m), 0.0);
        let t = star(&[("phi^2", X1), ("phi", X2)], "1", 1);
        assert_eq!(free_ope(&t, m), 0.0);
    }

    #[test]
    fn quartic_with_two_fields_onto_identity_vanishes() {
        // phi^4(x1) phi(x2) phi(x3) -> 1 : six slots, but every pairing
        // leaves at least two quartic slots to pair among themselves.
        let m = MassParam::new(1.0).unwrap();
        let t = star(&[("phi^4", X1), ("phi", X2), ("phi", X3)], "1", 1);
        assert_eq!(free_ope(&t, m), 0.0);
    }

    #[test]
    fn low_order_wick_values() {
        let m = MassParam::new(0.8).unwrap();
        let d12 = propagator(pt(X1).sub(&pt(X2)), m).unwrap();

        // phi(x1) phi(x2) -> phi^2 at x2: single surviving pairing, weight 1,
        // normalization 2! for the repeated root factor... raw sum is 2
        // (two ways to route the leaves to the two root slots), so 2/2! = 1.
        let t = star(&[("phi", X1), ("phi", X2)], "phi^2", 1);
        rel_close(free_ope(&t, m), 1.0, 1e-14);

        // phi^2 -> phi^2 at the same point: the identity coefficient.
        let t = star(&[("phi^2", X1)], "phi^2", 0);
        rel_close(free_ope(&t, m), 1.0, 1e-14);

        // phi^2(x1) phi^2(x2) -> 1: two cross pairings of two propagators.
        let t = star(&[("phi^2", X1), ("phi^2", X2)], "1", 1);
        rel_close(free_ope(&t, m), 2.0 * d12 * d12, 1e-13);

        // phi^2(x1) phi^2(x2) -> phi^2 at x2: 8 raw pairings of weight d12,
        // divided by 2!.
        let t = star(&[("phi^2", X1), ("phi^2", X2)], "phi^2", 1);
        rel_close(free_ope(&t, m), 4.0 * d12, 1e-13);
    }

    #[test]
    fn derivative_slots_use_derivative_weights() {
        let m = MassParam::new(1.1).unwrap();
        // d_0 phi(x1) phi(x2) -> 1 equals d^(1,0,0,0) Delta(x1 - x2).
        let t = star(&[("d[1,0,0,0]phi", X1), ("phi", X2)], "1", 1);
        let expect =
            propagator_derivative(&MultiIndex([1, 0, 0, 0]), pt(X1).sub(&pt(X2)), m).unwrap();
        rel_close(free_ope(&t, m), expect, 1e-13);

        // phi(x1) phi(x2) -> phi * d_0 phi at x2: the Taylor monomial
        // (x1 - x2)_0 survives.
        let t = star(&[("phi", X1), ("phi", X2)], "phi*d[1,0,0,0]phi", 1);
        rel_close(free_ope(&t, m), X1[0] - X2[0], 1e-14);
    }

    #[test]
    fn taylor_merge_identity() {
        // Summing leaf->basis x basis->leaf products over all basis
        // multi-indices of fixed order d equals the merged pair weight with
        // one chain vertex assigned degree d.
        let m = MassParam::new(1.3).unwrap();
        let xv = pt([0.3, -0.1, 0.2, 0.05]);
        let xu = pt([-0.2, 0.4, -0.1, 0.3]);
        let xw = pt([0.7, 0.1, -0.5, -0.2]);
        let alpha_v = MultiIndex([1, 0, 0, 0]);
        let alpha_w = MultiIndex([0, 1, 0, 0]);
        for d in 0..=4u32 {
            let mut lhs = 0.0;
            for alpha in MultiIndex::all_of_order(d) {
                lhs += leaf_root_weight(&alpha_v, xv, &alpha, xu)
                    * leaf_leaf_weight(&alpha, xu, &alpha_w, xw, m);
            }
            let a = SlotInfo {
                vertex: 1,
                point: xv,
                alpha: alpha_v,
                is_root: false,
            };
            let b = SlotInfo {
                vertex: 2,
                point: xw,
                alpha: alpha_w,
                is_root: false,
            };
            let rhs = merged_pair_weight(&a, &[(xu, d)], &b, &[], m);
            rel_close(lhs, rhs, 1e-10);
        }
    }

    /// Two-level tree: root phi at x3 over an internal vertex at x2 (leaves
    /// phi(x1), phi(x2)) and a leaf phi(x3).
    fn nested_tree() -> WeightedTree {
        let specs = vec![
            VertexSpec {
                id: 0,
                parent: None,
                point: pt(X3),
                op: Some(op("phi")),
            },
            VertexSpec {
                id: 1,
                parent: Some(0),
                point: pt(X2),
                op: None,
            },
            VertexSpec {
                id: 2,
                parent: Some(1),
                point: pt(X1),
                op: Some(op("phi")),
            },
            VertexSpec {
                id: 3,
                parent: Some(1),
                point: pt(X2),
                op: Some(op("phi")),
            },
            VertexSpec {
                id: 4,
                parent: Some(0),
                point: pt(X3),
                op: Some(op("phi")),
            },
        ];
        build_tree(&specs).unwrap()
    }

    #[test]
    fn merged_contraction_worked_example() {
        let m = MassParam::new(1.0).unwrap();
        let t = nested_tree();
        let u = t.find_by_id(1).unwrap();
        let d12 = propagator(pt(X1).sub(&pt(X2)), m).unwrap();
        let d23 = propagator(pt(X2).sub(&pt(X3)), m).unwrap();

        let dims = |d: u32| BTreeMap::from([(u, d)]);
        // Dimension 0 at the merge vertex: only the identity passes through.
        rel_close(merged_contraction(&t, &dims(0), m), d12, 1e-13);
        // Dimension 1: no two-point coefficient onto a single field.
        assert_eq!(merged_contraction(&t, &dims(1), m), 0.0);
        // Dimension 2: phi^2 passes through, lower coefficient 1, upper 2 d23.
        rel_close(merged_contraction(&t, &dims(2), m), 2.0 * d23, 1e-13);
    }

    #[test]
    fn merged_contraction_reduces_to_free_on_single_level_trees() {
        let m = MassParam::new(0.9).unwrap();
        for (leaves, root_op, root_at) in [
            (vec![("phi", X1), ("phi", X2)], "phi^2", 1usize),
            (vec![("phi^2", X1), ("phi^2", X2)], "1", 0),
            (vec![("d[0,1,0,0]phi", X1), ("phi", X2), ("phi^2", X3)], "phi^2", 2),
        ] {
            let t = star(&leaves, root_op, root_at);
            let merged = merged_contraction(&t, &BTreeMap::new(), m);
            let free = free_ope(&t, m);
            assert_eq!(merged, free, "merged and free disagree for {root_op}");
        }
    }

    #[test]
    fn enumerate_matchings_prunes_same_vertex_pairs() {
        let t = star(&[("phi^2", X1), ("phi^2", X2)], "1", 0);
        let ms = enumerate_matchings(&t);
        // Four slots, two per vertex: 3 pairings total, 1 has same-vertex
        // pairs, so 2 survive.
        assert_eq!(ms.len(), 2);
        for pm in &ms {
            for (a, b) in &pm.pairs {
                assert_ne!(a.vertex, b.vertex);
            }
        }
        assert_eq!(pairing_count(4), 3);
    }

    #[test]
    fn parallel_partition_matches_plain_recursion() {
        // The partitioned sum in free_ope must equal a single sequential
        // enumeration of the same pairing sum.
        let m = MassParam::new(1.0).unwrap();
        let t = star(
            &[("phi^2", X1), ("phi", X2), ("phi", X3)],
            "phi^2",
            1,
        );
        let slots = collect_slots(&t);
        let n = slots.len();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    matrix[i * n + j] = pair_weight(&slots[i], &slots[j], m);
                }
            }
        }
        let full = (1u32 << n) - 1;
        let mut memo = HashMap::new();
        let plain = pairing_sum(&matrix, n, full, &mut memo)
            / t.op_required(t.root()).multiplicity_normalization();
        assert_eq!(free_ope(&t, m), plain);
    }
}
