//! Expansion-coefficient requests and evaluation.
//!
//! A request names a list of input operators at pairwise distinct points, a
//! target operator, a reference point (one of the input points; the last by
//! default), a perturbation order, and a mass. Order zero is evaluated
//! exactly as a matching sum; order one dispatches to the Monte Carlo
//! evaluator in [`crate::recursion`]. The reference point is made last by a
//! cyclic rotation before evaluation, so requests that differ only by the
//! cyclic placement of the reference produce bitwise identical values.
//!
//! This module also evaluates coefficient contractions organised by a
//! weighted tree (each internal vertex summed over a basis of intermediate
//! operators up to a dimension cap), truncated factorization remainders,
//! and residuals of the defining symmetry properties (translation and
//! signed-axis covariance, input reordering, scaling decay, identity-slot
//! insertion).

use crate::matchings::{free_ope, merged_contraction};
use crate::multiindex::{enumerate_ops, CompositeOp};
use crate::propagator::{MassParam, Point4};
use crate::recursion::{self, QuadratureConfig, QuadratureError};
use crate::trees::{build_tree, TreeError, VertexId, VertexSpec, WeightedTree};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

// ---------------------------------------------------------------------------
// Request and result types
// ---------------------------------------------------------------------------

/// A single expansion-coefficient evaluation request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoeffRequest {
    /// Input operators, one per point.
    pub ops: Vec<CompositeOp>,
    /// Target operator the product is expanded onto.
    pub target: CompositeOp,
    /// Pairwise distinct input points, same length as `ops`.
    pub points: Vec<Point4>,
    /// Index of the reference (expansion) point; the last point if `None`.
    #[serde(default)]
    pub reference: Option<usize>,
    /// Perturbation order: 0 (exact) or 1 (Monte Carlo).
    #[serde(default)]
    pub order: u32,
    /// Mass parameter of the two-point function.
    pub mass: MassParam,
    /// Monte Carlo controls for order 1; defaults apply if `None`.
    #[serde(default)]
    pub quadrature: Option<QuadratureConfig>,
}

/// A coefficient value with an error estimate (zero for exact evaluations).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoeffValue {
    pub value: f64,
    pub error_estimate: f64,
}

impl CoeffValue {
    pub fn exact(value: f64) -> CoeffValue {
        CoeffValue {
            value,
            error_estimate: 0.0,
        }
    }
}

/// A truncated factorization-remainder request: how far the coefficient of
/// the full request differs from routing its first `split` slots through
/// intermediate operators of dimension at most `truncation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderRequest {
    pub base: CoeffRequest,
    /// Number of leading slots factored through the intermediate sum
    /// (`1 <= split < len(ops)`). The intermediate operator sits at the last
    /// point of the prefix.
    pub split: usize,
    /// Dimension cap on intermediate operators.
    pub truncation: u32,
}

/// Evaluation failures.
#[derive(Debug, Error)]
pub enum CoeffError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("perturbation order {0} is not supported (orders 0 and 1 only)")]
    UnsupportedOrder(u32),
    #[error("tree construction failed: {0}")]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

impl CoeffRequest {
    pub fn validate(&self) -> Result<(), CoeffError> {
        let n = self.points.len();
        if n == 0 {
            return Err(CoeffError::Invalid("at least one input point".into()));
        }
        if self.ops.len() != n {
            return Err(CoeffError::Invalid(format!(
                "{} operators for {} points",
                self.ops.len(),
                n
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if self.points[i].sub(&self.points[j]).norm_sq() == 0.0 {
                    return Err(CoeffError::Invalid(format!(
                        "points {i} and {j} coincide"
                    )));
                }
            }
            if !self.points[i].0.iter().all(|c| c.is_finite()) {
                return Err(CoeffError::Invalid(format!("point {i} is not finite")));
            }
        }
        if let Some(r) = self.reference {
            if r >= n {
                return Err(CoeffError::Invalid(format!(
                    "reference index {r} out of range for {n} points"
                )));
            }
        }
        Ok(())
    }

    /// The resolved reference index (last point by default).
    pub fn reference_index(&self) -> usize {
        self.reference.unwrap_or(self.points.len() - 1)
    }

    /// Inputs rotated cyclically so the reference point comes last, the
    /// canonical layout every evaluator works in.
    pub(crate) fn rotated_ops_points(&self) -> (Vec<CompositeOp>, Vec<Point4>) {
        let n = self.points.len();
        let k = self.reference_index();
        let mut ops = Vec::with_capacity(n);
        let mut points = Vec::with_capacity(n);
        for j in 0..n {
            let idx = (k + 1 + j) % n;
            ops.push(self.ops[idx].clone());
            points.push(self.points[idx]);
        }
        (ops, points)
    }
}

impl RemainderRequest {
    pub fn validate(&self) -> Result<(), CoeffError> {
        self.base.validate()?;
        let n = self.base.points.len();
        if !(1..n).contains(&self.split) {
            return Err(CoeffError::Invalid(format!(
                "split {} out of range for {} slots",
                self.split, n
            )));
        }
        if self.base.reference_index() != n - 1 {
            return Err(CoeffError::Invalid(
                "the remainder splitting expands around the last point; \
                 rotate the request so the reference is last"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Scale-separation ratio of the splitting: the prefix spread around its
    /// last point over the distance from that point to the nearest suffix
    /// point. Decay of the remainder in the truncation requires this to be
    /// below one.
    pub fn separation_ratio(&self) -> f64 {
        let pts = &self.base.points;
        let mid = pts[self.split - 1];
        let spread = pts[..self.split - 1]
            .iter()
            .map(|x| x.sub(&mid).norm())
            .fold(0.0_f64, f64::max);
        let gap = pts[self.split..]
            .iter()
            .map(|x| x.sub(&mid).norm())
            .fold(f64::INFINITY, f64::min);
        spread / gap
    }
}

// ---------------------------------------------------------------------------
// Core evaluation
// ---------------------------------------------------------------------------

/// Builds the one-level tree with the target at the last point and one leaf
/// per input operator.
pub(crate) fn star_tree(
    ops: &[CompositeOp],
    points: &[Point4],
    target: &CompositeOp,
) -> Result<WeightedTree, TreeError> {
    let root_point = *points.last().expect("nonempty points");
    let mut specs = Vec::with_capacity(ops.len() + 1);
    specs.push(VertexSpec {
        id: 0,
        parent: None,
        point: root_point,
        op: Some(target.clone()),
    });
    for (k, (op, pt)) in ops.iter().zip(points).enumerate() {
        specs.push(VertexSpec {
            id: k as u64 + 1,
            parent: Some(0),
            point: *pt,
            op: Some(op.clone()),
        });
    }
    build_tree(&specs)
}

/// Free coefficient of `ops` at `points` onto `target`, expanded around the
/// last point.
pub(crate) fn free_star_value(
    ops: &[CompositeOp],
    points: &[Point4],
    target: &CompositeOp,
    mass: MassParam,
) -> Result<f64, TreeError> {
    Ok(free_ope(&star_tree(ops, points, target)?, mass))
}

/// Evaluates a coefficient request: exactly at order zero, by Monte Carlo
/// at order one.
pub fn ope_coefficient(req: &CoeffRequest) -> Result<CoeffValue, CoeffError> {
    req.validate()?;
    match req.order {
        0 => {
            let (ops, points) = req.rotated_ops_points();
            Ok(CoeffValue::exact(free_star_value(
                &ops, &points, &req.target, req.mass,
            )?))
        }
        1 => {
            let q = req.quadrature.clone().unwrap_or_default();
            recursion::first_order_coeff(req, &q)
        }
        r => Err(CoeffError::UnsupportedOrder(r)),
    }
}

/// Deterministically derives a decorrelated seed for the `salt`-th internal
/// Monte Carlo evaluation of a composite quantity. `salt = 0` keeps the base
/// seed unchanged.
pub(crate) fn derive_seed(base: u64, salt: u64) -> u64 {
    base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

// ---------------------------------------------------------------------------
// Tree-organised contraction
// ---------------------------------------------------------------------------

/// Contraction of coefficients organised by a weighted tree: every internal
/// non-root vertex is summed over the operator basis of the dimension given
/// in `dims`, and each internal vertex contributes the coefficient taking
/// its children's operators into its own, expanded around its position. At
/// order one, exactly one vertex factor carries the interacting correction,
/// summed over all placements.
///
/// Order zero uses the single-sum merged representation, which is
/// mathematically identical to the product-of-coefficients sum. Order one
/// requires every internal vertex to share its position with one of its
/// children (true for the merge trees produced by grafting).
pub fn contraction_p(
    tree: &WeightedTree,
    order: u32,
    dims: &BTreeMap<VertexId, u32>,
    mass: MassParam,
    quadrature: Option<&QuadratureConfig>,
) -> Result<CoeffValue, CoeffError> {
    let expected: BTreeSet<VertexId> = tree.internal_nonroot().iter().copied().collect();
    let got: BTreeSet<VertexId> = dims.keys().copied().collect();
    if expected != got {
        return Err(CoeffError::Invalid(
            "dimension caps must be given for exactly the internal non-root vertices".into(),
        ));
    }
    match order {
        0 => Ok(CoeffValue::exact(merged_contraction(tree, dims, mass))),
        1 => contraction_first_order(tree, dims, mass, quadrature),
        r => Err(CoeffError::UnsupportedOrder(r)),
    }
}

fn contraction_first_order(
    tree: &WeightedTree,
    dims: &BTreeMap<VertexId, u32>,
    mass: MassParam,
    quadrature: Option<&QuadratureConfig>,
) -> Result<CoeffValue, CoeffError> {
    let merge_vertices: Vec<VertexId> = tree.internal_nonroot().to_vec();
    let internal: Vec<VertexId> = tree.internal();
    let choices: Vec<Vec<CompositeOp>> = merge_vertices
        .iter()
        .map(|v| enumerate_ops(dims[v]))
        .collect();
    let base_q = quadrature.cloned().unwrap_or_default();

    let mut value = 0.0;
    let mut variance = 0.0;
    let mut idx = vec![0usize; choices.len()];
    let mut assignment_counter: u64 = 0;
    loop {
        let assign: BTreeMap<VertexId, &CompositeOp> = merge_vertices
            .iter()
            .enumerate()
            .map(|(k, &v)| (v, &choices[k][idx[k]]))
            .collect();

        // Factor requests, one per internal vertex, plus their exact values.
        let mut requests = Vec::with_capacity(internal.len());
        let mut exact = Vec::with_capacity(internal.len());
        for &v in &internal {
            let children = tree.children(v);
            let ops: Vec<CompositeOp> = children
                .iter()
                .map(|&c| {
                    if tree.children(c).is_empty() {
                        tree.op_required(c).clone()
                    } else {
                        assign[&c].clone()
                    }
                })
                .collect();
            let points: Vec<Point4> = children.iter().map(|&c| tree.point(c)).collect();
            let target = if v == tree.root() {
                tree.op_required(v).clone()
            } else {
                assign[&v].clone()
            };
            let xv = tree.point(v);
            let reference = points
                .iter()
                .position(|p| p.sub(&xv).norm_sq() == 0.0)
                .ok_or_else(|| {
                    CoeffError::Invalid(
                        "first-order contraction needs every internal vertex to share \
                         its position with one of its children"
                            .into(),
                    )
                })?;
            let req = CoeffRequest {
                ops,
                target,
                points,
                reference: Some(reference),
                order: 0,
                mass,
                quadrature: None,
            };
            exact.push(ope_coefficient(&req)?.value);
            requests.push(req);
        }

        // Distribute the single interacting order over the vertices.
        for star in 0..internal.len() {
            let salt = assignment_counter * internal.len() as u64 + star as u64;
            let others: f64 = exact
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != star)
                .map(|(_, &x)| x)
                .product();
            if others == 0.0 {
                continue;
            }
            let mut req1 = requests[star].clone();
            req1.order = 1;
            let mut q = base_q.clone();
            q.seed = derive_seed(base_q.seed, salt);
            req1.quadrature = Some(q);
            let c1 = ope_coefficient(&req1)?;
            value += others * c1.value;
            variance += (others * c1.error_estimate).powi(2);
        }
        assignment_counter += 1;

        // Advance the mixed-radix odometer over basis assignments.
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(CoeffValue {
                    value,
                    error_estimate: variance.sqrt(),
                });
            }
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Factorization remainder
// ---------------------------------------------------------------------------

/// The truncated factorization remainder: the full coefficient minus the
/// sum, over intermediate operators `C` of dimension at most the truncation
/// and over order splittings, of (prefix onto `C`) times (`C` plus suffix
/// onto the target). Error estimates of Monte Carlo factors combine in
/// quadrature with the full term's.
pub fn remainder(req: &RemainderRequest) -> Result<CoeffValue, CoeffError> {
    req.validate()?;
    let full = ope_coefficient(&req.base)?;
    let base = &req.base;
    let n = base.points.len();
    let split = req.split;
    let mid_point = base.points[split - 1];
    let r = base.order;
    if r > 1 {
        return Err(CoeffError::UnsupportedOrder(r));
    }

    let mut sum = 0.0;
    let mut variance = full.error_estimate * full.error_estimate;
    let mut salt: u64 = 0;
    for s in 0..=r {
        let t = r - s;
        for d in 0..=req.truncation {
            for c in enumerate_ops(d) {
                salt += 1;
                let prefix = CoeffRequest {
                    ops: base.ops[..split].to_vec(),
                    target: c.clone(),
                    points: base.points[..split].to_vec(),
                    reference: None,
                    order: s,
                    mass: base.mass,
                    quadrature: base.quadrature.clone().map(|mut q| {
                        q.seed = derive_seed(q.seed, 2 * salt);
                        q
                    }),
                };
                let mut suffix_ops = Vec::with_capacity(n - split + 1);
                suffix_ops.push(c.clone());
                suffix_ops.extend(base.ops[split..].iter().cloned());
                let mut suffix_points = Vec::with_capacity(n - split + 1);
                suffix_points.push(mid_point);
                suffix_points.extend(base.points[split..].iter().copied());
                let suffix = CoeffRequest {
                    ops: suffix_ops,
                    target: base.target.clone(),
                    points: suffix_points,
                    reference: None,
                    order: t,
                    mass: base.mass,
                    quadrature: base.quadrature.clone().map(|mut q| {
                        q.seed = derive_seed(q.seed, 2 * salt + 1);
                        q
                    }),
                };
                // Evaluate the exact factor first so a structural zero can
                // skip the expensive Monte Carlo partner.
                let (pv, sv) = if s == 0 && t > 0 {
                    let p = ope_coefficient(&prefix)?;
                    if p.value == 0.0 {
                        continue;
                    }
                    (p, ope_coefficient(&suffix)?)
                } else if t == 0 && s > 0 {
                    let sfx = ope_coefficient(&suffix)?;
                    if sfx.value == 0.0 {
                        continue;
                    }
                    (ope_coefficient(&prefix)?, sfx)
                } else {
                    (ope_coefficient(&prefix)?, ope_coefficient(&suffix)?)
                };
                sum += pv.value * sv.value;
                variance += (pv.value * sv.error_estimate).powi(2)
                    + (sv.value * pv.error_estimate).powi(2);
            }
        }
    }
    Ok(CoeffValue {
        value: full.value - sum,
        error_estimate: variance.sqrt(),
    })
}

// ---------------------------------------------------------------------------
// Symmetry residuals
// ---------------------------------------------------------------------------

/// A symmetry property of the coefficients to test numerically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AxiomCheck {
    /// Values are real and finite.
    Reality,
    /// Invariance under a common translation of all points.
    Translation(Point4),
    /// Covariance under a signed axis permutation: the coefficient of the
    /// transformed data equals the original times the product of the
    /// operators' transformation signs.
    AxisMap { perm: [usize; 4], signs: [i8; 4] },
    /// Symmetry under swapping input slots `i` and `i + 1`, neither being
    /// the last slot.
    SwapAdjacent(usize),
    /// Scaling decay: `eps^(Σ dims_in - dim_target + delta) · C(eps · x)`
    /// shrinks as `eps` decreases. The residual reported is the magnitude at
    /// the smallest factor; [`scaling_samples`] exposes the whole sequence.
    Scaling { delta: f64, factors: Vec<f64> },
    /// Inserting the identity operator in a non-last slot leaves the value
    /// unchanged; slot `i` of the request must hold the identity.
    IdentityInsertion(usize),
}

/// Outcome of a symmetry check: the residual, the Monte Carlo error of the
/// comparison (zero for exact evaluations), and the magnitude scale for
/// relative assessment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomResidual {
    pub residual: f64,
    pub error_estimate: f64,
    pub scale: f64,
}

/// The scaling-decay samples `eps^(Σ dims_in - dim_target + delta) ·
/// C(eps·x)` for each factor in `factors`.
pub fn scaling_samples(
    req: &CoeffRequest,
    delta: f64,
    factors: &[f64],
) -> Result<Vec<f64>, CoeffError> {
    let dim_in: u32 = req.ops.iter().map(|o| o.dimension()).sum();
    let exponent = dim_in as f64 - req.target.dimension() as f64 + delta;
    let mut out = Vec::with_capacity(factors.len());
    for &eps in factors {
        if !(eps > 0.0) {
            return Err(CoeffError::Invalid("scaling factors must be positive".into()));
        }
        let mut scaled = req.clone();
        scaled.points = req.points.iter().map(|x| x.scale(eps)).collect();
        let v = ope_coefficient(&scaled)?;
        out.push(eps.powf(exponent) * v.value);
    }
    Ok(out)
}

/// Evaluates the residual of one symmetry property on a request.
pub fn axiom_residuals(req: &CoeffRequest, check: &AxiomCheck) -> Result<AxiomResidual, CoeffError> {
    req.validate()?;
    let n = req.points.len();
    match check {
        AxiomCheck::Reality => {
            let v = ope_coefficient(req)?;
            Ok(AxiomResidual {
                residual: if v.value.is_finite() { 0.0 } else { f64::INFINITY },
                error_estimate: v.error_estimate,
                scale: v.value.abs(),
            })
        }
        AxiomCheck::Translation(a) => {
            let base = ope_coefficient(req)?;
            let mut shifted = req.clone();
            shifted.points = req.points.iter().map(|x| x.add(a)).collect();
            let moved = ope_coefficient(&shifted)?;
            Ok(AxiomResidual {
                residual: (base.value - moved.value).abs(),
                error_estimate: (base.error_estimate.powi(2) + moved.error_estimate.powi(2))
                    .sqrt(),
                scale: base.value.abs().max(moved.value.abs()),
            })
        }
        AxiomCheck::AxisMap { perm, signs } => {
            let mut seen = [false; 4];
            for &p in perm {
                if p >= 4 || seen[p] {
                    return Err(CoeffError::Invalid("perm must permute the four axes".into()));
                }
                seen[p] = true;
            }
            if signs.iter().any(|s| s.abs() != 1) {
                return Err(CoeffError::Invalid("signs must be +1 or -1".into()));
            }
            let base = ope_coefficient(req)?;
            let mut sign = 1.0;
            let mut mapped = req.clone();
            mapped.ops = req
                .ops
                .iter()
                .map(|o| {
                    let (t, s) = o.axis_transformed(perm, signs);
                    sign *= s;
                    t
                })
                .collect();
            let (target_t, target_s) = req.target.axis_transformed(perm, signs);
            mapped.target = target_t;
            sign *= target_s;
            // Same pull convention as the multi-index transform: component
            // `mu` of the new point is component `perm[mu]` of the old one,
            // flipped by that source axis's sign.
            mapped.points = req
                .points
                .iter()
                .map(|x| {
                    let mut y = [0.0; 4];
                    for mu in 0..4 {
                        y[mu] = signs[perm[mu]] as f64 * x.0[perm[mu]];
                    }
                    Point4(y)
                })
                .collect();
            let moved = ope_coefficient(&mapped)?;
            Ok(AxiomResidual {
                residual: (moved.value - sign * base.value).abs(),
                error_estimate: (base.error_estimate.powi(2) + moved.error_estimate.powi(2))
                    .sqrt(),
                scale: base.value.abs().max(moved.value.abs()),
            })
        }
        AxiomCheck::SwapAdjacent(i) => {
            let i = *i;
            if i + 1 >= n.saturating_sub(1) {
                return Err(CoeffError::Invalid(format!(
                    "swap position {i} must leave the last slot fixed"
                )));
            }
            let base = ope_coefficient(req)?;
            let mut swapped = req.clone();
            swapped.ops.swap(i, i + 1);
            swapped.points.swap(i, i + 1);
            let moved = ope_coefficient(&swapped)?;
            Ok(AxiomResidual {
                residual: (base.value - moved.value).abs(),
                error_estimate: (base.error_estimate.powi(2) + moved.error_estimate.powi(2))
                    .sqrt(),
                scale: base.value.abs().max(moved.value.abs()),
            })
        }
        AxiomCheck::Scaling { delta, factors } => {
            if factors.is_empty() {
                return Err(CoeffError::Invalid("scaling needs at least one factor".into()));
            }
            let samples = scaling_samples(req, *delta, factors)?;
            Ok(AxiomResidual {
                residual: samples.last().expect("nonempty").abs(),
                error_estimate: 0.0,
                scale: samples.first().expect("nonempty").abs(),
            })
        }
        AxiomCheck::IdentityInsertion(i) => {
            let i = *i;
            if n < 2 {
                return Err(CoeffError::Invalid(
                    "identity insertion needs at least two slots".into(),
                ));
            }
            if i >= n - 1 {
                return Err(CoeffError::Invalid(
                    "the identity slot must not be the last".into(),
                ));
            }
            if !req.ops[i].is_identity() {
                return Err(CoeffError::Invalid(format!(
                    "slot {i} must hold the identity operator"
                )));
            }
            if req.reference_index() == i {
                return Err(CoeffError::Invalid(
                    "the identity slot must not be the reference".into(),
                ));
            }
            let base = ope_coefficient(req)?;
            let mut reduced = req.clone();
            reduced.ops.remove(i);
            reduced.points.remove(i);
            let old_ref = req.reference_index();
            reduced.reference = Some(if old_ref > i { old_ref - 1 } else { old_ref });
            let red = ope_coefficient(&reduced)?;
            Ok(AxiomResidual {
                residual: (base.value - red.value).abs(),
                error_estimate: (base.error_estimate.powi(2) + red.error_estimate.powi(2))
                    .sqrt(),
                scale: base.value.abs().max(red.value.abs()),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
