//! Verification suites: every quantitative claim the library makes, exercised
//! at its stated tolerance with deterministic seeds. The command-line `verify`
//! subcommand and the acceptance tests both dispatch through [`run_suite`].
//!
//! Where a suite cross-checks a computed value, the reference comes from an
//! independent code path: matching sums against a naive enumerator over all
//! pairings, the first-order Monte Carlo against a mixture importance sampler
//! with a different stratification, envelopes against held-out configurations
//! never seen by the constant fit.

use crate::bounds::{
    envelope_geometry_ln, fit_envelope_constants, remainder_envelope, separation_ratio_at,
    taylor_expansion_bound, RemainderSample,
};
use crate::coefficients::{
    axiom_residuals, derive_seed, free_star_value, ope_coefficient, remainder, AxiomCheck,
    CoeffRequest, RemainderRequest,
};
use crate::hochschild::{b_squared_residual, cocycle_residual, TruncatedCochain};
use crate::matchings::{free_ope, merged_contraction};
use crate::multiindex::{enumerate_ops, CompositeOp, MultiIndex};
use crate::propagator::{propagator_derivative, MassParam, Point4};
use crate::recursion::{gamma_mixing, massless_first_order, QuadratureConfig};
use crate::trees::{build_tree, VertexSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

// ---------------------------------------------------------------------------
// Reports and dispatch
// ---------------------------------------------------------------------------

/// Outcome of one named check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of a suite run: the seed used and one report per check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One `PASS`/`FAIL` line per check plus a summary line.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag}  {}: {}\n", c.name, c.detail));
        }
        let n_pass = self.checks.iter().filter(|c| c.passed).count();
        out.push_str(&format!(
            "{}/{} checks passed (suite {}, seed {})\n",
            n_pass,
            self.checks.len(),
            self.suite,
            self.seed
        ));
        out
    }
}

/// The verification suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Free matching sums against a brute-force pairing enumerator.
    Wick,
    /// Merged tree contractions against explicit product-sums.
    Merge,
    /// Geometric decay of truncated-factorization remainders.
    RemainderDecay,
    /// Fitted remainder envelopes dominate held-out configurations.
    Envelope,
    /// The staged Taylor expansion bound on random configurations.
    Taylor,
    /// The double boundary vanishes within the truncation tail.
    DoubleBoundary,
    /// First-order Monte Carlo against an independent oracle.
    FirstOrder,
    /// The massless finite-ball scheme and far-zone mixing slopes.
    Massless,
    /// Symmetry and structure residuals of coefficient evaluations.
    Axioms,
    /// The first-order cocycle residual at ordered triples.
    Cocycle,
    /// Everything above, in order.
    All,
}

impl Suite {
    pub const ALL: [Suite; 11] = [
        Suite::Wick,
        Suite::Merge,
        Suite::RemainderDecay,
        Suite::Envelope,
        Suite::Taylor,
        Suite::DoubleBoundary,
        Suite::FirstOrder,
        Suite::Massless,
        Suite::Axioms,
        Suite::Cocycle,
        Suite::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Wick => "wick",
            Suite::Merge => "merge",
            Suite::RemainderDecay => "remainder-decay",
            Suite::Envelope => "envelope",
            Suite::Taylor => "taylor",
            Suite::DoubleBoundary => "double-boundary",
            Suite::FirstOrder => "first-order",
            Suite::Massless => "massless",
            Suite::Axioms => "axioms",
            Suite::Cocycle => "cocycle",
            Suite::All => "all",
        }
    }

    pub fn from_name(s: &str) -> Option<Suite> {
        let lower = s.trim().to_ascii_lowercase();
        Suite::ALL.iter().copied().find(|v| v.name() == lower)
    }
}

fn run_check(
    name: &str,
    body: impl FnOnce() -> Result<(bool, String), String>,
) -> CheckReport {
    match body() {
        Ok((passed, detail)) => CheckReport {
            name: name.to_string(),
            passed,
            detail,
        },
        Err(e) => CheckReport {
            name: name.to_string(),
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Runs one suite (or all of them) with deterministic seeding.
pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let want = |s: Suite| suite == Suite::All || suite == s;
    let mut checks = Vec::new();
    if want(Suite::Wick) {
        checks.push(run_check("free-matching-brute-force", || {
            wick_body(derive_seed(seed, 0x11))
        }));
    }
    if want(Suite::Merge) {
        checks.push(run_check("merge-product-sum", || {
            merge_body(derive_seed(seed, 0x22))
        }));
    }
    if want(Suite::RemainderDecay) {
        checks.push(run_check("remainder-geometric-decay", remainder_decay_body));
    }
    if want(Suite::Envelope) {
        checks.push(run_check("remainder-envelope-domination", || {
            envelope_body(derive_seed(seed, 0x44))
        }));
    }
    if want(Suite::Taylor) {
        checks.push(run_check("taylor-bound-randomized", || {
            taylor_body(derive_seed(seed, 0x55))
        }));
    }
    if want(Suite::DoubleBoundary) {
        checks.push(run_check("double-boundary-truncation", || {
            double_boundary_body(derive_seed(seed, 0x66))
        }));
    }
    if want(Suite::FirstOrder) {
        checks.push(run_check("first-order-oracle", || {
            first_order_oracle_body(derive_seed(seed, 0x77))
        }));
        checks.push(run_check("first-order-pair-null", || {
            first_order_pair_null_body(derive_seed(seed, 0x78))
        }));
        checks.push(run_check("first-order-translation", || {
            first_order_translation_body(derive_seed(seed, 0x79))
        }));
    }
    if want(Suite::Massless) {
        checks.push(run_check("massless-ball-independence", || {
            massless_ball_body(derive_seed(seed, 0x88))
        }));
        checks.push(run_check("mixing-log-slope", mixing_slope_body));
    }
    if want(Suite::Axioms) {
        checks.push(run_check("axioms-exact-order-zero", || {
            axioms_exact_body(derive_seed(seed, 0x99))
        }));
        checks.push(run_check("axioms-first-order", || {
            axioms_first_order_body(derive_seed(seed, 0x9A))
        }));
    }
    if want(Suite::Cocycle) {
        checks.push(run_check("cocycle-residual", || {
            cocycle_body(derive_seed(seed, 0xAA))
        }));
    }
    SuiteReport {
        suite: suite.name().to_string(),
        seed,
        checks,
    }
}

// ---------------------------------------------------------------------------
// Shared random helpers
// ---------------------------------------------------------------------------

fn random_index(rng: &mut ChaCha8Rng, max_order: u32) -> MultiIndex {
    let order = rng.gen_range(0..=max_order);
    let mut v = [0u32; 4];
    for _ in 0..order {
        v[rng.gen_range(0..4)] += 1;
    }
    MultiIndex(v)
}

fn random_operator(rng: &mut ChaCha8Rng, max_factors: usize, max_order: u32) -> CompositeOp {
    let n = rng.gen_range(0..=max_factors);
    CompositeOp::new((0..n).map(|_| random_index(rng, max_order)).collect())
}

fn random_point(rng: &mut ChaCha8Rng, scale: f64) -> Point4 {
    Point4([
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    ])
}

fn scattered_points(rng: &mut ChaCha8Rng, n: usize, scale: f64, min_gap: f64) -> Vec<Point4> {
    loop {
        let pts: Vec<Point4> = (0..n).map(|_| random_point(rng, scale)).collect();
        let mut ok = true;
        for i in 0..n {
            for j in (i + 1)..n {
                if pts[i].dist(&pts[j]) < min_gap {
                    ok = false;
                }
            }
        }
        if ok {
            return pts;
        }
    }
}

fn phi() -> CompositeOp {
    CompositeOp::phi()
}

fn mass_one() -> MassParam {
    MassParam::new(1.0).expect("unit mass is valid")
}

// ---------------------------------------------------------------------------
// 1. Free matching sums against a brute-force enumerator
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct BruteSlot {
    vertex: usize,
    point: Point4,
    alpha: MultiIndex,
    is_root: bool,
}

fn brute_weight(a: &BruteSlot, b: &BruteSlot, m: MassParam) -> f64 {
    if a.vertex == b.vertex {
        return 0.0;
    }
    let taylor = |leaf: &BruteSlot, root: &BruteSlot| -> f64 {
        match root.alpha.checked_sub(&leaf.alpha) {
            Some(diff) => leaf.point.sub(&root.point).monomial(&diff) / diff.factorial(),
            None => 0.0,
        }
    };
    if a.is_root {
        return taylor(b, a);
    }
    if b.is_root {
        return taylor(a, b);
    }
    let joint = a.alpha.plus(&b.alpha);
    let sign = if b.alpha.order() % 2 == 1 { -1.0 } else { 1.0 };
    sign * propagator_derivative(&joint, a.point.sub(&b.point), m)
        .expect("distinct points have a finite propagator")
}

fn brute_match_sum(
    slots: &[BruteSlot],
    used: &mut [bool],
    m: MassParam,
) -> (f64, f64) {
    let Some(i) = used.iter().position(|u| !u) else {
        return (1.0, 1.0);
    };
    used[i] = true;
    let mut total = 0.0;
    let mut abs_total = 0.0;
    for j in (i + 1)..slots.len() {
        if used[j] {
            continue;
        }
        let w = brute_weight(&slots[i], &slots[j], m);
        if w == 0.0 {
            continue;
        }
        used[j] = true;
        let (sub, abs_sub) = brute_match_sum(slots, used, m);
        total += w * sub;
        abs_total += w.abs() * abs_sub;
        used[j] = false;
    }
    used[i] = false;
    (total, abs_total)
}

/// Naive reference evaluation: enumerate every pairing of the field factors
/// directly, with no pruning or factoring, and normalize by the target's
/// factor multiplicities. Returns the value and the sum of absolute pairing
/// contributions (the natural scale for roundoff comparison).
fn brute_force_free(
    ops: &[CompositeOp],
    points: &[Point4],
    target: &CompositeOp,
    m: MassParam,
) -> (f64, f64) {
    let mut slots = Vec::new();
    for (v, (op, x)) in ops.iter().zip(points).enumerate() {
        for alpha in op.factors() {
            slots.push(BruteSlot {
                vertex: v,
                point: *x,
                alpha: *alpha,
                is_root: false,
            });
        }
    }
    let x_ref = *points.last().expect("nonempty points");
    for alpha in target.factors() {
        slots.push(BruteSlot {
            vertex: ops.len(),
            point: x_ref,
            alpha: *alpha,
            is_root: true,
        });
    }
    let mut used = vec![false; slots.len()];
    let (sum, abs_sum) = brute_match_sum(&slots, &mut used, m);
    let norm = target.multiplicity_normalization();
    (sum / norm, abs_sum / norm)
}

fn wick_body(seed: u64) -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masses = [MassParam::massless(), mass_one()];
    let mut worst: f64 = 0.0;
    let mut cases = 0usize;

    // Two stressed cases first: five slots of the basic field, and a
    // ten-slot configuration with composite operators.
    let mut fixed: Vec<(Vec<CompositeOp>, CompositeOp)> = vec![
        (vec![phi(); 5], phi()),
        (
            vec![
                CompositeOp::phi_power(3),
                CompositeOp::phi_power(3),
                CompositeOp::phi_power(2),
            ],
            CompositeOp::phi_power(2),
        ),
    ];

    for trial in 0..60 {
        let (ops, target) = if let Some(case) = fixed.pop() {
            case
        } else {
            loop {
                let n = rng.gen_range(1..=5);
                let ops: Vec<CompositeOp> =
                    (0..n).map(|_| random_operator(&mut rng, 3, 2)).collect();
                let target = random_operator(&mut rng, 3, 2);
                let slots: usize =
                    ops.iter().map(|o| o.n_factors()).sum::<usize>() + target.n_factors();
                if slots <= 10 {
                    break (ops, target);
                }
            }
        };
        let points = scattered_points(&mut rng, ops.len(), 1.2, 0.25);
        let m = masses[trial % 2];
        let direct = free_star_value(&ops, &points, &target, m).map_err(|e| e.to_string())?;
        let (brute, abs_scale) = brute_force_free(&ops, &points, &target, m);
        let denom = direct.abs().max(brute.abs()).max(abs_scale).max(1e-300);
        let rel = (direct - brute).abs() / denom;
        worst = worst.max(rel);
        cases += 1;
    }
    Ok((
        worst <= 1e-12,
        format!("{cases} configurations, worst relative deviation {worst:.2e} (tolerance 1e-12)"),
    ))
}

// ---------------------------------------------------------------------------
// 2. Merged contractions against explicit product-sums
// ---------------------------------------------------------------------------

/// Free coefficient of a star with an explicit expansion point: slot
/// operators at their own points, expanded onto `root_op` at `root_point`.
fn star_value(
    slots: &[(CompositeOp, Point4)],
    root_op: &CompositeOp,
    root_point: Point4,
    m: MassParam,
) -> Result<f64, String> {
    let mut specs = vec![VertexSpec {
        id: 0,
        parent: None,
        point: root_point,
        op: Some(root_op.clone()),
    }];
    for (i, (op, x)) in slots.iter().enumerate() {
        specs.push(VertexSpec {
            id: i as u64 + 1,
            parent: Some(0),
            point: *x,
            op: Some(op.clone()),
        });
    }
    let tree = build_tree(&specs).map_err(|e| e.to_string())?;
    Ok(free_ope(&tree, m))
}

fn merge_body(seed: u64) -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaf_pool = [
        phi(),
        CompositeOp::phi_power(2),
        CompositeOp::new(vec![MultiIndex([1, 0, 0, 0])]),
    ];
    let mut worst: f64 = 0.0;
    let mut nonzero = 0usize;
    let geometries = 32usize;

    for g in 0..geometries {
        let two_level = g % 2 == 1;
        let m = if g % 4 < 2 { mass_one() } else { MassParam::massless() };
        let draw = |rng: &mut ChaCha8Rng| leaf_pool[rng.gen_range(0..leaf_pool.len())].clone();

        // Internal vertices sit on their cluster's reference point (the
        // last slot of the sub-star), matching the expansion convention.
        if !two_level {
            // Root with one merged vertex (two leaves under it) and one
            // direct leaf: expansion at p2, root reference at p3.
            let pts = scattered_points(&mut rng, 3, 1.1, 0.3);
            let (p1, p2, p3) = (pts[0], pts[1], pts[2]);
            let (a1, a2, a3) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let parity = (a1.n_factors() + a2.n_factors() + a3.n_factors()) % 2;
            let target = if parity == 0 {
                CompositeOp::phi_power(2)
            } else {
                phi()
            };
            let dim_u = rng.gen_range(2..=6u32);
            let specs = vec![
                VertexSpec { id: 0, parent: None, point: p3, op: Some(target.clone()) },
                VertexSpec { id: 1, parent: Some(0), point: p2, op: None },
                VertexSpec { id: 2, parent: Some(1), point: p1, op: Some(a1.clone()) },
                VertexSpec { id: 3, parent: Some(1), point: p2, op: Some(a2.clone()) },
                VertexSpec { id: 4, parent: Some(0), point: p3, op: Some(a3.clone()) },
            ];
            let tree = build_tree(&specs).map_err(|e| e.to_string())?;
            let dims = BTreeMap::from([(1usize, dim_u)]);
            let merged = merged_contraction(&tree, &dims, m);
            let mut product = 0.0;
            let mut abs_sum = 0.0;
            for c in enumerate_ops(dim_u) {
                let inner = star_value(
                    &[(a1.clone(), p1), (a2.clone(), p2)],
                    &c,
                    p2,
                    m,
                )?;
                if inner == 0.0 {
                    continue;
                }
                let outer =
                    star_value(&[(c, p2), (a3.clone(), p3)], &target, p3, m)?;
                product += inner * outer;
                abs_sum += (inner * outer).abs();
            }
            let denom = merged.abs().max(product.abs()).max(1e-6 * abs_sum).max(1e-300);
            let rel = (merged - product).abs() / denom;
            worst = worst.max(rel);
            if merged != 0.0 {
                nonzero += 1;
            }
        } else {
            // Two nested merged vertices: inner cluster {a1, a2} expanded at
            // p2, middle cluster {that, a3} expanded at p3, root at p4.
            let pts = scattered_points(&mut rng, 4, 1.1, 0.3);
            let (p1, p2, p3, p4) = (pts[0], pts[1], pts[2], pts[3]);
            let (a1, a2, a3, a4) = (draw(&mut rng), draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let parity =
                (a1.n_factors() + a2.n_factors() + a3.n_factors() + a4.n_factors()) % 2;
            let target = if parity == 0 {
                CompositeOp::phi_power(2)
            } else {
                phi()
            };
            let (du, dv) = (rng.gen_range(2..=4u32), rng.gen_range(2..=4u32));
            let specs = vec![
                VertexSpec { id: 0, parent: None, point: p4, op: Some(target.clone()) },
                VertexSpec { id: 1, parent: Some(0), point: p3, op: None },
                VertexSpec { id: 2, parent: Some(1), point: p2, op: None },
                VertexSpec { id: 3, parent: Some(2), point: p1, op: Some(a1.clone()) },
                VertexSpec { id: 4, parent: Some(2), point: p2, op: Some(a2.clone()) },
                VertexSpec { id: 5, parent: Some(1), point: p3, op: Some(a3.clone()) },
                VertexSpec { id: 6, parent: Some(0), point: p4, op: Some(a4.clone()) },
            ];
            let tree = build_tree(&specs).map_err(|e| e.to_string())?;
            let dims = BTreeMap::from([(1usize, du), (2usize, dv)]);
            let merged = merged_contraction(&tree, &dims, m);
            let mut product = 0.0;
            let mut abs_sum = 0.0;
            for cv in enumerate_ops(dv) {
                let s1 = star_value(
                    &[(a1.clone(), p1), (a2.clone(), p2)],
                    &cv,
                    p2,
                    m,
                )?;
                if s1 == 0.0 {
                    continue;
                }
                for cu in enumerate_ops(du) {
                    let s2 = star_value(
                        &[(cv.clone(), p2), (a3.clone(), p3)],
                        &cu,
                        p3,
                        m,
                    )?;
                    if s2 == 0.0 {
                        continue;
                    }
                    let s3 = star_value(
                        &[(cu, p3), (a4.clone(), p4)],
                        &target,
                        p4,
                        m,
                    )?;
                    product += s1 * s2 * s3;
                    abs_sum += (s1 * s2 * s3).abs();
                }
            }
            let denom = merged.abs().max(product.abs()).max(1e-6 * abs_sum).max(1e-300);
            let rel = (merged - product).abs() / denom;
            worst = worst.max(rel);
            if merged != 0.0 {
                nonzero += 1;
            }
        }
    }
    Ok((
        worst <= 1e-10 && nonzero >= geometries / 2,
        format!(
            "{geometries} geometries ({nonzero} with nonzero values), worst relative deviation \
             {worst:.2e} (tolerance 1e-10)"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 3. Geometric decay of factorization remainders
// ---------------------------------------------------------------------------

fn remainder_decay_body() -> Result<(bool, String), String> {
    let base = CoeffRequest {
        ops: vec![phi(), phi(), phi()],
        target: phi(),
        points: vec![
            Point4([0.5, 0.0, 0.0, 0.0]),
            Point4([0.0; 4]),
            Point4([0.0, 1.0, 0.0, 0.0]),
        ],
        reference: None,
        order: 0,
        mass: mass_one(),
        quadrature: None,
    };
    let mut pairs = Vec::new();
    for d in 4..=10u32 {
        let r = remainder(&RemainderRequest {
            base: base.clone(),
            split: 2,
            truncation: d,
        })
        .map_err(|e| e.to_string())?;
        if r.value.abs() > 0.0 {
            pairs.push((d as f64, r.value.abs().ln()));
        }
    }
    if pairs.len() < 4 {
        return Ok((false, format!("only {} nonzero remainders", pairs.len())));
    }
    // Least-squares slope of ln|R| against the truncation dimension.
    let n = pairs.len() as f64;
    let sx: f64 = pairs.iter().map(|p| p.0).sum();
    let sy: f64 = pairs.iter().map(|p| p.1).sum();
    let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let tol = 0.75f64.ln();
    Ok((
        slope <= tol,
        format!(
            "{} nonzero remainders over truncations 4..=10, fitted log-slope {slope:.4} \
             (required <= {tol:.4})",
            pairs.len()
        ),
    ))
}

// ---------------------------------------------------------------------------
// 4. Envelope domination on held-out configurations
// ---------------------------------------------------------------------------

struct EnvelopeCase {
    sample: RemainderSample,
    slot_dims: Vec<u32>,
    target_dim: u32,
    points: Vec<Point4>,
}

fn envelope_body(seed: u64) -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = mass_one();
    let mut cases = Vec::new();

    for geom in 0..6 {
        // Prefix pair around the origin, remote third point; redraw until
        // the separation ratio is comfortably inside the validity domain.
        let (ops, target): (Vec<CompositeOp>, CompositeOp) = if geom % 2 == 0 {
            (vec![phi(), phi(), phi()], phi())
        } else {
            (
                vec![
                    CompositeOp::phi_power(2),
                    CompositeOp::phi_power(2),
                    CompositeOp::phi_power(2),
                ],
                CompositeOp::phi_power(2),
            )
        };
        let points = loop {
            let mut u = random_point(&mut rng, 1.0);
            u = u.scale(rng.gen_range(0.25..0.5) / u.norm().max(1e-9));
            let mut v = random_point(&mut rng, 1.0);
            v = v.scale(rng.gen_range(1.05..1.5) / v.norm().max(1e-9));
            let pts = vec![u, Point4([0.0; 4]), v];
            match separation_ratio_at(&pts, 2) {
                Ok(xi) if xi <= 0.65 => break pts,
                _ => continue,
            }
        };
        let slot_dims: Vec<u32> = ops.iter().map(|o| o.dimension()).collect();
        let target_dim = target.dimension();
        let dim_sum: u32 = slot_dims.iter().sum::<u32>() + target_dim;
        let base = CoeffRequest {
            ops: ops.clone(),
            target: target.clone(),
            points: points.clone(),
            reference: None,
            order: 0,
            mass: m,
            quadrature: None,
        };
        let xi = separation_ratio_at(&points, 2).map_err(|e| e.to_string())?;
        let geometry_ln =
            envelope_geometry_ln(&slot_dims, target_dim, &points, m).map_err(|e| e.to_string())?;
        for d in [4u32, 6, 8, 10] {
            let r = remainder(&RemainderRequest {
                base: base.clone(),
                split: 2,
                truncation: d,
            })
            .map_err(|e| e.to_string())?;
            if r.value.abs() == 0.0 {
                continue;
            }
            cases.push(EnvelopeCase {
                sample: RemainderSample {
                    truncation: d,
                    xi,
                    dim_sum,
                    geometry_ln,
                    remainder_abs: r.value.abs(),
                },
                slot_dims: slot_dims.clone(),
                target_dim,
                points: points.clone(),
            });
        }
    }

    let fit_set: Vec<RemainderSample> = cases
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 2 == 0)
        .map(|(_, c)| c.sample.clone())
        .collect();
    let held: Vec<&EnvelopeCase> = cases
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 2 == 1)
        .map(|(_, c)| c)
        .collect();
    if held.len() < 10 {
        return Ok((
            false,
            format!("only {} held-out configurations (need >= 10)", held.len()),
        ));
    }
    let (k_fit, c_fit) = fit_envelope_constants(&fit_set).map_err(|e| e.to_string())?;
    let k_safe = 2.0 * k_fit;
    let mut dominated = 0usize;
    let mut min_margin = f64::INFINITY;
    for case in &held {
        let bound = remainder_envelope(
            &case.slot_dims,
            case.target_dim,
            &case.points,
            2,
            case.sample.truncation,
            k_safe,
            c_fit,
            m,
        )
        .map_err(|e| e.to_string())?;
        let margin = bound / case.sample.remainder_abs;
        min_margin = min_margin.min(margin);
        if case.sample.remainder_abs <= bound {
            dominated += 1;
        }
    }
    Ok((
        dominated == held.len(),
        format!(
            "fitted K = {k_fit:.3e}, c = {c_fit:.3}; {dominated}/{} held-out configurations \
             dominated with x2 safety (smallest bound/remainder margin {min_margin:.2})",
            held.len()
        ),
    ))
}

// ---------------------------------------------------------------------------
// 5. Randomized staged Taylor bound
// ---------------------------------------------------------------------------

fn taylor_body(seed: u64) -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m_values = [0.5, 1.0];
    let mut violations = 0usize;
    let mut worst_ratio: f64 = 0.0;
    let trials = 10_000usize;
    for _ in 0..trials {
        let stages = rng.gen_range(1..=3);
        let degrees: Vec<u32> = (0..stages).map(|_| rng.gen_range(0..=4)).collect();
        let w_order = rng.gen_range(0..=2);
        let all_w = MultiIndex::all_of_order(w_order);
        let w = all_w[rng.gen_range(0..all_w.len())];
        let offsets: Vec<Point4> = (0..stages)
            .map(|_| {
                let scale = rng.gen_range(0.01..0.8f64);
                let v = random_point(&mut rng, 1.0);
                v.scale(scale / v.norm().max(1e-9))
            })
            .collect();
        let y_dir = random_point(&mut rng, 1.0);
        let y = y_dir.scale(rng.gen_range(0.5..3.0f64) / y_dir.norm().max(1e-9));
        let delta = if rng.gen_bool(0.5) { 0.0 } else { 0.5 };
        let m = MassParam::new(m_values[rng.gen_range(0..2)]).expect("valid");
        let eps = 1.0 / (8.0 * stages as f64);
        let (lhs, rhs) = taylor_expansion_bound(&degrees, &w, &offsets, y, eps, delta, m)
            .map_err(|e| e.to_string())?;
        if rhs > 0.0 {
            worst_ratio = worst_ratio.max(lhs / rhs);
        }
        if lhs > rhs * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    Ok((
        violations == 0,
        format!("{trials} random configurations, {violations} violations, worst lhs/rhs ratio {worst_ratio:.3}"),
    ))
}

// ---------------------------------------------------------------------------
// 6. Double boundary inside the truncation tail
// ---------------------------------------------------------------------------

fn ordered_triples() -> [[Point4; 3]; 3] {
    [
        [
            Point4([0.45, 0.0, 0.0, 0.0]),
            Point4([0.0; 4]),
            Point4([-0.75, 0.0, 0.0, 0.0]),
        ],
        [
            Point4([0.3, 0.0, 0.0, 0.0]),
            Point4([0.0; 4]),
            Point4([-1.2, 0.2, 0.0, 0.1]),
        ],
        [
            Point4([0.2, 0.1, 0.0, 0.0]),
            Point4([0.0; 4]),
            Point4([-0.9, 0.4, -0.3, 0.0]),
        ],
    ]
}

fn double_boundary_body(seed: u64) -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = mass_one();
    let slot_pool = [phi(), CompositeOp::phi_power(2)];
    let triples = ordered_triples();
    let eval_slots = [phi(), phi(), phi()];
    let eval_target = phi();
    let mut lines = Vec::new();
    let mut all_ok = true;

    // Below this scale a residual is cancellation noise around an exact
    // zero (sectors whose intermediate operators all fit inside the lowest
    // cap are exact already), not a truncation tail.
    let floor = 1e-13;
    for f_idx in 0..10 {
        let pts = triples[f_idx % 3];
        // Redraw until the lowest cap gives a residual above the roundoff
        // floor, so the decay test is informative.
        let mut attempt = 0;
        let (residuals, a, b, slot, tgt) = loop {
            let slot = slot_pool[rng.gen_range(0..slot_pool.len())].clone();
            let tgt = slot_pool[rng.gen_range(0..slot_pool.len())].clone();
            let a = rng.gen_range(0.5..2.0f64);
            let b = rng.gen_range(0.3..1.5f64);
            let mut rs = Vec::new();
            for cap in [2u32, 4, 6] {
                let (sc, tc) = (slot.clone(), tgt.clone());
                let f = TruncatedCochain::rank_one(cap, sc, tc, move |r| a * (-b * r * r).exp());
                let r = b_squared_residual(&f, &pts, &eval_slots, &eval_target, m)
                    .map_err(|e| e.to_string())?
                    .abs();
                rs.push(r);
            }
            if rs[0] > floor || attempt >= 4 {
                break (rs, a, b, slot, tgt);
            }
            attempt += 1;
        };
        let (r2, r4, r6) = (residuals[0], residuals[1], residuals[2]);
        let ok = if r2 <= floor && r4 <= floor && r6 <= floor {
            true // exact sector: all three at cancellation-noise level
        } else if r2 > floor && r4 > floor {
            // Geometric model fitted on the two lower caps, x2 safety.
            let tail_bound = 2.0 * r4 * r4 / r2;
            r4 < r2 && r6 < r4 && r6 <= tail_bound
        } else {
            false
        };
        all_ok &= ok;
        lines.push(format!(
            "f{}[{slot}->{tgt}, {a:.2}*exp(-{b:.2} r^2)]: {r2:.3e} -> {r4:.3e} -> {r6:.3e} {}",
            f_idx,
            if ok { "(ok)" } else { "(FAIL)" }
        ));
    }
    Ok((
        all_ok,
        format!("10 rank-one cochains, caps 2/4/6: {}", lines.join("; ")),
    ))
}

// ---------------------------------------------------------------------------
// 7. First-order Monte Carlo against an independent oracle
// ---------------------------------------------------------------------------

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
}

fn unit_direction(rng: &mut ChaCha8Rng) -> Point4 {
    loop {
        let g = Point4([
            box_muller(rng),
            box_muller(rng),
            box_muller(rng),
            box_muller(rng),
        ]);
        let n = g.norm();
        if n > 1e-9 {
            return g.scale(1.0 / n);
        }
    }
}

/// Independent reference for the quartic-slot identity-target first-order
/// value: minus the integral of the product of four two-point functions, by
/// mixture importance sampling (radially uniform balls at the points for the
/// quadratic singularities, a gamma-radial global component for the far
/// field). Returns (value, standard error).
fn quartic_identity_oracle(
    points: &[Point4],
    mass: MassParam,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let m = mass.value();
    let n_pts = points.len();
    let mut centroid = Point4([0.0; 4]);
    for x in points {
        centroid = centroid.add(x);
    }
    let centroid = centroid.scale(1.0 / n_pts as f64);
    let radii: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut min_d = f64::INFINITY;
            for (j, y) in points.iter().enumerate() {
                if i != j {
                    min_d = min_d.min(x.dist(y));
                }
            }
            0.5 * min_d
        })
        .collect();
    let kappa = 2.0 * m;
    let w_far = 0.4;
    let w_ball = (1.0 - w_far) / n_pts as f64;

    let density = |y: Point4| -> f64 {
        let rc = y.sub(&centroid).norm();
        let mut p = w_far * kappa.powi(4) * (-kappa * rc).exp() / (12.0 * PI * PI);
        for (x, &rho) in points.iter().zip(&radii) {
            let r = y.sub(x).norm();
            if r < rho && r > 0.0 {
                p += w_ball / (2.0 * PI * PI * rho * r * r * r);
            }
        }
        p
    };
    let integrand = |y: Point4| -> f64 {
        let mut f = 1.0;
        for x in points {
            match propagator_derivative(&MultiIndex::ZERO, y.sub(x), mass) {
                Ok(v) => f *= v,
                Err(_) => return 0.0,
            }
        }
        f
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let pick: f64 = rng.gen();
        let y = if pick < w_far {
            // Gamma(4, kappa) radius: sum of four exponentials.
            let mut r = 0.0;
            for _ in 0..4 {
                let u: f64 = 1.0 - rng.gen::<f64>();
                r -= u.ln() / kappa;
            }
            centroid.add(&unit_direction(&mut rng).scale(r))
        } else {
            let i = (((pick - w_far) / w_ball) as usize).min(n_pts - 1);
            let r = rng.gen::<f64>() * radii[i];
            points[i].add(&unit_direction(&mut rng).scale(r))
        };
        let p = density(y);
        let val = if p > 0.0 { integrand(y) / p } else { 0.0 };
        sum += val;
        sum_sq += val * val;
    }
    let mean = sum / samples as f64;
    let var = (sum_sq / samples as f64 - mean * mean).max(0.0) / samples as f64;
    (-mean, var.sqrt())
}

fn quartic_geometries() -> [Vec<Point4>; 2] {
    [
        vec![
            Point4([0.6, 0.0, 0.0, 0.0]),
            Point4([0.0, 0.5, 0.0, 0.0]),
            Point4([-0.4, 0.3, 0.0, 0.0]),
            Point4([0.0; 4]),
        ],
        vec![
            Point4([1.0, 0.0, 0.0, 0.0]),
            Point4([0.0, 0.8, 0.0, 0.0]),
            Point4([0.0, 0.0, 0.7, 0.0]),
            Point4([0.0; 4]),
        ],
    ]
}

fn first_order_oracle_body(seed: u64) -> Result<(bool, String), String> {
    let m = mass_one();
    let mut lines = Vec::new();
    let mut all_ok = true;
    for (gi, points) in quartic_geometries().into_iter().enumerate() {
        for variant in 0..2u64 {
            let run_seed = derive_seed(seed, (gi as u64) << 8 | variant);
            let req = CoeffRequest {
                ops: vec![phi(); 4],
                target: CompositeOp::identity(),
                points: points.clone(),
                reference: None,
                order: 1,
                mass: m,
                quadrature: Some(QuadratureConfig {
                    budget: 30_000,
                    seed: run_seed,
                    batches: 8,
                    r_cut: None,
                }),
            };
            let main = ope_coefficient(&req).map_err(|e| e.to_string())?;
            let (oracle, oracle_sigma) =
                quartic_identity_oracle(&points, m, 400_000, derive_seed(run_seed, 0xFACE));
            let sigma = (main.error_estimate.powi(2) + oracle_sigma.powi(2)).sqrt();
            let diff = (main.value - oracle).abs();
            let ok = diff <= 3.0 * sigma && main.value < 0.0;
            all_ok &= ok;
            lines.push(format!(
                "geometry {gi} seed {variant}: {:.4e} vs oracle {:.4e} (diff {:.1e}, 3-sigma {:.1e}) {}",
                main.value,
                oracle,
                diff,
                3.0 * sigma,
                if ok { "ok" } else { "FAIL" }
            ));
        }
    }
    Ok((all_ok, lines.join("; ")))
}

fn first_order_pair_null_body(seed: u64) -> Result<(bool, String), String> {
    let req = CoeffRequest {
        ops: vec![phi(), phi()],
        target: CompositeOp::identity(),
        points: vec![Point4([0.6, 0.0, 0.0, 0.0]), Point4([0.0; 4])],
        reference: None,
        order: 1,
        mass: mass_one(),
        quadrature: Some(QuadratureConfig {
            budget: 5_000,
            seed,
            batches: 8,
            r_cut: None,
        }),
    };
    let v = ope_coefficient(&req).map_err(|e| e.to_string())?;
    let tol = v.error_estimate.max(1e-15);
    Ok((
        v.value.abs() <= tol,
        format!(
            "two basic fields onto the identity: {:.3e} (tolerance {:.1e})",
            v.value, tol
        ),
    ))
}

fn first_order_translation_body(seed: u64) -> Result<(bool, String), String> {
    let req = CoeffRequest {
        ops: vec![phi(); 4],
        target: CompositeOp::identity(),
        points: quartic_geometries()[0].clone(),
        reference: None,
        order: 1,
        mass: mass_one(),
        quadrature: Some(QuadratureConfig {
            budget: 20_000,
            seed,
            batches: 8,
            r_cut: None,
        }),
    };
    let res = axiom_residuals(
        &req,
        &AxiomCheck::Translation(Point4([0.3, -0.2, 0.1, 0.05])),
    )
    .map_err(|e| e.to_string())?;
    let tol = 3.0 * res.error_estimate + 1e-12 * res.scale;
    Ok((
        res.residual <= tol,
        format!(
            "translation residual {:.3e} (3-sigma tolerance {:.3e})",
            res.residual, tol
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8. Massless scheme and far-zone mixing slope
// ---------------------------------------------------------------------------

fn massless_ball_body(seed: u64) -> Result<(bool, String), String> {
    let points = vec![
        Point4([0.5, 0.0, 0.0, 0.0]),
        Point4([0.0, 0.5, 0.0, 0.0]),
        Point4([0.0, 0.0, 0.5, 0.0]),
        Point4([0.0; 4]),
    ];
    let maxdist = 0.5;
    let req = CoeffRequest {
        ops: vec![phi(); 4],
        target: CompositeOp::identity(),
        points,
        reference: None,
        order: 1,
        mass: MassParam::massless(),
        quadrature: None,
    };
    let q = |s: u64| QuadratureConfig {
        budget: 20_000,
        seed: s,
        batches: 8,
        r_cut: None,
    };
    let l1 = 1.5 * maxdist;
    let l2 = 3.0 * maxdist;
    let v1 = massless_first_order(&req, l1, &q(derive_seed(seed, 1))).map_err(|e| e.to_string())?;
    let v2 = massless_first_order(&req, l2, &q(derive_seed(seed, 2))).map_err(|e| e.to_string())?;
    // The finite-ball value retains a known dependence on the ball radius:
    // beyond |y - x_N| > L the integrand factorizes onto its quartic channel,
    // Delta(y - x_N)^4 plus multipole corrections whose first (dipole) term
    // integrates to zero by parity.  The leading truncated tail is therefore
    //   tail(L) = int_{|z|>L} (4 pi^2 |z|^2)^{-4} d^4 z = 1 / (512 pi^6 L^4),
    // and two ball estimates must agree after each removes its own tail; the
    // residual quadrupole corrections are far below Monte Carlo resolution.
    let tail = |l: f64| 1.0 / (512.0 * PI.powi(6) * l.powi(4));
    let corrected1 = v1.value - tail(l1);
    let corrected2 = v2.value - tail(l2);
    let sigma = (v1.error_estimate.powi(2) + v2.error_estimate.powi(2)).sqrt();
    let raw_diff = (v1.value - v2.value).abs();
    let diff = (corrected1 - corrected2).abs();
    Ok((
        diff <= 3.0 * sigma,
        format!(
            "ball radii {l1} and {l2}: raw values {:.4e} vs {:.4e} (raw diff {:.1e}, \
             analytic tail diff {:.1e}); tail-corrected diff {:.1e} vs 3-sigma {:.1e}",
            v1.value,
            v2.value,
            raw_diff,
            tail(l1) - tail(l2),
            diff,
            3.0 * sigma
        ),
    ))
}

fn mixing_slope_body() -> Result<(bool, String), String> {
    let quartic = CompositeOp::phi_power(4);
    let (l_lo, l_hi) = (0.8, 1.25);
    let mut slopes = Vec::new();
    for &mv in &[1e-2, 1e-3, 1e-4] {
        let m = MassParam::new(mv).map_err(|e| e.to_string())?;
        let g_lo = gamma_mixing(&quartic, &quartic, l_lo, m).map_err(|e| e.to_string())?;
        let g_hi = gamma_mixing(&quartic, &quartic, l_hi, m).map_err(|e| e.to_string())?;
        // Slope with respect to ln(L^2 m^2) at fixed m.
        let slope = (g_hi - g_lo) / (2.0 * (l_hi / l_lo).ln());
        slopes.push((mv, slope));
    }
    let mean = slopes.iter().map(|s| s.1).sum::<f64>() / slopes.len() as f64;
    let theory = -3.0 / (16.0 * PI * PI);
    let stable = slopes
        .iter()
        .all(|s| (s.1 - mean).abs() <= 0.2 * mean.abs());
    let near_theory = (mean - theory).abs() <= 0.2 * theory.abs();
    let rendered: Vec<String> = slopes
        .iter()
        .map(|(mv, s)| format!("m={mv:.0e}: {s:.5}"))
        .collect();
    Ok((
        stable && near_theory,
        format!(
            "log-slopes [{}], mean {mean:.5}, closed-form -3/(16 pi^2) = {theory:.5}",
            rendered.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------------------
// 9. Symmetry residual suite
// ---------------------------------------------------------------------------

fn random_permutation(rng: &mut ChaCha8Rng) -> [usize; 4] {
    let mut p = [0usize, 1, 2, 3];
    for i in (1..4).rev() {
        p.swap(i, rng.gen_range(0..=i));
    }
    p
}

fn axioms_exact_body(seed: u64) -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op_pool = [
        phi(),
        CompositeOp::phi_power(2),
        CompositeOp::new(vec![MultiIndex([0, 1, 0, 0])]),
        CompositeOp::new(vec![MultiIndex([1, 0, 0, 0]), MultiIndex::ZERO]),
    ];
    let target_pool = [
        CompositeOp::identity(),
        phi(),
        CompositeOp::phi_power(2),
        CompositeOp::new(vec![MultiIndex([0, 0, 1, 0])]),
    ];
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;
    let mut track = |res: crate::coefficients::AxiomResidual| {
        let rel = if res.scale > 0.0 {
            res.residual / res.scale
        } else if res.residual == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(rel);
        checks += 1;
    };

    for trial in 0..100 {
        let n = rng.gen_range(2..=4);
        let ops: Vec<CompositeOp> = (0..n)
            .map(|_| op_pool[rng.gen_range(0..op_pool.len())].clone())
            .collect();
        let target = target_pool[rng.gen_range(0..target_pool.len())].clone();
        let points = scattered_points(&mut rng, n, 1.3, 0.3);
        let mass = if trial % 2 == 0 {
            mass_one()
        } else {
            MassParam::massless()
        };
        let req = CoeffRequest {
            ops: ops.clone(),
            target,
            points: points.clone(),
            reference: None,
            order: 0,
            mass,
            quadrature: None,
        };
        // Translation invariance.
        let shift = random_point(&mut rng, 0.4);
        track(axiom_residuals(&req, &AxiomCheck::Translation(shift)).map_err(|e| e.to_string())?);
        // Signed axis permutation covariance.
        let perm = random_permutation(&mut rng);
        let signs = [
            if rng.gen_bool(0.5) { 1 } else { -1 },
            if rng.gen_bool(0.5) { 1 } else { -1 },
            if rng.gen_bool(0.5) { 1 } else { -1 },
            if rng.gen_bool(0.5) { 1 } else { -1 },
        ];
        track(
            axiom_residuals(&req, &AxiomCheck::AxisMap { perm, signs })
                .map_err(|e| e.to_string())?,
        );
        // Adjacent swap symmetry away from the reference slot.
        if n >= 3 {
            let i = rng.gen_range(0..n - 2);
            track(axiom_residuals(&req, &AxiomCheck::SwapAdjacent(i)).map_err(|e| e.to_string())?);
        }
        // Identity insertion: augment with an identity slot, then check its
        // removal.
        let insert_at = rng.gen_range(0..n - 1);
        let extra = loop {
            let x = random_point(&mut rng, 1.3);
            if points.iter().all(|p| p.dist(&x) >= 0.3) {
                break x;
            }
        };
        let mut aug = req.clone();
        aug.ops.insert(insert_at, CompositeOp::identity());
        aug.points.insert(insert_at, extra);
        track(
            axiom_residuals(&aug, &AxiomCheck::IdentityInsertion(insert_at))
                .map_err(|e| e.to_string())?,
        );
        // Dimension-scaling decay, exact for the massless coefficients.
        let mut scaling_req = req.clone();
        scaling_req.mass = MassParam::massless();
        track(
            axiom_residuals(
                &scaling_req,
                &AxiomCheck::Scaling {
                    delta: 2.0,
                    factors: vec![1.0, 1e-2, 1e-4, 1e-6],
                },
            )
            .map_err(|e| e.to_string())?,
        );
    }
    Ok((
        worst <= 1e-10,
        format!(
            "100 random exact requests, {checks} residuals, worst residual/scale {worst:.2e} \
             (tolerance 1e-10)"
        ),
    ))
}

fn axioms_first_order_body(seed: u64) -> Result<(bool, String), String> {
    let m = mass_one();
    let base_points = quartic_geometries()[0].clone();
    let mk_req = |points: Vec<Point4>, ops: Vec<CompositeOp>, salt: u64| CoeffRequest {
        ops,
        target: CompositeOp::identity(),
        points,
        reference: None,
        order: 1,
        mass: m,
        quadrature: Some(QuadratureConfig {
            budget: 10_000,
            seed: derive_seed(seed, salt),
            batches: 8,
            r_cut: None,
        }),
    };
    let mut lines = Vec::new();
    let mut all_ok = true;
    let mut run = |name: &str, req: &CoeffRequest, check: &AxiomCheck| -> Result<(), String> {
        let res = axiom_residuals(req, check).map_err(|e| e.to_string())?;
        let tol = 3.0 * res.error_estimate + 1e-12 * res.scale;
        let ok = res.residual <= tol;
        all_ok &= ok;
        lines.push(format!(
            "{name}: {:.2e} <= {:.2e} {}",
            res.residual,
            tol,
            if ok { "ok" } else { "FAIL" }
        ));
        Ok(())
    };

    let req = mk_req(base_points.clone(), vec![phi(); 4], 1);
    run(
        "translation",
        &req,
        &AxiomCheck::Translation(Point4([0.25, -0.15, 0.1, 0.05])),
    )?;
    let req = mk_req(base_points.clone(), vec![phi(); 4], 2);
    run(
        "axis-map",
        &req,
        &AxiomCheck::AxisMap {
            perm: [1, 0, 2, 3],
            signs: [1, -1, 1, 1],
        },
    )?;
    let req = mk_req(base_points.clone(), vec![phi(); 4], 3);
    run("swap", &req, &AxiomCheck::SwapAdjacent(1))?;
    let mut aug_points = base_points;
    aug_points.insert(2, Point4([0.25, 0.25, 0.0, 0.0]));
    let mut aug_ops = vec![phi(); 4];
    aug_ops.insert(2, CompositeOp::identity());
    let req = mk_req(aug_points, aug_ops, 4);
    run("identity-insertion", &req, &AxiomCheck::IdentityInsertion(2))?;

    Ok((all_ok, lines.join("; ")))
}

// ---------------------------------------------------------------------------
// 10. First-order cocycle residual
// ---------------------------------------------------------------------------

fn cocycle_body(seed: u64) -> Result<(bool, String), String> {
    let m = mass_one();
    let slots = [phi(), phi(), phi()];
    let target = phi();
    // Ordered triples chosen so both factorization channels of the identity
    // contract briskly: merging (x1,x2) converges like r12/r23 per dimension,
    // merging (x2,x3) like r23/r13, and the second ratio can never drop below
    // one half, so near-colinear opposite-side triples are the best
    // conditioned choice.
    let triples = [
        [
            Point4([0.45, 0.0, 0.0, 0.0]),
            Point4([0.0; 4]),
            Point4([-0.75, 0.0, 0.0, 0.0]),
        ],
        [
            Point4([0.33, 0.05, 0.0, 0.0]),
            Point4([0.0; 4]),
            Point4([-0.6, 0.1, 0.0, 0.0]),
        ],
        [
            Point4([0.28, 0.0, 0.04, 0.0]),
            Point4([0.0; 4]),
            Point4([-0.52, 0.0, -0.06, 0.0]),
        ],
    ];
    let mut lines = Vec::new();
    let mut all_ok = true;
    for (ci, pts) in triples.into_iter().enumerate() {
        let quadrature = QuadratureConfig {
            budget: 12_000,
            seed: derive_seed(seed, ci as u64 + 1),
            batches: 16,
            r_cut: None,
        };
        let r2 = cocycle_residual(&slots, &pts, &target, 2, m, &quadrature)
            .map_err(|e| e.to_string())?;
        let r4 = cocycle_residual(&slots, &pts, &target, 4, m, &quadrature)
            .map_err(|e| e.to_string())?;
        // Terms shared between the caps reuse identical sample streams, so
        // the difference is exactly the dimension-3..4 shell.  The truncated
        // sums contract geometrically with the worse channel ratio, so the
        // tail beyond cap 4 is bounded by the measured shell times q/(1-q)
        // with q that ratio squared (each shell spans two dimensions).
        let xi_left = pts[0].dist(&pts[1]) / pts[1].dist(&pts[2]);
        let xi_right = pts[1].dist(&pts[2]) / pts[0].dist(&pts[2]);
        let q = xi_left.max(xi_right).powi(2);
        let shell = (r4.value - r2.value).abs();
        let tail = shell * q / (1.0 - q);
        let tol = 3.0 * r4.error_estimate + tail;
        let ok = r4.value.abs() <= tol;
        all_ok &= ok;
        lines.push(format!(
            "triple {ci}: residual {:.3e} at cap 4 (cap 2: {:.3e}; 3-sigma {:.1e} + geometric tail {:.1e}) {}",
            r4.value,
            r2.value,
            3.0 * r4.error_estimate,
            tail,
            if ok { "ok" } else { "FAIL" }
        ));
    }
    Ok((all_ok, lines.join("; ")))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
