//! First interacting order and supporting quadrature.
//!
//! The first-order correction to an expansion coefficient is an integral
//! over the position `y` of one interaction vertex. The integrand is the
//! free coefficient with the interaction operator inserted at `y`, minus
//! two families of subtractions that render the integral convergent:
//!
//! * *near-point subtractions*: for every input slot `i`, the free
//!   two-operator coefficient of the interaction with that slot's operator,
//!   expanded into basis operators of no larger dimension, multiplied by the
//!   free coefficient with the slot replaced — these cancel the
//!   non-integrable short-distance behaviour as `y` approaches `x_i`;
//! * *far-field subtractions*: the free coefficients onto basis operators of
//!   strictly smaller dimension than the target, multiplied by the free
//!   two-operator coefficient from that basis operator to the target at the
//!   reference point — these cancel the polynomially growing matchings at
//!   large `|y|` so the full integrand decays exponentially (massive case).
//!
//! The integral is evaluated by stratified importance-sampled Monte Carlo.
//! Strata realize the natural separation of scales: one ball around each
//! input point (sampled with density `∝ |y − x_i|⁻³`, matching the strength
//! of the short-distance singularity left after subtraction), and a sequence
//! of geometrically growing shells around the reference point out to a
//! truncation radius, with the analytic exponential tail beyond it folded
//! into the error estimate. The massless variant integrates over a finite
//! ball instead and needs no tail. [`region_classify`] exposes the
//! underlying near/far/intermediate decomposition for a general weighted
//! tree; the strata used here are its practical single-level realization.
//!
//! [`gamma_mixing`] computes the deterministic far-zone mixing integrals
//! (the matrix controlling how the finite-volume massless scheme mixes
//! operators at the cutoff radius) by tensor-product quadrature: a spherical
//! rule exact for the low-degree angular dependence of the integrand, and
//! octave-segmented Gauss–Legendre panels in the radius.

use crate::coefficients::{free_star_value, CoeffError, CoeffRequest, CoeffValue};
use crate::multiindex::{enumerate_ops, CompositeOp};
use crate::par;
use crate::propagator::{MassParam, Point4};
use crate::trees::{interaction_op, VertexId, WeightedTree};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

/// Conventional normalization of the quartic interaction operator: the
/// four-factor power of the basic field divided by `4! = 24`. The division
/// is applied once per coefficient evaluation, after the matching sum.
pub const INTERACTION_NORMALIZATION: f64 = 24.0;

// ---------------------------------------------------------------------------
// Configuration and errors
// ---------------------------------------------------------------------------

/// Controls for the Monte Carlo evaluation of first-order coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Total sample budget across all strata (approximate: every stratum is
    /// guaranteed a small minimum). Must be at least 1000.
    pub budget: usize,
    /// Seed for the deterministic random streams. Every (stratum, batch)
    /// cell draws from its own stream, so results are reproducible for a
    /// fixed seed regardless of thread count.
    #[serde(default)]
    pub seed: u64,
    /// Number of independent batches per stratum (used for the convergence
    /// diagnostic). At least 2; 8 by default.
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Truncation radius around the reference point for massive runs.
    /// `None` selects `max(10/m, 2 · spread)` automatically. Ignored by the
    /// massless ball variant, which uses its explicit ball radius.
    #[serde(default)]
    pub r_cut: Option<f64>,
}

fn default_batches() -> usize {
    8
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            budget: 40_000,
            seed: 12345,
            batches: default_batches(),
            r_cut: None,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        if self.budget < 1000 {
            return Err(QuadratureError::BudgetTooSmall(self.budget));
        }
        if self.batches < 2 {
            return Err(QuadratureError::TooFewBatches(self.batches));
        }
        Ok(())
    }
}

/// Failures of the numerical integration layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("sample budget {0} is below the minimum of 1000")]
    BudgetTooSmall(usize),
    #[error("batch count {0} is below the minimum of 2")]
    TooFewBatches(usize),
    #[error("the truncated-tail evaluator requires a positive mass; use the finite-ball massless variant for m = 0")]
    MasslessUnsupported,
    #[error("the finite-ball evaluator requires m = 0")]
    MassiveUnsupported,
    #[error("truncation radius {given} is below the required minimum {required}")]
    TruncationRadius { given: f64, required: f64 },
    #[error("ball radius {given} must exceed the point spread {required}")]
    BallRadius { given: f64, required: f64 },
    #[error("stratum {stratum} failed the batch-convergence diagnostic; increase the budget")]
    NotConverging { stratum: usize },
    #[error("scale separation parameter {eps} outside (0, {max}]")]
    EpsilonRange { eps: f64, max: f64 },
    #[error("mixing integrals are tabulated for operator dimension <= {max}, got {got}")]
    DimensionTooLarge { got: u32, max: u32 },
    #[error("region classification needs an internal vertex, got a leaf")]
    LeafRegion,
}

// ---------------------------------------------------------------------------
// Region classification
// ---------------------------------------------------------------------------

/// Where an integration point sits relative to an internal vertex of a
/// weighted tree: close to one of its children, far outside the whole
/// cluster, or in between.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// Within the near zone of child `i` of the vertex.
    UltravioletNear(VertexId),
    /// Beyond the far-zone threshold of the vertex (and in no near zone).
    Infrared,
    /// Everything else.
    Intermediate,
}

/// Classifies the integration point `y` relative to the internal vertex `v`
/// of `tree`, at recursion depth `r` and scale-separation parameter `eps`.
///
/// The thresholds depend on whether a vertex lies on the distinguished
/// branch of the tree (the root is always treated as on-branch): on-branch
/// comparisons use the mild factor `(1+eps)^(2·8^(r+1))`, off-branch ones
/// the strong factor `eps^(-2·8^(r+1))`. A point inside the near zone of
/// several children is attributed to the first child in canonical order;
/// the far zone excludes all near zones by construction. `eps` must lie in
/// `(0, 2^-(Σdims + 4r + 3)]` where the sum runs over leaf and root operator
/// dimensions.
pub fn region_classify(
    tree: &WeightedTree,
    v: VertexId,
    y: Point4,
    eps: f64,
    r: u32,
) -> Result<Region, QuadratureError> {
    let children = tree.children(v);
    if children.is_empty() {
        return Err(QuadratureError::LeafRegion);
    }
    let mut dim_total: u32 = tree
        .leaves()
        .iter()
        .map(|&w| tree.op_required(w).dimension())
        .sum();
    dim_total += tree.op_required(tree.root()).dimension();
    let max_eps = 2f64.powi(-((dim_total + 4 * r + 3) as i32));
    if !(eps > 0.0 && eps <= max_eps) {
        return Err(QuadratureError::EpsilonRange { eps, max: max_eps });
    }
    let branch = tree.default_branch();
    let root = tree.root();
    let on_branch =
        |w: VertexId| w == root || w == branch.leaf || branch.path.contains(&w);
    let p = 2.0 * 8f64.powi(r as i32 + 1);
    let factor_on = (1.0 + eps).powf(p);
    let factor_off = eps.powf(-p);

    for &i in children {
        let d = tree.point(i).sub(&y).norm();
        let min_sb = tree
            .siblings(i)
            .iter()
            .map(|&j| tree.point(i).sub(&tree.point(j)).norm())
            .fold(f64::INFINITY, f64::min);
        if d == 0.0 {
            return Ok(Region::UltravioletNear(i));
        }
        let factor = if on_branch(i) { factor_on } else { factor_off };
        if d * factor < min_sb {
            return Ok(Region::UltravioletNear(i));
        }
    }

    let xv = tree.point(v);
    let dist_v = xv.sub(&y).norm();
    let max_ch = children
        .iter()
        .map(|&i| tree.point(i).sub(&xv).norm())
        .fold(0.0_f64, f64::max);
    let parent_on = match tree.ancestors(v).first() {
        Some(&p) => on_branch(p),
        None => true, // the root has no parent; treated as on-branch
    };
    let factor = if parent_on { factor_on } else { factor_off };
    if dist_v >= max_ch * factor {
        return Ok(Region::Infrared);
    }
    Ok(Region::Intermediate)
}

// ---------------------------------------------------------------------------
// Stratified Monte Carlo engine
// ---------------------------------------------------------------------------

/// One integration stratum: a ball around a point (sampled with radial
/// density `∝ r⁻³`) or a spherical shell around the reference point
/// (sampled uniformly). Shells carry exclusion balls: samples landing in an
/// excluded ball contribute zero, because that region belongs to a ball
/// stratum.
#[derive(Clone, Debug)]
pub(crate) enum Stratum {
    Ball { center: Point4, radius: f64 },
    Shell { center: Point4, inner: f64, outer: f64 },
}

#[derive(Clone, Debug)]
pub(crate) struct StratumSpec {
    pub stratum: Stratum,
    pub exclusions: Vec<(Point4, f64)>,
    pub samples: usize,
}

/// Draws two independent standard normal variates from two uniforms.
fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // in (0, 1]
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * PI * u2;
    (r * t.cos(), r * t.sin())
}

/// Uniform direction on the unit 3-sphere in four dimensions.
fn unit_direction(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let (a, b) = normal_pair(rng);
        let (c, d) = normal_pair(rng);
        let n2 = a * a + b * b + c * c + d * d;
        if n2 > 1e-12 {
            let inv = 1.0 / n2.sqrt();
            return [a * inv, b * inv, c * inv, d * inv];
        }
    }
}

impl Stratum {
    /// Draws one point and the reciprocal of its sampling density (the
    /// importance weight). A zero weight means the draw is degenerate and
    /// contributes nothing.
    fn sample(&self, rng: &mut ChaCha8Rng) -> (Point4, f64) {
        match self {
            Stratum::Ball { center, radius } => {
                let r = rng.gen::<f64>() * radius;
                let dir = unit_direction(rng);
                let y = Point4([
                    center.0[0] + r * dir[0],
                    center.0[1] + r * dir[1],
                    center.0[2] + r * dir[2],
                    center.0[3] + r * dir[3],
                ]);
                // density p(y) = 1 / (radius · 2π² r³)  ⇒  weight = 2π² · radius · r³
                (y, 2.0 * PI * PI * radius * r * r * r)
            }
            Stratum::Shell {
                center,
                inner,
                outer,
            } => {
                let u: f64 = rng.gen();
                let i4 = inner.powi(4);
                let o4 = outer.powi(4);
                let r = (i4 + u * (o4 - i4)).powf(0.25);
                let dir = unit_direction(rng);
                let y = Point4([
                    center.0[0] + r * dir[0],
                    center.0[1] + r * dir[1],
                    center.0[2] + r * dir[2],
                    center.0[3] + r * dir[3],
                ]);
                // uniform over the shell: weight = its 4-volume
                (y, 0.5 * PI * PI * (o4 - i4))
            }
        }
    }
}

pub(crate) struct StratifiedEstimate {
    pub value: f64,
    pub sigma: f64,
    /// Index of a stratum whose error estimate failed to stabilize across
    /// batches while dominating the total variance, if any.
    pub suspect: Option<usize>,
}

/// Stratified Monte Carlo: sums the per-stratum means of `f · weight` with
/// a quadrature-sum error estimate. Deterministic for fixed seed and batch
/// count: every (stratum, batch) cell uses its own counter-derived random
/// stream and the final fold is in index order, so parallel and sequential
/// builds agree bitwise.
pub(crate) fn integrate_stratified(
    specs: &[StratumSpec],
    seed: u64,
    batches: usize,
    f: &(dyn Fn(Point4) -> f64 + Sync),
) -> StratifiedEstimate {
    let ns = specs.len();
    let cells: Vec<(f64, f64, usize)> = par::indexed_map(ns * batches, |idx| {
        let s = idx / batches;
        let b = idx % batches;
        let spec = &specs[s];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((s as u64) * 65536 + b as u64 + 1);
        let base = spec.samples / batches;
        let extra = spec.samples % batches;
        let n = base + usize::from(b < extra);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let (y, w) = spec.stratum.sample(&mut rng);
            let excluded = spec
                .exclusions
                .iter()
                .any(|(c, rad)| y.sub(c).norm_sq() < rad * rad);
            let val = if excluded || w == 0.0 { 0.0 } else { f(y) * w };
            sum += val;
            sumsq += val * val;
        }
        (sum, sumsq, n)
    });

    let mut value = 0.0;
    let mut var_total = 0.0;
    let mut stratum_vars = vec![0.0f64; ns];
    let mut suspect = None;
    for s in 0..ns {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut n = 0usize;
        let mut batch_means = Vec::with_capacity(batches);
        for b in 0..batches {
            let (bs, bss, bn) = cells[s * batches + b];
            sum += bs;
            sumsq += bss;
            n += bn;
            if bn > 0 {
                batch_means.push(bs / bn as f64);
            }
        }
        if n == 0 {
            continue;
        }
        let mean = sum / n as f64;
        value += mean;
        let var = if n > 1 {
            ((sumsq - sum * sum / n as f64) / (n as f64 - 1.0)).max(0.0) / n as f64
        } else {
            0.0
        };
        stratum_vars[s] = var;
        var_total += var;
        // Convergence diagnostic: an untrustworthy stratum shows *both* a
        // jump in the spread of batch means between the first half and the
        // full set *and* a mean that moved by much more than the first
        // half's own scatter — the signature of rare heavy contributions
        // still being discovered. Either symptom alone is common statistical
        // noise for skewed integrands.
        if batch_means.len() >= 4 {
            let half = batch_means.len() / 2;
            let stats = |xs: &[f64]| -> (f64, f64) {
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
                    / (xs.len() as f64 - 1.0))
                    .sqrt();
                (m, sd)
            };
            let (mean_half, sd_half) = stats(&batch_means[..half]);
            let (mean_all, sd_all) = stats(&batch_means);
            let jumped = sd_all > 3.0 * sd_half;
            let drifted = (mean_all - mean_half).abs() > 2.0 * sd_half;
            if jumped && drifted && sd_all > 0.0 && suspect.is_none() {
                suspect = Some(s);
            }
        }
    }
    // A suspect stratum only invalidates the run when it dominates the
    // variance; a noisy but negligible stratum is tolerated.
    if let Some(s) = suspect {
        if !(stratum_vars[s] > 0.25 * var_total) {
            suspect = None;
        }
    }
    StratifiedEstimate {
        value,
        sigma: var_total.sqrt(),
        suspect,
    }
}

/// Builds the strata for integrating around a set of input points: one ball
/// per point with radius half the distance to its nearest neighbour, and
/// geometric shells around the reference point (the last one) out to
/// `outer_radius`. `mass` shapes the sample allocation across shells (far
/// shells matter less at larger mass); it does not affect correctness.
fn build_strata(
    points: &[Point4],
    outer_radius: f64,
    mass: f64,
    budget: usize,
    batches: usize,
) -> Vec<StratumSpec> {
    let n = points.len();
    let x_ref = *points.last().expect("at least one point");
    let mut radii = vec![0.0f64; n];
    for i in 0..n {
        let mut min_d = f64::INFINITY;
        for j in 0..n {
            if i != j {
                min_d = min_d.min(points[i].sub(&points[j]).norm());
            }
        }
        let base = if min_d.is_finite() {
            0.5 * min_d
        } else {
            outer_radius / 8.0 // single-point request
        };
        // Keep every point ball inside the integration ball so the strata
        // cover exactly the intended region (callers guarantee the outer
        // radius exceeds every point's distance from the reference).
        let margin = 0.5 * (outer_radius - points[i].sub(&x_ref).norm());
        radii[i] = base.min(margin);
    }
    let balls: Vec<(Point4, f64)> = points.iter().copied().zip(radii.iter().copied()).collect();
    let rho_ref = radii[n - 1];

    let mut shells = Vec::new();
    let mut inner = rho_ref;
    while inner < outer_radius {
        let outer = (2.0 * inner).min(outer_radius);
        shells.push((inner, outer));
        inner = outer;
    }

    let maxdist = points[..n - 1]
        .iter()
        .map(|x| x.sub(&x_ref).norm())
        .fold(0.0_f64, f64::max);

    let min_per = 4 * batches;
    let ball_budget = budget / 2;
    let per_ball = (ball_budget / n.max(1)).max(min_per);
    let shell_budget = budget.saturating_sub(per_ball * n);
    let weights: Vec<f64> = shells
        .iter()
        .map(|&(i, _)| (-mass * (i - maxdist).max(0.0)).exp())
        .collect();
    let wsum: f64 = weights.iter().sum();

    let mut specs = Vec::with_capacity(n + shells.len());
    for &(c, r) in &balls {
        specs.push(StratumSpec {
            stratum: Stratum::Ball {
                center: c,
                radius: r,
            },
            exclusions: Vec::new(),
            samples: per_ball,
        });
    }
    for (k, &(i, o)) in shells.iter().enumerate() {
        let share = if wsum > 0.0 {
            (shell_budget as f64 * weights[k] / wsum) as usize
        } else {
            shell_budget / shells.len().max(1)
        };
        specs.push(StratumSpec {
            stratum: Stratum::Shell {
                center: x_ref,
                inner: i,
                outer: o,
            },
            exclusions: balls.clone(),
            samples: share.max(min_per),
        });
    }
    specs
}

// ---------------------------------------------------------------------------
// The first-order integrand
// ---------------------------------------------------------------------------

/// The subtracted integrand of the first-order correction, with all
/// `y`-independent factors precomputed. Values exclude the overall
/// `-1/4!`, which the callers apply at the end.
struct FirstOrderIntegrand {
    mass: MassParam,
    ops: Vec<CompositeOp>,
    points: Vec<Point4>,
    target: CompositeOp,
    quartic: CompositeOp,
    /// `(slot, basis op, value of the coefficient with the slot replaced)`
    /// for every near-point subtraction with a nonzero second factor.
    near_terms: Vec<(usize, CompositeOp, f64)>,
    /// `(basis op, value of the coefficient onto it)` for every far-field
    /// subtraction with a nonzero first factor.
    far_terms: Vec<(CompositeOp, f64)>,
}

impl FirstOrderIntegrand {
    fn new(
        ops: Vec<CompositeOp>,
        points: Vec<Point4>,
        target: CompositeOp,
        mass: MassParam,
    ) -> Result<Self, CoeffError> {
        let n = ops.len();
        let mut near_terms = Vec::new();
        for i in 0..n {
            for d in 0..=ops[i].dimension() {
                for c in enumerate_ops(d) {
                    let mut replaced = ops.clone();
                    replaced[i] = c.clone();
                    let second = free_star_value(&replaced, &points, &target, mass)?;
                    if second != 0.0 {
                        near_terms.push((i, c, second));
                    }
                }
            }
        }
        let mut far_terms = Vec::new();
        for d in 0..target.dimension() {
            for c in enumerate_ops(d) {
                let first = free_star_value(&ops, &points, &c, mass)?;
                if first != 0.0 {
                    far_terms.push((c, first));
                }
            }
        }
        Ok(FirstOrderIntegrand {
            mass,
            ops,
            points,
            target,
            quartic: interaction_op(),
            near_terms,
            far_terms,
        })
    }

    /// Evaluates the subtracted integrand at `y` (without the `-1/4!`).
    fn eval(&self, y: Point4) -> f64 {
        for x in &self.points {
            if y.sub(x).norm_sq() == 0.0 {
                return 0.0; // measure-zero coincidence; avoid singular trees
            }
        }
        let x_ref = *self.points.last().expect("nonempty");
        let mut full_ops = Vec::with_capacity(self.ops.len() + 1);
        full_ops.push(self.quartic.clone());
        full_ops.extend(self.ops.iter().cloned());
        let mut full_points = Vec::with_capacity(self.points.len() + 1);
        full_points.push(y);
        full_points.extend(self.points.iter().copied());
        let mut v = free_star_value(&full_ops, &full_points, &self.target, self.mass)
            .expect("distinct points by construction");
        for (i, c, second) in &self.near_terms {
            let pair_ops = [self.quartic.clone(), self.ops[*i].clone()];
            let pair_points = [y, self.points[*i]];
            let first = free_star_value(&pair_ops, &pair_points, c, self.mass)
                .expect("distinct points by construction");
            v -= first * second;
        }
        for (c, first) in &self.far_terms {
            let pair_ops = [self.quartic.clone(), c.clone()];
            let pair_points = [y, x_ref];
            let second = free_star_value(&pair_ops, &pair_points, &self.target, self.mass)
                .expect("distinct points by construction");
            v -= first * second;
        }
        v
    }
}

// ---------------------------------------------------------------------------
// First-order evaluation (massive, truncated tail)
// ---------------------------------------------------------------------------

/// Evaluates the first-order correction for a massive request by stratified
/// Monte Carlo over a ball of radius `r_cut` around the reference point,
/// with the exponential tail beyond `r_cut` bounded analytically and folded
/// into the error estimate.
pub fn first_order_coeff(
    req: &CoeffRequest,
    q: &QuadratureConfig,
) -> Result<CoeffValue, CoeffError> {
    req.validate()?;
    if req.mass.is_massless() {
        return Err(QuadratureError::MasslessUnsupported.into());
    }
    q.validate().map_err(CoeffError::from)?;
    let (ops, points) = req.rotated_ops_points();
    let m = req.mass.value();
    let x_ref = *points.last().expect("nonempty");
    let maxdist = points[..points.len() - 1]
        .iter()
        .map(|x| x.sub(&x_ref).norm())
        .fold(0.0_f64, f64::max);
    let required = (10.0 / m).max(2.0 * maxdist);
    let r_cut = match q.r_cut {
        Some(rc) => {
            if rc < required {
                return Err(QuadratureError::TruncationRadius {
                    given: rc,
                    required,
                }
                .into());
            }
            rc
        }
        None => required,
    };

    let integrand = FirstOrderIntegrand::new(ops, points.clone(), req.target.clone(), req.mass)?;
    let specs = build_strata(&points, r_cut, m, q.budget, q.batches);
    let est = integrate_stratified(specs.as_slice(), q.seed, q.batches, &|y| integrand.eval(y));
    if let Some(s) = est.suspect {
        return Err(QuadratureError::NotConverging { stratum: s }.into());
    }

    // Tail bound: measure the integrand scale on a thin shell at the
    // truncation boundary and extend it inward-to-outward with the slowest
    // possible exponential decay rate (a single massive two-point function).
    let tail_spec = StratumSpec {
        stratum: Stratum::Shell {
            center: x_ref,
            inner: 0.95 * r_cut,
            outer: r_cut,
        },
        exclusions: Vec::new(),
        samples: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(q.seed);
    rng.set_stream(0xD15C_0000);
    let mut c_meas = 0.0f64;
    for _ in 0..256 {
        let (y, _w) = tail_spec.stratum.sample(&mut rng);
        let r = y.sub(&x_ref).norm();
        let v = integrand.eval(y).abs() * (m * (r - maxdist)).exp();
        c_meas = c_meas.max(v);
    }
    let r = r_cut;
    let tail = c_meas
        * 2.0
        * PI
        * PI
        * (-m * (r - maxdist)).exp()
        * (r.powi(3) / m + 3.0 * r * r / (m * m) + 6.0 * r / (m * m * m) + 6.0 / m.powi(4));

    Ok(CoeffValue {
        value: -est.value / INTERACTION_NORMALIZATION,
        error_estimate: (est.sigma + tail) / INTERACTION_NORMALIZATION,
    })
}

/// Evaluates the first-order correction in the massless finite-ball scheme:
/// the interaction position is integrated over the ball of radius `l`
/// around the reference point, with massless two-point functions
/// throughout. Requires `m = 0` and `l` larger than the point spread.
pub fn massless_first_order(
    req: &CoeffRequest,
    l: f64,
    q: &QuadratureConfig,
) -> Result<CoeffValue, CoeffError> {
    req.validate()?;
    if !req.mass.is_massless() {
        return Err(QuadratureError::MassiveUnsupported.into());
    }
    q.validate().map_err(CoeffError::from)?;
    let (ops, points) = req.rotated_ops_points();
    let x_ref = *points.last().expect("nonempty");
    let maxdist = points[..points.len() - 1]
        .iter()
        .map(|x| x.sub(&x_ref).norm())
        .fold(0.0_f64, f64::max);
    if !(l > maxdist) {
        return Err(QuadratureError::BallRadius {
            given: l,
            required: maxdist,
        }
        .into());
    }
    let integrand = FirstOrderIntegrand::new(ops, points.clone(), req.target.clone(), req.mass)?;
    let specs = build_strata(&points, l, 0.0, q.budget, q.batches);
    let est = integrate_stratified(specs.as_slice(), q.seed, q.batches, &|y| integrand.eval(y));
    if let Some(s) = est.suspect {
        return Err(QuadratureError::NotConverging { stratum: s }.into());
    }
    Ok(CoeffValue {
        value: -est.value / INTERACTION_NORMALIZATION,
        error_estimate: est.sigma / INTERACTION_NORMALIZATION,
    })
}

// ---------------------------------------------------------------------------
// Far-zone mixing integrals
// ---------------------------------------------------------------------------

/// Far-zone mixing integrals between basis operators at a cutoff radius.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaMatrix {
    /// Entry `(A, B)` is the integral of the free coefficient taking the
    /// interaction plus `A` into `B` over the exterior `|y| >= L`.
    pub entries: BTreeMap<(CompositeOp, CompositeOp), f64>,
    pub cutoff: f64,
    pub mass: MassParam,
}

impl GammaMatrix {
    /// Computes all pairwise entries among `ops`.
    pub fn compute(
        ops: &[CompositeOp],
        cutoff: f64,
        mass: MassParam,
    ) -> Result<GammaMatrix, QuadratureError> {
        let mut entries = BTreeMap::new();
        for a in ops {
            for b in ops {
                entries.insert((a.clone(), b.clone()), gamma_mixing(a, b, cutoff, mass)?);
            }
        }
        Ok(GammaMatrix {
            entries,
            cutoff,
            mass,
        })
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// computed by Newton iteration on the Legendre recurrence.
pub(crate) fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..60 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    out
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// One entry of the far-zone mixing matrix: the integral over `|y| >= l` of
/// the free coefficient combining the interaction operator at `y` with `a`
/// at the origin into `b` at the origin (including the interaction's 1/4!).
///
/// Evaluated by deterministic tensor-product quadrature: a spherical rule
/// exact for the integrand's low-degree angular dependence (second-kind
/// Chebyshev nodes in the polar angle, Gauss–Legendre in the second, equal
/// weights in the azimuth) and octave-segmented Gauss–Legendre panels in
/// the radius until the exponential factor is negligible.
pub fn gamma_mixing(
    a: &CompositeOp,
    b: &CompositeOp,
    l: f64,
    mass: MassParam,
) -> Result<f64, QuadratureError> {
    if mass.is_massless() {
        return Err(QuadratureError::MasslessUnsupported);
    }
    if !(l > 0.0) {
        return Err(QuadratureError::BallRadius {
            given: l,
            required: 0.0,
        });
    }
    let max_dim = 4;
    if a.dimension() > max_dim || b.dimension() > max_dim {
        return Err(QuadratureError::DimensionTooLarge {
            got: a.dimension().max(b.dimension()),
            max: max_dim,
        });
    }
    if a.dimension() < b.dimension() {
        return Ok(0.0); // the target's dimension cannot exceed the source's
    }
    if (4 + a.n_factors() + b.n_factors()) % 2 == 1 {
        return Ok(0.0); // odd total slot count: every matching sum vanishes
    }

    let m = mass.value();
    let origin = Point4([0.0; 4]);
    let quartic = interaction_op();
    let integrand = |y: Point4| -> f64 {
        let ops = [quartic.clone(), a.clone()];
        let points = [y, origin];
        free_star_value(&ops, &points, b, mass).expect("y != 0 on the grid")
            / INTERACTION_NORMALIZATION
    };

    // Angular rule, exact for direction-polynomials of degree <= 8.
    let n_psi = 8;
    let n_theta = 8;
    let n_phi = 9;
    let mut angular = Vec::with_capacity(n_psi * n_theta * n_phi);
    let gl_theta = gauss_legendre(n_theta);
    for k in 1..=n_psi {
        let psi = k as f64 * PI / (n_psi as f64 + 1.0);
        let w_psi = PI / (n_psi as f64 + 1.0) * psi.sin() * psi.sin();
        for &(u, w_u) in &gl_theta {
            let theta = u.acos();
            for j in 0..n_phi {
                let phi = 2.0 * PI * j as f64 / n_phi as f64;
                let w = w_psi * w_u * 2.0 * PI / n_phi as f64;
                let dir = [
                    psi.cos(),
                    psi.sin() * theta.cos(),
                    psi.sin() * theta.sin() * phi.cos(),
                    psi.sin() * theta.sin() * phi.sin(),
                ];
                angular.push((dir, w));
            }
        }
    }

    // Radial octaves [l·2^j, l·2^(j+1)] until the decay makes further
    // octaves negligible, then one final panel to the cut.
    let r_max = l + 60.0 / m;
    let gl_r = gauss_legendre(10);
    let mut segments = Vec::new();
    let mut lo = l;
    while lo < r_max {
        let hi = (2.0 * lo).min(r_max);
        segments.push((lo, hi));
        lo = hi;
    }

    let total = par::indexed_sum(segments.len(), |si| {
        let (lo, hi) = segments[si];
        let mut seg = 0.0;
        for &(t, wt) in &gl_r {
            let r = 0.5 * (hi + lo) + 0.5 * (hi - lo) * t;
            let wr = 0.5 * (hi - lo) * wt;
            let mut sphere = 0.0;
            for (dir, wa) in &angular {
                let y = Point4([r * dir[0], r * dir[1], r * dir[2], r * dir[3]]);
                sphere += wa * integrand(y);
            }
            seg += wr * r * r * r * sphere;
        }
        seg
    });
    Ok(total)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
