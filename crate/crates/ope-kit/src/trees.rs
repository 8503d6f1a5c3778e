//! Weighted rooted trees: each vertex carries a point of Euclidean space and
//! (for leaves and the root, mandatorily) a composite operator. The module
//! provides validation, the relational queries used by the matching sums and
//! bounds, per-vertex separation ratios, branch extraction, and the three
//! graft surgeries that attach an interaction leaf.
//!
//! Validity rules:
//! - exactly one root; parent links form a tree;
//! - every internal non-root vertex has at least two children (tree degree
//!   strictly greater than two);
//! - every internal vertex's point coincides exactly with one of its
//!   children's points;
//! - leaf points are pairwise distinct;
//! - leaves and the root carry operators; other internal operators are
//!   optional (their dimensions are supplied externally where needed).

use crate::multiindex::{CompositeOp, OpParseError};
use crate::propagator::Point4;
use serde::Deserialize;
use std::collections::HashMap;

/// Dense vertex index inside a built tree (not the user-facing id).
pub type VertexId = usize;

/// A leaf-to-root path: the internal non-root vertices from just above the
/// anchoring leaf to just below the root, in bottom-up order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Branch {
    pub leaf: VertexId,
    pub path: Vec<VertexId>,
}

// ---------------------------------------------------------------------------
// Construction input
// ---------------------------------------------------------------------------

/// One vertex of a tree description. `parent = None` marks the root.
#[derive(Clone, Debug)]
pub struct VertexSpec {
    pub id: u64,
    pub parent: Option<u64>,
    pub point: Point4,
    pub op: Option<CompositeOp>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VertexJson {
    id: u64,
    parent: Option<u64>,
    point: [f64; 4],
    #[serde(default)]
    op: Option<String>,
}

/// Tree construction / surgery failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreeError {
    #[error("tree description is empty")]
    Empty,
    #[error("duplicate vertex id {0}")]
    DuplicateId(u64),
    #[error("no root vertex (every vertex has a parent)")]
    NoRoot,
    #[error("multiple roots: vertices {0} and {1} both lack a parent")]
    MultipleRoots(u64, u64),
    #[error("vertex {vertex} references unknown parent {parent}")]
    UnknownParent { vertex: u64, parent: u64 },
    #[error("parent links of vertex {0} form a cycle")]
    Cycle(u64),
    #[error("root {0} has no children")]
    RootChildless(u64),
    #[error("internal non-root vertex {0} has fewer than two children")]
    UnaryInternal(u64),
    #[error("internal vertex {0}: point does not equal any child's point")]
    PointMismatch(u64),
    #[error("leaves {0} and {1} carry the same point")]
    CoincidentLeaves(u64, u64),
    #[error("vertex {0} requires an operator (leaf or root)")]
    MissingOp(u64),
    #[error("vertex {vertex}: {source}")]
    OpSyntax {
        vertex: u64,
        #[source]
        source: OpParseError,
    },
    #[error("tree JSON: {0}")]
    Json(String),
    #[error("graft target {0} is a leaf; grafts require an internal vertex")]
    GraftAtLeaf(u64),
    #[error("this graft mode requires an operator for the new vertex")]
    GraftNeedsOp,
    #[error("separation ratio is defined only for internal non-root vertices, not {0}")]
    XiUndefined(u64),
}

// ---------------------------------------------------------------------------
// WeightedTree
// ---------------------------------------------------------------------------

/// A validated weighted rooted tree. Immutable after construction; grafts
/// return new trees.
#[derive(Clone, Debug)]
pub struct WeightedTree {
    ids: Vec<u64>,
    parent: Vec<Option<VertexId>>,
    children: Vec<Vec<VertexId>>,
    point: Vec<Point4>,
    op: Vec<Option<CompositeOp>>,
    root: VertexId,
    leaves: Vec<VertexId>,
    internal_nonroot: Vec<VertexId>,
}

/// Builds and validates a tree from vertex descriptions.
pub fn build_tree(spec: &[VertexSpec]) -> Result<WeightedTree, TreeError> {
    if spec.is_empty() {
        return Err(TreeError::Empty);
    }

    // Dense indices in ascending id order (deterministic regardless of the
    // order vertices are listed in).
    let mut order: Vec<usize> = (0..spec.len()).collect();
    order.sort_by_key(|&i| spec[i].id);
    for w in order.windows(2) {
        if spec[w[0]].id == spec[w[1]].id {
            return Err(TreeError::DuplicateId(spec[w[0]].id));
        }
    }
    let ids: Vec<u64> = order.iter().map(|&i| spec[i].id).collect();
    let index_of: HashMap<u64, VertexId> = ids.iter().enumerate().map(|(v, &id)| (id, v)).collect();

    let mut parent: Vec<Option<VertexId>> = vec![None; ids.len()];
    let mut root: Option<VertexId> = None;
    for &i in &order {
        let v = index_of[&spec[i].id];
        match spec[i].parent {
            None => {
                if let Some(r) = root {
                    return Err(TreeError::MultipleRoots(ids[r], ids[v]));
                }
                root = Some(v);
            }
            Some(pid) => {
                let p = *index_of
                    .get(&pid)
                    .ok_or(TreeError::UnknownParent {
                        vertex: spec[i].id,
                        parent: pid,
                    })?;
                parent[v] = Some(p);
            }
        }
    }
    let root = root.ok_or(TreeError::NoRoot)?;

    // Cycle detection: every vertex must reach the root by parent links.
    for v in 0..ids.len() {
        let mut cur = v;
        for _ in 0..=ids.len() {
            match parent[cur] {
                None => break,
                Some(p) => cur = p,
            }
        }
        if parent[cur].is_some() {
            return Err(TreeError::Cycle(ids[v]));
        }
    }

    let mut children: Vec<Vec<VertexId>> = vec![Vec::new(); ids.len()];
    for v in 0..ids.len() {
        if let Some(p) = parent[v] {
            children[p].push(v);
        }
    }
    // Child lists ascend by id (indices are id-ordered already).
    for ch in &mut children {
        ch.sort_unstable();
    }

    let point: Vec<Point4> = order.iter().map(|&i| spec[i].point).collect();
    let op: Vec<Option<CompositeOp>> = order.iter().map(|&i| spec[i].op.clone()).collect();

    if children[root].is_empty() {
        return Err(TreeError::RootChildless(ids[root]));
    }

    let mut leaves = Vec::new();
    let mut internal_nonroot = Vec::new();
    for v in 0..ids.len() {
        if children[v].is_empty() {
            leaves.push(v);
            if op[v].is_none() {
                return Err(TreeError::MissingOp(ids[v]));
            }
        } else if v != root {
            internal_nonroot.push(v);
            if children[v].len() < 2 {
                return Err(TreeError::UnaryInternal(ids[v]));
            }
        }
    }
    if op[root].is_none() {
        return Err(TreeError::MissingOp(ids[root]));
    }

    // Every internal vertex sits on one of its children's points.
    for v in 0..ids.len() {
        if !children[v].is_empty() && !children[v].iter().any(|&c| point[c] == point[v]) {
            return Err(TreeError::PointMismatch(ids[v]));
        }
    }

    // Leaf points pairwise distinct.
    for (a_pos, &a) in leaves.iter().enumerate() {
        for &b in &leaves[a_pos + 1..] {
            if point[a] == point[b] {
                return Err(TreeError::CoincidentLeaves(ids[a], ids[b]));
            }
        }
    }

    Ok(WeightedTree {
        ids,
        parent,
        children,
        point,
        op,
        root,
        leaves,
        internal_nonroot,
    })
}

/// The quartic interaction operator carried by grafted leaves (four field
/// factors; the 1/4! coupling normalization is applied by the consumers).
pub fn interaction_op() -> CompositeOp {
    CompositeOp::phi_power(4)
}

/// Graft surgery selector; see [`WeightedTree::graft`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraftMode {
    /// Attach the interaction leaf directly under `v`.
    AtVertex,
    /// Insert a new vertex `u` (weighted with the supplied operator, at
    /// `v`'s point) between `v` and its parent, and attach the interaction
    /// leaf under `u`. At the root, `u` becomes the new root.
    AboveChild,
    /// Same insertion, but `u` inherits `v`'s weight and `v` is reweighted
    /// with the supplied operator.
    BelowVertex,
}

impl WeightedTree {
    /// Parses the JSON tree description: an array of
    /// `{"id": int, "parent": int|null, "point": [t,x,y,z], "op": "<string>"}`
    /// objects (`op` may be omitted for internal non-root vertices).
    pub fn from_json(text: &str) -> Result<WeightedTree, TreeError> {
        let raw: Vec<VertexJson> =
            serde_json::from_str(text).map_err(|e| TreeError::Json(e.to_string()))?;
        let mut spec = Vec::with_capacity(raw.len());
        for v in raw {
            let op = match v.op {
                None => None,
                Some(text) => Some(CompositeOp::parse(&text).map_err(|source| {
                    TreeError::OpSyntax {
                        vertex: v.id,
                        source,
                    }
                })?),
            };
            spec.push(VertexSpec {
                id: v.id,
                parent: v.parent,
                point: Point4(v.point),
                op,
            });
        }
        build_tree(&spec)
    }

    // -- basic queries ------------------------------------------------------

    pub fn vertex_count(&self) -> usize {
        self.ids.len()
    }

    pub fn root(&self) -> VertexId {
        self.root
    }

    /// The user-facing id of a vertex.
    pub fn id(&self, v: VertexId) -> u64 {
        self.ids[v]
    }

    /// Finds the dense index for a user-facing id.
    pub fn find_by_id(&self, id: u64) -> Option<VertexId> {
        self.ids.binary_search(&id).ok()
    }

    pub fn point(&self, v: VertexId) -> Point4 {
        self.point[v]
    }

    pub fn op(&self, v: VertexId) -> Option<&CompositeOp> {
        self.op[v].as_ref()
    }

    pub fn is_leaf(&self, v: VertexId) -> bool {
        self.children[v].is_empty()
    }

    pub fn is_internal(&self, v: VertexId) -> bool {
        !self.children[v].is_empty()
    }

    /// Children, ascending by id.
    pub fn children(&self, v: VertexId) -> &[VertexId] {
        &self.children[v]
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        self.parent[v]
    }

    /// Siblings: the other children of `v`'s parent. Empty for the root.
    pub fn siblings(&self, v: VertexId) -> Vec<VertexId> {
        match self.parent[v] {
            None => Vec::new(),
            Some(p) => self.children[p].iter().copied().filter(|&c| c != v).collect(),
        }
    }

    /// Strict ancestors of `v`, nearest first, ending at the root.
    pub fn ancestors(&self, v: VertexId) -> Vec<VertexId> {
        let mut out = Vec::new();
        let mut cur = v;
        while let Some(p) = self.parent[cur] {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Strict descendants of `v` (depth-first, deterministic order).
    pub fn descendants(&self, v: VertexId) -> Vec<VertexId> {
        let mut out = Vec::new();
        let mut stack: Vec<VertexId> = self.children[v].to_vec();
        while let Some(w) = stack.pop() {
            out.push(w);
            stack.extend_from_slice(&self.children[w]);
        }
        out.sort_unstable();
        out
    }

    /// All leaves, ascending by id.
    pub fn leaves(&self) -> &[VertexId] {
        &self.leaves
    }

    /// All internal vertices including the root.
    pub fn internal(&self) -> Vec<VertexId> {
        let mut out = self.internal_nonroot.clone();
        out.push(self.root);
        out.sort_unstable();
        out
    }

    /// Internal vertices other than the root.
    pub fn internal_nonroot(&self) -> &[VertexId] {
        &self.internal_nonroot
    }

    /// The operator of a vertex that must carry one (leaves and root).
    pub fn op_required(&self, v: VertexId) -> &CompositeOp {
        self.op[v]
            .as_ref()
            .expect("vertex guaranteed by validation to carry an operator")
    }

    // -- geometry -----------------------------------------------------------

    /// Separation ratio of an internal non-root vertex:
    /// `max_(e in ch(v)) |x_e - x_v| / min_(e in sb(v)) |x_e - x_v|`.
    /// An empty sibling set makes the denominator infinite and the ratio 0.
    pub fn xi(&self, v: VertexId) -> Result<f64, TreeError> {
        if v == self.root || self.is_leaf(v) {
            return Err(TreeError::XiUndefined(self.ids[v]));
        }
        let x_v = self.point[v];
        let spread = self
            .children[v]
            .iter()
            .map(|&e| self.point[e].dist(&x_v))
            .fold(0.0f64, f64::max);
        let gap = self
            .siblings(v)
            .iter()
            .map(|&e| self.point[e].dist(&x_v))
            .fold(f64::INFINITY, f64::min);
        if gap.is_infinite() {
            Ok(0.0)
        } else {
            Ok(spread / gap)
        }
    }

    // -- branches -----------------------------------------------------------

    /// One branch per leaf: the path of internal non-root vertices from the
    /// leaf's parent up to the child of the root (empty for a leaf hanging
    /// directly on the root).
    pub fn branches(&self) -> Vec<Branch> {
        self.leaves
            .iter()
            .map(|&leaf| {
                let mut path = self.ancestors(leaf);
                path.pop(); // drop the root
                Branch { leaf, path }
            })
            .collect()
    }

    /// Branches whose vertices all sit on the anchoring leaf's point.
    /// Exactly one exists per root child, so their number equals the degree
    /// of the root.
    pub fn constant_point_branches(&self) -> Vec<Branch> {
        let branches: Vec<Branch> = self
            .branches()
            .into_iter()
            .filter(|b| {
                let anchor = self.point[b.leaf];
                b.path.iter().all(|&v| self.point[v] == anchor)
            })
            .collect();
        debug_assert_eq!(branches.len(), self.children[self.root].len());
        branches
    }

    /// The deterministic default branch used when no branch is specified:
    /// among constant-point branches, the one whose top-down path sequence is
    /// lexicographically largest (so an empty path is chosen only when it is
    /// the sole option). Every valid tree has at least one constant-point
    /// branch.
    pub fn default_branch(&self) -> Branch {
        let mut candidates = self.constant_point_branches();
        candidates.sort_by(|a, b| {
            let top_a: Vec<VertexId> = a.path.iter().rev().copied().collect();
            let top_b: Vec<VertexId> = b.path.iter().rev().copied().collect();
            top_a.cmp(&top_b).then(b.leaf.cmp(&a.leaf))
        });
        candidates.pop().expect("valid trees always have a branch")
    }

    // -- grafts -------------------------------------------------------------

    /// Returns a new tree with an interaction leaf at point `y` attached per
    /// `mode` (see [`GraftMode`]). `new_op` is required by the two splitting
    /// modes and ignored by `AtVertex`. The result is fully revalidated, so
    /// a `y` coinciding with an existing leaf point surfaces as
    /// [`TreeError::CoincidentLeaves`].
    pub fn graft(
        &self,
        mode: GraftMode,
        v: VertexId,
        y: Point4,
        new_op: Option<CompositeOp>,
    ) -> Result<WeightedTree, TreeError> {
        if self.is_leaf(v) {
            return Err(TreeError::GraftAtLeaf(self.ids[v]));
        }
        let fresh = self.ids.iter().copied().max().unwrap_or(0) + 1;
        let mut spec: Vec<VertexSpec> = (0..self.ids.len())
            .map(|w| VertexSpec {
                id: self.ids[w],
                parent: self.parent[w].map(|p| self.ids[p]),
                point: self.point[w],
                op: self.op[w].clone(),
            })
            .collect();
        let leaf = |parent_id: u64| VertexSpec {
            id: fresh + 1,
            parent: Some(parent_id),
            point: y,
            op: Some(interaction_op()),
        };
        match mode {
            GraftMode::AtVertex => {
                let v_id = self.ids[v];
                spec.push(leaf(v_id));
            }
            GraftMode::AboveChild | GraftMode::BelowVertex => {
                let inserted_op = new_op.ok_or(TreeError::GraftNeedsOp)?;
                let (u_op, v_op) = match mode {
                    GraftMode::AboveChild => (Some(inserted_op), self.op[v].clone()),
                    _ => (self.op[v].clone(), Some(inserted_op)),
                };
                // New vertex u takes v's place under v's parent (or becomes
                // the new root), with v and the interaction leaf below it.
                spec.push(VertexSpec {
                    id: fresh,
                    parent: self.parent[v].map(|p| self.ids[p]),
                    point: self.point[v],
                    op: u_op,
                });
                spec[v].parent = Some(fresh);
                spec[v].op = v_op;
                spec.push(leaf(fresh));
            }
        }
        build_tree(&spec)
    }
}

// ---------------------------------------------------------------------------
