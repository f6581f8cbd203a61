//! Expression trees for symbolic regression models.
//!
//! Trees live in a flat arena ordered so that children always precede their
//! parent and the root is the last node. That single invariant lets
//! evaluation, interval propagation and metrics run as forward loops, and it
//! is preserved by every construction path (builders, parsing, subtree
//! replacement).
//!
//! Each node carries a cached execution interval. The cache is filled by
//! [`ExprTree::propagate_intervals`] (or by the interval-aware builders) and
//! holds whatever the last propagation produced, including `Undefined`.

use crate::interval::{compute_interval, Interval};
use crate::ops::OperatorId;
use std::fmt;

/// Index of a node within its owning tree's arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub(crate) fn new(index: usize) -> NodeId {
        NodeId(u32::try_from(index).expect("tree too large"))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Op(OperatorId),
    /// Zero-based feature index; rendered one-based (`x1`) in s-expressions.
    Feature(usize),
    /// Ephemeral constant, fixed at node creation. Always finite.
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExprNode {
    pub kind: NodeKind,
    pub left: Option<NodeId>,
    pub right: Option<NodeId>,
    /// Cached execution interval from the most recent propagation.
    pub interval: Interval,
}

/// Per-feature input intervals plus the range ephemeral constants are drawn
/// from. Every stored interval is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalEnv {
    features: Vec<Interval>,
    constant_range: Interval,
}

impl IntervalEnv {
    /// Default range for ephemeral constants.
    pub const DEFAULT_CONSTANT_RANGE: (f64, f64) = (-5.0, 5.0);

    pub fn new(features: Vec<Interval>) -> IntervalEnv {
        assert!(
            features.iter().all(Interval::is_defined),
            "interval environment entries must be defined"
        );
        let (lo, hi) = Self::DEFAULT_CONSTANT_RANGE;
        IntervalEnv {
            features,
            constant_range: Interval::new(lo, hi),
        }
    }

    /// Environment with every feature spanning `[lo, hi]`.
    pub fn uniform(num_features: usize, lo: f64, hi: f64) -> IntervalEnv {
        IntervalEnv::new(vec![Interval::new(lo, hi); num_features])
    }

    pub fn with_constant_range(mut self, range: Interval) -> IntervalEnv {
        assert!(range.is_defined(), "constant range must be defined");
        self.constant_range = range;
        self
    }

    pub fn feature(&self, index: usize) -> Interval {
        self.features
            .get(index)
            .copied()
            .unwrap_or_else(|| panic!("feature x{} missing from interval environment", index + 1))
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn constant_range(&self) -> Interval {
        self.constant_range
    }
}

/// Concrete evaluation semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSemantics {
    /// Plain IEEE arithmetic; NaN and infinity propagate freely.
    Unprotected,
    /// Koza-style protection: `x / 0 = 1`, `log(x) = ln|x|` with `log(0) = 0`.
    Protected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExprTree {
    nodes: Vec<ExprNode>,
    root: NodeId,
}

impl ExprTree {
    /// Wraps a raw arena. Callers must push children before parents with the
    /// root last; this is checked in debug builds.
    pub(crate) fn from_arena(nodes: Vec<ExprNode>, root: NodeId) -> ExprTree {
        debug_assert!(!nodes.is_empty());
        debug_assert_eq!(root.index(), nodes.len() - 1, "root must be the last node");
        debug_assert!(nodes.iter().enumerate().all(|(i, n)| {
            n.left.map_or(true, |c| c.index() < i) && n.right.map_or(true, |c| c.index() < i)
        }));
        ExprTree { nodes, root }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &ExprNode {
        &self.nodes[id.index()]
    }

    /// Arena view: postorder, children before parents, root last.
    pub fn nodes(&self) -> &[ExprNode] {
        &self.nodes
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// The `index`-th node in arena order. Panics when out of range.
    pub fn node_id(&self, index: usize) -> NodeId {
        assert!(index < self.nodes.len());
        NodeId::new(index)
    }

    pub(crate) fn set_operator(&mut self, id: NodeId, op: OperatorId) {
        debug_assert!(matches!(self.nodes[id.index()].kind, NodeKind::Op(_)));
        self.nodes[id.index()].kind = NodeKind::Op(op);
    }

    pub(crate) fn set_interval(&mut self, id: NodeId, interval: Interval) {
        self.nodes[id.index()].interval = interval;
    }

    /// Longest root-to-leaf path counted in nodes; a lone terminal has
    /// depth 1.
    pub fn depth(&self) -> usize {
        let mut depths = vec![1usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let l = node.left.map_or(0, |c| depths[c.index()]);
            let r = node.right.map_or(0, |c| depths[c.index()]);
            depths[i] = 1 + l.max(r);
        }
        depths[self.root.index()]
    }

    /// Parent of each node; the root maps to `None`.
    pub fn parent_map(&self) -> Vec<Option<NodeId>> {
        let mut parents = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for child in [node.left, node.right].into_iter().flatten() {
                parents[child.index()] = Some(NodeId::new(i));
            }
        }
        parents
    }

    /// Evaluates the tree on one input row. The row must cover every feature
    /// index used by the tree. The result may be non-finite; callers decide
    /// what that means.
    pub fn evaluate(&self, row: &[f64], semantics: EvalSemantics) -> f64 {
        let mut scratch = Vec::new();
        self.evaluate_into(row, semantics, &mut scratch)
    }

    /// As [`evaluate`](Self::evaluate), reusing a scratch buffer across calls.
    pub fn evaluate_into(&self, row: &[f64], semantics: EvalSemantics, scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.resize(self.nodes.len(), 0.0);
        for (i, node) in self.nodes.iter().enumerate() {
            scratch[i] = match node.kind {
                NodeKind::Feature(f) => row[f],
                NodeKind::Const(v) => v,
                NodeKind::Op(op) => {
                    let l = scratch[node.left.expect("operator node missing left child").index()];
                    if op.is_binary() {
                        let r = scratch[node.right.expect("binary node missing right child").index()];
                        apply_binary(op, l, r, semantics)
                    } else {
                        apply_unary(op, l, semantics)
                    }
                }
            };
        }
        scratch[self.root.index()]
    }

    /// Recomputes every cached interval bottom-up from the environment.
    /// Returns true when the tree is interval-valid, i.e. every cache (and in
    /// particular the root) is defined. Undefined absorbs upward, so the root
    /// is undefined exactly when any node is.
    pub fn propagate_intervals(&mut self, env: &IntervalEnv) -> bool {
        for i in 0..self.nodes.len() {
            let iv = match self.nodes[i].kind {
                NodeKind::Feature(f) => env.feature(f),
                NodeKind::Const(v) => Interval::point(v),
                NodeKind::Op(op) => {
                    let ab = self.nodes[self.nodes[i].left.unwrap().index()].interval;
                    let cd = self.nodes[i].right.map(|c| self.nodes[c.index()].interval);
                    compute_interval(op, ab, cd)
                }
            };
            self.nodes[i].interval = iv;
        }
        self.nodes[self.root.index()].interval.is_defined()
    }

    /// Copies the subtree rooted at `id` into a standalone tree, cached
    /// intervals included.
    pub fn subtree(&self, id: NodeId) -> ExprTree {
        let mut nodes = Vec::new();
        let root = copy_subtree(&self.nodes, id, &mut nodes);
        ExprTree::from_arena(nodes, root)
    }

    /// Returns a copy of `self` with the subtree at `site` replaced by the
    /// subtree of `donor` rooted at `donor_node`, along with the id of the
    /// replacement's root in the new tree. Cached intervals are carried over
    /// from both sources.
    pub fn with_replaced_subtree(
        &self,
        site: NodeId,
        donor: &ExprTree,
        donor_node: NodeId,
    ) -> (ExprTree, NodeId) {
        let mut nodes = Vec::new();
        let mut new_site = None;
        let root = replace_rec(&self.nodes, self.root, site, donor, donor_node, &mut nodes, &mut new_site);
        let tree = ExprTree::from_arena(nodes, root);
        (tree, new_site.expect("replacement site not reached"))
    }

    /// Structural equality: same shape, operators, features and constant
    /// values, ignoring cached intervals.
    pub fn same_structure(&self, other: &ExprTree) -> bool {
        fn eq(a: &ExprTree, ai: NodeId, b: &ExprTree, bi: NodeId) -> bool {
            let (na, nb) = (a.node(ai), b.node(bi));
            if na.kind != nb.kind {
                return false;
            }
            match (na.left, nb.left) {
                (Some(la), Some(lb)) if eq(a, la, b, lb) => {}
                (None, None) => {}
                _ => return false,
            }
            match (na.right, nb.right) {
                (Some(ra), Some(rb)) => eq(a, ra, b, rb),
                (None, None) => true,
                _ => false,
            }
        }
        eq(self, self.root, other, other.root)
    }

    /// Renders the tree in s-expression form, e.g. `(div x1 (add 0.5 x2))`.
    /// Constants print in shortest round-trip form, so parsing the output
    /// reproduces the tree exactly.
    pub fn to_sexpr(&self) -> String {
        let mut out = String::new();
        write_sexpr(self, self.root, &mut out);
        out
    }

    /// Parses the s-expression format produced by [`to_sexpr`](Self::to_sexpr).
    pub fn parse_sexpr(input: &str) -> Result<ExprTree, SexprParseError> {
        parse_sexpr(input)
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sexpr())
    }
}

fn apply_binary(op: OperatorId, l: f64, r: f64, semantics: EvalSemantics) -> f64 {
    match op {
        OperatorId::Add => l + r,
        OperatorId::Sub => l - r,
        OperatorId::Mul => l * r,
        OperatorId::Div => {
            if semantics == EvalSemantics::Protected && r == 0.0 {
                1.0
            } else {
                l / r
            }
        }
        _ => unreachable!(),
    }
}

fn apply_unary(op: OperatorId, l: f64, semantics: EvalSemantics) -> f64 {
    match op {
        OperatorId::Sin => l.sin(),
        OperatorId::Cos => l.cos(),
        OperatorId::Exp => l.exp(),
        OperatorId::Log => match semantics {
            EvalSemantics::Unprotected => l.ln(),
            EvalSemantics::Protected => {
                if l == 0.0 {
                    0.0
                } else {
                    l.abs().ln()
                }
            }
        },
        _ => unreachable!(),
    }
}

fn copy_subtree(src: &[ExprNode], id: NodeId, out: &mut Vec<ExprNode>) -> NodeId {
    let node = &src[id.index()];
    let left = node.left.map(|c| copy_subtree(src, c, out));
    let right = node.right.map(|c| copy_subtree(src, c, out));
    out.push(ExprNode {
        kind: node.kind,
        left,
        right,
        interval: node.interval,
    });
    NodeId::new(out.len() - 1)
}

#[allow(clippy::too_many_arguments)]
fn replace_rec(
    src: &[ExprNode],
    id: NodeId,
    site: NodeId,
    donor: &ExprTree,
    donor_node: NodeId,
    out: &mut Vec<ExprNode>,
    new_site: &mut Option<NodeId>,
) -> NodeId {
    if id == site {
        let new_id = copy_subtree(donor.nodes(), donor_node, out);
        *new_site = Some(new_id);
        return new_id;
    }
    let node = &src[id.index()];
    let left = node.left.map(|c| replace_rec(src, c, site, donor, donor_node, out, new_site));
    let right = node.right.map(|c| replace_rec(src, c, site, donor, donor_node, out, new_site));
    out.push(ExprNode {
        kind: node.kind,
        left,
        right,
        interval: node.interval,
    });
    NodeId::new(out.len() - 1)
}

fn write_sexpr(tree: &ExprTree, id: NodeId, out: &mut String) {
    use std::fmt::Write;
    let node = tree.node(id);
    match node.kind {
        NodeKind::Feature(f) => {
            let _ = write!(out, "x{}", f + 1);
        }
        NodeKind::Const(v) => {
            let _ = write!(out, "{v}");
        }
        NodeKind::Op(op) => {
            let _ = write!(out, "({}", op.token());
            for child in [node.left, node.right].into_iter().flatten() {
                out.push(' ');
                write_sexpr(tree, child, out);
            }
            out.push(')');
        }
    }
}

/// Parse failure, pointing at the first offending token.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {pos} near '{token}': {message}")]
pub struct SexprParseError {
    /// Byte offset of the offending token in the input.
    pub pos: usize,
    /// The offending token, or "end of input".
    pub token: String,
    pub message: String,
}

impl SexprParseError {
    fn new(pos: usize, token: impl Into<String>, message: impl Into<String>) -> SexprParseError {
        SexprParseError {
            pos,
            token: token.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Token<'a> {
    pos: usize,
    text: &'a str,
}

fn tokenize(input: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let bytes = input.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' || c == ')' {
            tokens.push(Token {
                pos: i,
                text: &input[i..i + 1],
            });
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() {
                let c = bytes[i] as char;
                if c.is_whitespace() || c == '(' || c == ')' {
                    break;
                }
                i += 1;
            }
            tokens.push(Token {
                pos: start,
                text: &input[start..i],
            });
        }
    }
    tokens
}

fn parse_sexpr(input: &str) -> Result<ExprTree, SexprParseError> {
    let tokens = tokenize(input);
    let mut nodes = Vec::new();
    let mut pos = 0usize;
    let root = parse_expr(input, &tokens, &mut pos, &mut nodes)?;
    if pos != tokens.len() {
        let t = &tokens[pos];
        return Err(SexprParseError::new(
            t.pos,
            t.text,
            "expected end of input after expression",
        ));
    }
    Ok(ExprTree::from_arena(nodes, root))
}

fn parse_expr(
    input: &str,
    tokens: &[Token<'_>],
    pos: &mut usize,
    nodes: &mut Vec<ExprNode>,
) -> Result<NodeId, SexprParseError> {
    let Some(token) = tokens.get(*pos) else {
        return Err(SexprParseError::new(input.len(), "end of input", "expected an expression"));
    };
    *pos += 1;
    match token.text {
        "(" => {
            let Some(op_token) = tokens.get(*pos) else {
                return Err(SexprParseError::new(input.len(), "end of input", "expected an operator"));
            };
            let Some(op) = OperatorId::from_token(op_token.text) else {
                return Err(SexprParseError::new(op_token.pos, op_token.text, "unknown operator"));
            };
            *pos += 1;
            let left = parse_expr(input, tokens, pos, nodes)?;
            let right = if op.is_binary() {
                Some(parse_expr(input, tokens, pos, nodes)?)
            } else {
                None
            };
            let Some(close) = tokens.get(*pos) else {
                return Err(SexprParseError::new(input.len(), "end of input", "expected ')'"));
            };
            if close.text != ")" {
                return Err(SexprParseError::new(
                    close.pos,
                    close.text,
                    format!("expected ')' to close '{}' (arity {})", op.token(), op.arity()),
                ));
            }
            *pos += 1;
            nodes.push(ExprNode {
                kind: NodeKind::Op(op),
                left: Some(left),
                right,
                interval: Interval::Undefined,
            });
            Ok(NodeId::new(nodes.len() - 1))
        }
        ")" => Err(SexprParseError::new(token.pos, token.text, "expected an expression")),
        atom => {
            let kind = parse_atom(atom)
                .ok_or_else(|| SexprParseError::new(token.pos, atom, "expected a feature, constant or '('"))?;
            nodes.push(ExprNode {
                kind,
                left: None,
                right: None,
                interval: Interval::Undefined,
            });
            Ok(NodeId::new(nodes.len() - 1))
        }
    }
}

fn parse_atom(atom: &str) -> Option<NodeKind> {
    if let Some(rest) = atom.strip_prefix('x') {
        if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
            let k: usize = rest.parse().ok()?;
            if k == 0 {
                return None;
            }
            return Some(NodeKind::Feature(k - 1));
        }
    }
    let v: f64 = atom.parse().ok()?;
    v.is_finite().then_some(NodeKind::Const(v))
}
