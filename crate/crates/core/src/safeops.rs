//! Interval-aware construction and variation.
//!
//! The safe builder grows each subtree bottom-up and only commits an operator
//! after its interval over the children is defined, so every tree it returns
//! carries a fully defined interval cache. Check-and-repair extends the same
//! idea to variation: after a subtree transplant, each ancestor of the splice
//! site is re-checked and, where its interval has become undefined, rewritten
//! to a same-arity operator that is defined there. Offspring that cannot be
//! repaired are rejected in favour of a copy of the first parent.

use crate::engine::{self, make_terminal, pick_terminal, BuildMethod, TerminalKind, VariationOutcome};
use crate::exprtree::{ExprNode, ExprTree, IntervalEnv, NodeId, NodeKind};
use crate::interval::{compute_interval, Interval};
use crate::ops::OperatorId;
use rand::seq::SliceRandom;
use rand::Rng;

/// Inputs to the safe builder.
#[derive(Debug, Clone, Copy)]
pub struct BuildContext<'a> {
    pub functions: &'a [OperatorId],
    pub terminals: &'a [TerminalKind],
    pub env: &'a IntervalEnv,
    pub maxdepth: usize,
    pub method: BuildMethod,
}

fn split_by_arity(functions: &[OperatorId]) -> (Vec<OperatorId>, Vec<OperatorId>) {
    functions.iter().partition(|op| op.is_binary())
}

/// Shuffles `candidates` and returns the first operator whose interval over
/// the child intervals is defined, with that interval. `right` must be
/// present for binary candidates.
fn select_operation<R: Rng>(
    candidates: &[OperatorId],
    left: Interval,
    right: Option<Interval>,
    rng: &mut R,
) -> Option<(OperatorId, Interval)> {
    let mut order = candidates.to_vec();
    order.shuffle(rng);
    for op in order {
        let iv = compute_interval(op, left, if op.is_binary() { right } else { None });
        if iv.is_defined() {
            return Some((op, iv));
        }
    }
    None
}

/// Builds a tree whose every node has a defined interval under `ctx.env`.
///
/// Children are built first; the operator over them is then drawn from the
/// arity-matching candidates that are defined on the children's intervals.
/// When one arity has no defined candidate the other is tried (building or
/// discarding a second child as needed), and when no operator at all fits,
/// the first child stands in for the whole subtree.
pub fn build_tree<R: Rng>(ctx: &BuildContext<'_>, rng: &mut R) -> ExprTree {
    assert!(!ctx.terminals.is_empty(), "terminal set must not be empty");
    let mut nodes = Vec::new();
    let root = build_rec(ctx, 1, rng, &mut nodes);
    ExprTree::from_arena(nodes, root)
}

fn build_rec<R: Rng>(
    ctx: &BuildContext<'_>,
    depth: usize,
    rng: &mut R,
    nodes: &mut Vec<ExprNode>,
) -> NodeId {
    let (binaries, unaries) = split_by_arity(ctx.functions);
    if ctx.functions.is_empty()
        || pick_terminal(
            depth,
            ctx.maxdepth,
            ctx.method,
            ctx.functions.len(),
            ctx.terminals.len(),
            rng,
        )
    {
        let (kind, interval) = make_terminal(ctx.terminals, ctx.env, rng);
        nodes.push(ExprNode {
            kind,
            left: None,
            right: None,
            interval,
        });
        return NodeId::new(nodes.len() - 1);
    }

    // Arity first (in proportion to the candidates), children next, operator
    // last, so the operator draw can see the children's intervals.
    let p_binary = binaries.len() as f64 / ctx.functions.len() as f64;
    let want_binary = rng.random::<f64>() < p_binary;
    let left = build_rec(ctx, depth + 1, rng, nodes);
    let left_iv = nodes[left.index()].interval;

    if want_binary {
        let mark = nodes.len();
        let right = build_rec(ctx, depth + 1, rng, nodes);
        let right_iv = nodes[right.index()].interval;
        if let Some((op, interval)) = select_operation(&binaries, left_iv, Some(right_iv), rng) {
            nodes.push(ExprNode {
                kind: NodeKind::Op(op),
                left: Some(left),
                right: Some(right),
                interval,
            });
            return NodeId::new(nodes.len() - 1);
        }
        // No binary operator is defined here: drop the second child and try
        // the unary candidates over the first.
        nodes.truncate(mark);
        if let Some((op, interval)) = select_operation(&unaries, left_iv, None, rng) {
            nodes.push(ExprNode {
                kind: NodeKind::Op(op),
                left: Some(left),
                right: None,
                interval,
            });
            return NodeId::new(nodes.len() - 1);
        }
    } else {
        if let Some((op, interval)) = select_operation(&unaries, left_iv, None, rng) {
            nodes.push(ExprNode {
                kind: NodeKind::Op(op),
                left: Some(left),
                right: None,
                interval,
            });
            return NodeId::new(nodes.len() - 1);
        }
        // No unary operator is defined here: build a sibling and try the
        // binary candidates instead.
        if !binaries.is_empty() {
            let mark = nodes.len();
            let right = build_rec(ctx, depth + 1, rng, nodes);
            let right_iv = nodes[right.index()].interval;
            if let Some((op, interval)) = select_operation(&binaries, left_iv, Some(right_iv), rng) {
                nodes.push(ExprNode {
                    kind: NodeKind::Op(op),
                    left: Some(left),
                    right: Some(right),
                    interval,
                });
                return NodeId::new(nodes.len() - 1);
            }
            nodes.truncate(mark);
        }
    }
    // No operator of either arity fits: the first child stands in.
    left
}

/// What check-and-repair did to a spliced tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepairReport {
    /// Every ancestor of the splice site ended with a defined interval.
    pub valid: bool,
    /// Number of ancestor operators rewritten.
    pub rewrites: usize,
}

/// Walks from the splice site's parent up to the root, recomputing each
/// ancestor's interval from its children's cached intervals. An ancestor
/// whose interval has become undefined is rewritten to a shuffled same-arity
/// operator that is defined there, when one exists. Caches along the path are
/// updated in place; the walk always continues to the root.
pub fn check_and_repair<R: Rng>(
    tree: &mut ExprTree,
    site: NodeId,
    functions: &[OperatorId],
    rng: &mut R,
) -> RepairReport {
    let (binaries, unaries) = split_by_arity(functions);
    let parents = tree.parent_map();
    let mut report = RepairReport {
        valid: true,
        rewrites: 0,
    };
    let mut cursor = parents[site.index()];
    while let Some(id) = cursor {
        let node = tree.node(id);
        let NodeKind::Op(op) = node.kind else {
            unreachable!("only operators have children");
        };
        let left_iv = tree.node(node.left.expect("operators have a first child")).interval;
        let right_iv = node.right.map(|r| tree.node(r).interval);
        let mut interval = compute_interval(op, left_iv, right_iv);
        if !interval.is_defined() {
            let candidates = if op.is_binary() { &binaries } else { &unaries };
            if let Some((new_op, new_iv)) = select_operation(candidates, left_iv, right_iv, rng) {
                tree.set_operator(id, new_op);
                interval = new_iv;
                report.rewrites += 1;
            } else {
                report.valid = false;
            }
        }
        tree.set_interval(id, interval);
        cursor = parents[id.index()];
    }
    report
}

/// Result of an interval-aware variation. When the offspring was rejected
/// (depth cap or unrepairable), `tree` is a copy of the first parent and
/// `site` is `None`.
#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub tree: ExprTree,
    pub site: Option<NodeId>,
    pub repaired: bool,
}

fn finish_variation<R: Rng>(
    parent: &ExprTree,
    out: VariationOutcome,
    functions: &[OperatorId],
    rng: &mut R,
) -> RepairOutcome {
    let Some(site) = out.site else {
        return RepairOutcome {
            tree: out.tree,
            site: None,
            repaired: false,
        };
    };
    let mut tree = out.tree;
    let report = check_and_repair(&mut tree, site, functions, rng);
    if report.valid {
        RepairOutcome {
            tree,
            site: Some(site),
            repaired: report.rewrites > 0,
        }
    } else {
        RepairOutcome {
            tree: parent.clone(),
            site: None,
            repaired: false,
        }
    }
}

/// Subtree crossover followed by check-and-repair. Both parents must carry
/// defined interval caches (in interval-aware mode every survivor does).
pub fn safe_crossover<R: Rng>(
    p1: &ExprTree,
    p2: &ExprTree,
    functions: &[OperatorId],
    max_depth: usize,
    rng: &mut R,
) -> RepairOutcome {
    let site = p1.node_id(rng.random_range(0..p1.size()));
    let donor_node = p2.node_id(rng.random_range(0..p2.size()));
    let out = engine::splice(p1, site, p2, donor_node, max_depth);
    finish_variation(p1, out, functions, rng)
}

/// Subtree mutation whose donor comes from the safe builder, followed by
/// check-and-repair. The site is drawn before the donor is built.
#[allow(clippy::too_many_arguments)]
pub fn safe_mutation<R: Rng>(
    p: &ExprTree,
    functions: &[OperatorId],
    terminals: &[TerminalKind],
    env: &IntervalEnv,
    donor_maxdepth: usize,
    max_depth: usize,
    rng: &mut R,
) -> RepairOutcome {
    let site = p.node_id(rng.random_range(0..p.size()));
    let donor = build_tree(
        &BuildContext {
            functions,
            terminals,
            env,
            maxdepth: donor_maxdepth,
            method: BuildMethod::Grow,
        },
        rng,
    );
    let out = engine::splice(p, site, &donor, donor.root(), max_depth);
    finish_variation(p, out, functions, rng)
}
