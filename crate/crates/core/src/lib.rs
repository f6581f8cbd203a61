//! Genetic programming for symbolic regression with interval-arithmetic
//! safety analysis.
//!
//! The library propagates closed intervals through expression trees to decide,
//! before any data is touched, whether a candidate model can fault (divide
//! across zero, take the log of a non-positive range, overflow) anywhere in
//! its input domain. That analysis is available in two strengths:
//!
//! * as a static filter that discards unsafe models after the fact
//!   ([`SafetyMode::IntervalStatic`]), and
//! * wired into the search operators themselves, so initialisation builds
//!   only safe trees and variation repairs unsafe offspring in place
//!   ([`SafetyMode::IntervalAware`]).
//!
//! [`harness`] runs the full experimental protocol: benchmark problems,
//! repeated seeded runs, per-generation traces, medians with order-statistic
//! confidence intervals, and a Friedman rank test across problems.

pub mod engine;
pub mod exprtree;
pub mod harness;
pub mod interval;
pub mod ops;
pub mod problems;
pub mod safeops;
pub mod stats;

pub use engine::{Fitness, GpConfig, Individual, SafetyMode, Validity};
pub use exprtree::{EvalSemantics, ExprNode, ExprTree, IntervalEnv, NodeId, NodeKind};
pub use interval::{compute_interval, Interval};
pub use ops::OperatorId;
pub use problems::{Dataset, IntervalSource, Problem, SyntheticProblem};
