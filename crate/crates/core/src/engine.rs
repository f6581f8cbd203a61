//! The genetic-programming engine: fitness, initialisation, selection,
//! variation and the generational loop.
//!
//! The engine runs in one of four safety modes. `Unprotected` and `Protected`
//! differ only in concrete arithmetic. `IntervalStatic` additionally
//! propagates input intervals through every candidate and discards (as
//! invalid) any tree whose analysis comes back undefined. `IntervalAware`
//! goes further: initialisation builds only interval-valid trees and
//! variation repairs offspring in place (see [`crate::safeops`]).
//!
//! All randomness flows through a single caller-supplied RNG, so a run is a
//! pure function of its configuration, problem data and seed.

use crate::exprtree::{EvalSemantics, ExprNode, ExprTree, IntervalEnv, NodeKind};
use crate::interval::Interval;
use crate::ops::OperatorId;
use crate::problems::{Dataset, Problem};
use crate::safeops;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// How the engine guards against undefined arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SafetyMode {
    /// Plain IEEE arithmetic; models faulting on training data score invalid.
    Unprotected,
    /// Koza-style protected division and log.
    Protected,
    /// Interval propagation as a static filter before concrete evaluation.
    IntervalStatic,
    /// Interval propagation inside initialisation and variation.
    IntervalAware,
}

impl SafetyMode {
    pub const ALL: [SafetyMode; 4] = [
        SafetyMode::Unprotected,
        SafetyMode::Protected,
        SafetyMode::IntervalStatic,
        SafetyMode::IntervalAware,
    ];

    pub fn semantics(self) -> EvalSemantics {
        match self {
            SafetyMode::Protected => EvalSemantics::Protected,
            _ => EvalSemantics::Unprotected,
        }
    }

    /// Whether candidates are interval-checked before concrete evaluation.
    pub fn uses_intervals(self) -> bool {
        matches!(self, SafetyMode::IntervalStatic | SafetyMode::IntervalAware)
    }

    pub fn name(self) -> &'static str {
        match self {
            SafetyMode::Unprotected => "unprotected",
            SafetyMode::Protected => "protected",
            SafetyMode::IntervalStatic => "interval-static",
            SafetyMode::IntervalAware => "interval-aware",
        }
    }
}

impl fmt::Display for SafetyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SafetyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<SafetyMode, String> {
        SafetyMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown safety mode '{s}' (expected one of: unprotected, protected, interval-static, interval-aware)"))
    }
}

/// Minimised fitness. `Invalid` marks models that could not be scored and
/// orders after every finite value, so selection always prefers a scored
/// model. `Finite` never holds a non-finite number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fitness {
    Finite(f64),
    Invalid,
}

impl Fitness {
    pub fn value(self) -> Option<f64> {
        match self {
            Fitness::Finite(v) => Some(v),
            Fitness::Invalid => None,
        }
    }

    pub fn is_invalid(self) -> bool {
        self == Fitness::Invalid
    }
}

impl Eq for Fitness {}

impl PartialOrd for Fitness {
    fn partial_cmp(&self, other: &Fitness) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Fitness {
    fn cmp(&self, other: &Fitness) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self, other) {
            (Fitness::Finite(a), Fitness::Finite(b)) => a.total_cmp(b),
            (Fitness::Finite(_), Fitness::Invalid) => Ordering::Less,
            (Fitness::Invalid, Fitness::Finite(_)) => Ordering::Greater,
            (Fitness::Invalid, Fitness::Invalid) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Fitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fitness::Finite(v) => write!(f, "{v}"),
            Fitness::Invalid => f.write_str("invalid"),
        }
    }
}

/// Why (or whether) a model was scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Valid,
    /// Concrete evaluation produced a non-finite prediction (or the response
    /// had no variance to normalise by).
    EvalError,
    /// Interval analysis found the tree undefined somewhere in the input box.
    IntervalError,
}

#[derive(Debug, Clone)]
pub struct Individual {
    pub tree: ExprTree,
    pub fitness: Fitness,
    pub validity: Validity,
    /// Test-set fitness, computed lazily for generation champions only.
    pub test_fitness: Option<Fitness>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GpConfigError {
    #[error("{0} must be positive")]
    NonPositiveCount(&'static str),
    #[error("mutation_prob ({mutation}) and crossover_prob ({crossover}) must be probabilities summing to 1")]
    BadVariationProbabilities { mutation: f64, crossover: f64 },
    #[error("initial depth range [{min}, {max}] is invalid")]
    BadInitialDepths { min: usize, max: usize },
    #[error("erc_range [{0}, {1}] is invalid")]
    BadErcRange(f64, f64),
    #[error("elitism ({elitism}) must be smaller than population_size ({population})")]
    ElitismTooLarge { elitism: usize, population: usize },
}

/// Engine parameters. `Default` gives the standard configuration:
/// population 200, 250 generations, ramped half-and-half over depths 2..6,
/// 70% subtree mutation (depth-4 subtrees) vs 30% subtree crossover,
/// offspring depth cap 17, tournament size 3, one elite, constants drawn
/// uniformly from [-5, 5].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub population_size: usize,
    pub generations: usize,
    pub min_initial_depth: usize,
    pub max_initial_depth: usize,
    pub mutation_prob: f64,
    pub crossover_prob: f64,
    pub mutation_subtree_max_depth: usize,
    pub max_offspring_depth: usize,
    pub tournament_size: usize,
    pub elitism: usize,
    pub erc_range: [f64; 2],
    pub mode: SafetyMode,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> GpConfig {
        GpConfig {
            population_size: 200,
            generations: 250,
            min_initial_depth: 2,
            max_initial_depth: 6,
            mutation_prob: 0.7,
            crossover_prob: 0.3,
            mutation_subtree_max_depth: 4,
            max_offspring_depth: 17,
            tournament_size: 3,
            elitism: 1,
            erc_range: [-5.0, 5.0],
            mode: SafetyMode::Unprotected,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), GpConfigError> {
        for (name, v) in [
            ("population_size", self.population_size),
            ("generations", self.generations),
            ("min_initial_depth", self.min_initial_depth),
            ("max_initial_depth", self.max_initial_depth),
            ("mutation_subtree_max_depth", self.mutation_subtree_max_depth),
            ("max_offspring_depth", self.max_offspring_depth),
            ("tournament_size", self.tournament_size),
        ] {
            if v == 0 {
                return Err(GpConfigError::NonPositiveCount(name));
            }
        }
        if self.min_initial_depth > self.max_initial_depth {
            return Err(GpConfigError::BadInitialDepths {
                min: self.min_initial_depth,
                max: self.max_initial_depth,
            });
        }
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !in_unit(self.mutation_prob)
            || !in_unit(self.crossover_prob)
            || (self.mutation_prob + self.crossover_prob - 1.0).abs() > 1e-9
        {
            return Err(GpConfigError::BadVariationProbabilities {
                mutation: self.mutation_prob,
                crossover: self.crossover_prob,
            });
        }
        let [lo, hi] = self.erc_range;
        if !Interval::new(lo, hi).is_defined() {
            return Err(GpConfigError::BadErcRange(lo, hi));
        }
        if self.elitism >= self.population_size {
            return Err(GpConfigError::ElitismTooLarge {
                elitism: self.elitism,
                population: self.population_size,
            });
        }
        Ok(())
    }
}

/// A terminal the initialiser may emit: an input feature or a fresh
/// ephemeral constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalKind {
    Feature(usize),
    Erc,
}

/// One terminal descriptor per feature plus the constant generator.
pub fn default_terminals(num_features: usize) -> Vec<TerminalKind> {
    let mut t: Vec<TerminalKind> = (0..num_features).map(TerminalKind::Feature).collect();
    t.push(TerminalKind::Erc);
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildMethod {
    Grow,
    Full,
}

/// Terminal decision shared by the standard and interval-aware builders:
/// always a terminal at the depth limit; below it, full never stops early
/// while grow stops with probability |T| / (|T| + |F|).
pub fn pick_terminal<R: Rng>(
    depth: usize,
    maxdepth: usize,
    method: BuildMethod,
    num_functions: usize,
    num_terminals: usize,
    rng: &mut R,
) -> bool {
    if depth >= maxdepth {
        return true;
    }
    match method {
        BuildMethod::Full => false,
        BuildMethod::Grow => {
            let p = num_terminals as f64 / (num_terminals + num_functions) as f64;
            rng.random::<f64>() < p
        }
    }
}

pub(crate) fn make_terminal<R: Rng>(
    terminals: &[TerminalKind],
    env: &IntervalEnv,
    rng: &mut R,
) -> (NodeKind, Interval) {
    match terminals[rng.random_range(0..terminals.len())] {
        TerminalKind::Feature(i) => (NodeKind::Feature(i), env.feature(i)),
        TerminalKind::Erc => {
            let (lo, hi) = env.constant_range().bounds().expect("constant range is defined");
            let v = rng.random_range(lo..=hi);
            (NodeKind::Const(v), Interval::point(v))
        }
    }
}

/// Standard grow initialisation (no interval logic; caches left unset).
pub fn grow_tree<R: Rng>(
    functions: &[OperatorId],
    terminals: &[TerminalKind],
    env: &IntervalEnv,
    maxdepth: usize,
    rng: &mut R,
) -> ExprTree {
    standard_tree(functions, terminals, env, maxdepth, BuildMethod::Grow, rng)
}

/// Standard full initialisation: every leaf sits at the depth limit.
pub fn full_tree<R: Rng>(
    functions: &[OperatorId],
    terminals: &[TerminalKind],
    env: &IntervalEnv,
    maxdepth: usize,
    rng: &mut R,
) -> ExprTree {
    standard_tree(functions, terminals, env, maxdepth, BuildMethod::Full, rng)
}

fn standard_tree<R: Rng>(
    functions: &[OperatorId],
    terminals: &[TerminalKind],
    env: &IntervalEnv,
    maxdepth: usize,
    method: BuildMethod,
    rng: &mut R,
) -> ExprTree {
    assert!(!terminals.is_empty(), "terminal set must not be empty");
    let mut nodes = Vec::new();
    let root = standard_rec(functions, terminals, env, 1, maxdepth, method, rng, &mut nodes);
    ExprTree::from_arena(nodes, root)
}

#[allow(clippy::too_many_arguments)]
fn standard_rec<R: Rng>(
    functions: &[OperatorId],
    terminals: &[TerminalKind],
    env: &IntervalEnv,
    depth: usize,
    maxdepth: usize,
    method: BuildMethod,
    rng: &mut R,
    nodes: &mut Vec<ExprNode>,
) -> crate::exprtree::NodeId {
    if functions.is_empty()
        || pick_terminal(depth, maxdepth, method, functions.len(), terminals.len(), rng)
    {
        let (kind, _) = make_terminal(terminals, env, rng);
        nodes.push(ExprNode {
            kind,
            left: None,
            right: None,
            interval: Interval::Undefined,
        });
    } else {
        let op = functions[rng.random_range(0..functions.len())];
        let left = standard_rec(functions, terminals, env, depth + 1, maxdepth, method, rng, nodes);
        let right = op
            .is_binary()
            .then(|| standard_rec(functions, terminals, env, depth + 1, maxdepth, method, rng, nodes));
        nodes.push(ExprNode {
            kind: NodeKind::Op(op),
            left: Some(left),
            right,
            interval: Interval::Undefined,
        });
    }
    crate::exprtree::NodeId::new(nodes.len() - 1)
}

/// Ramped half-and-half initial population: depth limits cycle over the
/// configured range, alternating grow and full. In interval-aware mode every
/// tree comes from the safe builder and is interval-valid by construction.
pub fn ramped_half_and_half<R: Rng>(
    cfg: &GpConfig,
    env: &IntervalEnv,
    rng: &mut R,
) -> Vec<ExprTree> {
    let terminals = default_terminals(env.num_features());
    let span = cfg.max_initial_depth - cfg.min_initial_depth + 1;
    (0..cfg.population_size)
        .map(|i| {
            let maxdepth = cfg.min_initial_depth + (i / 2) % span;
            let method = if i % 2 == 0 { BuildMethod::Grow } else { BuildMethod::Full };
            if cfg.mode == SafetyMode::IntervalAware {
                safeops::build_tree(
                    &safeops::BuildContext {
                        functions: &OperatorId::ALL,
                        terminals: &terminals,
                        env,
                        maxdepth,
                        method,
                    },
                    rng,
                )
            } else {
                standard_tree(&OperatorId::ALL, &terminals, env, maxdepth, method, rng)
            }
        })
        .collect()
}

/// Root relative squared error of predictions against responses:
/// sqrt(sum (y - yhat)^2 / sum (y - mean(y))^2). The mean predictor scores
/// exactly 1. Returns `Invalid` for any non-finite prediction, a zero-variance
/// response, or an overflowing ratio.
pub fn rrse(y: &[f64], yhat: &[f64]) -> Fitness {
    assert_eq!(y.len(), yhat.len(), "response and prediction lengths differ");
    assert!(y.len() >= 2, "rrse needs at least two rows");
    if yhat.iter().any(|v| !v.is_finite()) {
        return Fitness::Invalid;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (yi, pi) in y.iter().zip(yhat) {
        num += (yi - pi) * (yi - pi);
        den += (yi - mean) * (yi - mean);
    }
    if den == 0.0 {
        return Fitness::Invalid;
    }
    let v = (num / den).sqrt();
    if v.is_finite() {
        Fitness::Finite(v)
    } else {
        Fitness::Invalid
    }
}

/// Scores a tree on the training set under the given mode. Interval modes
/// propagate first and skip concrete evaluation entirely when the analysis
/// comes back undefined.
pub fn evaluate_fitness(
    mut tree: ExprTree,
    train: &Dataset,
    env: &IntervalEnv,
    mode: SafetyMode,
) -> Individual {
    if mode.uses_intervals() && !tree.propagate_intervals(env) {
        return Individual {
            tree,
            fitness: Fitness::Invalid,
            validity: Validity::IntervalError,
            test_fitness: None,
        };
    }
    let semantics = mode.semantics();
    let mut scratch = Vec::new();
    let preds: Vec<f64> = (0..train.num_rows())
        .map(|i| tree.evaluate_into(train.row(i), semantics, &mut scratch))
        .collect();
    let fitness = rrse(train.response(), &preds);
    let validity = if fitness.is_invalid() { Validity::EvalError } else { Validity::Valid };
    Individual {
        tree,
        fitness,
        validity,
        test_fitness: None,
    }
}

/// Fitness of a tree on an arbitrary dataset (used for test-set reporting).
pub fn dataset_rrse(tree: &ExprTree, data: &Dataset, mode: SafetyMode) -> Fitness {
    let semantics = mode.semantics();
    let mut scratch = Vec::new();
    let preds: Vec<f64> = (0..data.num_rows())
        .map(|i| tree.evaluate_into(data.row(i), semantics, &mut scratch))
        .collect();
    rrse(data.response(), &preds)
}

/// Tournament selection: draws `k` contenders uniformly with replacement and
/// returns the index of the fittest; ties go to the earliest drawn.
pub fn tournament_select<R: Rng>(pop: &[Individual], k: usize, rng: &mut R) -> usize {
    assert!(!pop.is_empty() && k > 0);
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..k {
        let i = rng.random_range(0..pop.len());
        if pop[i].fitness < pop[best].fitness {
            best = i;
        }
    }
    best
}

/// Index of the fittest individual; ties go to the lowest index.
pub fn best_index(pop: &[Individual]) -> usize {
    let mut best = 0;
    for i in 1..pop.len() {
        if pop[i].fitness < pop[best].fitness {
            best = i;
        }
    }
    best
}

/// Result of a variation operator. `site` is the root of the transplanted
/// subtree in `tree`, or `None` when the offspring broke the depth cap and a
/// copy of the first parent was returned instead.
#[derive(Debug, Clone)]
pub struct VariationOutcome {
    pub tree: ExprTree,
    pub site: Option<crate::exprtree::NodeId>,
}

pub(crate) fn splice(
    host: &ExprTree,
    site: crate::exprtree::NodeId,
    donor: &ExprTree,
    donor_node: crate::exprtree::NodeId,
    max_depth: usize,
) -> VariationOutcome {
    let (tree, new_site) = host.with_replaced_subtree(site, donor, donor_node);
    if tree.depth() > max_depth {
        VariationOutcome {
            tree: host.clone(),
            site: None,
        }
    } else {
        VariationOutcome {
            tree,
            site: Some(new_site),
        }
    }
}

/// Subtree crossover: a uniformly chosen subtree of `p2` replaces a uniformly
/// chosen subtree of a copy of `p1`. Offspring deeper than `max_depth` are
/// discarded in favour of a copy of `p1`.
pub fn subtree_crossover<R: Rng>(
    p1: &ExprTree,
    p2: &ExprTree,
    max_depth: usize,
    rng: &mut R,
) -> VariationOutcome {
    let site = p1.node_id(rng.random_range(0..p1.size()));
    let donor_node = p2.node_id(rng.random_range(0..p2.size()));
    splice(p1, site, p2, donor_node, max_depth)
}

/// Subtree mutation: a uniformly chosen subtree of a copy of `p` is replaced
/// by a freshly built subtree from `build_donor`. The site is drawn before
/// the donor is built. Offspring deeper than `max_depth` are discarded in
/// favour of a copy of `p`.
pub fn subtree_mutation<R: Rng>(
    p: &ExprTree,
    max_depth: usize,
    rng: &mut R,
    build_donor: impl FnOnce(&mut R) -> ExprTree,
) -> VariationOutcome {
    let site = p.node_id(rng.random_range(0..p.size()));
    let donor = build_donor(rng);
    splice(p, site, &donor, donor.root(), max_depth)
}

/// Per-generation record. `best_*` fields describe the training champion of
/// the generation; `best_test` is that champion's test-set fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_train: Fitness,
    pub best_test: Fitness,
    pub invalid_proportion: f64,
    pub best_size: usize,
    pub best_depth: usize,
    pub mean_size: f64,
    pub mean_depth: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub stats: Vec<GenerationStats>,
    pub champion: Individual,
}

/// Runs one seeded GP search. The trace has exactly `cfg.generations`
/// entries; entry 0 describes the initial population. The champion is the
/// final generation's training-best individual.
pub fn run<R: Rng>(cfg: &GpConfig, problem: &Problem, rng: &mut R) -> RunTrace {
    cfg.validate().expect("invalid GP configuration");
    let env = problem
        .env
        .clone()
        .with_constant_range(Interval::new(cfg.erc_range[0], cfg.erc_range[1]));
    let mut pop: Vec<Individual> = ramped_half_and_half(cfg, &env, rng)
        .into_iter()
        .map(|t| evaluate_fitness(t, &problem.train, &env, cfg.mode))
        .collect();
    let mut trace = Vec::with_capacity(cfg.generations);
    for generation in 0..cfg.generations {
        trace.push(record_generation(generation, &mut pop, problem, cfg.mode));
        if generation + 1 < cfg.generations {
            pop = next_generation(cfg, &pop, problem, &env, rng);
        }
    }
    let champion = pop[best_index(&pop)].clone();
    RunTrace { stats: trace, champion }
}

fn record_generation(
    generation: usize,
    pop: &mut [Individual],
    problem: &Problem,
    mode: SafetyMode,
) -> GenerationStats {
    let best = best_index(pop);
    if pop[best].test_fitness.is_none() {
        let tf = dataset_rrse(&pop[best].tree, &problem.test, mode);
        pop[best].test_fitness = Some(tf);
    }
    let invalid = pop.iter().filter(|i| i.validity != Validity::Valid).count();
    let (mut size_sum, mut depth_sum) = (0usize, 0usize);
    for ind in pop.iter() {
        size_sum += ind.tree.size();
        depth_sum += ind.tree.depth();
    }
    let champ = &pop[best];
    GenerationStats {
        generation,
        best_train: champ.fitness,
        best_test: champ.test_fitness.expect("just computed"),
        invalid_proportion: invalid as f64 / pop.len() as f64,
        best_size: champ.tree.size(),
        best_depth: champ.tree.depth(),
        mean_size: size_sum as f64 / pop.len() as f64,
        mean_depth: depth_sum as f64 / pop.len() as f64,
    }
}

fn next_generation<R: Rng>(
    cfg: &GpConfig,
    pop: &[Individual],
    problem: &Problem,
    env: &IntervalEnv,
    rng: &mut R,
) -> Vec<Individual> {
    let mut next = Vec::with_capacity(cfg.population_size);
    // Elites carry their stored fitness; they are not re-evaluated.
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by_key(|&i| pop[i].fitness);
    for &i in order.iter().take(cfg.elitism) {
        next.push(pop[i].clone());
    }
    let terminals = default_terminals(env.num_features());
    while next.len() < cfg.population_size {
        let offspring = breed(cfg, pop, env, &terminals, rng);
        next.push(evaluate_fitness(offspring, &problem.train, env, cfg.mode));
    }
    next
}

fn breed<R: Rng>(
    cfg: &GpConfig,
    pop: &[Individual],
    env: &IntervalEnv,
    terminals: &[TerminalKind],
    rng: &mut R,
) -> ExprTree {
    let functions = &OperatorId::ALL;
    if rng.random::<f64>() < cfg.mutation_prob {
        let p = &pop[tournament_select(pop, cfg.tournament_size, rng)];
        if cfg.mode == SafetyMode::IntervalAware {
            safeops::safe_mutation(
                &p.tree,
                functions,
                terminals,
                env,
                cfg.mutation_subtree_max_depth,
                cfg.max_offspring_depth,
                rng,
            )
            .tree
        } else {
            subtree_mutation(&p.tree, cfg.max_offspring_depth, rng, |rng| {
                grow_tree(functions, terminals, env, cfg.mutation_subtree_max_depth, rng)
            })
            .tree
        }
    } else {
        let p1 = &pop[tournament_select(pop, cfg.tournament_size, rng)];
        let p2 = &pop[tournament_select(pop, cfg.tournament_size, rng)];
        if cfg.mode == SafetyMode::IntervalAware {
            safeops::safe_crossover(&p1.tree, &p2.tree, functions, cfg.max_offspring_depth, rng).tree
        } else {
            subtree_crossover(&p1.tree, &p2.tree, cfg.max_offspring_depth, rng).tree
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn parse(s: &str) -> ExprTree {
        ExprTree::parse_sexpr(s).unwrap()
    }

    #[test]
    fn rrse_reference_values() {
        assert_eq!(rrse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), Fitness::Finite(0.0));
        // Predicting the mean scores exactly 1.
        assert_eq!(rrse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]), Fitness::Finite(1.0));
        let Fitness::Finite(v) = rrse(&[0.0, 2.0], &[0.0, 1.0]) else {
            panic!("expected finite")
        };
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rrse(&[1.0, 2.0], &[f64::NAN, 1.0]), Fitness::Invalid);
        assert_eq!(rrse(&[1.0, 2.0], &[f64::INFINITY, 1.0]), Fitness::Invalid);
        // Zero-variance response cannot be normalised.
        assert_eq!(rrse(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), Fitness::Invalid);
    }

    #[test]
    #[should_panic(expected = "lengths differ")]
    fn rrse_rejects_mismatched_lengths() {
        rrse(&[1.0, 2.0], &[1.0]);
    }

    #[test]
    fn fitness_orders_invalid_after_every_finite_value() {
        let mut v = vec![
            Fitness::Invalid,
            Fitness::Finite(1e300),
            Fitness::Finite(0.5),
            Fitness::Invalid,
            Fitness::Finite(0.0),
        ];
        v.sort();
        assert_eq!(
            v,
            vec![
                Fitness::Finite(0.0),
                Fitness::Finite(0.5),
                Fitness::Finite(1e300),
                Fitness::Invalid,
                Fitness::Invalid,
            ]
        );
        assert_eq!(Fitness::Finite(0.5).to_string(), "0.5");
        assert_eq!(Fitness::Invalid.to_string(), "invalid");
    }

    fn tiny_dataset() -> Dataset {
        // y = x1 + x2 on a small grid.
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = (i as f64 / 3.0, j as f64 / 3.0);
                rows.push(vec![a, b]);
                y.push(a + b);
            }
        }
        Dataset::new(vec!["x1".into(), "x2".into()], rows, y).unwrap()
    }

    fn tiny_problem() -> Problem {
        Problem::new(
            "tiny-sum",
            tiny_dataset(),
            tiny_dataset(),
            IntervalEnv::uniform(2, 0.0, 1.0),
        )
    }

    #[test]
    fn evaluate_fitness_flags_interval_errors_before_touching_data() {
        let env = IntervalEnv::uniform(2, 0.0, 1.0);
        let data = tiny_dataset();
        let ind = evaluate_fitness(parse("(div x1 (mul x1 x2))"), &data, &env, SafetyMode::IntervalStatic);
        assert_eq!(ind.validity, Validity::IntervalError);
        assert_eq!(ind.fitness, Fitness::Invalid);
        // The same tree under unprotected semantics faults on the data (the
        // grid contains zeros), which is an evaluation error instead.
        let ind = evaluate_fitness(parse("(div x1 (mul x1 x2))"), &data, &env, SafetyMode::Unprotected);
        assert_eq!(ind.validity, Validity::EvalError);
        // Protection papers over the fault.
        let ind = evaluate_fitness(parse("(div x1 (mul x1 x2))"), &data, &env, SafetyMode::Protected);
        assert_eq!(ind.validity, Validity::Valid);
        // A benign tree is valid in every mode.
        for mode in SafetyMode::ALL {
            let ind = evaluate_fitness(parse("(add x1 x2)"), &data, &env, mode);
            assert_eq!(ind.validity, Validity::Valid);
            assert_eq!(ind.fitness, Fitness::Finite(0.0));
        }
    }

    #[test]
    fn tournament_prefers_fit_individuals_and_breaks_ties_earliest() {
        let env = IntervalEnv::uniform(2, 0.0, 1.0);
        let data = tiny_dataset();
        let mut pop: Vec<Individual> = ["(div x1 (mul x1 x2))", "(mul x1 x2)", "(add x1 x2)"]
            .iter()
            .map(|s| evaluate_fitness(parse(s), &data, &env, SafetyMode::IntervalStatic))
            .collect();
        assert_eq!(pop[0].fitness, Fitness::Invalid);
        // With enough draws the perfect model (index 2) always wins.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(tournament_select(&pop, 64, &mut rng), 2);
        // All-invalid populations still return someone.
        for ind in &mut pop {
            ind.fitness = Fitness::Invalid;
        }
        let i = tournament_select(&pop, 3, &mut rng);
        assert!(i < pop.len());
        // Exact ties: the earliest drawn contender wins.
        for ind in &mut pop {
            ind.fitness = Fitness::Finite(0.5);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut probe = rng.clone();
        let first_drawn = probe.random_range(0..pop.len());
        assert_eq!(tournament_select(&pop, 3, &mut rng), first_drawn);
    }

    #[test]
    fn crossover_splices_the_chosen_subtrees() {
        let p1 = parse("(add x1 x2)");
        let p2 = parse("(sin x1)");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut probe = rng.clone();
        let site = probe.random_range(0..p1.size());
        let donor = probe.random_range(0..p2.size());
        let out = subtree_crossover(&p1, &p2, 17, &mut rng);
        let expected = p1
            .with_replaced_subtree(p1.node_id(site), &p2, p2.node_id(donor))
            .0;
        assert!(out.tree.same_structure(&expected));
        assert!(out.site.is_some());
    }

    #[test]
    fn depth_capped_offspring_fall_back_to_the_first_parent() {
        // A chain of sins at exactly the cap: splicing anything non-trivial
        // below the root must exceed it.
        let mut s = String::from("x1");
        for _ in 0..16 {
            s = format!("(sin {s})");
        }
        let deep = parse(&s);
        assert_eq!(deep.depth(), 17);
        let donor = parse("(add x1 x2)");
        let mut rejected = false;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let out = subtree_crossover(&deep, &donor, 17, &mut rng);
            if out.site.is_none() {
                assert!(out.tree.same_structure(&deep));
                rejected = true;
            } else {
                assert!(out.tree.depth() <= 17);
            }
        }
        assert!(rejected, "expected at least one depth-cap rejection");
    }

    #[test]
    fn mutation_draws_site_before_building_the_donor() {
        let p = parse("(add (mul x1 x2) x1)");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut probe = rng.clone();
        let site = probe.random_range(0..p.size());
        let out = subtree_mutation(&p, 17, &mut rng, |_| parse("(cos x2)"));
        let expected = p
            .with_replaced_subtree(p.node_id(site), &parse("(cos x2)"), parse("(cos x2)").root())
            .0;
        assert!(out.tree.same_structure(&expected));
    }

    #[test]
    fn full_method_over_binary_operators_builds_a_perfect_tree() {
        let env = IntervalEnv::uniform(1, 0.0, 1.0);
        let terminals = [TerminalKind::Feature(0)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in 1..=5 {
            let t = full_tree(&[OperatorId::Add], &terminals, &env, d, &mut rng);
            assert_eq!(t.size(), (1 << d) - 1, "depth {d}");
            assert_eq!(t.depth(), d);
        }
    }

    #[test]
    fn ramped_initialisation_cycles_depths_and_methods() {
        let cfg = GpConfig {
            population_size: 200,
            ..GpConfig::default()
        };
        let env = IntervalEnv::uniform(2, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trees = ramped_half_and_half(&cfg, &env, &mut rng);
        assert_eq!(trees.len(), 200);
        // Depth limits 2..=6, alternating grow/full: 40 trees per limit, and
        // every even (grow) or odd (full) index respects its limit.
        for (i, t) in trees.iter().enumerate() {
            let limit = cfg.min_initial_depth + (i / 2) % 5;
            assert!(t.depth() <= limit, "tree {i} depth {} over {limit}", t.depth());
            if i % 2 == 1 {
                // Full trees reach their limit on every path; fast check via
                // depth only (leaf-path uniformity is checked below).
                assert_eq!(t.depth(), limit);
            }
        }
        // Full trees put every leaf at the depth limit.
        let full = &trees[9]; // i = 9: full, limit = 2 + (9/2) % 5 = 6
        fn leaf_depths(t: &ExprTree, id: crate::exprtree::NodeId, d: usize, out: &mut Vec<usize>) {
            let n = t.node(id);
            if n.left.is_none() {
                out.push(d);
            }
            for c in [n.left, n.right].into_iter().flatten() {
                leaf_depths(t, c, d + 1, out);
            }
        }
        let mut depths = Vec::new();
        leaf_depths(full, full.root(), 1, &mut depths);
        assert!(depths.iter().all(|&d| d == 6));
    }

    #[test]
    fn runs_are_deterministic_in_the_seed() {
        let cfg = GpConfig {
            population_size: 16,
            generations: 6,
            mode: SafetyMode::IntervalAware,
            ..GpConfig::default()
        };
        let problem = tiny_problem();
        let a = run(&cfg, &problem, &mut ChaCha8Rng::seed_from_u64(77));
        let b = run(&cfg, &problem, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.champion.tree.to_sexpr(), b.champion.tree.to_sexpr());
        let c = run(&cfg, &problem, &mut ChaCha8Rng::seed_from_u64(78));
        assert!(a.stats != c.stats || a.champion.tree.to_sexpr() != c.champion.tree.to_sexpr());
    }

    #[test]
    fn elitism_makes_best_training_fitness_non_increasing() {
        for mode in SafetyMode::ALL {
            let cfg = GpConfig {
                population_size: 24,
                generations: 12,
                mode,
                ..GpConfig::default()
            };
            let problem = tiny_problem();
            let trace = run(&cfg, &problem, &mut ChaCha8Rng::seed_from_u64(13));
            assert_eq!(trace.stats.len(), 12);
            for w in trace.stats.windows(2) {
                assert!(w[1].best_train <= w[0].best_train, "{mode}: {:?}", w);
            }
            // Trace bookkeeping.
            for (i, s) in trace.stats.iter().enumerate() {
                assert_eq!(s.generation, i);
                assert!((0.0..=1.0).contains(&s.invalid_proportion));
            }
        }
    }
}
