//! Synthetic instances for tests, benchmarks and the `generate` subcommand.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::model::{Evidence, Factor, Model, ModelKind, VarId};
use crate::plan::{PlanNode, Topology};

fn random_table<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(0.05..1.0)).collect()
}

fn factor<R: Rng>(rng: &mut R, scope: Vec<VarId>, all_cards: &[usize]) -> Result<Factor> {
    let cards: Vec<usize> = scope.iter().map(|&v| all_cards[v]).collect();
    let len = cards.iter().product();
    Factor::new(scope, cards, random_table(rng, len))
}

/// Bayesian network over `n` variables: each variable picks up to `max_parents`
/// parents among the earlier ones, with a normalized random CPT.
pub fn random_bayes<R: Rng>(
    rng: &mut R,
    n: usize,
    cards: &[usize],
    max_parents: usize,
) -> Result<Model> {
    let all_cards: Vec<usize> = (0..n)
        .map(|_| cards[rng.random_range(0..cards.len())])
        .collect();
    let mut factors = Vec::with_capacity(n);
    for v in 0..n {
        let np = rng.random_range(0..=max_parents.min(v));
        let mut scope: Vec<VarId> = sample(rng, v.max(1), np).into_iter().collect();
        scope.sort_unstable();
        scope.push(v);
        let k = all_cards[v];
        let cards: Vec<usize> = scope.iter().map(|&x| all_cards[x]).collect();
        let mut table = random_table(rng, cards.iter().product());
        for row in table.chunks_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        factors.push(Factor::new(scope, cards, table)?);
    }
    Model::new(all_cards, factors, ModelKind::Bayes)
}

/// Markov network with `n_factors` random factors of arity `1..=max_arity`.
pub fn random_markov<R: Rng>(
    rng: &mut R,
    n: usize,
    cards: &[usize],
    n_factors: usize,
    max_arity: usize,
) -> Result<Model> {
    let all_cards: Vec<usize> = (0..n)
        .map(|_| cards[rng.random_range(0..cards.len())])
        .collect();
    let mut factors = Vec::with_capacity(n_factors);
    for _ in 0..n_factors {
        let arity = rng.random_range(1..=max_arity.min(n).max(1));
        let mut scope: Vec<VarId> = sample(rng, n, arity).into_iter().collect();
        if rng.random_bool(0.5) {
            scope.sort_unstable();
        }
        factors.push(factor(rng, scope, &all_cards)?);
    }
    Model::new(all_cards, factors, ModelKind::Markov)
}

/// Either kind, sized for brute-force checking.
pub fn random_small<R: Rng>(rng: &mut R, max_vars: usize, cards: &[usize]) -> Result<Model> {
    let n = rng.random_range(1..=max_vars);
    if rng.random_bool(0.5) {
        random_bayes(rng, n, cards, 3)
    } else {
        let nf = rng.random_range(1..=n + 3);
        random_markov(rng, n, cards, nf, 4)
    }
}

/// Observes about `fraction` of the variables at random values.
pub fn random_evidence<R: Rng>(rng: &mut R, model: &Model, fraction: f64) -> Evidence {
    let mut pairs = Vec::new();
    for v in 0..model.num_vars() {
        if rng.random_bool(fraction) {
            pairs.push((v, rng.random_range(0..model.card(v))));
        }
    }
    Evidence::from_pairs(pairs).expect("distinct variables")
}

/// Pairwise Markov network on the complete graph over `n` variables.
pub fn clique<R: Rng>(rng: &mut R, n: usize, k: usize) -> Result<Model> {
    let cards = vec![k; n];
    let mut factors = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            factors.push(factor(rng, vec![a, b], &cards)?);
        }
    }
    Model::new(cards, factors, ModelKind::Markov)
}

/// Pairwise Markov network on a `rows` x `cols` grid with unary factors.
pub fn grid<R: Rng>(rng: &mut R, rows: usize, cols: usize, k: usize) -> Result<Model> {
    let cards = vec![k; rows * cols];
    let id = |r: usize, c: usize| r * cols + c;
    let mut factors = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            factors.push(factor(rng, vec![id(r, c)], &cards)?);
            if c + 1 < cols {
                factors.push(factor(rng, vec![id(r, c), id(r, c + 1)], &cards)?);
            }
            if r + 1 < rows {
                factors.push(factor(rng, vec![id(r, c), id(r + 1, c)], &cards)?);
            }
        }
    }
    Model::new(cards, factors, ModelKind::Markov)
}

/// Markov chain `X0 -> X1 -> ...` as a Bayesian network.
pub fn chain<R: Rng>(rng: &mut R, n: usize, k: usize) -> Result<Model> {
    let cards = vec![k; n];
    let mut factors = Vec::new();
    for v in 0..n {
        let scope = if v == 0 { vec![0] } else { vec![v - 1, v] };
        let c: Vec<usize> = scope.iter().map(|_| k).collect();
        let mut table = random_table(rng, c.iter().product());
        for row in table.chunks_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        factors.push(Factor::new(scope, c, table)?);
    }
    Model::new(cards, factors, ModelKind::Bayes)
}

/// Random bucket-tree shape for the planner: `n` buckets with cardinalities in
/// `2..=max_card`, output tables of up to `max_rows` rows of the parent's cardinality,
/// and about one root per `n / roots` buckets.
pub fn random_topology<R: Rng>(
    rng: &mut R,
    n: usize,
    max_card: u64,
    max_rows: u64,
    roots: usize,
) -> Topology {
    let card: Vec<u64> = (0..n)
        .map(|_| rng.random_range(2..=max_card.max(2)))
        .collect();
    let root_p = roots as f64 / n.max(1) as f64;
    let nodes = (0..n)
        .map(|i| {
            let parent = (i > 0 && !rng.random_bool(root_p.min(1.0))).then(|| {
                if rng.random_bool(0.5) {
                    i - 1
                } else {
                    rng.random_range(0..i)
                }
            });
            let (table_size, align) = match parent {
                Some(p) => (card[p] * rng.random_range(1..=max_rows.max(1)), card[p]),
                None => (1, 1),
            };
            PlanNode {
                label: i,
                parent,
                table_size,
                align,
            }
        })
        .collect();
    Topology::new(nodes).expect("well-formed topology")
}
