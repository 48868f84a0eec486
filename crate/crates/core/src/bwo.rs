//! Black widow optimization.
//!
//! Two loops share the operators in this module:
//!
//! * [`bwo_optimize`] is the canonical engine: mating, cannibalism, mutation,
//!   then sort-and-truncate, over a freely initialized population.
//! * [`client_bwo_refine`] refines a model's flat parameter vector one layer
//!   slice at a time with the order mutation, procreation, cannibalism.
//!
//! Fitness is a loss: lower is better. Both loops keep the best candidate ever
//! evaluated, so the reported best never gets worse from one generation to
//! the next.

use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Params;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendMode {
    /// One `alpha ~ U[0, 1]` per parent pair.
    #[default]
    UniformAlpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BwoParams {
    pub population_size: usize,
    pub max_iterations: usize,
    #[serde(rename = "Pm")]
    pub mutation_rate: f64,
    #[serde(rename = "Pc")]
    pub cannibalism_rate: f64,
    pub mutation_scale: f64,
    pub init_spread: f64,
    pub blend: BlendMode,
}

impl Default for BwoParams {
    fn default() -> Self {
        Self {
            population_size: 8,
            max_iterations: 5,
            mutation_rate: 0.4,
            cannibalism_rate: 0.44,
            mutation_scale: 0.02,
            init_spread: 0.05,
            blend: BlendMode::UniformAlpha,
        }
    }
}

impl BwoParams {
    /// Number of parent pairs mated per generation.
    pub fn pairs(&self) -> usize {
        self.population_size / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::config("bwo.population_size", "must be at least 2"));
        }
        if self.max_iterations < 1 {
            return Err(Error::config("bwo.max_iterations", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::config("bwo.Pm", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.cannibalism_rate) {
            return Err(Error::config("bwo.Pc", "must lie in [0, 1)"));
        }
        if !self.mutation_scale.is_finite() || self.mutation_scale <= 0.0 {
            return Err(Error::config(
                "bwo.mutation_scale",
                "must be a finite value > 0",
            ));
        }
        if !self.init_spread.is_finite() || self.init_spread < 0.0 {
            return Err(Error::config(
                "bwo.init_spread",
                "must be a finite value >= 0",
            ));
        }
        let combined = self.population_size + 2 * self.pairs();
        if combined - removal_count(combined, self.cannibalism_rate) < self.population_size {
            return Err(Error::config(
                "bwo.Pc",
                format!(
                    "cannibalism would leave fewer than {} of the {combined} parents and offspring",
                    self.population_size
                ),
            ));
        }
        Ok(())
    }
}

/// `floor(size * rate)`, guarded against representation error just below an integer.
fn removal_count(size: usize, rate: f64) -> usize {
    (size as f64 * rate + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<S> {
    pub genome: Vec<S>,
    /// `None` until evaluated, and again after any change to the genome.
    pub fitness: Option<S>,
}

impl<S: Scalar> Candidate<S> {
    pub fn new(genome: Vec<S>) -> Self {
        Self {
            genome,
            fitness: None,
        }
    }

    pub fn evaluated(genome: Vec<S>, fitness: S) -> Self {
        Self {
            genome,
            fitness: Some(fitness),
        }
    }

    fn score(&self) -> Result<S> {
        self.fitness
            .ok_or_else(|| Error::InvalidInput("candidate has not been evaluated".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population<S> {
    pub members: Vec<Candidate<S>>,
    pub generation: usize,
}

impl<S: Scalar> Population<S> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn best(&self) -> Option<&Candidate<S>> {
        self.members
            .iter()
            .filter(|c| c.fitness.is_some())
            .min_by(|a, b| a.fitness.partial_cmp(&b.fitness).expect("finite fitness"))
    }

    /// Stable ascending sort by fitness.
    fn sort(&mut self) -> Result<()> {
        for c in &self.members {
            c.score()?;
        }
        self.members
            .sort_by(|a, b| a.fitness.partial_cmp(&b.fitness).expect("finite fitness"));
        Ok(())
    }
}

/// Per-generation bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best fitness evaluated so far, including this generation.
    pub best_fitness: f64,
    pub population_size: usize,
    pub offspring: usize,
    pub mutated: usize,
    /// Fitness calls made during this generation.
    pub evaluations: usize,
}

/// Wraps a fitness function: checks finiteness, counts calls, keeps the best-ever candidate.
struct Evaluator<'f, S, F> {
    fitness: &'f mut F,
    evaluations: usize,
    best: Option<Candidate<S>>,
    generation: usize,
}

impl<'f, S: Scalar, F: FnMut(&[S]) -> Result<S>> Evaluator<'f, S, F> {
    fn new(fitness: &'f mut F) -> Self {
        Self {
            fitness,
            evaluations: 0,
            best: None,
            generation: 0,
        }
    }

    fn evaluate(&mut self, c: &mut Candidate<S>) -> Result<()> {
        let value = (self.fitness)(&c.genome)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "fitness evaluated to {value} in generation {}",
                self.generation
            )));
        }
        self.evaluations += 1;
        c.fitness = Some(value);
        let better = match &self.best {
            Some(b) => value < b.fitness.expect("best is evaluated"),
            None => true,
        };
        if better {
            self.best = Some(c.clone());
        }
        Ok(())
    }

    fn best_fitness(&self) -> f64 {
        self.best
            .as_ref()
            .and_then(|b| b.fitness)
            .map_or(f64::INFINITY, Scalar::as_f64)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

/// Member 0 is `base`; the rest are `base` plus `N(0, init_spread)` per coordinate.
/// Every member is evaluated.
pub fn init_population<S, F, R>(
    base: &[S],
    params: &BwoParams,
    fitness: &mut F,
    rng: &mut R,
) -> Result<Population<S>>
where
    S: Scalar,
    F: FnMut(&[S]) -> Result<S>,
    R: Rng + ?Sized,
{
    params.validate()?;
    let mut eval = Evaluator::new(fitness);
    seed_population(base, params, &mut eval, rng)
}

fn seed_population<S, F, R>(
    base: &[S],
    params: &BwoParams,
    eval: &mut Evaluator<'_, S, F>,
    rng: &mut R,
) -> Result<Population<S>>
where
    S: Scalar,
    F: FnMut(&[S]) -> Result<S>,
    R: Rng + ?Sized,
{
    if let Some(i) = base.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("base coordinate {i} is not finite")));
    }
    let mut members = Vec::with_capacity(params.population_size);
    members.push(Candidate::new(base.to_vec()));
    for _ in 1..params.population_size {
        let genome = base
            .iter()
            .map(|&v| S::from_f64_lossy(v.as_f64() + gaussian(rng, params.init_spread)))
            .collect();
        members.push(Candidate::new(genome));
    }
    for m in &mut members {
        eval.evaluate(m)?;
    }
    Ok(Population {
        members,
        generation: 0,
    })
}

/// Convex blend of two parents with a fixed `alpha`:
/// `child1 = alpha*a + (1-alpha)*b`, `child2 = alpha*b + (1-alpha)*a`.
pub fn procreate_with_alpha<S: Scalar>(
    a: &Candidate<S>,
    b: &Candidate<S>,
    alpha: f64,
) -> Result<(Candidate<S>, Candidate<S>)> {
    if a.genome.len() != b.genome.len() {
        return Err(Error::InvalidInput(format!(
            "parents have {} and {} coordinates",
            a.genome.len(),
            b.genome.len()
        )));
    }
    let beta = 1.0 - alpha;
    let (c1, c2) = a
        .genome
        .iter()
        .zip(&b.genome)
        .map(|(&x, &y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (
                S::from_f64_lossy(alpha * x + beta * y),
                S::from_f64_lossy(alpha * y + beta * x),
            )
        })
        .unzip();
    Ok((Candidate::new(c1), Candidate::new(c2)))
}

/// Blends a parent pair with `alpha ~ U[0, 1]`. Children come back unevaluated.
pub fn procreate<S: Scalar, R: Rng + ?Sized>(
    a: &Candidate<S>,
    b: &Candidate<S>,
    rng: &mut R,
) -> Result<(Candidate<S>, Candidate<S>)> {
    let alpha = rng.random_range(0.0..=1.0);
    procreate_with_alpha(a, b, alpha)
}

/// Removes the `floor(size * rate)` worst members.
///
/// Among equal fitness the earlier member survives. Survivors keep their
/// original relative order.
pub fn cannibalize<S: Scalar>(pop: &Population<S>, rate: f64) -> Result<Population<S>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config("bwo.Pc", "must lie in [0, 1)"));
    }
    let remove = removal_count(pop.len(), rate);
    if remove >= pop.len() && !pop.is_empty() {
        return Err(Error::config(
            "bwo.Pc",
            format!(
                "removing {remove} of {} members would empty the population",
                pop.len()
            ),
        ));
    }
    let scores = pop
        .members
        .iter()
        .map(Candidate::score)
        .collect::<Result<Vec<S>>>()?;
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).expect("finite fitness"));
    let mut keep = vec![false; pop.len()];
    for &i in &order[..pop.len() - remove] {
        keep[i] = true;
    }
    let members = pop
        .members
        .iter()
        .zip(keep)
        .filter(|&(_, k)| k)
        .map(|(c, _)| c.clone())
        .collect();
    Ok(Population {
        members,
        generation: pop.generation,
    })
}

/// Number of coordinates touched by one mutation: `ceil(dim / 10)`.
pub fn mutation_width(dim: usize) -> usize {
    dim.div_ceil(10)
}

/// With probability `rate`, adds `N(0, sigma)` noise to `ceil(dim / 10)` distinct
/// random coordinates. Returns the candidate and whether it changed.
pub fn mutate<S: Scalar, R: Rng + ?Sized>(
    c: &Candidate<S>,
    rate: f64,
    sigma: f64,
    rng: &mut R,
) -> (Candidate<S>, bool) {
    if c.genome.is_empty() || !rng.random_bool(rate.clamp(0.0, 1.0)) {
        return (c.clone(), false);
    }
    let mut genome = c.genome.clone();
    for i in index::sample(rng, genome.len(), mutation_width(genome.len())) {
        genome[i] = S::from_f64_lossy(genome[i].as_f64() + gaussian(rng, sigma));
    }
    (Candidate::new(genome), true)
}

/// Pairs two distinct parents drawn uniformly from the best half of a sorted population.
fn mate<S, F, R>(
    pop: &Population<S>,
    pairs: usize,
    eval: &mut Evaluator<'_, S, F>,
    rng: &mut R,
) -> Result<Vec<Candidate<S>>>
where
    S: Scalar,
    F: FnMut(&[S]) -> Result<S>,
    R: Rng + ?Sized,
{
    let pool = pop.len().div_ceil(2).max(2).min(pop.len());
    let mut offspring = Vec::with_capacity(2 * pairs);
    if pool < 2 {
        return Ok(offspring);
    }
    for _ in 0..pairs {
        let picked = index::sample(rng, pool, 2);
        let (a, b) = (&pop.members[picked.index(0)], &pop.members[picked.index(1)]);
        let (mut c1, mut c2) = procreate(a, b, rng)?;
        eval.evaluate(&mut c1)?;
        eval.evaluate(&mut c2)?;
        offspring.push(c1);
        offspring.push(c2);
    }
    Ok(offspring)
}

fn mutate_all<S, F, R>(
    pop: &mut Population<S>,
    params: &BwoParams,
    eval: &mut Evaluator<'_, S, F>,
    rng: &mut R,
) -> Result<usize>
where
    S: Scalar,
    F: FnMut(&[S]) -> Result<S>,
    R: Rng + ?Sized,
{
    let mut mutated = 0;
    for m in &mut pop.members {
        let (mut next, changed) = mutate(m, params.mutation_rate, params.mutation_scale, rng);
        if changed {
            eval.evaluate(&mut next)?;
            *m = next;
            mutated += 1;
        }
    }
    Ok(mutated)
}

#[derive(Debug, Clone)]
pub struct BwoOutcome<S> {
    pub best: Candidate<S>,
    pub history: Vec<GenerationStats>,
    /// All fitness calls, including the initial population.
    pub evaluations: usize,
}

/// Canonical loop: members start uniform in `[-init_spread, init_spread]^dim`;
/// each generation mates, combines, cannibalizes, mutates, sorts and keeps the best `N`.
pub fn bwo_optimize<S, F, R>(
    mut fitness: F,
    dim: usize,
    params: &BwoParams,
    rng: &mut R,
) -> Result<BwoOutcome<S>>
where
    S: Scalar,
    F: FnMut(&[S]) -> Result<S>,
    R: Rng + ?Sized,
{
    params.validate()?;
    if dim < 1 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    let mut eval = Evaluator::new(&mut fitness);
    let spread = params.init_spread;
    let mut members = Vec::with_capacity(params.population_size);
    for _ in 0..params.population_size {
        let genome = (0..dim)
            .map(|_| {
                S::from_f64_lossy(if spread > 0.0 {
                    rng.random_range(-spread..=spread)
                } else {
                    0.0
                })
            })
            .collect();
        let mut c = Candidate::new(genome);
        eval.evaluate(&mut c)?;
        members.push(c);
    }
    let mut pop = Population {
        members,
        generation: 0,
    };
    let mut history = Vec::with_capacity(params.max_iterations);

    for generation in 1..=params.max_iterations {
        eval.generation = generation;
        let before = eval.evaluations;
        pop.sort()?;
        let offspring = mate(&pop, params.pairs(), &mut eval, rng)?;
        let born = offspring.len();
        pop.members.extend(offspring);
        pop = cannibalize(&pop, params.cannibalism_rate)?;
        let mutated = mutate_all(&mut pop, params, &mut eval, rng)?;
        pop.sort()?;
        pop.members.truncate(params.population_size);
        pop.generation = generation;
        history.push(GenerationStats {
            generation,
            best_fitness: eval.best_fitness(),
            population_size: pop.len(),
            offspring: born,
            mutated,
            evaluations: eval.evaluations - before,
        });
    }

    let best = eval.best.clone().expect("population was evaluated");
    Ok(BwoOutcome {
        best,
        history,
        evaluations: eval.evaluations,
    })
}

#[derive(Debug, Clone)]
pub struct RefineOutcome<S> {
    pub params: Params<S>,
    pub loss: S,
    /// Generations across all layers, in the order they ran.
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
}

/// Client-side refinement of a parameter vector, one layer slice at a time.
///
/// For every layer (first to last) a population is seeded around the current
/// best slice while the other slices stay fixed at their current best. Each
/// local iteration runs mutation, procreation, cannibalism and selection. The
/// result is the best full vector evaluated, `start` included, so the returned
/// loss never exceeds `fitness(start)`.
pub fn client_bwo_refine<S, F, R>(
    start: &Params<S>,
    mut fitness: F,
    params: &BwoParams,
    rng: &mut R,
) -> Result<RefineOutcome<S>>
where
    S: Scalar,
    F: FnMut(&Params<S>) -> Result<S>,
    R: Rng + ?Sized,
{
    params.validate()?;
    if !start.is_finite() {
        return Err(Error::Numeric("start parameters are not finite".into()));
    }
    let mut best = start.clone();
    let mut best_loss = fitness(&best)?;
    if !best_loss.is_finite() {
        return Err(Error::Numeric(format!(
            "fitness of the start vector is {best_loss}"
        )));
    }
    let mut evaluations = 1;
    let mut history = Vec::new();
    let mut generation = 0;

    for layer in 0..start.num_layers() {
        let range = start.layer_range(layer);
        let mut scratch = best.clone();
        let mut local = |slice: &[S]| -> Result<S> {
            scratch.values_mut()[range.clone()].copy_from_slice(slice);
            fitness(&scratch)
        };
        let mut eval = Evaluator::new(&mut local);
        eval.generation = generation;
        let mut pop = seed_population(&best.values()[range.clone()], params, &mut eval, rng)?;

        for _ in 0..params.max_iterations {
            generation += 1;
            eval.generation = generation;
            let before = eval.evaluations;
            let mutated = mutate_all(&mut pop, params, &mut eval, rng)?;
            pop.sort()?;
            let offspring = mate(&pop, params.pairs(), &mut eval, rng)?;
            let born = offspring.len();
            pop.members.extend(offspring);
            pop = cannibalize(&pop, params.cannibalism_rate)?;
            pop.sort()?;
            pop.members.truncate(params.population_size);
            pop.generation = generation;
            history.push(GenerationStats {
                generation,
                best_fitness: eval.best_fitness().min(best_loss.as_f64()),
                population_size: pop.len(),
                offspring: born,
                mutated,
                evaluations: eval.evaluations - before,
            });
        }

        evaluations += eval.evaluations;
        if let Some(Candidate {
            genome,
            fitness: Some(loss),
        }) = eval.best.take()
        {
            if loss < best_loss {
                best.values_mut()[range].copy_from_slice(&genome);
                best_loss = loss;
            }
        }
    }

    Ok(RefineOutcome {
        params: best,
        loss: best_loss,
        history,
        evaluations,
    })
}

/// Standard test functions for the standalone engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Sphere,
    Rastrigin,
    Rosenbrock,
}

impl Benchmark {
    pub fn eval<S: Scalar>(self, x: &[S]) -> S {
        let x = x.iter().map(|v| v.as_f64());
        let value = match self {
            Benchmark::Sphere => x.map(|v| v * v).sum(),
            Benchmark::Rastrigin => {
                let tau = std::f64::consts::TAU;
                x.map(|v| 10.0 + v * v - 10.0 * (tau * v).cos()).sum()
            }
            Benchmark::Rosenbrock => {
                let v: Vec<f64> = x.collect();
                v.windows(2)
                    .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                    .sum()
            }
        };
        S::from_f64_lossy(value)
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Benchmark::Sphere),
            "rastrigin" => Ok(Benchmark::Rastrigin),
            "rosenbrock" => Ok(Benchmark::Rosenbrock),
            other => Err(Error::config(
                "benchmark",
                format!("unknown benchmark `{other}` (expected sphere, rastrigin or rosenbrock)"),
            )),
        }
    }
}
