//! Particle swarm step over flat real tensors.
//!
//! One step first folds the scores of the current positions into the
//! personal, global-best and global-worst records, then moves every particle
//! from a snapshot of those records:
//!
//! ```text
//! C = rv*φv + rp*φp + rg*φg + rw*φw
//! v ← (rv*φv*v + rp*φp*(p − x) + rg*φg*(g − x) − rw*φw*(gw − x)) / C
//! x ← x + λ*v
//! ```
//!
//! The four walk factors are scalars drawn once per particle per step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Redraws of the walk factors allowed when their weighted sum is zero.
const MAX_REDRAWS: usize = 8;

/// Step length and the four velocity coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoHyperparams {
    pub step_length: f64,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub repel: f64,
}

impl Default for PsoHyperparams {
    fn default() -> Self {
        Self { step_length: 0.8, inertia: 0.2, cognitive: 0.3, social: 0.5, repel: 0.05 }
    }
}

impl PsoHyperparams {
    /// Inertia values of the search grid.
    pub const INERTIA_GRID: [f64; 3] = [0.1, 0.2, 0.3];
    pub const COGNITIVE_GRID: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
    pub const SOCIAL_GRID: [f64; 5] = [0.2, 0.3, 0.4, 0.5, 0.6];
    pub const REPEL_GRID: [f64; 3] = [0.01, 0.05, 0.1];
    pub const STEP_LENGTH_GRID: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

    pub fn validate(&self) -> Result<()> {
        let coeffs =
            [("inertia", self.inertia), ("cognitive", self.cognitive), ("social", self.social), ("repel", self.repel)];
        for (name, value) in coeffs {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::config(name, format!("must be finite and >= 0, got {value}")));
            }
        }
        if coeffs.iter().all(|(_, v)| *v == 0.0) {
            return Err(Error::config("inertia", "at least one of inertia/cognitive/social/repel must be > 0"));
        }
        if !self.step_length.is_finite() || self.step_length <= 0.0 {
            return Err(Error::config("step_length", format!("must be > 0, got {}", self.step_length)));
        }
        Ok(())
    }

    /// Draws one setting uniformly from the hyperparameter grid.
    pub fn sample_grid<R: Rng + ?Sized>(rng: &mut R) -> Self {
        fn pick<R: Rng + ?Sized, const K: usize>(rng: &mut R, grid: &[f64; K]) -> f64 {
            grid[rng.random_range(0..K)]
        }
        Self {
            inertia: pick(rng, &Self::INERTIA_GRID),
            cognitive: pick(rng, &Self::COGNITIVE_GRID),
            social: pick(rng, &Self::SOCIAL_GRID),
            repel: pick(rng, &Self::REPEL_GRID),
            step_length: pick(rng, &Self::STEP_LENGTH_GRID),
        }
    }
}

/// A position with its velocity and best-seen record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub personal_best: Vec<f64>,
    /// Highest score this particle has been given; `None` before its first score.
    pub personal_best_score: Option<f64>,
}

impl Particle {
    /// A particle at rest, its personal best at the starting position.
    pub fn new(position: Vec<f64>) -> Self {
        Self {
            velocity: vec![0.0; position.len()],
            personal_best: position.clone(),
            position,
            personal_best_score: None,
        }
    }

    fn dim(&self) -> usize {
        self.position.len()
    }
}

/// A scored position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub position: Vec<f64>,
    pub score: f64,
}

/// Swarm-wide best and worst records over every score seen.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub global_best: Option<Scored>,
    pub global_worst: Option<Scored>,
}

impl SwarmState {
    pub fn best_score(&self) -> Option<f64> {
        self.global_best.as_ref().map(|s| s.score)
    }

    pub fn worst_score(&self) -> Option<f64> {
        self.global_worst.as_ref().map(|s| s.score)
    }
}

/// The four walk factors for one particle in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Walk {
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub repel: f64,
}

impl Walk {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self { inertia: rng.random(), cognitive: rng.random(), social: rng.random(), repel: rng.random() }
    }
}

/// Particles plus their shared records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub state: SwarmState,
}

impl Swarm {
    pub fn new(positions: Vec<Vec<f64>>) -> Self {
        Self { particles: positions.into_iter().map(Particle::new).collect(), state: SwarmState::default() }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &[f64]> {
        self.particles.iter().map(|p| p.position.as_slice())
    }

    /// Scores the current positions and moves the swarm; returns the index of
    /// the best-scoring input position.
    pub fn step<R: Rng + ?Sized>(&mut self, scores: &[f64], hp: &PsoHyperparams, rng: &mut R) -> Result<usize> {
        pso_step(&mut self.particles, scores, &mut self.state, hp, rng)
    }
}

/// One PSO step with walk factors drawn from `rng`.
pub fn pso_step<R: Rng + ?Sized>(
    particles: &mut [Particle],
    scores: &[f64],
    state: &mut SwarmState,
    hp: &PsoHyperparams,
    rng: &mut R,
) -> Result<usize> {
    pso_step_with(particles, scores, state, hp, |_| Walk::draw(rng))
}

/// One PSO step with caller-supplied walk factors. `walk(i)` is called once
/// per attempt for particle `i`, in particle order.
pub fn pso_step_with(
    particles: &mut [Particle],
    scores: &[f64],
    state: &mut SwarmState,
    hp: &PsoHyperparams,
    mut walk: impl FnMut(usize) -> Walk,
) -> Result<usize> {
    hp.validate()?;
    check_shapes(particles, scores, state)?;

    let best_index = record_scores(particles, scores, state);

    // Both records exist after `record_scores` on a non-empty swarm.
    let g = state.global_best.as_ref().map(|s| s.position.clone()).unwrap_or_default();
    let gw = state.global_worst.as_ref().map(|s| s.position.clone()).unwrap_or_default();

    let mut walks = Vec::with_capacity(particles.len());
    for i in 0..particles.len() {
        walks.push(draw_nonzero(i, hp, &mut walk)?);
    }

    for (particle, (r, c)) in particles.iter_mut().zip(walks) {
        let (wv, wp, wg, ww) =
            (r.inertia * hp.inertia, r.cognitive * hp.cognitive, r.social * hp.social, r.repel * hp.repel);
        for k in 0..particle.position.len() {
            let x = particle.position[k];
            let v = (wv * particle.velocity[k] + wp * (particle.personal_best[k] - x) + wg * (g[k] - x)
                - ww * (gw[k] - x))
                / c;
            particle.velocity[k] = v;
            particle.position[k] = x + hp.step_length * v;
        }
    }
    Ok(best_index)
}

fn draw_nonzero(index: usize, hp: &PsoHyperparams, walk: &mut impl FnMut(usize) -> Walk) -> Result<(Walk, f64)> {
    for _ in 0..=MAX_REDRAWS {
        let r = walk(index);
        let c = r.inertia * hp.inertia + r.cognitive * hp.cognitive + r.social * hp.social + r.repel * hp.repel;
        if c > 0.0 && c.is_finite() {
            return Ok((r, c));
        }
    }
    Err(Error::contract(format!("velocity normalizer stayed zero for particle {index} after {MAX_REDRAWS} redraws")))
}

fn check_shapes(particles: &[Particle], scores: &[f64], state: &SwarmState) -> Result<()> {
    if particles.is_empty() {
        return Err(Error::contract("swarm is empty"));
    }
    if scores.len() != particles.len() {
        return Err(Error::contract(format!("{} scores for {} particles", scores.len(), particles.len())));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::contract(format!("score of particle {i} is NaN")));
    }
    let dim = particles[0].dim();
    for (i, p) in particles.iter().enumerate() {
        if p.dim() != dim || p.velocity.len() != dim || p.personal_best.len() != dim {
            return Err(Error::contract(format!("particle {i} shape differs from particle 0 (dim {dim})")));
        }
    }
    for rec in [&state.global_best, &state.global_worst].into_iter().flatten() {
        if rec.position.len() != dim {
            return Err(Error::contract(format!("swarm record has dim {}, particles have {dim}", rec.position.len())));
        }
    }
    Ok(())
}

/// Folds the scores into the records and returns the argmax (lowest index on ties).
fn record_scores(particles: &mut [Particle], scores: &[f64], state: &mut SwarmState) -> usize {
    let mut best_index = 0;
    for (i, (particle, &score)) in particles.iter_mut().zip(scores).enumerate() {
        if score > scores[best_index] {
            best_index = i;
        }
        if particle.personal_best_score.is_none_or(|b| score > b) {
            particle.personal_best.clone_from(&particle.position);
            particle.personal_best_score = Some(score);
        }
        if state.best_score().is_none_or(|b| score > b) {
            state.global_best = Some(Scored { position: particle.position.clone(), score });
        }
        if state.worst_score().is_none_or(|w| score < w) {
            state.global_worst = Some(Scored { position: particle.position.clone(), score });
        }
    }
    best_index
}
