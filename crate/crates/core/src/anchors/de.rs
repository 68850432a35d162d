//! Differential evolution, `rand/1/bin` with dithered mutation, maximizing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnchorError;
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeParams {
    pub population: usize,
    /// `F` is drawn uniformly from this range for every mutant.
    pub mutation: (f64, f64),
    pub crossover: f64,
    pub max_generations: usize,
    /// Stop once `max - min` of population fitness drops below this.
    pub tolerance: f64,
    pub bounds: Vec<(f64, f64)>,
}

impl Default for DeParams {
    fn default() -> Self {
        DeParams {
            population: 15,
            mutation: (0.5, 1.0),
            crossover: 0.7,
            max_generations: 200,
            tolerance: 1e-4,
            bounds: vec![(0.4, 3.0); 3],
        }
    }
}

impl DeParams {
    pub fn validate(&self) -> Result<(), AnchorError> {
        if self.bounds.is_empty() {
            return Err(AnchorError::InvalidParams("bounds must not be empty".into()));
        }
        for (dim, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(AnchorError::InvalidBounds { dim, lo, hi });
            }
        }
        if self.population < 4 {
            return Err(AnchorError::InvalidParams(format!(
                "population must be at least 4, got {}",
                self.population
            )));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(AnchorError::InvalidParams(format!(
                "crossover {} outside [0, 1]",
                self.crossover
            )));
        }
        let (f_lo, f_hi) = self.mutation;
        if !(f_lo >= 0.0 && f_lo <= f_hi && f_hi.is_finite()) {
            return Err(AnchorError::InvalidParams(format!(
                "mutation range ({f_lo}, {f_hi}) is invalid"
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(AnchorError::InvalidParams("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeResult {
    pub best: Vec<f64>,
    pub fitness: f64,
    pub generations: usize,
    /// Best fitness after initialization and after each generation.
    pub history: Vec<f64>,
    pub converged: bool,
    pub evaluations: usize,
}

const KEY_INIT: u64 = 0;
const KEY_GENERATION: u64 = 1;

fn score(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Three distinct indices, all different from `exclude`.
fn pick_three(n: usize, exclude: usize, rng: &mut RandomStream) -> [usize; 3] {
    let mut picked = [usize::MAX; 3];
    let mut k = 0;
    while k < 3 {
        let c = rng.below(n as u64) as usize;
        if c != exclude && !picked[..k].contains(&c) {
            picked[k] = c;
            k += 1;
        }
    }
    picked
}

/// Maximizes `objective` inside `params.bounds`.
///
/// Member `i` of generation `g` draws from `rng / 1 / g / i`, and objective calls run in
/// parallel; selection happens after the whole generation is scored, so the result does
/// not depend on thread scheduling.
pub fn differential_evolution<F>(objective: F, params: &DeParams, rng: &RandomStream) -> Result<DeResult, AnchorError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    params.validate()?;
    let dims = params.bounds.len();
    let n = params.population;

    let init = rng.derive(KEY_INIT);
    let mut population: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut s = init.derive(i as u64);
            params.bounds.iter().map(|&(lo, hi)| s.uniform(lo, hi)).collect()
        })
        .collect();
    let mut fitness: Vec<f64> = population.par_iter().map(|x| score(objective(x))).collect();
    let mut evaluations = n;

    let best_of = |fit: &[f64]| -> usize {
        (0..fit.len())
            .max_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(b.cmp(&a)))
            .expect("population is non-empty")
    };
    let mut history = vec![fitness[best_of(&fitness)]];
    let mut generations = 0;
    let mut converged = false;

    let gen_root = rng.derive(KEY_GENERATION);
    for g in 0..params.max_generations {
        let gen_stream = gen_root.derive(g as u64);
        let trials: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut s = gen_stream.derive(i as u64);
                let [a, b, c] = pick_three(n, i, &mut s);
                let f = s.uniform(params.mutation.0, params.mutation.1);
                let forced = s.below(dims as u64) as usize;
                (0..dims)
                    .map(|d| {
                        let cross = s.bernoulli(params.crossover);
                        let v = if cross || d == forced {
                            population[a][d] + f * (population[b][d] - population[c][d])
                        } else {
                            population[i][d]
                        };
                        let (lo, hi) = params.bounds[d];
                        v.clamp(lo, hi)
                    })
                    .collect()
            })
            .collect();
        let trial_fit: Vec<f64> = trials.par_iter().map(|x| score(objective(x))).collect();
        evaluations += n;
        for (i, (trial, tf)) in trials.into_iter().zip(trial_fit).enumerate() {
            if tf >= fitness[i] {
                population[i] = trial;
                fitness[i] = tf;
            }
        }
        generations = g + 1;
        history.push(fitness[best_of(&fitness)]);

        let (lo, hi) = fitness.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if hi - lo < params.tolerance {
            converged = true;
            break;
        }
    }

    let best = best_of(&fitness);
    Ok(DeResult {
        best: population[best].clone(),
        fitness: fitness[best],
        generations,
        history,
        converged,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_sphere_converges_to_origin() {
        let params = DeParams {
            bounds: vec![(-5.0, 5.0); 3],
            tolerance: 1e-8,
            max_generations: 400,
            ..Default::default()
        };
        let res = differential_evolution(
            |x| -x.iter().map(|v| v * v).sum::<f64>(),
            &params,
            &RandomStream::new(17),
        )
        .unwrap();
        for v in &res.best {
            assert!(v.abs() < 1e-2, "{:?}", res.best);
        }
    }

    #[test]
    fn history_is_monotone_and_bounds_hold() {
        let params = DeParams {
            bounds: vec![(-2.0, 1.0), (0.5, 4.0)],
            max_generations: 60,
            tolerance: 0.0,
            ..Default::default()
        };
        let seen = std::sync::Mutex::new(Vec::new());
        let res = differential_evolution(
            |x| {
                seen.lock().unwrap().push(x.to_vec());
                (x[0] * 3.0).sin() + (x[1] - 2.0).powi(2) * -0.5
            },
            &params,
            &RandomStream::new(3),
        )
        .unwrap();
        assert!(res.history.windows(2).all(|w| w[1] >= w[0]));
        for x in seen.into_inner().unwrap() {
            assert!((-2.0..=1.0).contains(&x[0]) && (0.5..=4.0).contains(&x[1]));
        }
        assert_eq!(res.evaluations, 15 * 61);
    }

    #[test]
    fn deterministic_across_thread_pools() {
        let params = DeParams {
            bounds: vec![(-3.0, 3.0); 4],
            max_generations: 30,
            ..Default::default()
        };
        let f = |x: &[f64]| -x.iter().map(|v| (v - 1.0).abs()).sum::<f64>();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| differential_evolution(f, &params, &RandomStream::new(8)).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn invalid_params() {
        let f = |_: &[f64]| 0.0;
        let rng = RandomStream::new(0);
        let bad_bounds = DeParams {
            bounds: vec![(1.0, 1.0)],
            ..Default::default()
        };
        assert!(matches!(
            differential_evolution(f, &bad_bounds, &rng),
            Err(AnchorError::InvalidBounds { dim: 0, .. })
        ));
        let tiny = DeParams {
            population: 3,
            ..Default::default()
        };
        assert!(matches!(
            differential_evolution(f, &tiny, &rng),
            Err(AnchorError::InvalidParams(_))
        ));
    }

    #[test]
    fn pick_three_is_distinct() {
        let mut s = RandomStream::new(1);
        for i in 0..200 {
            let [a, b, c] = pick_three(4, i % 4, &mut s);
            assert!(a != b && b != c && a != c);
            assert!(![a, b, c].contains(&(i % 4)));
        }
    }
}
