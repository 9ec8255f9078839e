//! Central finite differences against analytic gradients.
//!
//! Uses the fourth-order five-point stencil so truncation error is far below
//! the 1e-4 relative tolerance at 64-bit precision.

use astrolm::model::{Gradients, Parameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
/// The stencil's roundoff floor is about `f64::EPSILON * |loss| / STEP`, so
/// only coordinates with `|grad| > ACTIVE * max(1, |loss|)` are resolvable.
pub const ACTIVE: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Coord {
    pub tensor: String,
    pub index: usize,
}

#[derive(Debug)]
pub struct Agreement {
    pub coord: Coord,
    pub analytic: f64,
    pub numeric: f64,
}

impl Agreement {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

fn value_at(params: &Parameters, coord: &Coord) -> f64 {
    params
        .tensors()
        .into_iter()
        .find(|(n, _)| *n == coord.tensor)
        .map(|(_, m)| m.data()[coord.index])
        .expect("known tensor")
}

fn with_value(params: &Parameters, coord: &Coord, v: f64) -> Parameters {
    let mut p = params.clone();
    for (n, m) in p.tensors_mut() {
        if n == coord.tensor {
            m.data_mut()[coord.index] = v;
        }
    }
    p
}

pub fn numeric_gradient(
    params: &Parameters,
    coord: &Coord,
    loss: &dyn Fn(&Parameters) -> f64,
) -> f64 {
    let x = value_at(params, coord);
    let f = |dx: f64| loss(&with_value(params, coord, x + dx));
    (-f(2.0 * STEP) + 8.0 * f(STEP) - 8.0 * f(-STEP) + f(-2.0 * STEP)) / (12.0 * STEP)
}

/// Picks `n` random coordinates with a resolvable analytic gradient among
/// tensors accepted by `select`.
pub fn active_coords(
    grads: &Gradients,
    loss: f64,
    select: impl Fn(&str) -> bool,
    n: usize,
    seed: u64,
) -> Vec<Coord> {
    let floor = ACTIVE * loss.abs().max(1.0);
    let mut pool = Vec::new();
    for (name, m) in grads.tensors() {
        if !select(&name) {
            continue;
        }
        for (i, g) in m.data().iter().enumerate() {
            if g.abs() > floor {
                pool.push(Coord {
                    tensor: name.clone(),
                    index: i,
                });
            }
        }
    }
    assert!(pool.len() >= n, "only {} active coordinates", pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| pool.swap_remove(rng.random_range(0..pool.len())))
        .collect()
}

pub fn compare(
    params: &Parameters,
    grads: &Gradients,
    coords: &[Coord],
    loss: &dyn Fn(&Parameters) -> f64,
) -> Vec<Agreement> {
    coords
        .iter()
        .map(|c| Agreement {
            coord: c.clone(),
            analytic: value_at(grads, c),
            numeric: numeric_gradient(params, c, loss),
        })
        .collect()
}

pub fn max_relative_error(results: &[Agreement]) -> f64 {
    results
        .iter()
        .map(Agreement::relative_error)
        .fold(0.0, f64::max)
}

pub fn is_body(name: &str) -> bool {
    name.starts_with("embeddings.") || name.starts_with("layers.") || name.starts_with("pooler.")
}
