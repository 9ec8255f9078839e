//! Brute-force metric oracles that work symbol by symbol from expanded
//! label sequences, never from confusion-matrix margins.

/// One `(gold, pred)` symbol per counted event, row-major over the matrix.
pub fn expand(k: usize, counts: &[u64]) -> (Vec<usize>, Vec<usize>) {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for i in 0..k {
        for j in 0..k {
            for _ in 0..counts[i * k + j] {
                gold.push(i);
                pred.push(j);
            }
        }
    }
    (gold, pred)
}

/// Gorodkin's covariance form over one-hot indicator vectors, with every
/// sum scaled by the sample count so the arithmetic stays in integers.
pub fn mcc(k: usize, gold: &[usize], pred: &[usize]) -> f64 {
    let s = gold.len() as i128;
    let mut t = vec![0i128; k];
    let mut p = vec![0i128; k];
    for (&g, &q) in gold.iter().zip(pred) {
        t[g] += 1;
        p[q] += 1;
    }
    let (mut xy, mut xx, mut yy) = (0i128, 0i128, 0i128);
    for (&g, &q) in gold.iter().zip(pred) {
        for c in 0..k {
            let x = s * i128::from(g == c) - t[c];
            let y = s * i128::from(q == c) - p[c];
            xy += x * y;
            xx += x * x;
            yy += y * y;
        }
    }
    if xx == 0 || yy == 0 {
        return 0.0;
    }
    xy as f64 / ((xx as f64) * (yy as f64)).sqrt()
}

pub fn accuracy(gold: &[usize], pred: &[usize]) -> f64 {
    let hits = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    hits as f64 / gold.len() as f64
}

/// `(precision, recall, f1)` pooled over every label but 0.
pub fn micro(k: usize, gold: &[usize], pred: &[usize]) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for label in 1..k {
        for (&g, &p) in gold.iter().zip(pred) {
            match (g == label, p == label) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (
        div(tp, tp + fp),
        div(tp, tp + fn_),
        div(2 * tp, 2 * tp + fp + fn_),
    )
}

/// A sparse random K×K count matrix with K in `2..=max_k`. Roughly one in
/// eight matrices has every count in a single row or column, which zeroes
/// an MCC denominator factor.
pub fn random_counts<R: rand::Rng>(rng: &mut R, max_k: usize) -> (usize, Vec<u64>) {
    let k = rng.random_range(2..=max_k);
    let density: f64 = rng.random_range(0.05..0.6);
    let mut counts: Vec<u64> = (0..k * k)
        .map(|_| {
            if rng.random_bool(density) {
                rng.random_range(1..=6)
            } else {
                0
            }
        })
        .collect();
    match rng.random_range(0..16) {
        0 => {
            let col = rng.random_range(0..k);
            for (i, c) in counts.iter_mut().enumerate() {
                if i % k != col {
                    *c = 0;
                }
            }
        }
        1 => {
            let row = rng.random_range(0..k);
            for (i, c) in counts.iter_mut().enumerate() {
                if i / k != row {
                    *c = 0;
                }
            }
        }
        _ => {}
    }
    if counts.iter().all(|&c| c == 0) {
        counts[0] = 1;
    }
    (k, counts)
}
