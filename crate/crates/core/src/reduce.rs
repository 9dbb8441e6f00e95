//! Reductions with a fixed blocking so results do not depend on how work
//! is scheduled.

pub const BLOCK: usize = 4096;

pub fn sum(xs: &[f64]) -> f64 {
    xs.chunks(BLOCK)
        .map(|c| c.iter().sum::<f64>())
        .fold(0.0, |acc, s| acc + s)
}

pub fn dot(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    xs.chunks(BLOCK)
        .zip(ys.chunks(BLOCK))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .fold(0.0, |acc, s| acc + s)
}

/// `sum_i w_i x_i y_i`
pub fn dot3(ws: &[f64], xs: &[f64], ys: &[f64]) -> f64 {
    ws.chunks(BLOCK)
        .zip(xs.chunks(BLOCK))
        .zip(ys.chunks(BLOCK))
        .map(|((w, a), b)| w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum::<f64>())
        .fold(0.0, |acc, s| acc + s)
}
