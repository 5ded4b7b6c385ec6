//! Additive-recurrence low-discrepancy points on the unit cube.
//!
//! Point `n` is `frac(0.5 + n·α)` with `α_j = g^{-j}`, where `g` is the
//! positive root of `x^{d+1} = x + 1`. Good coverage in any dimension with no
//! tables, and the sequence is extensible one point at a time.

#[derive(Debug, Clone)]
pub struct RSequence {
    alpha: Vec<f64>,
    next: u64,
}

impl RSequence {
    pub fn new(dim: usize) -> Self {
        let g = generalized_golden_ratio(dim);
        let alpha = (1..=dim).map(|j| g.powi(-(j as i32)).fract()).collect();
        RSequence { alpha, next: 1 }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// The `n`-th point (1-based as in the recurrence).
    pub fn point(&self, n: u64) -> Vec<f64> {
        self.alpha
            .iter()
            .map(|a| (0.5 + a * n as f64).fract())
            .collect()
    }
}

impl Iterator for RSequence {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let p = self.point(self.next);
        self.next += 1;
        Some(p)
    }
}

/// Positive root of `x^{d+1} = x + 1` by fixed-point iteration.
fn generalized_golden_ratio(dim: usize) -> f64 {
    let e = 1.0 / (dim as f64 + 1.0);
    let mut x: f64 = 2.0;
    for _ in 0..100 {
        x = (1.0 + x).powf(e);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_ratio_in_one_dimension() {
        let g = generalized_golden_ratio(1);
        assert!((g - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
        let plastic = generalized_golden_ratio(2);
        assert!((plastic.powi(3) - plastic - 1.0).abs() < 1e-12);
    }

    #[test]
    fn points_in_unit_cube_and_spread() {
        let seq = RSequence::new(3);
        let pts: Vec<Vec<f64>> = seq.take(512).collect();
        for p in &pts {
            assert!(p.iter().all(|x| (0.0..1.0).contains(x)));
        }
        // each octant of the cube receives close to 1/8 of the points
        let mut counts = [0usize; 8];
        for p in &pts {
            let k = p.iter().enumerate().map(|(j, x)| usize::from(*x >= 0.5) << j).sum::<usize>();
            counts[k] += 1;
        }
        for c in counts {
            assert!((c as i64 - 64).abs() <= 10, "{counts:?}");
        }
    }
}
