//! Small descriptive-statistics helpers.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Median; averages the two central values for even lengths. NaNs sort last.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty slice");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Ordinary least-squares line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Mean, variance and excess kurtosis of positions `0..w.len()` weighted by `w`.
pub fn weighted_moments(w: &[f64]) -> (f64, f64, f64) {
    let total: f64 = w.iter().sum();
    let m = w.iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>() / total;
    let central = |k: i32| {
        w.iter()
            .enumerate()
            .map(|(i, p)| (i as f64 - m).powi(k) * p)
            .sum::<f64>()
            / total
    };
    let var = central(2);
    let kurt = central(4) / (var * var) - 3.0;
    (m, var, kurt)
}

/// `(Σ n)² / Σ n²`: effective number of occupied sites.
pub fn participation_ratio(n: &[f64]) -> f64 {
    let s: f64 = n.iter().sum();
    let s2: f64 = n.iter().map(|x| x * x).sum();
    s * s / s2
}

/// Half the L1 distance between two distributions, each normalised first.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    0.5 * a.iter().zip(b).map(|(x, y)| (x / sa - y / sb).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let f = linear_fit(&xs, &ys);
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept + 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_moments() {
        let (m, v, k) = weighted_moments(&[1.0; 5]);
        assert_eq!(m, 2.0);
        assert_eq!(v, 2.0);
        // discrete uniform on 5 points: excess kurtosis -1.3
        assert!((k + 1.3).abs() < 1e-12);
        assert_eq!(participation_ratio(&[1.0; 5]), 5.0);
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 2.0]), 1.0);
    }
}
