use std::f64::consts::PI;

use crate::error::{Error, Result};

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Gaussian kernel density estimate of `samples` evaluated at `grid`.
pub fn kde(samples: &[f64], bandwidth: f64, grid: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Argument("kde needs at least one sample".into()));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Argument(format!(
            "bandwidth {bandwidth} must be positive"
        )));
    }
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * PI).sqrt());
    let inv_2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    Ok(grid
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|s| (-(x - s) * (x - s) * inv_2h2).exp())
                .sum::<f64>()
        })
        .collect())
}

/// Trapezoid rule over an ascending grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// 1-based ranks with ties sharing their average rank.
pub fn rank_average(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let ma = mean(a.iter().copied());
    let mb = mean(b.iter().copied());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate(
            "correlation undefined for a constant series".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "series lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate("need at least two points".into()));
    }
    pearson(&rank_average(a), &rank_average(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_peak() {
        let d = kde(&[0.0], 1.0, &[0.0]).unwrap();
        assert!((d[0] - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn symmetric_samples_give_even_density() {
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
        let d = kde(&[-1.0, 1.0], 0.3, &grid).unwrap();
        for i in 0..grid.len() {
            assert!((d[i] - d[grid.len() - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn kde_argument_errors() {
        assert!(kde(&[], 0.3, &[0.0]).is_err());
        assert!(kde(&[1.0], 0.0, &[0.0]).is_err());
        assert!(kde(&[1.0], f64::NAN, &[0.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            rank_average(&[10.0, 20.0, 10.0, 5.0]),
            vec![2.5, 4.0, 2.5, 1.0]
        );
    }

    #[test]
    fn spearman_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[1.0, 4.0, 9.0, 16.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&a, &[1.0; 4]).is_err());
        assert!(spearman(&a, &[1.0]).is_err());
    }
}
