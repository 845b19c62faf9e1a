//! Spearman's ρ and Kendall's τ_b with significance.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::TestResult;
use crate::error::{Error, Result};

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::dimension(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(Error::SampleSize {
            got: xs.len(),
            needed: "n >= 3".into(),
        });
    }
    if !xs.iter().chain(ys).all(|v| v.is_finite()) {
        return Err(Error::Numeric(
            "non-finite value in correlation input".into(),
        ));
    }
    Ok(())
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dimension(xs.len(), ys.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "correlation is undefined for a constant input".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ (Pearson correlation of average ranks) with a two-sided
/// p-value from Student's t with n − 2 degrees of freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<TestResult> {
    check_pair(xs, ys)?;
    let rho = pearson(&average_ranks(xs), &average_ranks(ys))?;
    let n = xs.len() as f64;
    let denom = 1.0 - rho * rho;
    let p_value = if denom <= 0.0 {
        0.0
    } else {
        let t = rho * ((n - 2.0) / denom).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 2.0).map_err(|e| Error::Numeric(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(TestResult {
        statistic: rho,
        p_value,
    })
}

/// Pair counts behind τ_b. `s` is (concordant − discordant); `n0` all pairs;
/// `x_ties`/`y_ties` the pairs tied in x / in y (joint ties counted in both).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KendallCounts {
    pub n0: i64,
    pub x_ties: i64,
    pub y_ties: i64,
    pub s: i64,
}

impl KendallCounts {
    pub fn tau_b(&self) -> Result<f64> {
        let dx = self.n0 - self.x_ties;
        let dy = self.n0 - self.y_ties;
        if dx == 0 || dy == 0 {
            return Err(Error::Degenerate(
                "Kendall's tau is undefined when one input is entirely tied".into(),
            ));
        }
        Ok(self.s as f64 / (dx as f64 * dy as f64).sqrt())
    }
}

/// Sort `v` in place counting the inversions (pairs out of order).
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps =
        merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + (n - j)].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

fn tied_pairs(sorted: &[f64]) -> i64 {
    let mut total = 0;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// O(n log n) pair counts (Knight's algorithm).
pub fn kendall_counts(xs: &[f64], ys: &[f64]) -> KendallCounts {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(ys[a].total_cmp(&ys[b])));
    let sx: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
    let mut sy: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();

    let x_ties = tied_pairs(&sx);
    let mut joint_ties = 0i64;
    let mut run = 1i64;
    for k in 1..n {
        if sx[k] == sx[k - 1] && sy[k] == sy[k - 1] {
            run += 1;
        } else {
            joint_ties += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint_ties += run * (run - 1) / 2;

    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut sy, &mut buf);
    let y_ties = tied_pairs(&sy);
    let n0 = (n as i64) * (n as i64 - 1) / 2;
    KendallCounts {
        n0,
        x_ties,
        y_ties,
        s: n0 - x_ties - y_ties + joint_ties - 2 * swaps,
    }
}

fn tie_sums(sorted: &[f64]) -> (f64, f64, f64) {
    // Σ t(t-1), Σ t(t-1)(t-2), Σ t(t-1)(2t+5) over tie groups of size t
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        if t > 1.0 {
            a += t * (t - 1.0);
            b += t * (t - 1.0) * (t - 2.0);
            c += t * (t - 1.0) * (2.0 * t + 5.0);
        }
        i = j;
    }
    (a, b, c)
}

/// Kendall's τ_b with a two-sided p-value from the normal approximation to
/// the concordance statistic, using the tie-adjusted variance.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<TestResult> {
    check_pair(xs, ys)?;
    let counts = kendall_counts(xs, ys);
    let tau = counts.tau_b()?;

    let n = xs.len() as f64;
    let mut sx = xs.to_vec();
    sx.sort_by(f64::total_cmp);
    let mut sy = ys.to_vec();
    sy.sort_by(f64::total_cmp);
    let (tx1, tx2, tx3) = tie_sums(&sx);
    let (ty1, ty2, ty3) = tie_sums(&sy);
    let var = (n * (n - 1.0) * (2.0 * n + 5.0) - tx3 - ty3) / 18.0
        + tx1 * ty1 / (2.0 * n * (n - 1.0))
        + tx2 * ty2 / (9.0 * n * (n - 1.0) * (n - 2.0));
    let p_value = if var <= 0.0 {
        return Err(Error::Degenerate("Kendall variance is not positive".into()));
    } else {
        let z = counts.s as f64 / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.sf(z.abs())).min(1.0)
    };
    Ok(TestResult {
        statistic: tau.clamp(-1.0, 1.0),
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 20.0, 5.0]),
            vec![2.0, 3.5, 3.5, 1.0]
        );
        assert_eq!(average_ranks(&[1.0, 1.0, 1.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = spearman(&xs, &xs).unwrap();
        assert_eq!((r.statistic, r.p_value), (1.0, 0.0));
        let rev: Vec<f64> = xs.iter().rev().copied().collect();
        assert_eq!(spearman(&xs, &rev).unwrap().statistic, -1.0);
        // Σd² = 2 → ρ = 1 − 6·2/(4·15) = 0.8
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r.statistic - 0.8).abs() < 1e-15);
        // t = 0.8·sqrt(2/0.36), two-sided t(2) p-value is 0.2 exactly
        assert!((r.p_value - 0.2).abs() < 1e-12, "{}", r.p_value);
    }

    #[test]
    fn spearman_errors() {
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::SampleSize { .. })
        ));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn kendall_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&xs, &xs).unwrap().statistic, 1.0);
        let c = kendall_counts(&xs, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(c.s, 4); // 5 concordant, 1 discordant
        assert!(
            (kendall_tau(&xs, &[1.0, 3.0, 2.0, 4.0]).unwrap().statistic - 4.0 / 6.0).abs() < 1e-15
        );
        assert!(matches!(
            kendall_tau(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn kendall_tied_counts() {
        // x ties: (0,1); y ties: (1,2),(0,3)... enumerate by hand
        let xs = [1.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 2.0, 2.0, 1.0];
        let c = kendall_counts(&xs, &ys);
        assert_eq!(c.n0, 6);
        assert_eq!(c.x_ties, 1);
        assert_eq!(c.y_ties, 2);
        // pairs: (0,1) x-tie; (0,2) +; (0,3) y-tie; (1,2) y-tie; (1,3) −; (2,3) −
        assert_eq!(c.s, -1);
    }
}
