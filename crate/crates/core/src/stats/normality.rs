//! Shapiro-Wilk (Royston's AS R94), Anderson-Darling and D'Agostino K².

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::describe::central_moments;
use super::TestResult;
use crate::error::{Error, Result};

/// Largest sample the Royston approximation is valid for.
pub const SHAPIRO_MAX_N: usize = 5000;

/// Anderson-Darling critical value of A²* at α = 0.05 (composite normal).
pub const AD_CRITICAL_05: f64 = 0.787;

const SMALL: f64 = 1e-19;

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Shapiro-Wilk W and p-value. Requires 3 ≤ n ≤ 5000.
pub fn shapiro_wilk(xs: &[f64]) -> Result<TestResult> {
    let n = xs.len();
    if !(3..=SHAPIRO_MAX_N).contains(&n) {
        return Err(Error::SampleSize {
            got: n,
            needed: format!("3 <= n <= {SHAPIRO_MAX_N}"),
        });
    }
    if !xs.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("non-finite value in sample".into()));
    }
    let mut x = xs.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < SMALL {
        return Err(Error::Degenerate("sample has zero range".into()));
    }

    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let normal = std_normal();
    let an = n as f64;
    let nn2 = n / 2;
    // half[i] is the coefficient paired with the (i+1)-th largest value
    let mut half = vec![0.0; nn2];
    if n == 3 {
        half[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let an25 = an + 0.25;
        let m: Vec<f64> = (1..=nn2)
            .map(|i| normal.inverse_cdf((i as f64 - 0.375) / an25))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            half[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        half[0] = a1;
        for i in first..nn2 {
            half[i] = -m[i] / fac;
        }
    }

    // W as the squared correlation of the data with the antisymmetric
    // coefficient vector; 1 − W is formed directly to keep precision near 1.
    let mut a = vec![0.0; n];
    for i in 0..nn2 {
        a[i] = -half[i];
        a[n - 1 - i] = half[i];
    }
    let mean = x.iter().sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (ai, xi) in a.iter().zip(&x) {
        let xc = (xi - mean) / range;
        ssa += ai * ai;
        ssx += xc * xc;
        sax += ai * xc;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = ((ssassx - sax) * (ssassx + sax) / (ssa * ssx)).max(0.0);
    let w = 1.0 - w1;

    if n == 3 {
        const PI6: f64 = 6.0 / std::f64::consts::PI;
        const STQR: f64 = std::f64::consts::FRAC_PI_3;
        let p = (PI6 * (w.sqrt().asin() - STQR)).clamp(0.0, 1.0);
        return Ok(TestResult {
            statistic: w,
            p_value: p,
        });
    }
    if w1 == 0.0 {
        return Ok(TestResult {
            statistic: 1.0,
            p_value: 1.0,
        });
    }

    let mut y = w1.ln();
    let xx = an.ln();
    let (m, s) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Ok(TestResult {
                statistic: w,
                p_value: 1e-99,
            });
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        (poly(&C5, xx), poly(&C6, xx).exp())
    };
    let p = Normal::new(m, s)
        .map_err(|e| Error::Numeric(e.to_string()))?
        .sf(y);
    Ok(TestResult {
        statistic: w,
        p_value: p.clamp(0.0, 1.0),
    })
}

/// Shapiro-Wilk on at most 5000 values: larger samples are uniformly
/// subsampled without replacement using `seed`, with a logged warning.
pub fn shapiro_wilk_subsampled(xs: &[f64], seed: u64) -> Result<TestResult> {
    if xs.len() <= SHAPIRO_MAX_N {
        return shapiro_wilk(xs);
    }
    log::warn!(
        "Shapiro-Wilk: subsampling {} values to {SHAPIRO_MAX_N}",
        xs.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, xs.len(), SHAPIRO_MAX_N).into_vec();
    idx.sort_unstable();
    let sub: Vec<f64> = idx.into_iter().map(|i| xs[i]).collect();
    shapiro_wilk(&sub)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AndersonDarling {
    /// Small-sample corrected A²*.
    pub statistic: f64,
    pub critical_value: f64,
}

impl AndersonDarling {
    /// Normality rejected at α = 0.05.
    pub fn rejects(&self) -> bool {
        self.statistic > self.critical_value
    }
}

/// Anderson-Darling test for normality with mean and variance estimated
/// from the sample. Requires n ≥ 8.
pub fn anderson_darling(xs: &[f64]) -> Result<AndersonDarling> {
    let n = xs.len();
    if n < 8 {
        return Err(Error::SampleSize {
            got: n,
            needed: "n >= 8".into(),
        });
    }
    if !xs.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("non-finite value in sample".into()));
    }
    let an = n as f64;
    let (mean, m2, _, _) = central_moments(xs);
    if m2 == 0.0 {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let sd = (m2 * an / (an - 1.0)).sqrt();
    let mut z: Vec<f64> = xs.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let normal = std_normal();
    let mut acc = 0.0;
    for i in 0..n {
        let lo = normal.cdf(z[i]).max(f64::MIN_POSITIVE).ln();
        let hi = normal.sf(z[n - 1 - i]).max(f64::MIN_POSITIVE).ln();
        acc += (2 * i + 1) as f64 * (lo + hi);
    }
    let a2 = -an - acc / an;
    Ok(AndersonDarling {
        statistic: a2 * (1.0 + 0.75 / an + 2.25 / (an * an)),
        critical_value: AD_CRITICAL_05,
    })
}

/// D'Agostino-Pearson omnibus K² from the normalized skewness and kurtosis.
/// Requires n ≥ 20.
pub fn dagostino_k2(xs: &[f64]) -> Result<TestResult> {
    let n = xs.len();
    if n < 20 {
        return Err(Error::SampleSize {
            got: n,
            needed: "n >= 20".into(),
        });
    }
    if !xs.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("non-finite value in sample".into()));
    }
    let (_, m2, m3, m4) = central_moments(xs);
    if m2 == 0.0 {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let an = n as f64;
    let g1 = m3 / m2.powf(1.5);
    let b2 = m4 / (m2 * m2);

    // skewness transform
    let y = g1 * ((an + 1.0) * (an + 3.0) / (6.0 * (an - 2.0))).sqrt();
    let beta2 = 3.0 * (an * an + 27.0 * an - 70.0) * (an + 1.0) * (an + 3.0)
        / ((an - 2.0) * (an + 5.0) * (an + 7.0) * (an + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let zs = delta * (y / alpha).asinh();

    // kurtosis transform
    let e = 3.0 * (an - 1.0) / (an + 1.0);
    let varb2 =
        24.0 * an * (an - 2.0) * (an - 3.0) / ((an + 1.0) * (an + 1.0) * (an + 3.0) * (an + 5.0));
    let xk = (b2 - e) / varb2.sqrt();
    let sqrtbeta1 = 6.0 * (an * an - 5.0 * an + 2.0) / ((an + 7.0) * (an + 9.0))
        * (6.0 * (an + 3.0) * (an + 5.0) / (an * (an - 2.0) * (an - 3.0))).sqrt();
    let a =
        6.0 + 8.0 / sqrtbeta1 * (2.0 / sqrtbeta1 + (1.0 + 4.0 / (sqrtbeta1 * sqrtbeta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + xk * (2.0 / (a - 4.0)).sqrt();
    if denom == 0.0 {
        return Err(Error::Numeric("kurtosis transform is singular".into()));
    }
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    let zk = (term1 - term2) / (2.0 / (9.0 * a)).sqrt();

    let k2 = zs * zs + zk * zk;
    if !k2.is_finite() {
        return Err(Error::Numeric("non-finite K² statistic".into()));
    }
    // chi-square with 2 degrees of freedom has survival exp(-x/2)
    Ok(TestResult {
        statistic: k2,
        p_value: (-k2 / 2.0).exp(),
    })
}

/// The three normality tests on one sample. A test whose sample-size
/// precondition is not met is reported as `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub shapiro: Option<TestResult>,
    pub anderson: Option<AndersonDarling>,
    pub dagostino: Option<TestResult>,
}

fn size_ok<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::SampleSize { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn normality_report(xs: &[f64], seed: u64) -> Result<NormalityReport> {
    Ok(NormalityReport {
        shapiro: size_ok(shapiro_wilk_subsampled(xs, seed))?,
        anderson: size_ok(anderson_darling(xs))?,
        dagostino: size_ok(dagostino_k2(xs))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal, StudentT};

    fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn shapiro_three_points() {
        let r = shapiro_wilk(&[1.0, 2.0, 3.0]).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-6);
        assert!((r.p_value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reference_values() {
        // reference values computed with scipy.stats
        let x = [
            148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0, 236.0,
        ];
        let r = shapiro_wilk(&x).unwrap();
        assert!(
            (r.statistic - 0.7888146948631716).abs() < 1e-6,
            "{}",
            r.statistic
        );
        assert!(
            (r.p_value - 0.006703814061898823).abs() < 1e-5,
            "{}",
            r.p_value
        );
        let r = shapiro_wilk(&[1.0, 2.0, 4.0, 7.0, 11.0, 16.0, 22.0]).unwrap();
        assert!((r.statistic - 0.9215784585093341).abs() < 1e-6);
        assert!((r.p_value - 0.48175546704603817).abs() < 1e-4);

        let y: Vec<f64> = (0..30).map(|i| (i as f64).powf(1.5)).collect();
        let k = dagostino_k2(&y).unwrap();
        assert!((k.statistic - 5.025251805373215).abs() < 1e-9);
        assert!((k.p_value - 0.08105511669512906).abs() < 1e-10);
        let a2 = 0.6086739672052097 * (1.0 + 0.75 / 30.0 + 2.25 / 900.0);
        assert!((anderson_darling(&y).unwrap().statistic - a2).abs() < 1e-9);
    }

    #[test]
    fn shapiro_errors() {
        assert!(matches!(
            shapiro_wilk(&[1.0, 2.0]),
            Err(Error::SampleSize { .. })
        ));
        assert!(matches!(
            shapiro_wilk(&vec![0.0; 5001]),
            Err(Error::SampleSize { .. })
        ));
        assert!(matches!(
            shapiro_wilk(&[4.0; 10]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn subsampled_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = normals(&mut rng, 7000);
        let a = shapiro_wilk_subsampled(&xs, 9).unwrap();
        let b = shapiro_wilk_subsampled(&xs, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bimodal_rejected_by_all() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..5000)
            .map(|_| {
                let c = if rng.random::<bool>() { 3.0 } else { -3.0 };
                c + Distribution::<f64>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        assert!(shapiro_wilk(&xs).unwrap().p_value < 1e-4);
        assert!(anderson_darling(&xs).unwrap().rejects());
        assert!(dagostino_k2(&xs).unwrap().p_value < 1e-4);
    }

    #[test]
    fn heavy_tails_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t3 = StudentT::new(3.0).unwrap();
        let xs: Vec<f64> = (0..5000).map(|_| t3.sample(&mut rng)).collect();
        assert!(dagostino_k2(&xs).unwrap().p_value < 1e-4);
    }

    #[test]
    fn uniform_rejected_by_anderson() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut rejected = 0;
        for _ in 0..100 {
            let xs: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
            rejected += anderson_darling(&xs).unwrap().rejects() as usize;
        }
        assert!(rejected >= 99);
    }

    #[test]
    fn normal_sample_mostly_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (mut sw, mut ad, mut k2) = (0, 0, 0);
        let trials = 200;
        for _ in 0..trials {
            let xs = normals(&mut rng, 500);
            sw += (shapiro_wilk(&xs).unwrap().p_value < 0.05) as usize;
            ad += anderson_darling(&xs).unwrap().rejects() as usize;
            let d = dagostino_k2(&xs).unwrap();
            assert!(d.statistic >= 0.0);
            k2 += (d.p_value < 0.05) as usize;
        }
        for r in [sw, ad, k2] {
            assert!(r <= 25, "{sw} {ad} {k2}");
        }
    }

    #[test]
    fn report_skips_small_samples() {
        let r = normality_report(&[1.0, 2.0, 4.0, 7.0], 0).unwrap();
        assert!(r.shapiro.is_some());
        assert!(r.anderson.is_none());
        assert!(r.dagostino.is_none());
    }
}
