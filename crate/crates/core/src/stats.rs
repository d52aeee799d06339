//! Correlation with significance tests, normal confidence intervals on
//! differences of means, and sensitivity summaries over many comparisons.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// A finite series with at least two values.
#[derive(Debug, Clone, PartialEq)]
pub struct Series(Vec<f64>);

impl Series {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!("series needs at least 2 values, got {}", values.len())));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("series contains NaN".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.0.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (self.0.len() - 1) as f64
    }
}

impl TryFrom<Vec<f64>> for Series {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Series::new(v)
    }
}

fn same_length(x: &Series, y: &Series) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("series lengths differ: {} vs {}", x.len(), y.len())));
    }
    Ok(())
}

pub fn pearson_r(x: &Series, y: &Series) -> Result<f64> {
    same_length(x, y)?;
    let (mx, my) = (x.mean(), y.mean());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.values().iter().zip(y.values()) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a series is constant".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-tailed p-value of Student's correlation test, `t = r sqrt((n-2)/(1-r^2))`
/// with `n - 2` degrees of freedom.
pub fn pearson_p_two_tailed(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("correlation test needs n >= 3, got {n}")));
    }
    if !(r.abs() <= 1.0) {
        return Err(Error::InvalidArgument(format!("|r| must be <= 1, got {r}")));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r.abs() * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    Ok((2.0 * dist.sf(t)).min(1.0))
}

/// Kendall's tau-b.
pub fn kendall_tau(x: &Series, y: &Series) -> Result<f64> {
    same_length(x, y)?;
    let (xs, ys) = (x.values(), y.values());
    let n = xs.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i].partial_cmp(&xs[j]).expect("no NaN");
            let dy = ys[i].partial_cmp(&ys[j]).expect("no NaN");
            use std::cmp::Ordering::Equal;
            match (dx == Equal, dy == Equal) {
                (true, true) => {
                    tied_x += 1;
                    tied_y += 1;
                }
                (true, false) => tied_x += 1,
                (false, true) => tied_y += 1,
                (false, false) => {
                    if dx == dy {
                        concordant += 1
                    } else {
                        discordant += 1
                    }
                }
            }
        }
    }
    let total = (n * (n - 1) / 2) as i64;
    let denom = (((total - tied_x) as f64) * ((total - tied_y) as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation("a series is entirely tied".into()));
    }
    Ok((concordant - discordant) as f64 / denom)
}

pub fn standard_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// `z` with `Phi(z) = p`.
pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn students_t_cdf(t: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("df > 0").cdf(t)
}

/// Result of testing `mean(b) - mean(a) > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonResult {
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `P(Z >= mean_diff / se)` under the null "difference <= 0".
    pub p_one_sided: f64,
    /// The two-sided `1 - alpha` interval lies strictly above zero.
    pub significant: bool,
    pub sign_positive: bool,
}

impl ComparisonResult {
    /// From a difference and its standard error. A zero standard error gives
    /// a degenerate interval at the difference, and p = 0.5 when the
    /// difference is also zero.
    pub fn from_moments(mean_diff: f64, se: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(se >= 0.0) || !mean_diff.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid moments: diff {mean_diff}, se {se}")));
        }
        let z = standard_normal_quantile(1.0 - alpha / 2.0);
        let (ci_low, ci_high, p) = if se == 0.0 {
            let p = if mean_diff > 0.0 {
                0.0
            } else if mean_diff < 0.0 {
                1.0
            } else {
                0.5
            };
            (mean_diff, mean_diff, p)
        } else {
            (mean_diff - z * se, mean_diff + z * se, standard_normal_cdf(-mean_diff / se))
        };
        Ok(Self {
            mean_diff,
            ci_low,
            ci_high,
            p_one_sided: p,
            significant: ci_low > 0.0,
            sign_positive: mean_diff > 0.0,
        })
    }

    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{label},{},{},{},{},{}",
            self.mean_diff, self.ci_low, self.ci_high, self.p_one_sided, self.significant
        )
    }
}

pub const COMPARISON_CSV_HEADER: &str = "label,mean_diff,ci_low,ci_high,p_one_sided,significant";

/// Welch-style normal interval for `mean(b) - mean(a)` on unpaired samples.
pub fn compare_means(a: &Series, b: &Series, alpha: f64) -> Result<ComparisonResult> {
    let diff = b.mean() - a.mean();
    let se = (a.variance() / a.len() as f64 + b.variance() / b.len() as f64).sqrt();
    ComparisonResult::from_moments(diff, se, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivitySummary {
    pub tpr: f64,
    pub sign_agreement: f64,
    pub mean_p: f64,
}

/// Summarises comparisons whose ground-truth effect is known to be a real
/// improvement; `all_true_positive` is the caller's assertion of that.
pub fn sensitivity_summary(results: &[ComparisonResult], all_true_positive: bool) -> Result<SensitivitySummary> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no comparisons to summarise".into()));
    }
    if !all_true_positive {
        return Err(Error::InvalidArgument(
            "sensitivity is only defined when every comparison is a true improvement".into(),
        ));
    }
    let n = results.len() as f64;
    Ok(SensitivitySummary {
        tpr: results.iter().filter(|r| r.significant).count() as f64 / n,
        sign_agreement: results.iter().filter(|r| r.sign_positive).count() as f64 / n,
        mean_p: results.iter().map(|r| r.p_one_sided).sum::<f64>() / n,
    })
}
