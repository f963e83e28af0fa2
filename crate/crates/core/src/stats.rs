//! Goodness-of-fit and summary statistics used by the validation suite.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Minimum expected count per bin after pooling.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

fn chi2_sf(x: f64, dof: f64) -> Result<f64> {
    let d = ChiSquared::new(dof).map_err(|e| Error::InvalidInput(format!("chi-square with {dof} dof: {e}")))?;
    Ok(d.sf(x))
}

/// Upper `q` quantile point of a chi-square law (`q = 0.99` gives the 99th percentile).
pub fn chi2_quantile(q: f64, dof: f64) -> Result<f64> {
    let d = ChiSquared::new(dof).map_err(|e| Error::InvalidInput(format!("chi-square with {dof} dof: {e}")))?;
    Ok(d.inverse_cdf(q))
}

/// Merge adjacent bins left to right until each expected count reaches
/// [`MIN_EXPECTED`]; a short tail joins the last full bin.
fn pool(observed: &[f64], expected: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&oi, &ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= MIN_EXPECTED {
            obs.push(o);
            exp.push(e);
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        if let (Some(lo), Some(le)) = (obs.last_mut(), exp.last_mut()) {
            *lo += o;
            *le += e;
        } else {
            obs.push(o);
            exp.push(e);
        }
    }
    (obs, exp)
}

/// Pearson chi-square test of observed counts against bin probabilities.
/// `probs` must sum to one; put any tail mass in the last bin. `fitted` is
/// the number of parameters estimated from the same data.
pub fn chi2_gof(observed: &[u64], probs: &[f64], fitted: usize) -> Result<TestOutcome> {
    if observed.len() != probs.len() || observed.is_empty() {
        return Err(Error::InvalidInput("chi2_gof: bin count mismatch".into()));
    }
    let total: u64 = observed.iter().sum();
    let psum: f64 = probs.iter().sum();
    if (psum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("chi2_gof: probabilities sum to {psum}")));
    }
    let n = total as f64;
    let obs: Vec<f64> = observed.iter().map(|&c| c as f64).collect();
    let exp: Vec<f64> = probs.iter().map(|p| p * n).collect();
    let (obs, exp) = pool(&obs, &exp);
    let dof = obs.len() as f64 - 1.0 - fitted as f64;
    if dof < 1.0 {
        return Err(Error::InvalidInput("chi2_gof: too few bins after pooling".into()));
    }
    let statistic: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
    Ok(TestOutcome {
        statistic,
        dof,
        p_value: chi2_sf(statistic, dof)?,
    })
}

/// Chi-square test that two count vectors over the same bins come from one law.
pub fn chi2_two_sample(a: &[u64], b: &[u64]) -> Result<TestOutcome> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput("chi2_two_sample: bin count mismatch".into()));
    }
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let n = na + nb;
    // Pool on the smaller expected count of the two samples.
    let pooled: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| (x + y) as f64).collect();
    let min_share = na.min(nb) / n;
    let exp_small: Vec<f64> = pooled.iter().map(|c| c * min_share).collect();
    let mut groups = Vec::new();
    let (mut ga, mut gb, mut e) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        ga += a[i] as f64;
        gb += b[i] as f64;
        e += exp_small[i];
        if e >= MIN_EXPECTED {
            groups.push((ga, gb));
            ga = 0.0;
            gb = 0.0;
            e = 0.0;
        }
    }
    if ga + gb > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += ga;
                last.1 += gb;
            }
            None => groups.push((ga, gb)),
        }
    }
    let dof = groups.len() as f64 - 1.0;
    if dof < 1.0 {
        return Err(Error::InvalidInput("chi2_two_sample: too few bins after pooling".into()));
    }
    let statistic: f64 = groups
        .iter()
        .map(|&(x, y)| {
            let col = x + y;
            let ex = col * na / n;
            let ey = col * nb / n;
            (x - ex).powi(2) / ex + (y - ey).powi(2) / ey
        })
        .sum();
    Ok(TestOutcome {
        statistic,
        dof,
        p_value: chi2_sf(statistic, dof)?,
    })
}

/// Kolmogorov survival function `Q(l) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 l^2)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<TestOutcome> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("ks_one_sample: no samples".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(TestOutcome {
        statistic: d,
        dof: n,
        p_value: ks_p(d, n),
    })
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("ks_two_sample: empty sample".into()));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let n_eff = na * nb / (na + nb);
    Ok(TestOutcome {
        statistic: d,
        dof: n_eff,
        p_value: ks_p(d, n_eff),
    })
}

/// G-test of independence on a contingency table, with the plug-in mutual
/// information (nats). Rows and columns with zero totals are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceOutcome {
    pub mutual_information: f64,
    /// 99th percentile of the mutual information under independence.
    pub null_p99: f64,
    pub test: TestOutcome,
}

pub fn independence_test(table: &[Vec<u64>]) -> Result<IndependenceOutcome> {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    let width = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidInput("independence_test: ragged table".into()));
    }
    let cols: Vec<usize> = (0..width).filter(|&j| rows.iter().any(|r| r[j] > 0)).collect();
    if rows.len() < 2 || cols.len() < 2 {
        return Err(Error::InvalidInput("independence_test: need at least a 2x2 table".into()));
    }
    let n: f64 = rows.iter().flat_map(|r| r.iter()).sum::<u64>() as f64;
    let row_tot: Vec<f64> = rows.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_tot: Vec<f64> = cols.iter().map(|&j| rows.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let mut mi = 0.0;
    for (i, r) in rows.iter().enumerate() {
        for (jj, &j) in cols.iter().enumerate() {
            let c = r[j] as f64;
            if c > 0.0 {
                mi += c / n * (c * n / (row_tot[i] * col_tot[jj])).ln();
            }
        }
    }
    let g = 2.0 * n * mi;
    let dof = ((rows.len() - 1) * (cols.len() - 1)) as f64;
    Ok(IndependenceOutcome {
        mutual_information: mi,
        null_p99: chi2_quantile(0.99, dof)? / (2.0 * n),
        test: TestOutcome {
            statistic: g,
            dof,
            p_value: chi2_sf(g, dof)?,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator), 0 for n < 2.
    pub std: f64,
    /// Standard error of the mean.
    pub se: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    if n == 0 {
        return Summary { n, mean: f64::NAN, std: f64::NAN, se: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary {
        n,
        mean,
        std,
        se: std / (n as f64).sqrt(),
    }
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_means(xs: &[f64], batches: usize) -> Result<Summary> {
    if batches < 2 || xs.len() < batches {
        return Err(Error::InvalidInput(format!(
            "batch_means: {} values cannot fill {batches} batches",
            xs.len()
        )));
    }
    let size = xs.len() / batches;
    let means: Vec<f64> = xs.chunks_exact(size).take(batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    Ok(summarize(&means))
}

/// Standard error of a binomial proportion with known `p`.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Bonferroni-corrected per-test level.
pub fn bonferroni(alpha: f64, tests: usize) -> f64 {
    alpha / tests.max(1) as f64
}
