//! Transit-time histograms, Gaussian fitting and the window arithmetic that
//! drives the iterative refinement.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::types::{NodeId, TransitDistribution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    /// In-range samples.
    pub support: usize,
    /// Out-of-range samples that were dropped.
    pub discarded: usize,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    /// A histogram with no in-range samples carries no evidence.
    pub fn is_valid(&self) -> bool {
        self.support > 0
    }

    pub fn nonempty_bins(&self) -> usize {
        self.masses.iter().filter(|m| **m > 0.0).count()
    }
}

/// Histogram of transit times over `[lo, hi]`, normalized by the in-range
/// count. Bins are right-closed `(e_k, e_k+1]`; a sample exactly at `lo`
/// lands in the first bin.
pub fn build_histogram(delta_ts: &[f64], bin_width: f64, lo: f64, hi: f64) -> Result<Histogram> {
    if !(bin_width > 0.0) {
        return Err(invalid("histogram", "bin width must be positive"));
    }
    if !(hi > lo) {
        return Err(invalid("histogram", "range must satisfy hi > lo"));
    }
    let n_bins = ((hi - lo) / bin_width - 1e-9).ceil().max(1.0) as usize;
    let edges: Vec<f64> = (0..=n_bins).map(|k| lo + k as f64 * bin_width).collect();
    let mut counts = vec![0usize; n_bins];
    let mut discarded = 0;
    for &x in delta_ts {
        if !(x >= lo && x <= hi) {
            discarded += 1;
            continue;
        }
        let k = ((x - lo) / bin_width).ceil() as usize;
        counts[k.saturating_sub(1).min(n_bins - 1)] += 1;
    }
    let support = delta_ts.len() - discarded;
    let masses = if support == 0 {
        vec![0.0; n_bins]
    } else {
        counts.iter().map(|&c| c as f64 / support as f64).collect()
    };
    Ok(Histogram {
        edges,
        masses,
        support,
        discarded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mu: f64,
    pub sigma: f64,
    /// 1 - R^2, clamped to [0, 1].
    pub error: f64,
    pub degenerate: bool,
}

impl GaussianFit {
    pub fn value(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

fn moments(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let total: f64 = ys.iter().sum();
    if total <= 0.0 {
        return (xs.iter().sum::<f64>() / xs.len() as f64, 0.0);
    }
    let mean = xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>() / total;
    let var = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| y * (x - mean).powi(2))
        .sum::<f64>()
        / total;
    (mean, var.sqrt())
}

/// Coefficient of determination of `model` against `(xs, ys)`. Flat data has
/// no variance to explain and scores 0.
pub fn r_squared(xs: &[f64], ys: &[f64], model: impl Fn(f64) -> f64) -> f64 {
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot <= f64::EPSILON * f64::EPSILON {
        return 0.0;
    }
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - model(*x)).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

struct Bounds {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Bounds {
    fn project(&self, p: Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| p[i].clamp(self.lo[i], self.hi[i]))
    }
}

fn sse(xs: &[f64], ys: &[f64], p: &Vector3<f64>) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| {
            let z = (x - p[1]) / p[2];
            (y - p[0] * (-0.5 * z * z).exp()).powi(2)
        })
        .sum()
}

/// Box-constrained Levenberg-Marquardt on `(amplitude, mu, sigma)`.
fn levenberg_marquardt(xs: &[f64], ys: &[f64], start: Vector3<f64>, bounds: &Bounds) -> (Vector3<f64>, f64) {
    let mut p = bounds.project(start);
    let mut cost = sse(xs, ys, &p);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (x, y) in xs.iter().zip(ys) {
            let d = x - p[1];
            let s2 = p[2] * p[2];
            let e = (-0.5 * d * d / s2).exp();
            let g = p[0] * e;
            let j = Vector3::new(e, g * d / s2, g * d * d / (s2 * p[2]));
            jtj += j * j.transpose();
            jtr += j * (y - g);
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut a = jtj;
            for i in 0..3 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let cand = bounds.project(p + step);
            let c = sse(xs, ys, &cand);
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                p = cand;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (p, cost)
}

/// Least-squares fit of `a * exp(-(x - mu)^2 / (2 sigma^2))` to the histogram's
/// (bin center, mass) points; the error is `1 - R^2` over every bin,
/// including empty ones. Histograms with fewer than three non-empty bins are
/// flagged degenerate with error 1.
pub fn fit_gaussian(hist: &Histogram) -> GaussianFit {
    let xs = hist.centers();
    let ys = &hist.masses;
    let w = hist.bin_width();
    let (lo, hi) = (hist.edges[0], hist.edges[hist.edges.len() - 1]);
    let (mean, sd) = moments(&xs, ys);
    let sd = sd.max(0.5 * w);

    if !hist.is_valid() || hist.nonempty_bins() < 3 {
        let peak = ys.iter().cloned().fold(0.0, f64::max);
        return GaussianFit {
            amplitude: peak,
            mu: mean,
            sigma: sd,
            error: 1.0,
            degenerate: true,
        };
    }

    let peak_mass = ys.iter().cloned().fold(0.0, f64::max);
    let bounds = Bounds {
        lo: Vector3::new(0.0, lo, 0.25 * w),
        hi: Vector3::new(2.0 * peak_mass.max(1e-12) + 1.0, hi, hi - lo),
    };

    // Moment start, plus starts of several widths at the peak of the
    // 5-bin smoothed histogram; the best optimum wins.
    let mut starts = vec![Vector3::new(peak_mass, mean, sd)];
    let smooth: Vec<f64> = (0..ys.len())
        .map(|k| {
            let (a, b) = (k.saturating_sub(2), (k + 3).min(ys.len()));
            ys[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect();
    let k_peak = smooth
        .iter()
        .enumerate()
        .fold(0, |best, (k, y)| if *y > smooth[best] { k } else { best });
    for width in [1.0, 3.0, 10.0, 30.0] {
        starts.push(Vector3::new(ys[k_peak].max(smooth[k_peak]), xs[k_peak], width * w));
    }

    let (best, _) = starts
        .into_iter()
        .map(|s| levenberg_marquardt(&xs, ys, s, &bounds))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap();

    let fit = GaussianFit {
        amplitude: best[0],
        mu: best[1],
        sigma: best[2],
        error: 0.0,
        degenerate: false,
    };
    let r2 = r_squared(&xs, ys, |x| fit.value(x));
    GaussianFit {
        error: (1.0 - r2).clamp(0.0, 1.0),
        ..fit
    }
}

/// `exp(-sigma / scale) * (1 - error)`.
pub fn connectivity_confidence(sigma: f64, error: f64, scale: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(scale > 0.0) {
        return Err(invalid("confidence", "sigma and scale must be positive"));
    }
    if !(0.0..=1.0).contains(&error) {
        return Err(invalid("confidence", "fit error must lie in [0,1]"));
    }
    Ok((-sigma / scale).exp() * (1.0 - error))
}

/// Standard-normal quantile of `(1 + R/100) / 2`.
pub fn central_z(r: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 * (1.0 + r / 100.0))
}

/// Bounds `(T_L, T_U)` enclosing the central `R` percent of `N(mu, sigma^2)`.
pub fn time_bounds(mu: f64, sigma: f64, r: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(invalid("time bounds", "sigma must be positive"));
    }
    if !(r > 0.0 && r < 100.0) {
        return Err(invalid("time bounds", "R must lie in (0,100)"));
    }
    let z = central_z(r);
    Ok((mu - z * sigma, mu + z * sigma))
}

/// Bounds enclosing the central `R` percent of the histogram mass, linearly
/// interpolated within bins.
pub fn empirical_bounds(hist: &Histogram, r: f64) -> Result<(f64, f64)> {
    if !hist.is_valid() {
        return Err(invalid("time bounds", "empty histogram"));
    }
    if !(r > 0.0 && r < 100.0) {
        return Err(invalid("time bounds", "R must lie in (0,100)"));
    }
    let tail = 0.5 * (1.0 - r / 100.0);
    let quantile = |q: f64| {
        let mut acc = 0.0;
        for (k, m) in hist.masses.iter().enumerate() {
            if acc + m >= q && *m > 0.0 {
                let frac = (q - acc) / m;
                return hist.edges[k] + frac * (hist.edges[k + 1] - hist.edges[k]);
            }
            acc += m;
        }
        hist.edges[hist.edges.len() - 1]
    };
    Ok((quantile(tail), quantile(1.0 - tail)))
}

/// Window length `T = (T_U - T_L) / (1 - E)`.
pub fn update_window(error: f64, t_lower: f64, t_upper: f64) -> Result<f64> {
    if error >= 1.0 {
        return Err(Error::DegenerateFit);
    }
    if !(error >= 0.0) {
        return Err(invalid("window update", "fit error must lie in [0,1)"));
    }
    if !(t_upper > t_lower) {
        return Err(invalid("window update", "requires T_U > T_L"));
    }
    Ok((t_upper - t_lower) / (1.0 - error))
}

/// Histogram, fit and confidence for one directed pair.
pub fn transit_distribution(
    source: NodeId,
    dest: NodeId,
    delta_ts: &[f64],
    bin_width: f64,
    range: (f64, f64),
    sigma_scale: f64,
) -> Result<(TransitDistribution, GaussianFit)> {
    let hist = build_histogram(delta_ts, bin_width, range.0, range.1)?;
    let fit = fit_gaussian(&hist);
    let confidence = if hist.is_valid() {
        connectivity_confidence(fit.sigma, fit.error, sigma_scale)?
    } else {
        0.0
    };
    Ok((
        TransitDistribution {
            source,
            dest,
            bin_edges: hist.edges,
            masses: hist.masses,
            mu: fit.mu,
            sigma: fit.sigma,
            amplitude: fit.amplitude,
            fit_error: fit.error,
            confidence,
            support: hist.support,
            discarded: hist.discarded,
        },
        fit,
    ))
}
