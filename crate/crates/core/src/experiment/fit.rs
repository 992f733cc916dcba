//! Seed averaging and log-log rate fits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values below this are raised to it before taking logarithms.
pub const VALUE_FLOOR: f64 = 1e-300;
/// Fewest points a reportable fit may use.
pub const MIN_FIT_POINTS: usize = 5;

/// Recorded quantities of one trial on a common time grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialSeries {
    pub t: Vec<u64>,
    pub quantities: BTreeMap<String, Vec<f64>>,
}

impl TrialSeries {
    pub fn new(t: Vec<u64>) -> Self {
        Self {
            t,
            quantities: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.t.len() {
            return Err(Error::Aggregation(format!(
                "quantity {name} has {} values for {} times",
                values.len(),
                self.t.len()
            )));
        }
        self.quantities.insert(name.to_string(), values);
        Ok(())
    }
}

/// Pointwise mean and standard error of one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCurve {
    pub t: Vec<u64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl MeanCurve {
    pub fn points(&self) -> Vec<(u64, f64)> {
        self.t.iter().copied().zip(self.mean.iter().copied()).collect()
    }

    /// Mean at time `t`, if recorded.
    pub fn at(&self, t: u64) -> Option<f64> {
        self.t.binary_search(&t).ok().map(|k| self.mean[k])
    }

    pub fn last(&self) -> Option<(u64, f64)> {
        Some((*self.t.last()?, *self.mean.last()?))
    }
}

/// Averages trials in the order given.
///
/// Every trial must have the same time grid and the same quantities. The
/// standard error is the sample standard deviation over `√n` (zero for a
/// single trial).
pub fn aggregate_trials(trials: &[TrialSeries]) -> Result<BTreeMap<String, MeanCurve>> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Aggregation("no trials to aggregate".into()))?;
    for (k, tr) in trials.iter().enumerate().skip(1) {
        if tr.t != first.t {
            return Err(Error::Aggregation(format!("trial {k} has a different record grid")));
        }
        if !tr.quantities.keys().eq(first.quantities.keys()) {
            return Err(Error::Aggregation(format!("trial {k} records different quantities")));
        }
    }
    let n = trials.len() as f64;
    let mut out = BTreeMap::new();
    for name in first.quantities.keys() {
        let len = first.t.len();
        let mut mean = vec![0.0; len];
        for tr in trials {
            for (m, v) in mean.iter_mut().zip(&tr.quantities[name]) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut stderr = vec![0.0; len];
        if trials.len() > 1 {
            for tr in trials {
                for ((s, v), m) in stderr.iter_mut().zip(&tr.quantities[name]).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            for s in &mut stderr {
                *s = (*s / (n - 1.0)).sqrt() / n.sqrt();
            }
        }
        out.insert(
            name.clone(),
            MeanCurve {
                t: first.t.clone(),
                mean,
                stderr,
            },
        );
    }
    Ok(out)
}

/// Least-squares line through `(log(t+1), log v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (u64, u64),
    pub n_points: usize,
}

/// Fits `log v = intercept + slope · log(t + 1)` over points with
/// `window.0 ≤ t ≤ window.1`.
pub fn fit_rate(curve: &[(u64, f64)], window: (u64, u64)) -> Result<RateFit> {
    let pts: Vec<(u64, f64)> = curve
        .iter()
        .copied()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} points in window [{}, {}], need at least {MIN_FIT_POINTS}",
            pts.len(),
            window.0,
            window.1
        )));
    }
    if pts.iter().any(|(_, v)| !v.is_finite() || *v < 0.0) {
        return Err(Error::Fit("values must be finite and non-negative".into()));
    }
    if pts.iter().all(|(_, v)| *v == 0.0) {
        return Err(Error::Fit("all-zero window".into()));
    }
    let floored = pts.iter().filter(|(_, v)| *v < VALUE_FLOOR).count();
    if floored > 0 {
        log::warn!("{floored} values below {VALUE_FLOOR:e} raised to the floor before fitting");
    }
    let xy: Vec<(f64, f64)> = pts
        .iter()
        .map(|(t, v)| (((*t + 1) as f64).ln(), v.max(VALUE_FLOOR).ln()))
        .collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("window contains a single time".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        window: (pts[0].0, pts[pts.len() - 1].0),
        n_points: pts.len(),
    })
}

/// Default fit window: the last `decades` decades of `[0, t_end]`, starting no
/// earlier than `skip`.
pub fn default_window(t_end: u64, decades: f64, skip: u64) -> (u64, u64) {
    let lo = (t_end as f64 / 10f64.powf(decades)).ceil() as u64;
    (lo.max(skip), t_end)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power_law(c: f64, p: f64) -> Vec<(u64, f64)> {
        crate::schedules::log_grid(100_000, 20)
            .into_iter()
            .map(|t| (t, c / ((t + 1) as f64).powf(p)))
            .collect()
    }

    #[test]
    fn power_laws_recovered() {
        for p in [1.0, 2.0 / 3.0, 0.5] {
            let f = fit_rate(&power_law(3.5, p), (10, 100_000)).unwrap();
            assert!((f.slope + p).abs() < 1e-12, "{p}: {}", f.slope);
            assert!((f.intercept - 3.5f64.ln()).abs() < 1e-10);
            assert!((f.r_squared - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(fit_rate(&power_law(1.0, 1.0), (10, 12)), Err(Error::Fit(_))));
    }

    #[test]
    fn all_zero_window() {
        let z: Vec<(u64, f64)> = (0..10).map(|t| (t, 0.0)).collect();
        assert!(matches!(fit_rate(&z, (0, 9)), Err(Error::Fit(m)) if m.contains("all-zero")));
    }

    #[test]
    fn aggregation_arithmetic() {
        let mut a = TrialSeries::new(vec![0, 1, 2]);
        a.insert("V", vec![1.0, 2.0, 4.0]).unwrap();
        let mut b = TrialSeries::new(vec![0, 1, 2]);
        b.insert("V", vec![3.0, 6.0, 12.0]).unwrap();
        let single = aggregate_trials(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single["V"].mean, vec![1.0, 2.0, 4.0]);
        assert_eq!(single["V"].stderr, vec![0.0; 3]);
        let both = aggregate_trials(&[a.clone(), b]).unwrap();
        assert_eq!(both["V"].mean, vec![2.0, 4.0, 8.0]);
        assert_eq!(both["V"].stderr, vec![1.0, 2.0, 4.0]);
        let mut c = TrialSeries::new(vec![0, 1, 3]);
        c.insert("V", vec![0.0; 3]).unwrap();
        assert!(matches!(aggregate_trials(&[a, c]), Err(Error::Aggregation(_))));
    }

    #[test]
    fn window_rule() {
        assert_eq!(default_window(100_000, 1.5, 0), (3163, 100_000));
        assert_eq!(default_window(100_000, 1.5, 10_000), (10_000, 100_000));
    }
}
