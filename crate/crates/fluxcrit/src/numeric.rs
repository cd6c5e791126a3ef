//! Small numeric helpers: compensated summation, power-law fitting,
//! report-grade float formatting.

/// Neumaier-compensated accumulator.
///
/// Summation order is fixed by the caller; together with this compensation
/// the reductions in this crate are reproducible bit-for-bit regardless of
/// how work was partitioned before the reduce.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn sum_iter<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc.value()
    }
}

/// Result of an ordinary least-squares fit of `y = c * x^exponent`
/// on log-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFit {
    /// Prefactor `c`.
    pub c: f64,
    /// Fitted exponent (slope on log-log axes).
    pub exponent: f64,
    /// Root-mean-square residual of log y.
    pub residual: f64,
    /// Number of points used.
    pub n_points: usize,
}

/// Fits `y = c * x^exponent` by least squares on (ln x, ln y).
///
/// All `x` and `y` must be strictly positive; returns `None` for fewer than
/// two usable points or a degenerate abscissa.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Option<PowerFit> {
    assert_eq!(xs.len(), ys.len(), "fit_power_law: length mismatch");
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean_x = CompensatedSum::sum_iter(pts.iter().map(|p| p.0)) / nf;
    let mean_y = CompensatedSum::sum_iter(pts.iter().map(|p| p.1)) / nf;
    let sxx = CompensatedSum::sum_iter(pts.iter().map(|p| (p.0 - mean_x).powi(2)));
    if sxx == 0.0 {
        return None;
    }
    let sxy = CompensatedSum::sum_iter(pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)));
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res = CompensatedSum::sum_iter(
        pts.iter()
            .map(|p| (p.1 - (intercept + slope * p.0)).powi(2)),
    );
    Some(PowerFit {
        c: intercept.exp(),
        exponent: slope,
        residual: (ss_res / nf).sqrt(),
        n_points: n,
    })
}

/// Formats a float with 17 significant digits, enough to round-trip any f64.
/// Used for every float written to JSON or CSV reports.
pub fn format_f64(x: f64) -> String {
    if x == 0.0 {
        // Avoid "-0" noise in reports.
        return "0e0".to_string();
    }
    format!("{:.16e}", x)
}
