//! Small fitting utilities for the asymptotic analyses: weighted linear
//! least squares with jackknife error bars, a three-parameter power-law
//! fit, plateau drift, and Richardson extrapolation.

use serde::Serialize;

/// Weighted least-squares line `y = a + b x`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// jackknife standard error of the slope
    pub slope_err: f64,
    pub residual_rms: f64,
}

pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> LineFit {
    assert!(x.len() == y.len() && y.len() == w.len() && x.len() >= 3);
    let solve = |skip: Option<usize>| -> (f64, f64) {
        let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..x.len() {
            if Some(i) == skip {
                continue;
            }
            sw += w[i];
            sx += w[i] * x[i];
            sy += w[i] * y[i];
            sxx += w[i] * x[i] * x[i];
            sxy += w[i] * x[i] * y[i];
        }
        let det = sw * sxx - sx * sx;
        let slope = (sw * sxy - sx * sy) / det;
        let intercept = (sy - slope * sx) / sw;
        (intercept, slope)
    };
    let (intercept, slope) = solve(None);
    // jackknife over left-out points
    let n = x.len() as f64;
    let mut acc = 0.0;
    for i in 0..x.len() {
        let (_, s) = solve(Some(i));
        acc += (s - slope) * (s - slope);
    }
    let slope_err = ((n - 1.0) / n * acc).sqrt();
    let mut res = 0.0;
    for i in 0..x.len() {
        let d = y[i] - intercept - slope * x[i];
        res += d * d;
    }
    LineFit {
        intercept,
        slope,
        slope_err,
        residual_rms: (res / n).sqrt(),
    }
}

/// Three-parameter fit `y = c0 + d x^p` by scanning `p` and solving the
/// linear subproblem; robust against an additive offset contaminating a
/// pure power law.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PowerFit {
    pub offset: f64,
    pub amplitude: f64,
    pub exponent: f64,
    pub residual_rms: f64,
}

pub fn offset_power_fit(x: &[f64], y: &[f64], p_lo: f64, p_hi: f64) -> PowerFit {
    assert!(x.len() >= 4);
    let mut best = PowerFit {
        offset: 0.0,
        amplitude: 0.0,
        exponent: p_lo,
        residual_rms: f64::INFINITY,
    };
    let steps = 400;
    for i in 0..=steps {
        let p = p_lo + (p_hi - p_lo) * i as f64 / steps as f64;
        // linear LS in (c0, d) against basis {1, x^p}
        let (mut s1, mut sb, mut sbb, mut sy, mut sby) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..x.len() {
            let b = x[k].powf(p);
            s1 += 1.0;
            sb += b;
            sbb += b * b;
            sy += y[k];
            sby += b * y[k];
        }
        let det = s1 * sbb - sb * sb;
        if det.abs() < 1e-30 {
            continue;
        }
        let d = (s1 * sby - sb * sy) / det;
        let c0 = (sy - d * sb) / s1;
        let mut res = 0.0;
        for k in 0..x.len() {
            let e = y[k] - c0 - d * x[k].powf(p);
            res += e * e;
        }
        let rms = (res / x.len() as f64).sqrt();
        if rms < best.residual_rms {
            best = PowerFit {
                offset: c0,
                amplitude: d,
                exponent: p,
                residual_rms: rms,
            };
        }
    }
    best
}

/// Relative drift of a sequence supposed to plateau: `(max-min)/|mean|`
/// over the tail fraction of the data.
pub fn plateau_drift(values: &[f64], tail_fraction: f64) -> f64 {
    let start = ((values.len() as f64) * (1.0 - tail_fraction)) as usize;
    let tail = &values[start.min(values.len() - 1)..];
    let mean: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
    let max = tail.iter().cloned().fold(f64::MIN, f64::max);
    let min = tail.iter().cloned().fold(f64::MAX, f64::min);
    (max - min) / mean.abs().max(1e-300)
}

/// Polynomial extrapolation to `x = 0` through the last three points
/// (Richardson style); returns the value and the change from the two-point
/// extrapolation as an error estimate.
pub fn richardson_extrapolate(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert!(x.len() == y.len() && x.len() >= 3);
    let k = x.len();
    let (x0, x1, x2) = (x[k - 3], x[k - 2], x[k - 1]);
    let (y0, y1, y2) = (y[k - 3], y[k - 2], y[k - 1]);
    // Lagrange at 0
    let l0 = (0.0 - x1) * (0.0 - x2) / ((x0 - x1) * (x0 - x2));
    let l1 = (0.0 - x0) * (0.0 - x2) / ((x1 - x0) * (x1 - x2));
    let l2 = (0.0 - x0) * (0.0 - x1) / ((x2 - x0) * (x2 - x1));
    let quad = l0 * y0 + l1 * y1 + l2 * y2;
    let lin = y2 + (y1 - y2) * (0.0 - x2) / (x1 - x2);
    (quad, (quad - lin).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| 2.5 - 0.75 * v).collect();
        let w = vec![1.0; 10];
        let f = weighted_line_fit(&x, &y, &w);
        assert!((f.slope + 0.75).abs() < 1e-12);
        assert!((f.intercept - 2.5).abs() < 1e-12);
        assert!(f.slope_err < 1e-10);
    }

    #[test]
    fn offset_power_fit_recovers_parameters() {
        let x: Vec<f64> = (5..25).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| 1.3 + 0.4 * v.powf(1.0 / 3.0)).collect();
        let f = offset_power_fit(&x, &y, 0.1, 0.8);
        assert!((f.exponent - 1.0 / 3.0).abs() < 0.01, "exponent {}", f.exponent);
        assert!((f.offset - 1.3).abs() < 0.05);
        assert!((f.amplitude - 0.4).abs() < 0.02);
    }

    #[test]
    fn richardson_kills_linear_and_quadratic_terms() {
        let x = [0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|&v| 3.0 + 2.0 * v + 5.0 * v * v).collect();
        let (v, err) = richardson_extrapolate(&x, &y);
        assert!((v - 3.0).abs() < 1e-12);
        assert!(err < 0.3);
    }

    #[test]
    fn plateau_drift_detects_flatness() {
        let flat = vec![1.0, 1.01, 0.995, 1.002, 1.001, 0.999];
        assert!(plateau_drift(&flat, 0.5) < 0.02);
        let rising: Vec<f64> = (0..10).map(|i| 1.0 + 0.2 * i as f64).collect();
        assert!(plateau_drift(&rising, 0.5) > 0.3);
    }
}
