//! Free lattice theory on `Z⁴` and finite tori: Fourier multiplier, Green
//! function, bubble diagram, free pressure and free specific heat.
//!
//! Two evaluation routes are provided and cross-checked: the midpoint
//! momentum sum on `M⁻¹Z⁴ ∩ T⁴` (which is simultaneously the exact
//! finite-volume object) and the heat representation
//! `(-Δ+m²)⁻¹ = ∫ e^{-t m²} e^{tΔ} dt`, which stays accurate for masses
//! the momentum grid cannot resolve.

use crate::heat::{self, integrate_log, phi4d};
use crate::{Error, Result};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

/// Point of the momentum torus `T⁴ = [0,1)⁴`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Momentum(pub [f64; 4]);

impl Momentum {
    pub fn new(k: [f64; 4]) -> Result<Self> {
        for (i, &ki) in k.iter().enumerate() {
            if !(0.0..1.0).contains(&ki) || !ki.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "k",
                    reason: format!("coordinate {i} = {ki} outside [0,1)"),
                });
            }
        }
        Ok(Momentum(k))
    }
}

/// Fourier multiplier of `-Δ` on `Z⁴`: `λ(k) = 4 Σ_j sin²(π k_j)`.
pub fn multiplier(k: Momentum) -> f64 {
    k.0.iter()
        .map(|&kj| {
            let s = (std::f64::consts::PI * kj).sin();
            4.0 * s * s
        })
        .sum()
}

/// Real-valued function on a finite 4-torus `(Z/MZ)⁴`, stored densely.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelGrid {
    pub side: usize,
    pub values: Vec<f64>,
    pub m2: f64,
    pub scale: Option<usize>,
}

impl KernelGrid {
    pub fn zeros(side: usize, m2: f64) -> Self {
        KernelGrid {
            side,
            values: vec![0.0; side * side * side * side],
            m2,
            scale: None,
        }
    }

    #[inline]
    pub fn index(&self, x: [usize; 4]) -> usize {
        let m = self.side;
        ((x[0] % m * m + x[1] % m) * m + x[2] % m) * m + x[3] % m
    }

    #[inline]
    pub fn get(&self, x: [i64; 4]) -> f64 {
        let m = self.side as i64;
        let idx = [
            x[0].rem_euclid(m) as usize,
            x[1].rem_euclid(m) as usize,
            x[2].rem_euclid(m) as usize,
            x[3].rem_euclid(m) as usize,
        ];
        self.values[self.index(idx)]
    }

    #[inline]
    pub fn set(&mut self, x: [usize; 4], v: f64) {
        let i = self.index(x);
        self.values[i] = v;
    }

    /// Minimum-image representative of a coordinate, in `(-M/2, M/2]`.
    #[inline]
    pub fn min_image(&self, xi: usize) -> i64 {
        let m = self.side as i64;
        let x = xi as i64 % m;
        if 2 * x > m {
            x - m
        } else {
            x
        }
    }

    /// Sum of all values, `= ĝ(0)`.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Discrete Laplacian of the grid (periodic).
    pub fn laplacian(&self) -> KernelGrid {
        let mut out = KernelGrid::zeros(self.side, self.m2);
        let m = self.side;
        for x0 in 0..m {
            for x1 in 0..m {
                for x2 in 0..m {
                    for x3 in 0..m {
                        let x = [x0 as i64, x1 as i64, x2 as i64, x3 as i64];
                        let mut acc = -8.0 * self.get(x);
                        for a in 0..4 {
                            let mut xp = x;
                            xp[a] += 1;
                            let mut xm = x;
                            xm[a] -= 1;
                            acc += self.get(xp) + self.get(xm);
                        }
                        out.set([x0, x1, x2, x3], acc);
                    }
                }
            }
        }
        out
    }

    /// Smallest radius `r` such that less than `threshold` of the total
    /// absolute mass sits at `|x|_∞ > r` (minimum image).
    pub fn effective_range(&self, threshold: f64) -> usize {
        let total: f64 = self.values.iter().map(|v| v.abs()).sum();
        let half = self.side / 2;
        let mut shell = vec![0.0; half + 1];
        let m = self.side;
        for x0 in 0..m {
            for x1 in 0..m {
                for x2 in 0..m {
                    for x3 in 0..m {
                        let r = [x0, x1, x2, x3]
                            .iter()
                            .map(|&xi| self.min_image(xi).unsigned_abs() as usize)
                            .max()
                            .unwrap();
                        shell[r] += self.values[self.index([x0, x1, x2, x3])].abs();
                    }
                }
            }
        }
        let mut outside = 0.0;
        for r in (0..=half).rev() {
            if outside + shell[r] >= threshold * total {
                return r;
            }
            outside += shell[r];
        }
        0
    }
}

/// `(λ₁+λ₂, weight)` pairs enumerating two momentum axes of the `M`-grid,
/// folded by the reflection `i -> M-i`.
fn two_axis_values(m: usize) -> Vec<(f64, f64)> {
    let mut one: Vec<(f64, f64)> = Vec::new();
    for i in 0..=m / 2 {
        let s = (std::f64::consts::PI * i as f64 / m as f64).sin();
        let w = if i == 0 || 2 * i == m { 1.0 } else { 2.0 };
        one.push((4.0 * s * s, w));
    }
    let mut two = Vec::with_capacity(one.len() * (one.len() + 1) / 2);
    for (a, &(va, wa)) in one.iter().enumerate() {
        for &(vb, wb) in one.iter().skip(a) {
            let w = if va == vb { wa * wb } else { 2.0 * wa * wb };
            two.push((va + vb, w));
        }
    }
    two
}

/// Exact midpoint sum `M⁻⁴ Σ_k f(λ(k))` over the momentum grid, folded to
/// `O(M²)` terms.
pub fn multiplier_sum<F: Fn(f64) -> f64>(m: usize, f: F) -> f64 {
    let two = two_axis_values(m);
    let mut acc = 0.0;
    for (a, &(va, wa)) in two.iter().enumerate() {
        acc += wa * wa * f(va + va);
        for &(vb, wb) in two.iter().skip(a + 1) {
            acc += 2.0 * wa * wb * f(va + vb);
        }
    }
    acc / (m as f64).powi(4)
}

/// Riemann-sum lattice Green function
/// `C(x) = M⁻⁴ Σ_k e^{2πik·x}/(λ(k)+m²)`.
///
/// This is simultaneously the exact Green function of the side-`M` torus.
pub fn green_function(m2: f64, x: [i64; 4], resolution: usize) -> Result<f64> {
    if m2 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "m2",
            reason: format!("finite-resolution Green function needs m² > 0, got {m2}"),
        });
    }
    if resolution < 8 || resolution % 2 != 0 {
        return Err(Error::InsufficientResolution(format!(
            "resolution must be even and at least 8, got {resolution}"
        )));
    }
    let m = resolution;
    let lam: Vec<f64> = (0..m)
        .map(|i| {
            let s = (std::f64::consts::PI * i as f64 / m as f64).sin();
            4.0 * s * s
        })
        .collect();
    // reflection symmetry per axis turns the phase into a cosine product
    let cos_tab: Vec<Vec<f64>> = (0..4)
        .map(|a| {
            (0..m)
                .map(|i| (2.0 * std::f64::consts::PI * i as f64 * x[a] as f64 / m as f64).cos())
                .collect()
        })
        .collect();
    let mut acc = 0.0;
    for i0 in 0..m {
        let l0 = lam[i0];
        let c0 = cos_tab[0][i0];
        for i1 in 0..m {
            let l1 = l0 + lam[i1];
            let c1 = c0 * cos_tab[1][i1];
            for i2 in 0..m {
                let l2 = l1 + lam[i2];
                let c2 = c1 * cos_tab[2][i2];
                let mut row = 0.0;
                for i3 in 0..m {
                    row += cos_tab[3][i3] / (l2 + lam[i3] + m2);
                }
                acc += c2 * row;
            }
        }
    }
    Ok(acc / (m as f64).powi(4))
}

/// Infinite-volume Green function through the heat representation,
/// `C_{m²}(x) = ∫_0^∞ e^{-t m²} Π_a p_t(x_a) dt`; valid for all `m² >= 0`.
pub fn green_function_heat(m2: f64, x: [i64; 4]) -> Result<f64> {
    if m2 < 0.0 {
        return Err(Error::InvalidParameter {
            name: "m2",
            reason: "mass squared must be nonnegative".into(),
        });
    }
    let f = |t: f64| {
        if t == 0.0 {
            return if x == [0, 0, 0, 0] { 1.0 } else { 0.0 };
        }
        let mut p = (-t * m2).exp();
        for &xa in &x {
            p *= heat::scaled_bessel_i(xa.unsigned_abs() as u32, 2.0 * t);
        }
        p
    };
    if m2 > 0.0 {
        let t_hi = (80.0 / m2).max(1e4);
        Ok(integrate_log(&f, 0.0, t_hi, 1e-12))
    } else {
        // m² = 0: algebraic tail ∫ (4πt)^{-2}(1 + 1/(4t)) dt past the cap
        let t_switch = 4.0e6;
        let c = 1.0 / (16.0 * std::f64::consts::PI * std::f64::consts::PI);
        let tail = c * (1.0 / t_switch + 1.0 / (8.0 * t_switch * t_switch));
        Ok(integrate_log(&f, 0.0, t_switch, 1e-12) + tail)
    }
}

/// Bubble diagram by midpoint quadrature, with an `M` vs `M/2` self-check.
/// Reports insufficient resolution instead of returning a silently wrong
/// value when the mass is too small for the grid.
pub fn bubble(m2: f64, resolution: usize) -> Result<f64> {
    if m2 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "m2",
            reason: "bubble quadrature needs m² > 0".into(),
        });
    }
    if resolution < 16 || resolution % 2 != 0 {
        return Err(Error::InsufficientResolution(
            "bubble needs an even resolution of at least 16".into(),
        ));
    }
    let f = |l: f64| 1.0 / ((l + m2) * (l + m2));
    let coarse = multiplier_sum(resolution / 2, f);
    let fine = multiplier_sum(resolution, f);
    if (fine - coarse).abs() > 0.05 * fine.abs() {
        return Err(Error::InsufficientResolution(format!(
            "bubble at m² = {m2:e}: M = {resolution} and M/2 disagree by {:.2e} relative; \
             increase the resolution or use the heat-representation route",
            (fine - coarse).abs() / fine.abs()
        )));
    }
    Ok(fine)
}

/// Bubble diagram through the heat representation,
/// `B = ∫_0^∞ t e^{-t m²} Φ(t) dt`; accurate for every `m² > 0`.
pub fn bubble_heat(m2: f64) -> Result<f64> {
    if m2 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "m2",
            reason: "the bubble diverges at m² = 0".into(),
        });
    }
    let cap = (80.0 / m2).max(1e4);
    Ok(integrate_log(
        &|t: f64| t * (-t * m2).exp() * phi4d(t),
        0.0,
        cap,
        1e-12,
    ))
}

/// Finite-volume free pressure: the exact eigenvalue sum
/// `p_N(0,m²) = -n |T_N⁴|⁻¹ Σ_k log(λ(k)+m²)` over `T⁴ ∩ L^{-N}Z⁴`.
pub fn free_pressure_finite(n: u32, m2: f64, big_n: usize, l: u32) -> Result<f64> {
    if m2 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "m2",
            reason: "the finite-volume Gaussian is degenerate at m² = 0".into(),
        });
    }
    let m = (l as usize).pow(big_n as u32);
    if m > 4096 {
        return Err(Error::InsufficientResolution(format!(
            "torus side L^N = {m} too large for the exact eigenvalue sum"
        )));
    }
    Ok(-(n as f64) * multiplier_sum(m.max(2), |lam| (lam + m2).ln()))
}

/// Infinite-volume free pressure `p(0,m²) = -n ∫ log(λ(k)+m²) dk`,
/// through `log a = ∫ (e^{-t} - e^{-a t})/t dt`; defined for all `m² >= 0`.
pub fn free_pressure(n: u32, m2: f64) -> Result<f64> {
    if m2 < 0.0 {
        return Err(Error::InvalidParameter {
            name: "m2",
            reason: "mass squared must be nonnegative".into(),
        });
    }
    let f = |t: f64| ((-t).exp() - (-t * m2).exp() * phi4d(t)) / t;
    // the numerator vanishes linearly at t = 0 with slope m² + 7
    let eps = 1e-7;
    let head = (m2 + 7.0) * eps;
    let cap = if m2 > 0.0 { (80.0 / m2).max(1e4) } else { 4.0e6 };
    let mut v = head + integrate_log(&f, eps, cap, 1e-12);
    if m2 == 0.0 {
        // tail of -Φ(t)/t ≈ -(4πt)^{-2}/t beyond the cap
        let c = 1.0 / (16.0 * std::f64::consts::PI * std::f64::consts::PI);
        v -= c / (2.0 * cap * cap);
    }
    Ok(-(n as f64) * v)
}

/// Exact second ν-difference of the free pressure on the momentum grid,
/// `[p(m²+h) - 2p(m²) + p(m²-h)]/h²`, evaluated per mode through `log1p`
/// so that no cancellation occurs.  Converges to `n·B_{m²}` as `h -> 0`.
pub fn free_specific_heat_difference(n: u32, m2: f64, h: f64, resolution: usize) -> f64 {
    -(n as f64)
        * multiplier_sum(resolution, |l| {
            let s = l + m2;
            // log(s+h) + log(s-h) - 2 log s = log(1 - h²/s²)
            (-(h * h) / (s * s)).ln_1p() / (h * h)
        })
}

/// Constants of the free theory entering the main asymptotic statements.
#[derive(Debug, Clone, Serialize)]
pub struct FreeTheoryConstants {
    pub n: u32,
    /// `B_{m²}` at the requested mass (heat-representation value).
    pub bubble: f64,
    /// `C_{m²}(0)`.
    pub green_origin: f64,
    /// `(-Δ_{Z⁴})⁻¹_{0,0}`.
    pub delta_inv_origin: f64,
    /// `a = (n+2)(-Δ)⁻¹_{0,0}`.
    pub a: f64,
    /// `b = (n+8)/(16π²)`.
    pub b: f64,
    /// `γ = (n+2)/(n+8)` as an exact fraction.
    pub gamma_num: u32,
    pub gamma_den: u32,
}

impl FreeTheoryConstants {
    pub fn compute(n: u32, m2: f64) -> Result<Self> {
        let delta_inv_origin = green_function_heat(0.0, [0, 0, 0, 0])?;
        Ok(FreeTheoryConstants {
            n,
            bubble: bubble_heat(m2)?,
            green_origin: green_function_heat(m2, [0, 0, 0, 0])?,
            delta_inv_origin,
            a: (n as f64 + 2.0) * delta_inv_origin,
            b: (n as f64 + 8.0) / (16.0 * std::f64::consts::PI * std::f64::consts::PI),
            gamma_num: n + 2,
            gamma_den: n + 8,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma_num as f64 / self.gamma_den as f64
    }
}

/// Dense torus Green grid via a separable inverse transform of the symbol.
pub fn green_grid(m2: f64, side: usize) -> Result<KernelGrid> {
    if m2 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "m2",
            reason: "dense Green grids need m² > 0".into(),
        });
    }
    if side < 4 || side > 32 {
        return Err(Error::InsufficientResolution(
            "dense Green grids are limited to sides 4..=32; use green_function pointwise".into(),
        ));
    }
    let m = side;
    let lam: Vec<f64> = (0..m)
        .map(|i| {
            let s = (std::f64::consts::PI * i as f64 / m as f64).sin();
            4.0 * s * s
        })
        .collect();
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(m * m * m * m);
    for i0 in 0..m {
        for i1 in 0..m {
            for i2 in 0..m {
                for i3 in 0..m {
                    let l = lam[i0] + lam[i1] + lam[i2] + lam[i3];
                    buf.push(Complex::new(1.0 / (l + m2), 0.0));
                }
            }
        }
    }
    fft_4d_inverse(&mut buf, m);
    let mut grid = KernelGrid::zeros(m, m2);
    for (i, c) in buf.iter().enumerate() {
        grid.values[i] = c.re / (m as f64).powi(4);
    }
    Ok(grid)
}

/// In-place inverse DFT along each of the four axes.
fn fft_4d_inverse(buf: &mut [Complex<f64>], m: usize) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(m);
    let strides = [m * m * m, m * m, m, 1];
    let mut line = vec![Complex::new(0.0, 0.0); m];
    for axis in 0..4 {
        let stride = strides[axis];
        // iterate over all lines along `axis`
        let outer = m * m * m;
        for o in 0..outer {
            // decompose o into the three non-axis coordinates
            let mut rem = o;
            let mut coords = [0usize; 4];
            for a in 0..4 {
                if a == axis {
                    continue;
                }
                coords[a] = rem % m;
                rem /= m;
            }
            let base: usize = (0..4)
                .filter(|&a| a != axis)
                .map(|a| coords[a] * strides[a])
                .sum();
            for i in 0..m {
                line[i] = buf[base + i * stride];
            }
            fft.process(&mut line);
            for i in 0..m {
                buf[base + i * stride] = line[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplier_trivial_values() {
        let z = Momentum::new([0.0; 4]).unwrap();
        assert_eq!(multiplier(z), 0.0);
        let top = Momentum::new([0.5; 4]).unwrap();
        assert!((multiplier(top) - 16.0).abs() < 1e-14);
        let quarter = Momentum::new([0.25, 0.0, 0.0, 0.0]).unwrap();
        assert!((multiplier(quarter) - 2.0).abs() < 1e-14);
        let a = Momentum::new([0.1, 0.2, 0.3, 0.4]).unwrap();
        let b = Momentum::new([0.4, 0.3, 0.2, 0.1]).unwrap();
        assert!((multiplier(a) - multiplier(b)).abs() < 1e-15);
        assert!(Momentum::new([1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn multiplier_sum_counts_modes() {
        for &m in &[8usize, 10, 16] {
            let total = multiplier_sum(m, |_| 1.0) * (m as f64).powi(4);
            assert!((total - (m as f64).powi(4)).abs() < 1e-6);
        }
    }

    #[test]
    fn green_zero_mode_identity() {
        // Σ_x C(x) = 1/m² exactly on the sampling torus
        let m2 = 0.37;
        let side = 8;
        let mut sum = 0.0;
        for x0 in 0..side {
            for x1 in 0..side {
                for x2 in 0..side {
                    for x3 in 0..side {
                        sum += green_function(m2, [x0, x1, x2, x3], side as usize).unwrap();
                    }
                }
            }
        }
        assert!(
            (sum - 1.0 / m2).abs() < 1e-10 / m2,
            "zero mode sum {sum} vs {}",
            1.0 / m2
        );
    }

    #[test]
    fn green_reflection_and_permutation_symmetry() {
        let m2 = 0.8;
        for &(x, y) in &[
            ([1i64, 2, 0, 3], [-1i64, 2, 0, 3]),
            ([1, 2, 0, 3], [3, 0, 2, 1]),
        ] {
            let a = green_function(m2, x, 12).unwrap();
            let b = green_function(m2, y, 12).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn green_two_routes_agree() {
        // torus value at M = 64 vs infinite volume: at m² = 1 the mass gap
        // makes the finite-volume correction negligible
        let dft = green_function(1.0, [0, 0, 0, 0], 64).unwrap();
        let heat = green_function_heat(1.0, [0, 0, 0, 0]).unwrap();
        assert!((dft - heat).abs() < 1e-9, "dft {dft} heat {heat}");
        let dft = green_function(1.0, [2, 1, 0, 0], 64).unwrap();
        let heat = green_function_heat(1.0, [2, 1, 0, 0]).unwrap();
        assert!((dft - heat).abs() < 1e-9);
    }

    #[test]
    fn green_riemann_refinement_towards_exact_value() {
        let m2 = 1.0;
        let v16 = green_function(m2, [0, 0, 0, 0], 16).unwrap();
        let v32 = green_function(m2, [0, 0, 0, 0], 32).unwrap();
        let v64 = green_function(m2, [0, 0, 0, 0], 64).unwrap();
        let exact = green_function_heat(m2, [0, 0, 0, 0]).unwrap();
        assert!((v32 - exact).abs() < (v16 - exact).abs());
        assert!((v64 - exact).abs() < 1e-10);
    }

    #[test]
    fn green_heavy_mass_expansion() {
        // 1/(λ+m²) = m⁻²(1 - λ/m² + ...): C(0) ∈ [1/m² - 9/m⁴, 1/m²]
        let m2 = 1.0e6;
        let c = green_function(m2, [0, 0, 0, 0], 16).unwrap();
        assert!(c <= 1.0 / m2);
        assert!(c >= 1.0 / m2 - 9.0 / (m2 * m2));
    }

    #[test]
    fn bubble_parseval_identity() {
        // Σ_x C(x)² = M⁻⁴ Σ_k (λ+m²)⁻² on the sampling torus
        let m2 = 0.6;
        let side = 8usize;
        let g = green_grid(m2, side).unwrap();
        let sum: f64 = g.values.iter().map(|v| v * v).sum();
        let b = multiplier_sum(side, |l| 1.0 / ((l + m2) * (l + m2)));
        assert!((sum - b).abs() < 1e-8 * b, "parseval {sum} vs {b}");
    }

    #[test]
    fn bubble_monotone_and_consistent() {
        let b1 = bubble(1.0, 64).unwrap();
        let b2 = bubble(2.0, 64).unwrap();
        assert!(b1 > b2);
        let bh = bubble_heat(1.0).unwrap();
        assert!((b1 - bh).abs() < 1e-8 * bh, "dft {b1} heat {bh}");
        assert!(bubble(-1.0, 64).is_err());
        // unresolvable mass must be reported, not silently wrong
        assert!(matches!(
            bubble(1e-6, 64),
            Err(Error::InsufficientResolution(_))
        ));
    }

    #[test]
    fn bubble_decreases_on_grid() {
        let masses = [0.25, 0.5, 1.0, 2.0, 4.0];
        let vals: Vec<f64> = masses.iter().map(|&m2| bubble_heat(m2).unwrap()).collect();
        for w in vals.windows(2) {
            assert!(w[0] > w[1]);
        }
    }

    #[test]
    fn free_pressure_16_term_sum() {
        // n = 1, m² = 1, N = 1, L = 2: direct enumeration of the 2⁴ momenta
        let mut expect = 0.0;
        for i in 0..16u32 {
            let lam: f64 = (0..4)
                .map(|a| {
                    let bit = (i >> a) & 1;
                    let s = (std::f64::consts::PI * bit as f64 / 2.0).sin();
                    4.0 * s * s
                })
                .sum();
            expect += (lam + 1.0).ln();
        }
        expect *= -1.0 / 16.0;
        let got = free_pressure_finite(1, 1.0, 1, 2).unwrap();
        assert!((got - expect).abs() < 1e-13, "{got} vs {expect}");
        assert!(free_pressure_finite(1, 0.0, 1, 2).is_err());
    }

    #[test]
    fn free_pressure_converges_to_quadrature() {
        let m2 = 0.1;
        let p_inf = free_pressure(1, m2).unwrap();
        let p3 = free_pressure_finite(1, m2, 3, 2).unwrap();
        let p4 = free_pressure_finite(1, m2, 4, 2).unwrap();
        assert!((p4 - p_inf).abs() < (p3 - p_inf).abs());
        assert!((p4 - p_inf).abs() < 1e-4, "p4 {p4} vs p {p_inf}");
    }

    #[test]
    fn free_specific_heat_equals_bubble() {
        // second ν-difference of p(0,·) against n·B on the same grid
        let m2 = 0.01;
        let n = 2u32;
        let res = 64;
        let d2 = free_specific_heat_difference(n, m2, 1e-6, res);
        let b = multiplier_sum(res, |l| 1.0 / ((l + m2) * (l + m2)));
        assert!(
            (d2 - n as f64 * b).abs() < 1e-8 * (n as f64 * b),
            "difference {d2} vs nB {}",
            n as f64 * b
        );
    }

    #[test]
    fn free_constants_invariants() {
        let c = FreeTheoryConstants::compute(1, 0.5).unwrap();
        assert!(c.bubble > 0.0);
        assert!((c.a - 3.0 * c.delta_inv_origin).abs() < 1e-14);
        assert!((c.delta_inv_origin - 0.1549333902).abs() < 2e-8);
        assert_eq!((c.gamma_num, c.gamma_den), (3, 9));
        assert!((c.b - 9.0 / (16.0 * std::f64::consts::PI.powi(2))).abs() < 1e-15);
    }

    #[test]
    fn kernel_grid_symmetry_from_isotropic_multiplier() {
        let g = green_grid(0.9, 8).unwrap();
        assert!((g.get([1, 2, 3, 0]) - g.get([3, 2, 1, 0])).abs() < 1e-15);
        assert!((g.get([1, 2, 3, 0]) - g.get([-1, 2, 3, 0])).abs() < 1e-15);
        // effective range of a massive kernel on a small torus is small
        assert!(g.effective_range(1e-6) <= 4);
        // grid values agree with the pointwise route
        let direct = green_function(0.9, [1, 2, 3, 0], 8).unwrap();
        assert!((g.get([1, 2, 3, 0]) - direct).abs() < 1e-12);
    }
}
