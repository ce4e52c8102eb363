//! Per-scale coefficients of the second-order coupling flow: kernel
//! moments, the δ-increment, the named coefficient set, its rescaled form,
//! and the quartic bound check.
//!
//! Moments come in two flavours.  Dense-grid moments (`moments`) operate on
//! an explicit `KernelGrid` and are used by the symbolic-oracle
//! comparisons.  The scale tables (`coefficient_table`) are assembled from
//! the per-axis heat-kernel factorisation: multiplier-class moments reduce
//! to one-dimensional time integrals and stay exact at every scale, kernel
//! powers contract through the pair/triple tables, and only the quartic
//! moment goes through an orbit-reduced box sum with a continuum radial
//! tail.

use crate::decomposition::{chi, MassScale};
use crate::heat::{
    integrate_log, phi4d, phi4d_prime, phi4d_second, t_scale, Engine,
};
use crate::lattice::KernelGrid;
use crate::{Error, Result};
use serde::Serialize;

/// Moments of a kernel on a torus, all sums taken with minimum-image
/// coordinates.
#[derive(Debug, Clone, Default, Serialize)]
pub struct KernelMoments {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    /// `Σ x₁² w`
    pub wss: f64,
    /// `Σ x₁² w²`
    pub w2ss: f64,
    /// `Σ x₁² w³`
    pub w3ss: f64,
    /// `Σ x₁² (∇w)²` with `(∇w)² = ½ Σ_e (∇^e w)²`
    pub grad2ss: f64,
    /// `Σ w Δw`
    pub wdw1: f64,
    /// `Σ x₁² (w Δw)`
    pub wdwss: f64,
    /// `Σ (Δw)²`
    pub dw2: f64,
    /// kernel value at the origin
    pub c00: f64,
    /// `Δ`-kernel value at the origin
    pub dc00: f64,
    /// max |Σ q x_i x_j| over i ≠ j, relative to `wss`
    pub isotropy_residual: f64,
}

/// Exact real-space sums of a dense kernel grid.
///
/// Fails when the kernel's effective range exceeds half the torus side,
/// which would make the x₁²-weighted sums ambiguous.
pub fn moments(kernel: &KernelGrid) -> Result<KernelMoments> {
    let range = kernel.effective_range(1e-6);
    if kernel.side <= 2 * range {
        return Err(Error::RangeViolation(format!(
            "kernel side {} does not exceed twice the effective range {}",
            kernel.side, range
        )));
    }
    let m = kernel.side;
    let lap = kernel.laplacian();
    let mut out = KernelMoments::default();
    let mut cross = [0.0f64; 6]; // x_i x_j sums, i < j
    let mut diag = [0.0f64; 4];
    for x0 in 0..m {
        for x1 in 0..m {
            for x2 in 0..m {
                for x3 in 0..m {
                    let idx = kernel.index([x0, x1, x2, x3]);
                    let v = kernel.values[idx];
                    let dv = lap.values[idx];
                    let mi = [
                        kernel.min_image(x0),
                        kernel.min_image(x1),
                        kernel.min_image(x2),
                        kernel.min_image(x3),
                    ];
                    let xx = (mi[0] * mi[0]) as f64;
                    out.w1 += v;
                    out.w2 += v * v;
                    out.w3 += v * v * v;
                    out.w4 += v * v * v * v;
                    out.wss += xx * v;
                    out.w2ss += xx * v * v;
                    out.w3ss += xx * v * v * v;
                    out.wdw1 += v * dv;
                    out.wdwss += xx * v * dv;
                    out.dw2 += dv * dv;
                    let mut c = 0;
                    for i in 0..4 {
                        diag[i] += ((mi[i] * mi[i]) as f64) * v;
                        for j in (i + 1)..4 {
                            cross[c] += ((mi[i] * mi[j]) as f64) * v;
                            c += 1;
                        }
                    }
                    // ½ Σ_e (∇^e w)²: forward differences over all 8 signed
                    // directions come in equal pairs
                    let mut g2 = 0.0;
                    for a in 0..4 {
                        let mut xp = [x0 as i64, x1 as i64, x2 as i64, x3 as i64];
                        xp[a] += 1;
                        let d = kernel.get(xp) - v;
                        g2 += d * d;
                    }
                    // x₁²-weighted: the backward difference along axis a
                    // located at x equals the forward one at x - e_a; handle
                    // the weight exactly by crediting both endpoints
                    // (done below through the min-image symmetry instead)
                    out.grad2ss += xx * g2;
                }
            }
        }
    }
    // (∇w)² = ½ Σ_{8 dirs}: forward differences cover 4 of the 8; by the
    // reflection symmetry of the torus sums the other 4 contribute the same
    // for every 0-weight sum, but for the x₁²-weighted sum the backward
    // direction along axis 1 shifts the weight; recompute it exactly.
    let mut grad2ss = 0.0;
    for x0 in 0..m {
        for x1 in 0..m {
            for x2 in 0..m {
                for x3 in 0..m {
                    let x = [x0 as i64, x1 as i64, x2 as i64, x3 as i64];
                    let xx = (kernel.min_image(x0) * kernel.min_image(x0)) as f64;
                    let v = kernel.get(x);
                    let mut acc = 0.0;
                    for a in 0..4 {
                        let mut xp = x;
                        xp[a] += 1;
                        let mut xm = x;
                        xm[a] -= 1;
                        let df = kernel.get(xp) - v;
                        let db = kernel.get(xm) - v;
                        acc += df * df + db * db;
                    }
                    grad2ss += 0.5 * xx * acc;
                }
            }
        }
    }
    out.grad2ss = grad2ss;
    out.c00 = kernel.get([0, 0, 0, 0]);
    out.dc00 = lap.get([0, 0, 0, 0]);
    let max_cross = cross.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let max_diag_dev = diag
        .iter()
        .fold(0.0f64, |a, &b| a.max((b - out.wss).abs()));
    out.isotropy_residual = (max_cross.max(max_diag_dev)) / out.wss.abs().max(1e-300);
    Ok(out)
}

/// `δ[f(ν,w)] = f(ν⁺, w₊) - f(ν, w)` with `ν⁺ = ν + η′g` and
/// `η′ = (n+2) C_{0,0}` taken from the increment kernel.
pub fn delta_increment<F: Fn(f64, &KernelMoments) -> f64>(
    f: F,
    nu: f64,
    g: f64,
    n: u32,
    w_at_j: &KernelMoments,
    w_at_j_plus: &KernelMoments,
    c_slice: &KernelMoments,
) -> f64 {
    let eta_p = (n as f64 + 2.0) * c_slice.c00;
    let nu_plus = nu + eta_p * g;
    f(nu_plus, w_at_j_plus) - f(nu, w_at_j)
}

/// The named per-scale coefficients of the explicit flow, together with
/// the kernel data needed by the ν-dependent increments of the map.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CoefficientSet {
    pub j: usize,
    pub n: u32,
    pub m2: f64,
    pub l: u32,
    pub beta: f64,
    pub theta: f64,
    pub xi_p: f64,
    pub pi_p: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub eta_p: f64,
    pub kappa_g: f64,
    pub kappa_nu_p: f64,
    pub kappa_z: f64,
    pub kappa_znu_p: f64,
    pub kappa_gg: f64,
    pub kappa_nunu_p: f64,
    pub kappa_zz: f64,
    /// `w_j⁽¹⁾` and `w_{j+1}⁽¹⁾`
    pub w1: f64,
    pub w1_plus: f64,
    /// `w_j⁽**⁾` and `w_{j+1}⁽**⁾`
    pub wss: f64,
    pub wss_plus: f64,
    /// `(w_j²)⁽**⁾` and `(w_{j+1}²)⁽**⁾`
    pub w2ss: f64,
    pub w2ss_plus: f64,
    /// `C_{j+1;0,0}` and `(ΔC_{j+1})_{0,0}`
    pub c00: f64,
    pub dc00: f64,
    pub chi: f64,
}

impl CoefficientSet {
    /// Assemble the coefficient formulas from the moments of `w_j`, the
    /// exact increment moments towards `w_{j+1}`, and the slice origin
    /// data of `C_{j+1}`.  Increments are passed directly so that deep
    /// scales (where they underflow the cumulative values) stay exact.
    pub fn from_cum_and_inc(
        j: usize,
        n: u32,
        m2: f64,
        l: u32,
        mw: &KernelMoments,
        d: &KernelMoments,
        mc: &KernelMoments,
        chi_j: f64,
    ) -> Self {
        let nf = n as f64;
        let gamma = (nf + 2.0) / (nf + 8.0);
        let c = mc.c00;
        let dc = mc.dc00;
        let eta_p = (nf + 2.0) * c;
        let beta = (8.0 + nf) * d.w2;
        let xi_p = 2.0 * (2.0 + nf) * (d.w3 - 3.0 * mw.w2 * c) + gamma * beta * eta_p;
        CoefficientSet {
            j,
            n,
            m2,
            l,
            beta,
            theta: (2.0 + nf) * d.w3ss,
            xi_p,
            pi_p: (2.0 + nf) * d.wdw1,
            sigma: 0.5 * (2.0 + nf) * d.wdwss,
            zeta: 0.5 * (2.0 + nf) * d.grad2ss,
            eta_p,
            kappa_g: 0.25 * nf * (nf + 2.0) * c * c,
            kappa_nu_p: 0.5 * nf * c,
            kappa_z: 0.5 * nf * dc,
            kappa_znu_p: 0.5 * nf * d.wdw1,
            kappa_gg: 0.25
                * nf
                * (nf + 2.0)
                * (d.w4 - 4.0 * c * mw.w3 + 2.0 * dc * mw.w3ss - 6.0 * c * c * mw.w2
                    + (nf + 2.0) * c * c * d.w2),
            kappa_nunu_p: 0.25 * nf * (d.w2 - 2.0 * c * mw.w1 + dc * mw.wss),
            kappa_zz: 0.25 * nf * d.dw2,
            w1: mw.w1,
            w1_plus: mw.w1 + d.w1,
            wss: mw.wss,
            wss_plus: mw.wss + d.wss,
            w2ss: mw.w2ss,
            w2ss_plus: mw.w2ss + d.w2ss,
            c00: c,
            dc00: dc,
            chi: chi_j,
        }
    }

    /// Dense-grid variant: assemble from moments of `w` and `w₊ = w + C`
    /// directly (values are O(1) there, so plain differences are fine).
    pub fn from_moments(
        j: usize,
        n: u32,
        m2: f64,
        l: u32,
        mw: &KernelMoments,
        mw_plus: &KernelMoments,
        mc: &KernelMoments,
        chi_j: f64,
    ) -> Self {
        let d = KernelMoments {
            w1: mw_plus.w1 - mw.w1,
            w2: mw_plus.w2 - mw.w2,
            w3: mw_plus.w3 - mw.w3,
            w4: mw_plus.w4 - mw.w4,
            wss: mw_plus.wss - mw.wss,
            w2ss: mw_plus.w2ss - mw.w2ss,
            w3ss: mw_plus.w3ss - mw.w3ss,
            grad2ss: mw_plus.grad2ss - mw.grad2ss,
            wdw1: mw_plus.wdw1 - mw.wdw1,
            wdwss: mw_plus.wdwss - mw.wdwss,
            dw2: mw_plus.dw2 - mw.dw2,
            c00: 0.0,
            dc00: 0.0,
            isotropy_residual: 0.0,
        };
        Self::from_cum_and_inc(j, n, m2, l, mw, &d, mc, chi_j)
    }

    pub fn gamma(&self) -> f64 {
        (self.n as f64 + 2.0) / (self.n as f64 + 8.0)
    }

    /// `δ[w⁽²⁾] = β/(8+n)`.
    pub fn delta_w2(&self) -> f64 {
        self.beta / (8.0 + self.n as f64)
    }
}

/// Rescaled coefficients entering the triangular bar flow at scale `j`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RescaledCoefficients {
    pub j: usize,
    /// `γ_j = L^{2(j+1)} γ'_j` for γ = η, ξ, π
    pub eta: f64,
    pub xi: f64,
    pub pi: f64,
    /// `w̄⁽¹⁾ = L^{-2j} w⁽¹⁾`, `w̄⁽**⁾ = L^{-4j} w⁽**⁾`
    pub wbar1: f64,
    pub wbarss: f64,
    /// `κ_{μμ} = ¼ n L^{-4j} δ[w⁽²⁾]`
    pub kappa_mumu: f64,
    /// `κ_{gμ} = n(n+2) w̄⁽¹⁾ C²`
    pub kappa_gmu: f64,
    /// `κ_{zμ} = L^{-2j} κ'_{zν} - n w̄⁽¹⁾ ΔC`
    pub kappa_zmu: f64,
}

/// Algebraic rescaling of a coefficient set.
pub fn rescaled(set: &CoefficientSet) -> RescaledCoefficients {
    let l2 = (set.l as f64).powi(2);
    let up = l2.powi(set.j as i32 + 1);
    let down2 = l2.powi(-(set.j as i32));
    let down4 = down2 * down2;
    let nf = set.n as f64;
    RescaledCoefficients {
        j: set.j,
        eta: up * set.eta_p,
        xi: up * set.xi_p,
        pi: up * set.pi_p,
        wbar1: down2 * set.w1,
        wbarss: down4 * set.wss,
        kappa_mumu: 0.25 * nf * down4 * set.delta_w2(),
        kappa_gmu: nf * (nf + 2.0) * (down2 * set.w1) * set.c00 * set.c00,
        kappa_zmu: down2 * set.kappa_znu_p - nf * (down2 * set.w1) * set.dc00,
    }
}

// ---------------------------------------------------------------------------
// exact multiplier-class integrals (valid at every scale)

fn clip_hi(m2: f64, hi: f64) -> f64 {
    if m2 > 0.0 {
        hi.min(750.0 / m2)
    } else {
        hi
    }
}

/// `∫ f(u) e^{-u m²} [ov_{j+1}(u) - ov_j(u)] du` where `ov_j` is the
/// self-convolution overlap of `[0, t_j]`; this is the exact increment of
/// `Σ_x w(x)-pair` moments between scales j and j+1.
fn overlap_diff_integral<F: Fn(f64) -> f64>(m2: f64, t_lo: f64, t_hi: f64, f: F) -> f64 {
    let g = |u: f64| f(u) * (-u * m2).exp();
    let mut acc = 0.0;
    // [t_lo, 2 t_lo]: 2(u - t_lo)
    let b = clip_hi(m2, 2.0 * t_lo);
    if b > t_lo {
        acc += integrate_log(&|u: f64| g(u) * 2.0 * (u - t_lo), t_lo, b, 1e-12);
    }
    // [2 t_lo, t_hi]: u
    let b = clip_hi(m2, t_hi);
    if b > 2.0 * t_lo {
        acc += integrate_log(&|u: f64| g(u) * u, 2.0 * t_lo, b, 1e-12);
    }
    // [t_hi, 2 t_hi]: 2 t_hi - u
    let b = clip_hi(m2, 2.0 * t_hi);
    if b > t_hi {
        acc += integrate_log(&|u: f64| g(u) * (2.0 * t_hi - u), t_hi, b, 1e-12);
    }
    acc
}

/// Exact `δ_j[w⁽²⁾] = w_{j+1}⁽²⁾ - w_j⁽²⁾` through the 1-d representation.
pub fn delta_w2_exact(m2: f64, l: u32, j: usize) -> f64 {
    overlap_diff_integral(m2, t_scale(l, j), t_scale(l, j + 1), phi4d)
}

/// Exact `δ_j[(wΔw)⁽¹⁾]`.
pub fn delta_wdw1_exact(m2: f64, l: u32, j: usize) -> f64 {
    overlap_diff_integral(m2, t_scale(l, j), t_scale(l, j + 1), phi4d_prime)
}

/// Exact `δ_j[(Δw)⁽²⁾]`.
pub fn delta_dw2_exact(m2: f64, l: u32, j: usize) -> f64 {
    overlap_diff_integral(m2, t_scale(l, j), t_scale(l, j + 1), phi4d_second)
}

/// Exact slice origin value `C_{j;0,0}`.
pub fn c00_exact(m2: f64, l: u32, j: usize) -> f64 {
    let (a, b) = (t_scale(l, j - 1), t_scale(l, j));
    let hi = clip_hi(m2, b);
    if hi <= a {
        return 0.0;
    }
    integrate_log(&|t: f64| phi4d(t) * (-t * m2).exp(), a, hi, 1e-12)
}

/// Exact `（ΔC_j)_{0,0}`.
pub fn dc00_exact(m2: f64, l: u32, j: usize) -> f64 {
    let (a, b) = (t_scale(l, j - 1), t_scale(l, j));
    let hi = clip_hi(m2, b);
    if hi <= a {
        return 0.0;
    }
    integrate_log(&|t: f64| phi4d_prime(t) * (-t * m2).exp(), a, hi, 1e-12)
}

/// Closed form `w_j⁽¹⁾ = ∫_0^{t_j} e^{-t m²} dt`.
pub fn w1_exact(m2: f64, l: u32, j: usize) -> f64 {
    let t = t_scale(l, j);
    if m2 == 0.0 {
        t
    } else {
        (1.0 - (-m2 * t).exp()) / m2
    }
}

/// Closed form `w_j⁽**⁾ = ∫_0^{t_j} 2 t e^{-t m²} dt`.
pub fn wss_exact(m2: f64, l: u32, j: usize) -> f64 {
    let t = t_scale(l, j);
    if m2 == 0.0 {
        t * t
    } else {
        let e = (-m2 * t).exp();
        2.0 * (1.0 - e * (1.0 + m2 * t)) / (m2 * m2)
    }
}

// ---------------------------------------------------------------------------
// scale-table assembly

/// Raw moment set per scale; `cum[j]` holds the moments of `w_j`.
#[derive(Debug, Clone, Default)]
pub struct WMoments {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub wss: f64,
    pub w2ss: f64,
    pub w3ss: f64,
    pub grad2ss: f64,
    pub wdw1: f64,
    pub wdwss: f64,
    pub dw2: f64,
}

impl WMoments {
    fn add(&mut self, o: &WMoments) {
        self.w1 += o.w1;
        self.w2 += o.w2;
        self.w3 += o.w3;
        self.w4 += o.w4;
        self.wss += o.wss;
        self.w2ss += o.w2ss;
        self.w3ss += o.w3ss;
        self.grad2ss += o.grad2ss;
        self.wdw1 += o.wdw1;
        self.wdwss += o.wdwss;
        self.dw2 += o.dw2;
    }

    fn to_kernel_moments(&self, c00: f64, dc00: f64) -> KernelMoments {
        KernelMoments {
            w1: self.w1,
            w2: self.w2,
            w3: self.w3,
            w4: self.w4,
            wss: self.wss,
            w2ss: self.w2ss,
            w3ss: self.w3ss,
            grad2ss: self.grad2ss,
            wdw1: self.wdw1,
            wdwss: self.wdwss,
            dw2: self.dw2,
            c00,
            dc00,
            isotropy_residual: 0.0,
        }
    }
}

/// Moments of every `w_j` for a given mass, from the engine tables.
pub struct MomentSeries {
    pub l: u32,
    pub m2: f64,
    /// cum[j] = moments of w_j, j = 0..=J_grid
    pub cum: Vec<WMoments>,
    /// inc[p] = exact increment contributed by panel p, p = 1..=J_grid
    pub inc: Vec<WMoments>,
    /// slice origin data, c00[j-1] = C_j(0), j = 1..=J_grid
    pub c00: Vec<f64>,
    pub dc00: Vec<f64>,
}

/// Assemble the moment series: pair and triple contractions of the node
/// tables plus (optionally) the quartic orbit-box pass.
pub fn moment_series(engine: &Engine, m2: f64, with_quartic: bool) -> MomentSeries {
    let grid = &engine.grid;
    let n_nodes = grid.nodes.len();
    let j_grid = grid.j_grid;
    let weights: Vec<f64> = grid
        .nodes
        .iter()
        .map(|n| n.weight * (-n.t * m2).exp())
        .collect();
    let mut inc = vec![WMoments::default(); j_grid + 1]; // index by panel
    // single-node sums
    for (q, node) in grid.nodes.iter().enumerate() {
        let b = &mut inc[node.panel];
        b.w1 += weights[q];
        b.wss += weights[q] * 2.0 * node.t;
    }
    // pair contractions
    for a in 0..n_nodes {
        if weights[a] == 0.0 {
            continue;
        }
        for b in a..n_nodes {
            let ww = weights[a] * weights[b];
            if ww == 0.0 {
                continue;
            }
            let mult = if a == b { 1.0 } else { 2.0 };
            let s = engine.pairs.get(a, b);
            let s2 = s.s * s.s;
            let s3 = s2 * s.s;
            let bucket = &mut inc[grid.nodes[b].panel];
            bucket.w2 += mult * ww * s2 * s2;
            bucket.w2ss += mult * ww * s.sxx * s3;
            bucket.wdw1 += mult * ww * 4.0 * s.sd * s3;
            // x₁²-weighted wΔw over both orientations
            let sym_xxd = if a == b {
                s.sxxd_ab
            } else {
                s.sxxd_ab + s.sxxd_ba
            };
            bucket.wdwss += ww
                * (if a == b { 1.0 } else { 1.0 }) // orientations handled via sym_xxd
                * (sym_xxd * s3 + mult * 3.0 * s.sxx * s.sd * s2);
            // ½ Σ_e x₁²(∇^e w)²: axis-1 pair + 3 transverse
            let g = -s.sd; // Σ ∇p ∇q = -Σ p Δq
            bucket.grad2ss += mult * ww * (s.gxx * s3 + 3.0 * g * s.sxx * s2);
            bucket.dw2 += mult * ww * (4.0 * s.sdd * s3 + 12.0 * s.sd * s.sd * s2);
        }
    }
    // triple contractions
    for a in 0..n_nodes {
        if weights[a] == 0.0 {
            continue;
        }
        for b in a..n_nodes {
            let wab = weights[a] * weights[b];
            if wab == 0.0 {
                continue;
            }
            for c in b..n_nodes {
                let www = wab * weights[c];
                if www == 0.0 {
                    continue;
                }
                let mult = if a == b && b == c {
                    1.0
                } else if a == b || b == c {
                    3.0
                } else {
                    6.0
                };
                let (t, txx) = engine.triples.get(a, b, c);
                let t3 = t * t * t;
                let bucket = &mut inc[grid.nodes[c].panel];
                bucket.w3 += mult * www * t3 * t;
                bucket.w3ss += mult * www * txx * t3;
            }
        }
    }
    if with_quartic {
        quartic_box_pass(engine, m2, &weights, &mut inc);
    }
    // prefix sums
    let mut cum = vec![WMoments::default()];
    for p in 1..=j_grid {
        let mut next = cum[p - 1].clone();
        next.add(&inc[p]);
        cum.push(next);
    }
    let c00 = (1..=j_grid).map(|j| c00_exact(m2, grid.l, j)).collect();
    let dc00 = (1..=j_grid).map(|j| dc00_exact(m2, grid.l, j)).collect();
    MomentSeries {
        l: grid.l,
        m2,
        cum,
        inc,
        c00,
        dc00,
    }
}

/// Quartic moment increments: orbit-box sums of `(w+C)⁴ - w⁴` plus the
/// continuum radial tail beyond the box.
fn quartic_box_pass(engine: &Engine, m2: f64, weights: &[f64], inc: &mut [WMoments]) {
    use rayon::prelude::*;
    let grid = &engine.grid;
    let j_grid = grid.j_grid;
    let box_r = engine.orbit.radius;
    // per-point per-panel slice values, then per-panel increments
    let partials: Vec<Vec<f64>> = engine
        .orbit
        .points
        .par_iter()
        .zip(engine.orbit.multiplicity.par_iter())
        .map(|(&p, &mult)| {
            let mut slice = vec![0.0; j_grid + 1];
            for (q, node) in grid.nodes.iter().enumerate() {
                if weights[q] == 0.0 {
                    continue;
                }
                let tab = &engine.kernels.values[q];
                let mut prod = weights[q];
                for &xa in &p {
                    prod *= if xa < tab.len() { tab[xa] } else { 0.0 };
                }
                slice[node.panel] += prod;
            }
            let mut w = 0.0;
            let mut out = vec![0.0; j_grid + 1];
            for p_idx in 1..=j_grid {
                let w_next = w + slice[p_idx];
                out[p_idx] = mult * (w_next.powi(4) - w.powi(4));
                w = w_next;
            }
            out
        })
        .collect();
    for p_idx in 1..=j_grid {
        let mut acc = 0.0;
        for row in &partials {
            acc += row[p_idx];
        }
        inc[p_idx].w4 = acc + quartic_tail_increment(m2, grid.l, p_idx, box_r as f64);
    }
}

/// Continuum radial tail `∫_{r0}^∞ 2π²r³ C̄(4w̄³+6w̄²C̄+4w̄C̄²+C̄³) dr` of the
/// quartic increment at panel `p` (`w̄` up to `t_{p-1}`, `C̄` the panel).
fn quartic_tail_increment(m2: f64, l: u32, p: usize, r0: f64) -> f64 {
    let t_lo = t_scale(l, p - 1);
    let t_hi = t_scale(l, p);
    let heat_int = |r: f64, a: f64, b: f64| -> f64 {
        // ∫_a^b e^{-t m²} (4πt)^{-2} e^{-r²/4t} dt
        if b <= a {
            return 0.0;
        }
        let f = |t: f64| {
            (-t * m2 - r * r / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t).powi(2)
        };
        let lo = a.max(r * r / 400.0); // integrand negligible below
        if lo >= b {
            return 0.0;
        }
        integrate_log(&f, lo, clip_hi(m2, b).max(lo), 1e-10)
    };
    let integrand = |r: f64| {
        let w = heat_int(r, 0.0, t_lo);
        let c = heat_int(r, t_lo, t_hi);
        2.0 * std::f64::consts::PI.powi(2)
            * r.powi(3)
            * c
            * (4.0 * w * w * w + 6.0 * w * w * c + 4.0 * w * c * c + c * c * c)
    };
    // kernels die by a few √t_hi
    let r_max = (8.0 * (2.0 * t_hi).sqrt()).max(2.0 * r0);
    if r_max <= r0 {
        return 0.0;
    }
    integrate_log(&integrand, r0, r_max, 1e-9)
}

/// Table of coefficient sets for scales `0..=j_upto` at fixed `(m², n)`.
///
/// Scales within the engine grid are exact; beyond it, multiplier-class
/// entries stay exact (1-d integrals) while kernel-power classes follow the
/// plateau damped by the exact per-scale `β` ratio.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    pub l: u32,
    pub n: u32,
    pub m2: f64,
    pub omega: f64,
    /// true when the quartic (κ_gg) moments were assembled
    pub with_quartic: bool,
    pub sets: Vec<CoefficientSet>,
    pub resc: Vec<RescaledCoefficients>,
}

pub fn coefficient_table(
    engine: &Engine,
    m2: f64,
    n: u32,
    j_upto: usize,
    with_quartic: bool,
) -> Result<CoefficientTable> {
    let l = engine.grid.l;
    let series = moment_series(engine, m2, with_quartic);
    let j_exact_max = engine.grid.j_grid - 1; // needs panels j and j+1
    let jm = MassScale::new(m2, l)?;
    let omega = 2.0;
    let mut sets = Vec::with_capacity(j_upto + 1);
    for j in 0..=j_exact_max.min(j_upto) {
        let mw = series.cum[j].to_kernel_moments(0.0, 0.0);
        let d = series.inc[j + 1].to_kernel_moments(0.0, 0.0);
        let mut mc = KernelMoments::default();
        mc.c00 = series.c00[j];
        mc.dc00 = series.dc00[j];
        sets.push(CoefficientSet::from_cum_and_inc(
            j,
            n,
            m2,
            l,
            &mw,
            &d,
            &mc,
            chi(j, jm, omega),
        ));
    }
    // extension beyond the grid
    if j_upto > j_exact_max {
        let base = sets[j_exact_max].clone();
        let base_dw2 = base.delta_w2();
        for j in (j_exact_max + 1)..=j_upto {
            let d_w2 = delta_w2_exact(m2, l, j);
            let ratio = if base_dw2.abs() > 1e-290 {
                d_w2 / base_dw2
            } else {
                0.0
            };
            let nf = n as f64;
            let gamma = (nf + 2.0) / (nf + 8.0);
            let c = c00_exact(m2, l, j + 1);
            let dc = dc00_exact(m2, l, j + 1);
            let eta_p = (nf + 2.0) * c;
            let l2 = (l as f64).powi(2);
            let down_step2 = l2.powi(-((j - j_exact_max) as i32));
            let down_step4 = down_step2 * down_step2;
            let beta = (8.0 + nf) * d_w2;
            // ξ′ splits into the multiplier-exact γβη′ part and the
            // plateau-damped kernel-power part
            let xi_w3_part_base = base.xi_p - base.gamma() * base.beta * base.eta_p;
            let xi_p = xi_w3_part_base * ratio * down_step2 + gamma * beta * eta_p;
            let w1 = w1_exact(m2, l, j);
            let w1_plus = w1_exact(m2, l, j + 1);
            let wss = wss_exact(m2, l, j);
            let wss_plus = wss_exact(m2, l, j + 1);
            let d_w2ss_damped = (base.w2ss_plus - base.w2ss) * ratio;
            let w2ss = base.w2ss_plus; // frozen cumulative + damped increments
            sets.push(CoefficientSet {
                j,
                n,
                m2,
                l,
                beta,
                theta: base.theta * ratio,
                xi_p,
                pi_p: (2.0 + nf) * delta_wdw1_exact(m2, l, j),
                sigma: base.sigma * ratio,
                zeta: base.zeta * ratio,
                eta_p,
                kappa_g: 0.25 * nf * (nf + 2.0) * c * c,
                kappa_nu_p: 0.5 * nf * c,
                kappa_z: 0.5 * nf * dc,
                kappa_znu_p: base.kappa_znu_p * ratio * down_step2,
                kappa_gg: base.kappa_gg * ratio * down_step4,
                kappa_nunu_p: 0.25 * nf * (d_w2 - 2.0 * c * w1 + dc * wss),
                kappa_zz: 0.25 * nf * delta_dw2_exact(m2, l, j),
                w1,
                w1_plus,
                wss,
                wss_plus,
                w2ss,
                w2ss_plus: w2ss + d_w2ss_damped,
                c00: c,
                dc00: dc,
                chi: chi(j, jm, omega),
            });
        }
    }
    let resc = sets.iter().map(rescaled).collect();
    Ok(CoefficientTable {
        l,
        n,
        m2,
        omega,
        with_quartic,
        sets,
        resc,
    })
}

/// Report of the quartic-combination bound of the `g²` coefficient of
/// `δu_pt`: evaluates `δ[w⁽⁴⁾] - 4C₀,₀w⁽³⁾ + 2ΔC₀,₀(w³)⁽**⁾ - 6C₀,₀²w⁽²⁾`
/// and its rescaled magnitude `|·| L^{4j}/χ_j`.
#[derive(Debug, Clone, Serialize)]
pub struct QuarticBoundReport {
    pub j: usize,
    pub combination: f64,
    pub rescaled_constant: f64,
}

pub fn kappa_gg_bound_check(engine: &Engine, m2: f64, j: usize) -> Result<QuarticBoundReport> {
    if j + 1 > engine.grid.j_grid {
        return Err(Error::InvalidParameter {
            name: "j",
            reason: format!("need panels up to {} in the grid", j + 1),
        });
    }
    let series = moment_series(engine, m2, true);
    let jm = MassScale::new(m2, engine.grid.l)?;
    let d_w4 = series.inc[j + 1].w4;
    let c = series.c00[j];
    let dc = series.dc00[j];
    let combination = d_w4 - 4.0 * c * series.cum[j].w3 + 2.0 * dc * series.cum[j].w3ss
        - 6.0 * c * c * series.cum[j].w2;
    let l4j = (engine.grid.l as f64).powi(4 * j as i32);
    Ok(QuarticBoundReport {
        j,
        combination,
        rescaled_constant: combination.abs() * l4j / chi(j, jm, 2.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::bubble_heat;

    fn engine() -> &'static Engine {
        Engine::shared(2, 10, 20).unwrap()
    }

    #[test]
    fn dense_moments_kronecker_delta() {
        let mut g = KernelGrid::zeros(7, 0.0);
        g.set([0, 0, 0, 0], 1.0);
        let m = moments(&g).unwrap();
        assert_eq!(m.w1, 1.0);
        assert_eq!(m.w2, 1.0);
        assert_eq!(m.w3, 1.0);
        assert_eq!(m.w4, 1.0);
        assert_eq!(m.wss, 0.0);
        assert_eq!(m.c00, 1.0);
        assert_eq!(m.dc00, -8.0);
    }

    #[test]
    fn dense_moments_nearest_neighbour_indicator() {
        let mut g = KernelGrid::zeros(7, 0.0);
        for a in 0..4 {
            let mut xp = [0i64; 4];
            xp[a] = 1;
            let mut xm = [0i64; 4];
            xm[a] = -1;
            for x in [xp, xm] {
                let idx = [
                    x[0].rem_euclid(7) as usize,
                    x[1].rem_euclid(7) as usize,
                    x[2].rem_euclid(7) as usize,
                    x[3].rem_euclid(7) as usize,
                ];
                g.set(idx, 1.0);
            }
        }
        let m = moments(&g).unwrap();
        assert_eq!(m.w1, 8.0);
        assert_eq!(m.wss, 2.0); // x₁² = 1 only on ±e₁
        assert!(m.isotropy_residual < 1e-12);
    }

    #[test]
    fn dense_moments_range_violation() {
        // a kernel spread over the whole torus cannot be summed with
        // unambiguous x₁² weights: on an even side the boundary image
        // sits exactly at side/2 and the condition side > 2·range fails
        let mut g = KernelGrid::zeros(4, 0.0);
        for v in g.values.iter_mut() {
            *v = 1.0;
        }
        assert!(matches!(moments(&g), Err(Error::RangeViolation(_))));
    }

    #[test]
    fn pair_moments_match_exact_integrals() {
        let e = engine();
        for &m2 in &[0.0, 0.03] {
            let s = moment_series(e, m2, false);
            for j in 0..=8usize {
                let d_w2 = s.inc[j + 1].w2;
                let exact = delta_w2_exact(m2, 2, j);
                assert!(
                    (d_w2 - exact).abs() < 1e-9 * exact.abs().max(1e-12),
                    "δw² at j={j}, m²={m2}: {d_w2} vs {exact}"
                );
                let d_wdw1 = s.inc[j + 1].wdw1;
                let exact = delta_wdw1_exact(m2, 2, j);
                assert!(
                    (d_wdw1 - exact).abs() < 5e-7 * exact.abs().max(1e-10),
                    "δ(wΔw) at j={j}: {d_wdw1} vs {exact}"
                );
                let d_dw2 = s.inc[j + 1].dw2;
                let exact = delta_dw2_exact(m2, 2, j);
                assert!(
                    (d_dw2 - exact).abs() < 5e-7 * exact.abs().max(1e-10),
                    "δ(Δw)² at j={j}: {d_dw2} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn closed_form_single_kernel_moments() {
        let e = engine();
        let m2 = 0.02;
        let s = moment_series(e, m2, false);
        for j in [2usize, 5, 9] {
            assert!((s.cum[j].w1 - w1_exact(m2, 2, j)).abs() < 1e-10 * s.cum[j].w1);
            assert!((s.cum[j].wss - wss_exact(m2, 2, j)).abs() < 1e-9 * s.cum[j].wss);
        }
    }

    #[test]
    fn triple_moments_match_box_sums() {
        // w⁽³⁾ and (w³)⁽**⁾ against a direct orbit-box sum at a scale small
        // enough for the box to hold everything
        let e = engine();
        let m2 = 0.0;
        let s = moment_series(e, m2, false);
        let j = 2usize;
        let weights: Vec<f64> = e.grid.nodes.iter().map(|n| n.weight).collect();
        let mut w3 = 0.0;
        let mut w3ss = 0.0;
        for (idx, &p) in e.orbit.points.iter().enumerate() {
            let mut w = 0.0;
            for q in e.grid.cumulative_range(j) {
                let tab = &e.kernels.values[q];
                let mut prod = weights[q];
                for &xa in &p {
                    prod *= if xa < tab.len() { tab[xa] } else { 0.0 };
                }
                w += prod;
            }
            let mult = e.orbit.multiplicity[idx];
            w3 += mult * w * w * w;
            // orbit sum of x₁² equals symmetric average (x₁²+x₂²+x₃²+x₄²)/4
            let r2 = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3]) as f64;
            w3ss += mult * (r2 / 4.0) * w * w * w;
        }
        assert!(
            (s.cum[j].w3 - w3).abs() < 1e-8 * w3.abs(),
            "w³: {} vs box {}",
            s.cum[j].w3,
            w3
        );
        assert!(
            (s.cum[j].w3ss - w3ss).abs() < 1e-6 * w3ss.abs(),
            "(w³)**: {} vs box {}",
            s.cum[j].w3ss,
            w3ss
        );
    }

    #[test]
    fn beta_telescopes_to_bubble() {
        // Σ_j δ_j[w⁽²⁾] = B_{m²}
        let m2 = 1e-2;
        let mut total = 0.0;
        for j in 0..40 {
            total += delta_w2_exact(m2, 2, j);
        }
        let b = bubble_heat(m2).unwrap();
        assert!(
            (total - b).abs() < 1e-9 * b,
            "Σ δw² = {total} vs B = {b}"
        );
    }

    #[test]
    fn beta_plateau_value() {
        // the plateau of δ_j[w⁽²⁾] is log(L²)/16π², as forced by the bubble
        // telescoping
        let expected = 4.0f64.ln() / (16.0 * std::f64::consts::PI.powi(2));
        for j in 9..=12 {
            let d = delta_w2_exact(0.0, 2, j);
            assert!(
                (d - expected).abs() < 2e-6 * expected,
                "plateau at j={j}: {d} vs {expected}"
            );
        }
    }

    #[test]
    fn coefficient_set_n_dependence() {
        let e = engine();
        let t1 = coefficient_table(e, 0.0, 1, 8, false).unwrap();
        let t2 = coefficient_table(e, 0.0, 2, 8, false).unwrap();
        let t0 = coefficient_table(e, 0.0, 0, 8, false).unwrap();
        for j in 0..=8 {
            let (a, b, z) = (&t1.sets[j], &t2.sets[j], &t0.sets[j]);
            // β is affine in n with slope δ[w⁽²⁾]
            let slope = b.beta - a.beta;
            assert!((slope - a.delta_w2()).abs() < 1e-12 * a.delta_w2().abs());
            // θ affine with slope δ[(w³)⁽**⁾]
            let slope_theta = b.theta - a.theta;
            assert!((slope_theta - a.theta / 3.0).abs() < 1e-12 * a.theta.abs().max(1e-300));
            // at n = 0 every κ vanishes exactly
            for v in [
                z.kappa_g,
                z.kappa_nu_p,
                z.kappa_z,
                z.kappa_znu_p,
                z.kappa_gg,
                z.kappa_nunu_p,
                z.kappa_zz,
            ] {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn coefficient_class_decay_with_mass() {
        // for m² > 0 and j > j_m each coefficient decays at least by Ω⁻¹
        // per scale
        let e = engine();
        let m2 = 2.0f64.powi(-8); // j_m = 4
        let t = coefficient_table(e, m2, 1, 9, false).unwrap();
        for j in 6..9 {
            let r = t.sets[j].beta.abs() / t.sets[j - 1].beta.abs();
            assert!(r < 0.5, "β must decay beyond the mass scale: ratio {r} at j={j}");
        }
    }

    #[test]
    fn extension_scales_continue_smoothly() {
        let e = engine();
        let t = coefficient_table(e, 0.0, 1, 14, false).unwrap();
        // grid ends at j = 9 here; extended β continues the plateau
        for j in 8..=13 {
            let r = t.sets[j + 1].beta / t.sets[j].beta.max(1e-300);
            assert!((r - 1.0).abs() < 1e-3, "β ratio at j={j}: {r}");
        }
        // rescaled η continues smoothly as well
        for j in 8..=12 {
            let r = t.resc[j + 1].eta / t.resc[j].eta;
            assert!((r - 1.0).abs() < 0.05, "η ratio at j={j}: {r}");
        }
        // w̄⁽¹⁾ bounded over scales (m² = 0: exactly 1 for j >= 1; w₀ = 0)
        assert_eq!(t.resc[0].wbar1, 0.0);
        for s in &t.resc[1..] {
            assert!(s.wbar1 <= 1.0 + 1e-9 && s.wbar1 > 0.9);
        }
    }

    #[test]
    fn kappa_mumu_beta_identity() {
        // κ_{μμ} = n β/(4(8+n)) L^{-4j} exactly
        let e = engine();
        let t = coefficient_table(e, 0.0, 3, 8, false).unwrap();
        for j in 0..=8 {
            let lhs = t.resc[j].kappa_mumu;
            let rhs = 3.0 * t.sets[j].beta / (4.0 * 11.0) * 4.0f64.powi(-2 * j as i32);
            assert!((lhs - rhs).abs() < 1e-15 + 1e-12 * rhs.abs());
        }
    }

    #[test]
    fn quartic_bound_check_is_uniform() {
        let e = engine();
        let mut consts = Vec::new();
        for j in 1..=6 {
            let r = kappa_gg_bound_check(e, 0.0, j).unwrap();
            consts.push(r.rescaled_constant);
        }
        let max = consts.iter().cloned().fold(0.0, f64::max);
        let min = consts.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max < 1.0, "quartic combination constants {consts:?}");
        assert!(min > 0.0);
        // settles towards a constant rather than growing
        assert!(consts[5] < 4.0 * consts[2], "{consts:?}");
    }

    #[test]
    fn delta_increment_examples() {
        let e = engine();
        let m2 = 0.01;
        let s = moment_series(e, m2, false);
        let j = 3usize;
        let mw = s.cum[j].to_kernel_moments(0.0, 0.0);
        let mw_plus = s.cum[j + 1].to_kernel_moments(0.0, 0.0);
        let mut mc = KernelMoments::default();
        mc.c00 = s.c00[j];
        // constant functional -> 0
        let d = delta_increment(|_, _| 1.0, 0.2, 0.1, 2, &mw, &mw_plus, &mc);
        assert_eq!(d, 0.0);
        // f = ν w⁽¹⁾ with g = 0: δ = ν (w₊⁽¹⁾ - w⁽¹⁾) = ν C⁽¹⁾
        let nu = 0.3;
        let d = delta_increment(|nu, m| nu * m.w1, nu, 0.0, 2, &mw, &mw_plus, &mc);
        assert!((d - nu * (mw_plus.w1 - mw.w1)).abs() < 1e-15);
    }
}
