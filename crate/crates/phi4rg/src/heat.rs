//! One-dimensional lattice heat-kernel engine.
//!
//! The whole multi-scale apparatus rests on the factorisation of the
//! 4-dimensional lattice heat semigroup into per-axis factors,
//! `e^{tΔ}(0,x) = Π_a p_t(x_a)` with `p_t(x) = e^{-2t} I_x(2t)`.
//! Covariance slices are time integrals of this kernel, so every lattice
//! sum the flow needs (kernel powers, x²-weighted moments, discrete
//! gradients and Laplacians) reduces to one-dimensional contractions over
//! quadrature nodes in `t`.  Mass enters only through the scalar weights
//! `e^{-t m²}`, which keeps all tables mass-independent.

use crate::{Error, Result};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// `e^{-z} [I_0(z), I_1(z), I_2(z)]` in one pass, for `z >= 0`.
///
/// Power series for small z, uniform asymptotic expansion for large z, and
/// a midpoint quadrature of the integral representation in between.  The
/// midpoint rule on a periodic analytic integrand converges geometrically,
/// so all three branches reach close to machine precision.
pub fn scaled_bessel_trio(z: f64) -> [f64; 3] {
    debug_assert!(z >= 0.0);
    if z == 0.0 {
        return [1.0, 0.0, 0.0];
    }
    if z <= 2.0 {
        let mut out = [0.0; 3];
        for (order, slot) in out.iter_mut().enumerate() {
            let mut term = 1.0;
            for k in 1..=order {
                term *= z / (2.0 * k as f64);
            }
            let mut sum = term;
            let mut k = 1.0;
            loop {
                term *= z * z / (4.0 * k * (k + order as f64));
                sum += term;
                if term < 1e-18 * sum {
                    break;
                }
                k += 1.0;
            }
            *slot = sum * (-z).exp();
        }
        return out;
    }
    if z >= 600.0 {
        // I_ν(z) e^{-z} ~ (2πz)^{-1/2} Σ_k (-1)^k Π_{i<=k}(μ-(2i-1)²)/(k!(8z)^k)
        let norm = 1.0 / (2.0 * std::f64::consts::PI * z).sqrt();
        let mut out = [0.0; 3];
        for (order, slot) in out.iter_mut().enumerate() {
            let mu = 4.0 * (order as f64) * (order as f64);
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..=12u32 {
                let odd = (2 * k - 1) as f64;
                term *= -(mu - odd * odd) / (k as f64 * 8.0 * z);
                sum += term;
                if term.abs() < 1e-17 {
                    break;
                }
            }
            *slot = sum * norm;
        }
        return out;
    }
    // I_ν(z) e^{-z} = ∫_0^1 e^{-2z sin²(πκ)} cos(2πνκ) dκ, all ν together
    let m = 48 + 10 * (z.sqrt().ceil() as usize);
    let mut acc = [0.0; 3];
    for i in 0..m {
        let kappa = (i as f64 + 0.5) / m as f64;
        let s = (std::f64::consts::PI * kappa).sin();
        let e = (-2.0 * z * s * s).exp();
        let c1 = (2.0 * std::f64::consts::PI * kappa).cos();
        let c2 = 2.0 * c1 * c1 - 1.0;
        acc[0] += e;
        acc[1] += e * c1;
        acc[2] += e * c2;
    }
    [acc[0] / m as f64, acc[1] / m as f64, acc[2] / m as f64]
}

/// `e^{-z} I_ν(z)` for a single order (arbitrary ν).
pub fn scaled_bessel_i(order: u32, z: f64) -> f64 {
    if order <= 2 {
        return scaled_bessel_trio(z)[order as usize];
    }
    if z == 0.0 {
        return 0.0;
    }
    if z >= 600.0 {
        let mu = 4.0 * (order as f64) * (order as f64);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=12u32 {
            let odd = (2 * k - 1) as f64;
            term *= -(mu - odd * odd) / (k as f64 * 8.0 * z);
            sum += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        return sum / (2.0 * std::f64::consts::PI * z).sqrt();
    }
    let m = 48 + 10 * (z.sqrt().ceil() as usize) + 4 * order as usize;
    let mut acc = 0.0;
    for i in 0..m {
        let kappa = (i as f64 + 0.5) / m as f64;
        let s = (std::f64::consts::PI * kappa).sin();
        acc += (-2.0 * z * s * s).exp()
            * (2.0 * std::f64::consts::PI * order as f64 * kappa).cos();
    }
    acc / m as f64
}

/// `(p_t(0), p_t'(0), p_t''(0))`: the origin value of the 1-d heat kernel
/// and its first two t-derivatives, `∫ (-λ₁)^s e^{-t λ₁(κ)} dκ`.
///
/// Small t uses the moment integrals of the symbol directly (no
/// finite-difference cancellation); large t differentiates the asymptotic
/// series of `e^{-2t} I_0(2t)` term by term.
pub fn p0_derivs(t: f64) -> (f64, f64, f64) {
    if t < 300.0 {
        let m = 48 + 10 * ((2.0 * t).sqrt().ceil() as usize);
        let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
        for i in 0..m {
            let kappa = (i as f64 + 0.5) / m as f64;
            let s = (std::f64::consts::PI * kappa).sin();
            let l1 = 4.0 * s * s;
            let e = (-t * l1).exp();
            a0 += e;
            a1 -= l1 * e;
            a2 += l1 * l1 * e;
        }
        let mf = m as f64;
        (a0 / mf, a1 / mf, a2 / mf)
    } else {
        // p = (4πt)^{-1/2} Σ_k a_k (2t)^{-k}, a_k = a_{k-1}(2k-1)²/(8k)
        let norm = 1.0 / (4.0 * std::f64::consts::PI * t).sqrt();
        let (mut p, mut dp, mut d2p) = (0.0, 0.0, 0.0);
        let mut a = 1.0;
        for k in 0..=16u32 {
            if k > 0 {
                let odd = (2 * k - 1) as f64;
                a *= odd * odd / (8.0 * k as f64);
            }
            let kf = k as f64;
            let term = a * (2.0 * t).powf(-kf);
            p += term;
            dp += term * (-(kf + 0.5) / t);
            d2p += term * (kf + 0.5) * (kf + 1.5) / (t * t);
            if term < 1e-18 * p {
                break;
            }
        }
        (norm * p, norm * dp, norm * d2p)
    }
}

/// Value at the origin of the 1-d heat kernel, `p_t(0) = e^{-2t} I_0(2t)`.
pub fn p0(t: f64) -> f64 {
    p0_derivs(t).0
}

/// Return probability of the 4-d continuous-time walk, `Φ(t) = p_t(0)⁴`.
pub fn phi4d(t: f64) -> f64 {
    let p = p0_derivs(t).0;
    p * p * p * p
}

/// First t-derivative of `Φ`; equals `∫ (-λ(k)) e^{-tλ(k)} dk`.
pub fn phi4d_prime(t: f64) -> f64 {
    let (p, dp, _) = p0_derivs(t);
    4.0 * p * p * p * dp
}

/// Second t-derivative of `Φ`; equals `∫ λ(k)² e^{-tλ(k)} dk`.
pub fn phi4d_second(t: f64) -> f64 {
    let (p, dp, d2p) = p0_derivs(t);
    12.0 * p * p * dp * dp + 4.0 * p * p * p * d2p
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Newton iteration from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Adaptive Gauss-Legendre integration of a smooth function on [a, b].
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn gl20<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
        static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
        let (x, w) = GL.get_or_init(|| gauss_legendre(20));
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut acc = 0.0;
        for i in 0..x.len() {
            acc += w[i] * f(c + h * x[i]);
        }
        acc * h
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        whole: f64,
        rel_tol: f64,
        scale: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = gl20(f, a, m);
        let right = gl20(f, m, b);
        let err = (left + right - whole).abs();
        if err <= rel_tol * scale.max((left + right).abs()) || err < 1e-308 || depth >= 24 {
            left + right
        } else {
            recurse(f, a, m, left, rel_tol, scale, depth + 1)
                + recurse(f, m, b, right, rel_tol, scale, depth + 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let whole = gl20(f, a, b);
    recurse(f, a, b, whole, rel_tol, whole.abs(), 0)
}

/// Integrate over [a, b] splitting geometrically so that long ranges in t
/// are resolved panel by panel.
pub fn integrate_log<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let lo = a.max(1e-12);
    let mut acc = if a < lo { integrate(f, a, lo, rel_tol) } else { 0.0 };
    let mut left = lo;
    while left < b {
        let right = (left * 4.0).min(b);
        acc += integrate(f, left, right, rel_tol);
        left = right;
    }
    acc
}

/// One quadrature node of the scale decomposition in time.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TNode {
    pub t: f64,
    /// Gauss-Legendre weight without the mass factor.
    pub weight: f64,
    /// 1-based scale index of the covariance slice this node belongs to.
    pub panel: usize,
}

/// Time grid of the decomposition: panel `j` covers `(t_{j-1}, t_j]` with
/// `t_j = L^{2j}` and `t_0 = 0`.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    pub l: u32,
    pub j_grid: usize,
    pub nodes_per_panel: usize,
    pub nodes: Vec<TNode>,
}

impl TimeGrid {
    pub fn new(l: u32, j_grid: usize, nodes_per_panel: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::InvalidParameter {
                name: "l",
                reason: format!("block ratio must be at least 2, got {l}"),
            });
        }
        if j_grid < 1 || nodes_per_panel < 4 {
            return Err(Error::InvalidParameter {
                name: "j_grid",
                reason: "need at least one panel and four nodes per panel".into(),
            });
        }
        let t_max = (l as f64).powi(2 * j_grid as i32);
        if t_max > 1.0e9 {
            return Err(Error::InsufficientResolution(format!(
                "time grid reaches t = {t_max:e}; per-axis kernel tables would not fit in memory"
            )));
        }
        let (x, w) = gauss_legendre(nodes_per_panel);
        let mut nodes = Vec::with_capacity(j_grid * nodes_per_panel);
        for j in 1..=j_grid {
            let lo = t_scale(l, j - 1);
            let hi = t_scale(l, j);
            let c = 0.5 * (lo + hi);
            let h = 0.5 * (hi - lo);
            for i in 0..nodes_per_panel {
                nodes.push(TNode {
                    t: c + h * x[i],
                    weight: h * w[i],
                    panel: j,
                });
            }
        }
        Ok(TimeGrid {
            l,
            j_grid,
            nodes_per_panel,
            nodes,
        })
    }

    /// Node index range of scale panel `j` (1-based).
    pub fn panel_range(&self, j: usize) -> std::ops::Range<usize> {
        (j - 1) * self.nodes_per_panel..j * self.nodes_per_panel
    }

    /// Nodes of all panels up to and including `j`, i.e. the kernel `w_j`.
    pub fn cumulative_range(&self, j: usize) -> std::ops::Range<usize> {
        0..j * self.nodes_per_panel
    }
}

/// `t_j = L^{2j}` with `t_0 = 0`.
pub fn t_scale(l: u32, j: usize) -> f64 {
    if j == 0 {
        0.0
    } else {
        (l as f64).powi(2 * j as i32)
    }
}

/// Half-line tables of the 1-d heat kernel at every quadrature node.
/// `values[q][x]` is `p_{t_q}(x)` for `0 <= x <= radius[q]`; the kernel is
/// even in `x`.
pub struct NodeKernels {
    pub radius: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

fn kernel_radius(t: f64) -> usize {
    (13.0 * t.sqrt()).ceil() as usize + 16
}

impl NodeKernels {
    pub fn build(grid: &TimeGrid) -> Self {
        let tables: Vec<(usize, Vec<f64>)> = grid
            .nodes
            .par_iter()
            .map(|node| {
                let r = kernel_radius(node.t);
                (r, heat_kernel_half(node.t, r))
            })
            .collect();
        NodeKernels {
            radius: tables.iter().map(|(r, _)| *r).collect(),
            values: tables.into_iter().map(|(_, v)| v).collect(),
        }
    }
}

/// `p_t(x)` for `x = 0..=radius`, computed with an FFT of the exact Fourier
/// symbol `e^{-4 t sin²(π κ)}`.  The transform size is chosen so that the
/// periodisation error sits far below machine precision.
pub fn heat_kernel_half(t: f64, radius: usize) -> Vec<f64> {
    let m = (2 * radius + 2).next_power_of_two().max(64);
    let mut buf: Vec<Complex<f64>> = (0..m)
        .map(|i| {
            let s = (std::f64::consts::PI * i as f64 / m as f64).sin();
            Complex::new((-4.0 * t * s * s).exp(), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut buf);
    (0..=radius).map(|x| buf[x].re / m as f64).collect()
}

/// The seven 1-d contraction scalars stored per ordered node pair
/// `(a <= b)`.  Writing `p = p_{t_a}`, `q = p_{t_b}`:
///
/// * `s`      = Σ_x p q
/// * `sxx`    = Σ_x x² p q
/// * `sd`     = Σ_x p Δq          (symmetric)
/// * `sxxd_ab`= Σ_x x² p Δq
/// * `sxxd_ba`= Σ_x x² q Δp
/// * `sdd`    = Σ_x Δp Δq
/// * `gxx`    = Σ_x x² (∇p)(∇q)   (forward differences)
#[derive(Debug, Clone, Copy, Default)]
pub struct PairScalars {
    pub s: f64,
    pub sxx: f64,
    pub sd: f64,
    pub sxxd_ab: f64,
    pub sxxd_ba: f64,
    pub sdd: f64,
    pub gxx: f64,
}

pub struct PairTables {
    n: usize,
    data: Vec<PairScalars>,
}

impl PairTables {
    pub fn build(kernels: &NodeKernels) -> Self {
        let n = kernels.values.len();
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n * (n + 1) / 2);
        for a in 0..n {
            for b in a..n {
                pairs.push((a, b));
            }
        }
        let data: Vec<PairScalars> = pairs
            .par_iter()
            .map(|&(a, b)| pair_scalars(&kernels.values[a], &kernels.values[b]))
            .collect();
        PairTables { n, data }
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> PairScalars {
        let (lo, hi, swapped) = if a <= b { (a, b, false) } else { (b, a, true) };
        let idx = lo * self.n - lo * (lo + 1) / 2 + hi;
        let mut s = self.data[idx];
        if swapped {
            std::mem::swap(&mut s.sxxd_ab, &mut s.sxxd_ba);
        }
        s
    }
}

fn value(p: &[f64], x: usize) -> f64 {
    if x < p.len() {
        p[x]
    } else {
        0.0
    }
}

/// Δp at site x for an even half-table.
fn lap(p: &[f64], x: usize) -> f64 {
    if x == 0 {
        2.0 * (value(p, 1) - value(p, 0))
    } else {
        value(p, x + 1) + value(p, x - 1) - 2.0 * value(p, x)
    }
}

fn pair_scalars(pa: &[f64], pb: &[f64]) -> PairScalars {
    let r = pa.len().min(pb.len());
    let mut out = PairScalars::default();
    // even-in-x sums; x = 0 plus twice the positive half
    out.s = pa[0] * pb[0];
    out.sd = pa[0] * lap(pb, 0);
    let mut sd_ba = pb[0] * lap(pa, 0);
    out.sdd = lap(pa, 0) * lap(pb, 0);
    for x in 1..r + 1 {
        let (va, vb) = (value(pa, x), value(pb, x));
        let (la, lb) = (lap(pa, x), lap(pb, x));
        let xx = (x * x) as f64;
        out.s += 2.0 * va * vb;
        out.sxx += 2.0 * xx * va * vb;
        out.sd += 2.0 * va * lb;
        sd_ba += 2.0 * vb * la;
        out.sxxd_ab += 2.0 * xx * va * lb;
        out.sxxd_ba += 2.0 * xx * vb * la;
        out.sdd += 2.0 * la * lb;
    }
    // Σ p Δq = Σ q Δp up to roundoff; keep the symmetrised value.
    out.sd = 0.5 * (out.sd + sd_ba);
    // forward-difference products are symmetric about x = -1/2:
    // Σ_x x² ∇p ∇q = Σ_{x>=0} (x² + (x+1)²) ∇p(x) ∇q(x)
    for x in 0..r + 1 {
        let da = value(pa, x + 1) - value(pa, x);
        let db = value(pb, x + 1) - value(pb, x);
        let w = (x * x + (x + 1) * (x + 1)) as f64;
        out.gxx += w * da * db;
    }
    out
}

/// Per-node-triple contraction scalars `Σ_x p q r` and `Σ_x x² p q r`,
/// stored for multisets `a <= b <= c`.
pub struct TripleTables {
    n: usize,
    /// prefix[a] = number of multisets whose smallest element is < a
    prefix: Vec<usize>,
    t: Vec<f64>,
    txx: Vec<f64>,
}

impl TripleTables {
    pub fn build(kernels: &NodeKernels) -> Self {
        let n = kernels.values.len();
        let mut prefix = vec![0usize; n + 1];
        for a in 0..n {
            let m = n - a;
            prefix[a + 1] = prefix[a] + m * (m + 1) / 2;
        }
        let total = prefix[n];
        let per_a: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|a| {
                let m = n - a;
                let mut t = vec![0.0; m * (m + 1) / 2];
                let mut txx = vec![0.0; m * (m + 1) / 2];
                let pa = &kernels.values[a];
                let mut idx = 0;
                for b in a..n {
                    let pb = &kernels.values[b];
                    for c in b..n {
                        let pc = &kernels.values[c];
                        let r = pa.len().min(pb.len()).min(pc.len());
                        let mut s = pa[0] * pb[0] * pc[0];
                        let mut sxx = 0.0;
                        for x in 1..r {
                            let v = pa[x] * pb[x] * pc[x];
                            s += 2.0 * v;
                            sxx += 2.0 * ((x * x) as f64) * v;
                        }
                        t[idx] = s;
                        txx[idx] = sxx;
                        idx += 1;
                    }
                }
                (t, txx)
            })
            .collect();
        let mut t = Vec::with_capacity(total);
        let mut txx = Vec::with_capacity(total);
        for (ta, xa) in per_a {
            t.extend(ta);
            txx.extend(xa);
        }
        TripleTables { n, prefix, t, txx }
    }

    #[inline]
    fn index(&self, a: usize, b: usize, c: usize) -> usize {
        // requires a <= b <= c
        let m = self.n - a;
        let bb = b - a;
        let local = bb * m - bb * (bb - 1) / 2 + (c - b);
        self.prefix[a] + local
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> (f64, f64) {
        let mut k = [a, b, c];
        k.sort_unstable();
        let i = self.index(k[0], k[1], k[2]);
        (self.t[i], self.txx[i])
    }
}

/// Fundamental domain of the hyperoctahedral group on the box
/// `|x|_∞ <= radius`: points `0 <= x1 <= x2 <= x3 <= x4 <= radius` with
/// their orbit multiplicities.
pub struct OrbitBox {
    pub radius: usize,
    pub points: Vec<[usize; 4]>,
    pub multiplicity: Vec<f64>,
}

impl OrbitBox {
    pub fn new(radius: usize) -> Self {
        let mut points = Vec::new();
        let mut multiplicity = Vec::new();
        for x1 in 0..=radius {
            for x2 in x1..=radius {
                for x3 in x2..=radius {
                    for x4 in x3..=radius {
                        let p = [x1, x2, x3, x4];
                        // sign choices for nonzero coordinates
                        let signs = 1usize << p.iter().filter(|&&v| v > 0).count();
                        // distinct permutations of the sorted tuple
                        let mut perms = 24.0;
                        let mut i = 0;
                        while i < 4 {
                            let mut j = i;
                            while j < 4 && p[j] == p[i] {
                                j += 1;
                            }
                            let run = (j - i) as f64;
                            let mut fact = 1.0;
                            for k in 2..=(run as usize) {
                                fact *= k as f64;
                            }
                            perms /= fact;
                            i = j;
                        }
                        points.push(p);
                        multiplicity.push(signs as f64 * perms);
                    }
                }
            }
        }
        OrbitBox {
            radius,
            points,
            multiplicity,
        }
    }
}

/// All mass-independent tables for a given `(L, J_grid, nodes_per_panel)`.
pub struct Engine {
    pub grid: TimeGrid,
    pub kernels: NodeKernels,
    pub pairs: PairTables,
    pub triples: TripleTables,
    pub orbit: OrbitBox,
}

impl Engine {
    pub fn build(l: u32, j_grid: usize, nodes_per_panel: usize) -> Result<Self> {
        let grid = TimeGrid::new(l, j_grid, nodes_per_panel)?;
        let kernels = NodeKernels::build(&grid);
        let pairs = PairTables::build(&kernels);
        let triples = TripleTables::build(&kernels);
        Ok(Engine {
            grid,
            kernels,
            pairs,
            triples,
            orbit: OrbitBox::new(32),
        })
    }

    /// Shared engine instances keyed by `(L, J_grid, nodes_per_panel)`.
    /// The tables are expensive; tests and drivers reuse them.
    pub fn shared(l: u32, j_grid: usize, nodes_per_panel: usize) -> Result<&'static Engine> {
        static CACHE: OnceLock<Mutex<HashMap<(u32, usize, usize), &'static Engine>>> =
            OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap();
        if let Some(e) = guard.get(&(l, j_grid, nodes_per_panel)) {
            return Ok(e);
        }
        let engine = Box::leak(Box::new(Engine::build(l, j_grid, nodes_per_panel)?));
        guard.insert((l, j_grid, nodes_per_panel), engine);
        Ok(engine)
    }

    /// Pointwise value of the scale-`j` covariance slice at lattice point
    /// `x` (infinite-volume kernel, mass `m²`).
    pub fn covariance_value(&self, j: usize, m2: f64, x: [i64; 4]) -> f64 {
        let mut acc = 0.0;
        for q in self.grid.panel_range(j) {
            let node = self.grid.nodes[q];
            let tab = &self.kernels.values[q];
            let mut prod = node.weight * (-node.t * m2).exp();
            for &xi in &x {
                prod *= value(tab, xi.unsigned_abs() as usize);
            }
            acc += prod;
        }
        acc
    }

    /// Partial sum `w_j(x) = Σ_{i<=j} C_i(x)`.
    pub fn w_value(&self, j: usize, m2: f64, x: [i64; 4]) -> f64 {
        (1..=j).map(|i| self.covariance_value(i, m2, x)).sum()
    }

    /// Mass of `C_j` outside the box `|x|_∞ > radius`, relative to the full
    /// mass `Ĉ_j(0)`.  Uses the separability of per-node kernels.
    pub fn mass_outside(&self, j: usize, m2: f64, radius: usize) -> f64 {
        let mut inside = 0.0;
        let mut total = 0.0;
        for q in self.grid.panel_range(j) {
            let node = self.grid.nodes[q];
            let tab = &self.kernels.values[q];
            let w = node.weight * (-node.t * m2).exp();
            let r = radius.min(tab.len() - 1);
            let mut axis = tab[0];
            for x in 1..=r {
                axis += 2.0 * tab[x];
            }
            inside += w * axis.powi(4);
            total += w; // Σ_x p_t(x) = 1 per axis
        }
        ((total - inside) / total).max(0.0)
    }
}
