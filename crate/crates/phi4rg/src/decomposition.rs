//! Multi-scale decomposition `(-Δ+m²)⁻¹ = Σ_j C_j` on `Z⁴`.
//!
//! The slices are Laplace-transform (heat-kernel) shells,
//! `Ĉ_j(k) = ∫_{t_{j-1}}^{t_j} e^{-t(λ(k)+m²)} dt` with `t_j = L^{2j}` and
//! `t_0 = 0`: positive definite by construction, telescoping exactly in
//! Fourier space, and satisfying the per-scale decay estimates with
//! Gaussian (not compactly supported) tails.  Real-space values come from
//! the per-axis factorisation of the heat kernel; the tails beyond the
//! nominal finite-range radius `½L^j` are quantified by the range
//! diagnostic rather than being exactly zero.

use crate::heat::{t_scale, Engine};
use crate::lattice::KernelGrid;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Mass scale `j_m = ⌊log_L m⁻¹⌋` (`None` encodes `∞`, the massless case).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassScale(pub Option<usize>);

impl MassScale {
    pub fn new(m2: f64, l: u32) -> Result<Self> {
        if m2 < 0.0 {
            return Err(Error::InvalidParameter {
                name: "m2",
                reason: "mass squared must be nonnegative".into(),
            });
        }
        if m2 == 0.0 {
            return Ok(MassScale(None));
        }
        let m = m2.sqrt();
        if m >= 1.0 {
            return Ok(MassScale(Some(0)));
        }
        // largest j with m L^j <= 1; nudge against roundoff on exact powers
        let j = ((-m.ln()) / (l as f64).ln() + 1e-12).floor();
        Ok(MassScale(Some(j as usize)))
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_none()
    }
}

/// Decay weight `χ_j = Ω^{-(j - j_m)_+}`.
pub fn chi(j: usize, j_m: MassScale, omega: f64) -> f64 {
    debug_assert!(omega > 1.0);
    match j_m.0 {
        None => 1.0,
        Some(jm) if j <= jm => 1.0,
        Some(jm) => omega.powi(-((j - jm) as i32)),
    }
}

/// Per-scale metadata recorded by `decompose`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleInfo {
    pub j: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    /// nominal real-space torus side `min(4 L^j, cap)`
    pub side: usize,
    /// true when the nominal side `4 L^j` exceeded the cap
    pub capped: bool,
    /// fraction of the slice's mass at `|x|_∞ > ½ L^j`
    pub mass_outside_half_range: f64,
    /// fraction outside the nominal torus radius `side/2`
    pub mass_outside_side: f64,
}

/// Multi-scale covariance decomposition with mass `m²` and `J_max` scales.
pub struct ScaleDecomposition {
    pub l: u32,
    pub j_max: usize,
    pub m2: f64,
    pub side_cap: usize,
    pub scales: Vec<ScaleInfo>,
    engine: &'static Engine,
}

/// Build a decomposition.  Engine tables for `(L, J_max)` are shared across
/// instances.
pub fn decompose(m2: f64, l: u32, j_max: usize, side_cap: usize) -> Result<ScaleDecomposition> {
    if m2 < 0.0 {
        return Err(Error::InvalidParameter {
            name: "m2",
            reason: "mass squared must be nonnegative".into(),
        });
    }
    if l < 2 || j_max < 1 {
        return Err(Error::InvalidParameter {
            name: "l",
            reason: "need L >= 2 and at least one scale".into(),
        });
    }
    let engine = Engine::shared(l, j_max, 20)?;
    let mut scales = Vec::with_capacity(j_max);
    for j in 1..=j_max {
        let nominal = 4usize.saturating_mul((l as usize).pow(j as u32));
        let capped = nominal > side_cap;
        let side = nominal.min(side_cap);
        let half_range = ((l as usize).pow(j as u32) / 2).max(1);
        scales.push(ScaleInfo {
            j,
            t_lo: t_scale(l, j - 1),
            t_hi: t_scale(l, j),
            side,
            capped,
            mass_outside_half_range: engine.mass_outside(j, m2, half_range),
            mass_outside_side: engine.mass_outside(j, m2, side / 2),
        });
    }
    Ok(ScaleDecomposition {
        l,
        j_max,
        m2,
        side_cap,
        scales,
        engine,
    })
}

impl ScaleDecomposition {
    /// Closed-form Fourier profile `Ĉ_j(k)` as a function of `λ(k)`.
    pub fn fourier_profile(&self, j: usize, lambda: f64) -> f64 {
        let s = lambda + self.m2;
        let (t0, t1) = (t_scale(self.l, j - 1), t_scale(self.l, j));
        if s * t1 < 1e-8 {
            (t1 - t0) * (1.0 - 0.5 * s * (t0 + t1))
        } else {
            ((-t0 * s).exp() - (-t1 * s).exp()) / s
        }
    }

    /// Fourier profile of everything beyond scale `J_max`: `e^{-t_J s}/s`.
    pub fn tail_profile(&self, lambda: f64) -> f64 {
        let s = lambda + self.m2;
        (-t_scale(self.l, self.j_max) * s).exp() / s
    }

    /// Last-slice profile of the side-`L^N` torus decomposition,
    /// `Ĉ_{N,N} = ∫_{t_{N-1}}^∞`, so that `Σ_{j<N} Ĉ_j + Ĉ_{N,N}` matches
    /// the full propagator on the discrete momentum set.
    pub fn last_slice_profile(&self, big_n: usize, lambda: f64) -> f64 {
        let s = lambda + self.m2;
        (-t_scale(self.l, big_n - 1) * s).exp() / s
    }

    /// Real-space kernel value `C_j(x)` (infinite volume).
    pub fn kernel_value(&self, j: usize, x: [i64; 4]) -> f64 {
        self.engine.covariance_value(j, self.m2, x)
    }

    /// Partial sum `w_j(x) = Σ_{i<=j} C_i(x)`.
    pub fn w_value(&self, j: usize, x: [i64; 4]) -> f64 {
        self.engine.w_value(j, self.m2, x)
    }

    /// Fraction of the mass of `C_j` outside `|x|_∞ > radius`.
    pub fn mass_outside(&self, j: usize, radius: usize) -> f64 {
        self.engine.mass_outside(j, self.m2, radius)
    }

    /// Materialise a small real-space sample of `C_j` on a torus of side
    /// `2r+1` (for files and plots; values are the infinite-volume ones).
    pub fn kernel_box(&self, j: usize, r: usize) -> KernelGrid {
        let side = 2 * r + 1;
        let mut g = KernelGrid::zeros(side, self.m2);
        g.scale = Some(j);
        for x0 in 0..side {
            for x1 in 0..side {
                for x2 in 0..side {
                    for x3 in 0..side {
                        let x = [x0, x1, x2, x3].map(|v| {
                            let v = v as i64;
                            if 2 * v > side as i64 {
                                v - side as i64
                            } else {
                                v
                            }
                        });
                        g.set([x0, x1, x2, x3], self.kernel_value(j, x));
                    }
                }
            }
        }
        g
    }

    pub fn mass_scale(&self) -> Result<MassScale> {
        MassScale::new(self.m2, self.l)
    }

    /// Scaling diagnostic `sup_x |∇^α C_j(x,0)| · L^{(j-1)(2+|α|₁)}` with
    /// the decay factor beyond the mass scale.
    pub fn scaling_diagnostic(&self, j: usize, alpha: [u8; 4]) -> Result<ScalingReport> {
        if j == 0 || j > self.j_max {
            return Err(Error::InvalidParameter {
                name: "j",
                reason: format!("scale must be in 1..={}", self.j_max),
            });
        }
        let order: u32 = alpha.iter().map(|&a| a as u32).sum();
        if order > 2 {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: "diagnostic covers |α|₁ <= 2".into(),
            });
        }
        // the extremum of a derivative of the isotropic slice lies within a
        // few standard deviations along the differentiated axes; scan a
        // geometric ladder there and refine locally
        let radius = (3.0 * (2.0 * t_scale(self.l, j)).sqrt()).ceil() as i64 + 4;
        let mut ladder = vec![0i64];
        let mut x = 1i64;
        while x <= radius {
            ladder.push(x);
            x = ((x as f64) * 1.3).ceil() as i64;
        }
        let axes: Vec<usize> = (0..4).filter(|&a| alpha[a] > 0).collect();
        let deriv_abs = |x: [i64; 4]| -> f64 {
            let mut pts: Vec<([i64; 4], f64)> = vec![(x, 1.0)];
            for a in 0..4 {
                for _ in 0..alpha[a] {
                    let mut next = Vec::with_capacity(pts.len() * 2);
                    for &(p, c) in &pts {
                        let mut q = p;
                        q[a] += 1;
                        next.push((q, c));
                        next.push((p, -c));
                    }
                    pts = next;
                }
            }
            pts.iter()
                .map(|&(p, c)| c * self.kernel_value(j, p))
                .sum::<f64>()
                .abs()
        };
        let mut best = 0.0f64;
        let mut best_x = [0i64; 4];
        let consider = |x: [i64; 4], best: &mut f64, best_x: &mut [i64; 4]| {
            let v = deriv_abs(x);
            if v > *best {
                *best = v;
                *best_x = x;
            }
        };
        match axes.len() {
            0 => {
                for &x in &ladder {
                    consider([x, 0, 0, 0], &mut best, &mut best_x);
                    consider([x, x, 0, 0], &mut best, &mut best_x);
                }
            }
            1 => {
                for &x in &ladder {
                    let mut p = [0i64; 4];
                    p[axes[0]] = x;
                    consider(p, &mut best, &mut best_x);
                }
            }
            _ => {
                for &x in &ladder {
                    for &y in &ladder {
                        let mut p = [0i64; 4];
                        p[axes[0]] = x;
                        p[axes[1]] = y;
                        consider(p, &mut best, &mut best_x);
                    }
                }
            }
        }
        for _ in 0..2 {
            let centre = best_x;
            for a in 0..4 {
                for d in [-2i64, -1, 1, 2] {
                    let mut p = centre;
                    p[a] = (p[a] + d).max(0);
                    consider(p, &mut best, &mut best_x);
                }
            }
        }
        let jm = self.mass_scale()?;
        let value = best * (self.l as f64).powi((j as i32 - 1) * (2 + order as i32));
        Ok(ScalingReport {
            j,
            alpha,
            sup_abs: best,
            argmax: best_x,
            value,
            chi: chi(j, jm, 2.0),
        })
    }

    /// Serialise to `dir`: a manifest plus per-scale kernel samples.
    pub fn save(&self, dir: &Path, sample_radius: usize) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest {
            l: self.l,
            j_max: self.j_max,
            m2: self.m2,
            side_cap: self.side_cap,
            t_grid: (0..=self.j_max).map(|j| t_scale(self.l, j)).collect(),
            scales: self.scales.clone(),
        };
        let f = std::fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(f, &manifest)?;
        for j in 1..=self.j_max {
            let r = sample_radius
                .min(2 * (self.l as usize).pow(j as u32))
                .min(6);
            let grid = self.kernel_box(j, r);
            save_kernel_csv(&grid, &dir.join(format!("kernel_scale_{j:02}.csv")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub l: u32,
    pub j_max: usize,
    pub m2: f64,
    pub side_cap: usize,
    pub t_grid: Vec<f64>,
    pub scales: Vec<ScaleInfo>,
}

/// Load a decomposition back from its manifest (kernel data is rebuilt from
/// the recorded grid parameters).
pub fn load(dir: &Path) -> Result<ScaleDecomposition> {
    let f = std::fs::File::open(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_reader(f)?;
    decompose(manifest.m2, manifest.l, manifest.j_max, manifest.side_cap)
}

/// Write a dense grid as `x1,x2,x3,x4,value` rows with a JSON header line.
pub fn save_kernel_csv(grid: &KernelGrid, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "# {}",
        serde_json::json!({"side": grid.side, "m2": grid.m2, "scale": grid.scale})
    )?;
    writeln!(f, "x1,x2,x3,x4,value")?;
    let m = grid.side;
    for x0 in 0..m {
        for x1 in 0..m {
            for x2 in 0..m {
                for x3 in 0..m {
                    let v = grid.values[grid.index([x0, x1, x2, x3])];
                    writeln!(f, "{x0},{x1},{x2},{x3},{v:e}")?;
                }
            }
        }
    }
    Ok(())
}

/// Read a grid written by `save_kernel_csv`.
pub fn load_kernel_csv(path: &Path) -> Result<KernelGrid> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::InvalidParameter {
            name: "path",
            reason: "missing JSON header line".into(),
        })?;
    let meta: serde_json::Value = serde_json::from_str(header)?;
    let side = meta["side"].as_u64().unwrap_or(0) as usize;
    let mut grid = KernelGrid::zeros(side, meta["m2"].as_f64().unwrap_or(0.0));
    grid.scale = meta["scale"].as_u64().map(|v| v as usize);
    for line in lines.skip(1) {
        let mut it = line.split(',');
        let mut x = [0usize; 4];
        for xi in &mut x {
            *xi = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidParameter {
                    name: "path",
                    reason: format!("malformed row: {line}"),
                })?;
        }
        let v: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidParameter {
                name: "path",
                reason: format!("malformed row: {line}"),
            })?;
        grid.set(x, v);
    }
    Ok(grid)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub j: usize,
    pub alpha: [u8; 4],
    pub sup_abs: f64,
    pub argmax: [i64; 4],
    /// `sup |∇^α C_j| · L^{(j-1)(2+|α|₁)}`
    pub value: f64,
    pub chi: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn mass_scale_examples() {
        assert_eq!(MassScale::new(1.0, 2).unwrap(), MassScale(Some(0)));
        for k in 1..10usize {
            let m2 = 2.0f64.powi(-2 * k as i32);
            assert_eq!(MassScale::new(m2, 2).unwrap(), MassScale(Some(k)));
        }
        assert!(MassScale::new(0.0, 2).unwrap().is_infinite());
    }

    #[test]
    fn chi_examples() {
        let jm = MassScale(Some(4));
        assert_eq!(chi(2, jm, 2.0), 1.0);
        assert_eq!(chi(4, jm, 2.0), 1.0);
        assert!((chi(7, jm, 2.0) - 0.125).abs() < 1e-15);
        assert_eq!(chi(50, MassScale(None), 2.0), 1.0);
    }

    #[test]
    fn fourier_telescoping_exact() {
        let d = decompose(0.03, 2, 8, 256).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let k = [rng.gen::<f64>(), rng.gen(), rng.gen(), rng.gen()];
            let lambda = crate::lattice::multiplier(crate::lattice::Momentum::new(k).unwrap());
            let sum: f64 = (1..=8).map(|j| d.fourier_profile(j, lambda)).sum::<f64>()
                + d.tail_profile(lambda);
            let exact = 1.0 / (lambda + d.m2);
            assert!(
                (sum - exact).abs() < 1e-12 * exact,
                "telescoping at λ={lambda}: {sum} vs {exact}"
            );
            assert!((1..=8).all(|j| d.fourier_profile(j, lambda) >= 0.0));
        }
    }

    #[test]
    fn finite_volume_variant_telescopes() {
        let d = decompose(0.25, 2, 6, 256).unwrap();
        let big_n = 5usize;
        let m = 2usize.pow(big_n as u32);
        for i in [0usize, 1, 7, 13] {
            let s = (std::f64::consts::PI * i as f64 / m as f64).sin();
            let lambda = 4.0 * s * s;
            let sum: f64 = (1..big_n).map(|j| d.fourier_profile(j, lambda)).sum::<f64>()
                + d.last_slice_profile(big_n, lambda);
            let exact = 1.0 / (lambda + d.m2);
            assert!((sum - exact).abs() < 1e-12 * exact);
        }
    }

    #[test]
    fn kernel_origin_scaling_bounded() {
        // C_{j;0,0} · L^{2(j-1)} bounded uniformly (m² = 0, L = 2)
        let d = decompose(0.0, 2, 8, 256).unwrap();
        let mut vals = Vec::new();
        for j in 1..=8 {
            let c0 = d.kernel_value(j, [0, 0, 0, 0]);
            vals.push(c0 * 4.0f64.powi(j as i32 - 1));
        }
        let max = vals.iter().cloned().fold(0.0, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        // the first slice also holds the unit-scale core, so the uniform
        // constant is set by j = 1
        assert!(max < 0.2, "scaled origin values {vals:?}");
        assert!(min > 0.0);
        assert!((vals[7] - vals[6]).abs() < 0.02 * vals[6]);
    }

    #[test]
    fn gaussian_tails_and_range_report() {
        let d = decompose(0.0, 2, 6, 256).unwrap();
        for j in 1..=6 {
            let info = &d.scales[j - 1];
            // heat slices are not finite range: an O(1) fraction of the
            // mass sits beyond ½L^j, and the diagnostic must report it
            assert!(info.mass_outside_half_range > 0.05);
            // while the Gaussian envelope dies by a few L^j
            let r = 6 * 2usize.pow(j as u32);
            assert!(d.mass_outside(j, r) < 1e-3);
        }
    }

    #[test]
    fn scaling_diagnostic_bounded_over_scales() {
        let d = decompose(0.0, 2, 8, 256).unwrap();
        let vals: Vec<f64> = (1..=8)
            .map(|j| d.scaling_diagnostic(j, [0, 0, 0, 0]).unwrap().value)
            .collect();
        let max = vals.iter().cloned().fold(0.0, f64::max);
        assert!(max < 0.2, "α=0 diagnostic {vals:?}");
        // beyond the first slice the rescaled values settle to a constant
        assert!((vals[7] - vals[6]).abs() < 0.02 * vals[6], "{vals:?}");
        // one discrete gradient costs one extra factor L^{-(j-1)}
        let vals: Vec<f64> = (1..=8)
            .map(|j| d.scaling_diagnostic(j, [1, 0, 0, 0]).unwrap().value)
            .collect();
        let max = vals.iter().cloned().fold(0.0, f64::max);
        assert!(max < 0.2, "α=e1 diagnostic {vals:?}");
        let ratio = vals[7] / vals[5];
        assert!(ratio < 2.0, "gradient diagnostic growing: {vals:?}");
    }

    #[test]
    fn diagnostic_decays_beyond_mass_scale() {
        // m² = L^{-8}: j_m = 4; beyond it the diagnostic decays at least
        // like Ω^{-(j-j_m)} with Ω = 2
        let m2 = 2.0f64.powi(-8);
        let d = decompose(m2, 2, 8, 256).unwrap();
        let jm = d.mass_scale().unwrap();
        assert_eq!(jm, MassScale(Some(4)));
        let v5 = d.scaling_diagnostic(5, [0, 0, 0, 0]).unwrap().value;
        let v7 = d.scaling_diagnostic(7, [0, 0, 0, 0]).unwrap().value;
        let v8 = d.scaling_diagnostic(8, [0, 0, 0, 0]).unwrap().value;
        assert!(v7 / v5 < chi(7, jm, 2.0) / chi(5, jm, 2.0) * 1.5);
        assert!(v8 < v7 / 2.0, "no decay beyond the mass scale: {v7} -> {v8}");
    }

    #[test]
    fn cap_is_recorded() {
        let d = decompose(0.0, 2, 8, 64).unwrap();
        assert!(!d.scales[2].capped); // 4·2³ = 32 <= 64
        assert!(d.scales[4].capped); // 4·2⁵ = 128 > 64
        assert_eq!(d.scales[4].side, 64);
    }

    #[test]
    fn save_and_load_roundtrip() {
        let dir = std::env::temp_dir().join("phi4rg_decomp_test");
        let _ = std::fs::remove_dir_all(&dir);
        let d = decompose(0.01, 2, 4, 128).unwrap();
        d.save(&dir, 4).unwrap();
        let d2 = load(&dir).unwrap();
        assert_eq!(d2.j_max, 4);
        assert_eq!(d2.m2, 0.01);
        let g = load_kernel_csv(&dir.join("kernel_scale_02.csv")).unwrap();
        assert_eq!(g.scale, Some(2));
        assert!((g.get([1, 0, 0, 0]) - d.kernel_value(2, [1, 0, 0, 0])).abs() < 1e-15);
        let _ = std::fs::remove_dir_all(&dir);
    }
}
