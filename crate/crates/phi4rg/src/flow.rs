//! The perturbative renormalisation-group map, its triangular form,
//! critical trajectories with backward boundary conditions, and the
//! tangent / second-tangent flows that feed the observables.

use crate::coefficients::{CoefficientSet, CoefficientTable, RescaledCoefficients};
use crate::{Error, Result};
use serde::Serialize;
use std::path::Path;

/// Polynomial coupling coordinates `(g, ν, z, y, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CouplingVector {
    pub g: f64,
    pub nu: f64,
    pub z: f64,
    pub y: f64,
    pub u: f64,
}

impl CouplingVector {
    pub fn new(g: f64, nu: f64, z: f64, y: f64, u: f64) -> Self {
        CouplingVector { g, nu, z, y, u }
    }

    /// Scale-j norm `max{|g|, L^{2j}|ν|, |z|, |y|, L^{4j}|u|}`.
    pub fn norm(&self, l: u32, j: usize) -> f64 {
        let l2j = (l as f64).powi(2 * j as i32);
        self.g
            .abs()
            .max(l2j * self.nu.abs())
            .max(self.z.abs())
            .max(self.y.abs())
            .max(l2j * l2j * self.u.abs())
    }
}

/// One step of the explicit second-order map `V -> U_pt`.
///
/// The ν-dependent increments use `ν⁺ = ν + η′g` with the same-scale `η′`,
/// and `w₊ = w_{j+1}`; `δu_pt` is the constant term.
pub fn u_pt(v: &CouplingVector, c: &CoefficientSet) -> CouplingVector {
    let gamma = c.gamma();
    let (g, nu, z, y) = (v.g, v.nu, v.z, v.y);
    let nu_plus = nu + c.eta_p * g;
    let d_nu_w1 = nu_plus * c.w1_plus - nu * c.w1;
    let d_nu2_w1 = nu_plus * nu_plus * c.w1_plus - nu * nu * c.w1;
    let d_nu2_wss = nu_plus * nu_plus * c.wss_plus - nu * nu * c.wss;
    let d_nu_w2ss = nu_plus * c.w2ss_plus - nu * c.w2ss;
    let g_pt = g - c.beta * g * g - 4.0 * g * d_nu_w1;
    let nu_pt = nu + c.eta_p * (g + 4.0 * g * nu * c.w1)
        - c.xi_p * g * g
        - gamma * c.beta * g * nu
        - c.pi_p * g * (z + y)
        - d_nu2_w1;
    let y_pt = y + c.sigma * g * z
        - c.zeta * g * y
        - 0.5 * (2.0 + c.n as f64) * g * d_nu_w2ss;
    let z_pt = z - c.theta * g * g - 0.5 * d_nu2_wss - 2.0 * z * d_nu_w1 - (y_pt - y);
    let zy = z + y;
    let du_pt = c.kappa_g * g + c.kappa_nu_p * nu - c.kappa_z * zy
        - c.kappa_gg * g * g
        - c.kappa_nunu_p * nu * nu
        - c.kappa_zz * zy * zy
        + c.kappa_znu_p * zy * nu;
    CouplingVector {
        g: g_pt,
        nu: nu_pt,
        z: z_pt,
        y: y_pt,
        u: du_pt,
    }
}

/// Transformed (checked/barred) coordinates `(g, z, μ)` at a scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TransformedCouplings {
    pub g: f64,
    pub z: f64,
    pub mu: f64,
}

impl TransformedCouplings {
    pub fn norm(&self) -> f64 {
        self.g.abs().max(self.z.abs()).max(self.mu.abs())
    }
}

/// The triangularising change of variables `T_j(g, z, μ)`.
pub fn transform(v: TransformedCouplings, r: &RescaledCoefficients) -> TransformedCouplings {
    TransformedCouplings {
        g: v.g + 4.0 * v.g * v.mu * r.wbar1,
        z: v.z + 2.0 * v.z * v.mu * r.wbar1 + 0.5 * v.mu * v.mu * r.wbarss,
        mu: v.mu + v.mu * v.mu * r.wbar1,
    }
}

/// Inverse of `transform` by damped fixed-point iteration; fails outside
/// the invertibility ball.
pub fn inverse_transform(
    target: TransformedCouplings,
    r: &RescaledCoefficients,
) -> Result<TransformedCouplings> {
    let mut v = target;
    for _ in 0..200 {
        let mu = target.mu - v.mu * v.mu * r.wbar1;
        let g = target.g / (1.0 + 4.0 * mu * r.wbar1);
        let z = (target.z - 0.5 * mu * mu * r.wbarss) / (1.0 + 2.0 * mu * r.wbar1);
        let next = TransformedCouplings { g, z, mu };
        let delta = (next.g - v.g)
            .abs()
            .max((next.z - v.z).abs())
            .max((next.mu - v.mu).abs());
        v = next;
        if delta < 1e-15 * (1.0 + v.norm()) {
            let back = transform(v, r);
            let residual = (back.g - target.g)
                .abs()
                .max((back.z - target.z).abs())
                .max((back.mu - target.mu).abs());
            if residual > 1e-10 * (1.0 + target.norm()) {
                break;
            }
            return Ok(v);
        }
    }
    Err(Error::NonConvergence {
        residual: f64::NAN,
        iterations: 200,
    })
}

/// One step of the triangular bar flow, returning the new couplings and
/// the constant increment `δū₊`.
pub fn bar_step(
    v: TransformedCouplings,
    set: &CoefficientSet,
    r: &RescaledCoefficients,
) -> (TransformedCouplings, f64) {
    let gamma = set.gamma();
    let l2 = (set.l as f64) * (set.l as f64);
    let g_next = v.g - set.beta * v.g * v.g;
    let z_next = v.z - set.theta * v.g * v.g;
    let mu_next = l2 * v.mu * (1.0 - gamma * set.beta * v.g) + r.eta * v.g
        - r.xi * v.g * v.g
        - r.pi * v.g * v.z;
    let nu_bar = (set.l as f64).powi(-2 * set.j as i32) * v.mu;
    let du = set.kappa_g * v.g + set.kappa_nu_p * nu_bar - set.kappa_z * v.z
        - set.kappa_gg * v.g * v.g
        - r.kappa_mumu * v.mu * v.mu
        - set.kappa_zz * v.z * v.z
        + r.kappa_gmu * v.g * v.mu
        + r.kappa_zmu * v.z * v.mu;
    (
        TransformedCouplings {
            g: g_next,
            z: z_next,
            mu: mu_next,
        },
        du,
    )
}

/// Options of the trajectory solver.
#[derive(Debug, Clone)]
pub struct FlowOptions {
    /// hard cap on the number of scales
    pub j_cap: usize,
    /// stop once `χ_j ḡ_j` drops below this
    pub chi_g_tol: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            j_cap: 60,
            chi_g_tol: 1e-14,
        }
    }
}

/// Per-scale state of a solved trajectory.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ScaleState {
    pub j: usize,
    pub gbar: f64,
    pub zbar: f64,
    pub mubar: f64,
    pub chi: f64,
    /// `χ_j ḡ_j (1 + g₀ j)/g₀`
    pub envelope_ratio: f64,
}

/// Scale-indexed critical trajectory in the barred coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub l: u32,
    pub n: u32,
    pub m2: f64,
    pub g0: f64,
    /// truncation scale: states are stored for `j = 0..=j_stop`
    pub j_stop: usize,
    pub states: Vec<ScaleState>,
    /// boundary outputs `(ν₀ᶜ, z₀ᶜ) = (μ̄₀, z̄₀)`
    pub nu0c: f64,
    pub z0c: f64,
    /// geometric estimates of the neglected backward tails
    pub z_tail_bound: f64,
    pub mu_tail_bound: f64,
}

/// Solve the critical trajectory: `ḡ` forward from `g₀`, then `z̄` and `μ̄`
/// backward from the zero boundary data at the truncation scale.
///
/// `g₀ = 0` is accepted as the continuity limit and yields the zero
/// trajectory.
pub fn critical_trajectory(
    table: &CoefficientTable,
    g0: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    if g0 < 0.0 || !g0.is_finite() {
        return Err(Error::InvalidParameter {
            name: "g0",
            reason: format!("initial coupling must be nonnegative, got {g0}"),
        });
    }
    if table.sets.len() <= opts.j_cap {
        return Err(Error::InvalidParameter {
            name: "table",
            reason: format!(
                "coefficient table covers {} scales, j_cap is {}",
                table.sets.len(),
                opts.j_cap
            ),
        });
    }
    // forward ḡ
    let mut gbar = vec![g0];
    let mut j_stop = opts.j_cap;
    for j in 0..opts.j_cap {
        let set = &table.sets[j];
        let g = gbar[j];
        let step = 1.0 - set.gamma() * set.beta * g;
        if step <= 0.0 {
            return Err(Error::StepSizeViolation {
                scale: j,
                value: step,
            });
        }
        gbar.push(g - set.beta * g * g);
        if set.chi * gbar[j + 1] < opts.chi_g_tol {
            j_stop = j + 1;
            break;
        }
    }
    let j = j_stop;
    // backward z̄: z̄_i = z̄_{i+1} + θ_i ḡ_i²
    let mut zbar = vec![0.0; j + 1];
    for i in (0..j).rev() {
        zbar[i] = zbar[i + 1] + table.sets[i].theta * gbar[i] * gbar[i];
    }
    let z_tail_bound = 2.0 * table.sets[j.min(table.sets.len() - 1)].theta.abs()
        * gbar[j]
        * gbar[j];
    // backward μ̄
    let l2 = (table.l as f64) * (table.l as f64);
    let mut mubar = vec![0.0; j + 1];
    for i in (0..j).rev() {
        let set = &table.sets[i];
        let r = &table.resc[i];
        let denom = l2 * (1.0 - set.gamma() * set.beta * gbar[i]);
        if denom <= 0.0 {
            return Err(Error::StepSizeViolation {
                scale: i,
                value: denom,
            });
        }
        mubar[i] = (mubar[i + 1] - r.eta * gbar[i] + r.xi * gbar[i] * gbar[i]
            + r.pi * gbar[i] * zbar[i])
            / denom;
    }
    let mu_tail_bound = 2.0
        * table.resc[j.min(table.resc.len() - 1)].eta.abs()
        * gbar[j]
        * (l2.powi(-(j as i32 + 1)));
    let states = (0..=j)
        .map(|i| {
            let chi = table.sets[i].chi;
            ScaleState {
                j: i,
                gbar: gbar[i],
                zbar: zbar[i],
                mubar: mubar[i],
                chi,
                envelope_ratio: if g0 > 0.0 {
                    chi * gbar[i] * (1.0 + g0 * i as f64) / g0
                } else {
                    0.0
                },
            }
        })
        .collect();
    Ok(Trajectory {
        l: table.l,
        n: table.n,
        m2: table.m2,
        g0,
        j_stop: j,
        states,
        nu0c: mubar[0],
        z0c: zbar[0],
        z_tail_bound,
        mu_tail_bound,
    })
}

/// Tangent flow: the exact ν₀-derivative of the triangular trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TangentFlow {
    /// `μ̄′_j = Π_{i<j} L²(1 - γ β_i ḡ_i)`
    pub mu_prime: Vec<f64>,
    /// `ν̌′_j = L^{-2j} μ̄′_j`
    pub nu_check_prime: Vec<f64>,
    /// `δū′_{j+1}`, exact derivative of the constant increment
    pub du_prime: Vec<f64>,
    pub u_prime_infty: f64,
    pub u_prime_tail_bound: f64,
}

pub fn tangent_flow(table: &CoefficientTable, traj: &Trajectory) -> TangentFlow {
    let l2 = (table.l as f64) * (table.l as f64);
    let j_stop = traj.j_stop;
    let mut mu_prime = vec![1.0];
    for j in 0..j_stop {
        let set = &table.sets[j];
        mu_prime.push(l2 * (1.0 - set.gamma() * set.beta * traj.states[j].gbar) * mu_prime[j]);
    }
    let nu_check_prime: Vec<f64> = mu_prime
        .iter()
        .enumerate()
        .map(|(j, &mp)| l2.powi(-(j as i32)) * mp)
        .collect();
    let mut du_prime = Vec::with_capacity(j_stop);
    let mut u_prime_infty = 0.0;
    for j in 0..j_stop {
        let set = &table.sets[j];
        let r = &table.resc[j];
        let s = &traj.states[j];
        let d = (set.kappa_nu_p * l2.powi(-(j as i32)) - 2.0 * r.kappa_mumu * s.mubar
            + r.kappa_gmu * s.gbar
            + r.kappa_zmu * s.zbar)
            * mu_prime[j];
        du_prime.push(d);
        u_prime_infty += d;
    }
    let u_prime_tail_bound = du_prime.last().map_or(0.0, |d| 2.0 * d.abs());
    TangentFlow {
        mu_prime,
        nu_check_prime,
        du_prime,
        u_prime_infty,
        u_prime_tail_bound,
    }
}

/// Second-tangent data: `u″_∞ = Σ_j δū″_{j+1}` with
/// `δū″_{j+1} = -2 κ_{μμ,j} (μ̄′_j)²` (the μ̄-recursion is affine, so
/// `μ̄″ = 0` identically in the triangular flow).
#[derive(Debug, Clone, Serialize)]
pub struct SecondTangent {
    pub du_second: Vec<f64>,
    pub u_second_infty: f64,
    /// the same sum through the per-scale identity
    /// `2κ_{μμ}(μ̄′)² = (n/(2(8+n))) β (ν̌′)²`
    pub beta_route: f64,
}

pub fn second_tangent(
    table: &CoefficientTable,
    traj: &Trajectory,
    tangent: &TangentFlow,
) -> SecondTangent {
    let nf = table.n as f64;
    let mut du_second = Vec::with_capacity(traj.j_stop);
    let mut total = 0.0;
    let mut beta_route = 0.0;
    for j in 0..traj.j_stop {
        let r = &table.resc[j];
        let d = -2.0 * r.kappa_mumu * tangent.mu_prime[j] * tangent.mu_prime[j];
        du_second.push(d);
        total += d;
        let np = tangent.nu_check_prime[j];
        beta_route -= nf / (2.0 * (8.0 + nf)) * table.sets[j].beta * np * np;
    }
    SecondTangent {
        du_second,
        u_second_infty: total,
        beta_route,
    }
}

/// Accumulated constant term `u_j = Σ_{i<j} δū_{i+1}` along the trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct USeries {
    pub du: Vec<f64>,
    pub u: Vec<f64>,
    pub u_infty: f64,
    pub tail_bound: f64,
}

pub fn accumulate_u(table: &CoefficientTable, traj: &Trajectory) -> Result<USeries> {
    if !table.with_quartic {
        return Err(Error::InvalidParameter {
            name: "table",
            reason: "u accumulation needs a table built with the quartic moments".into(),
        });
    }
    let mut du = Vec::with_capacity(traj.j_stop);
    let mut u = vec![0.0];
    for j in 0..traj.j_stop {
        let s = &traj.states[j];
        let v = TransformedCouplings {
            g: s.gbar,
            z: s.zbar,
            mu: s.mubar,
        };
        let (_, d) = bar_step(v, &table.sets[j], &table.resc[j]);
        du.push(d);
        u.push(u[j] + d);
    }
    let tail_bound = du.last().map_or(0.0, |d| 2.0 * d.abs());
    Ok(USeries {
        u_infty: *u.last().unwrap(),
        du,
        u,
        tail_bound,
    })
}

/// Ratio `‖φ̄_j(T_j(V)) - T_{j+1}(U_pt⁽⁰⁾(V))‖ / ‖V‖³` measuring the
/// third-order consistency of the triangular flow with the full map.
pub fn bar_consistency_ratio(
    table: &CoefficientTable,
    j: usize,
    v: &CouplingVector,
) -> f64 {
    let l2j = (table.l as f64).powi(2 * j as i32);
    let set = &table.sets[j];
    let r = &table.resc[j];
    let r_next = &table.resc[j + 1];
    let raw = TransformedCouplings {
        g: v.g,
        z: v.z,
        mu: l2j * v.nu,
    };
    let (lhs, _) = bar_step(transform(raw, r), set, r);
    let upt = u_pt(v, set);
    let l2j1 = l2j * (table.l as f64).powi(2);
    let rhs = transform(
        TransformedCouplings {
            g: upt.g,
            z: upt.z + upt.y,
            mu: l2j1 * upt.nu,
        },
        r_next,
    );
    let diff = (lhs.g - rhs.g)
        .abs()
        .max((lhs.z - rhs.z).abs())
        .max((lhs.mu - rhs.mu).abs());
    let norm = raw.norm();
    diff / (norm * norm * norm)
}

/// Trajectory dump: CSV with the flow state, tangents and diagnostics.
pub fn save_trajectory_csv(
    path: &Path,
    header: &serde_json::Value,
    traj: &Trajectory,
    tangent: &TangentFlow,
    useries: Option<&USeries>,
) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# {header}")?;
    writeln!(f, "j,gbar,zbar,mubar,du,u,mu_prime,du_prime,chi,envelope_ratio")?;
    for s in &traj.states {
        let j = s.j;
        let (du, u) = useries.map_or((f64::NAN, f64::NAN), |us| {
            (
                us.du.get(j).copied().unwrap_or(f64::NAN),
                us.u.get(j).copied().unwrap_or(f64::NAN),
            )
        });
        let mp = tangent.mu_prime.get(j).copied().unwrap_or(f64::NAN);
        let dp = tangent.du_prime.get(j).copied().unwrap_or(f64::NAN);
        writeln!(
            f,
            "{j},{:e},{:e},{:e},{du:e},{u:e},{mp:e},{dp:e},{:e},{:e}",
            s.gbar, s.zbar, s.mubar, s.chi, s.envelope_ratio
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::coefficient_table;
    use crate::heat::Engine;

    fn table(m2: f64, n: u32) -> CoefficientTable {
        let e = Engine::shared(2, 10, 20).unwrap();
        coefficient_table(e, m2, n, 70, false).unwrap()
    }

    fn table_with_u(m2: f64, n: u32) -> CoefficientTable {
        let e = Engine::shared(2, 10, 20).unwrap();
        coefficient_table(e, m2, n, 70, true).unwrap()
    }

    #[test]
    fn u_pt_zero_maps_to_zero() {
        let t = table(0.01, 2);
        for j in [0usize, 3, 7] {
            let out = u_pt(&CouplingVector::default(), &t.sets[j]);
            assert_eq!(out, CouplingVector::default());
        }
    }

    #[test]
    fn u_pt_reduction_at_nu_z_y_zero() {
        // with ν = z = y = 0 the map reduces to the pure-g expressions,
        // including the η′g backwash through ν⁺ = η′g
        let t = table(0.0, 1);
        let c = &t.sets[3];
        let g = 0.07;
        let v = CouplingVector::new(g, 0.0, 0.0, 0.0, 0.0);
        let out = u_pt(&v, c);
        let nu_plus = c.eta_p * g;
        assert!(
            (out.g - (g - c.beta * g * g - 4.0 * g * nu_plus * c.w1_plus)).abs() < 1e-18
        );
        let nu_expect = c.eta_p * g - c.xi_p * g * g - nu_plus * nu_plus * c.w1_plus;
        assert!((out.nu - nu_expect).abs() < 1e-18);
        let y_expect = -0.5 * 3.0 * g * nu_plus * c.w2ss_plus;
        assert!((out.y - y_expect).abs() < 1e-18);
        let z_expect = -c.theta * g * g - 0.5 * nu_plus * nu_plus * c.wss_plus - (out.y - 0.0);
        assert!((out.z - z_expect).abs() < 1e-18);
        // δu_pt has no ν⁺ shift: κ_g g - κ_gg g² exactly
        assert!((out.u - (c.kappa_g * g - c.kappa_gg * g * g)).abs() < 1e-18);
    }

    #[test]
    fn transform_identity_at_scale_zero_and_mu_zero() {
        let t = table(0.02, 1);
        // T_0 = identity because w̄₀ = 0
        let v = TransformedCouplings {
            g: 0.05,
            z: -0.01,
            mu: 0.03,
        };
        assert_eq!(transform(v, &t.resc[0]), v);
        // μ = 0 leaves g and z untouched at any scale
        let v = TransformedCouplings {
            g: 0.05,
            z: -0.01,
            mu: 0.0,
        };
        let out = transform(v, &t.resc[5]);
        assert_eq!(out, v);
    }

    #[test]
    fn transform_roundtrip_and_second_order_size() {
        let t = table(0.001, 2);
        let r = &t.resc[6];
        let v = TransformedCouplings {
            g: 0.04,
            z: 0.02,
            mu: -0.03,
        };
        let back = inverse_transform(transform(v, r), r).unwrap();
        assert!((back.g - v.g).abs() < 1e-12);
        assert!((back.z - v.z).abs() < 1e-12);
        assert!((back.mu - v.mu).abs() < 1e-12);
        // ‖T(V)-V‖/‖V‖² bounded along a shrinking ray
        let mut ratios = Vec::new();
        for &s in &[1.0, 0.5, 0.25] {
            let vs = TransformedCouplings {
                g: s * v.g,
                z: s * v.z,
                mu: s * v.mu,
            };
            let tv = transform(vs, r);
            let diff = (tv.g - vs.g)
                .abs()
                .max((tv.z - vs.z).abs())
                .max((tv.mu - vs.mu).abs());
            ratios.push(diff / (vs.norm() * vs.norm()));
        }
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.5, "T(V)-V not quadratic: {ratios:?}");
    }

    #[test]
    fn bar_step_with_beta_only() {
        let mut set = CoefficientSet::default();
        set.l = 2;
        set.n = 1;
        set.beta = 0.5;
        let r = RescaledCoefficients::default();
        let v = TransformedCouplings {
            g: 0.1,
            z: 0.03,
            mu: 0.02,
        };
        let (out, du) = bar_step(v, &set, &r);
        assert!((out.g - (0.1 - 0.5 * 0.01)).abs() < 1e-16);
        assert_eq!(out.z, v.z);
        assert!((out.mu - 4.0 * v.mu * (1.0 - set.gamma() * 0.5 * 0.1)).abs() < 1e-16);
        assert_eq!(du, 0.0);
    }

    #[test]
    fn trajectory_recursion_identity() {
        // 1/ḡ_{j+1} = 1/ḡ_j + β_j/(1 - β_j ḡ_j) to machine precision
        let t = table(1e-6, 1);
        let traj = critical_trajectory(&t, 0.05, &FlowOptions::default()).unwrap();
        for j in 0..traj.j_stop {
            let g = traj.states[j].gbar;
            let g1 = traj.states[j + 1].gbar;
            let beta = t.sets[j].beta;
            let lhs = 1.0 / g1;
            let rhs = 1.0 / g + beta / (1.0 - beta * g);
            assert!(
                (lhs - rhs).abs() < 1e-9 * lhs.abs(),
                "identity at j={j}: {lhs} vs {rhs}"
            );
        }
        // ḡ decreasing while χ ≈ 1
        for j in 0..traj.j_stop {
            if traj.states[j].chi > 0.99 {
                assert!(traj.states[j + 1].gbar < traj.states[j].gbar);
                assert!(traj.states[j].gbar > 0.0);
            }
        }
    }

    #[test]
    fn backward_solution_satisfies_forward_recursion() {
        let t = table(1e-4, 2);
        let traj = critical_trajectory(&t, 0.03, &FlowOptions::default()).unwrap();
        let l2 = 4.0;
        for j in 0..traj.j_stop {
            let s = &traj.states[j];
            let s1 = &traj.states[j + 1];
            let set = &t.sets[j];
            let r = &t.resc[j];
            let z_fwd = s.zbar - set.theta * s.gbar * s.gbar;
            assert!((z_fwd - s1.zbar).abs() < 1e-12 * (1.0 + s1.zbar.abs()));
            let mu_fwd = l2 * s.mubar * (1.0 - set.gamma() * set.beta * s.gbar)
                + r.eta * s.gbar
                - r.xi * s.gbar * s.gbar
                - r.pi * s.gbar * s.zbar;
            assert!(
                (mu_fwd - s1.mubar).abs() < 1e-12 * (1.0 + s1.mubar.abs()),
                "μ̄ forward residual at j={j}"
            );
        }
    }

    #[test]
    fn trajectory_continuity_limit_g0_to_zero() {
        let t = table(1e-4, 1);
        let traj0 = critical_trajectory(&t, 0.0, &FlowOptions::default()).unwrap();
        assert_eq!(traj0.nu0c, 0.0);
        assert_eq!(traj0.z0c, 0.0);
        // ν₀ᶜ and z₀ᶜ scale linearly towards zero
        let a = critical_trajectory(&t, 0.02, &FlowOptions::default()).unwrap();
        let b = critical_trajectory(&t, 0.01, &FlowOptions::default()).unwrap();
        assert!((a.nu0c / b.nu0c - 2.0).abs() < 0.15, "{} {}", a.nu0c, b.nu0c);
        assert!(a.nu0c < 0.0, "ν₀ᶜ must be negative");
        assert!(critical_trajectory(&t, -0.1, &FlowOptions::default()).is_err());
    }

    #[test]
    fn tangent_product_telescopes() {
        let t = table(1e-5, 1);
        let traj = critical_trajectory(&t, 0.04, &FlowOptions::default()).unwrap();
        let tan = tangent_flow(&t, &traj);
        for j in [3usize, 10, 25] {
            if j > traj.j_stop {
                continue;
            }
            let log_direct = tan.mu_prime[j].ln();
            let mut log_sum = 2.0 * (j as f64) * 2.0f64.ln();
            for i in 0..j {
                log_sum +=
                    (1.0 - t.sets[i].gamma() * t.sets[i].beta * traj.states[i].gbar).ln();
            }
            assert!((log_direct - log_sum).abs() < 1e-10 * log_direct.abs().max(1.0));
        }
    }

    #[test]
    fn tangent_matches_finite_difference_of_forward_recursion() {
        // the μ̄-recursion is affine, so the centred difference is exact up
        // to roundoff
        let t = table(1e-4, 2);
        let traj = critical_trajectory(&t, 0.03, &FlowOptions::default()).unwrap();
        let tan = tangent_flow(&t, &traj);
        let l2 = 4.0;
        let h = 1e-6;
        let run = |mu0: f64| -> Vec<f64> {
            let mut mu = vec![mu0];
            for j in 0..traj.j_stop {
                let s = &traj.states[j];
                let set = &t.sets[j];
                let r = &t.resc[j];
                mu.push(
                    l2 * mu[j] * (1.0 - set.gamma() * set.beta * s.gbar) + r.eta * s.gbar
                        - r.xi * s.gbar * s.gbar
                        - r.pi * s.gbar * s.zbar,
                );
            }
            mu
        };
        let up = run(traj.states[0].mubar + h);
        let down = run(traj.states[0].mubar - h);
        for j in [2usize, 8, traj.j_stop.min(20)] {
            let fd = (up[j] - down[j]) / (2.0 * h);
            assert!(
                (fd - tan.mu_prime[j]).abs() < 1e-6 * tan.mu_prime[j].abs(),
                "fd {fd} vs exact {}",
                tan.mu_prime[j]
            );
        }
    }

    #[test]
    fn tangent_is_pure_power_without_beta() {
        // β ≡ 0 forces μ̄′_j = L^{2j} exactly
        let mut t = table(1e-4, 1);
        for s in t.sets.iter_mut() {
            s.beta = 0.0;
            s.theta = 0.0;
        }
        let traj = critical_trajectory(&t, 0.02, &FlowOptions::default()).unwrap();
        let tan = tangent_flow(&t, &traj);
        for j in 0..=traj.j_stop.min(15) {
            assert_eq!(tan.mu_prime[j], 4.0f64.powi(j as i32));
        }
    }

    #[test]
    fn second_tangent_identity_and_n_zero() {
        let t = table(1e-5, 3);
        let traj = critical_trajectory(&t, 0.04, &FlowOptions::default()).unwrap();
        let tan = tangent_flow(&t, &traj);
        let st = second_tangent(&t, &traj, &tan);
        // per-scale identity makes the two routes numerically identical
        assert!(
            (st.u_second_infty - st.beta_route).abs() < 1e-12 * st.beta_route.abs(),
            "{} vs {}",
            st.u_second_infty,
            st.beta_route
        );
        assert!(st.u_second_infty < 0.0);
        // n = 0: κ factor kills everything
        let t0 = table(1e-5, 0);
        let traj0 = critical_trajectory(&t0, 0.04, &FlowOptions::default()).unwrap();
        let tan0 = tangent_flow(&t0, &traj0);
        let st0 = second_tangent(&t0, &traj0, &tan0);
        assert_eq!(st0.u_second_infty, 0.0);
    }

    #[test]
    fn u_accumulation_bounds() {
        let t = table_with_u(1e-4, 1);
        let traj = critical_trajectory(&t, 0.05, &FlowOptions::default()).unwrap();
        let us = accumulate_u(&t, &traj).unwrap();
        // u_∞ = O(g₀): ratio stays bounded as g₀ shrinks
        let mut ratios = Vec::new();
        for &g0 in &[0.05, 0.025, 0.0125] {
            let tr = critical_trajectory(&t, g0, &FlowOptions::default()).unwrap();
            let u = accumulate_u(&t, &tr).unwrap();
            ratios.push(u.u_infty / g0);
        }
        let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            (max - min).abs() < 0.5 * max.abs().max(1e-12) + 1e-12,
            "u_∞/g₀ drifting: {ratios:?}"
        );
        // tail |u_∞ - u_j| ≤ const · L^{-4j} χ_j ḡ_j
        let mut consts = Vec::new();
        for j in 1..traj.j_stop.min(9) {
            let tail = (us.u_infty - us.u[j]).abs();
            let envelope =
                4.0f64.powi(-2 * j as i32) * traj.states[j].chi * traj.states[j].gbar;
            consts.push(tail / envelope);
        }
        let cmax = consts.iter().cloned().fold(0.0, f64::max);
        assert!(cmax < 10.0, "u tail constants {consts:?}");
        // n = 0 ⇒ u ≡ 0
        let t0 = table_with_u(1e-4, 0);
        let tr0 = critical_trajectory(&t0, 0.05, &FlowOptions::default()).unwrap();
        let u0 = accumulate_u(&t0, &tr0).unwrap();
        assert_eq!(u0.u_infty, 0.0);
    }

    #[test]
    fn envelope_ratio_bounded() {
        for &(m2, g0) in &[(1e-4, 0.05), (1e-6, 0.02), (1e-2, 0.08)] {
            let t = table(m2, 1);
            let traj = critical_trajectory(&t, g0, &FlowOptions::default()).unwrap();
            let max = traj
                .states
                .iter()
                .map(|s| s.envelope_ratio)
                .fold(0.0, f64::max);
            assert!(max < 3.0, "envelope at m²={m2}, g₀={g0}: {max}");
        }
    }

    #[test]
    fn prop_consistency_third_order() {
        let t = table(1e-3, 2);
        let j = 4;
        let base = CouplingVector::new(0.03, 0.0008, 0.015, 0.0, 0.0);
        let mut ratios = Vec::new();
        for &s in &[1.0, 0.5, 0.25] {
            let v = CouplingVector::new(s * base.g, s * base.nu, s * base.z, 0.0, 0.0);
            ratios.push(bar_consistency_ratio(&t, j, &v));
        }
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            max / min < 2.0,
            "third-order ratio varies too much: {ratios:?}"
        );
    }
}
