//! Physical observables from critical trajectories: the change of
//! variables `(g,ν) <-> (m², g₀, ν₀, z₀)`, the critical point, the
//! susceptibility with its logarithmic correction, the specific heat, the
//! pressure, and the Gaussian scaling-limit pairings.

use crate::coefficients::{coefficient_table, CoefficientTable};
use crate::fit::{self, LineFit};
use crate::flow::{
    accumulate_u, critical_trajectory, second_tangent, tangent_flow, FlowOptions, Trajectory,
};
use crate::heat::Engine;
use crate::lattice;
use crate::{Error, Result};
use serde::Serialize;

/// Driver for observable computations at fixed `(L, n)`.
pub struct Observables {
    engine: &'static Engine,
    pub l: u32,
    pub n: u32,
    pub opts: FlowOptions,
    /// reference mass for the internal critical-point anchor
    pub m2_ref: f64,
}

/// Entry of the change of variables at one mass: solves
/// `g₀ = g (1+z₀ᶜ(m²,g₀))²` and returns `ν = (ν₀ᶜ + m²)/(1+z₀ᶜ)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VariableMap {
    pub g: f64,
    pub m2: f64,
    pub g0: f64,
    pub z0: f64,
    pub nu0: f64,
    pub nu: f64,
    pub fixed_point_residual: f64,
}

impl Observables {
    pub fn new(l: u32, n: u32, j_grid: usize, nodes_per_panel: usize) -> Result<Self> {
        Ok(Observables {
            engine: Engine::shared(l, j_grid, nodes_per_panel)?,
            l,
            n,
            opts: FlowOptions::default(),
            m2_ref: 1e-16,
        })
    }

    pub fn table(&self, m2: f64, with_quartic: bool) -> Result<CoefficientTable> {
        coefficient_table(self.engine, m2, self.n, self.opts.j_cap + 1, with_quartic)
    }

    fn trajectory(&self, table: &CoefficientTable, g0: f64) -> Result<Trajectory> {
        critical_trajectory(table, g0, &self.opts)
    }

    /// Damped fixed point for `g₀` and the resulting map entry.
    pub fn solve_variable_map(&self, g: f64, m2: f64) -> Result<VariableMap> {
        if g < 0.0 || g > 0.2 {
            return Err(Error::InvalidParameter {
                name: "g",
                reason: format!("coupling must sit in [0, 0.2], got {g}"),
            });
        }
        if g == 0.0 {
            return Ok(VariableMap {
                g,
                m2,
                g0: 0.0,
                z0: 0.0,
                nu0: 0.0,
                nu: m2,
                fixed_point_residual: 0.0,
            });
        }
        let table = self.table(m2, false)?;
        let mut g0 = g;
        let mut traj = self.trajectory(&table, g0)?;
        let mut residual = f64::INFINITY;
        for _ in 0..60 {
            let next = g * (1.0 + traj.z0c) * (1.0 + traj.z0c);
            residual = (next - g0).abs();
            g0 = next;
            traj = self.trajectory(&table, g0)?;
            if residual < 1e-14 * g0 {
                break;
            }
        }
        if residual > 1e-12 * g0 {
            return Err(Error::NonConvergence {
                residual,
                iterations: 60,
            });
        }
        Ok(VariableMap {
            g,
            m2,
            g0,
            z0: traj.z0c,
            nu0: traj.nu0c,
            nu: (traj.nu0c + m2) / (1.0 + traj.z0c),
            fixed_point_residual: residual,
        })
    }

    /// Fixed frame for observable curves: the `g₀` fixed point is solved
    /// once at the reference mass and then held fixed along the curve.
    ///
    /// Refitting `g₀` at every mass (through `z₀ᶜ(m²)`) injects an
    /// `O(ḡ³)`-per-scale drift into `ν(m²) - ν_c` — the footprint of the
    /// dropped third-order/remainder terms — which would swamp ε below
    /// ~1e-7.  At fixed `g₀` the `z̄`-drift cancels against its π-channel
    /// transport into `μ̄₀` to a few times 1e-12 per decade of mass, and
    /// the implied physical coupling varies only by `O(g δz₀) ~ 1e-9`
    /// along the curve.
    pub fn frame(&self, g: f64) -> Result<CriticalFrame> {
        if g == 0.0 {
            return Ok(CriticalFrame {
                g,
                g0: 0.0,
                z0_ref: 0.0,
                nu_c: 0.0,
            });
        }
        let vm = self.solve_variable_map(g, self.m2_ref)?;
        Ok(CriticalFrame {
            g,
            g0: vm.g0,
            z0_ref: vm.z0,
            nu_c: vm.nu,
        })
    }

    /// Map entry at fixed `g₀` (frame-based curves).
    fn map_at_fixed_g0(&self, frame: &CriticalFrame, m2: f64) -> Result<VariableMap> {
        if frame.g == 0.0 {
            return Ok(VariableMap {
                g: 0.0,
                m2,
                g0: 0.0,
                z0: 0.0,
                nu0: 0.0,
                nu: m2,
                fixed_point_residual: 0.0,
            });
        }
        let table = self.table(m2, false)?;
        let traj = self.trajectory(&table, frame.g0)?;
        Ok(VariableMap {
            g: frame.g,
            m2,
            g0: frame.g0,
            z0: traj.z0c,
            nu0: traj.nu0c,
            nu: (traj.nu0c + m2) / (1.0 + traj.z0c),
            fixed_point_residual: 0.0,
        })
    }

    /// High-precision anchor for the critical point: `ν(m²_ref)` in the
    /// fixed-`g₀` frame.
    pub fn nu_c_reference(&self, g: f64) -> Result<f64> {
        Ok(self.frame(g)?.nu_c)
    }

    /// Critical point by extrapolation of `ν(m²)` in `1/log m⁻²`, with an
    /// error bar from the extrapolation order.
    pub fn critical_nu(&self, g: f64) -> Result<CriticalNu> {
        let masses: Vec<f64> = (0..8).map(|k| 1e-4 * 10.0f64.powi(-(k as i32))).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &m2 in &masses {
            let vm = self.solve_variable_map(g, m2)?;
            xs.push(1.0 / (1.0 / m2).ln());
            ys.push(vm.nu);
        }
        let (nu_c, err) = fit::richardson_extrapolate(&xs, &ys);
        let constants = lattice::FreeTheoryConstants::compute(self.n, 0.5)?;
        Ok(CriticalNu {
            g,
            nu_c,
            error_bar: err,
            slope_ratio: if g > 0.0 {
                nu_c / (-g) / constants.a
            } else {
                1.0
            },
            a: constants.a,
        })
    }

    /// Root-solve `ν(m²) = ν_c + ε` for `m²` in a fixed frame (monotone
    /// bisection on `log m²`).
    pub fn solve_mass(&self, frame: &CriticalFrame, eps: f64) -> Result<VariableMap> {
        if eps <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "eps",
                reason: "distance to the critical point must be positive".into(),
            });
        }
        if frame.g == 0.0 {
            return self.solve_variable_map(0.0, eps);
        }
        let target = frame.nu_c + eps;
        let mut lo = (self.m2_ref * 10.0).ln();
        let mut hi = 4.0f64.ln();
        let f_lo = self.map_at_fixed_g0(frame, lo.exp())?.nu - target;
        let f_hi = self.map_at_fixed_g0(frame, hi.exp())?.nu - target;
        if f_lo > 0.0 || f_hi < 0.0 {
            return Err(Error::Bracketing(format!(
                "ν(m²) - (ν_c + ε) has no sign change on the bracket: {f_lo:e}, {f_hi:e}"
            )));
        }
        let mut vm = None;
        for _ in 0..52 {
            let mid = 0.5 * (lo + hi);
            let v = self.map_at_fixed_g0(frame, mid.exp())?;
            if v.nu - target <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            vm = Some(v);
            if (hi - lo) < 1e-13 {
                break;
            }
        }
        vm.ok_or_else(|| Error::Bracketing("empty bracket".into()))
    }

    /// Susceptibility `χ(g, ν_c + ε) = (1 + z̃₀)/m̃²`.
    pub fn susceptibility(&self, frame: &CriticalFrame, eps: f64) -> Result<Susceptibility> {
        let vm = self.solve_mass(frame, eps)?;
        Ok(Susceptibility {
            eps,
            m2: vm.m2,
            chi: (1.0 + vm.z0) / vm.m2,
            map: vm,
        })
    }

    /// Susceptibility curve over an ε-grid with the log-log exponent fit.
    pub fn chi_curve(&self, g: f64, eps_grid: &[f64]) -> Result<ChiCurve> {
        let frame = self.frame(g)?;
        let nu_c = frame.nu_c;
        let mut rows = Vec::with_capacity(eps_grid.len());
        for &eps in eps_grid {
            rows.push(self.susceptibility(&frame, eps)?);
        }
        let xs: Vec<f64> = rows.iter().map(|r| (1.0 / r.eps).ln().ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| (r.chi * r.eps).ln()).collect();
        let w = vec![1.0; xs.len()];
        let fit = fit::weighted_line_fit(&xs, &ys, &w);
        let gamma = (self.n as f64 + 2.0) / (self.n as f64 + 8.0);
        // amplitude against (b g)^γ
        let b = (self.n as f64 + 8.0) / (16.0 * std::f64::consts::PI.powi(2));
        let amp = rows
            .last()
            .map(|r| r.chi * r.eps / (1.0 / r.eps).ln().powf(gamma))
            .unwrap_or(f64::NAN);
        // the log-log-in-ε slope reaches γ only once g₀𝖡 >> 1 (far beyond
        // any desk-scale window); in the crossover regime the curve obeys
        // χ·ε = (1 + z̃₀)(1 + g₀𝖡_{m̃²})^γ (1 + O(g)) instead
        let crossover_max_dev = rows
            .iter()
            .map(|r| {
                let bb = (self.n as f64 + 8.0) * lattice::bubble_heat(r.m2).unwrap();
                let predicted = (1.0 + r.map.z0) * (1.0 + r.map.g0 * bb).powf(gamma);
                (r.chi * r.eps / predicted - 1.0).abs()
            })
            .fold(0.0, f64::max);
        // the exponent itself is extracted from the tangent product along
        // the deepest trajectory: log μ̄′_j - 2j log L = γ log(ḡ_j/g₀) up
        // to O(ḡ) corrections
        let tangent_gamma = {
            let vm = rows.last().unwrap().map;
            let table = self.table(vm.m2, false)?;
            let traj = self.trajectory(&table, vm.g0)?;
            let tan = crate::flow::tangent_flow(&table, &traj);
            let j_end = traj
                .states
                .iter()
                .position(|s| s.chi < 0.999)
                .unwrap_or(traj.j_stop)
                .max(4);
            let xs: Vec<f64> = (1..j_end)
                .map(|j| (traj.states[j].gbar / vm.g0).ln())
                .collect();
            let ys: Vec<f64> = (1..j_end)
                .map(|j| tan.mu_prime[j].ln() - 2.0 * j as f64 * (self.l as f64).ln())
                .collect();
            let w = vec![1.0; xs.len()];
            fit::weighted_line_fit(&xs, &ys, &w)
        };
        Ok(ChiCurve {
            g,
            n: self.n,
            nu_c,
            exponent_fit: fit,
            crossover_max_dev,
            tangent_gamma,
            gamma,
            amplitude: amp,
            amplitude_target: (b * g).powf(gamma),
            rows,
        })
    }

    /// Numerical `dχ/dν` on the solved grid against the asymptotic
    /// identity `-(g𝖻)^{-γ} χ² (log χ)^{-γ}`.
    pub fn susceptibility_derivative_check(
        &self,
        g: f64,
        eps_grid: &[f64],
    ) -> Result<Vec<DerivativeCheck>> {
        let frame = self.frame(g)?;
        let rows: Vec<Susceptibility> = eps_grid
            .iter()
            .map(|&e| self.susceptibility(&frame, e))
            .collect::<Result<_>>()?;
        let gamma = (self.n as f64 + 2.0) / (self.n as f64 + 8.0);
        let b = (self.n as f64 + 8.0) / (16.0 * std::f64::consts::PI.powi(2));
        let mut out = Vec::new();
        for i in 1..rows.len().saturating_sub(1) {
            let dchi = (rows[i + 1].chi - rows[i - 1].chi) / (rows[i + 1].eps - rows[i - 1].eps);
            let chi = rows[i].chi;
            let predicted = if g > 0.0 {
                -(g * b).powf(-gamma) * chi * chi * chi.ln().powf(-gamma)
            } else {
                -chi * chi
            };
            out.push(DerivativeCheck {
                eps: rows[i].eps,
                dchi_dnu: dchi,
                predicted,
                deviation_factor: dchi / predicted,
            });
        }
        Ok(out)
    }

    /// Specific heat at one ε: primary value `-(1+z₀)² u″_∞` from the
    /// second-tangent flow, and the closed-form route through
    /// `Σ β_j ǧ_j^{2γ}`.
    pub fn specific_heat(&self, frame: &CriticalFrame, eps: f64) -> Result<SpecificHeat> {
        let g = frame.g;
        if g == 0.0 {
            let b = lattice::bubble_heat(eps)?;
            return Ok(SpecificHeat {
                eps,
                m2: eps,
                c_h: self.n as f64 * b,
                c_h_closed_form: self.n as f64 * b,
                c_h_crossover: self.n as f64 * b,
                c_hat: 1.0,
            });
        }
        let vm = self.solve_mass(frame, eps)?;
        let table = self.table(vm.m2, false)?;
        let traj = self.trajectory(&table, vm.g0)?;
        let tan = tangent_flow(&table, &traj);
        let st = second_tangent(&table, &traj, &tan);
        let one_z = 1.0 + vm.z0;
        let c_h = -one_z * one_z * st.u_second_infty;
        // closed form: fit the prefactor of ν̌′_j ~ ĉ (ǧ_j/g₀)^γ on the
        // plateau window, then sum β ǧ^{2γ}
        let gamma = (self.n as f64 + 2.0) / (self.n as f64 + 8.0);
        let j_fit_end = traj
            .states
            .iter()
            .position(|s| s.chi < 0.999)
            .unwrap_or(traj.j_stop)
            .saturating_sub(1)
            .max(1);
        let c_hat = {
            let j = j_fit_end.min(tan.nu_check_prime.len() - 1);
            tan.nu_check_prime[j] / (traj.states[j].gbar / vm.g0).powf(gamma)
        };
        let mut sum = 0.0;
        for j in 0..traj.j_stop {
            sum += table.sets[j].beta * (traj.states[j].gbar / vm.g0).powf(2.0 * gamma);
        }
        let nf = self.n as f64;
        let closed = one_z * one_z * c_hat * c_hat * nf / (2.0 * (nf + 8.0)) * sum;
        // analytic crossover form through the exact g-recursion integral:
        // Σ β ǧ^{2γ} ≈ [g₀^{2γ-1} − ǧ_∞^{2γ-1}]/(2γ-1) with
        // ǧ_∞ = g₀/(1 + g₀𝖡); unifies the n-trichotomy and reduces to the
        // (log)^{(4-n)/(n+8)}, log log, and bounded laws once g₀𝖡 >> 1
        let bb = (nf + 8.0) * lattice::bubble_heat(vm.m2)?;
        let predicted = {
            let x = 1.0 + vm.g0 * bb;
            let e = 2.0 * gamma - 1.0; // (n-4)/(n+8)
            let bracket = if e.abs() < 1e-12 {
                x.ln()
            } else {
                (1.0 - x.powf(-e)) / e
            };
            one_z * one_z * nf / (2.0 * (nf + 8.0)) * bracket / vm.g0
        };
        Ok(SpecificHeat {
            eps,
            m2: vm.m2,
            c_h,
            c_h_closed_form: closed,
            c_h_crossover: predicted,
            c_hat,
        })
    }

    /// Pressure and its ν-derivative at one ε.
    pub fn pressure(&self, frame: &CriticalFrame, eps: f64) -> Result<PressureReport> {
        let g = frame.g;
        let vm = self.solve_mass(frame, eps)?;
        let p_free = lattice::free_pressure(self.n, vm.m2)?;
        if g == 0.0 {
            let c0 = lattice::green_function_heat(vm.m2, [0, 0, 0, 0])?;
            return Ok(PressureReport {
                eps,
                m2: vm.m2,
                p: p_free,
                q: 0.0,
                u_infty: 0.0,
                dp_dnu: -0.5 * self.n as f64 * c0,
                half_n_green: 0.5 * self.n as f64 * c0,
                derivative_ratio: 1.0,
            });
        }
        let table = self.table(vm.m2, true)?;
        let traj = self.trajectory(&table, vm.g0)?;
        let useries = accumulate_u(&table, &traj)?;
        let tan = tangent_flow(&table, &traj);
        let one_z = 1.0 + vm.z0;
        let q = 0.5 * self.n as f64 * one_z.ln() - useries.u_infty;
        let dp_dnu = -one_z * tan.u_prime_infty;
        let chi = one_z / vm.m2;
        let half_n_green =
            0.5 * self.n as f64 * lattice::green_function_heat(1.0 / chi, [0, 0, 0, 0])?;
        Ok(PressureReport {
            eps,
            m2: vm.m2,
            p: p_free + q,
            q,
            u_infty: useries.u_infty,
            dp_dnu,
            half_n_green,
            derivative_ratio: dp_dnu.abs() / half_n_green,
        })
    }

    /// Gaussian pairing of Theorem-style scaling limits:
    /// `m_N² Σ_l |ĥ(l)|² / (λ(L^{-N} l) + m_N²)` for a test function given
    /// by finitely many Fourier modes, evaluated spectrally.
    pub fn scaling_limit_pairing(
        &self,
        frame: &CriticalFrame,
        modes: &[([i64; 4], f64)],
        n_scale: usize,
        eps_n: f64,
    ) -> Result<PairingReport> {
        if modes.is_empty() {
            return Err(Error::InvalidParameter {
                name: "modes",
                reason: "test function needs at least one Fourier mode".into(),
            });
        }
        let vm = self.solve_mass(frame, eps_n)?;
        let l_pow = (self.l as f64).powi(n_scale as i32);
        if (modes.iter().map(|(l, _)| l.iter().map(|v| v.abs()).max().unwrap()).max())
            .unwrap() as f64
            > l_pow / 2.0
        {
            return Err(Error::InvalidParameter {
                name: "n_scale",
                reason: "torus too small for the requested Fourier modes".into(),
            });
        }
        let m_n2 = vm.m2;
        let mut pairing = 0.0;
        let mut h_norm2 = 0.0;
        let mut continuum = 0.0;
        let m_inv2 = (1.0 + vm.z0) / (vm.m2 * l_pow * l_pow); // χ^{(N)} L^{-2N} ≈ ρ/m²
        for &(l, amp) in modes {
            let lambda: f64 = l
                .iter()
                .map(|&la| {
                    let s = (std::f64::consts::PI * la as f64 / l_pow).sin();
                    4.0 * s * s
                })
                .sum();
            pairing += amp * amp * m_n2 / (lambda + m_n2);
            h_norm2 += amp * amp;
            let l2: f64 = l.iter().map(|&la| (la * la) as f64).sum();
            continuum += amp * amp
                / (4.0 * std::f64::consts::PI.powi(2) * m_inv2 * l2 / (1.0 + vm.z0) + 1.0);
        }
        let chi_l2n = (1.0 + vm.z0) / vm.m2 / (l_pow * l_pow);
        Ok(PairingReport {
            n_scale,
            eps_n,
            m_n2,
            chi_l2n,
            pairing,
            white_noise_target: h_norm2,
            gff_target: continuum,
            regime: if chi_l2n < 0.05 {
                Regime::WhiteNoise
            } else {
                Regime::MassiveFreeField
            },
        })
    }

    /// Fit of `m̃²(g,ε) ~ c_g ε (log ε⁻¹)^{-γ}`.
    pub fn mass_epsilon_asymptote(&self, g: f64, eps_grid: &[f64]) -> Result<MassAsymptote> {
        let frame = self.frame(g)?;
        let gamma = (self.n as f64 + 2.0) / (self.n as f64 + 8.0);
        let mut ratios = Vec::new();
        let mut z0_last = 0.0;
        for &eps in eps_grid {
            let vm = self.solve_mass(&frame, eps)?;
            ratios.push(vm.m2 / (eps * (1.0 / eps).ln().powf(-gamma)));
            z0_last = vm.z0;
        }
        let drift = fit::plateau_drift(&ratios, 0.6);
        let c_g = *ratios.last().unwrap();
        Ok(MassAsymptote {
            g,
            gamma,
            c_g,
            drift,
            z0_at_zero: z0_last,
            ratios,
        })
    }
}

/// Fixed-`g₀` frame used for observable curves; see
/// [`Observables::frame`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriticalFrame {
    pub g: f64,
    pub g0: f64,
    pub z0_ref: f64,
    pub nu_c: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalNu {
    pub g: f64,
    pub nu_c: f64,
    pub error_bar: f64,
    /// `ν_c/(-g)` divided by `a = (n+2)(-Δ)⁻¹₀,₀`
    pub slope_ratio: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Susceptibility {
    pub eps: f64,
    pub m2: f64,
    pub chi: f64,
    pub map: VariableMap,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChiCurve {
    pub g: f64,
    pub n: u32,
    pub nu_c: f64,
    /// slope of `log(χ·ε)` against `log log(1/ε)`
    pub exponent_fit: LineFit,
    /// max deviation of `χ·ε` from `(1+z̃₀)(1+g₀𝖡_{m̃²})^γ` over the grid
    pub crossover_max_dev: f64,
    /// slope of `log μ̄′_j - 2j log L` against `log(ḡ_j/g₀)`; the
    /// logarithmic-correction exponent as carried by the tangent flow
    pub tangent_gamma: LineFit,
    pub gamma: f64,
    pub amplitude: f64,
    pub amplitude_target: f64,
    pub rows: Vec<Susceptibility>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    pub eps: f64,
    pub dchi_dnu: f64,
    pub predicted: f64,
    pub deviation_factor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecificHeat {
    pub eps: f64,
    pub m2: f64,
    /// `-(1+z₀)² u″_∞`
    pub c_h: f64,
    /// closed-form route `(1+z₀)² ĉ² n/(2(n+8)) Σ β ǧ^{2γ} / g₀^{2γ}`
    pub c_h_closed_form: f64,
    /// analytic crossover prediction from the exact g-recursion integral
    pub c_h_crossover: f64,
    /// fitted prefactor of `ν̌′_j/(ǧ_j/g₀)^γ`
    pub c_hat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PressureReport {
    pub eps: f64,
    pub m2: f64,
    pub p: f64,
    pub q: f64,
    pub u_infty: f64,
    pub dp_dnu: f64,
    /// `(n/2) C_{1/χ}(0)` for the magnitude comparison
    pub half_n_green: f64,
    pub derivative_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    WhiteNoise,
    MassiveFreeField,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairingReport {
    pub n_scale: usize,
    pub eps_n: f64,
    pub m_n2: f64,
    /// `χ^{(N)} L^{-2N}`, the regime discriminator
    pub chi_l2n: f64,
    pub pairing: f64,
    pub white_noise_target: f64,
    pub gff_target: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, Serialize)]
pub struct MassAsymptote {
    pub g: f64,
    pub gamma: f64,
    pub c_g: f64,
    pub drift: f64,
    pub z0_at_zero: f64,
    pub ratios: Vec<f64>,
}

/// Geometric ε-grid from `hi` down to `lo` with `per_decade` points.
pub fn eps_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let count = (decades * per_decade as f64).ceil() as usize + 1;
    (0..count)
        .map(|i| hi * (lo / hi).powf(i as f64 / (count - 1) as f64))
        .collect()
}
