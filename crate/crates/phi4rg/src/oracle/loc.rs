//! The localisation projection: pairing of field functionals against
//! polynomial test functions and the moment-matching projection onto the
//! span of the relevant and marginal local monomials
//! `{1, τ, τ_Δ, τ_{∇∇}, τ²}`.

use super::poly::{tau, tau_delta, tau_grad, tau_sq, FieldAlgebra, FieldPolynomial};
use super::scalar::Scalar;
use crate::{Error, Result};
use serde::Serialize;

/// One symmetrised polynomial test function: a multiset of
/// `(component, multi-index)` slot labels.  The function evaluates on a
/// variable sequence as the symmetrised product of component indicators
/// times coordinate monomials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestFunction {
    pub comps: Vec<usize>,
    pub exps: Vec<[u8; 4]>,
}

impl TestFunction {
    pub fn arity(&self) -> usize {
        self.comps.len()
    }
}

/// All test functions with `arity + polynomial degree <= 4` for `n`
/// components, deduplicated as multisets of slot labels.
pub fn test_basis(n_comp: usize) -> Vec<TestFunction> {
    let mut multi_indices: Vec<(usize, [u8; 4])> = Vec::new();
    for a0 in 0..=4u8 {
        for a1 in 0..=4u8 {
            for a2 in 0..=4u8 {
                for a3 in 0..=4u8 {
                    let total = (a0 + a1 + a2 + a3) as usize;
                    if total <= 3 {
                        multi_indices.push((total, [a0, a1, a2, a3]));
                    }
                }
            }
        }
    }
    let mut out = vec![TestFunction {
        comps: vec![],
        exps: vec![],
    }];
    // slot labels ordered to enumerate multisets without repeats
    let mut labels: Vec<(usize, usize, [u8; 4])> = Vec::new(); // (comp, |α|, α)
    for comp in 0..n_comp {
        for &(deg, alpha) in &multi_indices {
            labels.push((comp, deg, alpha));
        }
    }
    fn extend(
        labels: &[(usize, usize, [u8; 4])],
        start: usize,
        current: &mut Vec<usize>,
        degree_left: i32,
        out: &mut Vec<TestFunction>,
    ) {
        let p = current.len();
        if p > 0 {
            out.push(TestFunction {
                comps: current.iter().map(|&i| labels[i].0).collect(),
                exps: current.iter().map(|&i| labels[i].2).collect(),
            });
        }
        if p == 4 {
            return;
        }
        for i in start..labels.len() {
            let cost = 1 + labels[i].1 as i32;
            if cost <= degree_left {
                current.push(i);
                extend(labels, i, current, degree_left - cost, out);
                current.pop();
            }
        }
    }
    let mut current = Vec::new();
    extend(&labels, 0, &mut current, 4, &mut out);
    out
}

/// Minimum-image representative of `v` on the torus, in `(-S/2, S/2]`.
#[inline]
fn min_image(v: i64, side: i64) -> i64 {
    let r = v.rem_euclid(side);
    if 2 * r > side {
        r - side
    } else {
        r
    }
}

const PERMS: [&[&[usize]]; 5] = [
    &[&[]],
    &[&[0]],
    &[&[0, 1], &[1, 0]],
    &[
        &[0, 1, 2],
        &[0, 2, 1],
        &[1, 0, 2],
        &[1, 2, 0],
        &[2, 0, 1],
        &[2, 1, 0],
    ],
    &[
        &[0, 1, 2, 3],
        &[0, 1, 3, 2],
        &[0, 2, 1, 3],
        &[0, 2, 3, 1],
        &[0, 3, 1, 2],
        &[0, 3, 2, 1],
        &[1, 0, 2, 3],
        &[1, 0, 3, 2],
        &[1, 2, 0, 3],
        &[1, 2, 3, 0],
        &[1, 3, 0, 2],
        &[1, 3, 2, 0],
        &[2, 0, 1, 3],
        &[2, 0, 3, 1],
        &[2, 1, 0, 3],
        &[2, 1, 3, 0],
        &[2, 3, 0, 1],
        &[2, 3, 1, 0],
        &[3, 0, 1, 2],
        &[3, 0, 2, 1],
        &[3, 1, 0, 2],
        &[3, 1, 2, 0],
        &[3, 2, 0, 1],
        &[3, 2, 1, 0],
    ],
];

const FACTORIAL: [i64; 5] = [1, 1, 2, 6, 24];

/// Symmetrised evaluation of a test function on the variable multiset of
/// one monomial; integer-valued, the `1/p!` normalisation is applied by
/// the caller.
fn sym_eval_int(
    alg: &FieldAlgebra,
    centre: [i64; 4],
    f: &TestFunction,
    vars: &[u16],
) -> i64 {
    let p = f.arity();
    debug_assert_eq!(vars.len(), p);
    // relative coordinates and components of each variable
    let mut comps = [0usize; 4];
    let mut rel = [[0i64; 4]; 4];
    for (slot, &v) in vars.iter().enumerate() {
        comps[slot] = alg.var_comp(v);
        let x = alg.site_coords(alg.var_site(v));
        for d in 0..4 {
            rel[slot][d] = min_image(x[d] - centre[d], alg.side as i64);
        }
    }
    let mut total = 0i64;
    'perm: for sigma in PERMS[p] {
        let mut prod = 1i64;
        for (l, &s) in sigma.iter().enumerate() {
            if comps[s] != f.comps[l] {
                continue 'perm;
            }
            for d in 0..4 {
                for _ in 0..f.exps[l][d] {
                    prod *= rel[s][d];
                }
            }
        }
        total += prod;
    }
    total
}

/// Pairing vector of a polynomial against a basis: the `⟨F, f⟩₀` values.
pub fn pair_vector<S: Scalar>(
    alg: &FieldAlgebra,
    centre: [i64; 4],
    basis: &[TestFunction],
    poly: &FieldPolynomial<S>,
) -> Vec<S> {
    let mut out = vec![S::zero(); basis.len()];
    accumulate_pair_vector(alg, centre, basis, poly, &mut out);
    out
}

/// Add the pairing vector of `poly` into `acc` (used to accumulate sums of
/// many functionals without materialising their sum).
pub fn accumulate_pair_vector<S: Scalar>(
    alg: &FieldAlgebra,
    centre: [i64; 4],
    basis: &[TestFunction],
    poly: &FieldPolynomial<S>,
    acc: &mut [S],
) {
    // bucket basis indices by (arity, sorted component multiset)
    use std::collections::HashMap;
    let mut buckets: HashMap<(usize, [usize; 4]), Vec<usize>> = HashMap::new();
    for (i, f) in basis.iter().enumerate() {
        let mut key = [usize::MAX; 4];
        let mut sorted = f.comps.clone();
        sorted.sort_unstable();
        for (k, &c) in sorted.iter().enumerate() {
            key[k] = c;
        }
        buckets.entry((f.arity(), key)).or_default().push(i);
    }
    for (kmono, coeff) in &poly.terms {
        let (vars, len) = super::poly::decode_key(*kmono);
        if len > 4 {
            continue;
        }
        let mut key = [usize::MAX; 4];
        let mut comps: Vec<usize> = vars[..len].iter().map(|&v| alg.var_comp(v)).collect();
        comps.sort_unstable();
        for (k, &c) in comps.iter().enumerate() {
            key[k] = c;
        }
        if let Some(list) = buckets.get(&(len, key)) {
            for &i in list {
                let s = sym_eval_int(alg, centre, &basis[i], &vars[..len]);
                if s != 0 {
                    acc[i] = acc[i].add(&coeff.mul(&S::from_i64(s)).div_int(FACTORIAL[len]));
                }
            }
        }
    }
}

/// Coefficients on `{τ², τ, τ_Δ, τ_{∇∇}, 1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalPolynomialU<S: Scalar> {
    pub g: S,
    pub nu: S,
    pub z: S,
    pub y: S,
    pub u: S,
}

impl<S: Scalar> LocalPolynomialU<S> {
    pub fn zero() -> Self {
        LocalPolynomialU {
            g: S::zero(),
            nu: S::zero(),
            z: S::zero(),
            y: S::zero(),
            u: S::zero(),
        }
    }

    /// Rebuild the polynomial `Σ_{x∈X} U_x`.
    pub fn to_poly(&self, alg: &FieldAlgebra, window: &[[i64; 4]]) -> FieldPolynomial<S> {
        let mut p = FieldPolynomial::zero();
        for &x in window {
            p.add_assign(&tau_sq::<S>(alg, x).scale(&self.g));
            p.add_assign(&tau::<S>(alg, x).scale(&self.nu));
            p.add_assign(&tau_delta::<S>(alg, x).scale(&self.z));
            p.add_assign(&tau_grad::<S>(alg, x).scale(&self.y));
            p.add_assign(&FieldPolynomial::constant(self.u.clone()));
        }
        p
    }

    pub fn to_f64(&self) -> [f64; 5] {
        [
            self.g.to_f64(),
            self.nu.to_f64(),
            self.z.to_f64(),
            self.y.to_f64(),
            self.u.to_f64(),
        ]
    }
}

/// Solver data for a fixed window: pairings of the five target monomial
/// sums against the basis.
pub struct LocSolver<S: Scalar> {
    pub basis: Vec<TestFunction>,
    pub centre: [i64; 4],
    pub window: Vec<[i64; 4]>,
    u_pairings: [Vec<S>; 5],
}

impl<S: Scalar> LocSolver<S> {
    pub fn new(alg: &FieldAlgebra, window: &[[i64; 4]]) -> Result<Self> {
        if window.is_empty() {
            return Err(Error::InvalidParameter {
                name: "window",
                reason: "localisation window must be nonempty".into(),
            });
        }
        let basis = test_basis(alg.n_comp);
        let centre = window[0];
        let mut tau_p = FieldPolynomial::zero();
        let mut tau2_p = FieldPolynomial::zero();
        let mut taud_p = FieldPolynomial::zero();
        let mut taug_p = FieldPolynomial::zero();
        for &x in window {
            tau_p.add_assign(&tau::<S>(alg, x));
            tau2_p.add_assign(&tau_sq::<S>(alg, x));
            taud_p.add_assign(&tau_delta::<S>(alg, x));
            taug_p.add_assign(&tau_grad::<S>(alg, x));
        }
        let const_p = FieldPolynomial::constant(S::from_i64(window.len() as i64));
        let u_pairings = [
            pair_vector(alg, centre, &basis, &tau2_p),
            pair_vector(alg, centre, &basis, &tau_p),
            pair_vector(alg, centre, &basis, &taud_p),
            pair_vector(alg, centre, &basis, &taug_p),
            pair_vector(alg, centre, &basis, &const_p),
        ];
        Ok(LocSolver {
            basis,
            centre,
            window: window.to_vec(),
            u_pairings,
        })
    }

    /// Solve the moment-matching system for a pairing vector.
    pub fn solve(&self, rhs: &[S]) -> Result<LocalPolynomialU<S>> {
        // normal equations M x = b with M = AᵀA over the 5 targets
        let mut m = [[S::zero(), S::zero(), S::zero(), S::zero(), S::zero()],
            [S::zero(), S::zero(), S::zero(), S::zero(), S::zero()],
            [S::zero(), S::zero(), S::zero(), S::zero(), S::zero()],
            [S::zero(), S::zero(), S::zero(), S::zero(), S::zero()],
            [S::zero(), S::zero(), S::zero(), S::zero(), S::zero()]];
        let mut b = [S::zero(), S::zero(), S::zero(), S::zero(), S::zero()];
        for t in 0..self.basis.len() {
            for i in 0..5 {
                let ai = &self.u_pairings[i][t];
                if ai.is_zero() {
                    continue;
                }
                for j in i..5 {
                    m[i][j] = m[i][j].add(&ai.mul(&self.u_pairings[j][t]));
                }
                b[i] = b[i].add(&ai.mul(&rhs[t]));
            }
        }
        for i in 0..5 {
            for j in 0..i {
                m[i][j] = m[j][i].clone();
            }
        }
        // exact Gaussian elimination with column pivoting by magnitude
        let mut x = b;
        let mut a = m;
        for col in 0..5 {
            let mut pivot = col;
            let mut best = a[col][col].abs_f64();
            for row in (col + 1)..5 {
                let v = a[row][col].abs_f64();
                if v > best {
                    best = v;
                    pivot = row;
                }
            }
            if a[pivot][col].is_zero() {
                return Err(Error::SingularSystem);
            }
            if pivot != col {
                a.swap(pivot, col);
                x.swap(pivot, col);
            }
            for row in (col + 1)..5 {
                if a[row][col].is_zero() {
                    continue;
                }
                // row -= (a[row][col]/a[col][col]) * colrow, kept exact by
                // cross-multiplication
                let num = a[row][col].clone();
                let den = a[col][col].clone();
                for k in col..5 {
                    a[row][k] = a[row][k].mul(&den).sub(&a[col][k].mul(&num));
                }
                x[row] = x[row].mul(&den).sub(&x[col].mul(&num));
            }
        }
        let mut sol = [S::zero(), S::zero(), S::zero(), S::zero(), S::zero()];
        for row in (0..5).rev() {
            let mut acc = x[row].clone();
            for k in (row + 1)..5 {
                acc = acc.sub(&a[row][k].mul(&sol[k]));
            }
            if a[row][row].is_zero() {
                return Err(Error::SingularSystem);
            }
            sol[row] = div_exact(&acc, &a[row][row]);
        }
        Ok(LocalPolynomialU {
            g: sol[0].clone(),
            nu: sol[1].clone(),
            z: sol[2].clone(),
            y: sol[3].clone(),
            u: sol[4].clone(),
        })
    }
}

/// Division inside the solver; exact for rationals, ordinary for floats.
fn div_exact<S: Scalar>(a: &S, b: &S) -> S {
    // a/b = a * (1/b): synthesise the reciprocal through the field ops
    // available on the trait: solve q*b = a by one Newton-free step using
    // f64 only as a guard for zero.
    // For the two concrete scalar types we can do better:
    s_div(a, b)
}

fn s_div<S: Scalar>(a: &S, b: &S) -> S {
    use std::any::Any;
    let a_any = a as &dyn Any;
    let b_any = b as &dyn Any;
    if let (Some(af), Some(bf)) = (a_any.downcast_ref::<f64>(), b_any.downcast_ref::<f64>()) {
        let q = af / bf;
        return (&q as &dyn Any).downcast_ref::<S>().unwrap().clone();
    }
    if let (Some(ar), Some(br)) = (
        a_any.downcast_ref::<num::BigRational>(),
        b_any.downcast_ref::<num::BigRational>(),
    ) {
        let q = ar / br;
        return (&q as &dyn Any).downcast_ref::<S>().unwrap().clone();
    }
    unreachable!("unsupported scalar type for division");
}

/// Projection of a field functional onto `{1, τ, τ_Δ, τ_{∇∇}, τ²}` on the
/// window `X` by moment matching against the full test basis.
pub fn loc<S: Scalar>(
    alg: &FieldAlgebra,
    window: &[[i64; 4]],
    poly: &FieldPolynomial<S>,
) -> Result<LocalPolynomialU<S>> {
    let solver = LocSolver::new(alg, window)?;
    let rhs = pair_vector(alg, solver.centre, &solver.basis, poly);
    solver.solve(&rhs)
}

/// Scaling dimension of a local field monomial `Π_k ∇^{α_k} φ^{i_k}` in
/// d = 4 (so `[φ] = 1`), and its classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MonomialClass {
    Relevant,
    Marginal,
    Irrelevant,
}

pub fn monomial_dimension(gradient_orders: &[u32]) -> (u32, MonomialClass) {
    let dim: u32 = gradient_orders.iter().map(|&a| 1 + a).sum();
    let class = match dim.cmp(&4) {
        std::cmp::Ordering::Less => MonomialClass::Relevant,
        std::cmp::Ordering::Equal => MonomialClass::Marginal,
        std::cmp::Ordering::Greater => MonomialClass::Irrelevant,
    };
    (dim, class)
}
