//! Exact sparse multivariate polynomials in the field components
//! `φ_x^i` on a small torus, with the Gaussian heat operator `ℒ_C`, its
//! exponential (Wick calculus) and the pairing functional `F_w`.

use super::scalar::Scalar;
use super::SmallKernel;
use crate::{Error, Result};
use std::collections::BTreeMap;

/// Context of the field algebra: torus side, number of components and the
/// total degree bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldAlgebra {
    pub side: usize,
    pub n_comp: usize,
    pub degree_bound: usize,
}

pub const MAX_DEGREE: usize = 8;

impl FieldAlgebra {
    pub fn new(side: usize, n_comp: usize) -> Result<Self> {
        if side < 2 || side > 9 || n_comp == 0 || n_comp > 6 {
            return Err(Error::InvalidParameter {
                name: "side",
                reason: format!("field algebra limited to sides 2..=9 and 1..=6 components, got side {side}, n {n_comp}"),
            });
        }
        Ok(FieldAlgebra {
            side,
            n_comp,
            degree_bound: MAX_DEGREE,
        })
    }

    #[inline]
    pub fn site(&self, x: [i64; 4]) -> usize {
        let s = self.side as i64;
        let w = |v: i64| v.rem_euclid(s) as usize;
        ((w(x[0]) * self.side + w(x[1])) * self.side + w(x[2])) * self.side + w(x[3])
    }

    #[inline]
    pub fn var(&self, x: [i64; 4], comp: usize) -> u16 {
        (self.site(x) * self.n_comp + comp) as u16
    }

    #[inline]
    pub fn var_site(&self, var: u16) -> usize {
        var as usize / self.n_comp
    }

    #[inline]
    pub fn var_comp(&self, var: u16) -> usize {
        var as usize % self.n_comp
    }

    pub fn site_coords(&self, site: usize) -> [i64; 4] {
        let s = self.side;
        [
            (site / (s * s * s)) as i64,
            (site / (s * s) % s) as i64,
            (site / s % s) as i64,
            (site % s) as i64,
        ]
    }
}

const EMPTY_SLOT: u16 = u16::MAX;

/// Monomials are up to eight variable ids packed into a `u128`, sorted
/// ascending with empty slots at the top; the constant monomial is all
/// empty slots.
#[inline]
fn encode(vars: &[u16]) -> u128 {
    debug_assert!(vars.len() <= MAX_DEGREE);
    let mut key: u128 = 0;
    for slot in 0..MAX_DEGREE {
        let v = if slot < vars.len() {
            vars[slot]
        } else {
            EMPTY_SLOT
        };
        key |= (v as u128) << (16 * slot);
    }
    key
}

/// Decode a packed monomial key into its variable list.
#[inline]
pub fn decode_key(key: u128) -> ([u16; MAX_DEGREE], usize) {
    decode(key)
}

#[inline]
fn decode(key: u128) -> ([u16; MAX_DEGREE], usize) {
    let mut vars = [EMPTY_SLOT; MAX_DEGREE];
    let mut len = 0;
    for (slot, v) in vars.iter_mut().enumerate() {
        let raw = ((key >> (16 * slot)) & 0xFFFF) as u16;
        *v = raw;
        if raw != EMPTY_SLOT {
            len += 1;
        }
    }
    (vars, len)
}

/// Sparse field polynomial over scalars `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPolynomial<S: Scalar> {
    pub terms: BTreeMap<u128, S>,
}

impl<S: Scalar> Default for FieldPolynomial<S> {
    fn default() -> Self {
        FieldPolynomial {
            terms: BTreeMap::new(),
        }
    }
}

impl<S: Scalar> FieldPolynomial<S> {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: S) -> Self {
        let mut p = Self::zero();
        p.add_term(&[], c);
        p
    }

    pub fn variable(var: u16) -> Self {
        let mut p = Self::zero();
        p.add_term(&[var], S::one());
        p
    }

    pub fn add_term(&mut self, vars: &[u16], coeff: S) {
        if coeff.is_zero() {
            return;
        }
        let mut sorted: Vec<u16> = vars.to_vec();
        sorted.sort_unstable();
        let key = encode(&sorted);
        let entry = self.terms.entry(key).or_insert_with(S::zero);
        *entry = entry.add(&coeff);
        if entry.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (k, c) in &other.terms {
            let entry = self.terms.entry(*k).or_insert_with(S::zero);
            *entry = entry.add(c);
            if entry.is_zero() {
                self.terms.remove(k);
            }
        }
    }

    pub fn sub_assign(&mut self, other: &Self) {
        for (k, c) in &other.terms {
            let entry = self.terms.entry(*k).or_insert_with(S::zero);
            *entry = entry.sub(c);
            if entry.is_zero() {
                self.terms.remove(k);
            }
        }
    }

    pub fn scale(&self, c: &S) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        FieldPolynomial {
            terms: self
                .terms
                .iter()
                .map(|(k, v)| (*k, v.mul(c)))
                .collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|k| decode(*k).1).max().unwrap_or(0)
    }

    /// Value at `φ = 0`: the constant coefficient.
    pub fn eval_zero(&self) -> S {
        self.terms
            .get(&encode(&[]))
            .cloned()
            .unwrap_or_else(S::zero)
    }

    pub fn mul(&self, other: &Self, bound: usize) -> Result<Self> {
        let mut out = Self::zero();
        for (ka, ca) in &self.terms {
            let (va, la) = decode(*ka);
            for (kb, cb) in &other.terms {
                let (vb, lb) = decode(*kb);
                if la + lb > bound {
                    return Err(Error::DegreeOverflow {
                        degree: la + lb,
                        bound,
                    });
                }
                let mut merged = [0u16; MAX_DEGREE];
                let (mut i, mut j, mut m) = (0, 0, 0);
                while i < la && j < lb {
                    if va[i] <= vb[j] {
                        merged[m] = va[i];
                        i += 1;
                    } else {
                        merged[m] = vb[j];
                        j += 1;
                    }
                    m += 1;
                }
                while i < la {
                    merged[m] = va[i];
                    i += 1;
                    m += 1;
                }
                while j < lb {
                    merged[m] = vb[j];
                    j += 1;
                    m += 1;
                }
                let coeff = ca.mul(cb);
                if coeff.is_zero() {
                    continue;
                }
                let key = encode(&merged[..m]);
                let entry = out.terms.entry(key).or_insert_with(S::zero);
                *entry = entry.add(&coeff);
                if entry.is_zero() {
                    out.terms.remove(&key);
                }
            }
        }
        Ok(out)
    }

    /// Partial derivative with respect to a variable.
    pub fn derivative(&self, var: u16) -> Self {
        let mut out = Self::zero();
        for (k, c) in &self.terms {
            let (vars, len) = decode(*k);
            let mult = vars[..len].iter().filter(|&&v| v == var).count();
            if mult == 0 {
                continue;
            }
            let mut rest = Vec::with_capacity(len - 1);
            let mut removed = false;
            for &v in &vars[..len] {
                if v == var && !removed {
                    removed = true;
                } else {
                    rest.push(v);
                }
            }
            out.add_term(&rest, c.mul(&S::from_i64(mult as i64)));
        }
        out
    }
}

/// The heat generator of the Gaussian convolution,
/// `ℒ_C = ½ Σ_i Σ_{u,v} C_{u,v} ∂²/∂φ_u^i ∂φ_v^i`, applied to a
/// polynomial; the degree drops by two.
///
/// The normalisation is fixed by `E_C θ A = e^{ℒ_C} A`
/// (so `e^{ℒ_C} φ_x φ_y = φ_x φ_y + C_{x,y}`) and by consistency of the
/// two `F_w` routes; it also reproduces `ν⁺ = ν + η′g` with
/// `η′ = (n+2)C_{0,0}` from the τ-coefficient of `e^{ℒ_C}(g τ²)`.
pub fn laplacian_action<S: Scalar>(
    alg: &FieldAlgebra,
    c: &SmallKernel<S>,
    p: &FieldPolynomial<S>,
) -> FieldPolynomial<S> {
    let mut out = FieldPolynomial::zero();
    for (k, coeff) in &p.terms {
        let (vars, len) = decode(*k);
        if len < 2 {
            continue;
        }
        // unordered slot pairs with equal components; the two orderings of
        // (u,v) cancel the ½
        for a in 0..len {
            for b in (a + 1)..len {
                if alg.var_comp(vars[a]) != alg.var_comp(vars[b]) {
                    continue;
                }
                let xa = alg.site_coords(alg.var_site(vars[a]));
                let xb = alg.site_coords(alg.var_site(vars[b]));
                let cv = c.value(alg, [
                    xa[0] - xb[0],
                    xa[1] - xb[1],
                    xa[2] - xb[2],
                    xa[3] - xb[3],
                ]);
                if cv.is_zero() {
                    continue;
                }
                let mut rest = Vec::with_capacity(len - 2);
                for (slot, &v) in vars[..len].iter().enumerate() {
                    if slot != a && slot != b {
                        rest.push(v);
                    }
                }
                out.add_term(&rest, coeff.mul(&cv));
            }
        }
    }
    out
}

/// `e^{ℒ_C} P` as the exact finite series `Σ_k ℒ^k P / k!`.
pub fn wick_expectation<S: Scalar>(
    alg: &FieldAlgebra,
    c: &SmallKernel<S>,
    p: &FieldPolynomial<S>,
) -> FieldPolynomial<S> {
    let mut out = p.clone();
    let mut term = p.clone();
    let mut k = 1i64;
    loop {
        term = laplacian_action(alg, c, &term);
        if term.terms.is_empty() {
            break;
        }
        term = FieldPolynomial {
            terms: term
                .terms
                .into_iter()
                .map(|(key, v)| (key, v.div_int(k)))
                .collect(),
        };
        out.add_assign(&term);
        k += 1;
    }
    out
}

/// `e^{-ℒ_C} P` (Wick ordering): the same series with the negated kernel.
pub fn wick_inverse<S: Scalar>(
    alg: &FieldAlgebra,
    c: &SmallKernel<S>,
    p: &FieldPolynomial<S>,
) -> FieldPolynomial<S> {
    wick_expectation(alg, &c.negated(), p)
}

/// `F_w(A,B) = e^{ℒ_w}((e^{-ℒ_w}A)(e^{-ℒ_w}B)) - AB`, the conjugation
/// route.
pub fn f_w_conjugation<S: Scalar>(
    alg: &FieldAlgebra,
    w: &SmallKernel<S>,
    a: &FieldPolynomial<S>,
    b: &FieldPolynomial<S>,
) -> Result<FieldPolynomial<S>> {
    let wa = wick_inverse(alg, w, a);
    let wb = wick_inverse(alg, w, b);
    let prod = wa.mul(&wb, alg.degree_bound)?;
    let mut out = wick_expectation(alg, w, &prod);
    out.sub_assign(&a.mul(b, alg.degree_bound)?);
    Ok(out)
}

/// `F_w(A,B)` through the derivative-pairing sum
/// `Σ_{k>=1} (1/k!) Σ w_{u_1 v_1}...w_{u_k v_k} (∂^k A)(∂^k B)`.
pub fn f_w_pairing<S: Scalar>(
    alg: &FieldAlgebra,
    w: &SmallKernel<S>,
    a: &FieldPolynomial<S>,
    b: &FieldPolynomial<S>,
) -> Result<FieldPolynomial<S>> {
    // state: pairs of reduced monomials with accumulated kernel factors
    let mut state: BTreeMap<(u128, u128), S> = BTreeMap::new();
    for (ka, ca) in &a.terms {
        for (kb, cb) in &b.terms {
            let coeff = ca.mul(cb);
            if coeff.is_zero() {
                continue;
            }
            let e = state.entry((*ka, *kb)).or_insert_with(S::zero);
            *e = e.add(&coeff);
        }
    }
    let mut out = FieldPolynomial::zero();
    for k in 1..=4i64 {
        // one application of the pairing operator Σ w_{uv} ∂_u ⊗ ∂_v
        let mut next: BTreeMap<(u128, u128), S> = BTreeMap::new();
        for ((ka, kb), coeff) in &state {
            let (va, la) = decode(*ka);
            let (vb, lb) = decode(*kb);
            if la == 0 || lb == 0 {
                continue;
            }
            for sa in 0..la {
                for sb in 0..lb {
                    if alg.var_comp(va[sa]) != alg.var_comp(vb[sb]) {
                        continue;
                    }
                    let xa = alg.site_coords(alg.var_site(va[sa]));
                    let xb = alg.site_coords(alg.var_site(vb[sb]));
                    let wv = w.value(alg, [
                        xa[0] - xb[0],
                        xa[1] - xb[1],
                        xa[2] - xb[2],
                        xa[3] - xb[3],
                    ]);
                    if wv.is_zero() {
                        continue;
                    }
                    let mut ra = Vec::with_capacity(la - 1);
                    for (s, &v) in va[..la].iter().enumerate() {
                        if s != sa {
                            ra.push(v);
                        }
                    }
                    let mut rb = Vec::with_capacity(lb - 1);
                    for (s, &v) in vb[..lb].iter().enumerate() {
                        if s != sb {
                            rb.push(v);
                        }
                    }
                    let key = (encode(&ra), encode(&rb));
                    let e = next.entry(key).or_insert_with(S::zero);
                    *e = e.add(&coeff.mul(&wv));
                }
            }
        }
        state = next;
        if state.is_empty() {
            break;
        }
        // merge the k-th term with weight 1/k!
        let mut fact = 1i64;
        for i in 2..=k {
            fact *= i;
        }
        for ((ka, kb), coeff) in &state {
            let (va, la) = decode(*ka);
            let (vb, lb) = decode(*kb);
            let mut merged: Vec<u16> = va[..la].iter().chain(vb[..lb].iter()).cloned().collect();
            merged.sort_unstable();
            out.add_term(&merged, coeff.div_int(fact));
        }
    }
    Ok(out)
}

/// Local field polynomials used by the projection basis.
pub fn tau<S: Scalar>(alg: &FieldAlgebra, x: [i64; 4]) -> FieldPolynomial<S> {
    let mut p = FieldPolynomial::zero();
    let half = S::one().div_int(2);
    for i in 0..alg.n_comp {
        let v = alg.var(x, i);
        p.add_term(&[v, v], half.clone());
    }
    p
}

pub fn tau_sq<S: Scalar>(alg: &FieldAlgebra, x: [i64; 4]) -> FieldPolynomial<S> {
    let t = tau::<S>(alg, x);
    t.mul(&t, alg.degree_bound).expect("degree 4")
}

pub fn tau_delta<S: Scalar>(alg: &FieldAlgebra, x: [i64; 4]) -> FieldPolynomial<S> {
    // ½ Σ_i φ_x^i (-Δφ^i)_x = ½ Σ_i φ_x^i (8 φ_x^i - Σ_nbr φ^i)
    let mut p = FieldPolynomial::zero();
    let half = S::one().div_int(2);
    for i in 0..alg.n_comp {
        let vx = alg.var(x, i);
        p.add_term(&[vx, vx], half.mul(&S::from_i64(8)));
        for a in 0..4 {
            for s in [-1i64, 1] {
                let mut y = x;
                y[a] += s;
                let vy = alg.var(y, i);
                p.add_term(&[vx, vy], half.neg());
            }
        }
    }
    p
}

pub fn tau_grad<S: Scalar>(alg: &FieldAlgebra, x: [i64; 4]) -> FieldPolynomial<S> {
    // ¼ Σ_{|e|=1} Σ_i (φ_{x+e}^i - φ_x^i)²
    let mut p = FieldPolynomial::zero();
    let quarter = S::one().div_int(4);
    for i in 0..alg.n_comp {
        let vx = alg.var(x, i);
        for a in 0..4 {
            for s in [-1i64, 1] {
                let mut y = x;
                y[a] += s;
                let vy = alg.var(y, i);
                p.add_term(&[vy, vy], quarter.clone());
                p.add_term(&[vx, vy], quarter.mul(&S::from_i64(-2)));
                p.add_term(&[vx, vx], quarter.clone());
            }
        }
    }
    p
}

/// `V_x = g τ²_x + ν τ_x + z τ_{Δ,x} + y τ_{∇∇,x}` with scalar couplings.
pub fn local_v<S: Scalar>(
    alg: &FieldAlgebra,
    x: [i64; 4],
    g: &S,
    nu: &S,
    z: &S,
    y: &S,
) -> FieldPolynomial<S> {
    let mut p = tau_sq::<S>(alg, x).scale(g);
    p.add_assign(&tau::<S>(alg, x).scale(nu));
    p.add_assign(&tau_delta::<S>(alg, x).scale(z));
    p.add_assign(&tau_grad::<S>(alg, x).scale(y));
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::SmallKernel;
    use rand::{Rng, SeedableRng};

    fn alg(n: usize) -> FieldAlgebra {
        FieldAlgebra::new(3, n).unwrap()
    }

    fn delta_kernel(alg: &FieldAlgebra, v: f64) -> SmallKernel<f64> {
        SmallKernel::from_radial(alg, &[v]).unwrap()
    }

    #[test]
    fn laplacian_on_tau_gives_n_c00() {
        // ℒ_C τ_x = (n/2) C_{x,x}: the expectation of τ under E_C
        let a = alg(3);
        let c = SmallKernel::from_radial(&a, &[0.7, 0.2]).unwrap();
        let t = tau::<f64>(&a, [0, 0, 0, 0]);
        let l = laplacian_action(&a, &c, &t);
        assert_eq!(l.degree(), 0);
        assert!((l.eval_zero() - 0.5 * 3.0 * 0.7).abs() < 1e-15);
        // degree-1 polynomial is annihilated
        let p = FieldPolynomial::<f64>::variable(a.var([1, 0, 0, 0], 0));
        assert!(laplacian_action(&a, &c, &p).terms.is_empty());
    }

    #[test]
    fn wick_covariance_of_two_fields() {
        // e^{ℒ}(φ_x^i φ_y^i) = φφ + C_{x,y}
        let a = alg(2);
        let c = SmallKernel::from_radial(&a, &[0.5, 0.25]).unwrap();
        let x = [0, 0, 0, 0];
        let y = [1, 0, 0, 0];
        let p = FieldPolynomial::<f64>::variable(a.var(x, 1))
            .mul(&FieldPolynomial::variable(a.var(y, 1)), 8)
            .unwrap();
        let e = wick_expectation(&a, &c, &p);
        assert!((e.eval_zero() - 0.25).abs() < 1e-15);
        // different components stay uncorrelated
        let q = FieldPolynomial::<f64>::variable(a.var(x, 0))
            .mul(&FieldPolynomial::variable(a.var(y, 1)), 8)
            .unwrap();
        assert_eq!(wick_expectation(&a, &c, &q).eval_zero(), 0.0);
    }

    /// Independent Isserlis enumerator: Gaussian expectation of a monomial
    /// by brute-force perfect matchings.
    fn isserlis(alg: &FieldAlgebra, c: &SmallKernel<f64>, vars: &[u16]) -> f64 {
        if vars.len() % 2 == 1 {
            return 0.0;
        }
        if vars.is_empty() {
            return 1.0;
        }
        let mut total = 0.0;
        // pair vars[0] with each other var, recurse
        for k in 1..vars.len() {
            let (va, vb) = (vars[0], vars[k]);
            let pair = if alg.var_comp(va) == alg.var_comp(vb) {
                let xa = alg.site_coords(alg.var_site(va));
                let xb = alg.site_coords(alg.var_site(vb));
                c.value(alg, [
                    xa[0] - xb[0],
                    xa[1] - xb[1],
                    xa[2] - xb[2],
                    xa[3] - xb[3],
                ])
            } else {
                0.0
            };
            if pair != 0.0 {
                let rest: Vec<u16> = vars[1..]
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != k - 1)
                    .map(|(_, &v)| v)
                    .collect();
                total += pair * isserlis(alg, c, &rest);
            }
        }
        total
    }

    #[test]
    fn wick_matches_isserlis_enumeration() {
        // e^{ℒ_C} τ_x² at φ = 0 equals the Isserlis value ¼ E|ζ_x|⁴
        let a = alg(2);
        let c = SmallKernel::from_radial(&a, &[0.6, 0.3]).unwrap();
        let x = [0, 0, 0, 0];
        let t2 = tau_sq::<f64>(&a, x);
        let direct = wick_expectation(&a, &c, &t2).eval_zero();
        let mut brute = 0.0;
        for (k, coeff) in &t2.terms {
            let (vars, len) = super::decode(*k);
            brute += coeff * isserlis(&a, &c, &vars[..len]);
        }
        assert!((direct - brute).abs() < 1e-13, "{direct} vs {brute}");
        // ¼(n²+2n) C_{x,x}²
        let n = 2.0;
        let expect = 0.25 * (n * n + 2.0 * n) * 0.6 * 0.6;
        assert!((direct - expect).abs() < 1e-13);
        // and on a random degree-4 polynomial
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut p = FieldPolynomial::<f64>::zero();
        for _ in 0..12 {
            let vars: Vec<u16> = (0..4)
                .map(|_| {
                    a.var(
                        [
                            rng.gen_range(0..3),
                            rng.gen_range(0..3),
                            rng.gen_range(0..3),
                            0,
                        ],
                        rng.gen_range(0..2),
                    )
                })
                .collect();
            p.add_term(&vars, rng.gen_range(-1.0..1.0));
        }
        let direct = wick_expectation(&a, &c, &p).eval_zero();
        let mut brute = 0.0;
        for (k, coeff) in &p.terms {
            let (vars, len) = super::decode(*k);
            brute += coeff * isserlis(&a, &c, &vars[..len]);
        }
        assert!((direct - brute).abs() < 1e-12, "{direct} vs {brute}");
    }

    #[test]
    fn wick_semigroup_and_inverse() {
        let a = alg(2);
        let c1 = SmallKernel::from_radial(&a, &[0.4, 0.1]).unwrap();
        let c2 = SmallKernel::from_radial(&a, &[0.3, -0.05]).unwrap();
        let sum = c1.add(&c2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut p = FieldPolynomial::<f64>::zero();
        for _ in 0..8 {
            let vars: Vec<u16> = (0..4)
                .map(|_| {
                    a.var(
                        [rng.gen_range(0..3), rng.gen_range(0..3), 0, 0],
                        rng.gen_range(0..2),
                    )
                })
                .collect();
            p.add_term(&vars, rng.gen_range(-1.0..1.0));
        }
        // e^{ℒ_{C1}} e^{ℒ_{C2}} = e^{ℒ_{C1+C2}}
        let two_step = wick_expectation(&a, &c1, &wick_expectation(&a, &c2, &p));
        let one_step = wick_expectation(&a, &sum, &p);
        for (k, v) in &one_step.terms {
            let w = two_step.terms.get(k).cloned().unwrap_or(0.0);
            assert!((v - w).abs() < 1e-12);
        }
        // e^{-ℒ} then e^{+ℒ} is the identity
        let round = wick_expectation(&a, &c1, &wick_inverse(&a, &c1, &p));
        for (k, v) in &p.terms {
            let w = round.terms.get(k).cloned().unwrap_or(0.0);
            assert!((v - w).abs() < 1e-12);
        }
        assert_eq!(round.terms.len(), p.terms.len());
    }

    #[test]
    fn f_w_two_routes_agree_and_symmetric() {
        let a = alg(2);
        let w = SmallKernel::from_radial(&a, &[0.8, 0.2]).unwrap();
        let x = [0, 0, 0, 0];
        let y = [1, 1, 0, 0];
        let va = local_v(&a, x, &0.3, &0.1, &0.05, &0.02);
        let vb = local_v(&a, y, &0.3, &0.1, &0.05, &0.02);
        let f1 = f_w_conjugation(&a, &w, &va, &vb).unwrap();
        let f2 = f_w_pairing(&a, &w, &va, &vb).unwrap();
        let keys: std::collections::BTreeSet<u128> =
            f1.terms.keys().chain(f2.terms.keys()).cloned().collect();
        for k in keys {
            let v = f1.terms.get(&k).cloned().unwrap_or(0.0);
            let u = f2.terms.get(&k).cloned().unwrap_or(0.0);
            assert!((v - u).abs() < 1e-12, "routes differ on a monomial: {v} vs {u}");
        }
        // symmetry F(A,B) = F(B,A)
        let f3 = f_w_pairing(&a, &w, &vb, &va).unwrap();
        for (k, v) in &f2.terms {
            let u = f3.terms.get(k).cloned().unwrap_or(0.0);
            assert!((v - u).abs() < 1e-12);
        }
    }

    #[test]
    fn f_w_degree_one_and_tau_examples() {
        let a = alg(3);
        let w = SmallKernel::from_radial(&a, &[0.9, 0.4]).unwrap();
        let x = [0, 0, 0, 0];
        let y = [0, 1, 0, 0];
        // F(φ_x^i, φ_y^j) = δ_ij w_{x,y}
        let px = FieldPolynomial::<f64>::variable(a.var(x, 1));
        let py = FieldPolynomial::<f64>::variable(a.var(y, 1));
        let f = f_w_pairing(&a, &w, &px, &py).unwrap();
        assert!((f.eval_zero() - 0.4).abs() < 1e-15);
        let pz = FieldPolynomial::<f64>::variable(a.var(y, 2));
        assert!(f_w_pairing(&a, &w, &px, &pz).unwrap().terms.is_empty());
        // F_w(τ_x, τ_y) = (φ_x·φ_y) w_{x,y} + (n/2) w_{x,y}²
        let f = f_w_pairing(&a, &w, &tau(&a, x), &tau(&a, y)).unwrap();
        let n = 3.0;
        assert!((f.eval_zero() - 0.5 * n * 0.4 * 0.4).abs() < 1e-15);
        let dot = f
            .terms
            .get(&encode(&{
                let mut v = vec![a.var(x, 0), a.var(y, 0)];
                v.sort_unstable();
                v
            }))
            .cloned()
            .unwrap_or(0.0);
        assert!((dot - 0.4).abs() < 1e-15);
    }

    #[test]
    fn delta_kernel_keeps_wick_local() {
        let a = alg(1);
        let c = delta_kernel(&a, 1.5);
        let t2 = tau_sq::<f64>(&a, [0, 0, 0, 0]);
        let e = wick_expectation(&a, &c, &t2);
        // n = 1: e^{ℒ}τ² value at 0 is ¼·3·C² (E ζ⁴ = 3C²)
        assert!((e.eval_zero() - 0.75 * 1.5 * 1.5).abs() < 1e-14);
    }
}
