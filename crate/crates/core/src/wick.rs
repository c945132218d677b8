//! Fock-basis expectation values of Gaussian states through phase-space
//! moments.
//!
//! The Wigner function of `|n⟩⟨m|` is a polynomial in `z = x + ip`, `z̄` times
//! `e^{-|z|²}/π` (Laguerre kernels). A normally ordered product `c†^q c^q`
//! corresponds to `(z z̄ / 2)^q` under the Glauber-Sudarshan representation.
//! Mixing the two orderings mode by mode gives a Gaussian quasi-distribution
//! whose covariance is the excess `V - I` plus the identity on Wigner modes.
//! Multiplying by the Gaussian factor of the kernels leaves another Gaussian,
//! so every expectation reduces to even moments of complex linear forms,
//! evaluated by pairwise contraction.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::gaussian::{submatrix, CovarianceMatrix};

/// Moments `E[∏ z_k^{a_k} z̄_k^{b_k}]` of a zero-mean real Gaussian vector with
/// `z_k = x_k + i p_k`.
///
/// Exponent vectors are packed four bits per linear form, so at most
/// [`ComplexMoments::MAX_MODES`] modes and exponents up to 15.
#[derive(Debug, Clone)]
pub struct ComplexMoments {
    // pair contraction between linear forms; form 2k is z_k, 2k+1 is z̄_k
    contraction: DMatrix<Complex64>,
    memo: HashMap<u128, Complex64>,
}

impl ComplexMoments {
    pub const MAX_MODES: usize = 16;
    const MAX_EXP: u8 = 15;

    /// `sigma` is the (quasi-)covariance `E[y yᵀ]` over `(x₁, p₁, …)`; it need not
    /// be positive definite.
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows() / 2;
        if n > Self::MAX_MODES {
            return Err(invalid(format!(
                "moment engine supports at most {} modes",
                Self::MAX_MODES
            )));
        }
        let i = Complex64::i();
        let coef = |form: usize| -> (usize, Complex64) {
            let k = form / 2;
            (k, if form.is_multiple_of(2) { i } else { -i })
        };
        let contraction = DMatrix::from_fn(2 * n, 2 * n, |fa, fb| {
            let (ka, sa) = coef(fa);
            let (kb, sb) = coef(fb);
            let (xa, pa, xb, pb) = (2 * ka, 2 * ka + 1, 2 * kb, 2 * kb + 1);
            sigma[(xa, xb)] + sa * sigma[(pa, xb)] + sb * sigma[(xa, pb)] + sa * sb * sigma[(pa, pb)]
        });
        Ok(Self {
            contraction,
            memo: HashMap::new(),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.contraction.nrows() / 2
    }

    /// Moment for exponents laid out as `[a₁, b₁, a₂, b₂, …]`.
    pub fn moment(&mut self, exps: &[u8]) -> Result<Complex64> {
        if exps.len() != self.contraction.nrows() || exps.iter().any(|&e| e > Self::MAX_EXP) {
            return Err(invalid(format!(
                "exponent vector must have {} entries, each at most {}",
                self.contraction.nrows(),
                Self::MAX_EXP
            )));
        }
        let total: u32 = exps.iter().map(|&e| e as u32).sum();
        if total % 2 == 1 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let key = exps
            .iter()
            .enumerate()
            .fold(0u128, |k, (slot, &e)| k | (e as u128) << (4 * slot));
        Ok(self.packed(key))
    }

    fn packed(&mut self, key: u128) -> Complex64 {
        if key == 0 {
            return Complex64::new(1.0, 0.0);
        }
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let j = key.trailing_zeros() as usize / 4;
        let rest = key - (1u128 << (4 * j));
        let mut acc = Complex64::new(0.0, 0.0);
        for l in j..self.contraction.nrows() {
            let e = (rest >> (4 * l)) & 0xF;
            if e == 0 {
                continue;
            }
            acc += self.contraction[(j, l)] * e as f64 * self.packed(rest - (1u128 << (4 * l)));
        }
        self.memo.insert(key, acc);
        acc
    }
}

/// Terms `coef · z^a z̄^b` of a single-mode polynomial.
pub(crate) type ModePoly = Vec<(Complex64, u8, u8)>;

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u64) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Wigner kernel of `|n⟩⟨m|` without its `e^{-|z|²}/π` factor.
pub(crate) fn fock_kernel(n: usize, m: usize) -> ModePoly {
    let (hi, lo) = (n.max(m) as u64, n.min(m) as u64);
    let alpha = hi - lo;
    let norm = (-1f64).powi(lo as i32) * (factorial(lo) / factorial(hi)).sqrt() * 2f64.powf(alpha as f64 / 2.0);
    (0..=lo)
        .map(|k| {
            let c = norm * (-1f64).powi(k as i32) * binomial(hi, lo - k) * 2f64.powi(k as i32) / factorial(k);
            let (zk, zbk) = if n >= m { (k, k + alpha) } else { (k + alpha, k) };
            (Complex64::new(c, 0.0), zk as u8, zbk as u8)
        })
        .collect()
}

/// `Tr[ρ (⊗ c†^q c^q) ⊗ (⊗ |n⟩⟨m|)]` for a Gaussian `ρ`.
///
/// `kernel_modes` carry Fock operators `|n⟩⟨m|`; `counted_modes` carry
/// normally ordered powers `c†^q c^q`. All other modes are traced out.
#[derive(Debug, Clone)]
pub struct FockTrace {
    moments: ComplexMoments,
    prefactor: f64,
    n_kernel: usize,
    n_counted: usize,
}

impl FockTrace {
    pub fn new(v: &CovarianceMatrix, kernel_modes: &[usize], counted_modes: &[usize]) -> Result<Self> {
        let order = Self::mode_order(v, kernel_modes, counted_modes)?;
        let ex = submatrix(v.excess(), &order, &order);
        Self::from_excess(&ex, kernel_modes.len())
    }

    /// `excess` is `V - I` over `[kernel modes…, counted modes…]`.
    pub(crate) fn from_excess(excess: &DMatrix<f64>, n_kernel: usize) -> Result<Self> {
        let n_counted = excess.nrows() / 2 - n_kernel;
        Self::damped(excess, n_kernel, &vec![0.0; n_counted])
    }

    /// Like [`FockTrace::new`], with each counted mode additionally carrying the
    /// normally ordered damping `:e^{-t c†c}: = (1 - t)^{c†c}`, `t = damping[k]`.
    /// `t = 1` with zero count is a vacuum projector.
    pub fn with_damping(
        v: &CovarianceMatrix,
        kernel_modes: &[usize],
        counted_modes: &[usize],
        damping: &[f64],
    ) -> Result<Self> {
        let order = Self::mode_order(v, kernel_modes, counted_modes)?;
        if damping.len() != counted_modes.len() || damping.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(invalid("damping needs one value in [0, 1] per counted mode"));
        }
        let ex = submatrix(v.excess(), &order, &order);
        Self::damped(&ex, kernel_modes.len(), damping)
    }

    fn mode_order(v: &CovarianceMatrix, kernel_modes: &[usize], counted_modes: &[usize]) -> Result<Vec<usize>> {
        let order: Vec<usize> = kernel_modes.iter().chain(counted_modes).copied().collect();
        if order.is_empty() {
            return Err(invalid("no modes selected"));
        }
        let mut seen = order.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != order.len() || seen.last().is_some_and(|&m| m >= v.n_modes()) {
            return Err(invalid("kernel and counted modes must be distinct and in range"));
        }
        Ok(order)
    }

    fn damped(excess: &DMatrix<f64>, n_kernel: usize, damping: &[f64]) -> Result<Self> {
        let dim = excess.nrows();
        let ks = 2 * n_kernel;
        // mixed-order quasi-covariance: Wigner on kernel modes, normal order elsewhere
        let mut sigma = excess * 0.5;
        for q in 0..ks {
            sigma[(q, q)] += 0.5;
        }
        // A factor e^{-yᵀ D y} is absorbed as Σ -> Σ - Σ W (I + W Σ W)⁻¹ W Σ with
        // W = √(2D): √2 on kernel coordinates, √t on damped counted ones.
        let mut absorbed: Vec<(usize, f64)> = (0..ks).map(|q| (q, 2f64.sqrt())).collect();
        for (k, &t) in damping.iter().enumerate() {
            if t > 0.0 {
                let q = ks + 2 * k;
                absorbed.push((q, t.sqrt()));
                absorbed.push((q + 1, t.sqrt()));
            }
        }
        let prefactor = if absorbed.is_empty() {
            1.0
        } else {
            let idx: Vec<usize> = absorbed.iter().map(|&(q, _)| q).collect();
            let w = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                idx.len(),
                absorbed.iter().map(|&(_, w)| w),
            ));
            let cross = &w * DMatrix::from_fn(idx.len(), dim, |i, j| sigma[(idx[i], j)]);
            let mut inner = &w * DMatrix::from_fn(idx.len(), idx.len(), |i, j| sigma[(idx[i], idx[j])]) * &w;
            for q in 0..inner.nrows() {
                inner[(q, q)] += 1.0;
            }
            let lu = inner.lu();
            let det = lu.determinant();
            if !(det > 0.0) || !det.is_finite() {
                return Err(Error::NumericDegeneracy(format!(
                    "damped Gaussian normalization det = {det:e}"
                )));
            }
            let solved = lu
                .solve(&cross)
                .ok_or_else(|| Error::NumericDegeneracy("singular damping update".into()))?;
            sigma -= cross.transpose() * solved;
            crate::gaussian::symmetrize(&mut sigma);
            2f64.powi(n_kernel as i32) / det.sqrt()
        };
        Ok(Self {
            moments: ComplexMoments::new(&sigma)?,
            prefactor,
            n_kernel,
            n_counted: dim / 2 - n_kernel,
        })
    }

    /// `fock[s] = (n, m)` places `|n⟩⟨m|` on kernel mode `s`; `counts[t] = q`
    /// places `c†^q c^q` on counted mode `t`.
    pub fn trace(&mut self, fock: &[(usize, usize)], counts: &[u8]) -> Result<Complex64> {
        let pairs: Vec<(u8, u8)> = counts.iter().map(|&q| (q, q)).collect();
        self.trace_ordered(fock, &pairs)
    }

    /// Like [`FockTrace::trace`] with `counted[t] = (n, m)` placing the normally
    /// ordered `c†^n c^m` on counted mode `t`. With damping 1 this is
    /// `:c†^n c^m e^{-c†c}: = √(n! m!) |n⟩⟨m|`.
    pub fn trace_ordered(&mut self, fock: &[(usize, usize)], counted: &[(u8, u8)]) -> Result<Complex64> {
        if fock.len() != self.n_kernel || counted.len() != self.n_counted {
            return Err(invalid(format!(
                "expected {} Fock operators and {} counting powers",
                self.n_kernel, self.n_counted
            )));
        }
        if fock.iter().any(|&(n, m)| n.max(m) > 15) || counted.iter().any(|&(n, m)| n.max(m) > 15) {
            return Err(invalid("Fock indices and counting powers are limited to 15"));
        }
        let kernels: Vec<ModePoly> = fock.iter().map(|&(n, m)| fock_kernel(n, m)).collect();
        let n_modes = self.n_kernel + self.n_counted;
        let mut exps = vec![0u8; 2 * n_modes];
        // c ↔ z/√2 in the Glauber-Sudarshan picture
        for (t, &(n, m)) in counted.iter().enumerate() {
            exps[2 * (self.n_kernel + t)] = m;
            exps[2 * (self.n_kernel + t) + 1] = n;
        }
        let count_scale = 0.5f64.sqrt().powi(counted.iter().map(|&(n, m)| (n + m) as i32).sum());
        let mut total = Complex64::new(0.0, 0.0);
        self.accumulate(&kernels, 0, Complex64::new(1.0, 0.0), &mut exps, &mut total);
        Ok(total * self.prefactor * count_scale)
    }

    fn accumulate(
        &mut self,
        kernels: &[ModePoly],
        mode: usize,
        coef: Complex64,
        exps: &mut Vec<u8>,
        total: &mut Complex64,
    ) {
        if mode == kernels.len() {
            *total += coef * self.moments.moment(exps).expect("exponents validated in trace");
            return;
        }
        for &(c, a, b) in &kernels[mode] {
            exps[2 * mode] = a;
            exps[2 * mode + 1] = b;
            self.accumulate(kernels, mode + 1, coef * c, exps, total);
        }
        exps[2 * mode] = 0;
        exps[2 * mode + 1] = 0;
    }
}
