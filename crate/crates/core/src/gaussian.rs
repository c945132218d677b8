//! Zero-mean multimode Gaussian states.
//!
//! Quadratures are `x = (a + a†)/√2`, `p = (a - a†)/(i√2)` and the covariance
//! matrix is twice the symmetrized quadrature covariance, so the vacuum has
//! `V = I`. Entries are ordered `(x₁, p₁, x₂, p₂, …)`.
//!
//! Internally a state is stored through its excess `V - I`. The excess is what
//! the normally ordered moments produce directly, and keeping it avoids losing
//! precision on very weakly excited modes (the continuous-wave trigger modes
//! carry ~1e-9 photons).

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const POSITIVITY_TOL: f64 = -1e-10;
pub const PURITY_TOL: f64 = 1e-9;
pub const SYMPLECTIC_TOL: f64 = 1e-10;

/// Normally ordered second moments `A_ij = ⟨c_i† c_j⟩`, `B_ij = ⟨c_i c_j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMoments {
    a: DMatrix<Complex64>,
    b: DMatrix<Complex64>,
}

impl ModeMoments {
    pub fn new(a: DMatrix<Complex64>, b: DMatrix<Complex64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || b.nrows() != n || b.ncols() != n {
            return Err(Error::InvalidMoments(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        for i in 0..n {
            if a[(i, i)].im.abs() > SYMMETRY_TOL || a[(i, i)].re < -SYMMETRY_TOL {
                return Err(Error::InvalidMoments(format!(
                    "occupation A[{i},{i}] = {} is not real and non-negative",
                    a[(i, i)]
                )));
            }
            for j in 0..n {
                if (a[(i, j)] - a[(j, i)].conj()).norm() > SYMMETRY_TOL {
                    return Err(Error::InvalidMoments(format!("A not Hermitian at ({i},{j})")));
                }
                if (b[(i, j)] - b[(j, i)]).norm() > SYMMETRY_TOL {
                    return Err(Error::InvalidMoments(format!("B not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { a, b })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            a: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, n),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<Complex64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<Complex64> {
        &self.b
    }
}

/// Covariance matrix of a zero-mean Gaussian state with named modes.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    excess: DMatrix<f64>,
    labels: Vec<String>,
}

impl CovarianceMatrix {
    /// Builds a state from its full covariance `V`, checking symmetry and the
    /// uncertainty relation.
    pub fn new(v: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let excess = v - DMatrix::identity(2 * labels.len(), 2 * labels.len());
        Self::from_excess(excess, labels)
    }

    /// Builds a state from `V - I`.
    pub fn from_excess(excess: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let state = Self::from_excess_unchecked(excess, labels)?;
        state.check_physical()?;
        Ok(state)
    }

    pub(crate) fn from_excess_unchecked(excess: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let dim = 2 * labels.len();
        if labels.is_empty() || excess.nrows() != dim || excess.ncols() != dim {
            return Err(invalid(format!(
                "covariance of shape {}x{} does not match {} labelled modes",
                excess.nrows(),
                excess.ncols(),
                labels.len()
            )));
        }
        for i in 0..dim {
            for j in 0..i {
                if (excess[(i, j)] - excess[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(invalid(format!("covariance not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { excess, labels })
    }

    pub fn vacuum(labels: Vec<String>) -> Self {
        let dim = 2 * labels.len();
        Self {
            excess: DMatrix::zeros(dim, dim),
            labels,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mode_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Full covariance matrix `V`.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.excess + DMatrix::identity(self.excess.nrows(), self.excess.ncols())
    }

    /// `V - I`: twice the normally ordered quadrature covariance.
    pub fn excess(&self) -> &DMatrix<f64> {
        &self.excess
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    /// Smallest eigenvalue of the Hermitian matrix `V + iΩ`.
    pub fn uncertainty_min_eigenvalue(&self) -> f64 {
        let v = self.matrix();
        let omega = symplectic_form(self.n_modes());
        let dim = v.nrows();
        // real embedding [[V, -Ω], [Ω, V]] of the Hermitian matrix V + iΩ
        let mut emb = DMatrix::zeros(2 * dim, 2 * dim);
        emb.view_mut((0, 0), (dim, dim)).copy_from(&v);
        emb.view_mut((dim, dim), (dim, dim)).copy_from(&v);
        emb.view_mut((0, dim), (dim, dim)).copy_from(&(-&omega));
        emb.view_mut((dim, 0), (dim, dim)).copy_from(&omega);
        SymmetricEigen::new(emb).eigenvalues.min()
    }

    pub fn check_physical(&self) -> Result<()> {
        if self.excess.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericDegeneracy("non-finite covariance entry".into()));
        }
        let min_eig = self.uncertainty_min_eigenvalue();
        if min_eig < POSITIVITY_TOL {
            return Err(Error::UnphysicalState(min_eig));
        }
        Ok(())
    }

    /// Principal submatrix on `keep`, in the given order.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(invalid("partial trace must keep at least one mode"));
        }
        check_distinct(keep, self.n_modes())?;
        let excess = self.quadrature_submatrix(keep);
        let labels = keep.iter().map(|&k| self.labels[k].clone()).collect();
        Ok(Self { excess, labels })
    }

    /// Same as [`partial_trace`](Self::partial_trace) with modes chosen by label.
    pub fn select(&self, labels: &[&str]) -> Result<Self> {
        let keep = labels
            .iter()
            .map(|l| {
                self.mode_index(l)
                    .ok_or_else(|| invalid(format!("no mode labelled {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.partial_trace(&keep)
    }

    pub(crate) fn quadrature_submatrix(&self, modes: &[usize]) -> DMatrix<f64> {
        submatrix(&self.excess, modes, modes)
    }

    pub fn relabel(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.labels.len() {
            return Err(invalid("relabel must keep the mode count"));
        }
        self.labels = labels;
        Ok(self)
    }
}

/// Block `[rows × cols]` of a quadrature matrix, indexed by mode.
pub(crate) fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(2 * rows.len(), 2 * cols.len(), |i, j| {
        m[(2 * rows[i / 2] + i % 2, 2 * cols[j / 2] + j % 2)]
    })
}

fn check_distinct(modes: &[usize], n: usize) -> Result<()> {
    for (k, &m) in modes.iter().enumerate() {
        if m >= n {
            return Err(invalid(format!("mode index {m} out of range for {n} modes")));
        }
        if modes[..k].contains(&m) {
            return Err(invalid(format!("mode index {m} repeated")));
        }
    }
    Ok(())
}

/// Block-diagonal symplectic form with blocks `[[0, 1], [-1, 0]]`.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

/// Converts normally ordered moments into a covariance matrix.
pub fn moments_to_covariance(m: &ModeMoments, labels: Vec<String>) -> Result<CovarianceMatrix> {
    let n = m.n_modes();
    if labels.len() != n {
        return Err(invalid(format!("{} labels for {n} modes", labels.len())));
    }
    let excess = moments_to_excess(m.a(), m.b());
    let state = CovarianceMatrix::from_excess_unchecked(excess, labels)?;
    state.check_physical()?;
    Ok(state)
}

/// `V - I` from the moment matrices, without adding the vacuum contribution.
pub(crate) fn moments_to_excess(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut ex = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let (aij, bij) = (a[(i, j)], b[(i, j)]);
            ex[(2 * i, 2 * j)] = 2.0 * (aij.re + bij.re);
            ex[(2 * i + 1, 2 * j + 1)] = 2.0 * (aij.re - bij.re);
            ex[(2 * i, 2 * j + 1)] = 2.0 * (aij.im + bij.im);
            ex[(2 * i + 1, 2 * j)] = 2.0 * (bij.im - aij.im);
        }
    }
    ex
}

/// A real `2n × 2n` matrix acting on quadratures.
#[derive(Debug, Clone, PartialEq)]
pub struct Symplectic(DMatrix<f64>);

impl Symplectic {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        if s.nrows() != s.ncols() || !s.nrows().is_multiple_of(2) {
            return Err(invalid("symplectic matrix must be square with even size"));
        }
        let omega = symplectic_form(s.nrows() / 2);
        let dev = (&s * &omega * s.transpose() - &omega).amax();
        if dev > SYMPLECTIC_TOL {
            return Err(Error::NonSymplectic(dev));
        }
        Ok(Self(s))
    }

    pub fn identity(n_modes: usize) -> Self {
        Self(DMatrix::identity(2 * n_modes, 2 * n_modes))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n_modes(&self) -> usize {
        self.0.nrows() / 2
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Symplectic) -> Symplectic {
        Symplectic(&self.0 * &first.0)
    }

    /// Passive two-mode transformation `(c_i, c_j) → u · (c_i, c_j)` for a
    /// 2×2 unitary `u` given row-major.
    pub fn passive_two_mode(n_modes: usize, (i, j): (usize, usize), u: [[Complex64; 2]; 2]) -> Result<Self> {
        if i == j || i >= n_modes || j >= n_modes {
            return Err(invalid(format!("invalid mode pair ({i},{j}) for {n_modes} modes")));
        }
        let mut s = DMatrix::identity(2 * n_modes, 2 * n_modes);
        let idx = [i, j];
        for (r, &mr) in idx.iter().enumerate() {
            for (c, &mc) in idx.iter().enumerate() {
                let z = u[r][c];
                s[(2 * mr, 2 * mc)] = z.re;
                s[(2 * mr, 2 * mc + 1)] = -z.im;
                s[(2 * mr + 1, 2 * mc)] = z.im;
                s[(2 * mr + 1, 2 * mc + 1)] = z.re;
            }
        }
        Self::new(s)
    }
}

/// Beam splitter of the given reflectivity:
/// `c_i → √(1-R) c_i - √R c_j`, `c_j → √R c_i + √(1-R) c_j`.
pub fn beam_splitter(n_modes: usize, reflectivity: f64, modes: (usize, usize)) -> Result<Symplectic> {
    if !(0.0..=1.0).contains(&reflectivity) {
        return Err(invalid(format!("reflectivity {reflectivity} outside [0, 1]")));
    }
    let t = Complex64::from((1.0 - reflectivity).sqrt());
    let r = Complex64::from(reflectivity.sqrt());
    Symplectic::passive_two_mode(n_modes, modes, [[t, -r], [r, t]])
}

/// `c_i → c_i e^{iθ}`.
pub fn phase_shifter(n_modes: usize, theta: f64, mode: usize) -> Result<Symplectic> {
    if mode >= n_modes {
        return Err(invalid(format!("mode {mode} out of range for {n_modes} modes")));
    }
    let (s, c) = theta.sin_cos();
    let mut m = DMatrix::identity(2 * n_modes, 2 * n_modes);
    m[(2 * mode, 2 * mode)] = c;
    m[(2 * mode, 2 * mode + 1)] = -s;
    m[(2 * mode + 1, 2 * mode)] = s;
    m[(2 * mode + 1, 2 * mode + 1)] = c;
    Ok(Symplectic(m))
}

/// Polarizing beam splitter at 45°: `(c_i, c_j) → ((c_i + c_j)/√2, (c_i - c_j)/√2)`,
/// transmitted port first.
pub fn pbs45(n_modes: usize, modes: (usize, usize)) -> Result<Symplectic> {
    let h = Complex64::from(std::f64::consts::FRAC_1_SQRT_2);
    Symplectic::passive_two_mode(n_modes, modes, [[h, h], [h, -h]])
}

pub fn apply_symplectic(v: &CovarianceMatrix, s: &Symplectic) -> Result<CovarianceMatrix> {
    if s.n_modes() != v.n_modes() {
        return Err(invalid(format!(
            "symplectic acts on {} modes, state has {}",
            s.n_modes(),
            v.n_modes()
        )));
    }
    let sm = s.matrix();
    // S V Sᵀ - I = S (V - I) Sᵀ + (S Sᵀ - I)
    let mut excess = sm * v.excess() * sm.transpose();
    excess += sm * sm.transpose() - DMatrix::identity(sm.nrows(), sm.ncols());
    symmetrize(&mut excess);
    Ok(CovarianceMatrix {
        excess,
        labels: v.labels.clone(),
    })
}

/// Mixes mode `mode` with vacuum at transmission `eta` and discards the
/// reflected port.
pub fn apply_loss(v: &CovarianceMatrix, mode: usize, eta: f64) -> Result<CovarianceMatrix> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid(format!("transmission {eta} outside [0, 1]")));
    }
    if mode >= v.n_modes() {
        return Err(invalid(format!("mode {mode} out of range")));
    }
    let mut excess = v.excess.clone();
    let amp = eta.sqrt();
    let dim = excess.nrows();
    for q in [2 * mode, 2 * mode + 1] {
        for k in 0..dim {
            excess[(q, k)] *= amp;
            excess[(k, q)] *= amp;
        }
    }
    Ok(CovarianceMatrix {
        excess,
        labels: v.labels.clone(),
    })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Two-mode squeezed vacuum moments for squeezing parameter `r`
/// (state `(1-r²) Σ rⁿ |n,n⟩`): `⟨a†a⟩ = r²/(1-r²)`, `⟨ab⟩ = r/(1-r²)`.
pub fn tmsv_moments(r: f64) -> (f64, f64) {
    let d = 1.0 - r * r;
    (r * r / d, r / d)
}

pub fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn tmsv(r: f64) -> CovarianceMatrix {
        let (n, s) = tmsv_moments(r);
        let a = DMatrix::from_diagonal_element(2, 2, c(n));
        let mut b = DMatrix::zeros(2, 2);
        b[(0, 1)] = c(s);
        b[(1, 0)] = c(s);
        moments_to_covariance(&ModeMoments::new(a, b).unwrap(), labels(&["a", "b"])).unwrap()
    }

    #[test]
    fn vacuum_moments_give_identity() {
        let v = moments_to_covariance(&ModeMoments::zeros(3), labels(&["a", "b", "c"])).unwrap();
        assert_eq!(v.matrix(), DMatrix::identity(6, 6));
    }

    #[test]
    fn tmsv_covariance_entries() {
        let v = tmsv(0.5).matrix();
        for k in 0..4 {
            assert!((v[(k, k)] - 5.0 / 3.0).abs() < 1e-14);
        }
        assert!((v[(0, 2)] - 4.0 / 3.0).abs() < 1e-14);
        assert!((v[(1, 3)] + 4.0 / 3.0).abs() < 1e-14);
        assert!((v.determinant() - 1.0).abs() < PURITY_TOL);
    }

    #[test]
    fn non_hermitian_a_rejected() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = Complex64::new(0.1, 0.2);
        a[(1, 0)] = Complex64::new(0.1, 0.2);
        let err = ModeMoments::new(a, DMatrix::zeros(2, 2)).unwrap_err();
        assert!(matches!(err, Error::InvalidMoments(_)));
    }

    #[test]
    fn unphysical_moments_rejected() {
        // ⟨ab⟩ too large for the occupations
        let a = DMatrix::from_diagonal_element(2, 2, c(0.1));
        let mut b = DMatrix::zeros(2, 2);
        b[(0, 1)] = c(0.5);
        b[(1, 0)] = c(0.5);
        let err = moments_to_covariance(&ModeMoments::new(a, b).unwrap(), labels(&["a", "b"])).unwrap_err();
        assert!(matches!(err, Error::UnphysicalState(_)));
    }

    #[test]
    fn beam_splitter_edge_cases() {
        let s = beam_splitter(2, 0.0, (0, 1)).unwrap();
        assert_eq!(s.matrix(), &DMatrix::identity(4, 4));
        let vac = CovarianceMatrix::vacuum(labels(&["a", "b"]));
        let out = apply_symplectic(&vac, &beam_splitter(2, 0.5, (0, 1)).unwrap()).unwrap();
        assert!((out.matrix() - DMatrix::identity(4, 4)).amax() < 1e-15);
        assert!(beam_splitter(2, 1.5, (0, 1)).is_err());
        assert!(beam_splitter(2, 0.5, (1, 1)).is_err());
    }

    #[test]
    fn phase_pi_negates_quadratures() {
        let s = phase_shifter(2, std::f64::consts::PI, 1).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]));
        assert!((s.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn pbs_is_an_involution() {
        let s = pbs45(2, (0, 1)).unwrap();
        let sq = s.matrix() * s.matrix();
        assert!((sq - DMatrix::identity(4, 4)).amax() < 1e-15);
    }

    #[test]
    fn phase_on_tmsv_keeps_determinant() {
        let v = tmsv(0.4);
        let out = apply_symplectic(&v, &phase_shifter(2, 0.7, 0).unwrap()).unwrap();
        assert!((out.det() - v.det()).abs() < 1e-12);
        assert!((out.det() - 1.0).abs() < PURITY_TOL);
    }

    #[test]
    fn non_symplectic_rejected() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 0)] = 2.0;
        assert!(matches!(Symplectic::new(m), Err(Error::NonSymplectic(_))));
    }

    #[test]
    fn loss_limits() {
        let v = tmsv(0.3);
        let same = apply_loss(&v, 0, 1.0).unwrap();
        assert_eq!(same.matrix(), v.matrix());
        let cut = apply_loss(&v, 0, 0.0).unwrap().matrix();
        assert_eq!(cut.view((0, 0), (2, 2)).clone_owned(), DMatrix::identity(2, 2));
        assert!(cut.view((0, 2), (2, 2)).amax() == 0.0);
    }

    #[test]
    fn loss_matches_ancilla_construction() {
        let r = 0.45;
        let v = tmsv(r);
        let direct = apply_loss(&v, 1, 0.5).unwrap();
        // append vacuum ancilla, mix, trace it out
        let mut ex = DMatrix::zeros(6, 6);
        ex.view_mut((0, 0), (4, 4)).copy_from(v.excess());
        let big = CovarianceMatrix::from_excess(ex, labels(&["a", "b", "anc"])).unwrap();
        let mixed = apply_symplectic(&big, &beam_splitter(3, 0.5, (1, 2)).unwrap()).unwrap();
        let traced = mixed.partial_trace(&[0, 1]).unwrap();
        assert!((traced.matrix() - direct.matrix()).amax() < 1e-14);
    }

    #[test]
    fn partial_trace_of_tmsv_is_thermal() {
        let r = 0.3;
        let one = tmsv(r).partial_trace(&[1]).unwrap();
        let expected = 1.0 + 2.0 * r * r / (1.0 - r * r);
        assert!((one.matrix() - DMatrix::identity(2, 2) * expected).amax() < 1e-14);
        assert_eq!(one.labels(), &["b".to_string()]);
        assert!(tmsv(r).partial_trace(&[]).is_err());
        let all = tmsv(r).partial_trace(&[0, 1]).unwrap();
        assert_eq!(all, tmsv(r));
    }

    fn random_passive(n: usize, params: &[f64]) -> Symplectic {
        let mut s = Symplectic::identity(n);
        for (k, w) in params.chunks(3).enumerate() {
            let i = k % n;
            let j = (k + 1) % n;
            let bs = beam_splitter(n, w[0], (i, j)).unwrap();
            let ph = phase_shifter(n, w[1] * 6.0, i).unwrap();
            s = ph.compose(&bs).compose(&s);
        }
        s
    }

    proptest! {
        #[test]
        fn symplectic_maps_preserve_det_and_uncertainty(
            r in 0.0f64..0.8,
            params in proptest::collection::vec(0.0f64..1.0, 9),
            eta in 0.0f64..1.0,
        ) {
            let v = tmsv(r);
            let mut ex = DMatrix::zeros(6, 6);
            ex.view_mut((0, 0), (4, 4)).copy_from(v.excess());
            let big = CovarianceMatrix::from_excess(ex, labels(&["a", "b", "c"])).unwrap();
            let s = random_passive(3, &params);
            let out = apply_symplectic(&big, &s).unwrap();
            prop_assert!((out.det() - 1.0).abs() < PURITY_TOL);
            prop_assert!(out.uncertainty_min_eigenvalue() > POSITIVITY_TOL);
            let lossy = apply_loss(&out, 1, eta).unwrap();
            prop_assert!(lossy.uncertainty_min_eigenvalue() > POSITIVITY_TOL);
        }

        #[test]
        fn loss_is_affine_in_eta(r in 0.0f64..0.8, eta in 0.0f64..1.0) {
            let v = tmsv(r);
            let v0 = apply_loss(&v, 0, 0.0).unwrap().matrix();
            let v1 = apply_loss(&v, 0, 1.0).unwrap().matrix();
            let ve = apply_loss(&v, 0, eta).unwrap().matrix();
            // diagonal block of mode 0 is affine in eta
            for q in 0..2 {
                for k in 0..2 {
                    let lin = (1.0 - eta) * v0[(q, k)] + eta * v1[(q, k)];
                    prop_assert!((ve[(q, k)] - lin).abs() < 1e-12);
                }
            }
        }
    }
}
