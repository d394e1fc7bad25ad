//! Weighted normal equations and Hermitian positive-definite solves.
//!
//! Both WPE variants reduce, per frequency band, to minimizing
//! `sum_n |t_n - w^H v_n|^2 / lambda_n` over the prediction filter `w`. The
//! minimizer solves `Z w = q` with `Z = sum v v^H / lambda` and
//! `q = sum v conj(t) / lambda`.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative diagonal loading used by the dereverberation solvers.
pub const DEFAULT_LOADING: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    dim: usize,
    /// Row-major, Hermitian.
    z: Vec<Complex64>,
    q: Vec<Complex64>,
}

/// Cholesky factorization broke down at the given pivot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

impl NormalEquations {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            z: vec![Complex64::default(); dim * dim],
            q: vec![Complex64::default(); dim],
        }
    }

    /// Builds the system from explicit parts. `z` is row-major and must be
    /// Hermitian to within 1e-12.
    pub fn from_parts(dim: usize, z: Vec<Complex64>, q: Vec<Complex64>) -> Result<Self> {
        if dim == 0 || z.len() != dim * dim || q.len() != dim {
            return Err(Error::invalid("normal equation dimensions are inconsistent"));
        }
        for i in 0..dim {
            for j in 0..=i {
                if (z[i * dim + j] - z[j * dim + i].conj()).norm() > 1e-12 {
                    return Err(Error::invalid("matrix is not Hermitian"));
                }
            }
        }
        Ok(Self { dim, z, q })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn z(&self, i: usize, j: usize) -> Complex64 {
        self.z[i * self.dim + j]
    }

    pub fn matrix(&self) -> &[Complex64] {
        &self.z
    }

    pub fn rhs(&self) -> &[Complex64] {
        &self.q
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.z[i * self.dim + i].re).sum()
    }

    /// Adds one `(v, target, lambda)` term.
    pub fn add_term(&mut self, v: &[Complex64], target: Complex64, lambda: f64) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::invalid(format!(
                "regressor of length {} for a {}-dimensional system",
                v.len(),
                self.dim
            )));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("weight {lambda} must be positive")));
        }
        let inv = 1.0 / lambda;
        let tc = target.conj();
        for i in 0..self.dim {
            let vi = v[i] * inv;
            for j in 0..=i {
                self.z[i * self.dim + j] += vi * v[j].conj();
            }
            self.q[i] += vi * tc;
        }
        self.mirror_lower();
        Ok(())
    }

    fn mirror_lower(&mut self) {
        let d = self.dim;
        for i in 0..d {
            self.z[i * d + i].im = 0.0;
            for j in 0..i {
                self.z[j * d + i] = self.z[i * d + j].conj();
            }
        }
    }

    /// Solves `(Z + loading * trace(Z)/dim * I) w = q` by Cholesky.
    ///
    /// An all-zero `Z` (every regressor was zero) yields the zero filter.
    pub fn solve(&self, loading: f64) -> std::result::Result<Vec<Complex64>, NotPositiveDefinite> {
        let d = self.dim;
        let trace = self.trace();
        if trace == 0.0 {
            return Ok(vec![Complex64::default(); d]);
        }
        let delta = loading * trace / d as f64;
        let mut l = self.z.clone();
        for i in 0..d {
            l[i * d + i] += delta;
        }
        cholesky_in_place(&mut l, d)?;
        let w = cholesky_solve(&l, d, &self.q);
        if w.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(NotPositiveDefinite { pivot: d });
        }
        Ok(w)
    }
}

/// Sums `(v, target, lambda)` terms into normal equations of dimension `dim`.
pub fn accumulate_normal_equations<'a, I>(dim: usize, terms: I) -> Result<NormalEquations>
where
    I: IntoIterator<Item = (&'a [Complex64], Complex64, f64)>,
{
    let mut ne = NormalEquations::zeros(dim);
    for (v, t, lambda) in terms {
        ne.add_term(v, t, lambda)?;
    }
    Ok(ne)
}

/// Solves the loaded system, see [`NormalEquations::solve`].
pub fn solve_hpd(ne: &NormalEquations, loading: f64) -> std::result::Result<Vec<Complex64>, NotPositiveDefinite> {
    ne.solve(loading)
}

/// Overwrites the lower triangle of `a` (row-major `d x d`) with `L` such
/// that `A = L L^H`.
fn cholesky_in_place(a: &mut [Complex64], d: usize) -> std::result::Result<(), NotPositiveDefinite> {
    for j in 0..d {
        let mut diag = a[j * d + j].re;
        for k in 0..j {
            diag -= a[j * d + k].norm_sqr();
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        a[j * d + j] = Complex64::new(ljj, 0.0);
        let inv = 1.0 / ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            let (ri, rj) = (i * d, j * d);
            for k in 0..j {
                s -= a[ri + k] * a[rj + k].conj();
            }
            a[i * d + j] = s * inv;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[Complex64], d: usize, b: &[Complex64]) -> Vec<Complex64> {
    let mut y = b.to_vec();
    for i in 0..d {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i].re;
    }
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k * d + i].conj() * y[k];
        }
        y[i] = s / l[i * d + i].re;
    }
    y
}

/// Regressor columns of one band laid out for fast weighted Gram products.
///
/// Column `i` holds entry `i` of every regressor, pre-scaled by
/// `1/sqrt(lambda_n)`, with real and imaginary parts stored separately so the
/// inner products vectorize.
pub struct ScaledColumns {
    frames: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
    target_re: Vec<f64>,
    target_im: Vec<f64>,
}

impl ScaledColumns {
    /// `column(i, n)` returns entry `i` of the regressor of frame `n`.
    pub fn build(
        dim: usize,
        frames: usize,
        column: impl Fn(usize, usize) -> Complex64,
        targets: &[Complex64],
        lambdas: &[f64],
    ) -> Result<Self> {
        if targets.len() != frames || lambdas.len() != frames {
            return Err(Error::invalid("targets and weights must have one entry per frame"));
        }
        let mut scale = Vec::with_capacity(frames);
        for &l in lambdas {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::invalid(format!("weight {l} must be positive")));
            }
            scale.push(1.0 / l.sqrt());
        }
        let mut re = vec![vec![0.0; frames]; dim];
        let mut im = vec![vec![0.0; frames]; dim];
        for i in 0..dim {
            for n in 0..frames {
                let v = column(i, n) * scale[n];
                re[i][n] = v.re;
                im[i][n] = v.im;
            }
        }
        let target_re = targets.iter().zip(&scale).map(|(t, s)| t.re * s).collect();
        let target_im = targets.iter().zip(&scale).map(|(t, s)| t.im * s).collect();
        Ok(Self {
            frames,
            re,
            im,
            target_re,
            target_im,
        })
    }

    pub fn normal_equations(&self) -> NormalEquations {
        let d = self.re.len();
        let mut ne = NormalEquations::zeros(d);
        if self.frames == 0 {
            return ne;
        }
        for i in 0..d {
            for j in 0..=i {
                ne.z[i * d + j] = cdot(&self.re[i], &self.im[i], &self.re[j], &self.im[j]);
            }
            ne.q[i] = cdot(&self.re[i], &self.im[i], &self.target_re, &self.target_im);
        }
        ne.mirror_lower();
        ne
    }
}

/// `sum_n a_n conj(b_n)` over split real/imaginary slices.
fn cdot(ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64]) -> Complex64 {
    const W: usize = 4;
    let mut re = [0.0f64; W];
    let mut im = [0.0f64; W];
    let chunks = ar.len() / W;
    for c in 0..chunks {
        let s = c * W;
        let (xr, xi, yr, yi) = (&ar[s..s + W], &ai[s..s + W], &br[s..s + W], &bi[s..s + W]);
        for l in 0..W {
            re[l] += xr[l] * yr[l] + xi[l] * yi[l];
            im[l] += xi[l] * yr[l] - xr[l] * yi[l];
        }
    }
    let mut sr = (re[0] + re[1]) + (re[2] + re[3]);
    let mut si = (im[0] + im[1]) + (im[2] + im[3]);
    for n in chunks * W..ar.len() {
        sr += ar[n] * br[n] + ai[n] * bi[n];
        si += ai[n] * br[n] - ar[n] * bi[n];
    }
    Complex64::new(sr, si)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn random_terms(seed: u64, dim: usize, count: usize) -> Vec<(Vec<Complex64>, Complex64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let v = (0..dim).map(|_| rand_c(&mut rng)).collect();
                (v, rand_c(&mut rng), rng.random_range(0.1..3.0))
            })
            .collect()
    }

    /// Gaussian elimination with partial pivoting.
    fn gauss_solve(mut a: Vec<Complex64>, mut b: Vec<Complex64>, d: usize) -> Vec<Complex64> {
        for col in 0..d {
            let piv = (col..d)
                .max_by(|&x, &y| a[x * d + col].norm().total_cmp(&a[y * d + col].norm()))
                .unwrap();
            for k in 0..d {
                a.swap(col * d + k, piv * d + k);
            }
            b.swap(col, piv);
            for r in col + 1..d {
                let f = a[r * d + col] / a[col * d + col];
                for k in col..d {
                    let v = a[col * d + k];
                    a[r * d + k] -= f * v;
                }
                let v = b[col];
                b[r] -= f * v;
            }
        }
        let mut x = vec![Complex64::default(); d];
        for r in (0..d).rev() {
            let mut s = b[r];
            for k in r + 1..d {
                s -= a[r * d + k] * x[k];
            }
            x[r] = s / a[r * d + r];
        }
        x
    }

    fn objective(terms: &[(Vec<Complex64>, Complex64, f64)], w: &[Complex64]) -> f64 {
        terms
            .iter()
            .map(|(v, t, l)| {
                let pred: Complex64 = w.iter().zip(v).map(|(wi, vi)| wi.conj() * vi).sum();
                (t - pred).norm_sqr() / l
            })
            .sum()
    }

    #[test]
    fn single_term_expansion() {
        let v = [c(1.0, 0.0), c(0.0, 1.0)];
        let ne = accumulate_normal_equations(2, [(&v[..], c(2.0, 0.0), 1.0)]).unwrap();
        assert_eq!(ne.z(0, 0), c(1.0, 0.0));
        assert_eq!(ne.z(0, 1), c(0.0, -1.0));
        assert_eq!(ne.z(1, 0), c(0.0, 1.0));
        assert_eq!(ne.z(1, 1), c(1.0, 0.0));
        // q_m = v_m * conj(target)
        assert_eq!(ne.rhs(), &[c(2.0, 0.0), c(0.0, 2.0)]);
    }

    #[test]
    fn empty_sequence_is_zero() {
        let ne = accumulate_normal_equations(3, std::iter::empty()).unwrap();
        assert!(ne.matrix().iter().all(|v| *v == Complex64::default()));
        assert!(ne.rhs().iter().all(|v| *v == Complex64::default()));
    }

    #[test]
    fn rejects_bad_weights_and_lengths() {
        let v = [c(1.0, 0.0)];
        assert!(accumulate_normal_equations(1, [(&v[..], c(1.0, 0.0), 0.0)]).is_err());
        assert!(accumulate_normal_equations(1, [(&v[..], c(1.0, 0.0), -1.0)]).is_err());
        assert!(accumulate_normal_equations(2, [(&v[..], c(1.0, 0.0), 1.0)]).is_err());
    }

    #[test]
    fn accumulation_matches_naive_sum() {
        let terms = random_terms(7, 5, 100);
        let ne = accumulate_normal_equations(5, terms.iter().map(|(v, t, l)| (&v[..], *t, *l))).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut s = Complex64::default();
                for (v, _, l) in &terms {
                    s += v[i] * v[j].conj() / l;
                }
                assert!((ne.z(i, j) - s).norm() < 1e-12);
            }
            let mut s = Complex64::default();
            for (v, t, l) in &terms {
                s += v[i] * t.conj() / l;
            }
            assert!((ne.rhs()[i] - s).norm() < 1e-12);
        }
    }

    #[test]
    fn scaled_columns_match_term_accumulation() {
        let terms = random_terms(8, 6, 37);
        let ne = accumulate_normal_equations(6, terms.iter().map(|(v, t, l)| (&v[..], *t, *l))).unwrap();
        let targets: Vec<_> = terms.iter().map(|t| t.1).collect();
        let lambdas: Vec<_> = terms.iter().map(|t| t.2).collect();
        let cols = ScaledColumns::build(6, 37, |i, n| terms[n].0[i], &targets, &lambdas).unwrap();
        let fast = cols.normal_equations();
        for (a, b) in fast.matrix().iter().zip(ne.matrix()) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in fast.rhs().iter().zip(ne.rhs()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_and_diagonal_systems() {
        let mut z = vec![Complex64::default(); 4];
        z[0] = c(1.0, 0.0);
        z[3] = c(1.0, 0.0);
        let ne = NormalEquations::from_parts(2, z, vec![c(3.0, 0.0), c(0.0, 4.0)]).unwrap();
        let w = ne.solve(0.0).unwrap();
        assert!((w[0] - c(3.0, 0.0)).norm() < 1e-15 && (w[1] - c(0.0, 4.0)).norm() < 1e-15);

        let z = vec![c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(4.0, 0.0)];
        let ne = NormalEquations::from_parts(2, z, vec![c(2.0, 0.0), c(4.0, 0.0)]).unwrap();
        let w = ne.solve(0.0).unwrap();
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-15 && (w[1] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn random_hpd_matches_elimination() {
        let terms = random_terms(9, 8, 40);
        let ne = accumulate_normal_equations(8, terms.iter().map(|(v, t, l)| (&v[..], *t, *l))).unwrap();
        let w = ne.solve(0.0).unwrap();
        let mut r2 = 0.0;
        for i in 0..8 {
            let zi: Complex64 = (0..8).map(|j| ne.z(i, j) * w[j]).sum();
            r2 += (zi - ne.rhs()[i]).norm_sqr();
        }
        let qn: f64 = ne.rhs().iter().map(|v| v.norm_sqr()).sum();
        assert!((r2 / qn).sqrt() < 1e-10);
        let oracle = gauss_solve(ne.matrix().to_vec(), ne.rhs().to_vec(), 8);
        for (a, b) in w.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-9 * b.norm().max(1.0));
        }
    }

    #[test]
    fn zero_matrix_gives_zero_filter_and_singular_fails_without_loading() {
        let ne = NormalEquations::zeros(3);
        assert_eq!(ne.solve(DEFAULT_LOADING).unwrap(), vec![Complex64::default(); 3]);

        // Rank one, 2x2.
        let v = [c(1.0, 0.0), c(1.0, 0.0)];
        let ne = accumulate_normal_equations(2, [(&v[..], c(1.0, 0.0), 1.0)]).unwrap();
        assert!(ne.solve(0.0).is_err());
        assert!(ne.solve(DEFAULT_LOADING).is_ok());
    }

    #[test]
    fn non_hermitian_rejected() {
        let z = vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)];
        assert!(NormalEquations::from_parts(2, z, vec![c(0.0, 0.0); 2]).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn solution_minimizes_weighted_objective(seed in 0u64..10_000, scale in 1e-3f64..1.0) {
            let terms = random_terms(seed, 4, 20);
            let ne = accumulate_normal_equations(4, terms.iter().map(|(v, t, l)| (&v[..], *t, *l))).unwrap();
            let w = ne.solve(0.0).unwrap();
            let best = objective(&terms, &w);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
            let pert: Vec<Complex64> = w.iter().map(|wi| wi + rand_c(&mut rng) * scale).collect();
            proptest::prop_assert!(best <= objective(&terms, &pert) + 1e-12);
        }

        #[test]
        fn permutation_invariance(seed in 0u64..10_000) {
            let mut terms = random_terms(seed, 5, 30);
            let a = accumulate_normal_equations(5, terms.iter().map(|(v, t, l)| (&v[..], *t, *l)))
                .unwrap().solve(DEFAULT_LOADING).unwrap();
            terms.reverse();
            terms.swap(3, 17);
            let b = accumulate_normal_equations(5, terms.iter().map(|(v, t, l)| (&v[..], *t, *l)))
                .unwrap().solve(DEFAULT_LOADING).unwrap();
            for (x, y) in a.iter().zip(&b) {
                proptest::prop_assert!((x - y).norm() < 1e-10 * x.norm().max(1.0));
            }
        }
    }
}
