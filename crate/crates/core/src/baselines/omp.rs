use std::f64::consts::FRAC_PI_2;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::sysmodel::array_response;
use crate::{Error, Result};

/// Uniform grid of `G` angles over `[-pi/2, pi/2]` (both ends included)
/// and the matching steering vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleDictionary {
    pub grid: Vec<f64>,
    /// `N_t x G`.
    pub atoms: DMatrix<Complex64>,
}

impl AngleDictionary {
    pub fn new(n_antennas: usize, size: usize, spacing_ratio: f64) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("angle dictionary needs at least 2 atoms, got {size}")));
        }
        let grid: Vec<f64> = (0..size)
            .map(|g| -FRAC_PI_2 + std::f64::consts::PI * g as f64 / (size - 1) as f64)
            .collect();
        let mut atoms = DMatrix::zeros(n_antennas, size);
        for (g, &phi) in grid.iter().enumerate() {
            atoms.set_column(g, &array_response(phi, n_antennas, spacing_ratio));
        }
        Ok(Self { grid, atoms })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Path parameters recovered for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedPaths {
    pub gains: Vec<Complex64>,
    pub aods: Vec<f64>,
}

impl EstimatedPaths {
    /// `h = (1 / L_path) sum_p g_p a(phi_p)`.
    pub fn channel(&self, n_antennas: usize, spacing_ratio: f64) -> DVector<Complex64> {
        let mut h = DVector::zeros(n_antennas);
        for (g, &phi) in self.gains.iter().zip(&self.aods) {
            h += array_response(phi, n_antennas, spacing_ratio) * *g;
        }
        h / Complex64::from(self.gains.len().max(1) as f64)
    }
}

/// State of orthogonal matching pursuit after each selection.
#[derive(Debug, Clone)]
pub struct OmpTrace {
    /// Selected dictionary indices in selection order.
    pub support: Vec<usize>,
    /// Least-squares coefficients on the support.
    pub coefficients: DVector<Complex64>,
    /// Residual norm before the first selection and after each one.
    pub residual_norms: Vec<f64>,
    pub residual: DVector<Complex64>,
}

/// The sensing matrix `Phi = X^H atoms` of one pilot matrix and dictionary.
/// A user observing `y = h^H X + z` sees `y^H = Phi c + z^H` when
/// `h = atoms c`.
#[derive(Debug, Clone)]
pub struct SensingMatrix {
    pub dictionary: AngleDictionary,
    pub phi: DMatrix<Complex64>,
    column_norms: Vec<f64>,
}

impl SensingMatrix {
    pub fn new(pilots: &DMatrix<Complex64>, dictionary: AngleDictionary) -> Result<Self> {
        if pilots.nrows() != dictionary.atoms.nrows() {
            return Err(Error::Shape(format!(
                "pilots span {} antennas, dictionary {}",
                pilots.nrows(),
                dictionary.atoms.nrows()
            )));
        }
        let phi = pilots.adjoint() * &dictionary.atoms;
        let column_norms = phi.column_iter().map(|c| c.norm()).collect();
        Ok(Self { dictionary, phi, column_norms })
    }

    /// Greedy selection of `n_paths` atoms for the received row `y` (length `L`).
    pub fn pursue(&self, y: &DVector<Complex64>, n_paths: usize) -> Result<OmpTrace> {
        let l = self.phi.nrows();
        if y.len() != l {
            return Err(Error::Shape(format!("observation of length {}, expected {l}", y.len())));
        }
        if n_paths > l || n_paths > self.dictionary.len() {
            return Err(Error::Config(format!("cannot recover {n_paths} paths from {l} pilots")));
        }
        let target = y.conjugate();
        let mut residual = target.clone();
        let mut support = Vec::with_capacity(n_paths);
        let mut coefficients = DVector::zeros(0);
        let mut residual_norms = vec![residual.norm()];
        for _ in 0..n_paths {
            let best = (0..self.phi.ncols())
                .filter(|g| !support.contains(g))
                .map(|g| {
                    let corr = self.phi.column(g).dotc(&residual).norm();
                    (g, if self.column_norms[g] > 0.0 { corr / self.column_norms[g] } else { 0.0 })
                })
                .fold(None, |acc: Option<(usize, f64)>, (g, c)| match acc {
                    Some((_, best)) if best >= c => acc,
                    _ => Some((g, c)),
                })
                .map(|(g, _)| g)
                .expect("dictionary has unselected atoms");
            support.push(best);
            let sub = self.phi.select_columns(&support);
            coefficients = least_squares(&sub, &target);
            residual = &target - &sub * &coefficients;
            residual_norms.push(residual.norm());
        }
        Ok(OmpTrace { support, coefficients, residual_norms, residual })
    }

    /// OMP estimate of one user's paths, with gains rescaled by `L_path`.
    pub fn estimate(&self, y: &DVector<Complex64>, n_paths: usize) -> Result<EstimatedPaths> {
        let trace = self.pursue(y, n_paths)?;
        let scale = n_paths as f64;
        Ok(EstimatedPaths {
            gains: trace.coefficients.iter().map(|c| c * scale).collect(),
            aods: trace.support.iter().map(|&g| self.dictionary.grid[g]).collect(),
        })
    }
}

/// One-shot OMP; builds the sensing matrix on every call.
pub fn omp_estimate(
    y: &DVector<Complex64>,
    pilots: &DMatrix<Complex64>,
    dictionary: &AngleDictionary,
    n_paths: usize,
) -> Result<EstimatedPaths> {
    SensingMatrix::new(pilots, dictionary.clone())?.estimate(y, n_paths)
}

/// Minimum-norm least squares via SVD; warns when the columns are
/// numerically dependent.
fn least_squares(a: &DMatrix<Complex64>, b: &DVector<Complex64>) -> DVector<Complex64> {
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.max();
    let eps = top * 1e-12 * a.nrows().max(a.ncols()) as f64;
    if top > 0.0 && svd.rank(eps) < a.ncols() {
        warn!("OMP support is rank deficient; using the pseudo-inverse");
    }
    if top == 0.0 {
        return DVector::zeros(a.ncols());
    }
    svd.solve(b, eps).expect("SVD was computed with both factors")
}
