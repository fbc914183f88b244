use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_CLAMP: f64 = 1e-10;

/// `n` feature vectors of dimension `d` from a named extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub extractor: String,
    rows: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn new(extractor: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "feature set needs at least 2 vectors, got {}",
                rows.len()
            )));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("feature vectors are empty".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::InvalidInput(format!("feature row {i} has dimension {} not {d}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("feature row {i} is not finite")));
            }
        }
        Ok(Self {
            extractor: extractor.into(),
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut mu = DVector::zeros(self.dim());
        for r in &self.rows {
            mu += DVector::from_column_slice(r);
        }
        mu / self.len() as f64
    }

    /// Unbiased (n − 1) covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let d = self.dim();
        let centred = DMatrix::from_fn(self.len(), d, |i, j| self.rows[i][j] - mu[j]);
        (centred.transpose() * &centred) / (self.len() - 1) as f64
    }

    /// Whitespace-separated numbers, one vector per line; `#` lines ignored.
    pub fn parse(extractor: &str, text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::at_line("feature file", n + 1, e.to_string()))?;
            rows.push(row);
        }
        Self::new(extractor, rows)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| crate::numfmt::format_g(*v, 17)).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `tr((Σ_a Σ_b)^{1/2})` via the eigenvalues of `Σ_b^{1/2} Σ_a Σ_b^{1/2}`.
pub fn trace_sqrt_product(cov_a: &DMatrix<f64>, cov_b: &DMatrix<f64>) -> f64 {
    let root_b = symmetric_sqrt(cov_b);
    let inner = &root_b * cov_a * &root_b;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = inner.symmetric_eigenvalues();
    let lmax = eig.iter().cloned().fold(0.0, f64::max);
    let floor = EIGEN_CLAMP * lmax;
    eig.iter().filter(|&&l| l >= floor && l > 0.0).map(|l| l.sqrt()).sum()
}

pub fn frechet_from_moments(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    if mu_a.len() != mu_b.len() || cov_a.shape() != cov_b.shape() || cov_a.nrows() != mu_a.len() {
        return Err(Error::InvalidInput("feature dimensions differ".into()));
    }
    let diff = (mu_a - mu_b).norm_squared();
    let d = diff + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt_product(cov_a, cov_b);
    if !d.is_finite() {
        return Err(Error::InvalidInput("Fréchet distance is not finite".into()));
    }
    Ok(d.max(0.0))
}

/// `‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`, clamped at 0.
pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    frechet_from_moments(&a.mean(), &a.covariance(), &b.mean(), &b.covariance())
}
