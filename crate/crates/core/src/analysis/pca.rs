use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Relative eigenvalue size below which a direction counts as null.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `[n_components × features]`, unit rows.
    pub components: Tensor,
    /// `[samples × n_components]`.
    pub projections: Tensor,
    /// Fraction of total variance per component, non-increasing.
    pub explained_variance_ratio: Vec<f64>,
}

/// Projects mean-centred rows onto the top eigenvectors of the sample
/// covariance. Each component is signed so that its largest-magnitude
/// loading is positive.
pub fn pca_project(x: &Tensor, n_components: usize) -> Result<Pca> {
    if x.ndim() != 2 {
        return Err(Error::shape("pca_project", x.shape(), &[]));
    }
    let (n, m) = (x.shape()[0], x.shape()[1]);
    if n_components == 0 || n < n_components || n < 2 {
        return Err(Error::Validation(format!("cannot take {n_components} components from {n} rows")));
    }
    let data = DMatrix::from_row_slice(n, m, x.data());
    let mean: Vec<f64> = (0..m).map(|j| data.column(j).mean()).collect();
    let mut centred = data;
    for j in 0..m {
        centred.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order.iter().filter(|&&i| top > 0.0 && eig.eigenvalues[i] > RANK_TOL * top).count();
    if n_components > rank {
        return Err(Error::Validation(format!("requested {n_components} components but the data has rank {rank}")));
    }
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut comps = DMatrix::zeros(n_components, m);
    let mut ratios = Vec::with_capacity(n_components);
    for (r, &i) in order.iter().take(n_components).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.neg_mut();
        }
        comps.row_mut(r).copy_from(&v.transpose());
        ratios.push(eig.eigenvalues[i] / total);
    }
    let proj = &centred * comps.transpose();
    let to_tensor = |mat: &DMatrix<f64>| -> Result<Tensor> {
        let (r, c) = mat.shape();
        Tensor::new(vec![r, c], (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| mat[(i, j)]).collect())
    };
    Ok(Pca { mean, components: to_tensor(&comps)?, projections: to_tensor(&proj)?, explained_variance_ratio: ratios })
}

/// `sample_id,pc1,pc2,...,label` rows.
pub fn projections_csv(p: &Pca, labels: &[f64]) -> String {
    let k = p.explained_variance_ratio.len();
    let mut s = String::from("sample_id");
    for c in 1..=k {
        s.push_str(&format!(",pc{c}"));
    }
    s.push_str(",label\n");
    for (i, row) in p.projections.data().chunks(k).enumerate() {
        s.push_str(&i.to_string());
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{}\n", labels.get(i).copied().unwrap_or(f64::NAN)));
    }
    s
}
