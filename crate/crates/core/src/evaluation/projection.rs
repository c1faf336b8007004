//! Two-dimensional PCA projections for plotting latent clusters.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Scores on the top two principal components. Each component's sign is
/// fixed so that its largest-magnitude loading is positive.
pub fn pca_2d(latents: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, d) = latents.dim();
    if n < 3 {
        return Err(Error::Invalid(format!("projection needs at least 3 rows, got {n}")));
    }
    let mean = latents.mean_axis(Axis(0)).expect("non-empty");
    let centred = &latents - &mean;
    let m = DMatrix::from_row_iterator(n, d, centred.iter().copied());
    let cov = (m.transpose() * &m) / (n as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = Array2::zeros((n, 2));
    for (k, &c) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(c).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            v = -v;
        }
        let scores = &m * v;
        for i in 0..n {
            out[[i, k]] = scores[i];
        }
    }
    Ok(out)
}

/// CSV with columns `x,y,label`.
pub fn export_projection_2d(latents: ArrayView2<f64>, labels: &[String]) -> Result<String> {
    if labels.len() != latents.nrows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), latents.nrows())));
    }
    let p = pca_2d(latents)?;
    let mut s = String::from("x,y,label\n");
    for (row, label) in p.rows().into_iter().zip(labels) {
        writeln!(s, "{:?},{:?},{}", row[0], row[1], label.replace([',', '\n'], "_")).expect("string write");
    }
    Ok(s)
}

/// Inverse of [`export_projection_2d`].
pub fn read_projection(text: &str) -> Result<(Array2<f64>, Vec<String>)> {
    let mut lines = text.lines();
    if lines.next() != Some("x,y,label") {
        return Err(Error::Invalid("projection file lacks the x,y,label header".into()));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.filter(|l| !l.is_empty()).enumerate() {
        let mut parts = line.splitn(3, ',');
        let mut num = |what: &str| -> Result<f64> {
            parts
                .next()
                .ok_or_else(|| Error::Invalid(format!("line {}: missing {what}", i + 2)))?
                .parse()
                .map_err(|e| Error::Invalid(format!("line {}: bad {what}: {e}", i + 2)))
        };
        values.push(num("x")?);
        values.push(num("y")?);
        labels.push(parts.next().unwrap_or("").to_string());
    }
    let m = Array2::from_shape_vec((labels.len(), 2), values).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((m, labels))
}
