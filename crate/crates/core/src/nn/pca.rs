use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Off-diagonal Frobenius norm at which the Jacobi sweeps stop, relative to `max(1, ‖C‖_F)`.
const JACOBI_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// Column means removed before projecting.
    pub mean: Vec<f64>,
    /// `p × p′`, row-major; column `c` is the `c`-th principal direction.
    pub projection: Vec<Vec<f64>>,
    /// `n × p′`
    pub reduced: Vec<Vec<f64>>,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance kept by the retained components.
    pub explained: f64,
    /// Set when the data has no variance; the single retained column is zero.
    pub degenerate: bool,
}

impl Pca {
    pub fn components(&self) -> usize {
        self.projection.first().map_or(0, Vec::len)
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        transform(&self.mean, &self.projection, row)
    }
}

fn transform(mean: &[f64], projection: &[Vec<f64>], row: &[f64]) -> Vec<f64> {
    let k = projection.first().map_or(0, Vec::len);
    let mut out = vec![0.0; k];
    for (j, (x, m)) in row.iter().zip(mean).enumerate() {
        let c = x - m;
        for (o, p) in out.iter_mut().zip(&projection[j]) {
            *o += c * p;
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors as columns of a row-major matrix, unsorted.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let frob = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let tol = JACOBI_TOL * frob.max(1.0);
    let off = |a: &[Vec<f64>]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s.sqrt()
    };
    for _ in 0..MAX_SWEEPS {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Projects mean-centred rows onto the fewest leading principal directions whose
/// eigenvalue mass reaches `explained` of the total.
pub fn pca_reduce(data: &[Vec<f64>], explained: f64) -> Result<Pca> {
    let n = data.len();
    if n < 2 {
        return Err(invalid("data", format!("PCA needs at least 2 rows, got {n}")));
    }
    if !(explained > 0.0 && explained <= 1.0) {
        return Err(invalid("explained", format!("must lie in (0, 1], got {explained}")));
    }
    let p = data[0].len();
    if p == 0 {
        return Err(invalid("data", "rows have no columns"));
    }
    if let Some(r) = data.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: r.len(),
        });
    }
    let mut mean = vec![0.0; p];
    for r in data {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0; p]; p];
    for r in data {
        for i in 0..p {
            let ci = r[i] - mean[i];
            for j in i..p {
                cov[i][j] += ci * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..p {
        for j in i..p {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }

    let (values, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();

    let (keep, degenerate, kept_share) = if total <= 0.0 {
        (1, true, 0.0)
    } else {
        let mut acc = 0.0;
        let mut keep = p;
        for (i, ev) in eigenvalues.iter().enumerate() {
            acc += ev;
            if acc >= explained * total * (1.0 - 1e-12) {
                keep = i + 1;
                break;
            }
        }
        (keep, false, eigenvalues[..keep].iter().sum::<f64>() / total)
    };
    let projection: Vec<Vec<f64>> = (0..p)
        .map(|row| {
            order[..keep]
                .iter()
                .map(|&c| if degenerate { 0.0 } else { vectors[row][c] })
                .collect()
        })
        .collect();
    let reduced = data.iter().map(|r| transform(&mean, &projection, r)).collect();
    Ok(Pca {
        mean,
        projection,
        reduced,
        eigenvalues,
        explained: kept_share,
        degenerate,
    })
}

/// Writes `mean,pc1,…,pcK` rows, one per input feature.
pub fn save_projection(path: &Path, pca: &Pca) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# pisgd-projection v1")?;
    write!(w, "mean")?;
    for c in 1..=pca.components() {
        write!(w, ",pc{c}")?;
    }
    writeln!(w)?;
    for (m, row) in pca.mean.iter().zip(&pca.projection) {
        write!(w, "{m}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`save_projection`] as `(mean, projection)`.
pub fn load_projection(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let rows = super::read_matrix_csv(path)?;
    if rows[0].len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: "projection needs a mean column and at least one component".into(),
        });
    }
    let mean = rows.iter().map(|r| r[0]).collect();
    let projection = rows.into_iter().map(|r| r[1..].to_vec()).collect();
    Ok((mean, projection))
}
