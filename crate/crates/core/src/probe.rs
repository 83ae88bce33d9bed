//! Ridge-regression linear probes.
//!
//! Used to check what a set of embeddings linearly encodes: speaker identity
//! (one-hot regression, argmax decoding) or generating content factors (R²).

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RidgeProbe {
    x_mean: Array1<f64>,
    y_mean: Array1<f64>,
    coef: Array2<f64>,
}

/// Solves `a · z = b` for symmetric positive-definite `a` (Cholesky).
fn cholesky_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::InvalidConfig("probe system is not positive definite".into()));
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    let mut z = b.clone();
    for mut col in z.columns_mut() {
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l[[i, k]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l[[k, i]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
    }
    Ok(z)
}

impl RidgeProbe {
    pub fn fit(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, ridge: f64) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::mismatch("probe targets", x.nrows(), y.nrows()));
        }
        if x.nrows() == 0 {
            return Err(Error::Empty("probe training set"));
        }
        let x_mean = x.mean_axis(Axis(0)).ok_or(Error::Empty("probe training set"))?;
        let y_mean = y.mean_axis(Axis(0)).ok_or(Error::Empty("probe training set"))?;
        let xc = &x - &x_mean;
        let yc = &y - &y_mean;
        let mut gram = xc.t().dot(&xc);
        for i in 0..gram.nrows() {
            gram[[i, i]] += ridge;
        }
        let coef = cholesky_solve(&gram, &xc.t().dot(&yc))?;
        Ok(Self { x_mean, y_mean, coef })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.x_mean).dot(&self.coef) + &self.y_mean
    }
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        y[[i, l]] = 1.0;
    }
    y
}

/// Held-out accuracy of a one-hot ridge classifier.
pub fn classification_accuracy(
    train_x: ArrayView2<'_, f64>,
    train_labels: &[usize],
    test_x: ArrayView2<'_, f64>,
    test_labels: &[usize],
    ridge: f64,
) -> Result<f64> {
    let n_classes = train_labels
        .iter()
        .chain(test_labels)
        .map(|l| l + 1)
        .max()
        .unwrap_or(0);
    let probe = RidgeProbe::fit(train_x, one_hot(train_labels, n_classes).view(), ridge)?;
    let scores = probe.predict(test_x);
    let correct = scores
        .rows()
        .into_iter()
        .zip(test_labels)
        .filter(|(row, &l)| crate::classifier::argmax(row.view()) == l)
        .count();
    Ok(correct as f64 / test_labels.len().max(1) as f64)
}

/// Coefficient of determination averaged over target columns.
pub fn r_squared(truth: ArrayView2<'_, f64>, predicted: ArrayView2<'_, f64>) -> f64 {
    let mean = truth.mean_axis(Axis(0)).expect("nonempty targets");
    let mut total = 0.0;
    for j in 0..truth.ncols() {
        let ss_res: f64 = truth
            .column(j)
            .iter()
            .zip(predicted.column(j))
            .map(|(t, p)| (t - p).powi(2))
            .sum();
        let ss_tot: f64 = truth.column(j).iter().map(|t| (t - mean[j]).powi(2)).sum();
        total += 1.0 - ss_res / ss_tot;
    }
    total / truth.ncols() as f64
}
