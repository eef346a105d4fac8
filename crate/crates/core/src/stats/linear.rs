//! Ordinary least squares via the normal equations.

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::model::Matrix;

/// Linear regression weights: one coefficient per design column plus an
/// intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// Returns None when a pivot degenerates.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter().map(|x| x.abs()))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).expect("finite pivots"))?;
        if a[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

fn normal_equations(x: &Matrix, y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    // Augmented design [1 | X]: index 0 is the intercept column.
    let p = x.cols + 1;
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for r in 0..x.rows {
        let row = x.row(r);
        for i in 0..p {
            let xi = if i == 0 { 1.0 } else { row[i - 1] };
            b[i] += xi * y[r];
            for j in i..p {
                let xj = if j == 0 { 1.0 } else { row[j - 1] };
                a[i][j] += xi * xj;
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
    }
    (a, b)
}

/// Least-squares fit. Singular systems fall back to a ridge-damped solve
/// (lambda = 1e-8 on the normal-matrix diagonal).
pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<LinearModel, StatsError> {
    if x.rows != y.len() {
        return Err(StatsError::LengthMismatch { left: x.rows, right: y.len() });
    }
    if x.rows < x.cols + 1 {
        return Err(StatsError::RankDeficient);
    }
    let (a, b) = normal_equations(x, y);
    let solution = solve_dense(a.clone(), b.clone()).or_else(|| {
        let mut damped = a;
        for (i, row) in damped.iter_mut().enumerate() {
            row[i] += 1e-8;
        }
        solve_dense(damped, b)
    });
    match solution {
        Some(beta) => Ok(LinearModel { intercept: beta[0], coefficients: beta[1..].to_vec() }),
        None => Err(StatsError::RankDeficient),
    }
}

pub fn ols_predict(model: &LinearModel, x: &Matrix) -> Vec<f64> {
    assert_eq!(model.coefficients.len(), x.cols, "coefficient count must match design columns");
    (0..x.rows)
        .map(|r| {
            model.intercept + x.row(r).iter().zip(&model.coefficients).map(|(xi, wi)| xi * wi).sum::<f64>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        Matrix {
            rows,
            cols,
            data,
            col_names: (0..cols).map(|c| format!("x{c}")).collect(),
            row_entities: (0..rows).collect(),
        }
    }

    #[test]
    fn recovers_exact_line() {
        let x = matrix(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let y: Vec<f64> = x.data.iter().map(|v| 2.0 * v + 1.0).collect();
        let m = ols_fit(&x, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-8);
        assert!((m.intercept - 1.0).abs() < 1e-8);
    }

    #[test]
    fn constant_target_gives_zero_slope() {
        let x = matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let y = vec![5.0; 4];
        let m = ols_fit(&x, &y).unwrap();
        assert!(m.coefficients[0].abs() < 1e-9);
        assert!((m.intercept - 5.0).abs() < 1e-9);
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        // Deterministic pseudo-random 20x3 system.
        let mut rng = super::super::split::SplitMix64::new(11);
        let mut unit = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let rows = 20;
        let cols = 3;
        let data: Vec<f64> = (0..rows * cols).map(|_| unit() * 4.0 - 2.0).collect();
        let x = matrix(rows, cols, data);
        let y: Vec<f64> = (0..rows).map(|r| x.at(r, 0) - 0.5 * x.at(r, 2) + unit()).collect();
        let m = ols_fit(&x, &y).unwrap();
        let pred = ols_predict(&m, &x);
        for c in 0..cols {
            let dot: f64 = (0..rows).map(|r| (y[r] - pred[r]) * x.at(r, c)).sum();
            assert!(dot.abs() < 1e-6, "column {c} residual dot {dot}");
        }
        let sum: f64 = (0..rows).map(|r| y[r] - pred[r]).sum();
        assert!(sum.abs() < 1e-6);
    }

    #[test]
    fn duplicate_columns_fall_back_to_ridge() {
        let x = matrix(6, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0, 5.0, 6.0, 6.0]);
        let y = vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0];
        let m = ols_fit(&x, &y).unwrap();
        let pred = ols_predict(&m, &x);
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t).abs() < 1e-3);
        }
    }

    #[test]
    fn underdetermined_errors() {
        let x = matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(matches!(ols_fit(&x, &[1.0, 2.0]), Err(StatsError::RankDeficient)));
    }
}
