use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::plan::ParameterBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    /// Full quadratic polynomial, least squares.
    Polynomial2,
    /// Gaussian radial basis interpolant with a constant tail.
    RbfGaussian,
}

impl SurrogateKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "polynomial2" | "poly2" => Some(Self::Polynomial2),
            "rbf_gaussian" | "rbf" => Some(Self::RbfGaussian),
            _ => None,
        }
    }
}

/// Fitted form of one scalar response, on inputs normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ResponseFit {
    Polynomial {
        coefficients: Vec<f64>,
    },
    Rbf {
        centers: Vec<Vec<f64>>,
        weights: Vec<f64>,
        constant: f64,
        shape: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAccuracy {
    pub name: String,
    pub rmse: f64,
    pub relative_rmse: f64,
    /// `None` when the response has zero variance.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub kind: SurrogateKind,
    pub k: usize,
    /// Size of the largest held-out fold.
    pub holdout_size: usize,
    pub seed: u64,
    pub responses: Vec<ResponseAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub kind: SurrogateKind,
    pub param_box: ParameterBox,
    pub input_names: Vec<String>,
    pub response_names: Vec<String>,
    pub fits: Vec<ResponseFit>,
    #[serde(default)]
    pub accuracy: Option<AccuracyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub values: Vec<f64>,
    /// The point lies outside the fitted box.
    pub extrapolated: bool,
}

/// Names of the quadratic basis terms in evaluation order.
pub fn quadratic_terms(names: &[String]) -> Vec<String> {
    let d = names.len();
    let mut terms = vec!["1".to_string()];
    terms.extend(names.iter().cloned());
    for i in 0..d {
        for j in i..d {
            terms.push(if i == j {
                format!("{}^2", names[i])
            } else {
                format!("{}*{}", names[i], names[j])
            });
        }
    }
    terms
}

fn quadratic_basis(u: &[f64]) -> Vec<f64> {
    let d = u.len();
    let mut b = Vec::with_capacity(1 + d + d * (d + 1) / 2);
    b.push(1.0);
    b.extend_from_slice(u);
    for i in 0..d {
        for j in i..d {
            b.push(u[i] * u[j]);
        }
    }
    b
}

/// Columns that are (numerically) combinations of earlier columns, found
/// by Gram–Schmidt in column order.
fn dependent_columns(a: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..a.ncols() {
        let col = a.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        let n = v.norm();
        if norm0 == 0.0 || n <= 1e-9 * norm0 {
            dependent.push(j);
        } else {
            basis.push(v / n);
        }
    }
    dependent
}

fn gaussian(r2: f64, shape: f64) -> f64 {
    (-shape * shape * r2).exp()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const RBF_RIDGE: f64 = 1e-10;

/// Saddle-point matrix `[[Phi + ridge I, 1], [1^T, 0]]`.
fn rbf_system(centers: &[Vec<f64>], shape: f64) -> DMatrix<f64> {
    let n = centers.len();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = gaussian(sq_dist(&centers[i], &centers[j]), shape);
        }
        a[(i, i)] += RBF_RIDGE;
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0;
    }
    a
}

/// Shape parameters tried by leave-one-out selection.
pub fn shape_grid() -> Vec<f64> {
    (0..=30).map(|i| 10f64.powf(-1.0 + 2.5 * i as f64 / 30.0)).collect()
}

struct RbfCandidate {
    shape: f64,
    loo: f64,
    weights: Vec<f64>,
    constant: f64,
}

/// Fit at one shape. Returns `None` when the system is singular or the
/// interpolant misses its own data by more than `1e-7` of the response
/// scale.
fn rbf_candidate(inv: &DMatrix<f64>, centers: &[Vec<f64>], y: &[f64], shape: f64) -> Option<RbfCandidate> {
    let n = centers.len();
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        rhs[i] = y[i];
    }
    let c = inv * rhs;
    if c.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        let mut s = c[n];
        for j in 0..n {
            s += c[j] * gaussian(sq_dist(&centers[i], &centers[j]), shape);
        }
        if (s - y[i]).abs() > 1e-7 * scale {
            return None;
        }
    }
    // Leave-one-out residuals e_i = c_i / (A^-1)_ii.
    let mut loo = 0.0;
    for i in 0..n {
        let d = inv[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        loo += (c[i] / d).powi(2);
    }
    Some(RbfCandidate {
        shape,
        loo,
        weights: c.iter().take(n).copied().collect(),
        constant: c[n],
    })
}

fn fit_rbf(centers: &[Vec<f64>], y: &[f64]) -> Result<ResponseFit> {
    let mut best: Option<RbfCandidate> = None;
    for shape in shape_grid() {
        let Some(inv) = rbf_system(centers, shape).try_inverse() else {
            continue;
        };
        if let Some(c) = rbf_candidate(&inv, centers, y, shape) {
            if best.as_ref().is_none_or(|b| c.loo < b.loo) {
                best = Some(c);
            }
        }
    }
    let b = best.ok_or_else(|| {
        Error::Surrogate("no shape parameter gives a well-conditioned RBF interpolant".into())
    })?;
    Ok(ResponseFit::Rbf {
        centers: centers.to_vec(),
        weights: b.weights,
        constant: b.constant,
        shape: b.shape,
    })
}

/// Fit one surrogate per response.
pub fn fit(dataset: &Dataset, kind: SurrogateKind) -> Result<SurrogateModel> {
    fit_rows(
        &dataset.param_box,
        &dataset.response_names,
        &dataset.points(),
        &(0..dataset.response_names.len()).map(|j| dataset.response(j)).collect::<Vec<_>>(),
        kind,
    )
}

/// As [`fit`], from raw points and response columns.
pub fn fit_rows(
    param_box: &ParameterBox,
    response_names: &[String],
    points: &[Vec<f64>],
    responses: &[Vec<f64>],
    kind: SurrogateKind,
) -> Result<SurrogateModel> {
    let names = param_box.names();
    let n = points.len();
    let normalized: Vec<Vec<f64>> = points
        .iter()
        .map(|p| param_box.normalize(p))
        .collect::<Result<_>>()?;
    if responses.len() != response_names.len() || responses.iter().any(|r| r.len() != n) {
        return Err(Error::Surrogate("response columns do not match the points".into()));
    }
    let fits = match kind {
        SurrogateKind::Polynomial2 => {
            let terms = quadratic_terms(&names);
            if n < terms.len() {
                return Err(Error::Surrogate(format!(
                    "quadratic fit in {} dimensions needs at least {} rows (got {n})",
                    names.len(),
                    terms.len()
                )));
            }
            let rows: Vec<Vec<f64>> = normalized.iter().map(|u| quadratic_basis(u)).collect();
            let a = DMatrix::from_fn(n, terms.len(), |i, j| rows[i][j]);
            let dependent = dependent_columns(&a);
            if !dependent.is_empty() {
                return Err(Error::RankDeficient(
                    dependent.into_iter().map(|j| terms[j].clone()).collect(),
                ));
            }
            let svd = a.svd(true, true);
            responses
                .iter()
                .map(|y| {
                    let b = DVector::from_column_slice(y);
                    let x = svd
                        .solve(&b, 1e-14)
                        .map_err(|e| Error::Surrogate(format!("least squares failed: {e}")))?;
                    Ok(ResponseFit::Polynomial {
                        coefficients: x.iter().copied().collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        SurrogateKind::RbfGaussian => {
            if n < 2 {
                return Err(Error::Surrogate("RBF fit needs at least 2 rows".into()));
            }
            for i in 0..n {
                for j in 0..i {
                    if sq_dist(&normalized[i], &normalized[j]) == 0.0 {
                        return Err(Error::Surrogate(format!("rows {j} and {i} coincide")));
                    }
                }
            }
            responses
                .iter()
                .map(|y| fit_rbf(&normalized, y))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(SurrogateModel {
        kind,
        param_box: param_box.clone(),
        input_names: names,
        response_names: response_names.to_vec(),
        fits,
        accuracy: None,
    })
}

fn eval_fit(fit: &ResponseFit, u: &[f64]) -> f64 {
    match fit {
        ResponseFit::Polynomial { coefficients } => quadratic_basis(u)
            .iter()
            .zip(coefficients)
            .map(|(b, c)| b * c)
            .sum(),
        ResponseFit::Rbf {
            centers,
            weights,
            constant,
            shape,
        } => {
            constant
                + centers
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| w * gaussian(sq_dist(c, u), *shape))
                    .sum::<f64>()
        }
    }
}

/// Evaluate every response at `point` (box coordinates).
pub fn predict(model: &SurrogateModel, point: &[f64]) -> Result<Prediction> {
    let u = model.param_box.normalize(point)?;
    Ok(Prediction {
        values: model.fits.iter().map(|f| eval_fit(f, &u)).collect(),
        extrapolated: !model.param_box.contains(point),
    })
}
