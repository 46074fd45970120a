use std::cmp::Ordering;

use rand::seq::SliceRandom;

use super::dataset::Dataset;
use super::model::{fit_rows, predict, AccuracyReport, ResponseAccuracy, SurrogateKind};
use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Row indices sorted by point, then response.
fn canonical_order(dataset: &Dataset) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dataset.rows.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&dataset.rows[i], &dataset.rows[j]);
        cmp_rows(&a.point, &b.point).then_with(|| cmp_rows(&a.mean, &b.mean))
    });
    order
}

/// Canonical order shuffled with `seed`; the row at shuffled position `i`
/// goes to fold `i mod k`. Sorting first makes the folds independent of
/// the dataset's row order.
fn fold_assignment(canonical: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut order = canonical.to_vec();
    let mut rng = substream(seed, Domain::FoldShuffle, 0);
    order.shuffle(&mut rng);
    let mut fold = vec![0; order.len()];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

/// Held-out predictions for every row under k-fold cross-validation.
/// Also returns the canonical row order, for order-independent sums.
fn cross_predictions(dataset: &Dataset, kind: SurrogateKind, k: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let n = dataset.rows.len();
    if k < 2 || k > n {
        return Err(Error::Surrogate(format!(
            "k-fold needs 2 <= k <= rows (got k = {k}, rows = {n})"
        )));
    }
    let canonical = canonical_order(dataset);
    let fold = fold_assignment(&canonical, k, seed);
    let m = dataset.response_names.len();
    let mut held = vec![vec![f64::NAN; m]; n];
    for f in 0..k {
        // Training rows in canonical order so the fit sees identical input
        // whatever the dataset's row order.
        let train: Vec<usize> = canonical.iter().copied().filter(|&i| fold[i] != f).collect();
        let points: Vec<Vec<f64>> = train.iter().map(|&i| dataset.rows[i].point.clone()).collect();
        let responses: Vec<Vec<f64>> = (0..m)
            .map(|j| train.iter().map(|&i| dataset.rows[i].mean[j]).collect())
            .collect();
        let model = fit_rows(&dataset.param_box, &dataset.response_names, &points, &responses, kind)
            .map_err(|e| Error::Surrogate(format!("fold {f}: {e}")))?;
        for i in (0..n).filter(|&i| fold[i] == f) {
            held[i] = predict(&model, &dataset.rows[i].point)?.values;
        }
    }
    Ok((canonical, held))
}

/// k-fold cross-validated accuracy. Relative RMSE divides by the response
/// range (by `|mean|` when the range is zero, and by 1 when both are zero).
pub fn assess(dataset: &Dataset, kind: SurrogateKind, k: usize, seed: u64) -> Result<AccuracyReport> {
    let (canonical, held) = cross_predictions(dataset, kind, k, seed)?;
    let n = dataset.rows.len();
    let responses = dataset
        .response_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let y: Vec<f64> = canonical.iter().map(|&i| dataset.rows[i].mean[j]).collect();
            let h: Vec<f64> = canonical.iter().map(|&i| held[i][j]).collect();
            let mean = y.iter().sum::<f64>() / n as f64;
            let sse: f64 = y.iter().zip(&h).map(|(v, p)| (v - p).powi(2)).sum();
            let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            let rmse = (sse / n as f64).sqrt();
            let (lo, hi) = y
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let norm = if hi > lo {
                hi - lo
            } else if mean != 0.0 {
                mean.abs()
            } else {
                1.0
            };
            ResponseAccuracy {
                name: name.clone(),
                rmse,
                relative_rmse: rmse / norm,
                r2: (sst > 0.0).then(|| 1.0 - sse / sst),
            }
        })
        .collect();
    Ok(AccuracyReport {
        kind,
        k,
        holdout_size: n.div_ceil(k),
        seed,
        responses,
    })
}

/// One refinement pass: for each of the `m` rows with the largest
/// cross-validated error (summed over responses, each scaled by its
/// range), propose the midpoint between that row and its nearest neighbour
/// in normalized coordinates.
pub fn refine_points(dataset: &Dataset, kind: SurrogateKind, k: usize, seed: u64, m: usize) -> Result<Vec<Vec<f64>>> {
    let (_, held) = cross_predictions(dataset, kind, k, seed)?;
    let n = dataset.rows.len();
    let ranges: Vec<f64> = (0..dataset.response_names.len())
        .map(|j| {
            let y = dataset.response(j);
            let (lo, hi) = y
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            if hi > lo { hi - lo } else { 1.0 }
        })
        .collect();
    let mut scored: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let e: f64 = dataset.rows[i]
                .mean
                .iter()
                .zip(&held[i])
                .zip(&ranges)
                .map(|((y, h), r)| ((y - h) / r).abs())
                .sum();
            (e, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let b = &dataset.param_box;
    let unit: Vec<Vec<f64>> = dataset
        .rows
        .iter()
        .map(|r| b.normalize(&r.point))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &(_, i) in scored.iter().take(m) {
        let nearest = (0..n)
            .filter(|&j| j != i)
            .min_by(|&a, &c| {
                let da: f64 = unit[a].iter().zip(&unit[i]).map(|(x, y)| (x - y).powi(2)).sum();
                let dc: f64 = unit[c].iter().zip(&unit[i]).map(|(x, y)| (x - y).powi(2)).sum();
                da.total_cmp(&dc).then(a.cmp(&c))
            })
            .ok_or_else(|| Error::Surrogate("refinement needs at least 2 rows".into()))?;
        let mid: Vec<f64> = unit[i].iter().zip(&unit[nearest]).map(|(x, y)| 0.5 * (x + y)).collect();
        out.push(b.denormalize(&mid)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use crate::scenario::Scenario;
    use crate::surrogate::dataset::{evaluate_design, DesignRow, ModelEvaluator, Provenance};
    use crate::surrogate::plan::{sample_plan, BoxDim, Param, ParameterBox};
    use rand::Rng;

    fn b2() -> ParameterBox {
        ParameterBox::new(
            vec![
                BoxDim { param: Param::PMax, lower: 0.05, upper: 0.2 },
                BoxDim { param: Param::QMin, lower: 3.0, upper: 7.0 },
            ],
            Scenario::reference(),
        )
        .unwrap()
    }

    fn synthetic(f: impl Fn(&[f64]) -> f64, n: usize, seed: u64) -> Dataset {
        let b = b2();
        let rows = sample_plan(&b, n, seed)
            .unwrap()
            .into_iter()
            .map(|p| DesignRow {
                mean: vec![f(&p)],
                std: vec![0.0],
                point: p,
            })
            .collect();
        Dataset {
            param_box: b,
            response_names: vec!["y".into()],
            rows,
            failures: vec![],
            provenance: Provenance {
                evaluator: "synthetic".into(),
                settings: serde_json::Value::Null,
                seed,
                replications: 1,
                version: "test".into(),
            },
        }
    }

    fn quad(x: &[f64]) -> f64 {
        1.0 + x[0] - 2.0 * x[1] + 3.0 * x[0] * x[1] + 0.5 * x[1] * x[1]
    }

    #[test]
    fn exact_quadratic_cross_validates() {
        let d = synthetic(quad, 40, 2);
        let r = assess(&d, SurrogateKind::Polynomial2, 5, 7).unwrap();
        assert!(r.responses[0].relative_rmse <= 1e-6);
        assert!(r.responses[0].r2.unwrap() > 0.999999);
        assert_eq!(r.holdout_size, 8);
    }

    #[test]
    fn pure_noise_has_no_skill() {
        let mut rng = substream(42, Domain::Synthetic, 0);
        let noise: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let mut d = synthetic(|_| 0.0, 40, 3);
        for (r, v) in d.rows.iter_mut().zip(&noise) {
            r.mean[0] = *v;
        }
        for kind in [SurrogateKind::Polynomial2, SurrogateKind::RbfGaussian] {
            let r = assess(&d, kind, 5, 1).unwrap();
            assert!(r.responses[0].r2.unwrap() <= 0.1, "{kind:?}: {:?}", r.responses[0]);
        }
    }

    #[test]
    fn constant_response_flags_r2() {
        let d = synthetic(|_| 2.5, 20, 1);
        let r = assess(&d, SurrogateKind::Polynomial2, 4, 1).unwrap();
        assert_eq!(r.responses[0].r2, None);
        assert!(r.responses[0].rmse < 1e-12);
    }

    #[test]
    fn invariant_to_row_order_and_deterministic() {
        let d = synthetic(|x| (3.0 * x[0]).sin() + x[1], 30, 5);
        let mut rev = d.clone();
        rev.rows.reverse();
        for kind in [SurrogateKind::Polynomial2, SurrogateKind::RbfGaussian] {
            let a = assess(&d, kind, 5, 11).unwrap();
            assert_eq!(a, assess(&rev, kind, 5, 11).unwrap());
            assert_eq!(a, assess(&d, kind, 5, 11).unwrap());
        }
    }

    #[test]
    fn bad_k() {
        let d = synthetic(quad, 10, 1);
        assert!(assess(&d, SurrogateKind::Polynomial2, 1, 1).is_err());
        assert!(assess(&d, SurrogateKind::Polynomial2, 11, 1).is_err());
    }

    #[test]
    fn moment_equilibrium_surface() {
        let b = b2();
        let pts = sample_plan(&b, 40, 1).unwrap();
        let d = evaluate_design(&b, &pts, &ModelEvaluator::Moments, 1, 1).unwrap();
        let r = assess(&d, SurrogateKind::Polynomial2, 5, 1).unwrap();
        assert!(r.responses[0].relative_rmse <= 0.10, "{:?}", r.responses[0]);
    }

    #[test]
    fn refinement_proposes_points_in_box() {
        let d = synthetic(|x| (8.0 * x[0]).sin() * x[1], 20, 4);
        let pts = refine_points(&d, SurrogateKind::Polynomial2, 5, 1, 3).unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts.iter().all(|p| d.param_box.contains(p)));
        assert!(pts.iter().all(|p| !d.rows.iter().any(|r| &r.point == p)));
    }
}
