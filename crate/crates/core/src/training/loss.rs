use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// How query vectors are pooled for the diversity loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiversityScope {
    /// All queries of all stages together.
    #[default]
    Pooled,
    /// Mean of the within-stage losses over stages with at least two queries.
    PerStage,
}

/// `-sum_t log softmax(logits[t])[token(t, target[t])]` for one example, and
/// its gradient with respect to the `l x V` readout logits.
pub(crate) fn example_recommendation_loss(
    cfg: &ModelConfig,
    logits: ArrayView2<f64>,
    target: &[usize],
) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != target.len() {
        return Err(Error::DimensionMismatch { expected: logits.nrows(), actual: target.len() });
    }
    let vocab = logits.ncols();
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (t, &code) in target.iter().enumerate() {
        if code >= cfg.codes_per_level || cfg.token(t, code) >= vocab {
            return Err(Error::InvalidToken { token: code, vocab: cfg.codes_per_level });
        }
        let row = logits.row(t);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let tok = cfg.token(t, code);
        loss += lse - row[tok];
        let mut g = grad.row_mut(t);
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - lse).exp();
        }
        g[tok] -= 1.0;
    }
    Ok((loss, grad))
}

/// Batch mean of the per-example summed negative log-likelihood of the
/// target codes, softmax over the full vocabulary.
pub fn recommendation_loss(cfg: &ModelConfig, readouts: &[Array2<f64>], targets: &[Vec<usize>]) -> Result<f64> {
    if readouts.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: readouts.len(), actual: targets.len() });
    }
    if readouts.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (logits, target) in readouts.iter().zip(targets) {
        total += example_recommendation_loss(cfg, logits.view(), target)?.0;
    }
    Ok(total / readouts.len() as f64)
}

/// Mean pairwise cosine similarity over distinct ordered pairs, and its
/// gradient. Zero-norm rows contribute zero similarity.
pub(crate) fn pooled_diversity(queries: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = queries.nrows();
    let mut grad = Array2::zeros(queries.raw_dim());
    if n < 2 {
        return (0.0, grad);
    }
    let norms: Vec<f64> = queries.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if norms.contains(&0.0) {
        log::warn!("zero-norm reasoning query; its cosine terms count as 0");
    }
    let mut units = queries.to_owned();
    for (mut row, &nv) in units.rows_mut().into_iter().zip(&norms) {
        if nv > 0.0 {
            row /= nv;
        } else {
            row.fill(0.0);
        }
    }
    let sum_u = units.sum_axis(ndarray::Axis(0));
    let pairs = (n * n - n) as f64;
    // sum_{i != j} u_i . u_j = |sum u|^2 - sum |u_i|^2
    let self_terms: f64 = units.rows().into_iter().map(|u| u.dot(&u)).sum();
    let loss = (sum_u.dot(&sum_u) - self_terms) / pairs;
    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        let u = units.row(i);
        let others = &sum_u - &u;
        let c = u.dot(&others);
        let g = (&others - &(&u * c)) * (2.0 / (pairs * norms[i]));
        grad.row_mut(i).assign(&g);
    }
    (loss, grad)
}

/// Reasoning-diversity loss over the query bank.
pub fn diversity_loss(queries: ArrayView2<f64>) -> f64 {
    pooled_diversity(queries).0
}

pub(crate) fn scoped_diversity(cfg: &ModelConfig, queries: ArrayView2<f64>, scope: DiversityScope) -> (f64, Array2<f64>) {
    match scope {
        DiversityScope::Pooled => pooled_diversity(queries),
        DiversityScope::PerStage => {
            let mut grad = Array2::zeros(queries.raw_dim());
            let stages: Vec<usize> = (0..cfg.levels).filter(|&t| cfg.query_counts.0[t] >= 2).collect();
            if stages.is_empty() {
                return (0.0, grad);
            }
            let w = 1.0 / stages.len() as f64;
            let mut loss = 0.0;
            for t in stages {
                let lo = cfg.query_counts.offset(t);
                let hi = lo + cfg.query_counts.0[t];
                let (l, g) = pooled_diversity(queries.slice(s![lo..hi, ..]));
                loss += w * l;
                grad.slice_mut(s![lo..hi, ..]).scaled_add(w, &g);
            }
            (loss, grad)
        }
    }
}

pub fn total_loss(rec: f64, div: f64, alpha: f64) -> f64 {
    rec + alpha * div
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn cfg(k_eff: usize) -> ModelConfig {
        ModelConfig { codes_per_level: k_eff, ..ModelConfig::default() }
    }

    #[test]
    fn uniform_logits_cost_l_ln_v() {
        let c = cfg(5);
        let v = c.vocab_size();
        let logits = Array2::zeros((4, v));
        let loss = recommendation_loss(&c, &[logits], &[vec![0, 1, 2, 3]]).unwrap();
        assert!((loss - 4.0 * (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_cost_nothing() {
        let c = cfg(5);
        let target = vec![1, 4, 0, 2];
        let mut logits = Array2::from_elem((4, c.vocab_size()), -1e3);
        for (t, &code) in target.iter().enumerate() {
            logits[[t, c.token(t, code)]] = 1e3;
        }
        assert_eq!(recommendation_loss(&c, &[logits.clone()], std::slice::from_ref(&target)).unwrap(), 0.0);
        // Mean reduction: a duplicated example costs the same.
        let noisy = logits.mapv(|v| v * 1e-3);
        let one = recommendation_loss(&c, std::slice::from_ref(&noisy), std::slice::from_ref(&target)).unwrap();
        let two = recommendation_loss(&c, &[noisy.clone(), noisy], &[target.clone(), target]).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn out_of_vocab_target_is_rejected() {
        let c = cfg(5);
        let logits = Array2::zeros((4, c.vocab_size()));
        assert!(matches!(
            recommendation_loss(&c, &[logits], &[vec![0, 5, 0, 0]]),
            Err(Error::InvalidToken { .. })
        ));
    }

    #[test]
    fn diversity_examples() {
        assert!((diversity_loss(array![[1.0, 2.0], [1.0, 2.0]].view()) - 1.0).abs() < 1e-12);
        assert!(diversity_loss(array![[1.0, 0.0], [0.0, 3.0]].view()).abs() < 1e-12);
        let d = diversity_loss(array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 2.0]].view());
        assert!((d - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(diversity_loss(array![[1.0, 0.0]].view()), 0.0);
        assert_eq!(diversity_loss(array![[0.0, 0.0], [1.0, 0.0]].view()), 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(2.0, 0.5, 0.0), 2.0);
        assert!((total_loss(2.0, 0.5, 0.7) - 2.35).abs() < 1e-12);
    }

    fn direct_cosine_mean(q: &Array2<f64>) -> f64 {
        let n = q.nrows();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (a, b) = (q.row(i), q.row(j));
                    s += a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
                }
            }
        }
        s / (n * n - n) as f64
    }

    fn bank() -> impl Strategy<Value = Array2<f64>> {
        (2..7usize).prop_flat_map(|n| {
            prop::collection::vec(-3.0..3.0f64, n * 3)
                .prop_filter("nonzero rows", |v| v.chunks(3).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3))
                .prop_map(move |v| Array2::from_shape_vec((n, 3), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn diversity_properties(q in bank(), scale in 0.1..10.0f64, row in 0..2usize) {
            let d = diversity_loss(q.view());
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&d));
            prop_assert!((d - direct_cosine_mean(&q)).abs() < 1e-12);
            let mut reversed = q.clone();
            reversed.invert_axis(ndarray::Axis(0));
            prop_assert!((diversity_loss(reversed.view()) - d).abs() < 1e-12);
            let mut scaled = q.clone();
            scaled.row_mut(row).mapv_inplace(|v| v * scale);
            prop_assert!((diversity_loss(scaled.view()) - d).abs() < 1e-12);
        }

        #[test]
        fn diversity_gradient_matches_differences(q in bank()) {
            let (_, g) = pooled_diversity(q.view());
            let h = 1e-6;
            for i in 0..q.nrows() {
                for j in 0..q.ncols() {
                    let mut p = q.clone();
                    p[[i, j]] += h;
                    let mut m = q.clone();
                    m[[i, j]] -= h;
                    let num = (diversity_loss(p.view()) - diversity_loss(m.view())) / (2.0 * h);
                    prop_assert!((num - g[[i, j]]).abs() < 1e-6 * num.abs().max(1.0));
                }
            }
        }

        #[test]
        fn total_monotone_in_alpha(rec in 0.0..5.0f64, div in 1e-3..1.0f64, a in 0.0..2.0f64, b in 0.0..2.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(total_loss(rec, div, lo) <= total_loss(rec, div, hi));
        }
    }

    #[test]
    fn per_stage_scope_only_mixes_within_stages() {
        let c = ModelConfig { query_counts: "1-1-2-2".parse().unwrap(), ..ModelConfig::default() };
        // Stage 3 pair identical, stage 4 pair orthogonal; stages 1-2 ignored.
        let q = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let (l, g) = scoped_diversity(&c, q.view(), DiversityScope::PerStage);
        assert!((l - 0.5).abs() < 1e-12);
        assert_eq!(g.row(0), Array1::<f64>::zeros(2));
    }
}
