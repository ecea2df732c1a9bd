use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{batch_objective, EncodedExample, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Precision};
use crate::util::seeded_rng;

/// Index of the query bank in [`ModelParams::tensors`].
const QUERY_TENSOR: usize = 2;
const MIN_QUERY_PROBES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradProbe {
    pub tensor: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<GradProbe>,
}

/// `n_probe` random `(tensor, row, col)` coordinates, the first
/// `min(10, |queries|)` drawn from the query bank.
pub fn pick_probes(params: &ModelParams, n_probe: usize, seed: u64) -> Vec<(usize, usize, usize)> {
    let mut rng = seeded_rng(seed);
    let tensors = params.tensors();
    let total = params.scalar_count();
    let queries = tensors[QUERY_TENSOR].len();
    (0..n_probe)
        .map(|i| {
            let (t, flat) = if i < MIN_QUERY_PROBES.min(queries) {
                (QUERY_TENSOR, rng.random_range(0..queries))
            } else {
                let mut flat = rng.random_range(0..total);
                let mut t = 0;
                while flat >= tensors[t].len() {
                    flat -= tensors[t].len();
                    t += 1;
                }
                (t, flat)
            };
            let cols = tensors[t].ncols();
            (t, flat / cols, flat % cols)
        })
        .collect()
}

/// Central differences against the analytic gradient of the total loss on
/// `batch`; relative error uses `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check(
    params: &ModelParams,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    batch: &[EncodedExample],
    n_probe: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    finite_difference_check_at(params, cfg, tc, batch, &pick_probes(params, n_probe, seed), h)
}

pub fn finite_difference_check_at(
    params: &ModelParams,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    batch: &[EncodedExample],
    probes: &[(usize, usize, usize)],
    h: f64,
) -> Result<GradCheckReport> {
    if cfg.precision != Precision::Double {
        return Err(Error::Config("gradient check needs double precision".into()));
    }
    let batch: Vec<&EncodedExample> = batch.iter().collect();
    let (_, grads) = batch_objective(params, cfg, tc, &batch, true)?;
    let grads = grads.expect("gradient requested");
    let names = params.names();
    let mut work = params.clone();
    let mut eval = |t: usize, r: usize, c: usize, v: f64| -> Result<f64> {
        work.tensors_mut()[t][[r, c]] = v;
        let out = batch_objective(&work, cfg, tc, &batch, false)?.0.total;
        work.tensors_mut()[t][[r, c]] = params.tensors()[t][[r, c]];
        Ok(out)
    };
    let mut out = Vec::with_capacity(probes.len());
    for &(t, r, c) in probes {
        let x = params.tensors()[t][[r, c]];
        let numeric = (eval(t, r, c, x + h)? - eval(t, r, c, x - h)?) / (2.0 * h);
        let analytic = grads.tensors()[t][[r, c]];
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        out.push(GradProbe { tensor: names[t].clone(), row: r, col: c, analytic, numeric, rel_error });
    }
    let max_rel_error = out.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, probes: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mode, QueryCounts};
    use crate::training::tests::memorization_set;

    fn cfg(mode: Mode) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            ff_dim: 12,
            n_layers: 2,
            codes_per_level: 9,
            query_counts: QueryCounts(vec![1, 2, 2, 1]),
            max_history: 3,
            mode,
            init_seed: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn gradients_agree_in_both_modes() {
        let (_, ex) = memorization_set(4);
        for mode in [Mode::Care, Mode::Baseline] {
            let c = cfg(mode);
            let params = ModelParams::init(&c).unwrap();
            let report = finite_difference_check(&params, &c, &TrainConfig::default(), &ex[..3], 50, 1e-4, 9).unwrap();
            let worst = report.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).unwrap();
            assert!(report.max_rel_error < 1e-4, "{worst:?}");
            if mode == Mode::Care {
                assert!(report.probes.iter().filter(|p| p.tensor == "queries").count() >= 6);
            }
        }
    }

    #[test]
    fn halving_h_does_not_blow_up_error() {
        let (_, ex) = memorization_set(5);
        let c = cfg(Mode::Care);
        let params = ModelParams::init(&c).unwrap();
        let tc = TrainConfig::default();
        let probes = pick_probes(&params, 30, 2);
        let coarse = finite_difference_check_at(&params, &c, &tc, &ex[..2], &probes, 1e-4).unwrap();
        let fine = finite_difference_check_at(&params, &c, &tc, &ex[..2], &probes, 5e-5).unwrap();
        assert!(fine.max_rel_error <= 4.0 * coarse.max_rel_error.max(1e-12));
    }

    #[test]
    fn single_precision_is_refused() {
        let (_, ex) = memorization_set(6);
        let c = ModelConfig { precision: Precision::Single, ..cfg(Mode::Care) };
        let params = ModelParams::init(&c).unwrap();
        assert!(finite_difference_check(&params, &c, &TrainConfig::default(), &ex[..1], 5, 1e-4, 0).is_err());
    }
}
