//! Clean error, per-corruption errors, mCE, multi-seed aggregation, and the
//! hyperparameter grid search.
//!
//! mCE here is the unweighted mean of per-kind errors, each kind already
//! averaged over its five severities. The kind count is stamped into every
//! report so numbers are never silently compared across different
//! corruption registries.

use crate::augment::AugmentPolicy;
use crate::corrupt::{CorruptedSuite, CorruptionKind};
use crate::data::LabeledImageDataset;
use crate::error::{Error, Result};
use crate::loss::LossFamily;
use crate::model::ModelParams;
use crate::noise::LabelSet;
use crate::train::{train, Standardizer, TrainConfig};
use serde::Serialize;
use std::collections::BTreeMap;

/// Fraction of examples whose argmax posterior disagrees with the label;
/// argmax ties break toward the lowest class index.
pub fn clean_error(
    params: &ModelParams,
    standardizer: &Standardizer,
    test: &LabeledImageDataset,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut wrong = 0usize;
    for (img, &label) in test.images.iter().zip(test.labels.labels()) {
        let logits = params.forward_features(&standardizer.apply(img))?;
        if argmax(&logits) != label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / test.len() as f64)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn error_on_images(
    params: &ModelParams,
    standardizer: &Standardizer,
    images: &[crate::image::ImageTensor],
    labels: &LabelSet,
) -> Result<f64> {
    let mut wrong = 0usize;
    for (img, &label) in images.iter().zip(labels.labels()) {
        let logits = params.forward_features(&standardizer.apply(img))?;
        if argmax(&logits) != label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / images.len().max(1) as f64)
}

/// Per-kind errors (each the mean over the kind's five severities) and
/// their unweighted mean, the mCE.
pub fn mce(
    params: &ModelParams,
    standardizer: &Standardizer,
    suite: &CorruptedSuite,
    test_labels: &LabelSet,
) -> Result<(BTreeMap<CorruptionKind, f64>, f64)> {
    if suite.kinds().is_empty() {
        return Err(Error::invalid("empty corrupted suite"));
    }
    let mut per_kind = BTreeMap::new();
    for (ki, kind) in suite.kinds().iter().enumerate() {
        let mut total = 0.0;
        for severity in 1..=5u8 {
            total += error_on_images(
                params,
                standardizer,
                suite.severity_set(ki, severity),
                test_labels,
            )?;
        }
        per_kind.insert(*kind, total / 5.0);
    }
    let mean = per_kind.values().sum::<f64>() / per_kind.len() as f64;
    Ok((per_kind, mean))
}

/// Metrics for one (configuration, seed) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub dataset: String,
    pub noise_scheme: String,
    pub eta: f64,
    pub augment: String,
    pub loss_family: String,
    pub hyperparams: String,
    pub seed: u64,
    pub clean_error: f64,
    pub mce: f64,
    /// kind name -> error averaged over the five severities
    pub per_corruption: BTreeMap<String, f64>,
    pub n_corruptions: usize,
}

impl RunReport {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.clean_error) || !in_unit(self.mce) {
            return Err(Error::invalid("error fractions must be in [0, 1]"));
        }
        if self.per_corruption.values().any(|v| !in_unit(*v)) {
            return Err(Error::invalid("per-corruption errors must be in [0, 1]"));
        }
        if self.per_corruption.len() != self.n_corruptions {
            return Err(Error::invalid("n_corruptions does not match the map"));
        }
        let mean = self.per_corruption.values().sum::<f64>() / self.per_corruption.len() as f64;
        if (mean - self.mce).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mce {} is not the mean of per-corruption errors {mean}",
                self.mce
            )));
        }
        Ok(())
    }

    /// Group key: everything except the seed.
    pub fn group_key(&self) -> String {
        format!(
            "dataset={}|scheme={}|eta={}|augment={}|loss={}|hp={}",
            self.dataset, self.noise_scheme, self.eta, self.augment, self.loss_family, self.hyperparams
        )
    }

    /// Method key: everything except seed and eta.
    pub fn method_key(&self) -> String {
        format!(
            "dataset={}|scheme={}|augment={}|loss={}|hp={}",
            self.dataset, self.noise_scheme, self.augment, self.loss_family, self.hyperparams
        )
    }
}

/// Header for `results.csv`; the timestamp column is isolated at the end so
/// determinism checks can drop exactly one column.
pub fn results_csv_header(kinds: &[CorruptionKind]) -> String {
    let mut cols = vec![
        "dataset".to_string(),
        "noise_scheme".to_string(),
        "eta".to_string(),
        "augment".to_string(),
        "loss_family".to_string(),
        "hyperparams".to_string(),
        "seed".to_string(),
        "clean_error".to_string(),
        "mce".to_string(),
    ];
    cols.extend(kinds.iter().map(|k| k.as_str().to_string()));
    cols.push("timestamp".to_string());
    cols.join(",")
}

impl RunReport {
    /// One `results.csv` row matching [`results_csv_header`].
    pub fn to_csv_row(&self, kinds: &[CorruptionKind], timestamp: &str) -> String {
        let mut cols = vec![
            self.dataset.clone(),
            self.noise_scheme.clone(),
            format!("{}", self.eta),
            self.augment.clone(),
            self.loss_family.clone(),
            self.hyperparams.clone(),
            format!("{}", self.seed),
            format!("{:.6}", self.clean_error),
            format!("{:.6}", self.mce),
        ];
        for kind in kinds {
            let v = self
                .per_corruption
                .get(kind.as_str())
                .copied()
                .unwrap_or(f64::NAN);
            cols.push(format!("{v:.6}"));
        }
        cols.push(timestamp.to_string());
        cols.join(",")
    }
}

/// Mean and sample standard deviation of a metric over seeds.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-group statistics for one configuration (all seeds pooled).
#[derive(Debug, Clone, Serialize)]
pub struct GroupStats {
    pub clean_error: MetricStats,
    pub mce: MetricStats,
    pub n_seeds: usize,
    pub n_corruptions: usize,
    /// True when only one seed was available and std is reported as 0.
    pub single_seed: bool,
}

/// Aggregated view over all runs: per-configuration statistics plus the
/// mean mCE across nonzero noise rates for each method.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub groups: BTreeMap<String, GroupStats>,
    /// method key -> mean of per-eta mean mCE over eta > 0
    pub noisy_avg: BTreeMap<String, f64>,
}

fn sample_stats(values: &[f64]) -> MetricStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n >= 2 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricStats { mean, std }
}

/// Groups reports by configuration-minus-seed and summarizes them. Groups
/// must be internally consistent on the corruption registry.
pub fn aggregate(reports: &[RunReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to aggregate"));
    }
    let mut by_group: BTreeMap<String, Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        r.validate()?;
        by_group.entry(r.group_key()).or_default().push(r);
    }
    let mut groups = BTreeMap::new();
    for (key, members) in &by_group {
        let n_corruptions = members[0].n_corruptions;
        if members.iter().any(|m| m.n_corruptions != n_corruptions) {
            return Err(Error::invalid(format!(
                "group {key} mixes runs over different corruption registries"
            )));
        }
        let clean: Vec<f64> = members.iter().map(|m| m.clean_error).collect();
        let mces: Vec<f64> = members.iter().map(|m| m.mce).collect();
        groups.insert(
            key.clone(),
            GroupStats {
                clean_error: sample_stats(&clean),
                mce: sample_stats(&mces),
                n_seeds: members.len(),
                n_corruptions,
                single_seed: members.len() < 2,
            },
        );
    }
    // noisy average: mean over eta > 0 of the per-eta group mean mCE
    let mut method_etas: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (key, members) in &by_group {
        let eta = members[0].eta;
        if eta > 0.0 {
            let method = members[0].method_key();
            method_etas
                .entry(method)
                .or_default()
                .push(groups[key].mce.mean);
        }
    }
    let noisy_avg = method_etas
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    Ok(AggregateReport { groups, noisy_avg })
}

/// Appendix search space for the focal exponent.
pub fn focal_search_space() -> Vec<LossFamily> {
    [0.0, 0.5, 1.0, 2.0, 5.0]
        .iter()
        .map(|&gamma| LossFamily::Focal { gamma })
        .collect()
}

/// Appendix search space for the NCE+RCE weights (delta fixed at 4).
pub fn nce_rce_search_space() -> Vec<LossFamily> {
    let mut out = Vec::new();
    for &beta1 in &[0.1, 1.0, 10.0, 99.0, 99.9] {
        for &beta2 in &[0.1, 1.0, 10.0, 100.0] {
            out.push(LossFamily::NceRce {
                beta1,
                beta2,
                delta: 4.0,
            });
        }
    }
    out
}

/// Appendix search space for alpha.
pub fn alpha_search_space() -> Vec<LossFamily> {
    [1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 2.0, 3.0, 4.0]
        .iter()
        .map(|&alpha| LossFamily::Alpha { alpha })
        .collect()
}

pub fn search_space_for(family: &str) -> Result<Vec<LossFamily>> {
    match family {
        "focal" => Ok(focal_search_space()),
        "nce_rce" => Ok(nce_rce_search_space()),
        "alpha" => Ok(alpha_search_space()),
        other => Err(Error::invalid(format!(
            "no search space for family '{other}' (tunable: focal, nce_rce, alpha)"
        ))),
    }
}

/// Result of a grid search: per-point scores in grid order plus the winner.
#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub winner: LossFamily,
    pub scores: Vec<(LossFamily, f64)>,
}

/// Trains one model per grid point on the supplied (already noisy) training
/// set and scores each by mCE on the corrupted suite. The argmin wins; ties
/// break toward the earlier point in grid order, which is lexicographic in
/// the hyperparameters.
pub fn grid_search(
    space: &[LossFamily],
    lambda: f64,
    train_noisy: &LabeledImageDataset,
    config: &TrainConfig,
    policy: Option<&AugmentPolicy>,
    suite: &CorruptedSuite,
    test_labels: &LabelSet,
) -> Result<GridSearchOutcome> {
    if space.is_empty() {
        return Err(Error::invalid("empty search space"));
    }
    let mut scores = Vec::with_capacity(space.len());
    for family in space {
        let spec = crate::loss::LossSpec::new(*family, lambda)?;
        let outcome = train(train_noisy, None, config, &spec, policy)?;
        let (_, score) = mce(&outcome.params, &outcome.standardizer, suite, test_labels)?;
        scores.push((*family, score));
    }
    let mut best = 0;
    for (i, (_, score)) in scores.iter().enumerate().skip(1) {
        if *score < scores[best].1 {
            best = i;
        }
    }
    Ok(GridSearchOutcome {
        winner: scores[best].0,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn report(eta: f64, seed: u64, clean: f64, kinds: &[(&str, f64)]) -> RunReport {
        let per: BTreeMap<String, f64> =
            kinds.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let mce = per.values().sum::<f64>() / per.len() as f64;
        RunReport {
            dataset: "synth".into(),
            noise_scheme: "symmetric".into(),
            eta,
            augment: "noaug".into(),
            loss_family: "ce".into(),
            hyperparams: String::new(),
            seed,
            clean_error: clean,
            mce,
            per_corruption: per,
            n_corruptions: kinds.len(),
        }
    }

    #[test]
    fn clean_error_hand_cases() {
        // constant predictor on a balanced set errs (K-1)/K
        let ds = crate::data::synth_shapes(4, 5, 8, 0.0, 1).unwrap();
        let params = ModelParams::zeros(&[64, 4]).unwrap();
        let std = Standardizer::identity(1);
        // zero params -> uniform logits -> argmax ties to class 0
        let err = clean_error(&params, &std, &ds).unwrap();
        assert_relative_eq!(err, 3.0 / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn mce_is_arithmetic_mean() {
        let r = report(0.2, 1, 0.1, &[("a", 0.1), ("b", 0.2), ("c", 0.3)]);
        assert_relative_eq!(r.mce, 0.2, max_relative = 1e-12);
        r.validate().unwrap();

        let r = report(0.2, 1, 0.1, &[("k", (0.1 + 0.1 + 0.1 + 0.2 + 0.5) / 5.0)]);
        assert_relative_eq!(r.per_corruption["k"], 0.2, max_relative = 1e-12);
    }

    #[test]
    fn aggregate_hand_case() {
        let reports = vec![
            report(0.2, 1, 0.10, &[("a", 0.10)]),
            report(0.2, 2, 0.20, &[("a", 0.20)]),
            report(0.2, 3, 0.30, &[("a", 0.30)]),
        ];
        let agg = aggregate(&reports).unwrap();
        let stats = agg.groups.values().next().unwrap();
        assert_relative_eq!(stats.mce.mean, 0.20, max_relative = 1e-12);
        assert_relative_eq!(stats.mce.std, 0.10, max_relative = 1e-12);
        assert_eq!(stats.n_seeds, 3);
        assert!(!stats.single_seed);
    }

    #[test]
    fn aggregate_identical_seeds_zero_std_and_flagging() {
        let reports = vec![
            report(0.0, 1, 0.10, &[("a", 0.15)]),
            report(0.0, 2, 0.10, &[("a", 0.15)]),
        ];
        let agg = aggregate(&reports).unwrap();
        let stats = agg.groups.values().next().unwrap();
        assert_eq!(stats.mce.std, 0.0);

        let single = vec![report(0.0, 1, 0.10, &[("a", 0.15)])];
        let agg = aggregate(&single).unwrap();
        assert!(agg.groups.values().next().unwrap().single_seed);
    }

    #[test]
    fn noisy_avg_excludes_eta_zero() {
        let mut reports = vec![report(0.0, 1, 0.05, &[("a", 0.12)])];
        for (eta, m) in [(0.1, 0.15), (0.2, 0.18), (0.3, 0.21), (0.4, 0.26)] {
            reports.push(report(eta, 1, 0.05, &[("a", m)]));
        }
        let agg = aggregate(&reports).unwrap();
        let avg = agg.noisy_avg.values().next().unwrap();
        assert_relative_eq!(*avg, 0.20, max_relative = 1e-12);
    }

    #[test]
    fn aggregate_rejects_mixed_registries() {
        let a = report(0.0, 1, 0.05, &[("a", 0.12)]);
        let b = report(0.0, 2, 0.05, &[("a", 0.12), ("b", 0.2)]);
        assert!(aggregate(&[a, b]).is_err());
    }

    #[test]
    fn search_spaces_match_protocol() {
        assert_eq!(focal_search_space().len(), 5);
        assert_eq!(nce_rce_search_space().len(), 20);
        assert_eq!(alpha_search_space().len(), 9);
        assert!(search_space_for("ce").is_err());
        // lexicographic order: first nce_rce point is (0.1, 0.1)
        match nce_rce_search_space()[0] {
            LossFamily::NceRce { beta1, beta2, .. } => {
                assert_eq!((beta1, beta2), (0.1, 0.1));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn csv_row_matches_header() {
        let kinds = [CorruptionKind::GaussianNoise, CorruptionKind::Pixelate];
        let header = results_csv_header(&kinds);
        assert!(header.starts_with("dataset,noise_scheme,eta,"));
        assert!(header.ends_with("gaussian_noise,pixelate,timestamp"));
        let r = report(0.2, 1, 0.5, &[("gaussian_noise", 0.4), ("pixelate", 0.2)]);
        let row = r.to_csv_row(&kinds, "t0");
        assert_eq!(row.split(',').count(), header.split(',').count());
        assert!(row.ends_with(",t0"));
    }
}
