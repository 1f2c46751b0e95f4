use super::evaluate::{eval_episodes, evaluate_episodes, fmt_metric, EvalResult};
use super::train::{train, NoObserver, TrainConfig};
use crate::data::{Dataset, Split};
use crate::error::Result;
use crate::model::{ModelConfig, ScapeModel, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationBudget {
    /// `seed` is replaced by each run's seed.
    pub train: TrainConfig,
    pub eval_split: Split,
    pub eval_episodes: usize,
    pub eval_n_shot: usize,
    /// Offset added to the run seed for the evaluation stream.
    pub eval_seed: u64,
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub result: Option<EvalResult>,
    /// Set when training diverged; the run is excluded from means.
    pub diverged: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
}

pub const ABLATION_CSV_HEADER: &str = "variant,seed,pck,auc,nme,pck_symmetric,pck_occluded,diverged";

impl AblationReport {
    pub fn variants(&self) -> Vec<Variant> {
        let mut out: Vec<Variant> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.variant) {
                out.push(r.variant);
            }
        }
        out
    }

    fn metric(&self, variant: Variant, f: impl Fn(&EvalResult) -> Option<f64>) -> Vec<(u64, f64)> {
        self.runs
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.result.as_ref().and_then(&f).map(|v| (r.seed, v)))
            .collect()
    }

    pub fn per_seed_pck(&self, variant: Variant) -> Vec<(u64, f64)> {
        self.metric(variant, |r| Some(r.pck))
    }

    pub fn mean_pck(&self, variant: Variant) -> Option<f64> {
        mean(self.per_seed_pck(variant).iter().map(|x| x.1))
    }

    pub fn mean_pck_symmetric(&self, variant: Variant) -> Option<f64> {
        mean(self.metric(variant, |r| r.pck_symmetric).iter().map(|x| x.1))
    }

    pub fn mean_pck_occluded(&self, variant: Variant) -> Option<f64> {
        mean(self.metric(variant, |r| r.pck_occluded).iter().map(|x| x.1))
    }

    /// `a − b` per seed where both runs finished.
    pub fn paired_deltas(&self, a: Variant, b: Variant) -> Vec<(u64, f64)> {
        self.paired_by(a, b, |r| Some(r.pck))
    }

    pub fn paired_by(&self, a: Variant, b: Variant, f: impl Fn(&EvalResult) -> Option<f64> + Copy) -> Vec<(u64, f64)> {
        let bs = self.metric(b, f);
        self.metric(a, f)
            .into_iter()
            .filter_map(|(s, va)| bs.iter().find(|x| x.0 == s).map(|&(_, vb)| (s, va - vb)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(ABLATION_CSV_HEADER);
        s.push('\n');
        for r in &self.runs {
            let m = |f: fn(&EvalResult) -> Option<f64>| fmt_metric(r.result.as_ref().and_then(f));
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.variant,
                r.seed,
                m(|e| Some(e.pck)),
                m(|e| Some(e.auc)),
                m(|e| Some(e.nme)),
                m(|e| e.pck_symmetric),
                m(|e| e.pck_occluded),
                r.diverged.is_some()
            ));
        }
        s
    }

    /// Plain-text table of means plus paired deltas against `baseline`.
    pub fn summary(&self, baseline: Variant) -> String {
        let mut s = format!(
            "{:<22}{:>8}{:>10}{:>10}{:>8}   delta vs {baseline} (+/-/0)\n",
            "variant", "pck", "pck_sym", "pck_occ", "runs"
        );
        for v in self.variants() {
            let n = self.per_seed_pck(v).len();
            let d = self.paired_deltas(baseline, v);
            let signs = (
                d.iter().filter(|x| x.1 > 0.0).count(),
                d.iter().filter(|x| x.1 < 0.0).count(),
                d.iter().filter(|x| x.1 == 0.0).count(),
            );
            let md = mean(d.iter().map(|x| x.1));
            s.push_str(&format!(
                "{:<22}{:>8}{:>10}{:>10}{:>8}   {} ({}/{}/{})\n",
                v.name(),
                fmt_metric(self.mean_pck(v)),
                fmt_metric(self.mean_pck_symmetric(v)),
                fmt_metric(self.mean_pck_occluded(v)),
                n,
                fmt_metric(md),
                signs.0,
                signs.1,
                signs.2
            ));
        }
        s
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains and evaluates every variant for every seed. Runs sharing a seed
/// share initial weights (by parameter name), training episodes, dropout
/// noise and evaluation episodes.
pub fn run_ablation(
    dataset: &Dataset,
    base: &ModelConfig,
    variants: &[Variant],
    seeds: &[u64],
    budget: &AblationBudget,
    progress: &mut dyn FnMut(&AblationRun),
) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for &seed in seeds {
        let episodes = eval_episodes(
            dataset,
            budget.eval_split,
            budget.eval_episodes,
            budget.eval_n_shot,
            budget.eval_seed.wrapping_add(seed),
        )?;
        for &variant in variants {
            let cfg = ModelConfig {
                variant,
                ..base.clone()
            };
            let mut model = ScapeModel::<f32>::new(cfg, seed)?;
            let tc = TrainConfig {
                seed,
                ..budget.train.clone()
            };
            let run = match train(&mut model, dataset, &tc, &mut NoObserver) {
                Ok(_) => AblationRun {
                    variant,
                    seed,
                    result: Some(evaluate_episodes(&model, &episodes)?),
                    diverged: None,
                },
                Err(d) => AblationRun {
                    variant,
                    seed,
                    result: None,
                    diverged: Some(format!("step {}: {}", d.step, d.error)),
                },
            };
            progress(&run);
            report.runs.push(run);
        }
    }
    Ok(report)
}
