use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use scape_core::data::{write_instance_csv, write_pgm, Dataset, Manifest, Split};
use scape_core::eval::{
    eval_episodes, evaluate_episodes, run_ablation, train as train_model, AblationBudget, AblationReport, CenterPredictor,
    EvalResult, OraclePredictor, Predictor, StepLog, TrainConfig, TrainObserver, EVAL_CSV_HEADER,
};
use scape_core::model::checkpoint;
use scape_core::model::{AttentionRecord, ScapeModel, Stage, Variant};
use scape_core::{Error, Result};

use crate::config::{PredictorKind, RunConfig};
use crate::CliError;

/// Writes the effective config into the output directory.
pub fn echo_config(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    Ok(())
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let text = fs::read_to_string(&cfg.manifest)
        .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", cfg.manifest.display())))?;
    Dataset::from_manifest(Manifest::parse(&text)?, cfg.data_config())
}

pub fn gen(cfg: &RunConfig, export: usize) -> std::result::Result<(), CliError> {
    let ds = Dataset::generate(cfg.data_config())?;
    if let Some(dir) = cfg.manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&cfg.manifest, ds.manifest.to_text())?;
    echo_config(cfg)?;
    if export > 0 {
        let dir = cfg.out_dir.join("instances");
        fs::create_dir_all(&dir)?;
        for t in ds.templates() {
            for i in 0..export {
                let seed = t.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                let inst = scape_core::data::render_instance(t, seed, cfg.data.occlusion_p, cfg.model.image_size)?;
                write_instance_csv(&dir, &format!("cat{:04}_{i:03}", t.category_id), &inst)?;
            }
        }
    }
    println!(
        "wrote {} categories ({} train / {} val / {} test) to {}",
        ds.manifest.entries.len(),
        ds.manifest.count(Split::Train),
        ds.manifest.count(Split::Val),
        ds.manifest.count(Split::Test),
        cfg.manifest.display()
    );
    Ok(())
}

struct FileObserver<'a> {
    log: fs::File,
    checkpoint: &'a Path,
    epochs: usize,
}

impl TrainObserver<f32> for FileObserver<'_> {
    fn on_step(&mut self, l: &StepLog) -> Result<()> {
        writeln!(self.log, "{},{:?},{:?}", l.step, l.lr, l.loss)?;
        Ok(())
    }

    fn on_epoch(&mut self, epoch: usize, model: &ScapeModel<f32>) -> Result<()> {
        checkpoint::save(model, self.checkpoint)?;
        if (epoch + 1) % (self.epochs / 10).max(1) == 0 {
            eprintln!("epoch {}/{}", epoch + 1, self.epochs);
        }
        Ok(())
    }
}

pub fn train(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    echo_config(cfg)?;
    let mut model = ScapeModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    if let Some(dir) = cfg.checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut log = fs::File::create(cfg.out_dir.join("loss.csv"))?;
    writeln!(log, "step,lr,loss")?;
    let mut obs = FileObserver {
        log,
        checkpoint: &cfg.checkpoint,
        epochs: cfg.train.epochs,
    };
    match train_model(&mut model, &ds, &cfg.train, &mut obs) {
        Ok(logs) => {
            let first = logs.first().map_or(f64::NAN, |l| l.loss);
            let last = logs.last().map_or(f64::NAN, |l| l.loss);
            println!("trained {} steps: loss {first:.5} -> {last:.5}", logs.len());
            Ok(())
        }
        Err(d) => {
            let mut dump = format!("step={}\nerror={}\n", d.step, d.error);
            for (i, ep) in d.batch.iter().enumerate() {
                let _ = writeln!(
                    dump,
                    "episode={i} category={} k={} query_keypoints={:?} visibility={:?}",
                    ep.category_id,
                    ep.k(),
                    ep.query.keypoints,
                    ep.query.visibility
                );
            }
            fs::write(cfg.out_dir.join("divergence.txt"), dump)?;
            match d.error {
                Error::NonFinite(m) => Err(CliError::Diverged { step: d.step, message: m }),
                e => Err(e.into()),
            }
        }
    }
}

fn load_model(cfg: &RunConfig) -> Result<ScapeModel<f32>> {
    checkpoint::load(&cfg.checkpoint, Some(&cfg.model))
}

pub fn eval_result(cfg: &RunConfig) -> Result<EvalResult> {
    let ds = load_dataset(cfg)?;
    let episodes = eval_episodes(&ds, cfg.eval_split, cfg.eval_episodes, cfg.eval_n_shot, cfg.eval_seed)?;
    let predictor: Box<dyn Predictor> = match cfg.eval_predictor {
        PredictorKind::Model => Box::new(load_model(cfg)?),
        PredictorKind::Oracle => Box::new(OraclePredictor),
        PredictorKind::Center => Box::new(CenterPredictor),
    };
    evaluate_episodes(predictor.as_ref(), &episodes)
}

pub fn eval(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let r = eval_result(cfg)?;
    echo_config(cfg)?;
    let csv = format!(
        "split,n_shot,seed,{EVAL_CSV_HEADER}\n{},{},{},{}\n",
        cfg.eval_split,
        cfg.eval_n_shot,
        cfg.eval_seed,
        r.csv_row()
    );
    fs::write(cfg.out_dir.join("metrics.csv"), csv)?;
    println!(
        "{} split, {}-shot, {} episodes: PCK@0.2 {:.4}  AUC {:.4}  NME {:.4}  symmetric {}  occluded {}",
        cfg.eval_split,
        cfg.eval_n_shot,
        r.episodes.len(),
        r.pck,
        r.auc,
        r.nme,
        scape_core::eval::fmt_metric(r.pck_symmetric),
        scape_core::eval::fmt_metric(r.pck_occluded)
    );
    Ok(())
}

/// Comparisons reported by `ablate`, as `(better, worse)` pairs.
pub const COMPARISONS: [(Variant, Variant); 9] = [
    (Variant::Scape, Variant::NoKar),
    (Variant::Scape, Variant::NoGkp),
    (Variant::NoKar, Variant::SharedQk),
    (Variant::NoGkp, Variant::SharedQk),
    (Variant::Scape, Variant::MaskKk),
    (Variant::SharedQk, Variant::MapRegressionHead),
    (Variant::MapRegressionHead, Variant::MatchingHead),
    (Variant::Scape, Variant::Lite),
    (Variant::Scape, Variant::SharedQk),
];

pub fn ablation_budget(cfg: &RunConfig) -> AblationBudget {
    AblationBudget {
        train: TrainConfig {
            steps: cfg.ablate_steps,
            batch_size: cfg.ablate_batch_size,
            base_lr: cfg.ablate_lr,
            ..cfg.train.clone()
        },
        eval_split: cfg.eval_split,
        eval_episodes: cfg.ablate_episodes,
        eval_n_shot: cfg.eval_n_shot,
        eval_seed: cfg.eval_seed,
    }
}

pub fn deltas_csv(report: &AblationReport) -> String {
    let present = report.variants();
    let mut s = String::from("comparison,seed,delta_pck\n");
    for (a, b) in COMPARISONS {
        if !(present.contains(&a) && present.contains(&b)) {
            continue;
        }
        for (seed, d) in report.paired_deltas(a, b) {
            let _ = writeln!(s, "{a}-{b},{seed},{d:.6}");
        }
    }
    s
}

pub fn sign_summary(report: &AblationReport) -> String {
    let present = report.variants();
    let mut s = String::new();
    for (a, b) in COMPARISONS {
        if !(present.contains(&a) && present.contains(&b)) {
            continue;
        }
        let d = report.paired_deltas(a, b);
        let pos = d.iter().filter(|x| x.1 > 0.0).count();
        let mean = d.iter().map(|x| x.1).sum::<f64>() / d.len().max(1) as f64;
        let _ = writeln!(s, "{a} - {b}: mean {mean:+.4}, positive on {pos}/{} seeds", d.len());
    }
    s
}

pub fn ablate(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    echo_config(cfg)?;
    let budget = ablation_budget(cfg);
    let report = run_ablation(
        &ds,
        &cfg.model,
        &cfg.ablate_variants,
        &cfg.ablate_seeds,
        &budget,
        &mut |r| match (&r.result, &r.diverged) {
            (Some(e), _) => eprintln!("{} seed {}: pck {:.4}", r.variant, r.seed, e.pck),
            (None, Some(m)) => eprintln!("{} seed {}: diverged ({m})", r.variant, r.seed),
            _ => {}
        },
    )?;
    fs::write(cfg.out_dir.join("ablation.csv"), report.to_csv())?;
    fs::write(cfg.out_dir.join("ablation_deltas.csv"), deltas_csv(&report))?;
    let baseline = cfg.ablate_variants.first().copied().unwrap_or(Variant::Scape);
    let summary = format!("{}\n{}", report.summary(baseline), sign_summary(&report));
    fs::write(cfg.out_dir.join("ablation_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

/// Writes one PGM per layer×head (keypoint→image attention, one tile per
/// keypoint) and, per interactor layer, head-averaged keypoint rows before
/// and after refinement as CSV.
pub fn write_attention_dump(record: &AttentionRecord<f32>, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let (k, g) = (record.k_valid, record.grid);
    let mut files = Vec::new();
    for (li, layer) in record.layers.iter().enumerate() {
        let stage = match layer.stage {
            Stage::Gkp => "gkp",
            Stage::Interactor => "inter",
        };
        for h in 0..layer.heads() {
            let width = g * k;
            let mut px = vec![0.0; width * g];
            for r in 0..k {
                let row = &layer.attn_row(h, r)[layer.image_cols.clone()];
                let tile = &row[..g * g];
                let max = tile.iter().fold(0.0f32, |m, &v| m.max(v));
                for (cell, &v) in tile.iter().enumerate() {
                    let (y, x) = (cell / g, cell % g);
                    px[y * width + r * g + x] = if max > 0.0 { f64::from(v / max) } else { 0.0 };
                }
            }
            let name = format!("layer{li:02}_{stage}_head{h}.pgm");
            write_pgm(&dir.join(&name), width, g, &px)?;
            files.push(name);
        }
        if let (Stage::Interactor, Some(base)) = (layer.stage, &layer.base_attn) {
            for (tag, maps) in [("before", base), ("after", &layer.attn)] {
                let name = format!("layer{li:02}_kk_{tag}.csv");
                fs::write(dir.join(&name), keypoint_rows_csv(maps, record.k_max, k))?;
                files.push(name);
            }
        }
    }
    Ok(files)
}

/// Head-averaged rows of the valid keypoints over every column.
fn keypoint_rows_csv(maps: &scape_core::Tensor<f32>, k_max: usize, k: usize) -> String {
    let (heads, rows, cols) = (maps.shape()[0], maps.shape()[1], maps.shape()[2]);
    let mut s = String::new();
    let header: Vec<String> = (0..cols)
        .map(|c| if c < k_max { format!("kp{c}") } else { format!("img{}", c - k_max) })
        .collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for r in 0..k {
        let row: Vec<String> = (0..cols)
            .map(|c| {
                let v: f64 = (0..heads)
                    .map(|h| f64::from(maps.data()[(h * rows + r) * cols + c]))
                    .sum::<f64>()
                    / heads as f64;
                format!("{v:.9}")
            })
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn dump_attention(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let model = load_model(cfg)?;
    let ep = eval_episodes(&ds, cfg.eval_split, 1, cfg.eval_n_shot, cfg.dump_episode_seed)?
        .pop()
        .expect("one episode");
    let (_, record) = model.inspect(&ep)?;
    echo_config(cfg)?;
    let dir = cfg.out_dir.join("attention");
    let files = write_attention_dump(&record, &dir)?;
    println!(
        "category {} ({} keypoints): wrote {} files to {}",
        ep.category_id,
        ep.k(),
        files.len(),
        dir.display()
    );
    Ok(())
}
