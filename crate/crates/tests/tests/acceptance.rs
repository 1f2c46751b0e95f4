//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Slow; trains a full model and an ablation grid.

use std::time::Instant;

use clap::Parser;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scape_core::data::{DataConfig, Dataset, Episode, Instance, Similarity, Split};
use scape_core::eval::{
    auc, eval_episodes, evaluate, nme, pck, run_ablation, train, AblationBudget, AblationReport, NoObserver,
    TrainConfig,
};
use scape_core::gradcheck::{grad_check, grad_check_many};
use scape_core::model::{checkpoint, decode_argmax, ForwardOptions, ModelConfig, ScapeModel, Stage, Variant};
use scape_core::nn::{Adam, AdamState, Binding};
use scape_cli::Cli;
use scape_core::{Result, Tape, Tensor, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn away_from_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(0.05..1.0);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Categories giving a 50-category training split.
const CATEGORIES: usize = 71;

fn dataset() -> Dataset {
    Dataset::generate(DataConfig {
        categories: CATEGORIES,
        ..DataConfig::default()
    })
    .unwrap()
}

// ---------------------------------------------------------------- gradients

fn weigh(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let w = t.constant(random(&shape, &mut rng(seed ^ 0x5eed)));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

type OpFn = fn(&mut Tape<f64>, &[Var], u64) -> Result<Var>;

fn per_op_worst() -> (f64, String) {
    let ops: Vec<(&str, Vec<Vec<usize>>, OpFn)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v, s| {
            let y = t.matmul(v[0], v[1])?;
            weigh(t, y, s)
        }),
        ("transpose", vec![vec![3, 2]], |t, v, s| {
            let y = t.transpose(v[0])?;
            weigh(t, y, s)
        }),
        ("add_sub_mul", vec![vec![2, 3], vec![2, 3]], |t, v, s| {
            let a = t.add(v[0], v[1])?;
            let b = t.sub(v[0], v[1])?;
            let y = t.mul(a, b)?;
            weigh(t, y, s)
        }),
        ("add_row", vec![vec![3, 4], vec![4]], |t, v, s| {
            let y = t.add_row(v[0], v[1])?;
            weigh(t, y, s)
        }),
        ("mul_col", vec![vec![3, 4], vec![3, 1]], |t, v, s| {
            let y = t.mul_col(v[0], v[1])?;
            weigh(t, y, s)
        }),
        ("softmax", vec![vec![3, 5]], |t, v, s| {
            let y = t.softmax_rows(v[0], Some(&[true, true, false, true, true, true, true, true, true, true, false, false, true, true, true]))?;
            weigh(t, y, s)
        }),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], |t, v, s| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weigh(t, y, s)
        }),
        ("slice_pad_concat", vec![vec![4, 5], vec![2, 6]], |t, v, s| {
            let b = t.slice_block(v[0], 1..3, 2..5)?;
            let p = t.pad_block(b, 4, 6, 1, 1)?;
            let c = t.concat_rows(&[p, v[1]])?;
            weigh(t, c, s)
        }),
        ("cross_entropy", vec![vec![3, 6]], |t, v, _| t.cross_entropy_rows(v[0], &[Some(1), None, Some(5)])),
    ];
    let mut worst = (0.0f64, String::new());
    for (name, shapes, f) in &ops {
        for seed in 0..10 {
            let mut r = rng(1000 + seed);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut r)).collect();
            let err = grad_check_many(|t: &mut Tape<f64>, v: &[Var]| f(t, v, seed), &inputs, 1e-5).unwrap();
            if err > worst.0 {
                worst = (err, name.to_string());
            }
        }
    }
    for seed in 0..10 {
        let mut r = rng(2000 + seed);
        let x = away_from_zero(&[3, 4], &mut r);
        let err = grad_check(
            |t: &mut Tape<f64>, v| {
                let y = t.relu(v);
                weigh(t, y, seed)
            },
            &x,
            1e-5,
        )
        .unwrap();
        if err > worst.0 {
            worst = (err, "relu".into());
        }
        let target = random(&[4, 2], &mut r);
        let offset = away_from_zero(&[4, 2], &mut r);
        let pred = Tensor::new(vec![4, 2], offset.data().iter().zip(target.data()).map(|(a, b)| a + b).collect()).unwrap();
        let err = grad_check(
            |t: &mut Tape<f64>, v| {
                let tg = t.constant(target.clone());
                t.l1_loss(v, tg, &[true, false, true, true])
            },
            &pred,
            1e-5,
        )
        .unwrap();
        if err > worst.0 {
            worst = (err, "l1".into());
        }
    }
    worst
}

fn toy_instance(keypoints: Vec<[f64; 2]>, seed: u64) -> Instance {
    let mut r = rng(seed);
    let k = keypoints.len();
    Instance {
        image: Tensor::new(vec![16, 16, 1], (0..256).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap(),
        keypoints,
        visibility: vec![true; k],
        bbox: [0.1, 0.1, 0.9, 0.9],
        category_id: 0,
        transform: Similarity::IDENTITY,
    }
}

fn end_to_end_error() -> f64 {
    let cfg = ModelConfig {
        image_size: 16,
        patch_size: 4,
        d_model: 16,
        n_heads: 2,
        n_gkp_layers: 1,
        n_interactor_layers: 1,
        k_max: 2,
        af_hidden: 1,
        ffn_hidden: 16,
        ..ModelConfig::default()
    };
    let model = ScapeModel::<f64>::new(cfg, 0).unwrap();
    let ep = Episode {
        category_id: 0,
        supports: vec![toy_instance(vec![[0.3, 0.2], [0.7, 0.6]], 1)],
        query: toy_instance(vec![[0.4, 0.3], [0.6, 0.8]], 2),
        normalizer: 0.8,
        symmetric_pairs: vec![],
    };
    // a generic point: zero-initialized tensors would sit on ReLU kinks
    let mut r = rng(3);
    let inputs: Vec<Tensor<f64>> = model
        .params()
        .tensors()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for v in t.data_mut() {
                *v += r.gen_range(-0.1..0.1);
            }
            t
        })
        .collect();
    grad_check_many(
        |tape: &mut Tape<f64>, vars: &[Var]| {
            let p = Binding::from_vars(vars.to_vec());
            let opts = ForwardOptions {
                with_loss: true,
                ..ForwardOptions::default()
            };
            Ok(model.forward(tape, &p, &ep, opts)?.loss.unwrap())
        },
        &inputs,
        1e-6,
    )
    .unwrap()
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let e2e = end_to_end_error();
    let (op, name) = per_op_worst();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        e2e < 1e-4 && op < 1e-5 && secs < 120.0,
        format!("end-to-end {e2e:.2e} (< 1e-4), worst op {name} {op:.2e} (< 1e-5), {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- attention

fn attention_invariants(ds: &Dataset) -> Outcome {
    let variants = [Variant::Scape, Variant::Lite, Variant::NoGkp, Variant::NoKar, Variant::SharedQk, Variant::MaskKk];
    let mut r = rng(4);
    let (mut worst_attn, mut worst_assign, mut kk_mass) = (0.0f64, 0.0f64, 0.0f64);
    let (mut rows, mut assign_rows, mut kk_cells) = (0usize, 0usize, 0usize);
    for i in 0..100 {
        let variant = variants[i % variants.len()];
        let model = ScapeModel::<f64>::new(
            ModelConfig {
                variant,
                ..ModelConfig::default()
            },
            r.gen(),
        )
        .unwrap();
        let n_shot = if i % 4 == 0 { 5 } else { 1 };
        let ep = ds.sample_episode(Split::Test, n_shot, &mut r).unwrap();
        let (_, rec) = model.inspect(&ep).unwrap();
        for layer in &rec.layers {
            let c = layer.attn.shape()[2];
            let maps = std::iter::once(&layer.attn).chain(layer.base_attn.as_ref());
            for m in maps {
                for row in m.data().chunks(c) {
                    worst_attn = worst_attn.max((row.iter().sum::<f64>() - 1.0).abs());
                    rows += 1;
                }
            }
            if let Some(a) = &layer.assign {
                for row in a.data().chunks(a.shape()[1]) {
                    worst_assign = worst_assign.max((row.iter().sum::<f64>() - 1.0).abs());
                    assign_rows += 1;
                }
            }
            if variant == Variant::MaskKk && layer.stage == Stage::Interactor {
                for h in 0..layer.heads() {
                    for kr in 0..rec.k_max {
                        let row = layer.attn_row(h, kr);
                        kk_mass = kk_mass.max(row[..rec.k_max].iter().fold(0.0, |m: f64, v| m.max(v.abs())));
                        kk_cells += rec.k_max;
                    }
                }
            }
        }
    }
    outcome(
        worst_attn <= 1e-9 && worst_assign <= 1e-9 && kk_mass == 0.0 && kk_cells > 0 && assign_rows > 0,
        format!(
            "{rows} attention rows max |sum-1| {worst_attn:.1e}, {assign_rows} assign rows {worst_assign:.1e}, \
             mask_kk max kk mass {kk_mass} over {kk_cells} cells"
        ),
    )
}

fn kar_zero_identity(ds: &Dataset) -> Outcome {
    let mut scape = ScapeModel::<f64>::new(ModelConfig::default(), 11).unwrap();
    let zeroed = scape.zero_kar();
    let plain = scape.with_variant(Variant::NoKar).unwrap();
    let mut r = rng(5);
    let mut equal = 0;
    for _ in 0..20 {
        let ep = ds.sample_episode(Split::Test, 1, &mut r).unwrap();
        let a = scape.predict(&ep).unwrap();
        let b = plain.predict(&ep).unwrap();
        let bitwise = a
            .iter()
            .zip(&b)
            .all(|(p, q)| p[0].to_bits() == q[0].to_bits() && p[1].to_bits() == q[1].to_bits());
        equal += usize::from(bitwise && a.len() == b.len());
    }
    outcome(equal == 20, format!("{equal}/20 episodes bitwise equal ({zeroed} parameters zeroed)"))
}

// ---------------------------------------------------------------- oracles

fn oracle_equivalences(ds: &Dataset) -> Outcome {
    let mut r = rng(6);
    let mut worst = [0.0f64; 4];
    for _ in 0..20 {
        let (m, k, n) = (r.gen_range(1..7), r.gen_range(1..7), r.gen_range(1..7));
        let a = random(&[m, k], &mut r);
        let b = random(&[k, n], &mut r);
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
        let c = t.matmul(va, vb).unwrap();
        let mut oracle = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    oracle[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        worst[0] = worst[0].max(max_abs(t.value(c).data(), &oracle));

        let x = random(&[m, n], &mut r).map(|v| v * 10.0);
        let vx = t.constant(x.clone());
        let s = t.softmax_rows(vx, None).unwrap();
        let mut oracle = Vec::new();
        for row in x.data().chunks(n) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            oracle.extend(row.iter().map(|v| v.exp() / z));
        }
        worst[1] = worst[1].max(max_abs(t.value(s).data(), &oracle));

        let g = random(&[n], &mut r);
        let bt = random(&[n], &mut r);
        let (vg, vb2) = (t.constant(g.clone()), t.constant(bt.clone()));
        let ln = t.layer_norm(vx, vg, vb2, 1e-5).unwrap();
        let mut oracle = Vec::new();
        for row in x.data().chunks(n) {
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            for (j, v) in row.iter().enumerate() {
                oracle.push((v - mu) / (var + 1e-5).sqrt() * g.data()[j] + bt.data()[j]);
            }
        }
        worst[2] = worst[2].max(max_abs(t.value(ln).data(), &oracle));

        let pred = random(&[m, 2], &mut r);
        let target = random(&[m, 2], &mut r);
        let vis: Vec<bool> = (0..m).map(|i| i == 0 || r.gen_bool(0.6)).collect();
        let (vp, vt) = (t.constant(pred.clone()), t.constant(target.clone()));
        let l1 = t.l1_loss(vp, vt, &vis).unwrap();
        let (mut acc, mut cnt) = (0.0, 0.0);
        for i in 0..m {
            if vis[i] {
                for c in 0..2 {
                    acc += (pred.at2(i, c) - target.at2(i, c)).abs();
                    cnt += 1.0;
                }
            }
        }
        worst[3] = worst[3].max((t.value(l1).data()[0] - acc / cnt).abs());
    }
    let tensors_ok = worst[0] <= 1e-12 && worst[1] <= 1e-12 && worst[2] <= 1e-10 && worst[3] <= 1e-12;

    let mut argmax_ok = true;
    for _ in 0..100 {
        let g = r.gen_range(2..9);
        let map: Vec<f64> = (0..g * g).map(|_| f64::from(r.gen_range(0..10))).collect();
        let mut best = 0;
        for i in 0..map.len() {
            if map[i] > map[best] {
                best = i;
            }
        }
        let expect = [((best % g) as f64 + 0.5) / g as f64, ((best / g) as f64 + 0.5) / g as f64];
        argmax_ok &= decode_argmax(&map, g) == expect;
    }

    let mut metric_worst = 0.0f64;
    let mut pck_exact = true;
    let episodes = eval_episodes(ds, Split::Test, 50, 1, 8).unwrap();
    for ep in &episodes {
        let pred: Vec<[f64; 2]> = ep
            .query
            .keypoints
            .iter()
            .map(|p| [p[0] + r.gen_range(-0.15..0.15), p[1] + r.gen_range(-0.15..0.15)])
            .collect();
        let mut d = Vec::new();
        let mut hits = 0;
        for i in 0..ep.k() {
            if ep.query.visibility[i] {
                let dist = ((pred[i][0] - ep.query.keypoints[i][0]).powi(2)
                    + (pred[i][1] - ep.query.keypoints[i][1]).powi(2))
                .sqrt()
                    / ep.normalizer;
                hits += usize::from(dist <= 0.2);
                d.push(dist);
            }
        }
        if d.is_empty() {
            continue;
        }
        let got = pck(&pred, &ep.query.keypoints, &ep.query.visibility, ep.normalizer, 0.2).unwrap();
        pck_exact &= got == hits as f64 / d.len() as f64;
        let mut area = 0.0;
        let mut prev = d.iter().filter(|&&x| x <= 0.0).count() as f64 / d.len() as f64;
        for s in 1..=20 {
            let cur = d.iter().filter(|&&x| x <= 0.2 * s as f64 / 20.0).count() as f64 / d.len() as f64;
            area += (prev + cur) / 2.0 * 0.01;
            prev = cur;
        }
        metric_worst = metric_worst.max((auc(&d, 0.2, 20).unwrap() - area / 0.2).abs());
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        metric_worst = metric_worst.max((nme(&d).unwrap() - mean).abs());
    }
    outcome(
        tensors_ok && argmax_ok && pck_exact && metric_worst <= 1e-12,
        format!(
            "matmul {:.1e}, softmax {:.1e}, layernorm {:.1e}, l1 {:.1e}, argmax {}, pck exact {}, auc/nme {:.1e}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            if argmax_ok { "exact" } else { "MISMATCH" },
            pck_exact,
            metric_worst
        ),
    )
}

// ---------------------------------------------------------------- training

fn overfit(ds: &Dataset) -> (bool, String) {
    let ep = eval_episodes(ds, Split::Train, 1, 1, 9).unwrap().pop().unwrap();
    let mut model = ScapeModel::<f64>::new(ModelConfig::default(), 12).unwrap();
    let mut st = AdamState::new(model.params().tensors(), 1e-3);
    let mut reached = None;
    for step in 0..300 {
        let (_, g) = model.loss_and_grads(&ep, None).unwrap();
        Adam::step_store(model.params_mut(), &g, &mut st).unwrap();
        if reached.is_none() && model.loss(&ep).unwrap() < 0.02 {
            reached = Some(step + 1);
        }
    }
    let last = model.loss(&ep).unwrap();
    match reached {
        Some(s) => (true, format!("overfit L1 < 0.02 after {s} steps (final {last:.4})")),
        None => (false, format!("overfit L1 {last:.4} after 300 steps")),
    }
}

fn trainability(ds: &Dataset) -> Outcome {
    let (ok_overfit, overfit_msg) = overfit(ds);
    let cfg = TrainConfig {
        steps: 20_000,
        batch_size: 8,
        base_lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut model = ScapeModel::<f32>::new(ModelConfig::default(), 0).unwrap();
    let t = Instant::now();
    let trained = train(&mut model, ds, &cfg, &mut NoObserver);
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    let (pck_ok, msg) = match trained {
        Ok(_) => {
            let r = evaluate(&model, ds, Split::Test, 500, 1, 0).unwrap();
            (
                r.pck >= 0.75 && minutes <= 30.0,
                format!(
                    "test PCK@0.2 {:.4} (>= 0.75) on {} unseen categories, {} steps x batch {} in {minutes:.1} min (<= 30)",
                    r.pck,
                    ds.split_indices(Split::Test).len(),
                    cfg.steps,
                    cfg.batch_size
                ),
            )
        }
        Err(d) => (false, format!("diverged at step {}: {}", d.step, d.error)),
    };
    outcome(ok_overfit && pck_ok, format!("{overfit_msg}; {msg}"))
}

// ---------------------------------------------------------------- ablations

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn ablation_grid(ds: &Dataset) -> AblationReport {
    let variants = [
        Variant::Scape,
        Variant::NoKar,
        Variant::NoGkp,
        Variant::SharedQk,
        Variant::MaskKk,
        Variant::MapRegressionHead,
        Variant::MatchingHead,
    ];
    let budget = AblationBudget {
        train: TrainConfig {
            steps: 2000,
            batch_size: 8,
            base_lr: 1e-3,
            ..TrainConfig::default()
        },
        eval_split: Split::Test,
        eval_episodes: 300,
        eval_n_shot: 1,
        eval_seed: 100,
    };
    let t = Instant::now();
    run_ablation(ds, &ModelConfig::default(), &variants, &SEEDS, &budget, &mut |r| {
        eprintln!(
            "  [{:>6.0}s] {} seed {}: {}",
            t.elapsed().as_secs_f64(),
            r.variant,
            r.seed,
            r.result.as_ref().map_or("diverged".to_string(), |e| format!("pck {:.4}", e.pck))
        )
    })
    .unwrap()
}

fn mean_delta(report: &AblationReport, a: Variant, b: Variant) -> f64 {
    let d = report.paired_deltas(a, b);
    d.iter().map(|x| x.1).sum::<f64>() / d.len().max(1) as f64
}

fn complete(report: &AblationReport, vs: &[Variant]) -> bool {
    vs.iter().all(|&v| report.per_seed_pck(v).len() >= 5)
}

fn table8(report: &AblationReport) -> Outcome {
    let m = |v| report.mean_pck(v).unwrap_or(f64::NAN);
    let pairs = [
        (Variant::Scape, Variant::NoKar),
        (Variant::Scape, Variant::NoGkp),
        (Variant::NoKar, Variant::SharedQk),
        (Variant::NoGkp, Variant::SharedQk),
    ];
    let deltas: Vec<f64> = pairs.iter().map(|&(a, b)| mean_delta(report, a, b)).collect();
    let pass = complete(report, &[Variant::Scape, Variant::NoKar, Variant::NoGkp, Variant::SharedQk])
        && m(Variant::Scape) > m(Variant::NoKar).max(m(Variant::NoGkp))
        && m(Variant::NoKar).min(m(Variant::NoGkp)) > m(Variant::SharedQk)
        && deltas.iter().all(|&d| d > 0.0);
    outcome(
        pass,
        format!(
            "scape {:.4} / no_kar {:.4} / no_gkp {:.4} / shared_qk {:.4}; paired deltas {:+.4} {:+.4} {:+.4} {:+.4}",
            m(Variant::Scape),
            m(Variant::NoKar),
            m(Variant::NoGkp),
            m(Variant::SharedQk),
            deltas[0],
            deltas[1],
            deltas[2],
            deltas[3]
        ),
    )
}

fn table6(report: &AblationReport) -> Outcome {
    let m = |v| report.mean_pck(v).unwrap_or(f64::NAN);
    let (c, s, e) = (Variant::SharedQk, Variant::MapRegressionHead, Variant::MatchingHead);
    let d1 = mean_delta(report, c, s);
    let d2 = mean_delta(report, s, e);
    outcome(
        complete(report, &[c, s, e]) && m(c) > m(s) && m(s) > m(e),
        format!(
            "coordinate {:.4} > map regression {:.4} > explicit matching {:.4}; paired deltas {d1:+.4} {d2:+.4}",
            m(c),
            m(s),
            m(e)
        ),
    )
}

fn masking(report: &AblationReport) -> Outcome {
    let m = |v| report.mean_pck(v).unwrap_or(f64::NAN);
    outcome(
        complete(report, &[Variant::Scape, Variant::MaskKk]) && m(Variant::MaskKk) < m(Variant::Scape),
        format!(
            "mask_kk {:.4} < scape {:.4}; paired delta {:+.4}",
            m(Variant::MaskKk),
            m(Variant::Scape),
            mean_delta(report, Variant::Scape, Variant::MaskKk)
        ),
    )
}

fn strata(report: &AblationReport) -> Outcome {
    let occ = |v| report.mean_pck_occluded(v).unwrap_or(f64::NAN);
    let sym = |v| report.mean_pck_symmetric(v).unwrap_or(f64::NAN);
    outcome(
        complete(report, &[Variant::Scape, Variant::NoKar, Variant::NoGkp])
            && occ(Variant::Scape) > occ(Variant::NoKar)
            && sym(Variant::Scape) > sym(Variant::NoGkp),
        format!(
            "occluded: scape {:.4} vs no_kar {:.4}; symmetric: scape {:.4} vs no_gkp {:.4}",
            occ(Variant::Scape),
            occ(Variant::NoKar),
            sym(Variant::Scape),
            sym(Variant::NoGkp)
        ),
    )
}

// ---------------------------------------------------------------- reproducibility

fn run_cli(args: &[&str]) -> bool {
    match Cli::try_parse_from(std::iter::once("scape").chain(args.iter().copied())) {
        Ok(cli) => scape_cli::run(cli).is_ok(),
        Err(_) => false,
    }
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut ok = true;
    for run in ["a", "b"] {
        let out = d.join(run);
        let out_dir = out.display().to_string();
        let manifest = out.join("manifest.csv").display().to_string();
        let ckpt = out.join("model.ckpt").display().to_string();
        let base = ["--manifest", manifest.as_str(), "--out-dir", out_dir.as_str(), "--checkpoint", ckpt.as_str()];
        let cmds: [&[&str]; 3] = [
            &["gen", "--seed", "7", "--categories", "20"],
            &["train", "--seed", "3", "--steps", "30", "--epochs", "3", "--batch-size", "2", "--lr", "1e-3"],
            &["eval", "--seed", "5", "--episodes", "30"],
        ];
        for c in cmds {
            let args: Vec<&str> = c.iter().chain(base.iter()).copied().collect();
            ok &= run_cli(&args);
        }
    }
    let same = |f: &str| -> bool {
        match (std::fs::read(d.join("a").join(f)), std::fs::read(d.join("b").join(f))) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        }
    };
    let files = ["manifest.csv", "loss.csv", "model.ckpt", "metrics.csv"];
    let identical: Vec<bool> = files.iter().map(|f| same(f)).collect();

    let model = checkpoint::load::<f32>(&d.join("a/model.ckpt"), None);
    let round_trip = match (model, std::fs::read(d.join("a/model.ckpt"))) {
        (Ok(m), Ok(bytes)) => checkpoint::encode(&m) == bytes,
        _ => false,
    };
    let m64 = ScapeModel::<f64>::new(ModelConfig::default(), 9).unwrap();
    let bytes = checkpoint::encode(&m64);
    let round_trip64 = checkpoint::decode::<f64>(&bytes, Some(m64.config()))
        .map(|m| checkpoint::encode(&m) == bytes)
        .unwrap_or(false);
    let all_same = identical.iter().all(|&x| x);
    outcome(
        ok && all_same && round_trip && round_trip64,
        format!(
            "commands ok {ok}; identical {}; checkpoint round trip f32 {round_trip} f64 {round_trip64}",
            files
                .iter()
                .zip(&identical)
                .map(|(f, s)| format!("{f}={s}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let start = Instant::now();
    let ds = dataset();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let step = |name: &'static str, f: &dyn Fn() -> Outcome, results: &mut Vec<(&str, Outcome)>| {
        let t = Instant::now();
        let o = f();
        eprintln!("{name} done in {:.0}s", t.elapsed().as_secs_f64());
        results.push((name, o));
    };
    step("gradient correctness", &gradient_correctness, &mut results);
    step("attention invariants", &|| attention_invariants(&ds), &mut results);
    step("KAR-zero identity", &|| kar_zero_identity(&ds), &mut results);
    step("oracle equivalences", &|| oracle_equivalences(&ds), &mut results);
    step("reproducibility", &reproducibility, &mut results);
    step("trainability", &|| trainability(&ds), &mut results);
    let report = ablation_grid(&ds);
    eprintln!("{}", report.summary(Variant::Scape));
    results.push(("ablation trend: components", table8(&report)));
    results.push(("ablation trend: output heads", table6(&report)));
    results.push(("ablation trend: keypoint masking", masking(&report)));
    results.push(("ablation trend: hard-keypoint strata", strata(&report)));

    println!();
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} min",
        results.len() - failed,
        start.elapsed().as_secs_f64() / 60.0
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
