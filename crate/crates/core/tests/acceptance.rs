//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any failed. The two desk training runs
//! take most of the time (about 10 minutes each on one core).

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use candle_core::{Device, Tensor};
use common::loss_oracles as oracle;
use g2gan::data::DomainDataset;
use g2gan::evaluation::{
    capacity_report, evaluate_translator, fid, frechet_distance, train_eval_classifier, ClassifierConfig,
    FeatureEmbedder, GaussianStats, ModelCount,
};
use g2gan::networks::{NetworkConfig, Parameterized, SharingMode};
use g2gan::trainer::{
    checkpoint_name, fit, load_checkpoint, lr_at_epoch, FitOptions, ImageBuffer, MetricsRecorder, Phase,
    StepMetrics, TrainConfig, Trainer,
};
use g2gan::Precision;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(checks: &[(bool, String)]) -> Self {
        Verdict {
            pass: checks.iter().all(|(ok, _)| *ok),
            detail: checks
                .iter()
                .map(|(ok, what)| if *ok { what.clone() } else { format!("[failed] {what}") })
                .collect::<Vec<_>>()
                .join("; "),
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn loss_oracles() -> Verdict {
    let t = Instant::now();
    let mut checks: Vec<(bool, String)> = oracle::oracle_deviations(100)
        .into_iter()
        .map(|(name, dev)| (dev <= 1e-5, format!("{name} {dev:.1e}")))
        .collect();
    let idt = oracle::identity_deviation(20);
    checks.push((idt <= 1e-6, format!("identity cases {idt:.1e}")));
    checks.push((t.elapsed() < Duration::from_secs(60), format!("runtime {}", secs(t.elapsed()))));
    Verdict::new(&checks)
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let mut checks: Vec<(bool, String)> = oracle::gradient_errors()
        .into_iter()
        .map(|(name, err)| (err <= 1e-3, format!("{name} {err:.1e}")))
        .collect();
    checks.push((t.elapsed() < Duration::from_secs(120), format!("runtime {}", secs(t.elapsed()))));
    Verdict::new(&checks)
}

fn capacity() -> Verdict {
    let t = Instant::now();
    let report = capacity_report(7, &NetworkConfig::full_scale(7)).expect("capacity report");
    let mut checks = Vec::new();
    for (mode, reported) in [("full", 53.2e6), ("partial", 53.8e6), ("none", 61.6e6)] {
        let entry = report
            .entries
            .iter()
            .find(|e| e.measured && e.method.contains(&format!("({mode} sharing)")))
            .expect("measured row");
        let got = entry.total() as f64;
        let rel = (got - reported).abs() / reported;
        checks.push((rel <= 0.02, format!("{mode} {:.2}M ({:+.2}%)", got / 1e6, 100.0 * (got / reported - 1.0))));
    }
    let counts = [
        ModelCount::OrderedPairs,
        ModelCount::UnorderedPairs,
        ModelCount::PerDomain,
        ModelCount::Single,
    ]
    .map(|c| c.evaluate(7));
    checks.push((counts == [42, 21, 7, 1], format!("model counts {counts:?}")));
    checks.push((t.elapsed() < Duration::from_secs(10), format!("runtime {}", secs(t.elapsed()))));
    Verdict::new(&checks)
}

fn color_cycle_identity() -> Verdict {
    let gap = oracle::color_cycle_identity_gap(1000);
    Verdict::new(&[(gap <= 1e-6, format!("max |cc - 3 l1| {gap:.1e} over 1000 pairs"))])
}

fn schedule_and_buffer() -> Verdict {
    let cfg = TrainConfig::default();
    let lrs: Vec<f64> = [100, 150, 200].iter().map(|&e| lr_at_epoch(&cfg, e).unwrap()).collect();
    let lr_ok = lrs.iter().zip([2e-4, 1e-4, 0.0]).all(|(a, b)| (a - b).abs() <= 1e-15);

    let mut buffer = ImageBuffer::new(50);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut max_len = 0;
    for i in 0..10_050 {
        let img = Tensor::full(i as f32, (1, 3, 2, 2), &Device::Cpu).unwrap();
        buffer.query(&img, &mut rng).unwrap();
        max_len = max_len.max(buffer.len());
    }
    let (queries, swaps) = buffer.swap_counts();
    let freq = swaps as f64 / queries as f64;
    Verdict::new(&[
        (lr_ok, format!("lr at 100/150/200 = {lrs:?}")),
        (
            queries == 10_000 && (freq - 0.5).abs() <= 0.02,
            format!("swap frequency {freq:.4} over {queries} post-fill queries"),
        ),
        (max_len == 50, format!("pool size peaks at {max_len}")),
    ])
}

/// Everything the desk criteria read from one training run.
struct DeskRun {
    mode: SharingMode,
    train_time: Duration,
    steps: Vec<StepMetrics>,
    finished: bool,
    ca_top1: f64,
    fid_final: f64,
    initial: Trainer,
    trained: Trainer,
}

struct Desk {
    train: DomainDataset,
    holdout: DomainDataset,
    classifier_accuracy: f64,
    classifier: g2gan::evaluation::EvalClassifier,
}

const DESK_HOLDOUT: usize = 40;

fn desk_config(mode: SharingMode) -> TrainConfig {
    // 640 training images, so four epochs cover the 2,000-iteration budget.
    TrainConfig {
        epochs_total: 4,
        epochs_constant_lr: 4,
        sharing_mode: mode,
        seed: 0,
        ..TrainConfig::desk()
    }
}

fn desk_data() -> Desk {
    let data = common::synth(4, 200, 64, 0);
    let (train, holdout) = data.split_holdout(DESK_HOLDOUT).unwrap();
    let classifier = train_eval_classifier(&train, &ClassifierConfig::default()).expect("eval classifier");
    Desk {
        classifier_accuracy: classifier.record().map(|r| r.holdout_accuracy).unwrap_or(0.0),
        train,
        holdout,
        classifier,
    }
}

fn desk_run(desk: &Desk, mode: SharingMode) -> DeskRun {
    let cfg = desk_config(mode);
    let mut rec = MetricsRecorder::default();
    let t = Instant::now();
    let result = fit(cfg.clone(), &desk.train, &FitOptions::default(), &mut rec);
    let train_time = t.elapsed();
    let finished = result.is_ok();
    let trained = result.unwrap_or_else(|e| {
        eprintln!("{mode} desk run aborted: {e}");
        Trainer::new(cfg.clone(), 4, 64).unwrap()
    });
    let report = evaluate_translator(
        &trained.generators().translator,
        &desk.classifier,
        &desk.holdout,
        mode.to_string(),
    )
    .expect("desk evaluation");
    DeskRun {
        mode,
        train_time,
        steps: rec.steps,
        finished,
        ca_top1: report.ca_top1,
        fid_final: report.fid,
        initial: Trainer::new(cfg, 4, 64).unwrap(),
        trained,
    }
}

fn cycle_ratio(run: &DeskRun) -> f64 {
    let cyc: Vec<f64> = run.steps.iter().map(|m| m.cyc).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    mean(&cyc[cyc.len() - 100..]) / mean(&cyc[..100])
}

fn desk_training(desk: &Desk, run: &DeskRun) -> Verdict {
    let finite = run.steps.iter().all(|m| m.entries().iter().all(|(_, v)| v.is_finite()));
    let ratio = cycle_ratio(run);
    Verdict::new(&[
        (desk.classifier_accuracy >= 0.95, format!("(a) eval classifier holdout accuracy {:.3}", desk.classifier_accuracy)),
        (run.ca_top1 >= 0.80, format!("(b) CA top-1 {:.3}", run.ca_top1)),
        (ratio < 0.5, format!("(c) color-cycle last-100 / first-100 = {ratio:.3}")),
        (run.finished && finite, format!("(d) finite throughout, {} iterations", run.steps.len())),
        (
            run.steps.len() == 2000 && run.train_time < Duration::from_secs(900),
            format!("{} sharing, trained in {}", run.mode, secs(run.train_time)),
        ),
    ])
}

fn sharing_direction(none: &DeskRun, full: &DeskRun) -> Verdict {
    Verdict::new(&[
        (
            none.ca_top1 >= full.ca_top1 - 0.05,
            format!("CA none {:.3} vs full {:.3}", none.ca_top1, full.ca_top1),
        ),
        (full.finished, format!("full run trained in {}", secs(full.train_time))),
    ])
}

fn ablation_wiring() -> Verdict {
    let data = common::synth(2, 3, 32, 21);
    let audit_of = |cfg: TrainConfig| {
        let mut t = Trainer::new(cfg, 2, 32).unwrap();
        t.enable_grad_audit();
        let order = data.flat_index();
        for i in 0..2 {
            let batch = t.make_batch(&data, &[order[i]]).unwrap();
            t.train_step(&batch).unwrap();
        }
        t
    };
    let norms = |t: &Trainer, term: &str| {
        let a = t.grad_audit().unwrap();
        a.term_norm(Phase::Translator, term) + a.term_norm(Phase::Reconstructor, term)
    };
    let all = audit_of(common::tiny_config());
    let mut checks = Vec::new();
    for (switch, term) in [("I", "idt"), ("S", "msssim"), ("C", "cyc")] {
        let cfg = TrainConfig {
            use_identity: switch != "I",
            use_msssim: switch != "S",
            use_colorcycle: switch != "C",
            ..common::tiny_config()
        };
        let off = norms(&audit_of(cfg), term);
        let on = norms(&all, term);
        checks.push((off == 0.0 && on > 0.0, format!("All - {switch}: {term} gradient {off} (on: {on:.2e})")));
    }
    let double = Trainer::new(
        TrainConfig {
            use_double_discriminator: true,
            ..common::tiny_config()
        },
        2,
        32,
    )
    .unwrap();
    let d2 = double.second_discriminator().map(|d| d.parameters().len()).unwrap_or(0);
    let in_all = all.parameters().iter().filter(|p| p.name.starts_with("discriminator2")).count();
    checks.push((
        all.second_discriminator().is_none() && in_all == 0 && d2 > 0,
        format!("All - D carries {in_all} second-discriminator tensors (with D: {d2})"),
    ));
    Verdict::new(&checks)
}

fn determinism_and_resume() -> Verdict {
    let data = common::synth(3, 4, 32, 22);
    let cfg = TrainConfig {
        precision: Precision::F64,
        seed: 5,
        ..common::tiny_config()
    };
    let replay = || {
        let mut t = Trainer::new(cfg.clone(), 3, 32).unwrap();
        let order = data.flat_index();
        let metrics: Vec<StepMetrics> = (0..10)
            .map(|i| {
                let batch = t.make_batch(&data, &[order[i % order.len()]]).unwrap();
                t.train_step(&batch).unwrap()
            })
            .collect();
        let params: Vec<Vec<f64>> = t
            .parameters()
            .iter()
            .map(|p| p.var.as_tensor().flatten_all().unwrap().to_vec1().unwrap())
            .collect();
        (metrics, params)
    };
    let bitwise = replay() == replay();

    let data = common::synth(2, 6, 32, 23);
    let cfg = TrainConfig {
        epochs_total: 2,
        epochs_constant_lr: 2,
        seed: 6,
        ..common::tiny_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut straight = MetricsRecorder::default();
    let opts = FitOptions {
        out_dir: Some(dir.path().to_path_buf()),
    };
    fit(cfg, &data, &opts, &mut straight).unwrap();
    let mut resumed = load_checkpoint(&dir.path().join(checkpoint_name(1))).unwrap();
    let mut tail = MetricsRecorder::default();
    resumed.fit(&data, &FitOptions::default(), &mut tail).unwrap();
    let half = straight.steps.len() / 2;
    let gap = straight.steps[half..]
        .iter()
        .zip(&tail.steps)
        .flat_map(|(a, b)| a.entries().into_iter().zip(b.entries()).map(|((_, x), (_, y))| (x - y).abs()))
        .fold(0.0f64, f64::max);
    Verdict::new(&[
        (bitwise, "10-step f64 replay bitwise identical".to_string()),
        (
            tail.steps.len() == half && gap <= 1e-6,
            format!("resume vs uninterrupted max metric gap {gap:.1e} over {} steps", tail.steps.len()),
        ),
    ])
}

/// Pixels as features, for exact FID checks.
struct Coordinates(usize);

impl FeatureEmbedder for Coordinates {
    fn dim(&self) -> usize {
        self.0
    }

    fn embed(&self, images: &[&[f32]]) -> g2gan::Result<Vec<Vec<f64>>> {
        Ok(images.iter().map(|im| im.iter().map(|&v| v as f64).collect()).collect())
    }
}

fn fid_sanity(desk: &Desk, run: &DeskRun) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rows: Vec<Vec<f32>> = (0..100)
        .map(|_| oracle::uniform(&mut rng, 6, -1.0, 1.0).iter().map(|&v| v as f32).collect())
        .collect();
    let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
    let same = fid(&Coordinates(6), &refs, &refs).unwrap();

    let unit = |mean: f64| GaussianStats {
        mean: DVector::from_element(1, mean),
        cov: DMatrix::from_element(1, 1, 1.0),
        count: 2,
    };
    let shifted = frechet_distance(&unit(0.0), &unit(2.0)).unwrap();

    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let clf = if seed == 0 {
            None
        } else {
            Some(
                train_eval_classifier(
                    &desk.train,
                    &ClassifierConfig {
                        seed,
                        ..ClassifierConfig::default()
                    },
                )
                .expect("eval classifier"),
            )
        };
        let clf = clf.as_ref().unwrap_or(&desk.classifier);
        let score = |t: &Trainer| {
            evaluate_translator(&t.generators().translator, clf, &desk.holdout, String::new())
                .unwrap()
                .fid
        };
        let (before, after) = (score(&run.initial), if seed == 0 { run.fid_final } else { score(&run.trained) });
        wins += usize::from(after < before);
        pairs.push(format!("{before:.0}->{after:.0}"));
    }
    Verdict::new(&[
        (same.abs() <= 1e-6, format!("fid(A,A) {same:.1e}")),
        ((shifted - 4.0).abs() <= 1e-3, format!("1-D unit Gaussians 2 apart {shifted:.6}")),
        (wins >= 4, format!("desk FID drops in {wins}/5 embedder seeds ({})", pairs.join(", "))),
    ])
}

fn main() {
    let mut out = std::io::stdout();
    let mut failed = Vec::new();
    let mut emit = |id: usize, name: &str, v: Verdict| {
        let status = if v.pass { "PASS" } else { "FAIL" };
        writeln!(out, "criterion {id:>2} {status}  {name}: {}", v.detail).unwrap();
        out.flush().unwrap();
        if !v.pass {
            failed.push(id);
        }
    };
    emit(1, "loss oracles", loss_oracles());
    emit(2, "gradients", gradients());
    emit(3, "capacity", capacity());
    emit(4, "color-cycle identity", color_cycle_identity());
    emit(5, "schedule and buffer", schedule_and_buffer());

    let desk = desk_data();
    let none = desk_run(&desk, SharingMode::None);
    emit(6, "desk training", desk_training(&desk, &none));
    let full = desk_run(&desk, SharingMode::Full);
    emit(7, "sharing direction", sharing_direction(&none, &full));
    emit(8, "ablation wiring", ablation_wiring());
    emit(9, "determinism and resume", determinism_and_resume());
    emit(10, "fid sanity", fid_sanity(&desk, &none));

    if failed.is_empty() {
        println!("all 10 criteria passed");
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
