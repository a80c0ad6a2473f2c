//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Tests share trained models and take a global lock so they run one at a
//! time; the learning-sanity timing therefore measures uncontended CPU time.

use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::io::Write;
use std::time::{Duration, Instant};

use covresp::analytics::{
    disguise_table, double_coverage_rates, double_coverage_table, GroupBy,
};
use covresp::augmentation::{apply_truncation, fixed_strategies, sample_truncation, TruncationStrategy};
use covresp::evaluation::{evaluate_strategies, evaluate_target, EvalReport, PostprocessConfig, TargetReport};
use covresp::model::{Bound, Model, ModelConfig, PlayContext};
use covresp::numerics::gradcheck::check_coords;
use covresp::numerics::{cosine_restart_lr, onecycle_lr, softmax, CosineRestartConfig, OneCycleConfig, Tape, Tensor, MASK_VALUE};
use covresp::play::{extract_sequence, EndEvent, LabelSet, Play, Sequence, Task};
use covresp::synthgen::{gen_dataset, gen_plays, GenConfig, TeamProfile};
use covresp::training::{
    build_examples, loss_coverage, loss_matchup_index, loss_target, read_checkpoint, train, write_checkpoint,
    write_metrics_csv, Example, TrainConfig,
};
use covresp::vocab::Scheme;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(name: &str, ok: bool, detail: String) {
    // straight to the handle so the line shows without --nocapture
    let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "{name}: {detail}");
}

// ---------------------------------------------------------------- shared run

const TRAIN_PLAYS: usize = 4000;
const TEST_PLAYS: usize = 1000;

struct Trained {
    test: Vec<(Play, LabelSet)>,
    coverage: Model<f32>,
    matchup: Model<f32>,
    reports: BTreeMap<&'static str, EvalReport>,
    target_report: TargetReport,
    elapsed: Duration,
}

fn task_key(t: Task) -> &'static str {
    t.name()
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let t0 = Instant::now();
        let gc = GenConfig {
            n_plays: TRAIN_PLAYS + TEST_PLAYS,
            seed: 20_231,
            p_disguise: 0.3,
            n_defenders: 7,
            ..GenConfig::default()
        };
        let plays = gen_plays(&gc).unwrap();
        let (train_plays, test) = plays.split_at(TRAIN_PLAYS);
        let mut models = BTreeMap::new();
        let mut reports = BTreeMap::new();
        for task in Task::ALL {
            let (ex, _) = build_examples(train_plays, task);
            let mut cfg = TrainConfig::desk(task);
            cfg.seed = 11;
            let out = train::<f32>(&ex, &cfg).unwrap();
            let (tex, _) = build_examples(test, task);
            reports.insert(task_key(task), evaluate_strategies(&out.model, &tex).unwrap());
            models.insert(task_key(task), out.model);
        }
        let target_report = evaluate_target(
            &models["target"],
            Some(&models["matchup"]),
            test,
            &PostprocessConfig::default(),
        )
        .unwrap();
        let elapsed = t0.elapsed();
        Trained {
            test: test.to_vec(),
            coverage: models.remove("coverage").unwrap(),
            matchup: models.remove("matchup").unwrap(),
            reports,
            target_report,
            elapsed,
        }
    })
}

// ------------------------------------------------------------ small models

fn tiny_config(task: Task, rng: &mut ChaCha8Rng) -> ModelConfig {
    let mut c = ModelConfig::for_task(task);
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = rng.gen_range(1..=2);
    c.ffn_mult = 2;
    c.head_hidden = 8;
    c.dropout = 0.0;
    c
}

/// Random play with `n_def` defenders and `n_rec` receivers, `pre + post`
/// frames around the snap.
fn random_play(rng: &mut ChaCha8Rng, n_def: usize, n_rec: usize, pre: usize, post: usize) -> (Play, LabelSet) {
    let cfg = GenConfig {
        n_plays: 1,
        n_defenders: n_def.clamp(2, 11),
        n_receivers: n_rec.clamp(1, 9),
        n_linemen: 1,
        p_double_coverage: if n_def >= 3 { 0.055 } else { 0.0 },
        seed: rng.gen(),
        ..GenConfig::default()
    };
    let (mut play, labels) = gen_plays(&cfg).unwrap().remove(0);
    // cut to the requested frame budget around the snap
    let snap = play.events.snap;
    let first = snap - pre.min(snap);
    let pa = play.events.pass_arrival.unwrap();
    let last = (snap + post).min(pa).max(snap + 2);
    play.frames = play.frames[first..=last].to_vec();
    play.events.snap -= first;
    play.events.pass_forward = Some((last - first).saturating_sub(1).max(play.events.snap + 1));
    play.events.pass_arrival = Some(last - first);
    (play, labels)
}

fn window(play: &Play, t: usize) -> Sequence {
    let seq = extract_sequence(play, -(play.events.snap as i32), EndEvent::PassArrival).unwrap();
    let start = seq.start;
    seq.slice(start, start + t as i32 - 1).unwrap()
}

fn head_loss(
    model: &Model<f64>,
    tape: &mut Tape<f64>,
    seq: &Sequence,
    ctx: &PlayContext,
    targets: &[usize],
) -> (covresp::numerics::Var, Bound) {
    let b = model.bind(tape, true);
    let lat = model.encode::<ChaCha8Rng>(tape, &b, seq, ctx, None).unwrap();
    let out = model.head::<ChaCha8Rng>(tape, &b, lat, ctx, None).unwrap();
    (tape.cross_entropy(out, targets), b)
}

// ------------------------------------------------------------------ criteria

#[test]
fn gradient_correctness() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut configs = 0;
    // losses on the tape
    for _ in 0..100 {
        let d = rng.gen_range(1..12);
        let c = rng.gen_range(2..21);
        let z = Tensor::from_f64(&[d, c], &(0..d * c).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>()).unwrap();
        let t: Vec<usize> = (0..d).map(|_| rng.gen_range(0..c)).collect();
        worst = worst.max(covresp::numerics::grad_check(|tp, x| tp.cross_entropy(x, &t), &z, 1e-5));
        let n = rng.gen_range(3..13);
        let z = Tensor::from_f64(&[1, n], &(0..n).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>()).unwrap();
        let k = rng.gen_range(0..n - 1);
        worst = worst.max(covresp::numerics::grad_check(
            |tp, x| {
                let m = tp.fill_last(x, &[n - 1], MASK_VALUE);
                tp.cross_entropy(m, &[k])
            },
            &z,
            1e-5,
        ));
    }
    // full model, parameters sampled per configuration
    let mut tasks = Task::ALL.iter().cycle();
    while configs < 100 {
        let task = *tasks.next().unwrap();
        let a = rng.gen_range(4..=14);
        let n_def = (a / 2).clamp(2, 7);
        let n_rec = (a - n_def - 2).clamp(1, 5);
        let t = rng.gen_range(2..=40);
        let (play, labels) = random_play(&mut rng, n_def, n_rec, 30, 40);
        let seq = window(&play, t.min(play.frames.len()));
        let tr = labels.targeted_receiver.clone();
        let ctx = PlayContext::from_play(&play, if task == Task::Target { tr.as_deref() } else { None }).unwrap();
        let nd = ctx.defenders.len();
        let targets: Vec<usize> = match task {
            Task::Coverage => (0..nd).map(|_| rng.gen_range(0..20)).collect(),
            Task::Matchup => (0..nd).map(|_| rng.gen_range(0..=ctx.receivers.len())).collect(),
            Task::Target => vec![rng.gen_range(0..nd)],
        };
        let cfg = tiny_config(task, &mut rng);
        let mut model = Model::<f64>::new(cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let (loss, bound) = head_loss(&model, &mut tape, &seq, &ctx, &targets);
        tape.backward(loss);
        let mut analytic = Vec::new();
        for (t, &v) in model.params.tensors().iter().zip(&bound.vars) {
            analytic.extend(tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]));
        }
        let point = model.params.flatten();
        let coords: Vec<usize> = (0..12).map(|_| rng.gen_range(0..point.len())).collect();
        let base = model.clone();
        let mut f = |x: &[f64]| {
            model.params = base.params.clone();
            model.params.assign_flat(x);
            let mut tp = Tape::new();
            let (l, _) = head_loss(&model, &mut tp, &seq, &ctx, &targets);
            tp.value(l).data()[0]
        };
        worst = worst.max(check_coords(&mut f, &point, &analytic, Some(&coords), 1e-5));
        configs += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        "gradient correctness",
        worst < 1e-4 && secs < 300.0,
        format!("max rel err {worst:.2e} over 200 loss checks and {configs} model configs, {secs:.1}s"),
    );
}

fn naive_ce(row: &[f64], t: usize) -> f64 {
    let z: f64 = row.iter().map(|v| v.exp()).sum();
    -(row[t].exp() / z).ln()
}

#[test]
fn loss_oracles() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.gen_range(1..12);
        let r = rng.gen_range(1..8);
        let z: Vec<f64> = (0..d * (r + 1)).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let t: Vec<usize> = (0..d).map(|_| rng.gen_range(0..=r)).collect();
        let got = loss_matchup_index(&Tensor::new(vec![d, r + 1], z.clone()).unwrap(), &t).unwrap();
        let want = (0..d).map(|i| naive_ce(&z[i * (r + 1)..(i + 1) * (r + 1)], t[i])).sum::<f64>() / d as f64;
        worst = worst.max((got - want).abs());

        let z: Vec<f64> = (0..d * 20).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let t: Vec<usize> = (0..d).map(|_| rng.gen_range(0..20)).collect();
        let got = loss_coverage(&Tensor::new(vec![d, 20], z.clone()).unwrap(), &t).unwrap();
        let want = (0..d).map(|i| naive_ce(&z[i * 20..(i + 1) * 20], t[i])).sum::<f64>() / d as f64;
        worst = worst.max((got - want).abs());

        let mut z: Vec<f64> = (0..=d).map(|_| rng.gen_range(-6.0..6.0)).collect();
        z[d] = MASK_VALUE;
        let k = rng.gen_range(0..d.max(1));
        if d >= 1 {
            let got = loss_target(&z, k).unwrap();
            let want = naive_ce(&z[..d], k);
            worst = worst.max((got - want).abs());
        }
    }
    let ln = |x: f64| x.ln();
    let u = |d: usize, c: usize| Tensor::new(vec![d, c], vec![0.0; d * c]).unwrap();
    let mut closed = vec![
        (loss_matchup_index(&u(3, 6), &[0, 2, 5]).unwrap(), ln(6.0)),
        (loss_coverage(&u(11, 20), &[3; 11]).unwrap(), ln(20.0)),
    ];
    let mut z = vec![0.0; 12];
    z[11] = MASK_VALUE;
    closed.push((loss_target(&z, 4).unwrap(), ln(11.0)));
    closed.push((
        loss_matchup_index(&Tensor::new(vec![2, 2], vec![0.0, ln(3.0), ln(3.0), 0.0]).unwrap(), &[1, 0]).unwrap(),
        -(0.75f64).ln(),
    ));
    let mut cz = vec![0.0; 20];
    cz[0] = 2.0;
    closed.push((
        loss_coverage(&Tensor::new(vec![1, 20], cz).unwrap(), &[0]).unwrap(),
        -(2f64.exp() / (2f64.exp() + 19.0)).ln(),
    ));
    closed.push((loss_target(&[ln(2.0), 0.0, MASK_VALUE], 0).unwrap(), -(2.0f64 / 3.0).ln()));
    let closed_err = closed.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    report(
        "loss oracles",
        worst < 1e-9 && closed_err < 1e-9,
        format!("max |err| vs naive oracle {worst:.1e} on 1000 instances x 3 losses; closed forms {closed_err:.1e}"),
    );
}

#[test]
fn masking() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..2000 {
        let d = rng.gen_range(1..=11);
        let scale = [1.0, 1e3, 1e6, 1e8][i % 4];
        let mut z: Vec<f64> = (0..d).map(|_| rng.gen_range(-scale..scale)).collect();
        z.push(MASK_VALUE);
        let p = softmax(&Tensor::new(vec![1, d + 1], z).unwrap(), 1).unwrap();
        worst = worst.max(p.data()[d]);
    }
    // through the model head
    for _ in 0..50 {
        let (play, labels) = random_play(&mut rng, 7, 5, 30, 30);
        let cfg = tiny_config(Task::Target, &mut rng);
        let model = Model::<f64>::new(cfg, &mut rng).unwrap();
        let seq = window(&play, play.frames.len());
        let ctx = PlayContext::from_play(&play, labels.targeted_receiver.as_deref()).unwrap();
        let p = model.predict(&seq, &ctx).unwrap().probs().unwrap();
        worst = worst.max(*p.data().last().unwrap());
    }
    report(
        "masking",
        worst < 1e-300,
        format!("max offensive-slot probability {worst:e} over 2050 softmaxes"),
    );
}

#[test]
fn permutation_equivariance() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut argmax_ok = 0;
    let n = 1000;
    let mut tasks = Task::ALL.iter().cycle();
    for _ in 0..n {
        let task = *tasks.next().unwrap();
        let n_def = rng.gen_range(2..=7);
        let n_rec = rng.gen_range(1..=5);
        let pre = rng.gen_range(1..20);
        let (play, labels) = random_play(&mut rng, n_def, n_rec, pre, 6);
        let t = rng.gen_range(1..=play.frames.len().min(12));
        let seq = window(&play, t);
        let tr = if task == Task::Target { labels.targeted_receiver.as_deref() } else { None };
        let ctx = PlayContext::from_play(&play, tr).unwrap();
        let a = ctx.n_agents();
        let mut perm: Vec<usize> = (0..a).collect();
        perm.shuffle(&mut rng);
        let mut inv = vec![0; a];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let f = seq.features.shape()[2];
        let src = seq.features.data();
        let mut pdata = Vec::with_capacity(src.len());
        for &p in &perm {
            pdata.extend_from_slice(&src[p * t * f..(p + 1) * t * f]);
        }
        let pseq = Sequence {
            features: Tensor::new(vec![a, t, f], pdata).unwrap(),
            ..seq.clone()
        };
        let pctx = ctx.permuted(&perm);
        let mut cfg = tiny_config(task, &mut rng);
        cfg.d_model = 16;
        let model = Model::<f64>::new(cfg, &mut rng).unwrap();
        // per-agent latents
        let lat = |s: &Sequence, c: &PlayContext| {
            let mut tp = Tape::new();
            let b = model.bind(&mut tp, false);
            let v = model.encode::<ChaCha8Rng>(&mut tp, &b, s, c, None).unwrap();
            tp.value(v).clone()
        };
        let (l0, l1) = (lat(&seq, &ctx), lat(&pseq, &pctx));
        let w = l0.shape()[1];
        for old in 0..a {
            let new = inv[old];
            for k in 0..w {
                worst = worst.max((l0.data()[old * w + k] - l1.data()[new * w + k]).abs());
            }
        }
        // head rows follow the defenders; matchup columns follow the receivers
        let o0 = model.predict(&seq, &ctx).unwrap();
        let o1 = model.predict(&pseq, &pctx).unwrap();
        let row_of = |c: &PlayContext, agent: usize| c.defenders.iter().position(|&d| d == agent).unwrap();
        let col_of = |c: &PlayContext, agent: usize| 1 + c.receivers.iter().position(|&r| r == agent).unwrap();
        let cols = o0.logits.shape()[1];
        match task {
            Task::Coverage | Task::Matchup => {
                for &d in &ctx.defenders {
                    let (r0, r1) = (row_of(&ctx, d), row_of(&pctx, inv[d]));
                    for c in 0..cols {
                        let c1 = if task == Task::Matchup && c > 0 {
                            col_of(&pctx, inv[ctx.receivers[c - 1]])
                        } else {
                            c
                        };
                        worst = worst.max((o0.logits.data()[r0 * cols + c] - o1.logits.data()[r1 * cols + c1]).abs());
                    }
                }
                argmax_ok += 1;
            }
            Task::Target => {
                let a0 = o0.argmax()[0];
                let a1 = o1.argmax()[0];
                let mapped = if a0 < ctx.defenders.len() {
                    row_of(&pctx, inv[ctx.defenders[a0]])
                } else {
                    a0
                };
                argmax_ok += (mapped == a1) as usize;
                for (k, &d) in ctx.defenders.iter().enumerate() {
                    let k1 = row_of(&pctx, inv[d]);
                    worst = worst.max((o0.logits.data()[k] - o1.logits.data()[k1]).abs());
                }
            }
        }
    }
    report(
        "permutation equivariance",
        worst <= 1e-6 && argmax_ok == n,
        format!("max |diff| {worst:.1e} over {n} pairs; argmax mapped {argmax_ok}/{n}"),
    );
}

#[test]
fn augmentation_statistics() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (play, _) = gen_plays(&GenConfig { n_plays: 1, ..GenConfig::default() }).unwrap().remove(0);
    let seq = extract_sequence(&play, -30, EndEvent::PassArrival).unwrap();
    let fixed = fixed_strategies();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let n = 100_000;
    let mut n_fixed = 0;
    for _ in 0..n {
        let s = sample_truncation(&mut rng, &seq.events);
        if s.is_fixed() {
            n_fixed += 1;
            *counts.entry(s.label()).or_default() += 1;
        }
        apply_truncation(&seq, &s).unwrap();
    }
    let frac = n_fixed as f64 / n as f64;
    let worst_freq = fixed
        .iter()
        .map(|s| (counts.get(&s.label()).copied().unwrap_or(0) as f64 / n as f64 - 0.6 / 11.0).abs())
        .fold(0.0, f64::max);
    let all_present = fixed.iter().all(|s| counts.contains_key(&s.label())) && counts.len() == 11;
    let no_zero_snap = !fixed.contains(&TruncationStrategy::fixed(0, EndEvent::Snap)) && !counts.contains_key("0_snap");
    report(
        "augmentation statistics",
        (frac - 0.6).abs() <= 0.01 && worst_freq <= 0.003 && all_present && no_zero_snap,
        format!("fixed share {frac:.4}; max per-strategy deviation {worst_freq:.4}; 11 present {all_present}; (0, snap) absent {no_zero_snap}"),
    );
}

#[test]
fn scheduler_exactness() {
    let _g = serial();
    let total = 1000;
    let oc = OneCycleConfig::new(total);
    let lr0 = onecycle_lr(0, &oc).unwrap();
    let peak_step = (0.1 * total as f64).round() as u64;
    let peak = onecycle_lr(peak_step, &oc).unwrap();
    let last = onecycle_lr(total - 1, &oc).unwrap();
    let max_seen = (0..total).map(|s| onecycle_lr(s, &oc).unwrap()).fold(0.0, f64::max);
    let cc = CosineRestartConfig::default();
    let (c0, c15, cmid) = (cosine_restart_lr(0.0, &cc), cosine_restart_lr(15.0, &cc), cosine_restart_lr(7.5, &cc));
    let ok = (lr0 - 2e-5).abs() < 1e-18
        && (peak - 2e-4).abs() < 1e-18
        && max_seen == peak
        && (last - 2e-7).abs() < 1e-18
        && (c0 - 2e-5).abs() < 1e-18
        && (c15 - 2e-5).abs() < 1e-18
        && (cmid - 1.01e-5).abs() <= 1e-12;
    report(
        "scheduler exactness",
        ok,
        format!("onecycle {lr0:e} -> {peak:e} at step {peak_step} -> {last:e}; cosine {c0:e}, {cmid:e} at 7.5, {c15:e} at 15"),
    );
}

#[test]
fn learning_sanity() {
    let _g = serial();
    let tr = trained();
    let full = TruncationStrategy::fixed(-30, EndEvent::PassArrival);
    let mut lines = Vec::new();
    let mut ok = true;
    for task in Task::ALL {
        let rep = &tr.reports[task_key(task)];
        let acc = rep.row(&full).unwrap().headline(task).accuracy;
        ok &= acc >= 0.85;
        lines.push(format!("{task} full-window {acc:.3}"));
    }
    for task in [Task::Matchup, Task::Coverage] {
        let rep = &tr.reports[task_key(task)];
        let pre = rep.rows.iter().filter(|r| r.pre_snap).map(|r| r.headline(task).accuracy).fold(0.0, f64::max);
        let arr = rep
            .rows
            .iter()
            .filter(|r| r.end == EndEvent::PassArrival.label())
            .map(|r| r.headline(task).accuracy)
            .fold(1.0, f64::min);
        ok &= pre < arr;
        lines.push(format!("{task} best pre-snap {pre:.3} < worst pass-arrival {arr:.3}"));
    }
    let secs = tr.elapsed.as_secs_f64();
    ok &= secs < 900.0;
    lines.push(format!("train+eval {secs:.0}s"));
    report("learning sanity", ok, lines.join("; "));
}

#[test]
fn baseline_ordering() {
    let _g = serial();
    let tr = trained();
    let zone = tr
        .test
        .iter()
        .filter(|(p, _)| !matches!(p.situation.team_scheme, Scheme::Cover1 | Scheme::Man))
        .count() as f64
        / tr.test.len() as f64;
    let r = &tr.target_report;
    report(
        "baseline ordering",
        zone >= 0.3 && r.raw_accuracy > r.baseline_accuracy && r.postprocessed_accuracy >= r.raw_accuracy,
        format!(
            "zone share {zone:.2}; nearest defender {:.3} < transformer {:.3} <= post-processed {:.3} over {} plays ({} changed)",
            r.baseline_accuracy, r.raw_accuracy, r.postprocessed_accuracy, r.n_plays, r.n_changed
        ),
    );
}

#[test]
fn double_coverage_calibration() {
    let _g = serial();
    let gc = GenConfig {
        n_plays: 20_000,
        seed: 555,
        p_double_coverage: 0.055,
        ..GenConfig::default()
    };
    let plays = gen_plays(&gc).unwrap();
    let gt = double_coverage_table(&plays, None, GroupBy::DefenseTeam).unwrap();
    drop(plays);
    let tr = trained();
    let m = double_coverage_rates(&tr.coverage, &tr.matchup, &tr.test, GroupBy::Receiver).unwrap();
    let gt_ok = (gt.gt_global_rate - 0.055).abs() <= 0.005;
    let model_ok = (m.global_rate - m.gt_global_rate).abs() <= 0.015;
    report(
        "double coverage calibration",
        gt_ok && model_ok,
        format!(
            "generator {:.4} over {} plays; model {:.4} vs ground truth {:.4} on {} test plays",
            gt.gt_global_rate, gt.n_plays, m.global_rate, m.gt_global_rate, m.n_plays
        ),
    );
}

#[test]
fn disguise_monotonicity() {
    let _g = serial();
    let tr = trained();
    let gc = GenConfig {
        n_plays: 1800,
        seed: 4242,
        teams: vec![
            TeamProfile::with_disguise("D00", 0.0),
            TeamProfile::with_disguise("D40", 0.4),
            TeamProfile::with_disguise("D80", 0.8),
        ],
        ..GenConfig::default()
    };
    let plays = gen_plays(&gc).unwrap();
    let (ex, _) = build_examples(&plays, Task::Coverage);
    let table = disguise_table(&tr.coverage, &ex).unwrap();
    let get = |t: &str| table.rows.iter().find(|r| r.team_id == t).unwrap();
    let (a, b, c) = (get("D00"), get("D40"), get("D80"));
    let enough = [a, b, c].iter().all(|r| r.n_plays >= 500);
    report(
        "disguise monotonicity",
        enough && a.presnap_accuracy > b.presnap_accuracy && b.presnap_accuracy > c.presnap_accuracy,
        format!(
            "pre-snap accuracy 0.0 -> {:.3} (n {}), 0.4 -> {:.3} (n {}), 0.8 -> {:.3} (n {})",
            a.presnap_accuracy, a.n_plays, b.presnap_accuracy, b.n_plays, c.presnap_accuracy, c.n_plays
        ),
    );
}

#[test]
fn determinism_and_persistence() {
    let _g = serial();
    // dataset bytes
    let dir = tempfile::tempdir().unwrap();
    let gc = GenConfig { n_plays: 80, seed: 9, ..GenConfig::default() };
    gen_dataset(&gc, dir.path().join("a")).unwrap();
    gen_dataset(&gc, dir.path().join("b")).unwrap();
    let same_data = ["plays.jsonl", "manifest.json"].iter().all(|f| {
        std::fs::read(dir.path().join("a").join(f)).unwrap() == std::fs::read(dir.path().join("b").join(f)).unwrap()
    });
    // training curves, checkpoints and reports
    let plays = gen_plays(&gc).unwrap();
    let (ex, _) = build_examples(&plays, Task::Matchup);
    let mut cfg = TrainConfig::desk(Task::Matchup);
    cfg.epochs = 2;
    cfg.seed = 3;
    let run = |ex: &[Example]| {
        let out = train::<f32>(ex, &cfg).unwrap();
        let mut csv = Vec::new();
        write_metrics_csv(&mut csv, &out.metrics).unwrap();
        let ck = write_checkpoint(&out.model, Some(&out.state)).unwrap();
        let rep = serde_json::to_vec(&evaluate_strategies(&out.model, ex).unwrap()).unwrap();
        (out, csv, ck, rep)
    };
    let (o1, csv1, ck1, rep1) = run(&ex);
    let (_, csv2, ck2, rep2) = run(&ex);
    let same_run = csv1 == csv2 && ck1 == ck2 && rep1 == rep2;
    // checkpoint round trip
    let (loaded, state) = read_checkpoint::<f32>(&ck1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut identical = 0;
    for _ in 0..10 {
        let (p, _) = random_play(&mut rng, 7, 5, 30, 60);
        let seq = extract_sequence(&p, -30, EndEvent::PassArrival).unwrap();
        let ctx = PlayContext::from_play(&p, None).unwrap();
        let a = o1.model.predict(&seq, &ctx).unwrap();
        let b = loaded.predict(&seq, &ctx).unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        identical += (bits(&a.logits) == bits(&b.logits)) as usize;
    }
    let state_ok = state.as_ref() == Some(&o1.state);
    report(
        "determinism and persistence",
        same_data && same_run && identical == 10 && state_ok,
        format!(
            "dataset bytes equal {same_data}; curves/checkpoint/report bytes equal {same_run}; bit-identical predictions {identical}/10; state restored {state_ok}"
        ),
    );
}
