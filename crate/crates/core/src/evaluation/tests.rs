use super::*;
use crate::numerics::Tensor;
use crate::play::{LabelSet, PlayDirection};
use crate::synthgen::{gen_plays, GenConfig};
use crate::training::build_examples;
use crate::vocab::N_COVERAGE_CLASSES;

#[test]
fn score_perfect_and_empty() {
    let pairs: Vec<(usize, usize)> = (0..30).map(|i| (i % 4, i % 4)).collect();
    let s = score(&pairs);
    assert_eq!((s.hits, s.total), (30, 30));
    assert_eq!(s.accuracy, 1.0);
    assert_eq!(s.macro_f1, 1.0);
    let e = score(&[]);
    assert_eq!((e.accuracy, e.macro_f1), (0.0, 0.0));
}

#[test]
fn score_majority_class() {
    // 7 of class 0, 3 of class 1, everything predicted 0
    let pairs: Vec<(usize, usize)> = (0..10).map(|i| (0, usize::from(i >= 7))).collect();
    let s = score(&pairs);
    assert!((s.accuracy - 0.7).abs() < 1e-12);
    // class 0: tp 7, fp 3 -> 14/17; class 1: 0
    assert!((s.macro_f1 - 7.0 / 17.0).abs() < 1e-12);
}

#[test]
fn score_invariant_to_relabeling() {
    let pairs = [(0, 0), (1, 2), (2, 2), (3, 1), (1, 1), (0, 3), (2, 2)];
    let perm = [5usize, 9, 2, 7];
    let moved: Vec<_> = pairs.iter().map(|&(p, t)| (perm[p], perm[t])).collect();
    let (a, b) = (score(&pairs), score(&moved));
    assert_eq!(a.accuracy, b.accuracy);
    assert!((a.macro_f1 - b.macro_f1).abs() < 1e-15);
}

/// Returns one-hot logits for the true classes.
struct Oracle;

impl WindowPredictor for Oracle {
    fn task(&self) -> Task {
        Task::Coverage
    }

    fn predict_window(&self, _seq: &Sequence, ex: &Example) -> Result<HeadOutput> {
        let rows = ex.targets.rows();
        let mut z = vec![0.0; rows.len() * N_COVERAGE_CLASSES];
        for (r, &c) in rows.iter().enumerate() {
            z[r * N_COVERAGE_CLASSES + c] = 10.0;
        }
        HeadOutput::new(Task::Coverage, Tensor::new(vec![rows.len(), N_COVERAGE_CLASSES], z)?)
    }
}

#[test]
fn oracle_scores_one_everywhere() {
    let plays = gen_plays(&GenConfig {
        n_plays: 12,
        seed: 5,
        ..GenConfig::default()
    })
    .unwrap();
    let (ex, _) = build_examples(&plays, Task::Coverage);
    let rep = evaluate_strategies(&Oracle, &ex).unwrap();
    assert_eq!(rep.rows.len(), 11);
    assert_eq!(rep.n_examples, ex.len());
    for r in &rep.rows {
        assert_eq!(r.all.accuracy, 1.0, "{}", r.strategy);
        assert_eq!(r.headline(Task::Coverage).accuracy, 1.0);
        assert!(r.assigned.total <= r.all.total);
    }
    assert!(rep.per_play.iter().all(|p| p.hits == p.total));
    assert!(rep.confusion.iter().all(|c| c.truth == c.pred));
    let mut csv = Vec::new();
    rep.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 12);
}

// ------------------------------------------------------------ target rules

/// A right-moving play at midfield, mid-game, with the targeted receiver
/// 8 yards downfield at arrival and every defender short and far away.
fn fixture() -> (Play, String) {
    let (mut play, labels): (Play, LabelSet) = gen_plays(&GenConfig {
        n_plays: 1,
        seed: 17,
        ..GenConfig::default()
    })
    .unwrap()
    .remove(0);
    play.play_direction = PlayDirection::Right;
    play.situation.game_clock_s = 900.0;
    let los = play.situation.los_x();
    let rec = labels.targeted_receiver.clone().unwrap_or_else(|| {
        let r = play.receivers()[0];
        play.agents[r].agent_id.clone()
    });
    let ri = play.agent_index(&rec).unwrap();
    let snap = play.events.snap;
    let pa = play.events.pass_arrival.unwrap();
    for (k, d) in play.defenders().into_iter().enumerate() {
        play.frames[snap][d].x = los + 5.0;
        play.frames[pa][d].x = los + 30.0;
        play.frames[pa][d].y = 2.0 + k as f64;
    }
    play.frames[pa][ri].x = los + 8.0;
    play.frames[pa][ri].y = 40.0;
    (play, rec)
}

fn def_id(play: &Play, k: usize) -> String {
    play.agents[play.defenders()[k]].agent_id.clone()
}

fn flat(play: &Play, hot: usize, p: f64) -> Vec<f64> {
    let n = play.defenders().len();
    let rest = (1.0 - p) / n as f64;
    let mut v = vec![rest; n + 1];
    v[hot] = p;
    v
}

#[test]
fn confident_model_is_trusted() {
    let (mut play, rec) = fixture();
    // even in a prevent look behind the line
    let snap = play.events.snap;
    let los = play.situation.los_x();
    for d in play.defenders() {
        play.frames[snap][d].x = los + 20.0;
    }
    play.situation.game_clock_s = 30.0;
    let out = target_postprocess(&flat(&play, 2, 0.6), &play, &rec, None, &PostprocessConfig::default()).unwrap();
    assert_eq!(out, Some(def_id(&play, 2)));
}

#[test]
fn preventative_alignment_needs_late_clock_or_lead() {
    let (mut play, rec) = fixture();
    let snap = play.events.snap;
    let los = play.situation.los_x();
    for d in play.defenders().into_iter().take(4) {
        play.frames[snap][d].x = los + 16.0;
    }
    let cfg = PostprocessConfig::default();
    let probs = flat(&play, 1, 0.3);
    assert!(!preventative_alignment(&play, &cfg));
    assert_eq!(target_postprocess(&probs, &play, &rec, None, &cfg).unwrap(), Some(def_id(&play, 1)));

    let lead = PostprocessConfig {
        assume_lead: true,
        ..PostprocessConfig::default()
    };
    assert!(preventative_alignment(&play, &lead));
    assert_eq!(target_postprocess(&probs, &play, &rec, None, &lead).unwrap(), None);

    play.situation.game_clock_s = 120.0;
    assert!(preventative_alignment(&play, &cfg));

    // three deep is not enough
    let d = play.defenders()[0];
    play.frames[snap][d].x = los + 15.0;
    assert!(!preventative_alignment(&play, &cfg));
}

#[test]
fn catch_behind_line_means_no_target() {
    let (mut play, rec) = fixture();
    let cfg = PostprocessConfig::default();
    assert!(!catch_behind_los(&play, &rec).unwrap());
    let pa = play.events.pass_arrival.unwrap();
    let ri = play.agent_index(&rec).unwrap();
    play.frames[pa][ri].x = play.situation.los_x() - 2.0;
    assert!(catch_behind_los(&play, &rec).unwrap());
    assert_eq!(target_postprocess(&flat(&play, 0, 0.4), &play, &rec, None, &cfg).unwrap(), None);
}

#[test]
fn matchup_fallback_prefers_likeliest_matched_defender() {
    let (play, rec) = fixture();
    let cfg = PostprocessConfig::default();
    let mut probs = flat(&play, 0, 0.3);
    probs[3] = 0.2;
    probs[4] = 0.25;
    let mut m: BTreeMap<String, Option<String>> = play.defenders().iter().map(|&d| (play.agents[d].agent_id.clone(), None)).collect();
    m.insert(def_id(&play, 3), Some(rec.clone()));
    assert_eq!(target_postprocess(&probs, &play, &rec, Some(&m), &cfg).unwrap(), Some(def_id(&play, 3)));
    m.insert(def_id(&play, 4), Some(rec.clone()));
    assert_eq!(target_postprocess(&probs, &play, &rec, Some(&m), &cfg).unwrap(), Some(def_id(&play, 4)));
    // nobody on the receiver: model argmax
    let none: BTreeMap<String, Option<String>> = BTreeMap::new();
    assert_eq!(target_postprocess(&probs, &play, &rec, Some(&none), &cfg).unwrap(), Some(def_id(&play, 0)));
    assert!(target_postprocess(&probs[1..], &play, &rec, None, &cfg).is_err());
}

#[test]
fn baseline_nearest_with_id_tiebreak() {
    let (mut play, rec) = fixture();
    let pa = play.events.pass_arrival.unwrap();
    let ri = play.agent_index(&rec).unwrap();
    let (rx, ry) = (play.frames[pa][ri].x, play.frames[pa][ri].y);
    let defs = play.defenders();
    let (a, b) = (defs[1], defs[5]);
    play.frames[pa][a].x = rx + 3.0;
    play.frames[pa][a].y = ry;
    play.frames[pa][b].x = rx;
    play.frames[pa][b].y = ry - 3.0;
    let want = play.agents[a].agent_id.clone().min(play.agents[b].agent_id.clone());
    assert_eq!(nearest_defender_baseline(&play, &rec).unwrap(), want);
    play.frames[pa][b].y = ry - 2.5;
    assert_eq!(nearest_defender_baseline(&play, &rec).unwrap(), play.agents[b].agent_id);
}

#[test]
fn target_accuracy_counts_none_matches() {
    let p = vec![Some("a".to_string()), None, Some("b".to_string()), None];
    let l = vec![Some("a".to_string()), None, Some("c".to_string()), Some("d".to_string())];
    assert_eq!(target_accuracy(&p, &l).unwrap(), 0.5);
    assert!(target_accuracy(&[], &[]).is_err());
    assert!(target_accuracy(&p, &l[..3]).is_err());
}
