//! Kinematic simulation of one play and its ground-truth labels.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::routes::{route_path, Route};
use super::GenConfig;
use crate::play::{
    Agent, AgentFrame, LabelSet, Play, PlayDirection, PlayEvents, Situation, TeamSide, FIELD_LENGTH,
    FIELD_WIDTH, FRAME_HZ, PRE_SNAP_FRAMES,
};
use crate::vocab::{CoverageClass, Scheme};

const MID_Y: f64 = FIELD_WIDTH / 2.0;
const DT: f64 = 1.0 / FRAME_HZ;
/// Man defender offset from the receiver: yards deeper, yards inside.
pub(crate) const MAN_CUSHION: [f64; 2] = [3.0, 1.0];
const BRACKET_CUSHION: [f64; 2] = [7.0, 0.0];
/// Post-snap frames over which a disguised defender blends into its true behavior.
const DISGUISE_FRAMES: f64 = 5.0;
const ZONE_MATCH_RADIUS: f64 = 12.0;
const DROP_SPEED: f64 = 6.0;
const READ_SPEED: f64 = 4.0;
const READ_LEASH: f64 = 4.0;
const RALLY_RADIUS: f64 = 10.0;
const RALLY_SPEED: f64 = 4.0;
const RUSH_SPEED: f64 = 5.0;
const NOISE_RHO: f64 = 0.8;
/// Prevent plays are generated inside the final two minutes.
pub(crate) const LATE_CLOCK_S: f64 = 120.0;

const DEFENSE_PATTERN: [&str; 11] = ["DL", "CB", "CB", "S", "LB", "S", "LB", "DL", "DL", "CB", "DL"];

/// Generator internals kept alongside a play for tests and analytics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenTrace {
    pub defense_team: String,
    pub offense_team: String,
    pub disguised: bool,
    /// Scheme whose alignment the defense shows before the snap.
    pub alignment_scheme: Scheme,
    pub double_covered: Option<String>,
    pub routes: Vec<Route>,
    /// Per defender, in roster order: `(agent_id, snap position, alignment
    /// anchor of the shown role)` on the normalized field.
    pub alignments: Vec<(String, [f64; 2], [f64; 2])>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Tmpl {
    Zone(&'static str),
    Man(usize),
}

fn template(s: Scheme) -> Vec<Tmpl> {
    use Tmpl::*;
    match s {
        Scheme::Cover1 => vec![Zone("DEEP_MIDDLE"), Man(0), Man(1), Man(2), Man(3), Man(4), Zone("HOOK_MIDDLE")],
        Scheme::Cover2 => vec![
            Zone("DEEP_HALF_LEFT"),
            Zone("DEEP_HALF_RIGHT"),
            Zone("FLAT_LEFT"),
            Zone("FLAT_RIGHT"),
            Zone("HOOK_CURL_LEFT"),
            Zone("HOOK_CURL_RIGHT"),
            Zone("HOOK_MIDDLE"),
        ],
        Scheme::Cover3 => vec![
            Zone("DEEP_THIRD_LEFT"),
            Zone("DEEP_THIRD_MIDDLE"),
            Zone("DEEP_THIRD_RIGHT"),
            Zone("HOOK_CURL_LEFT"),
            Zone("HOOK_CURL_RIGHT"),
            Zone("FLAT_LEFT"),
            Zone("FLAT_RIGHT"),
        ],
        Scheme::Cover4 => vec![
            Zone("QUARTERS_OUTSIDE_LEFT"),
            Zone("QUARTERS_INSIDE_LEFT"),
            Zone("QUARTERS_INSIDE_RIGHT"),
            Zone("QUARTERS_OUTSIDE_RIGHT"),
            Zone("HOOK_CURL_LEFT"),
            Zone("HOOK_CURL_RIGHT"),
            Zone("HOOK_MIDDLE"),
        ],
        Scheme::Cover6 => vec![
            Zone("QUARTERS_OUTSIDE_LEFT"),
            Zone("QUARTERS_INSIDE_LEFT"),
            Zone("DEEP_HALF_RIGHT"),
            Zone("FLAT_RIGHT"),
            Zone("HOOK_CURL_LEFT"),
            Zone("HOOK_CURL_RIGHT"),
            Zone("HOOK_MIDDLE"),
        ],
        Scheme::Man => vec![Man(0), Man(1), Man(2), Man(3), Man(4), Zone("HOOK_MIDDLE"), Zone("DEEP_MIDDLE")],
        Scheme::Prevent => vec![
            Zone("PREVENT_DEEP"),
            Zone("PREVENT_DEEP"),
            Zone("PREVENT_DEEP"),
            Zone("PREVENT_DEEP"),
            Zone("PREVENT_UNDERNEATH"),
            Zone("PREVENT_UNDERNEATH"),
            Zone("PREVENT_UNDERNEATH"),
        ],
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Role {
    Rush,
    Man { class: CoverageClass, receiver: usize },
    Zone { class: CoverageClass, landmark: [f64; 2], align: [f64; 2] },
}

impl Role {
    fn class(&self) -> CoverageClass {
        match *self {
            Role::Rush => CoverageClass::NO_ASSIGNMENT,
            Role::Man { class, .. } | Role::Zone { class, .. } => class,
        }
    }
}

/// Expands a scheme template into `n` coverage roles on a field whose line of
/// scrimmage is at `los`.
fn expand_roles(scheme: Scheme, n: usize, n_receivers: usize, los: f64) -> Vec<Role> {
    let names: Vec<&str> = template(scheme)
        .into_iter()
        .take(n)
        .map(|t| match t {
            Tmpl::Man(r) if r < n_receivers => "",
            Tmpl::Man(_) => "HOOK_MIDDLE",
            Tmpl::Zone(z) => z,
        })
        .collect();
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for &z in names.iter().filter(|z| !z.is_empty()) {
        *totals.entry(z).or_default() += 1;
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let tmpl = template(scheme);
    names
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if z.is_empty() {
                let Tmpl::Man(r) = tmpl[i] else { unreachable!() };
                return Role::Man {
                    class: CoverageClass::MAN,
                    receiver: r,
                };
            }
            let class = CoverageClass::by_name(z).expect("template names exist in the class table");
            let info = class.info();
            let k = totals[z];
            let slot = seen.entry(z).or_default();
            let shift = (*slot as f64 - (k as f64 - 1.0) / 2.0) * info.spread;
            *slot += 1;
            let lm = info.landmark.expect("zone landmark");
            let al = info.align.expect("zone alignment");
            Role::Zone {
                class,
                landmark: [los + lm[0], lm[1] + shift],
                align: [los + al[0], al[1] + shift],
            }
        })
        .collect()
}

fn preference(role: &Role, pos: &str, receiver_pos: &[&str]) -> u8 {
    let order: [&str; 3] = match *role {
        Role::Rush => return 0,
        Role::Man { class, receiver } => {
            if class == CoverageClass::BRACKET {
                ["S", "CB", "LB"]
            } else if receiver_pos[receiver] == "WR" {
                ["CB", "S", "LB"]
            } else {
                ["LB", "S", "CB"]
            }
        }
        Role::Zone { class, .. } => {
            match class.name() {
                n if n.starts_with("DEEP_HALF")
                    || n == "DEEP_THIRD_MIDDLE"
                    || n == "DEEP_MIDDLE"
                    || n.starts_with("QUARTERS_INSIDE")
                    || n == "PREVENT_DEEP" =>
                {
                    ["S", "CB", "LB"]
                }
                n if n.starts_with("FLAT") || n.starts_with("QUARTERS_OUTSIDE") || n.starts_with("DEEP_THIRD") => {
                    ["CB", "S", "LB"]
                }
                _ => ["LB", "S", "CB"],
            }
        }
    };
    order.iter().position(|&p| p == pos).map_or(0, |i| 3 - i as u8)
}

/// Greedy role placement: each role in order takes the free defender that
/// prefers it most, ties by roster order. Returns the role index per defender.
fn assign_greedy(roles: &[Role], def_pos: &[&str], receiver_pos: &[&str]) -> Vec<usize> {
    let mut out = vec![usize::MAX; def_pos.len()];
    for (ri, role) in roles.iter().enumerate() {
        let best = (0..def_pos.len())
            .filter(|&d| out[d] == usize::MAX)
            .max_by_key(|&d| (preference(role, def_pos[d], receiver_pos), std::cmp::Reverse(d)))
            .expect("as many roles as defenders");
        out[best] = ri;
    }
    out
}

fn inside_sign(y: f64) -> f64 {
    if y > MID_Y {
        -1.0
    } else {
        1.0
    }
}

fn cushion(class: CoverageClass, receiver_start: [f64; 2]) -> [f64; 2] {
    let c = if class == CoverageClass::BRACKET {
        BRACKET_CUSHION
    } else {
        MAN_CUSHION
    };
    [c[0], c[1] * inside_sign(receiver_start[1])]
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn step_toward(pos: [f64; 2], target: [f64; 2], max_step: f64) -> [f64; 2] {
    let d = dist(pos, target);
    if d <= max_step || d == 0.0 {
        target
    } else {
        let f = max_step / d;
        [pos[0] + f * (target[0] - pos[0]), pos[1] + f * (target[1] - pos[1])]
    }
}

fn clamp_field(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.5, FIELD_LENGTH - 0.5), p[1].clamp(0.5, FIELD_WIDTH - 0.5)]
}

/// Zone owner of `p`: the zone role whose landmark is nearest (lowest index on ties).
fn zone_owner(landmarks: &[(usize, [f64; 2])], p: [f64; 2]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(d, lm) in landmarks {
        let dd = dist(lm, p);
        if best.map_or(true, |(_, b)| dd < b) {
            best = Some((d, dd));
        }
    }
    best.map(|(d, _)| d)
}

/// Receiver a zone defender reads: nearest to its landmark among receivers in
/// its zone and within the match radius.
fn zone_match(d: usize, landmarks: &[(usize, [f64; 2])], receivers: &[[f64; 2]]) -> Option<usize> {
    let lm = landmarks.iter().find(|(i, _)| *i == d)?.1;
    let mut best: Option<(usize, f64)> = None;
    for (r, &p) in receivers.iter().enumerate() {
        let dd = dist(lm, p);
        if dd <= ZONE_MATCH_RADIUS && zone_owner(landmarks, p) == Some(d) && best.map_or(true, |(_, b)| dd < b) {
            best = Some((r, dd));
        }
    }
    best.map(|(r, _)| r)
}

struct ReceiverSlot {
    pos: &'static str,
    x_off: f64,
    y: f64,
    jitter: f64,
    weight: f64,
}

const RECEIVER_SLOTS: [ReceiverSlot; 9] = [
    ReceiverSlot { pos: "WR", x_off: -1.0, y: 47.0, jitter: 2.0, weight: 0.30 },
    ReceiverSlot { pos: "WR", x_off: -1.0, y: 6.5, jitter: 2.0, weight: 0.25 },
    ReceiverSlot { pos: "WR", x_off: -1.0, y: 38.0, jitter: 2.0, weight: 0.20 },
    ReceiverSlot { pos: "TE", x_off: -1.0, y: 20.0, jitter: 1.0, weight: 0.15 },
    ReceiverSlot { pos: "RB", x_off: -6.0, y: MID_Y, jitter: 2.0, weight: 0.10 },
    ReceiverSlot { pos: "WR", x_off: -1.0, y: 14.0, jitter: 1.5, weight: 0.15 },
    ReceiverSlot { pos: "WR", x_off: -1.0, y: 42.5, jitter: 1.0, weight: 0.15 },
    ReceiverSlot { pos: "TE", x_off: -1.0, y: 32.0, jitter: 1.0, weight: 0.10 },
    ReceiverSlot { pos: "RB", x_off: -6.0, y: 22.0, jitter: 1.0, weight: 0.05 },
];

fn pick_route<R: Rng>(rng: &mut R, pos: &str) -> (Route, f64) {
    use Route::*;
    let (routes, weights, depth): (&[Route], &[f64], (f64, f64)) = match pos {
        "WR" => (&[Go, Out, In, Curl, Post, Flat], &[0.2, 0.2, 0.2, 0.15, 0.15, 0.1], (5.0, 12.0)),
        "TE" => (&[In, Out, Curl, Flat], &[0.3, 0.2, 0.3, 0.2], (4.0, 9.0)),
        _ => (&[Flat, Curl, In], &[0.5, 0.3, 0.2], (2.0, 5.0)),
    };
    let i = WeightedIndex::new(weights).unwrap().sample(rng);
    (routes[i], rng.gen_range(depth.0..depth.1))
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let m = 10f64.powi(decimals);
    (v * m).round() / m
}

fn angle(deg: f64) -> f64 {
    let a = round_to(deg.rem_euclid(360.0), 1);
    if a >= 360.0 {
        a - 360.0
    } else {
        a
    }
}

pub(crate) fn simulate<R: Rng>(cfg: &GenConfig, play_index: u64, rng: &mut R) -> (Play, LabelSet, GenTrace) {
    // Teams, scheme and disguise.
    let nt = cfg.teams.len();
    let dti = rng.gen_range(0..nt);
    let oti = if nt > 1 {
        (dti + rng.gen_range(1..nt)) % nt
    } else {
        dti
    };
    let dteam = &cfg.teams[dti];
    let oteam = &cfg.teams[oti];
    let (schemes, weights): (Vec<Scheme>, Vec<f64>) = cfg.scheme_mix.iter().map(|(s, w)| (*s, *w)).unzip();
    let mix = WeightedIndex::new(&weights).expect("validated scheme mix");
    let scheme = schemes[mix.sample(rng)];
    let p_disguise = dteam.p_disguise.unwrap_or(cfg.p_disguise);
    let disguised = rng.gen_bool(p_disguise);
    let decoy = schemes[mix.sample(rng)];
    let alignment_scheme = if disguised { decoy } else { scheme };
    let double_cover = rng.gen_bool(cfg.p_double_coverage);

    // Situation.
    let down = 1 + WeightedIndex::new([0.4, 0.3, 0.25, 0.05]).unwrap().sample(rng) as u8;
    let distance = if down == 1 { 10.0 } else { rng.gen_range(1..=15) as f64 };
    let yard_line = rng.gen_range(10..=80) as f64;
    let game_clock_s = if scheme == Scheme::Prevent {
        round_to(rng.gen_range(5.0..LATE_CLOCK_S), 1)
    } else {
        round_to(rng.gen_range(0.0..3600.0), 1)
    };
    let situation = Situation {
        down,
        distance,
        yard_line,
        game_clock_s,
        team_scheme: scheme,
    };
    let los = situation.los_x();

    // Events.
    let snap = PRE_SNAP_FRAMES + rng.gen_range(0..=5);
    let pf = snap + rng.gen_range(15..=40);
    let pa = pf + rng.gen_range(3..=15);
    let n_frames = pa + 1 + rng.gen_range(0..=5);
    let n_post = n_frames - snap;

    // Offense.
    let nr = cfg.n_receivers;
    let mut agents: Vec<Agent> = Vec::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut make_id = |team: &str, pos: &str| {
        let key = format!("{team}_{pos}");
        let c = counts.entry(key.clone()).or_default();
        *c += 1;
        format!("{key}{c}")
    };
    agents.push(Agent {
        agent_id: make_id(&oteam.name, "QB"),
        team_side: TeamSide::Offense,
        position: "QB".into(),
        eligible_receiver: false,
    });
    for _ in 0..cfg.n_linemen {
        agents.push(Agent {
            agent_id: make_id(&oteam.name, "OL"),
            team_side: TeamSide::Offense,
            position: "OL".into(),
            eligible_receiver: false,
        });
    }
    let rec0 = agents.len();
    let mut rec_start = Vec::with_capacity(nr);
    let mut routes = Vec::with_capacity(nr);
    let mut rec_paths: Vec<Vec<[f64; 2]>> = Vec::with_capacity(nr);
    let receiver_pos: Vec<&str> = RECEIVER_SLOTS[..nr].iter().map(|s| s.pos).collect();
    for slot in &RECEIVER_SLOTS[..nr] {
        agents.push(Agent {
            agent_id: make_id(&oteam.name, slot.pos),
            team_side: TeamSide::Offense,
            position: slot.pos.into(),
            eligible_receiver: true,
        });
        let start = [los + slot.x_off, slot.y + rng.gen_range(-slot.jitter..=slot.jitter)];
        let (route, depth) = pick_route(rng, slot.pos);
        let out = if start[1] > MID_Y { 1.0 } else { -1.0 };
        let post = route_path(start, route, depth, out, n_post);
        let mut path = vec![start; snap];
        path.extend(post.into_iter().map(clamp_field));
        rec_start.push(start);
        routes.push(route);
        rec_paths.push(path);
    }
    let rec_weights: Vec<f64> = RECEIVER_SLOTS[..nr].iter().map(|s| s.weight).collect();
    let target_r = WeightedIndex::new(&rec_weights).unwrap().sample(rng);

    let qb_path: Vec<[f64; 2]> = (0..n_frames)
        .map(|t| {
            let tau = t.saturating_sub(snap) as f64 * DT;
            [los - 5.0 - (2.0 * tau).min(2.0), MID_Y]
        })
        .collect();
    let ol_paths: Vec<Vec<[f64; 2]>> = (0..cfg.n_linemen)
        .map(|k| {
            let y = MID_Y + (k as f64 - (cfg.n_linemen as f64 - 1.0) / 2.0) * 1.5;
            (0..n_frames)
                .map(|t| {
                    let tau = t.saturating_sub(snap) as f64 * DT;
                    [los - 1.0 - tau.min(1.0), y]
                })
                .collect()
        })
        .collect();

    // Defense roster and roles.
    let nd = cfg.n_defenders;
    let def_pos: Vec<&str> = DEFENSE_PATTERN[..nd].to_vec();
    let def0 = agents.len();
    for &p in &def_pos {
        agents.push(Agent {
            agent_id: make_id(&dteam.name, p),
            team_side: TeamSide::Defense,
            position: p.into(),
            eligible_receiver: false,
        });
    }
    let max_rush = if nd >= 3 { nd - 2 } else { 1 };
    let n_rush = ((nd as i64 - 7).max(1) as usize + rng.gen_range(0..=1)).clamp(1, max_rush);
    let mut rush_order: Vec<usize> = (0..nd).filter(|&d| def_pos[d] == "DL").collect();
    for p in ["LB", "S", "CB"] {
        rush_order.extend((0..nd).rev().filter(|&d| def_pos[d] == p));
    }
    let rushers: Vec<usize> = rush_order[..n_rush].to_vec();
    let cov: Vec<usize> = (0..nd).filter(|d| !rushers.contains(d)).collect();
    let n_cov = cov.len();

    let mut true_roles = expand_roles(scheme, n_cov, nr, los);
    let mut dc_receiver = None;
    if double_cover && n_cov >= 2 {
        let star = rng.gen_range(0..nr.min(3));
        let man_on_star = true_roles
            .iter()
            .position(|r| matches!(r, Role::Man { receiver, .. } if *receiver == star));
        let bracket = Role::Man {
            class: CoverageClass::BRACKET,
            receiver: star,
        };
        match man_on_star {
            Some(m) => {
                let others: Vec<usize> = (0..n_cov).filter(|&i| i != m).collect();
                true_roles[*others.choose(rng).unwrap()] = bracket;
            }
            None => {
                let picks: Vec<usize> = rand::seq::index::sample(rng, n_cov, 2).into_vec();
                true_roles[picks[0]] = Role::Man {
                    class: CoverageClass::MAN,
                    receiver: star,
                };
                true_roles[picks[1]] = bracket;
            }
        }
        dc_receiver = Some(star);
    }
    let cov_pos: Vec<&str> = cov.iter().map(|&d| def_pos[d]).collect();
    let role_of_cov: Vec<usize> = if disguised {
        let mut idx: Vec<usize> = (0..n_cov).collect();
        idx.shuffle(rng);
        idx
    } else {
        assign_greedy(&true_roles, &cov_pos, &receiver_pos)
    };
    let shown_roles = if disguised {
        expand_roles(decoy, n_cov, nr, los)
    } else {
        true_roles.clone()
    };
    let shown_of_cov = if disguised {
        assign_greedy(&shown_roles, &cov_pos, &receiver_pos)
    } else {
        role_of_cov.clone()
    };

    let mut roles = vec![Role::Rush; nd];
    let mut align = vec![[0.0; 2]; nd];
    for (j, &d) in rushers.iter().enumerate() {
        let y = MID_Y + (j as f64 - (n_rush as f64 - 1.0) / 2.0) * 2.5;
        let x = if def_pos[d] == "DL" { los + 1.0 } else { los + 4.5 };
        align[d] = [x, y];
    }
    let anchor_of = |role: &Role| -> [f64; 2] {
        match *role {
            Role::Rush => unreachable!(),
            Role::Man { class, receiver } => add(rec_start[receiver], cushion(class, rec_start[receiver])),
            Role::Zone { align, .. } => align,
        }
    };
    let mut anchors = align.clone();
    for (ci, &d) in cov.iter().enumerate() {
        roles[d] = true_roles[role_of_cov[ci]];
        let shown = shown_roles[shown_of_cov[ci]];
        let anchor = anchor_of(&shown);
        anchors[d] = anchor;
        align[d] = match shown {
            Role::Zone { .. } => clamp_field([
                anchor[0] + rng.gen_range(-0.5..=0.5),
                anchor[1] + rng.gen_range(-0.5..=0.5),
            ]),
            _ => anchor,
        };
    }
    let landmarks: Vec<(usize, [f64; 2])> = (0..nd)
        .filter_map(|d| match roles[d] {
            Role::Zone { landmark, .. } => Some((d, landmark)),
            _ => None,
        })
        .collect();

    // Simulate defenders.
    let catch = rec_paths[target_r][pa];
    let mut def_paths = vec![vec![[0.0; 2]; n_frames]; nd];
    let mut reached = vec![false; nd];
    let mut rally = vec![false; nd];
    for t in 0..n_frames {
        let rec_now: Vec<[f64; 2]> = rec_paths.iter().map(|p| p[t]).collect();
        if t == pf {
            for d in 0..nd {
                rally[d] = matches!(roles[d], Role::Zone { .. }) && dist(def_paths[d][t - 1], catch) < RALLY_RADIUS;
            }
        }
        for d in 0..nd {
            if t <= snap {
                def_paths[d][t] = align[d];
                continue;
            }
            let tau = (t - snap) as f64;
            let w = (1.0 - tau / DISGUISE_FRAMES).max(0.0);
            let prev = def_paths[d][t - 1];
            let next = match roles[d] {
                Role::Rush => {
                    let q = qb_path[t];
                    let room = (dist(prev, q) - 1.5).max(0.0);
                    step_toward(prev, q, (RUSH_SPEED * DT).min(room))
                }
                Role::Man { class, receiver } => {
                    let c = cushion(class, rec_start[receiver]);
                    let base = add(rec_paths[receiver][t], c);
                    let offset = sub(align[d], add(rec_paths[receiver][snap], c));
                    [base[0] + w * offset[0], base[1] + w * offset[1]]
                }
                Role::Zone { landmark, .. } => {
                    let target = if rally[d] && t > pf {
                        step_toward(prev, catch, RALLY_SPEED * DT)
                    } else if !reached[d] {
                        step_toward(prev, landmark, DROP_SPEED * DT)
                    } else {
                        let aim = match zone_match(d, &landmarks, &rec_now) {
                            Some(r) => {
                                let v = sub(rec_now[r], landmark);
                                let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
                                let f = if n > READ_LEASH { READ_LEASH / n } else { 1.0 };
                                [landmark[0] + f * v[0], landmark[1] + f * v[1]]
                            }
                            None => landmark,
                        };
                        step_toward(prev, aim, READ_SPEED * DT)
                    };
                    [
                        prev[0] + (1.0 - w) * (target[0] - prev[0]),
                        prev[1] + (1.0 - w) * (target[1] - prev[1]),
                    ]
                }
            };
            let next = clamp_field(next);
            if let Role::Zone { landmark, .. } = roles[d] {
                if dist(next, landmark) < 0.5 {
                    reached[d] = true;
                }
            }
            def_paths[d][t] = next;
        }
    }

    // Labels.
    let def_id = |d: usize| agents[def0 + d].agent_id.clone();
    let rec_id = |r: usize| agents[rec0 + r].agent_id.clone();
    let rec_at_arrival: Vec<[f64; 2]> = rec_paths.iter().map(|p| p[pa]).collect();
    let mut coverage = BTreeMap::new();
    let mut matchup = BTreeMap::new();
    for d in 0..nd {
        coverage.insert(def_id(d), roles[d].class());
        let m = match roles[d] {
            Role::Rush => None,
            Role::Man { receiver, .. } => Some(receiver),
            Role::Zone { .. } => zone_match(d, &landmarks, &rec_at_arrival),
        };
        matchup.insert(def_id(d), m.map(rec_id));
    }
    let prevent = scheme == Scheme::Prevent && game_clock_s <= LATE_CLOCK_S;
    let target_defender = if prevent || catch[0] < los {
        None
    } else {
        let man_on = |class: CoverageClass| {
            (0..nd).find(|&d| matches!(roles[d], Role::Man { class: c, receiver } if c == class && receiver == target_r))
        };
        let pick = man_on(CoverageClass::MAN)
            .or_else(|| man_on(CoverageClass::BRACKET))
            .or_else(|| zone_owner(&landmarks, catch))
            .or_else(|| {
                cov.iter()
                    .copied()
                    .min_by(|&a, &b| dist(def_paths[a][pa], catch).total_cmp(&dist(def_paths[b][pa], catch)))
            });
        pick.map(def_id)
    };
    let labels = LabelSet {
        coverage: Some(coverage),
        matchup: Some(matchup),
        target_defender: Some(target_defender),
        targeted_receiver: Some(rec_id(target_r)),
    };

    // Observed frames: jitter, headings, speeds, mirroring, rounding.
    let mut true_paths: Vec<Vec<[f64; 2]>> = vec![qb_path];
    true_paths.extend(ol_paths);
    true_paths.extend(rec_paths);
    true_paths.extend(def_paths);
    let direction = if rng.gen_bool(0.5) {
        PlayDirection::Right
    } else {
        PlayDirection::Left
    };
    let sigma = cfg.noise_sigma;
    let innov = sigma * (1.0 - NOISE_RHO * NOISE_RHO).sqrt();
    let mut frames = vec![Vec::with_capacity(agents.len()); n_frames];
    for (a, path) in true_paths.iter().enumerate() {
        let defense = agents[a].is_defense();
        let mut e = [sigma * normal(rng), sigma * normal(rng)];
        let mut obs = Vec::with_capacity(n_frames);
        for &p in path {
            obs.push(clamp_field(add(p, e)));
            e = [
                NOISE_RHO * e[0] + innov * normal(rng),
                NOISE_RHO * e[1] + innov * normal(rng),
            ];
        }
        let rest = if defense { 180.0 } else { 0.0 };
        let (mut o, mut dir) = (rest, rest);
        for t in 0..n_frames {
            let (p0, p1) = if t == 0 { (obs[0], obs[1.min(n_frames - 1)]) } else { (obs[t - 1], obs[t]) };
            let v = sub(p1, p0);
            let speed = (v[0] * v[0] + v[1] * v[1]).sqrt() * FRAME_HZ;
            let truev = if t == 0 { [0.0, 0.0] } else { sub(path[t], path[t - 1]) };
            if (truev[0] * truev[0] + truev[1] * truev[1]).sqrt() * FRAME_HZ > 0.5 {
                dir = truev[1].atan2(truev[0]).to_degrees();
                o = dir;
            }
            let o_obs = o + if sigma > 0.0 { 20.0 * sigma * normal(rng) } else { 0.0 };
            let mut x = obs[t][0];
            let mut y = obs[t][1];
            let (mut oo, mut dd) = (o_obs, dir);
            if direction == PlayDirection::Left {
                x = FIELD_LENGTH - x;
                y = FIELD_WIDTH - y;
                oo += 180.0;
                dd += 180.0;
            }
            frames[t].push(AgentFrame {
                x: round_to(x, 2),
                y: round_to(y, 2),
                o: angle(oo),
                dir: angle(dd),
                s: Some(round_to(speed, 2)),
            });
        }
    }

    let alignments = (0..nd)
        .map(|d| (def_id(d), align[d], anchors[d]))
        .collect();
    let trace = GenTrace {
        defense_team: dteam.name.clone(),
        offense_team: oteam.name.clone(),
        disguised,
        alignment_scheme,
        double_covered: dc_receiver.map(rec_id),
        routes,
        alignments,
    };
    let play = Play {
        play_id: format!("S{:x}-{:06}", cfg.seed, play_index),
        play_direction: direction,
        situation,
        events: PlayEvents {
            snap,
            pass_forward: Some(pf),
            pass_arrival: Some(pa),
        },
        agents,
        frames,
        defense_team: Some(dteam.name.clone()),
        offense_team: Some(oteam.name.clone()),
    };
    (play, labels, trace)
}
