//! Seeded generator of labeled synthetic plays.

mod routes;
mod sim;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::play::{write_plays, LabelSet, Play};
use crate::vocab::Scheme;

pub use routes::Route;
pub use sim::GenTrace;

pub const SCHEMA_VERSION: u32 = 1;
pub const PLAYS_FILE: &str = "plays.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamProfile {
    pub name: String,
    /// Overrides the global disguise probability for this defense.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_disguise: Option<f64>,
}

impl TeamProfile {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            p_disguise: None,
        }
    }

    pub fn with_disguise(name: impl Into<String>, p: f64) -> Self {
        Self {
            name: name.into(),
            p_disguise: Some(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_plays: usize,
    pub n_defenders: usize,
    pub n_receivers: usize,
    pub n_linemen: usize,
    pub scheme_mix: BTreeMap<Scheme, f64>,
    pub p_disguise: f64,
    pub p_double_coverage: f64,
    /// Standard deviation of the positional jitter, yards.
    pub noise_sigma: f64,
    pub seed: u64,
    pub teams: Vec<TeamProfile>,
}

pub fn default_scheme_mix() -> BTreeMap<Scheme, f64> {
    BTreeMap::from([
        (Scheme::Cover1, 0.20),
        (Scheme::Cover2, 0.15),
        (Scheme::Cover3, 0.25),
        (Scheme::Cover4, 0.15),
        (Scheme::Cover6, 0.10),
        (Scheme::Man, 0.10),
        (Scheme::Prevent, 0.05),
    ])
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_plays: 1000,
            n_defenders: 7,
            n_receivers: 5,
            n_linemen: 1,
            scheme_mix: default_scheme_mix(),
            p_disguise: 0.3,
            p_double_coverage: 0.055,
            noise_sigma: 0.1,
            seed: 0,
            teams: (0..8).map(|i| TeamProfile::new(format!("T{i:02}"))).collect(),
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} = {p} is outside [0, 1]")));
    }
    Ok(())
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        check_prob("p_disguise", self.p_disguise)?;
        check_prob("p_double_coverage", self.p_double_coverage)?;
        for t in &self.teams {
            if let Some(p) = t.p_disguise {
                check_prob(&format!("p_disguise for team {}", t.name), p)?;
            }
            if t.name.is_empty() || t.name.contains(char::is_whitespace) {
                return Err(Error::Config(format!("bad team name {:?}", t.name)));
            }
        }
        if self.teams.is_empty() {
            return Err(Error::Config("at least one team is required".into()));
        }
        if self.n_receivers < 1 {
            return Err(Error::Config("n_receivers must be at least 1".into()));
        }
        if self.n_receivers > 9 {
            return Err(Error::Config("n_receivers above 9 is not supported".into()));
        }
        if !(2..=11).contains(&self.n_defenders) {
            return Err(Error::Config(format!(
                "n_defenders = {} outside 2-11",
                self.n_defenders
            )));
        }
        if self.n_linemen > 7 {
            return Err(Error::Config("n_linemen above 7 is not supported".into()));
        }
        if self.p_double_coverage > 0.0 && self.n_defenders < 3 {
            return Err(Error::Config(
                "double coverage needs two coverage defenders besides a rusher (n_defenders >= 3)".into(),
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma = {} must be >= 0", self.noise_sigma)));
        }
        let mut total = 0.0;
        for (s, &w) in &self.scheme_mix {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("scheme_mix weight for {s} = {w}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("scheme_mix sums to {total}, expected 1")));
        }
        Ok(())
    }

    fn play_rng(&self, play_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(play_index);
        rng
    }
}

/// Generates play `play_index`; the result depends only on `(cfg, play_index)`.
pub fn gen_play(cfg: &GenConfig, play_index: u64) -> Result<(Play, LabelSet)> {
    gen_play_traced(cfg, play_index).map(|(p, l, _)| (p, l))
}

/// As [`gen_play`], also returning generator internals useful as ground truth.
pub fn gen_play_traced(cfg: &GenConfig, play_index: u64) -> Result<(Play, LabelSet, GenTrace)> {
    cfg.validate()?;
    let mut rng = cfg.play_rng(play_index);
    Ok(sim::simulate(cfg, play_index, &mut rng))
}

pub fn gen_plays(cfg: &GenConfig) -> Result<Vec<(Play, LabelSet)>> {
    cfg.validate()?;
    (0..cfg.n_plays as u64).map(|i| gen_play(cfg, i)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub seed: u64,
    pub n_plays: usize,
    pub schema_version: u32,
}

/// Writes `plays.jsonl` and `manifest.json` into `out_dir`.
pub fn gen_dataset(cfg: &GenConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let plays = gen_plays(cfg)?;
    let mut buf = Vec::new();
    write_plays(&mut buf, plays.iter().map(|(p, l)| (p, l)))?;
    write_atomic(out_dir.join(PLAYS_FILE), &buf)?;
    let manifest = Manifest {
        config: cfg.clone(),
        seed: cfg.seed,
        n_plays: plays.len(),
        schema_version: SCHEMA_VERSION,
    };
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    write_atomic(out_dir.join(MANIFEST_FILE), &text)?;
    Ok(manifest)
}
