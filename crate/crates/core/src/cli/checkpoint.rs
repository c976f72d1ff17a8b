//! Checkpoint directories: `manifest.json` (config, RNG streams, counters)
//! next to `params.bin` (network and optimizer fragments) and `replay.bin`
//! (the shared replay buffer).
//!
//! Replay fragment: magic `HEDR`, format version (u32), capacity, length and
//! cursor (u64), state and action dims (u32), then per transition the state,
//! action, reward, next state and termination flag (as 0.0 / 1.0) in f64.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{Counters, Ensemble, LossMeter, RngStreams, TrainConfig, Trainer};
use crate::error::{HedError, Result};
use crate::learner::BaseLearner;
use crate::nn::fragment::{
    expect_header, read_adam, read_f64s, read_mlp, read_u32, read_u64, write_adam, write_f64s,
    write_mlp, write_u32, write_u64, FORMAT_VERSION,
};
use crate::nn::MlpSpec;
use crate::replay::{ReplayBuffer, Transition};

pub const REPLAY_MAGIC: &[u8; 4] = b"HEDR";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const REPLAY_FILE: &str = "replay.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    pub code_version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub n_learners: usize,
    pub policy_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    pub rng: RngStreams,
    pub counters: Counters,
    pub losses: LossMeter,
    pub steps_since_burst: usize,
    pub params_file: String,
    pub replay_file: String,
}

impl RunManifest {
    fn of(t: &Trainer) -> Self {
        let spec = t.ensemble.spec();
        Self {
            format_version: FORMAT_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: t.cfg.seed,
            config: t.cfg.clone(),
            n_learners: t.ensemble.n(),
            policy_spec: spec.policy_spec(),
            critic_spec: spec.critic_spec(),
            rng: t.rngs.clone(),
            counters: t.counters.clone(),
            losses: t.losses,
            steps_since_burst: t.steps_since_burst,
            params_file: PARAMS_FILE.into(),
            replay_file: REPLAY_FILE.into(),
        }
    }
}

fn write_ensemble(w: &mut impl Write, e: &Ensemble) -> Result<()> {
    for l in &e.learners {
        for net in [&l.policy, &l.critic1, &l.critic2, &l.target1, &l.target2] {
            write_mlp(w, net)?;
        }
        for opt in [&l.policy_opt, &l.critic1_opt, &l.critic2_opt] {
            write_adam(w, opt)?;
        }
    }
    write_mlp(w, &e.central)?;
    write_mlp(w, &e.central_target)?;
    write_adam(w, &e.central_opt)
}

fn read_ensemble(r: &mut impl Read, m: &RunManifest) -> Result<Ensemble> {
    let spec = m.config.learner_spec();
    if spec.policy_spec() != m.policy_spec || spec.critic_spec() != m.critic_spec {
        return Err(HedError::Checkpoint(
            "manifest specs disagree with its config".into(),
        ));
    }
    let mut learners = Vec::with_capacity(m.n_learners);
    for i in 0..m.n_learners {
        let policy = read_mlp(r)?;
        let critic1 = read_mlp(r)?;
        let critic2 = read_mlp(r)?;
        let mut l = BaseLearner::from_parts(i, &spec, policy, critic1, critic2)?;
        l.target1 = read_mlp(r)?;
        l.target2 = read_mlp(r)?;
        if l.target1.spec() != &m.critic_spec || l.target2.spec() != &m.critic_spec {
            return Err(HedError::Checkpoint("target network spec mismatch".into()));
        }
        l.policy_opt = read_adam(r)?;
        l.critic1_opt = read_adam(r)?;
        l.critic2_opt = read_adam(r)?;
        if l.policy_opt.len() != l.policy.num_params()
            || l.critic1_opt.len() != l.critic1.num_params()
            || l.critic2_opt.len() != l.critic2.num_params()
        {
            return Err(HedError::Checkpoint("optimizer length mismatch".into()));
        }
        learners.push(l);
    }
    let central = read_mlp(r)?;
    let mut e = Ensemble::from_parts(learners, central, &spec)?;
    e.central_target = read_mlp(r)?;
    e.central_opt = read_adam(r)?;
    if e.central_target.spec() != &m.critic_spec || e.central_opt.len() != e.central.num_params() {
        return Err(HedError::Checkpoint(
            "central critic fragment mismatch".into(),
        ));
    }
    Ok(e)
}

fn write_replay(w: &mut impl Write, b: &ReplayBuffer) -> Result<()> {
    w.write_all(REPLAY_MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u64(w, b.capacity() as u64)?;
    write_u64(w, b.len() as u64)?;
    write_u64(w, b.cursor() as u64)?;
    write_u32(w, b.state_dim() as u32)?;
    write_u32(w, b.action_dim() as u32)?;
    let mut row = Vec::new();
    for t in b.raw() {
        row.clear();
        row.extend_from_slice(&t.s);
        row.extend_from_slice(&t.a);
        row.push(t.r);
        row.extend_from_slice(&t.s_next);
        row.push(if t.terminated { 1.0 } else { 0.0 });
        write_f64s(w, &row)?;
    }
    Ok(())
}

fn read_replay(r: &mut impl Read) -> Result<ReplayBuffer> {
    expect_header(r, REPLAY_MAGIC)?;
    let capacity = read_u64(r)? as usize;
    let len = read_u64(r)?;
    let cursor = read_u64(r)? as usize;
    let sd = read_u32(r)? as usize;
    let ad = read_u32(r)? as usize;
    if len as usize > capacity {
        return Err(HedError::Checkpoint(
            "replay length exceeds capacity".into(),
        ));
    }
    let width = (2 * sd + ad + 2) as u64;
    let mut data = Vec::with_capacity(len as usize);
    for _ in 0..len {
        let row = read_f64s(r, width)?;
        let (s, rest) = row.split_at(sd);
        let (a, rest) = rest.split_at(ad);
        let (s_next, flag) = rest[1..].split_at(sd);
        data.push(Transition {
            s: s.to_vec(),
            a: a.to_vec(),
            r: rest[0],
            s_next: s_next.to_vec(),
            terminated: flag[0] != 0.0,
        });
    }
    ReplayBuffer::from_raw(capacity, sd, ad, data, cursor)
}

fn ensure_eof(r: &mut impl Read, what: &str) -> Result<()> {
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(HedError::Checkpoint(format!("trailing bytes in {what}")));
    }
    Ok(())
}

/// Writes the full trainer state into `dir`, creating it if needed.
pub fn save_checkpoint(t: &Trainer, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = RunManifest::of(t);
    let mut w = BufWriter::new(File::create(dir.join(PARAMS_FILE))?);
    write_ensemble(&mut w, &t.ensemble)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join(REPLAY_FILE))?);
    write_replay(&mut w, &t.buffer)?;
    w.flush()?;
    // the manifest goes last so a directory with one is complete
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(HedError::Checkpoint(format!(
            "unsupported format version {}",
            m.format_version
        )));
    }
    m.config.validate()?;
    if m.n_learners != m.config.n_learners {
        return Err(HedError::Checkpoint(
            "learner count disagrees with config".into(),
        ));
    }
    Ok(m)
}

/// Restores a trainer that continues exactly where the saved one stopped.
pub fn load_checkpoint(dir: &Path) -> Result<Trainer> {
    let m = load_manifest(dir)?;
    let mut r = BufReader::new(File::open(dir.join(&m.params_file))?);
    let ensemble = read_ensemble(&mut r, &m)?;
    ensure_eof(&mut r, &m.params_file)?;
    let mut r = BufReader::new(File::open(dir.join(&m.replay_file))?);
    let buffer = read_replay(&mut r)?;
    ensure_eof(&mut r, &m.replay_file)?;
    Trainer::from_state(
        m.config,
        ensemble,
        buffer,
        m.rng,
        m.counters,
        m.losses,
        m.steps_since_burst,
    )
}

/// Paths of the three files of a checkpoint directory.
pub fn checkpoint_files(dir: &Path) -> [PathBuf; 3] {
    [
        dir.join(MANIFEST_FILE),
        dir.join(PARAMS_FILE),
        dir.join(REPLAY_FILE),
    ]
}
