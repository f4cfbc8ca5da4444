use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{read_params, write_params, AdamState, ParamVector};

use super::{CriticState, DualState, TrainConfig, Trainer};

pub const CHECKPOINT_STATE: &str = "state.json";
const CONFIG: &str = "config.toml";

/// Scalar state of a checkpoint; parameter arrays live in sibling files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Completed epochs.
    pub epoch: usize,
    pub config_sha256: String,
    pub dual: DualState,
    pub policy_adam_steps: u64,
    pub baseline_adam_steps: u64,
    pub critic_adam_steps: Vec<u64>,
    pub critic_norm: Option<(Vec<f64>, Vec<f64>)>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text_atomic(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn save_net(dir: &Path, name: &str, params: &ParamVector, adam: &AdamState) -> Result<()> {
    write_params(&dir.join(format!("{name}.params")), params)?;
    write_params(
        &dir.join(format!("{name}.adam_m")),
        &params.with_values(adam.first_moment.clone())?,
    )?;
    write_params(
        &dir.join(format!("{name}.adam_v")),
        &params.with_values(adam.second_moment.clone())?,
    )
}

fn load_net(
    dir: &Path,
    name: &str,
    params: &mut ParamVector,
    adam: &mut AdamState,
    steps: u64,
) -> Result<()> {
    let p = read_params(&dir.join(format!("{name}.params")))?;
    let m = read_params(&dir.join(format!("{name}.adam_m")))?;
    let v = read_params(&dir.join(format!("{name}.adam_v")))?;
    if !p.same_layout(params) || !m.same_layout(params) || !v.same_layout(params) {
        return Err(Error::Data(format!(
            "checkpoint network `{name}` does not match the config"
        )));
    }
    *params = p;
    adam.first_moment = m.into_values();
    adam.second_moment = v.into_values();
    adam.step_count = steps;
    Ok(())
}

/// Write the trainer state to `dir`, which must not exist yet. Files are written to a
/// temporary sibling directory that is renamed into place once complete.
pub fn save_checkpoint(trainer: &Trainer, dir: &Path) -> Result<()> {
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    save_net(&tmp, "policy", &trainer.policy.params, &trainer.policy_adam)?;
    save_net(
        &tmp,
        "baseline",
        &trainer.baseline.params,
        &trainer.baseline_adam,
    )?;
    let (critic_adam_steps, critic_norm) = match &trainer.critic {
        CriticState::Stateless => (vec![], None),
        CriticState::Timestep(d) => {
            for (t, (p, a)) in d.params.iter().zip(&d.adam).enumerate() {
                save_net(&tmp, &format!("critic_t{t}"), p, a)?;
            }
            (d.adam.iter().map(|a| a.step_count).collect(), None)
        }
        CriticState::Trajectory(d) => {
            save_net(&tmp, "critic", d.params(), d.adam())?;
            (vec![d.adam().step_count], d.norm.clone())
        }
    };
    let state = Checkpoint {
        epoch: trainer.epoch,
        config_sha256: trainer.config.hash(),
        dual: trainer.dual.clone(),
        policy_adam_steps: trainer.policy_adam.step_count,
        baseline_adam_steps: trainer.baseline_adam.step_count,
        critic_adam_steps,
        critic_norm,
    };
    let json = serde_json::to_string_pretty(&state).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(tmp.join(CHECKPOINT_STATE), json).map_err(|e| Error::io(&tmp, e))?;
    fs::write(tmp.join(CONFIG), trainer.config.to_toml()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

/// Rebuild a trainer from a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<Trainer> {
    let cfg_path = dir.join(CONFIG);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config = TrainConfig::from_toml(&text)?;
    let state_path = dir.join(CHECKPOINT_STATE);
    let json = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
    let state: Checkpoint = serde_json::from_str(&json)
        .map_err(|e| Error::Data(format!("{}: {e}", state_path.display())))?;
    if state.config_sha256 != config.hash() {
        return Err(Error::Data(format!(
            "{}: config hash does not match state",
            dir.display()
        )));
    }
    let mut tr = Trainer::new(config)?;
    load_net(
        dir,
        "policy",
        &mut tr.policy.params,
        &mut tr.policy_adam,
        state.policy_adam_steps,
    )?;
    load_net(
        dir,
        "baseline",
        &mut tr.baseline.params,
        &mut tr.baseline_adam,
        state.baseline_adam_steps,
    )?;
    let steps = |i: usize| {
        state
            .critic_adam_steps
            .get(i)
            .copied()
            .ok_or_else(|| Error::Data("checkpoint lacks critic step counts".into()))
    };
    match &mut tr.critic {
        CriticState::Stateless => {}
        CriticState::Timestep(d) => {
            for t in 0..d.params.len() {
                let n = steps(t)?;
                load_net(
                    dir,
                    &format!("critic_t{t}"),
                    &mut d.params[t],
                    &mut d.adam[t],
                    n,
                )?;
            }
        }
        CriticState::Trajectory(d) => {
            let mut p = d.params().clone();
            let mut a = d.adam().clone();
            load_net(dir, "critic", &mut p, &mut a, steps(0)?)?;
            d.set_params(p, a)?;
            d.norm = state.critic_norm.clone();
        }
    }
    tr.dual = state.dual;
    tr.epoch = state.epoch;
    Ok(tr)
}
