use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::par;

use super::checkpoint::write_text_atomic;
use super::{load_checkpoint, save_checkpoint, TrainConfig, Trainer};

pub const METRICS_FILE: &str = "metrics.jsonl";
const CHECKPOINTS: &str = "checkpoints";
const LATEST: &str = "LATEST";

fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join(CHECKPOINTS).join(format!("epoch-{epoch:06}"))
}

/// Directory of the most recent checkpoint under a run directory.
pub fn latest_checkpoint(out: &Path) -> Result<PathBuf> {
    let p = out.join(CHECKPOINTS).join(LATEST);
    let name = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(out.join(CHECKPOINTS).join(name.trim()))
}

fn checkpoint(trainer: &Trainer, out: &Path) -> Result<()> {
    let dir = checkpoint_dir(out, trainer.epoch);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    save_checkpoint(trainer, &dir)?;
    let name = dir
        .file_name()
        .expect("checkpoint dirs are named")
        .to_string_lossy()
        .into_owned();
    write_text_atomic(&out.join(CHECKPOINTS).join(LATEST), &name)
}

fn drive(trainer: &mut Trainer, out: &Path) -> Result<()> {
    let path = out.join(METRICS_FILE);
    let mut metrics = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let every = trainer.config.checkpoint_every;
    if trainer.done() && trainer.epoch == 0 {
        checkpoint(trainer, out)?;
    }
    while !trainer.done() {
        let line = match trainer.train_epoch() {
            Ok(rec) => serde_json::to_string(&rec),
            Err(e) => {
                if let Error::Divergence { epoch, what } = &e {
                    let diag = serde_json::json!({ "epoch": epoch, "diverged": what });
                    let _ = writeln!(metrics, "{diag}");
                    let _ = metrics.flush();
                }
                return Err(e);
            }
        };
        let line = line.map_err(|e| Error::Data(e.to_string()))?;
        writeln!(metrics, "{line}").map_err(|e| Error::io(&path, e))?;
        metrics.flush().map_err(|e| Error::io(&path, e))?;
        if trainer.done() || (every > 0 && trainer.epoch % every == 0) {
            checkpoint(trainer, out)?;
        }
    }
    Ok(())
}

fn drive_with_flag(trainer: &mut Trainer, out: &Path) -> Result<()> {
    if trainer.config.deterministic {
        par::pinned(|| drive(trainer, out))
    } else {
        drive(trainer, out)
    }
}

/// Train from scratch into `out`: resolved config, metrics stream, checkpoints.
/// Records written before a failure stay on disk.
pub fn run_training(config: &TrainConfig, out: &Path) -> Result<Trainer> {
    let mut trainer = Trainer::new(config.clone())?;
    fs::create_dir_all(out.join(CHECKPOINTS)).map_err(|e| Error::io(out, e))?;
    write_text_atomic(&out.join("config.toml"), &config.to_toml())?;
    let metrics = out.join(METRICS_FILE);
    fs::write(&metrics, "").map_err(|e| Error::io(&metrics, e))?;
    drive_with_flag(&mut trainer, out)?;
    Ok(trainer)
}

/// Continue a run from its latest checkpoint. Metric records past the checkpoint
/// are dropped and regenerated.
pub fn resume_training(out: &Path) -> Result<Trainer> {
    let mut trainer = load_checkpoint(&latest_checkpoint(out)?)?;
    let cfg_path = out.join("config.toml");
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    if TrainConfig::from_toml(&text)?.hash() != trainer.config.hash() {
        return Err(Error::Data(format!(
            "{}: checkpoint was written by a different config",
            out.display()
        )));
    }
    let path = out.join(METRICS_FILE);
    let old = fs::read_to_string(&path).unwrap_or_default();
    let mut kept = String::new();
    for line in old.lines() {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        match v.get("epoch").and_then(serde_json::Value::as_u64) {
            Some(e) if (e as usize) < trainer.epoch && v.get("diverged").is_none() => {
                kept.push_str(line);
                kept.push('\n');
            }
            _ => {}
        }
    }
    write_text_atomic(&path, &kept)?;
    drive_with_flag(&mut trainer, out)?;
    Ok(trainer)
}
