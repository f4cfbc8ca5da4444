//! Trajectory CSV: `episode,t,x0..,u0..,action,reward,log_prob`, one row per step.

use std::path::Path;

use crate::error::{Error, Result};

use super::{FactoredState, Trajectory};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

pub fn write_trajectories_csv(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let (dx, du) = trajs
        .first()
        .map(|t| {
            (
                t.xs.first().map_or(0, Vec::len),
                t.us.first().map_or(0, Vec::len),
            )
        })
        .unwrap_or((0, 0));
    let mut header = vec!["episode".to_string(), "t".to_string()];
    header.extend((0..dx).map(|i| format!("x{i}")));
    header.extend((0..du).map(|i| format!("u{i}")));
    header.extend(["action", "reward", "log_prob"].map(String::from));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (ep, traj) in trajs.iter().enumerate() {
        for t in 0..traj.len() {
            let mut row = vec![ep.to_string(), (t + 1).to_string()];
            row.extend(traj.xs[t].iter().map(|v| v.to_string()));
            row.extend(traj.us[t].iter().map(|v| v.to_string()));
            row.push(traj.actions[t].to_string());
            row.push(traj.rewards[t].to_string());
            row.push(traj.log_probs[t].to_string());
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a dump back. Terminal states are not stored, so each trajectory's
/// `terminal` is its last recorded state.
pub fn read_trajectories_csv(path: &Path) -> Result<Vec<Trajectory>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let dx = header.iter().filter(|h| h.starts_with('x')).count();
    let du = header.iter().filter(|h| h.starts_with('u')).count();
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Data(format!("bad number `{s}`")))
    };
    let mut out: Vec<Trajectory> = Vec::new();
    let mut last_ep = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let ep: usize = rec[0]
            .parse()
            .map_err(|_| Error::Data("bad episode".into()))?;
        let x: Vec<f64> = (0..dx).map(|i| parse(&rec[2 + i])).collect::<Result<_>>()?;
        let u: Vec<f64> = (0..du)
            .map(|i| parse(&rec[2 + dx + i]))
            .collect::<Result<_>>()?;
        let base = 2 + dx + du;
        if last_ep != Some(ep) {
            out.push(Trajectory::with_capacity(
                0,
                FactoredState::new(x.clone(), u.clone()),
            ));
            last_ep = Some(ep);
        }
        let traj = out.last_mut().expect("pushed above");
        traj.terminal = FactoredState::new(x.clone(), u.clone());
        traj.xs.push(x);
        traj.us.push(u);
        traj.actions.push(
            rec[base]
                .parse()
                .map_err(|_| Error::Data("bad action".into()))?,
        );
        traj.rewards.push(parse(&rec[base + 1])?);
        traj.log_probs.push(parse(&rec[base + 2])?);
    }
    Ok(out)
}
