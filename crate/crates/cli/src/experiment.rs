//! Multi-run experiment orchestration: the same config trained `n` times
//! with seeds `seed+0..seed+n-1`, each run in its own subdirectory.

use std::path::Path;

use mazerl_core::trainer::{train, RunArtifacts, TrainConfig};

use crate::error::{Error, Result};

/// Refuse to write into an existing non-empty directory unless forced.
fn guard_out_dir(out_dir: &Path, force: bool) -> Result<()> {
    if !out_dir.exists() {
        return Ok(());
    }
    let mut entries = std::fs::read_dir(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if entries.next().is_some() && !force {
        return Err(Error::Refusal {
            reason: format!(
                "output directory {} is not empty; pass --force to reuse it",
                out_dir.display()
            ),
        });
    }
    Ok(())
}

/// Run `runs` trainings of `cfg`. Run `i` uses seed `cfg.seed + i`, run id
/// `run<i>` and directory `out_dir/run<i>`. With `parallel` the runs execute
/// on their own threads (each still spawns its own workers); otherwise they
/// run back to back. Artifacts come back in run order either way.
pub fn run_experiment(
    cfg: &TrainConfig,
    runs: u32,
    out_dir: &Path,
    force: bool,
    parallel: bool,
) -> Result<Vec<RunArtifacts>> {
    if runs == 0 {
        return Err(Error::input("need at least one run"));
    }
    cfg.validate()?;
    guard_out_dir(out_dir, force)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let plans: Vec<(TrainConfig, String, std::path::PathBuf)> = (0..runs)
        .map(|i| {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = cfg.seed.wrapping_add(u64::from(i));
            let run_id = format!("run{i}");
            let dir = out_dir.join(&run_id);
            (run_cfg, run_id, dir)
        })
        .collect();

    if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = plans
                .iter()
                .map(|(run_cfg, run_id, dir)| scope.spawn(move || train(run_cfg, run_id, dir)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .map_err(|_| Error::input("a run thread panicked"))?
                        .map_err(Error::Core)
                })
                .collect()
        })
    } else {
        plans
            .iter()
            .map(|(run_cfg, run_id, dir)| train(run_cfg, run_id, dir).map_err(Error::Core))
            .collect()
    }
}
