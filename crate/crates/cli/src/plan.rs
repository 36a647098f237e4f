//! Step-plan files: a TOML table with parallel `times` (schedule steps)
//! or `fracs` (fractions of the full schedule) and per-step `modes` tags.
//! Plans must be strictly decreasing and end at step zero; the sampler
//! enforces both, this module only translates the file.
//!
//! ```toml
//! times = [875, 750, 625, 500, 375, 250, 125, 0]
//! modes = ["mpc", "explicit", "mpc", "explicit", "mpc", "explicit", "explicit", "explicit"]
//! ```

use std::path::Path;

use serde::Deserialize;

use guidelab_core::sampler::{GuidanceMode, StepPlan};
use guidelab_core::schedule::NoiseSchedule;

use crate::{CliResult, Failure};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    times: Option<Vec<usize>>,
    fracs: Option<Vec<f64>>,
    modes: Vec<String>,
}

pub fn load(path: &Path, sched: &NoiseSchedule) -> CliResult<StepPlan> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read plan {}: {e}", path.display())))?;
    let file: PlanFile = toml::from_str(&text)
        .map_err(|e| Failure::usage(format!("invalid plan {}:\n{e}", path.display())))?;

    let modes = file
        .modes
        .iter()
        .map(|m| GuidanceMode::parse(m).map_err(|e| Failure::usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;

    let plan = match (file.times, file.fracs) {
        (Some(_), Some(_)) => {
            return Err(Failure::usage(format!(
                "plan {}: give times or fracs, not both",
                path.display()
            )))
        }
        (None, None) => {
            return Err(Failure::usage(format!(
                "plan {}: needs a times or fracs array",
                path.display()
            )))
        }
        (Some(times), None) => {
            if let Some(&t) = times.iter().find(|&&t| t > sched.t_max()) {
                return Err(Failure::usage(format!(
                    "plan {}: time {t} exceeds the schedule's last step {}",
                    path.display(),
                    sched.t_max()
                )));
            }
            StepPlan::new(times, modes)
        }
        (None, Some(fracs)) => StepPlan::from_fracs(&fracs, &modes, sched),
    }
    .map_err(|e| Failure::usage(format!("plan {}: {e}", path.display())))?;
    Ok(plan)
}
