//! Job files: one JSON document per run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tbdelay::{
    ArcSchedule, ControlBounds, DelayConfig, Grid, HistorySpec, IopOptions, ModelParams, ObjectiveKind, ObjectiveSpec,
    OcpProblem, SolverOptions,
};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub ocp: SolverOptions,
    pub iop: IopOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Inclusive `[lo, hi]`.
    pub beta: [f64; 2],
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub scenario: String,
    pub params: ModelParams,
    #[serde(default)]
    pub delays: DelayConfig,
    /// Defaults to the reference split of `n_pop`.
    #[serde(default)]
    pub history: Option<HistorySpec>,
    #[serde(default = "default_grid")]
    pub grid: Grid,
    #[serde(default = "default_objective")]
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub bounds: ControlBounds,
    #[serde(default)]
    pub solver: SolverSection,
    /// Fixed bang-bang schedule for `simulate`, starting point for `iop`.
    #[serde(default)]
    pub schedule: Option<ArcSchedule>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

fn default_grid() -> Grid {
    Grid { t_f: 5.0, n_steps: 2500 }
}

fn default_objective() -> ObjectiveSpec {
    ObjectiveSpec::new(ObjectiveKind::L1, 50.0, 50.0)
}

impl JobSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and validates, filling the history default.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut job: JobSpec = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("job file: {e}")))?;
        if job.history.is_none() {
            job.history = Some(HistorySpec::reference(job.params.n_pop));
        }
        job.validate()?;
        Ok(job)
    }

    fn validate(&self) -> Result<(), CliError> {
        // Grid::new is the only place that checks the horizon and step count
        let grid = Grid::new(self.grid.t_f, self.grid.n_steps)?;
        if grid != self.grid {
            return Err(CliError::Validation("a zero horizon needs n_steps = 0".into()));
        }
        self.problem().validate()?;
        if let Some(s) = &self.schedule {
            s.validate(self.grid.t_f)?;
        }
        if let Some(s) = &self.sweep {
            if s.steps < 2 || !(s.beta[0] < s.beta[1]) || s.beta[0] < 0.0 || !s.beta[1].is_finite() {
                return Err(CliError::Validation(
                    "sweep needs 0 <= beta[0] < beta[1] and steps >= 2".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> OcpProblem {
        OcpProblem {
            params: self.params,
            delays: self.delays,
            history: self.history.unwrap_or_else(|| HistorySpec::reference(self.params.n_pop)),
            grid: self.grid,
            objective: self.objective,
            bounds: self.bounds,
        }
    }
}
