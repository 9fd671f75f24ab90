//! End-to-end experiment: simulate the true system, sample and smooth the
//! measurement, reconstruct the unknown pair.

use crate::data::{
    sample_measurement, smooth_spatial, smooth_temporal, Measurement, MeasurementKind, Penalty,
    SmoothedData, SpatialSmoothing, TemporalSmoothing,
};
use crate::error::Result;
use crate::expr::Env;
use crate::forward::{solve_forward_with, ForwardOptions, Grid, Side, SystemSpec, Trajectory};
use crate::function_repr::BasisConfig;
use crate::inversion::{run, InverseProblem, ReconstructionResult, MAX_ITERS};
use crate::presets::unknown_pair;

/// Default number of spatial samples.
pub const SPATIAL_SAMPLES: usize = 20;
/// Default number of temporal samples.
pub const TEMPORAL_SAMPLES: usize = 25;

#[derive(Debug, Clone)]
pub struct Experiment {
    /// The true system; its unknown slot holds the reference pair.
    pub spec: SystemSpec,
    pub grid: Grid,
    pub kind: MeasurementKind,
    pub samples: usize,
    pub delta: f64,
    pub seed: u64,
    /// When false the data are interpolated with the smallest admissible
    /// penalty instead of being filtered.
    pub smoothing: bool,
    pub spatial: SpatialSmoothing,
    pub temporal: TemporalSmoothing,
    pub basis: BasisConfig,
    pub forward: ForwardOptions,
    pub max_iters: usize,
    pub stagnation_tol: f64,
}

impl Experiment {
    /// Dense smoothing grids follow the simulation grid.
    pub fn new(spec: SystemSpec, grid: Grid, kind: MeasurementKind) -> Experiment {
        let samples = match kind {
            MeasurementKind::FinalTime => SPATIAL_SAMPLES,
            MeasurementKind::TimeTrace { .. } => TEMPORAL_SAMPLES,
        };
        Experiment {
            spec,
            grid,
            kind,
            samples,
            delta: 0.0,
            seed: 0,
            smoothing: true,
            spatial: SpatialSmoothing {
                ndense: grid.nx(),
                ..SpatialSmoothing::default()
            },
            temporal: TemporalSmoothing {
                ndense: grid.nt(),
                ..TemporalSmoothing::default()
            },
            basis: BasisConfig::default(),
            forward: ForwardOptions::default(),
            max_iters: MAX_ITERS,
            stagnation_tol: 1e-2,
        }
    }

    pub fn simulate(&self) -> Result<Trajectory> {
        solve_forward_with(&self.spec, &self.grid, &self.forward)
    }

    pub fn measure(&self, traj: &Trajectory) -> Result<Measurement> {
        sample_measurement(traj, self.kind, self.samples, self.delta, self.seed)
    }

    pub fn smooth(&self, m: &Measurement) -> Result<SmoothedData> {
        match m.kind {
            MeasurementKind::FinalTime => {
                let mut opts = self.spatial;
                if !self.smoothing {
                    opts.penalty = Penalty::Fixed(0.0);
                }
                smooth_spatial(m, &opts, &self.spec)
            }
            MeasurementKind::TimeTrace { side } => {
                let mut opts = self.temporal;
                if !self.smoothing {
                    opts.penalty = Penalty::Fixed(0.0);
                }
                let x0 = match side {
                    Side::Left => 0.0,
                    Side::Right => self.grid.length(),
                };
                let anchor = [0, 1].map(|s| self.spec.initial[s].eval(&Env::xt(x0, 0.0)));
                smooth_temporal(m, &opts, anchor)
            }
        }
    }

    pub fn problem(&self, data: SmoothedData) -> Result<InverseProblem> {
        let mut prob = InverseProblem::new(self.spec.clone(), self.grid, data)?
            .with_truth(unknown_pair(&self.spec));
        prob.basis = self.basis;
        prob.forward = self.forward;
        prob.max_iters = self.max_iters;
        prob.stagnation_tol = self.stagnation_tol;
        Ok(prob)
    }

    /// Simulate, measure, smooth and reconstruct from the zero guess.
    pub fn run(&self) -> Result<Outcome> {
        let trajectory = self.simulate()?;
        let measurement = self.measure(&trajectory)?;
        let data = self.smooth(&measurement)?;
        let mut prob = self.problem(data.clone())?;
        prob.measurement = Some(measurement.clone());
        let result = run(&prob, prob.initial_guess()?)?;
        Ok(Outcome {
            trajectory,
            measurement,
            data,
            result,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub trajectory: Trajectory,
    pub measurement: Measurement,
    pub data: SmoothedData,
    pub result: ReconstructionResult,
}
