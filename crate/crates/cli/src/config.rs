//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use rdid::data::{MeasurementKind, Penalty};
use rdid::forward::{BoundaryCondition, ForwardOptions};
use rdid::pipeline::Experiment;
use rdid::{presets, BasisConfig, Expr, Grid, Nonlinearity, Reaction, Side, SpeciesBc, SystemSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Example1Eigen,
    CompetingSpecies,
    PhiInteraction,
    Brusselator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    DirichletNeumann,
    NeumannNeumann,
    DirichletDirichlet,
    NeumannDirichlet,
}

impl BoundaryKind {
    fn species_bc(self) -> SpeciesBc {
        let (d, n) = (
            BoundaryCondition::homogeneous_dirichlet,
            BoundaryCondition::homogeneous_neumann,
        );
        let (left, right) = match self {
            BoundaryKind::DirichletNeumann => (d(), n()),
            BoundaryKind::NeumannNeumann => (n(), n()),
            BoundaryKind::DirichletDirichlet => (d(), d()),
            BoundaryKind::NeumannDirichlet => (n(), d()),
        };
        SpeciesBc { left, right }
    }
}

/// A preset, optionally overridden field by field, or a fully explicit
/// system. Expressions are strings over `u, v, w, x, t`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub preset: Option<Preset>,
    /// Growth rate of the eigenfunction example.
    pub c: Option<f64>,
    /// Interaction strength; for the interaction pair it sets both
    /// multipliers.
    pub beta: Option<f64>,
    pub beta_u: Option<f64>,
    pub beta_v: Option<f64>,
    /// Coupling `w(u, v)`.
    pub coupling: Option<String>,
    pub diffusion: Option<f64>,
    pub potential: Option<String>,
    pub initial: Option<[String; 2]>,
    pub sources: Option<[String; 2]>,
    /// Reaction pair `f_1(u), f_2(v)`.
    pub f: Option<[String; 2]>,
    /// Interaction pair `phi_1(w), phi_2(w)`; selects the interaction model.
    pub phi: Option<[String; 2]>,
    pub boundary: Option<[BoundaryKind; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub nt: usize,
    pub length: f64,
    pub horizon: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nx: 200,
            nt: 300,
            length: 1.0,
            horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    FinalTime,
    TimeTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideConfig {
    Left,
    #[default]
    Right,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    pub mode: Mode,
    /// Boundary point of the time trace.
    pub side: SideConfig,
    pub samples: Option<usize>,
    /// Relative noise level.
    pub delta: f64,
    pub seed: u64,
    pub smoothing: bool,
    /// Fixed smoothing penalty; the discrepancy principle when absent.
    pub penalty: Option<f64>,
    /// Eigenfunctions used for final-time data.
    pub ncoef: Option<usize>,
    /// Penalized derivative order for time-trace data.
    pub order: Option<usize>,
    /// Measurement CSV to invert instead of simulated data.
    pub file: Option<PathBuf>,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig {
            mode: Mode::TimeTrace,
            side: SideConfig::Right,
            samples: None,
            delta: 0.0,
            seed: 0,
            smoothing: true,
            penalty: None,
            ncoef: None,
            order: None,
            file: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub max_iters: usize,
    pub stagnation_tol: f64,
    pub ncenters: usize,
    pub width_factor: f64,
    /// Report errors against the pair given in `[system]`.
    pub compare_truth: bool,
}

impl Default for InversionConfig {
    fn default() -> Self {
        let basis = BasisConfig::default();
        InversionConfig {
            max_iters: rdid::inversion::MAX_ITERS,
            stagnation_tol: 1e-2,
            ncenters: basis.ncenters,
            width_factor: basis.width_factor,
            compare_truth: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub c_q: f64,
    pub nsamples: usize,
    pub ngrid: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            c_q: 0.0,
            nsamples: 41,
            ngrid: 10_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub svg: bool,
    /// Times at which `forward` writes snapshots.
    pub snapshots: Vec<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            svg: true,
            snapshots: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        ExperimentConfig::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        let g = &self.grid;
        Grid::new(g.nx, g.nt, g.length, g.horizon).map_err(|e| invalid(e.to_string()))
    }

    pub fn kind(&self) -> MeasurementKind {
        match self.measurement.mode {
            Mode::FinalTime => MeasurementKind::FinalTime,
            Mode::TimeTrace => MeasurementKind::TimeTrace {
                side: match self.measurement.side {
                    SideConfig::Left => Side::Left,
                    SideConfig::Right => Side::Right,
                },
            },
        }
    }

    /// The system with `beta` replacing the configured interaction strength.
    pub fn system(&self, beta: Option<f64>) -> Result<SystemSpec, ConfigError> {
        let sys = &self.system;
        let parse = |s: &str| Expr::parse(s).map_err(|e| invalid(format!("{s:?}: {e}")));
        let known = |s: &str| Nonlinearity::known(s).map_err(|e| invalid(format!("{s:?}: {e}")));
        let pair = |p: &[String; 2]| -> Result<[Nonlinearity; 2], ConfigError> {
            Ok([known(&p[0])?, known(&p[1])?])
        };
        if sys.beta.is_some() && (sys.beta_u.is_some() || sys.beta_v.is_some()) {
            return Err(invalid("give either beta or beta_u/beta_v"));
        }
        let mut spec = match sys.preset {
            Some(Preset::Example1Eigen) => presets::example1_eigen(sys.c.unwrap_or(0.0)),
            Some(Preset::CompetingSpecies) => presets::competing_species(-1.0),
            Some(Preset::PhiInteraction) => presets::phi_interaction([1.0, 1.0], "u*v"),
            Some(Preset::Brusselator) => presets::brusselator(),
            None => {
                let initial = sys
                    .initial
                    .as_ref()
                    .ok_or_else(|| invalid("system.initial is required without a preset"))?;
                let f = sys
                    .f
                    .as_ref()
                    .ok_or_else(|| invalid("system.f is required without a preset"))?;
                let f = pair(f)?;
                let reaction = match &sys.phi {
                    Some(phi) => Reaction::PhiPair {
                        f,
                        phi: pair(phi)?,
                        beta: [1.0, 1.0],
                    },
                    None => Reaction::FPair { f, beta: 0.0 },
                };
                SystemSpec {
                    diffusion: 1.0,
                    potential: Expr::constant(0.0),
                    initial: [parse(&initial[0])?, parse(&initial[1])?],
                    sources: [Expr::constant(0.0), Expr::constant(0.0)],
                    coupling: parse("u*v")?,
                    reaction,
                    boundary: [
                        SpeciesBc::dirichlet_neumann(),
                        SpeciesBc::dirichlet_neumann(),
                    ],
                }
            }
        };
        if sys.c.is_some() && sys.preset != Some(Preset::Example1Eigen) {
            return Err(invalid(
                "system.c only applies to the example1-eigen preset",
            ));
        }
        if let Some(d) = sys.diffusion {
            spec.diffusion = d;
        }
        if let Some(p) = &sys.potential {
            spec.potential = parse(p)?;
        }
        if let Some(init) = &sys.initial {
            spec.initial = [parse(&init[0])?, parse(&init[1])?];
        }
        if let Some(src) = &sys.sources {
            spec.sources = [parse(&src[0])?, parse(&src[1])?];
        }
        if let Some(w) = &sys.coupling {
            spec.coupling = parse(w)?;
        }
        if let Some(b) = &sys.boundary {
            spec.boundary = [b[0].species_bc(), b[1].species_bc()];
        }
        let beta = beta.or(sys.beta);
        match &mut spec.reaction {
            Reaction::FPair { f, beta: b } => {
                if sys.phi.is_some() {
                    return Err(invalid("system.phi given for a reaction-pair preset"));
                }
                if sys.beta_u.is_some() || sys.beta_v.is_some() {
                    return Err(invalid(
                        "beta_u/beta_v apply to interaction models; use beta",
                    ));
                }
                if let Some(p) = &sys.f {
                    *f = pair(p)?;
                }
                if let Some(v) = beta {
                    *b = v;
                }
            }
            Reaction::PhiPair { f, phi, beta: b } => {
                if let Some(p) = &sys.f {
                    *f = pair(p)?;
                }
                if let Some(p) = &sys.phi {
                    *phi = pair(p)?;
                }
                if let Some(v) = beta {
                    *b = [v, v];
                }
                if let Some(v) = sys.beta_u {
                    b[0] = v;
                }
                if let Some(v) = sys.beta_v {
                    b[1] = v;
                }
            }
        }
        spec.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(spec)
    }

    pub fn experiment(&self, beta: Option<f64>) -> Result<Experiment, ConfigError> {
        let spec = self.system(beta)?;
        let grid = self.grid()?;
        let m = &self.measurement;
        let mut e = Experiment::new(spec, grid, self.kind());
        if let Some(s) = m.samples {
            e.samples = s;
        }
        if !(m.delta >= 0.0 && m.delta.is_finite()) {
            return Err(invalid("measurement.delta must be a nonnegative number"));
        }
        e.delta = m.delta;
        e.seed = m.seed;
        e.smoothing = m.smoothing;
        if let Some(p) = m.penalty {
            if !(p >= 0.0) {
                return Err(invalid("measurement.penalty must be nonnegative"));
            }
            e.spatial.penalty = Penalty::Fixed(p);
            e.temporal.penalty = Penalty::Fixed(p);
        }
        if m.ncoef.is_some() {
            e.spatial.ncoef = m.ncoef;
        }
        if let Some(o) = m.order {
            if !(1..=2).contains(&o) {
                return Err(invalid("measurement.order must be 1 or 2"));
            }
            e.temporal.order = o;
        }
        let inv = &self.inversion;
        if inv.max_iters == 0 {
            return Err(invalid("inversion.max_iters must be positive"));
        }
        e.max_iters = inv.max_iters;
        e.stagnation_tol = inv.stagnation_tol;
        e.basis = BasisConfig {
            ncenters: inv.ncenters,
            width_factor: inv.width_factor,
            ..BasisConfig::default()
        };
        e.forward = ForwardOptions::default();
        Ok(e)
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, mode: Option<Mode>, out: Option<PathBuf>) {
        if let Some(s) = seed {
            self.measurement.seed = s;
        }
        if let Some(m) = mode {
            self.measurement.mode = m;
        }
        if let Some(o) = out {
            self.output.dir = o;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg.grid.nx, 200);
        assert_eq!(cfg.measurement.mode, Mode::TimeTrace);
        assert!(cfg.system(None).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse("[grid]\nnx = 10\nfoo = 1\n").unwrap_err();
        assert!(err.contains("foo"), "{err}");
        assert!(ExperimentConfig::parse("[nonsense]\n").is_err());
    }

    #[test]
    fn preset_with_overrides() {
        let cfg = ExperimentConfig::parse(
            "[system]\npreset = \"competing-species\"\nbeta = 0.3\n[measurement]\nmode = \"final-time\"\n",
        )
        .unwrap();
        let spec = cfg.system(None).unwrap();
        assert!(matches!(spec.reaction, Reaction::FPair { beta, .. } if beta == 0.3));
        let spec = cfg.system(Some(-2.0)).unwrap();
        assert!(matches!(spec.reaction, Reaction::FPair { beta, .. } if beta == -2.0));
        assert_eq!(cfg.kind(), MeasurementKind::FinalTime);
        let e = cfg.experiment(None).unwrap();
        assert_eq!(e.samples, rdid::pipeline::SPATIAL_SAMPLES);
    }

    #[test]
    fn explicit_interaction_system() {
        let cfg = ExperimentConfig::parse(
            r#"
[system]
initial = ["x*(1-x)", "sin(pi*x/2)"]
f = ["-u", "-v"]
phi = ["atan(w)", "w"]
coupling = "u^2*v"
beta_u = 2.0
beta_v = -1.0
boundary = ["dirichlet-neumann", "neumann-neumann"]
"#,
        )
        .unwrap();
        let spec = cfg.system(None).unwrap();
        match spec.reaction {
            Reaction::PhiPair { beta, .. } => assert_eq!(beta, [2.0, -1.0]),
            _ => panic!("expected interaction model"),
        }
        assert_eq!(spec.boundary[1], SpeciesBc::neumann_neumann());
    }

    #[test]
    fn conflicting_fields_are_rejected() {
        let bad = [
            "[system]\npreset = \"competing-species\"\nbeta_u = 1.0\n",
            "[system]\npreset = \"brusselator\"\nbeta = 1.0\nbeta_v = 1.0\n",
            "[system]\npreset = \"competing-species\"\nc = 1.0\n",
            "[system]\npreset = \"competing-species\"\nf = [\"u +\", \"v\"]\n",
            "[system]\npreset = \"competing-species\"\n[inversion]\nmax_iters = 0\n",
        ];
        for text in bad {
            let cfg = ExperimentConfig::parse(text).unwrap();
            assert!(cfg.experiment(None).is_err(), "{text}");
        }
    }

    #[test]
    fn shipped_experiments_are_valid() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
        let mut count = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().and_then(|e| e.to_str()) != Some("toml") {
                continue;
            }
            let cfg = ExperimentConfig::load(&path).unwrap();
            for beta in cfg.sweep.betas.iter().map(|&b| Some(b)).chain([None]) {
                cfg.experiment(beta)
                    .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            }
            count += 1;
        }
        assert!(count >= 8);
    }
}
