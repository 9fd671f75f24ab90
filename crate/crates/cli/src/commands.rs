use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use rdid::data::{estimate_range, Measurement};
use rdid::diagnostics::{
    competing_beta_bound, decay_fit, dissipativity_check, range_condition_check,
};
use rdid::inversion::{run, ReconstructionResult};
use rdid::io::{csv_table, fmt_f64, write_atomic};
use rdid::pipeline::Experiment;
use rdid::{Error, RangeInterval, Reaction, StoredProfile, Trajectory};

use crate::config::{ConfigError, ExperimentConfig};
use crate::svg::{color, Plot, Series};

/// Why a command did not succeed; each maps to an exit status.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Forward(String),
    Diverged(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 64,
            Failure::Forward(_) => 3,
            Failure::Diverged(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m)
            | Failure::Forward(m)
            | Failure::Diverged(m)
            | Failure::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_forward_failure() {
            return Failure::Forward(msg);
        }
        match e {
            Error::InvalidInput(_)
            | Error::InvalidGrid(_)
            | Error::GridTooCoarse(_)
            | Error::UnsupportedBc(_)
            | Error::ZeroMultiplier { .. }
            | Error::Expr(_) => Failure::Config(msg),
            _ => Failure::Runtime(msg),
        }
    }
}

/// Files produced by a command, written together once it has finished.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    fn write(self, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
        let io = |e: std::io::Error| Failure::Runtime(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut written = Vec::new();
        for (name, contents) in self.files {
            let path = dir.join(name);
            write_atomic(&path, contents.as_bytes()).map_err(io)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub struct Context {
    pub config: ExperimentConfig,
    pub betas: Vec<f64>,
    pub quiet: bool,
}

impl Context {
    fn say(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
        }
    }

    fn single_beta(&self) -> Result<Option<f64>, Failure> {
        match self.betas.as_slice() {
            [] => Ok(None),
            [b] => Ok(Some(*b)),
            _ => Err(Failure::Config("this command takes a single --beta".into())),
        }
    }

    fn finish(&self, outputs: Outputs) -> Result<(), Failure> {
        for path in outputs.write(&self.config.output.dir)? {
            info!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn nearest_level(traj: &Trajectory, t: f64) -> usize {
    let g = traj.grid();
    ((t / g.dt()).round().max(0.0) as usize).min(g.nt() - 1)
}

pub fn forward(ctx: &Context) -> Result<(), Failure> {
    let e = ctx.config.experiment(ctx.single_beta()?)?;
    if ctx.config.output.snapshots.iter().any(|t| !(*t >= 0.0)) {
        return Err(Failure::Config(
            "output.snapshots must be nonnegative times".into(),
        ));
    }
    info!(
        "solving the forward problem on {}x{}",
        e.grid.nx(),
        e.grid.nt()
    );
    let traj = e.simulate()?;
    let g = *traj.grid();
    let levels: Vec<usize> = ctx
        .config
        .output
        .snapshots
        .iter()
        .map(|&t| nearest_level(&traj, t))
        .collect();
    let mut rows = Vec::new();
    for &k in &levels {
        for i in 0..g.nx() {
            rows.push(vec![
                g.t(k),
                g.x(i),
                traj.value(0, k, i),
                traj.value(1, k, i),
            ]);
        }
    }
    let mut out = Outputs::default();
    out.add("trajectory.csv", csv_table(&["t", "x", "u", "v"], rows));
    if ctx.config.output.svg {
        for (s, name) in ["u", "v"].iter().enumerate() {
            let mut plot = Plot::new(&format!("{name}(x, t)"), "x", name);
            for (j, &k) in levels.iter().enumerate() {
                let pts = (0..g.nx()).map(|i| (g.x(i), traj.value(s, k, i))).collect();
                plot.push(Series::new(format!("t = {:.3}", g.t(k)), pts, color(j)));
            }
            out.add(format!("forward_{name}.svg"), plot.render());
        }
    }
    let (ulo, uhi) = traj.extrema(0);
    let (vlo, vhi) = traj.extrema(1);
    ctx.say(&format!(
        "forward solve on {}x{} grid, T = {}\nu in [{ulo:.6e}, {uhi:.6e}], v in [{vlo:.6e}, {vhi:.6e}]\n",
        g.nx(),
        g.nt(),
        g.horizon()
    ));
    ctx.finish(out)
}

struct Inversion {
    measurement: Measurement,
    smoothed_csv: String,
    result: ReconstructionResult,
}

fn load_measurement(path: &Path) -> Result<Measurement, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Measurement::from_csv(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn invert_with(cfg: &ExperimentConfig, e: &Experiment) -> Result<Inversion, Failure> {
    let measurement = match &cfg.measurement.file {
        Some(path) => {
            let m = load_measurement(path)?;
            if m.kind != e.kind {
                return Err(Failure::Config(
                    "measurement file does not match measurement.mode".into(),
                ));
            }
            m
        }
        None => {
            info!("simulating data");
            let traj = e.simulate()?;
            e.measure(&traj)?
        }
    };
    let data = e.smooth(&measurement)?;
    let smoothed_csv = data.to_csv();
    let mut prob = e.problem(data)?;
    if !cfg.inversion.compare_truth {
        prob.truth = None;
    }
    prob.measurement = Some(measurement.clone());
    info!("reconstructing, at most {} iterations", prob.max_iters);
    let result = run(&prob, prob.initial_guess()?)?;
    Ok(Inversion {
        measurement,
        smoothed_csv,
        result,
    })
}

fn summary(r: &ReconstructionResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "verdict: {}", r.verdict.label());
    let _ = writeln!(s, "iterations: {}", r.iterations());
    match r.contraction_q {
        Some(q) => {
            let _ = writeln!(s, "contraction estimate: {q:.6e}");
        }
        None => {
            let _ = writeln!(s, "contraction estimate: n/a");
        }
    }
    if let Some(e) = r.final_error() {
        let label = if r.initial_error.is_some() {
            "error"
        } else {
            "increment"
        };
        let _ = writeln!(s, "final {label}: {:.6e} / {:.6e}", e[0], e[1]);
    }
    for (k, j) in r.ranges.iter().enumerate() {
        let _ = writeln!(s, "range {}: [{:.6e}, {:.6e}]", k + 1, j.lo(), j.hi());
    }
    if r.stats.unknown_evals > 0 {
        let _ = writeln!(
            s,
            "clamped evaluations: {:.4}%",
            100.0 * r.stats.clamped_evals as f64 / r.stats.unknown_evals as f64
        );
    }
    if let Some(f) = &r.failure {
        let _ = writeln!(s, "failure: {f}");
    }
    s
}

fn profile_points(p: &StoredProfile) -> Vec<(f64, f64)> {
    p.abscissae
        .iter()
        .copied()
        .zip(p.values.iter().copied())
        .collect()
}

fn reconstruction_plots(e: &Experiment, r: &ReconstructionResult, out: &mut Outputs) {
    let truth = rdid::presets::unknown_pair(&e.spec);
    let names = match e.spec.reaction {
        Reaction::FPair { .. } => ["f1", "f2"],
        Reaction::PhiPair { .. } => ["phi1", "phi2"],
    };
    let arg = match e.spec.reaction {
        Reaction::FPair { .. } => ["u", "v"],
        Reaction::PhiPair { .. } => ["w", "w"],
    };
    for s in 0..2 {
        let mut plot = Plot::new(&format!("{} reconstruction", names[s]), arg[s], names[s]);
        if r.initial_error.is_some() {
            let t = StoredProfile::sample(&r.ranges[s], |a| truth[s].eval(a));
            plot.push(Series::new("exact", profile_points(&t), "black").dashed());
        }
        for (k, pair) in r.iterates.iter().enumerate().skip(1) {
            plot.push(Series::new(
                format!("iterate {k}"),
                profile_points(&pair[s]),
                color(k - 1),
            ));
        }
        out.add(format!("reconstruction_{}.svg", names[s]), plot.render());
    }
    let mut plot = Plot::new("reconstruction error", "iteration", "relative error").log_y();
    let first = if r.initial_error.is_some() { 0 } else { 1 };
    let series: Vec<[f64; 2]> = r
        .initial_error
        .iter()
        .chain(&r.error_history)
        .copied()
        .collect();
    for s in 0..2 {
        let pts = series
            .iter()
            .enumerate()
            .map(|(k, e)| ((k + first) as f64, e[s]))
            .collect();
        plot.push(Series::new(names[s], pts, color(s)));
    }
    out.add("errors.svg", plot.render());
}

pub fn invert(ctx: &Context) -> Result<(), Failure> {
    let e = ctx.config.experiment(ctx.single_beta()?)?;
    let inv = invert_with(&ctx.config, &e)?;
    let r = &inv.result;
    let text = summary(r);
    let mut out = Outputs::default();
    out.add("measurement.csv", inv.measurement.to_csv());
    out.add("smoothed.csv", inv.smoothed_csv);
    out.add("errors.csv", r.error_csv());
    out.add("profiles.csv", r.profiles_csv());
    out.add("summary.txt", text.clone());
    if ctx.config.output.svg {
        reconstruction_plots(&e, r, &mut out);
    }
    ctx.say(&text);
    ctx.finish(out)?;
    if r.verdict.is_divergent() {
        return Err(Failure::Diverged(format!(
            "reconstruction {}",
            r.verdict.label()
        )));
    }
    Ok(())
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn sweep(ctx: &Context) -> Result<(), Failure> {
    let betas = if ctx.betas.is_empty() {
        ctx.config.sweep.betas.clone()
    } else {
        ctx.betas.clone()
    };
    if betas.is_empty() {
        return Err(Failure::Config("sweep needs at least one beta".into()));
    }
    let experiments = betas
        .iter()
        .map(|&b| ctx.config.experiment(Some(b)).map(|e| (b, e)))
        .collect::<Result<Vec<_>, _>>()?;
    info!("sweeping {} values of beta", betas.len());
    let runs: Vec<(f64, Result<ReconstructionResult, Failure>)> = experiments
        .par_iter()
        .map(|(b, e)| (*b, invert_with(&ctx.config, e).map(|inv| inv.result)))
        .collect();

    let mut history = String::from("beta,iter,err_f1,err_f2\n");
    let mut table = String::from("beta,verdict,iterations,q,err_f1,err_f2,failure\n");
    let mut errors = Plot::new("error history", "iteration", "max relative error").log_y();
    let mut rates = Plot::new("contraction estimate", "beta", "q");
    let mut q_points = Vec::new();
    let mut text = String::new();
    for (k, (beta, run)) in runs.iter().enumerate() {
        match run {
            Ok(r) => {
                let first = if r.initial_error.is_some() { 0 } else { 1 };
                let series: Vec<[f64; 2]> = r
                    .initial_error
                    .iter()
                    .chain(&r.error_history)
                    .copied()
                    .collect();
                for (i, e) in series.iter().enumerate() {
                    let _ = writeln!(
                        history,
                        "{},{},{},{}",
                        fmt_f64(*beta),
                        i + first,
                        fmt_f64(e[0]),
                        fmt_f64(e[1])
                    );
                }
                let fin = r.final_error().unwrap_or([f64::NAN; 2]);
                let q = r.contraction_q.unwrap_or(f64::NAN);
                let _ = writeln!(
                    table,
                    "{},{},{},{},{},{},{}",
                    fmt_f64(*beta),
                    r.verdict.label(),
                    r.iterations(),
                    fmt_f64(q),
                    fmt_f64(fin[0]),
                    fmt_f64(fin[1]),
                    quote(r.failure.as_deref().unwrap_or(""))
                );
                let pts = series
                    .iter()
                    .enumerate()
                    .map(|(i, e)| ((i + first) as f64, e[0].max(e[1])))
                    .collect();
                errors.push(Series::new(format!("beta = {beta}"), pts, color(k)));
                q_points.push((*beta, q));
                let _ = writeln!(
                    text,
                    "beta {beta}: {} after {} iterations, q = {q:.4e}",
                    r.verdict.label(),
                    r.iterations()
                );
            }
            Err(f) => {
                warn!("beta {beta}: {}", f.message());
                let _ = writeln!(
                    table,
                    "{},failed,0,NaN,NaN,NaN,{}",
                    fmt_f64(*beta),
                    quote(f.message())
                );
                let _ = writeln!(text, "beta {beta}: failed: {}", f.message());
            }
        }
    }
    let mut out = Outputs::default();
    out.add("sweep.csv", history);
    out.add("sweep_summary.csv", table);
    if ctx.config.output.svg {
        q_points.sort_by(|a, b| a.0.total_cmp(&b.0));
        rates.push(Series::new("q", q_points, color(0)));
        out.add("sweep_errors.svg", errors.render());
        out.add("rates.svg", rates.render());
    }
    ctx.say(&text);
    ctx.finish(out)
}

fn extent(traj: &Trajectory, s: usize) -> Result<RangeInterval, Failure> {
    let (lo, hi) = traj.extrema(s);
    let (lo, hi) = if hi - lo > 1e-12 {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    Ok(RangeInterval::new(lo, hi)?)
}

pub fn diagnose(ctx: &Context) -> Result<(), Failure> {
    let e = ctx.config.experiment(ctx.single_beta()?)?;
    let d = &ctx.config.diagnose;
    if d.nsamples < 2 || d.ngrid == 0 {
        return Err(Failure::Config(
            "diagnose.nsamples >= 2 and diagnose.ngrid > 0 required".into(),
        ));
    }
    info!("simulating the true system");
    let traj = e.simulate()?;
    let mut text = String::new();
    match decay_fit(&traj) {
        Ok(fit) => {
            let _ = writeln!(
                text,
                "decay fit: C2 = {:.6e}, c2 = {:.6e}, residual {:.3e}{}",
                fit.c_2_big,
                fit.c_2,
                fit.residual,
                if fit.c_2 > 0.0 { "" } else { " (no decay)" }
            );
        }
        Err(err) => {
            let _ = writeln!(text, "decay fit: {err}");
        }
    }
    let extents = [extent(&traj, 0)?, extent(&traj, 1)?];
    let report = dissipativity_check(&e.spec, &extents, d.c_q, d.nsamples)?;
    text.push_str(&report.summary());

    let measurement = e.measure(&traj)?;
    let data = e.smooth(&measurement)?;
    let ranges = estimate_range(&data)?;
    text.push_str(&range_condition_check(&traj, &ranges).summary());

    if let Reaction::FPair { f, .. } = &e.spec.reaction {
        let nonneg = extents.map(|j| RangeInterval::new(0.0, j.hi().max(1e-12)));
        let line = match nonneg {
            [Ok(a), Ok(b)] => match competing_beta_bound([&f[0], &f[1]], &[a, b], d.ngrid) {
                Ok(bound) => format!(
                    "competing species bound: beta <= {:.6e} (u: {:.6e}, v: {:.6e})",
                    bound.bound(),
                    bound.from_u,
                    bound.from_v
                ),
                Err(err) => format!("competing species bound: {err}"),
            },
            _ => "competing species bound: empty range".to_string(),
        };
        let _ = writeln!(text, "{line}");
    }
    let mut out = Outputs::default();
    out.add("diagnose.txt", text.clone());
    out.add("dissipativity.csv", report.to_csv());
    ctx.say(&text);
    ctx.finish(out)
}
