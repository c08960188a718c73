use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use css_core::evolve::{evolve, EvolutionConfig, StopReason, Tracking};
use css_core::functionals::{conserved_report, morawetz};
use css_core::io::{load_field, save_field, Metadata};
use css_core::linops::{build_setup, FitMode, LinearizedSetup, Modulator, MAX_SPECTRAL_NODES};
use css_core::soliton::{solve_standing_wave, SolitonProfile, SolverOptions};
use css_core::{Field, Report};

use crate::config::StudyConfig;
use crate::error::{CliError, CliResult};
use crate::study::{num, run_study};
use crate::{boundary_mass_fraction, VERSION};

#[derive(Debug, Parser)]
#[command(name = "css-lab", version, about = "Numerical laboratory for the equivariant Chern-Simons-Schroedinger equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for a standing wave and write it as a field file.
    Soliton(SolitonArgs),
    /// Print r, A_theta, A_0 of a field as CSV.
    Gauge(GaugeArgs),
    /// Integrate a field in time and write a trajectory directory.
    Evolve(EvolveArgs),
    /// Spectrum of the linearized coercivity form around a profile.
    Spectrum(SpectrumArgs),
    /// Fit scale and phase of the soliton orbit to a state.
    Modfit(ModfitArgs),
    /// Print the monitored functionals of a field as one CSV row.
    Diagnose(DiagnoseArgs),
    /// Run a parameter study described by a key=value config file.
    Study(StudyArgs),
}

#[derive(Debug, Args)]
pub struct SolitonArgs {
    #[arg(long, default_value_t = 1)]
    pub m: i32,
    #[arg(long, default_value_t = 1.5)]
    pub g: f64,
    /// Defaults to 0 for g = 1 and 1 otherwise.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    #[arg(long = "rmax", default_value_t = 30.0)]
    pub r_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GaugeArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub dt: f64,
    #[arg(long = "t-start", default_value_t = 0.0, allow_hyphen_values = true)]
    pub t_start: f64,
    #[arg(long = "t-end", allow_hyphen_values = true)]
    pub t_end: f64,
    #[arg(long = "sample-every", default_value_t = 100)]
    pub sample_every: usize,
    /// Fit the soliton orbit at every sample (needs --profile).
    #[arg(long)]
    pub track: bool,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value = "nearest")]
    pub mode: FitMode,
    /// Remove the pseudoconformal chirp of a solution blowing up at this time before fitting.
    #[arg(long = "blowup-time")]
    pub blowup_time: Option<f64>,
    /// Stop once the fitted scale drops below this value.
    #[arg(long = "min-lambda")]
    pub min_lambda: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub profile: PathBuf,
    /// Where to write psi as a field file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModfitArgs {
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, default_value = "orthogonal")]
    pub mode: FitMode,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Time stamp for the row; defaults to the file's `t` key, else 0.
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<f64>,
    /// Morawetz radius; defaults to r_max/2.
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's `out` key.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one command, writing its normal output to `stdout`, and returns
/// the exit status.
pub fn run(cli: Cli, stdout: &mut dyn std::io::Write) -> CliResult<i32> {
    match cli.command {
        Command::Soliton(a) => soliton(a, stdout),
        Command::Gauge(a) => gauge(a, stdout),
        Command::Evolve(a) => evolve_cmd(a, stdout),
        Command::Spectrum(a) => spectrum(a, stdout),
        Command::Modfit(a) => modfit(a, stdout),
        Command::Diagnose(a) => diagnose(a, stdout),
        Command::Study(a) => study(a, stdout),
    }
}

fn load(path: &Path) -> CliResult<(Field, Metadata)> {
    load_field(path).map_err(|source| CliError::File { path: path.display().to_string(), source })
}

fn warn_boundary(u: &Field, what: &str) {
    let frac = boundary_mass_fraction(u);
    if frac > 1e-10 {
        log::warn!("{what}: {frac:.2e} of the mass lies in the outer tenth of the grid; r_max may be too small");
    }
}

fn load_profile(path: &Path) -> CliResult<SolitonProfile<f64>> {
    let (field, meta) = load(path)?;
    let alpha = match meta.get("alpha") {
        Some(raw) => raw
            .parse()
            .map_err(|_| CliError::Config(format!("{}: cannot parse alpha `{raw}`", path.display())))?,
        None if field.g() == 1.0 => 0.0,
        None => return Err(CliError::Config(format!("{}: profile lacks the `alpha` key", path.display()))),
    };
    SolitonProfile::from_field(field, alpha).map_err(|source| CliError::File { path: path.display().to_string(), source })
}

fn spectral_setup(q: &SolitonProfile<f64>) -> CliResult<LinearizedSetup<f64>> {
    let n = q.grid().n();
    if n > MAX_SPECTRAL_NODES {
        return Err(CliError::Config(format!(
            "profile has {n} nodes; spectral work is limited to {MAX_SPECTRAL_NODES}, resample it on a coarser grid"
        )));
    }
    Ok(build_setup(q)?)
}

fn soliton(a: SolitonArgs, stdout: &mut dyn std::io::Write) -> CliResult<i32> {
    let alpha = a.alpha.unwrap_or(if a.g == 1.0 { 0.0 } else { 1.0 });
    let grid = css_core::grid::make_uniform_grid(a.n, a.r_max).map_err(|e| CliError::Config(e.to_string()))?;
    let opts = SolverOptions { seed: a.seed, ..SolverOptions::default() };
    let q = solve_standing_wave(a.m, a.g, alpha, grid, &opts).map_err(|e| match e {
        css_core::CssError::InvalidParameters(msg) => CliError::Config(msg),
        other => CliError::Core(other),
    })?;
    warn_boundary(&q.field, "soliton");
    let mut meta = Metadata::new();
    meta.insert("alpha".into(), alpha.to_string());
    meta.insert("charge".into(), q.charge.to_string());
    meta.insert("residual_norm".into(), q.residual_norm.to_string());
    meta.insert("seed".into(), a.seed.to_string());
    meta.insert("version".into(), VERSION.into());
    save_field(&a.out, &q.field, &meta)?;
    writeln!(stdout, "charge={}\nresidual_norm={}", q.charge, q.residual_norm)?;
    Ok(0)
}

fn gauge(a: GaugeArgs, stdout: &mut dyn std::io::Write) -> CliResult<i32> {
    let (u, _) = load(&a.field)?;
    let gp = css_core::gauge::compute_gauge(&u)?;
    let mut text = String::from("r,a_theta,a_zero\n");
    for ((r, at), a0) in u.grid().nodes().iter().zip(&gp.a_theta).zip(&gp.a_zero) {
        let _ = writeln!(text, "{},{},{}", num(*r), num(*at), num(*a0));
    }
    match a.out {
        Some(path) => fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(0)
}

const REPORT_COLUMNS: &str = "t,mass,energy,energy_sd,l4,virial_v,virial_dv";

fn report_fields(t: f64, r: &Report) -> String {
    [t, r.mass, r.energy, r.energy_selfdual_form, r.l4_fourth_power, r.virial_v, r.virial_dv].map(num).join(",")
}

fn evolve_cmd(a: EvolveArgs, stdout: &mut dyn std::io::Write) -> CliResult<i32> {
    let (u0, _) = load(&a.init)?;
    warn_boundary(&u0, "initial state");
    let cfg = EvolutionConfig {
        dt: a.dt,
        t_start: a.t_start,
        t_end: a.t_end,
        sample_every: a.sample_every,
        ..Default::default()
    };
    cfg.steps().map_err(|e| CliError::Config(e.to_string()))?;

    let profile = match (&a.profile, a.track) {
        (Some(p), true) => Some(load_profile(p)?),
        (None, true) => return Err(CliError::Config("--track needs --profile".into())),
        _ => None,
    };
    if let Some(q) = &profile {
        if q.m != u0.m() || q.g != u0.g() || q.grid().n() != u0.grid().n() || q.grid().r_max() != u0.grid().r_max() {
            return Err(CliError::Config("profile and initial state differ in m, g or grid".into()));
        }
    }
    let modulator = profile.as_ref().map(Modulator::new).transpose()?;
    let setup = match (&profile, a.mode) {
        (Some(q), FitMode::Orthogonal) => Some(spectral_setup(q)?),
        _ => None,
    };
    let tracking = modulator.as_ref().map(|md| Tracking {
        modulator: md,
        mode: a.mode,
        psi: setup.as_ref().map(|s| s.psi.as_slice()),
        chirp_time: a.blowup_time,
        min_lambda: a.min_lambda,
    });
    let traj = evolve(&u0, &cfg, tracking)?;

    fs::create_dir_all(&a.out)?;
    let mut meta = String::new();
    let _ = writeln!(meta, "init={}", a.init.display());
    let _ = writeln!(meta, "m={}\ng={}\nn={}\nr_max={}", u0.m(), u0.g(), u0.grid().n(), u0.grid().r_max());
    let _ = writeln!(meta, "dt={}\nt_start={}\nt_end={}\nsample_every={}", a.dt, a.t_start, a.t_end, a.sample_every);
    let _ = writeln!(meta, "linear_solver_tol={}", cfg.linear_solver_tol);
    let _ = writeln!(meta, "track={}\nmode={:?}", a.track, a.mode);
    if let Some(p) = &a.profile {
        let _ = writeln!(meta, "profile={}", p.display());
    }
    if let Some(t) = a.blowup_time {
        let _ = writeln!(meta, "blowup_time={t}");
    }
    if let Some(l) = a.min_lambda {
        let _ = writeln!(meta, "min_lambda={l}");
    }
    let _ = writeln!(meta, "samples={}", traj.times.len());
    let stopped = match &traj.stopped {
        None => "none".to_string(),
        Some(StopReason::Resolution { t, lambda }) => format!("resolution at t={t} lambda={lambda}"),
        Some(StopReason::Failure { t, message }) => format!("failure at t={t}: {message}"),
    };
    let _ = writeln!(meta, "stopped={stopped}");
    let _ = writeln!(meta, "version={VERSION}");
    fs::write(a.out.join("meta"), meta)?;

    let mut csv = String::new();
    let _ = writeln!(csv, "# init={}", a.init.display());
    let _ = writeln!(csv, "# version={VERSION}");
    csv.push_str(REPORT_COLUMNS);
    csv.push_str(if traj.modulation.is_some() { ",lambda,gamma,eps_l2\n" } else { "\n" });
    for (k, (t, r)) in traj.times.iter().zip(&traj.reports).enumerate() {
        csv.push_str(&report_fields(*t, r));
        if let Some(frames) = &traj.modulation {
            let f = &frames[k];
            let _ = write!(csv, ",{},{},{}", num(f.lambda), num(f.gamma), num(f.eps_l2));
        }
        csv.push('\n');
    }
    fs::write(a.out.join("report.csv"), csv)?;
    for (k, (t, state)) in traj.times.iter().zip(&traj.states).enumerate() {
        let mut m = Metadata::new();
        m.insert("t".into(), t.to_string());
        save_field(a.out.join(format!("field_{k:05}.csv")), state, &m)?;
    }
    writeln!(stdout, "samples={}\nstopped={stopped}", traj.times.len())?;
    Ok(i32::from(matches!(traj.stopped, Some(StopReason::Failure { .. }))))
}

fn spectrum(a: SpectrumArgs, stdout: &mut dyn std::io::Write) -> CliResult<i32> {
    let q = load_profile(&a.profile)?;
    let setup = spectral_setup(&q)?;
    let mut meta = Metadata::new();
    meta.insert("lambda_min".into(), setup.lambda_min.to_string());
    meta.insert("lambda_min_projected".into(), setup.lambda_min_projected.to_string());
    meta.insert("transversality".into(), setup.transversality.to_string());
    meta.insert("negative_found".into(), setup.negative_found.to_string());
    if let Some(k) = setup.psi_decay_rate {
        meta.insert("psi_decay".into(), k.to_string());
    }
    for (k, v) in &meta {
        writeln!(stdout, "{k}={v}")?;
    }
    if let Some(path) = &a.out {
        meta.insert("version".into(), VERSION.into());
        let psi = css_core::grid::RadialField::from_real(q.grid().clone(), q.m, q.g, &setup.psi)?;
        save_field(path, &psi, &meta)?;
    }
    Ok(0)
}

fn modfit(a: ModfitArgs, stdout: &mut dyn std::io::Write) -> CliResult<i32> {
    let (u, _) = load(&a.state)?;
    let q = load_profile(&a.profile)?;
    if q.m != u.m() || q.grid().n() != u.grid().n() || q.grid().r_max() != u.grid().r_max() {
        return Err(CliError::Config("state and profile differ in m or grid".into()));
    }
    let frame = match a.mode {
        FitMode::Nearest => Modulator::new(&q)?.fit(&u, FitMode::Nearest, None, None)?,
        FitMode::Orthogonal => css_core::linops::fit_modulation(&u, &spectral_setup(&q)?, FitMode::Orthogonal)?,
    };
    writeln!(stdout, "lambda,gamma,eps_l2\n{},{},{}", num(frame.lambda), num(frame.gamma), num(frame.eps_l2))?;
    Ok(0)
}

fn diagnose(a: DiagnoseArgs, stdout: &mut dyn std::io::Write) -> CliResult<i32> {
    let (u, meta) = load(&a.field)?;
    warn_boundary(&u, "field");
    let t = match (a.t, meta.get("t")) {
        (Some(t), _) => t,
        (None, Some(raw)) => raw.parse().map_err(|_| CliError::Config(format!("cannot parse t `{raw}`")))?,
        (None, None) => 0.0,
    };
    let radius = a.radius.unwrap_or(u.grid().r_max() / 2.0);
    let mor = morawetz(&u, radius).map_err(|e| CliError::Config(e.to_string()))?;
    let rep = conserved_report(&u)?;
    let mut out = Vec::new();
    write_report_row(&mut out, t, &rep, mor)?;
    stdout.write_all(&out)?;
    Ok(0)
}

/// Header plus one row: `t, mass, energy, energy_sd, l4, virial_v, virial_dv, morawetz`.
pub fn write_report_row(out: &mut dyn std::io::Write, t: f64, rep: &Report, morawetz: f64) -> std::io::Result<()> {
    writeln!(out, "{REPORT_COLUMNS},morawetz")?;
    writeln!(out, "{},{}", report_fields(t, rep), num(morawetz))
}

fn study(a: StudyArgs, stdout: &mut dyn std::io::Write) -> CliResult<i32> {
    let mut cfg = StudyConfig::load(&a.config)?;
    if let Some(out) = a.out {
        cfg.out = Some(out);
    }
    let report = run_study(&cfg)?;
    writeln!(
        stdout,
        "{}: {}/{} cells passed; summary {}, report {}",
        report.kind,
        report.cells.len() - report.failed_cells(),
        report.cells.len(),
        report.summary_path.display(),
        report.report_path.display()
    )?;
    Ok(report.exit_code())
}
