//! Parameter sweeps.
//!
//! A study expands its configuration into independent cells. Cells run on
//! a rayon pool, each writing its rows to `cells/cell_NNN.csv`; the files
//! are then concatenated in cell order, so the summary body does not depend
//! on scheduling or thread count.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use css_core::evolve::{evolve, pc_blowup_reference, pseudoconformal, step, EvolutionConfig, StopReason, Tracking};
use css_core::functionals::{energy, mass};
use css_core::gauge::compute_gauge;
use css_core::grid::{make_uniform_grid, prefix_integral, RadialGrid};
use css_core::linops::{build_setup, coercivity_form, energy_expansion_check, FitMode, Modulator};
use css_core::perturb::{rng, smooth_direction};
use css_core::soliton::{residual_norm, selfdual_soliton, solve_standing_wave, standing_wave_residual, SolitonProfile, SolverOptions};
use css_core::CssError;

use crate::config::{StudyConfig, StudyKind};
use crate::error::{CliError, CliResult};
use crate::{boundary_mass_fraction, VERSION};

/// Pass condition of a [`Check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Below(f64),
    Above(f64),
    Within(f64, f64),
}

impl Bound {
    pub fn holds(self, x: f64) -> bool {
        match self {
            Bound::AtMost(b) => x <= b,
            Bound::AtLeast(b) => x >= b,
            Bound::Below(b) => x < b,
            Bound::Above(b) => x > b,
            Bound::Within(lo, hi) => (lo..=hi).contains(&x),
        }
    }

    pub fn describe(self) -> String {
        match self {
            Bound::AtMost(b) => format!("<= {b:.3e}"),
            Bound::AtLeast(b) => format!(">= {b:.3e}"),
            Bound::Below(b) => format!("< {b:.3e}"),
            Bound::Above(b) => format!("> {b:.3e}"),
            Bound::Within(lo, hi) => format!("in [{lo}, {hi}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: Bound,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, bound: Bound) -> Self {
        Check { name: name.into(), measured, bound }
    }

    pub fn pass(&self) -> bool {
        self.bound.holds(self.measured)
    }
}

/// One point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub m: i32,
    pub g: f64,
    /// `None` for the whole `α` list (soliton table) or the self-dual case.
    pub alpha: Option<f64>,
}

impl Cell {
    pub fn label(&self) -> String {
        match self.alpha {
            Some(a) => format!("m={} g={} alpha={a}", self.m, self.g),
            None => format!("m={} g={}", self.m, self.g),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    /// Measurement columns, one vector per row.
    pub rows: Vec<Vec<String>>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub error: Option<String>,
}

impl CellOutcome {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.checks.iter().any(|c| !c.pass())
    }
}

#[derive(Debug)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub cells: Vec<CellOutcome>,
    pub summary_path: PathBuf,
    pub report_path: PathBuf,
}

impl StudyReport {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.failed()).count()
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.failed_cells() > 0)
    }
}

const PROVENANCE: [&str; 5] = ["n", "r_max", "dt", "seed", "version"];

pub fn columns(kind: StudyKind) -> &'static [&'static str] {
    match kind {
        StudyKind::SolitonTable => &[
            "m",
            "g",
            "alpha",
            "charge",
            "residual_norm",
            "energy_over_charge",
            "alpha_consistency",
            "boundary_mass",
            "newton_steps",
        ],
        StudyKind::SpectrumScan => &[
            "m",
            "g",
            "alpha",
            "charge",
            "lambda_min",
            "lambda_min_projected",
            "transversality",
            "eigenvalue_2",
            "eigenvalue_3",
            "psi_decay",
            "expansion_slope",
            "expansion_slope_wrong",
            "expansion_slope_corrected",
        ],
        StudyKind::BlowupBenchmark => &[
            "m",
            "g",
            "alpha",
            "charge",
            "initial_mass_error",
            "max_lambda_deviation",
            "cutoff_time",
            "samples",
            "mass_drift",
        ],
        StudyKind::IdentitySuite => &["m", "check", "measured", "bound", "pass"],
    }
}

pub fn cells(cfg: &StudyConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &m in &cfg.m {
        for &g in &cfg.g {
            let alphas: Vec<Option<f64>> = match cfg.kind {
                StudyKind::SolitonTable | StudyKind::IdentitySuite => vec![None],
                _ if g == 1.0 => vec![None],
                _ => cfg.alpha.iter().map(|&a| Some(a)).collect(),
            };
            for alpha in alphas {
                out.push(Cell { index: out.len(), m, g, alpha });
            }
        }
    }
    out
}

/// Shortest round-trip decimal, in exponent form for very small or large
/// magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn sanitize(msg: &str) -> String {
    msg.replace([',', '\n', '\r'], ";")
}

fn grid(n: usize, r_max: f64) -> Result<Arc<RadialGrid<f64>>, CssError> {
    make_uniform_grid(n, r_max)
}

fn profile(m: i32, g: f64, alpha: Option<f64>, grid: Arc<RadialGrid<f64>>, seed: u64) -> Result<SolitonProfile<f64>, CssError> {
    match alpha {
        None if g == 1.0 => selfdual_soliton(m, grid),
        _ => {
            let opts = SolverOptions { seed, ..SolverOptions::default() };
            solve_standing_wave(m, g, alpha.unwrap_or(1.0), grid, &opts)
        }
    }
}

/// Applies the provenance columns `(n, r_max, dt, seed, version)` to a row.
fn with_provenance(mut row: Vec<String>, status: &str, n: usize, r_max: f64, cfg: &StudyConfig) -> Vec<String> {
    row.push(status.to_string());
    row.extend([n.to_string(), num(r_max), num(cfg.dt), cfg.seed.to_string(), VERSION.to_string()]);
    row
}

struct CellWork {
    rows: Vec<Vec<String>>,
    checks: Vec<Check>,
    notes: Vec<String>,
}

fn soliton_table(cell: Cell, cfg: &StudyConfig) -> Result<CellWork, CssError> {
    let mut profiles = Vec::new();
    if cell.g == 1.0 {
        let g = grid(cfg.n, cfg.r_max)?;
        profiles.push((0.0, cfg.r_max, selfdual_soliton(cell.m, g)?));
    } else {
        // The profile at frequency α is √α Q₁(√α r); shrinking the extent
        // by √α keeps the discrete problems exactly similar.
        for &a in &cfg.alpha {
            let r_max = cfg.r_max / a.sqrt();
            profiles.push((a, r_max, profile(cell.m, cell.g, Some(a), grid(cfg.n, r_max)?, cfg.seed)?));
        }
    }
    let charges: Vec<f64> = profiles.iter().map(|p| p.2.charge).collect();
    let consistency = charges.iter().map(|c| (c - charges[0]).abs() / charges[0]).fold(0.0, f64::max);
    let mut work = CellWork { rows: Vec::new(), checks: Vec::new(), notes: Vec::new() };
    for (a, r_max, q) in &profiles {
        let e = energy(&q.field)?;
        let boundary = boundary_mass_fraction(&q.field);
        if boundary > 1e-10 {
            work.notes.push(format!("alpha={a}: boundary mass fraction {boundary:.2e} exceeds 1e-10; increase r_max"));
        }
        work.rows.push(with_provenance(
            vec![
                cell.m.to_string(),
                num(cell.g),
                num(*a),
                num(q.charge),
                num(q.residual_norm),
                num(e / q.charge),
                num(consistency),
                num(boundary),
                q.newton_history.len().saturating_sub(1).to_string(),
            ],
            "ok",
            cfg.n,
            *r_max,
            cfg,
        ));
        if let Some(tol) = q.tolerance {
            work.checks.push(Check::new(format!("alpha={a} residual"), q.residual_norm, Bound::AtMost(tol)));
        }
    }
    if profiles.len() > 1 {
        work.checks.push(Check::new("alpha consistency of the charge", consistency, Bound::Below(1e-6)));
    }
    Ok(work)
}

const EXPANSION_STEPS: [f64; 4] = [1e-1, 3e-2, 1e-2, 3e-3];

fn spectrum_scan(cell: Cell, cfg: &StudyConfig) -> Result<CellWork, CssError> {
    let q = profile(cell.m, cell.g, cell.alpha, grid(cfg.n, cfg.r_max)?, cfg.seed)?;
    let setup = build_setup(&q)?;
    let direction = setup.admissible(&smooth_direction(setup.grid(), cell.m, 6.0, cfg.seed))?;
    let expansion = energy_expansion_check(&setup, &direction, &EXPANSION_STEPS)?;
    let rq = coercivity_form(&setup, &setup.psi)?;
    let opt = |x: Option<f64>| x.map_or_else(String::new, num);
    let eig = |k: usize| setup.spectrum.get(k).copied().map_or_else(String::new, num);
    let row = vec![
        cell.m.to_string(),
        num(cell.g),
        num(q.alpha),
        num(q.charge),
        num(setup.lambda_min),
        num(setup.lambda_min_projected),
        num(setup.transversality),
        eig(1),
        eig(2),
        opt(setup.psi_decay_rate),
        opt(expansion.slope),
        opt(expansion.slope_wrong),
        opt(expansion.slope_corrected),
    ];
    let mut checks = vec![Check::new("Rayleigh quotient of psi minus lambda_min", (rq - setup.lambda_min).abs(), Bound::AtMost(1e-10))];
    if cell.g == 1.0 {
        checks.push(Check::new("lambda_min (semidefinite at g = 1)", setup.lambda_min, Bound::AtLeast(-1e-10)));
    } else {
        checks.push(Check::new("lambda_min (negative direction)", setup.lambda_min, Bound::Below(0.0)));
        checks.push(Check::new("|transversality|", setup.transversality.abs(), Bound::Above(1e-6)));
        checks.push(Check::new("lambda_min orthogonal to psi (coercivity)", setup.lambda_min_projected, Bound::Above(0.0)));
    }
    Ok(CellWork { rows: vec![with_provenance(row, "ok", cfg.n, cfg.r_max, cfg)], checks, notes: Vec::new() })
}

fn blowup_benchmark(cell: Cell, cfg: &StudyConfig, cell_dir: &Path) -> Result<CellWork, CssError> {
    let q = profile(cell.m, cell.g, cell.alpha, grid(cfg.n, cfg.r_max)?, cfg.seed)?;
    let t_blow = cfg.blowup_time;
    let reference = pc_blowup_reference(&q, t_blow, q.grid().clone())?;
    let modulator = Modulator::new(&q)?;
    let evo = EvolutionConfig { dt: cfg.dt, t_end: cfg.t_end.min(t_blow), sample_every: cfg.sample_every, ..Default::default() };
    let tracking = Tracking {
        modulator: &modulator,
        mode: FitMode::Nearest,
        psi: None,
        chirp_time: Some(t_blow),
        min_lambda: Some(reference.min_lambda),
    };
    let traj = evolve(&reference.initial, &evo, Some(tracking))?;
    let frames = traj.modulation.as_deref().unwrap_or_default();
    let cutoff = match &traj.stopped {
        Some(StopReason::Resolution { t, .. }) => *t,
        Some(StopReason::Failure { t, message }) => {
            return Err(CssError::InvalidParameters(format!("run failed at t = {t}: {message}")));
        }
        None => evo.t_end,
    };

    let mut curve = String::from("t,lambda,lambda_pred,gamma,gamma_pred,eps_l2\n");
    let mut worst: f64 = 0.0;
    for (&t, f) in traj.times.iter().zip(frames) {
        worst = worst.max((f.lambda / reference.lambda(t) - 1.0).abs());
        let fields = [t, f.lambda, reference.lambda(t), f.gamma, css_core::linops::reduce_angle(reference.gamma(t)), f.eps_l2];
        let _ = writeln!(curve, "{}", fields.map(num).join(","));
    }
    fs::write(cell_dir.join(format!("blowup_{:03}.csv", cell.index)), curve)?;

    let m0 = traj.reports[0].mass;
    let drift = traj.reports.iter().map(|r| (r.mass - m0).abs() / m0).fold(0.0, f64::max);
    let steps = ((cutoff - evo.t_start) / evo.dt).abs().round().max(1.0);
    let initial_err = (m0 - q.charge).abs() / q.charge;
    let row = vec![
        cell.m.to_string(),
        num(cell.g),
        num(q.alpha),
        num(q.charge),
        num(initial_err),
        num(worst),
        num(cutoff),
        traj.times.len().to_string(),
        num(drift),
    ];
    let checks = vec![
        Check::new("initial mass vs charge", initial_err, Bound::AtMost(1e-6)),
        Check::new("max |lambda/lambda_pred - 1| over the valid window", worst, Bound::AtMost(0.02)),
        Check::new("mass drift per 1000 steps", drift * 1000.0 / steps, Bound::Below(1e-9)),
    ];
    Ok(CellWork { rows: vec![with_provenance(row, "ok", cfg.n, cfg.r_max, cfg)], checks, notes: Vec::new() })
}

/// Tolerance constant for quantities with an `O(h²)` discretization error.
pub const SECOND_ORDER_CONSTANT: f64 = 10.0;

fn identity_suite(cell: Cell, cfg: &StudyConfig) -> Result<CellWork, CssError> {
    let g = grid(cfg.n, cfg.r_max)?;
    let q = selfdual_soliton(cell.m, g.clone())?;
    let m = cell.m;
    let k = f64::from(m + 1);
    let r = g.nodes();
    let h = g.h();
    let order2 = Bound::AtMost(SECOND_ORDER_CONSTANT * h * h);
    let rr = cfg.r_max.powf(2.0 * k);
    let truncated = 8.0 * PI * k * rr / (1.0 + rr);
    let mut checks = vec![Check::new("charge vs exact charge inside r_max (relative)", (q.charge - truncated).abs() / truncated, order2)];

    let gauge = compute_gauge(&q.field)?;
    let sup_a = r
        .iter()
        .zip(&gauge.a_theta)
        .map(|(&s, &a)| {
            let p = s.powf(2.0 * k);
            (a + 2.0 * k * p / (1.0 + p)).abs()
        })
        .fold(0.0, f64::max);
    checks.push(Check::new("sup |A_theta - closed form|", sup_a, order2));

    // Residual on r < r_max/2 at this grid and at half resolution; the
    // outer half is dominated by truncating the algebraic tail.
    let inner_residual = |grid: &Arc<RadialGrid<f64>>| -> Result<f64, CssError> {
        let q = selfdual_soliton(m, grid.clone())?;
        let res = standing_wave_residual(&q.field, 0.0)?;
        let nodes = grid.nodes();
        let interior = nodes.iter().position(|&s| s > cfg.r_max / 2.0).unwrap_or(nodes.len());
        Ok(residual_norm(&res[..interior], &*make_uniform_grid(interior, nodes[interior - 1])?))
    };
    let fine = inner_residual(&g)?;
    let coarse = inner_residual(&grid((cfg.n - 1) / 2 + 1, cfg.r_max)?)?;
    checks.push(Check::new("observed order of the standing-wave residual on r < r_max/2", (coarse / fine).log2(), Bound::AtLeast(1.8)));
    checks.push(Check::new("|energy| / charge", energy(&q.field)?.abs() / q.charge, order2));

    let evo = EvolutionConfig { dt: cfg.dt, t_end: 200.0 * cfg.dt, sample_every: 200, ..Default::default() };
    let traj = evolve(&q.field, &evo, None)?;
    let cells = g.cell_weights();
    let norm = |u: &css_core::Field| u.density().iter().zip(&cells).map(|(p, w)| p * w).sum::<f64>();
    let m0 = norm(&q.field);
    let m1 = traj.states.last().map_or(m0, norm);
    checks.push(Check::new("relative change of the cell-weighted mass over 200 steps", (m1 - m0).abs() / m0, Bound::AtMost(1e-12)));

    let gamma = rng(cfg.seed).random_range(-PI..PI);
    let rotated = step(&q.field.rotate_phase(gamma), &evo)?;
    let expected = step(&q.field, &evo)?.rotate_phase(gamma);
    let cov = rotated.values().iter().zip(expected.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    checks.push(Check::new("phase covariance of one step (sup)", cov, Bound::AtMost(1e-13)));

    // PC(u, t) restricted to [0, r_max] carries the mass of u on [0, r_max/t].
    let t = 2.0;
    let pc = pseudoconformal(&q.field, t)?;
    let prefix = prefix_integral(&q.field.density(), &g)?;
    let cut = cfg.r_max / t;
    let j = r.iter().position(|&s| s >= cut - 1e-12 * cfg.r_max).unwrap_or(r.len() - 1);
    let inner_mass = 2.0 * PI * prefix[j];
    checks.push(Check::new(
        "pseudoconformal mass vs mass inside r_max/2 (relative)",
        (mass(&pc) - inner_mass).abs() / inner_mass,
        order2,
    ));

    let rows = checks
        .iter()
        .map(|c| {
            let row = vec![m.to_string(), c.name.clone(), num(c.measured), c.bound.describe(), c.pass().to_string()];
            with_provenance(row, "ok", cfg.n, cfg.r_max, cfg)
        })
        .collect();
    Ok(CellWork { rows, checks, notes: Vec::new() })
}

fn run_cell(cell: Cell, cfg: &StudyConfig, cell_dir: &Path) -> CellOutcome {
    let result = catch_unwind(AssertUnwindSafe(|| match cfg.kind {
        StudyKind::SolitonTable => soliton_table(cell, cfg),
        StudyKind::SpectrumScan => spectrum_scan(cell, cfg),
        StudyKind::BlowupBenchmark => blowup_benchmark(cell, cfg, cell_dir),
        StudyKind::IdentitySuite => identity_suite(cell, cfg),
    }));
    let error = match result {
        Ok(Ok(work)) => {
            for note in &work.notes {
                log::warn!("{}: {note}", cell.label());
            }
            return CellOutcome { cell, rows: work.rows, checks: work.checks, notes: work.notes, error: None };
        }
        Ok(Err(e)) => e.to_string(),
        Err(panic) => {
            let msg = panic.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| panic.downcast_ref::<String>().cloned());
            format!("panic: {}", msg.unwrap_or_else(|| "unknown".into()))
        }
    };
    log::error!("{}: {error}", cell.label());
    let width = columns(cfg.kind).len();
    let mut row = vec![String::new(); width];
    row[0] = cell.m.to_string();
    if cfg.kind != StudyKind::IdentitySuite {
        row[1] = num(cell.g);
        row[2] = cell.alpha.map_or_else(String::new, num);
    }
    let status = format!("failed: {}", sanitize(&error));
    let row = with_provenance(row, &status, cfg.n, cfg.r_max, cfg);
    CellOutcome { cell, rows: vec![row], checks: Vec::new(), notes: Vec::new(), error: Some(error) }
}

/// Worker count: `CSS_LAB_THREADS` overrides the configuration.
pub fn thread_count(cfg: &StudyConfig) -> CliResult<Option<usize>> {
    match std::env::var("CSS_LAB_THREADS") {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("CSS_LAB_THREADS must be a positive integer, got `{raw}`"))),
        },
        Err(_) => Ok(cfg.threads),
    }
}

fn csv_line(fields: &[String]) -> String {
    fields.join(",") + "\n"
}

/// Runs every cell and writes `summary.csv` and `report.txt` into the
/// configured output directory.
pub fn run_study(cfg: &StudyConfig) -> CliResult<StudyReport> {
    cfg.validate()?;
    let out = cfg.out.clone().ok_or_else(|| CliError::Config("no output directory (set `out` or pass --out)".into()))?;
    let cell_dir = out.join("cells");
    fs::create_dir_all(&cell_dir)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cfg)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let plan = cells(cfg);
    log::info!("{} study: {} cells on {} threads", cfg.kind, plan.len(), pool.current_num_threads());

    let outcomes: Vec<CliResult<CellOutcome>> = pool.install(|| {
        plan.par_iter()
            .map(|&cell| {
                let outcome = run_cell(cell, cfg, &cell_dir);
                let body: String = outcome.rows.iter().map(|r| csv_line(r)).collect();
                fs::write(cell_dir.join(format!("cell_{:03}.csv", cell.index)), body)?;
                Ok(outcome)
            })
            .collect()
    });
    let outcomes = outcomes.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut summary = String::new();
    let _ = writeln!(summary, "# study={}", cfg.kind);
    let _ = writeln!(summary, "# seed={}", cfg.seed);
    let _ = writeln!(summary, "# version={VERSION}");
    let _ = writeln!(summary, "# created_unix={}", unix_time());
    for line in cfg.to_text().lines().filter(|l| !l.starts_with("out=") && !l.starts_with("threads=")) {
        let _ = writeln!(summary, "# config {line}");
    }
    let mut header: Vec<String> = columns(cfg.kind).iter().map(|s| s.to_string()).collect();
    header.push("status".into());
    header.extend(PROVENANCE.iter().map(|s| s.to_string()));
    summary.push_str(&csv_line(&header));
    for cell in &plan {
        summary.push_str(&fs::read_to_string(cell_dir.join(format!("cell_{:03}.csv", cell.index)))?);
    }
    let summary_path = out.join("summary.csv");
    fs::write(&summary_path, summary)?;

    let report = StudyReport { kind: cfg.kind, cells: outcomes, summary_path, report_path: out.join("report.txt") };
    fs::write(&report.report_path, render_report(cfg, &report))?;
    Ok(report)
}

fn unix_time() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn render_report(cfg: &StudyConfig, report: &StudyReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "css-lab {VERSION}: {} study", cfg.kind);
    let _ = writeln!(s, "grid n={} r_max={}, dt={}, seed={}", cfg.n, cfg.r_max, cfg.dt, cfg.seed);
    let _ = writeln!(s);
    for c in &report.cells {
        let verdict = if c.failed() { "FAILED" } else { "ok" };
        let _ = writeln!(s, "[cell {:03}] {}: {verdict}", c.cell.index, c.cell.label());
        if let Some(e) = &c.error {
            let _ = writeln!(s, "    error: {e}");
        }
        for check in &c.checks {
            let mark = if check.pass() { "pass" } else { "FAIL" };
            let _ = writeln!(s, "    {mark}  {}: {:.3e} (required {})", check.name, check.measured, check.bound.describe());
        }
        for note in &c.notes {
            let _ = writeln!(s, "    note: {note}");
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{} of {} cells passed every check", report.cells.len() - report.failed_cells(), report.cells.len());
    s
}
