//! `ionherald`: batch pipelines for the heralded-absorption simulator.
//!
//! Stages hand off through files: `simulate` writes an event file that `g2`
//! correlates, `scan` writes a fringe scan that `fringe` fits, and `tomo-sim`
//! writes a counts table that `tomo` reconstructs. `reproduce` runs every
//! preset end to end and writes a verdict report.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ionherald::correlate::{extract_with, histogram};
use ionherald::exec::derive_seed;
use ionherald::fringes::{fit_fringe, write_plot_data, FringeScan};
use ionherald::pipeline::{
    analyze_tomography, reproduce_paper, simulate_scan, simulate_tomography, HistogramParams, ReproduceConfig,
};
use ionherald::presets::{self, BasisPreset, Preset, TomographyPreset, PRESET_NAMES};
use ionherald::sim::{channel_times, read_events, simulate_run, write_events};
use ionherald::tomography::{write_density_matrix, BootstrapConfig, CountsTable};

use config::{PipelineConfig, CONFIG_HELP};

const DEFAULT_MASTER_SEED: u64 = 20_110_401;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(ionherald::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<ionherald::Error> for CliError {
    fn from(e: ionherald::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(ionherald::Error::Convergence { .. }) => 4,
            CliError::Core(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ionherald", version, about = "Heralded single-photon absorption pipelines", after_help = CONFIG_HELP)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Histogram bin width in microseconds.
    #[arg(long = "bin-us", global = true, value_name = "REAL")]
    bin_us: Option<f64>,
    /// Histogram half-width in bins.
    #[arg(long = "window-bins", global = true, value_name = "INT")]
    window_bins: Option<u32>,
    /// Fringe fit phase in degrees (the fringe minimum).
    #[arg(long, global = true, value_name = "REAL", allow_negative_numbers = true)]
    theta0: Option<f64>,
    /// Preset name: paper-rl, paper-hv, paper-da or paper-tomo.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one run of a basis preset and write its event file.
    Simulate,
    /// Correlate an event file into a lag histogram and a coincidence record.
    G2 { events: PathBuf },
    /// Simulate every angle of a basis preset and write the fringe scan.
    Scan,
    /// Fit a fringe scan and write the fit record and plot data.
    Fringe { scan: PathBuf },
    /// Simulate the 16 tomography settings and write the counts table.
    TomoSim,
    /// Reconstruct a counts table and write density matrices and metrics.
    Tomo { counts: PathBuf },
    /// Run every preset over an ensemble and write the comparison report.
    Reproduce,
    /// List the built-in presets.
    Presets,
}

struct Context {
    cli: Cli,
    cfg: PipelineConfig,
}

impl Context {
    fn seed(&self) -> u64 {
        self.cli.seed.or(self.cfg.master_seed).unwrap_or(DEFAULT_MASTER_SEED)
    }

    fn out(&self) -> CliResult<&Path> {
        self.cli
            .out
            .as_deref()
            .ok_or_else(|| CliError::Config("--out is required for this command".into()))
    }

    fn histogram(&self) -> CliResult<HistogramParams> {
        let mut hp = self.cfg.histogram();
        if let Some(b) = self.cli.bin_us {
            if !(b.is_finite() && b > 0.0) {
                return Err(CliError::Config(format!("--bin-us must be > 0, got {b}")));
            }
            hp.bin_width_us = b;
        }
        if let Some(w) = self.cli.window_bins {
            if w == 0 {
                return Err(CliError::Config("--window-bins must be >= 1".into()));
            }
            hp.window_bins = w;
        }
        Ok(hp)
    }

    fn preset_name(&self, default: &str) -> String {
        self.cli
            .preset
            .clone()
            .or_else(|| self.cfg.preset.clone())
            .unwrap_or_else(|| default.to_string())
    }

    fn preset(&self, default: &str) -> CliResult<Preset> {
        let name = self.preset_name(default);
        if !PRESET_NAMES.contains(&name.as_str()) {
            return Err(CliError::Config(format!(
                "preset: unknown preset '{name}' (known: {})",
                PRESET_NAMES.join(", ")
            )));
        }
        Ok(presets::preset(&name)?)
    }

    fn basis_preset(&self) -> CliResult<BasisPreset> {
        match self.preset("paper-rl")? {
            Preset::Basis(p) => self.customize_basis(p),
            Preset::Tomography(p) => Err(CliError::Config(format!(
                "preset: '{}' is a tomography preset; this command needs a basis preset",
                p.name
            ))),
        }
    }

    fn tomography_preset(&self) -> CliResult<TomographyPreset> {
        match self.preset("paper-tomo")? {
            Preset::Tomography(p) => self.customize_tomography(p),
            Preset::Basis(p) => Err(CliError::Config(format!(
                "preset: '{}' is a basis preset; this command needs paper-tomo",
                p.name
            ))),
        }
    }

    fn customize_basis(&self, mut p: BasisPreset) -> CliResult<BasisPreset> {
        p.calibration = self.cfg.calibrate(&p.calibration)?;
        if let Some(a) = &self.cfg.fringe.angles_deg {
            p.angles_deg = a.clone();
        }
        if let Some(d) = self.cfg.fringe.point_duration_s {
            p.point_duration_s = d;
        }
        Ok(p)
    }

    fn customize_tomography(&self, mut p: TomographyPreset) -> CliResult<TomographyPreset> {
        p.calibration = self.cfg.calibrate(&p.calibration)?;
        if let Some(d) = self.cfg.tomography.setting_duration_s {
            p.setting_duration_s = d;
        }
        Ok(p)
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> CliResult<()>) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_simulate(ctx: &Context) -> CliResult<()> {
    let out = ctx.out()?;
    let p = ctx.basis_preset()?;
    let angle = match ctx.cfg.run.hwp_angle_deg {
        Some(a) => a,
        None => p.orthogonal_angle_deg()?,
    };
    let duration = ctx.cfg.run.duration_s.unwrap_or(p.point_duration_s);
    let m = p.manifest(derive_seed(ctx.seed(), "simulate", 0), angle, duration);
    m.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let events = simulate_run(&m)?;
    write_events(out, &m, &events)?;
    let (apd, onsets) = channel_times(&events);
    println!("preset={} hwp_angle_deg={angle} duration_s={duration}", p.name);
    println!("trials={} apd={} onsets={}", m.trials(), apd.len(), onsets.len());
    Ok(())
}

fn cmd_g2(ctx: &Context, events: &Path) -> CliResult<()> {
    let out = ctx.out()?;
    let hp = ctx.histogram()?;
    let file = read_events(events)?;
    let (apd, onsets) = channel_times(&file.events);
    let mut h = histogram(&apd, &onsets, hp.bin_width_us, hp.window_bins)?;
    h.duration_s = file.manifest.duration_s;
    let r = extract_with(&h, hp.background)?;
    fs::create_dir_all(out)?;
    write_file(&out.join("histogram.tsv"), |w| Ok(h.write_to(w)?))?;
    let record = format!(
        "bin_width_us={}\nwindow_bins={}\nduration_s={}\ntotal_apd={}\ntotal_onsets={}\n{}",
        hp.bin_width_us,
        hp.window_bins,
        h.duration_s,
        h.total_apd,
        h.total_onsets,
        r.to_key_values()
    );
    write_file(&out.join("coincidence.txt"), |w| Ok(w.write_all(record.as_bytes())?))?;
    print!("{record}");
    Ok(())
}

fn cmd_scan(ctx: &Context) -> CliResult<()> {
    let out = ctx.out()?;
    let p = ctx.basis_preset()?;
    let hp = ctx.histogram()?;
    let scan = simulate_scan(&p, ctx.seed(), &hp, ctx.cfg.execution())?;
    // The predicted minimum is undefined when the fringe vanishes.
    let theta0 = ctx.cfg.fringe.theta0_deg.or_else(|| p.theta0_deg().ok());
    write_file(out, |w| Ok(scan.write_to(w, theta0)?))?;
    println!("preset={} points={}", p.name, scan.points.len());
    for pt in &scan.points {
        println!(
            "hwp_angle_deg={} coincidences={} background={}",
            pt.hwp_angle_deg, pt.coincidences, pt.background
        );
    }
    Ok(())
}

fn cmd_fringe(ctx: &Context, path: &Path) -> CliResult<()> {
    let out = ctx.out()?;
    let (scan, header_theta0) = FringeScan::read_from(BufReader::new(File::open(path)?))?;
    let theta0 = match ctx.cli.theta0.or(ctx.cfg.fringe.theta0_deg).or(header_theta0) {
        Some(t) => t,
        None => BasisPreset::new(scan.basis)?.theta0_deg()?,
    };
    if !theta0.is_finite() {
        return Err(CliError::Config(format!("--theta0 must be finite, got {theta0}")));
    }
    let fit = fit_fringe(&scan, theta0)?;
    fs::create_dir_all(out)?;
    let record = format!("basis={}\n{}", scan.basis, fit.to_key_values());
    write_file(&out.join("fit.txt"), |w| Ok(w.write_all(record.as_bytes())?))?;
    write_file(&out.join("plot.tsv"), |w| Ok(write_plot_data(w, &scan, &fit)?))?;
    print!("{record}");
    Ok(())
}

fn cmd_tomo_sim(ctx: &Context) -> CliResult<()> {
    let out = ctx.out()?;
    let p = ctx.tomography_preset()?;
    let hp = ctx.histogram()?;
    let table = simulate_tomography(&p, ctx.seed(), &hp, ctx.cfg.execution())?;
    write_file(out, |w| Ok(table.write_to(w)?))?;
    println!("preset={} settings={} total={}", p.name, table.rows.len(), table.total());
    Ok(())
}

fn cmd_tomo(ctx: &Context, path: &Path) -> CliResult<()> {
    let out = ctx.out()?;
    let table = CountsTable::read_from(BufReader::new(File::open(path)?))?;
    let replicas = ctx.cfg.tomography.bootstrap_replicas.unwrap_or(500);
    let boot = BootstrapConfig {
        replicas,
        seed: derive_seed(ctx.seed(), "bootstrap", 0),
        execution: ctx.cfg.execution(),
    };
    let a = analyze_tomography(&table, (replicas > 0).then_some(&boot))?;
    fs::create_dir_all(out)?;
    write_file(&out.join("rho.txt"), |w| Ok(write_density_matrix(w, &a.mle.rho)?))?;
    write_file(&out.join("rho_linear.txt"), |w| Ok(write_density_matrix(w, &a.linear)?))?;
    let m = &a.metrics;
    let mut record = format!(
        "fidelity={}\nconcurrence={}\ntangle={}\n",
        m.fidelity_singlet, m.concurrence, m.tangle
    );
    if let Some(e) = m.errors {
        record += &format!(
            "fidelity_err={}\nconcurrence_err={}\ntangle_err={}\nbootstrap_replicas={replicas}\n",
            e.fidelity, e.concurrence, e.tangle
        );
    }
    record += &format!(
        "mle_flux={}\nmle_nll={}\nmle_iterations={}\n",
        a.mle.flux, a.mle.nll, a.mle.iterations
    );
    write_file(&out.join("metrics.txt"), |w| Ok(w.write_all(record.as_bytes())?))?;
    print!("{record}");
    Ok(())
}

fn cmd_reproduce(ctx: &Context) -> CliResult<()> {
    let out = ctx.out()?;
    let mut rc = ReproduceConfig::paper(ctx.seed())?;
    rc.histogram = ctx.histogram()?;
    rc.execution = ctx.cfg.execution();
    if let Some(n) = ctx.cfg.reproduce.ensemble {
        rc.ensemble = n;
    }
    if let Some(n) = ctx.cfg.reproduce.bootstrap_replicas {
        rc.bootstrap_replicas = n;
    }
    rc.bases = rc
        .bases
        .into_iter()
        .map(|p| ctx.customize_basis(p))
        .collect::<CliResult<_>>()?;
    rc.tomography = ctx.customize_tomography(rc.tomography)?;
    let report = reproduce_paper(&rc);
    fs::create_dir_all(out)?;
    let table = report.to_table();
    write_file(&out.join("report.txt"), |w| Ok(w.write_all(table.as_bytes())?))?;
    write_file(&out.join("report.kv"), |w| Ok(w.write_all(report.to_key_values().as_bytes())?))?;
    print!("{table}");
    Ok(())
}

fn cmd_presets() -> CliResult<()> {
    for name in PRESET_NAMES {
        match presets::preset(name)? {
            Preset::Basis(p) => println!(
                "{name}\tbasis {}\t{} angles x {} s\tsinglet_weight {:.4}",
                p.target.basis,
                p.angles_deg.len(),
                p.point_duration_s,
                p.calibration.source.singlet_weight
            ),
            Preset::Tomography(p) => println!(
                "{name}\t{} settings x {} s\tsinglet_weight {:.4}",
                p.settings.len(),
                p.setting_duration_s,
                p.calibration.source.singlet_weight
            ),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let ctx = Context { cli, cfg };
    match &ctx.cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::G2 { events } => cmd_g2(&ctx, events),
        Command::Scan => cmd_scan(&ctx),
        Command::Fringe { scan } => cmd_fringe(&ctx, scan),
        Command::TomoSim => cmd_tomo_sim(&ctx),
        Command::Tomo { counts } => cmd_tomo(&ctx, counts),
        Command::Reproduce => cmd_reproduce(&ctx),
        Command::Presets => cmd_presets(),
    }
}

fn main() -> ExitCode {
    // clap exits with code 2 on malformed arguments.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ionherald: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
