use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use qkcm_core::bootstrap::bp_run;
use qkcm_core::environment::{load_environment, min_good_l, save_environment};
use qkcm_core::exact::{build_generator, solve_poisson, spectral, ExactTarget};
use qkcm_core::harness::run_config;
use qkcm_core::kcm::{
    estimate_hitting, estimate_tau0, g_hitting_experiment, path_length_for, BadEvent, HittingSample, Scheme, SimParams,
};
use qkcm_core::percolation::{coarse_grain, easy_site_geometry, good_box_path_truncated, label_clusters, origin_cluster_geometry};
use qkcm_core::{sample_environment, sample_equilibrium, Boundary, EnvParams, Environment, Error, ModelKind, Rect, Result};

#[derive(Parser)]
#[command(name = "qkcm", version, about = "Constrained dynamics and bootstrap percolation in random environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an environment and write it to a file.
    Env(EnvArgs),
    /// Cluster geometry around the origin.
    Geom(GeomArgs),
    /// Bootstrap percolation from one equilibrium field.
    Bp(BpArgs),
    /// Hitting times of the constrained dynamics.
    Kcm(KcmArgs),
    /// Exact hitting time, gap and relaxation bound on a small region.
    Exact(ExactArgs),
    /// Run a q-sweep from a TOML config.
    Sweep { config: PathBuf },
}

#[derive(Args)]
struct EnvArgs {
    #[arg(long, default_value = "fa12")]
    kind: ModelKind,
    #[arg(long)]
    pi: f64,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GeomArgs {
    #[arg(long)]
    env_file: PathBuf,
    /// Box side for threshold environments; defaults to the smallest good side.
    #[arg(long)]
    side: Option<usize>,
    /// Requested good-box path length.
    #[arg(long, default_value_t = 64)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BpArgs {
    #[arg(long)]
    env_file: PathBuf,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    t_max: Option<u64>,
    #[arg(long, default_value = "occupied")]
    boundary: Boundary,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the per-site first-empty steps.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KcmTarget {
    Origin,
    BadEvent,
    GEvent,
}

#[derive(Args)]
struct KcmArgs {
    #[arg(long)]
    env_file: PathBuf,
    #[arg(long)]
    q: f64,
    #[arg(long, default_value_t = 100.0)]
    t_max: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value = "occupied")]
    boundary: Boundary,
    #[arg(long, value_enum, default_value = "origin")]
    target: KcmTarget,
    #[arg(long, default_value = "rejection")]
    scheme: Scheme,
    /// Box side for the bad event; defaults to the smallest good side.
    #[arg(long)]
    side: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write one row per trial.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long)]
    env_file: PathBuf,
    /// `x0,y0,w,h`; defaults to the whole window.
    #[arg(long)]
    region: Option<Rect>,
    #[arg(long)]
    q: f64,
    #[arg(long, default_value = "occupied")]
    boundary: Boundary,
    /// `origin`, `site:x,y`, `any:x,y;x,y` or `all:x,y;x,y`.
    #[arg(long, default_value = "origin")]
    target: ExactTarget,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn auto_side(env: &Environment, side: Option<usize>, seed: u64) -> Result<usize> {
    match side {
        Some(l) => Ok(l),
        None => min_good_l(env.easy_fraction().max(1e-9), 0.0, 20_000, seed),
    }
}

fn env_cmd(a: EnvArgs) -> Result<Value> {
    let env = sample_environment(EnvParams::new(a.kind, a.pi, a.width, a.height, a.seed))?;
    save_environment(&env, &a.out)?;
    Ok(json!({
        "path": a.out,
        "kind": env.kind(),
        "width": env.width(),
        "height": env.height(),
        "easy_fraction": env.easy_fraction(),
        "digest": env.digest(),
    }))
}

fn geom_cmd(a: GeomArgs) -> Result<Value> {
    let env = load_environment(&a.env_file)?;
    match env.kind() {
        ModelKind::MixedNeFa1f => {
            let g = easy_site_geometry(&env)?;
            Ok(json!({
                "kind": env.kind(),
                "cluster_sizes": g.cluster_sizes,
                "spanning_size": g.spanning_size,
                "c0": g.geometry.c0,
                "boundary": g.geometry.boundary,
                "t0": g.geometry.t0,
                "diameter": g.geometry.diameter,
                "enclosed": g.geometry.enclosed,
                "path": g.path,
                "loop_len": g.loop_len,
            }))
        }
        ModelKind::MixedFa => {
            let side = auto_side(&env, a.side, a.seed)?;
            let grid = coarse_grain(&env, side)?;
            let labels = label_clusters(&grid.good, grid.dims)?;
            let geometry = origin_cluster_geometry(&grid, &labels).ok();
            let path = good_box_path_truncated(&grid, &labels, a.length).ok();
            Ok(json!({
                "kind": env.kind(),
                "side": side,
                "boxes": grid.dims,
                "cluster_sizes": labels.sizes,
                "spanning_size": labels.spanning_cluster().map(|s| labels.sizes[s as usize]),
                "c0": geometry.as_ref().map(|g| &g.c0),
                "boundary": geometry.as_ref().map(|g| &g.boundary),
                "t0": geometry.as_ref().map(|g| g.t0),
                "diameter": geometry.as_ref().map(|g| g.diameter),
                "enclosed": geometry.as_ref().map(|g| g.enclosed),
                "path": path,
            }))
        }
    }
}

fn bp_cmd(a: BpArgs) -> Result<Value> {
    let env = load_environment(&a.env_file)?;
    let cfg = sample_equilibrium(a.q, env.dims(), a.boundary, a.seed)?;
    let r = bp_run(&env, &cfg, a.t_max.unwrap_or(env.len() as u64))?;
    if let Some(path) = &a.csv {
        let dims = env.dims();
        let mut csv = String::from("x,y,emptied_at\n");
        for (i, t) in r.emptied_at.iter().enumerate() {
            let c = dims.coord(i);
            let t = t.map_or(String::new(), |t| t.to_string());
            csv.push_str(&format!("{},{},{t}\n", c.x, c.y));
        }
        write_file(path, &csv)?;
    }
    Ok(json!({
        "tau0": r.tau0,
        "censored": r.censored(),
        "steps_run": r.steps_run,
        "fixed_point": r.fixed_point,
        "emptied": r.emptied_at.iter().filter(|t| t.is_some()).count(),
    }))
}

fn trial_csv(samples: &[HittingSample]) -> String {
    let mut csv = String::from("trial,tau,censored,rings\n");
    for (t, s) in samples.iter().enumerate() {
        csv.push_str(&format!("{t},{},{},{}\n", s.tau, s.censored, s.rings));
    }
    csv
}

fn kcm_cmd(a: KcmArgs) -> Result<Value> {
    let env = load_environment(&a.env_file)?;
    let params = SimParams::new(a.q, a.t_max, a.seed).with_boundary(a.boundary).with_scheme(a.scheme);
    let mut extra = json!({});
    let (samples, summary) = match a.target {
        KcmTarget::Origin => {
            let e = estimate_tau0(&env, &params, a.trials)?;
            (e.samples, e.summary)
        }
        KcmTarget::BadEvent => {
            let side = auto_side(&env, a.side, a.seed)?;
            let grid = coarse_grain(&env, side)?;
            let labels = label_clusters(&grid.good, grid.dims)?;
            let requested = path_length_for(a.q, side);
            let path = good_box_path_truncated(&grid, &labels, requested)?;
            let watch = BadEvent::new(&env, &grid, &path)?;
            extra = json!({ "side": side, "path_requested": requested, "path_boxes": path.len() });
            let e = estimate_hitting(&env, &params, a.trials, || watch.clone())?;
            (e.samples, e.summary)
        }
        KcmTarget::GEvent => {
            let e = g_hitting_experiment(&env, &params, a.trials)?;
            extra = json!({ "radius": e.radius, "acceptance": e.acceptance, "draws": e.draws });
            (e.samples, e.summary)
        }
    };
    if let Some(path) = &a.csv {
        write_file(path, &trial_csv(&samples))?;
    }
    let mut out = serde_json::to_value(&summary)?;
    if let (Value::Object(o), Value::Object(x)) = (&mut out, extra) {
        o.extend(x);
    }
    Ok(out)
}

fn exact_cmd(a: ExactArgs) -> Result<Value> {
    let env = load_environment(&a.env_file)?;
    let region = a.region.unwrap_or(env.dims().rect());
    let g = build_generator(&env, region, a.q, a.boundary)?;
    let mask = a.target.mask(&env, &g)?;
    let sol = solve_poisson(&g, &mask)?;
    let sp = spectral(&g, &mask)?;
    let (_, classes) = g.components();
    Ok(json!({
        "region": region,
        "states": g.len(),
        "mean_tau": if sol.finite { Some(sol.mean) } else { None },
        "dirichlet": if sol.finite { Some(sol.dirichlet) } else { None },
        "finite": sol.finite,
        "unreachable_states": sol.unreachable.len(),
        "taubar": sp.taubar,
        "gap": sp.gap,
        "ergodic": sp.ergodic,
        "classes": classes,
        "poisson_residual": sol.residual,
        "detailed_balance_residual": g.detailed_balance_residual(),
        "row_sum_residual": g.row_sum_residual(),
    }))
}

fn sweep_cmd(config: PathBuf) -> Result<Value> {
    let b = run_config(config)?;
    Ok(json!({
        "dir": b.dir,
        "raw_csv": b.raw_csv,
        "summary_json": b.summary_json,
        "environment": b.environment,
        "fits": b.results.iter().map(|r| json!({
            "dynamics": r.dynamics,
            "slope": r.fit.as_ref().map(|f| f.slope),
            "ci": r.fit.as_ref().map(|f| f.ci),
            "error": r.fit_error,
        })).collect::<Vec<_>>(),
    }))
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "kind": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    let out = match cli.command {
        Command::Env(a) => env_cmd(a),
        Command::Geom(a) => geom_cmd(a),
        Command::Bp(a) => bp_cmd(a),
        Command::Kcm(a) => kcm_cmd(a),
        Command::Exact(a) => exact_cmd(a),
        Command::Sweep { config } => sweep_cmd(config),
    };
    match out {
        Ok(v) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
