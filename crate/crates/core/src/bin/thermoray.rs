//! Experiment driver: parses a JSON config, runs one experiment family and
//! writes CSV/JSON artifacts. Exit codes: 0 success, 1 config error, 2 scene
//! rejected (non-convex or trapping), 3 numerical failure.

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::path::{Path, PathBuf};

use thermoray::config::ExperimentConfig;
use thermoray::error::Error;
use thermoray::fiber::{
    carleman_check, energy_identity, identity_suite, random_band_limited, star_curvature_report,
    support_bump, FiberGrid,
};
use thermoray::flow::{influx_point, nontrapping_guard, scattering_relation, BoundaryFan};
use thermoray::inversion::{assemble_forward, kernel_analysis, rigidity_experiment, BasisSpec};
use thermoray::transport::{
    kernel_element, parallel_transport, ray_transform, scattering_data_map, SymmetricTensorField,
};

#[derive(Parser)]
#[command(name = "thermoray", version, about = "Thermostat flow and ray transform experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CommandKind {
    Trace,
    Scatter,
    Transport,
    Transform,
    Verify,
    Kernel,
    Rigidity,
}

#[derive(Subcommand)]
enum Command {
    /// Exit times and the scattering relation over the boundary fan (CSV).
    Trace(RunArgs),
    /// Non-abelian scattering data over the fan (CSV + JSON summary).
    Scatter(RunArgs),
    /// Parallel transport samples along a single ray (CSV).
    Transport(RunArgs),
    /// Ray transform of a seeded random tensor source over the fan.
    Transform(RunArgs),
    /// Operator identity suite, energy identity and Carleman margins.
    Verify(RunArgs),
    /// Forward-map assembly and kernel analysis.
    Kernel(RunArgs),
    /// Gauge rigidity experiment with a seeded boundary-fixed gauge.
    Rigidity(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Rayon thread count (0 = automatic).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::NonConvex { .. } | Error::TrappedOrbit { .. } | Error::CurvatureNotNegative { .. } => 2,
        _ => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Trace(a) => (CommandKind::Trace, a),
        Command::Scatter(a) => (CommandKind::Scatter, a),
        Command::Transport(a) => (CommandKind::Transport, a),
        Command::Transform(a) => (CommandKind::Transform, a),
        Command::Verify(a) => (CommandKind::Verify, a),
        Command::Kernel(a) => (CommandKind::Kernel, a),
        Command::Rigidity(a) => (CommandKind::Rigidity, a),
    };
    if args.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global();
    }
    match run(kind, args) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_report(
    out: &Path,
    name: &str,
    cfg: &ExperimentConfig,
    results: serde_json::Value,
) -> Result<(), Error> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let report = json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "results": results,
        "metadata": {"timestamp": stamp},
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&out.join(format!("{name}.json")), &text)
}

fn run(kind: CommandKind, args: &RunArgs) -> Result<(), Error> {
    let cfg = load_config(args)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", args.out.display())))?;
    let scene = cfg.scene.clone();
    let opts = cfg.ode_options();
    let fan = BoundaryFan::new(&scene, cfg.fan.n_s, cfg.fan.n_alpha);
    // boundary experiments require a strictly convex non-trapping scene
    nontrapping_guard(&scene, &fan, &opts)?;
    let out = args.out.as_path();

    match kind {
        CommandKind::Trace => {
            let mut csv = String::from("phi,alpha,tau,exit_phi,exit_theta\n");
            let mut taus = Vec::new();
            for e in &fan.entries {
                let (exit, tau) = scattering_relation(&scene, &e.point, &opts)?;
                let exit_phi = exit.x[1].atan2(exit.x[0]);
                csv.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                    e.phi, e.alpha, tau, exit_phi, exit.theta
                ));
                taus.push(tau);
            }
            write_text(&out.join("trace.csv"), &csv)?;
            let max = taus.iter().cloned().fold(0.0, f64::max);
            let min = taus.iter().cloned().fold(f64::INFINITY, f64::min);
            write_report(out, "trace", &cfg, json!({"rays": taus.len(), "tau_max": max, "tau_min": min}))
        }
        CommandKind::Scatter => {
            let pair = cfg.build_pair()?;
            let data = scattering_data_map(&scene, &pair, &fan, &opts)?;
            let mut csv = String::from("phi,alpha,c_norm,unitary_deviation\n");
            let mut worst_dev: f64 = 0.0;
            for (e, (_, c)) in fan.entries.iter().zip(&data) {
                let dev = (c.adjoint() * c - thermoray::cmat_id(pair.n)).norm();
                worst_dev = worst_dev.max(dev);
                csv.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e}\n",
                    e.phi, e.alpha, c.norm(), dev
                ));
            }
            write_text(&out.join("scatter.csv"), &csv)?;
            write_report(
                out,
                "scatter",
                &cfg,
                json!({
                    "rays": data.len(),
                    "unitary_pair": pair.unitary_a && pair.skew_hermitian_phi,
                    "max_unitary_deviation": worst_dev,
                }),
            )
        }
        CommandKind::Transport => {
            let pair = cfg.build_pair()?;
            let entry = influx_point(&scene, cfg.ray.phi, cfg.ray.alpha);
            let res = parallel_transport(&scene, &pair, entry, &opts)?;
            let mut csv = String::from("t,x,y,theta,u_norm,w_norm\n");
            for (t, p, u, w) in &res.samples {
                csv.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                    t, p.x[0], p.x[1], p.theta, u.norm(), w.norm()
                ));
            }
            write_text(&out.join("transport.csv"), &csv)?;
            write_report(
                out,
                "transport",
                &cfg,
                json!({
                    "tau": res.tau,
                    "c_norm": res.c.norm(),
                    "conditioning_warning": res.conditioning_warning,
                }),
            )
        }
        CommandKind::Transform => {
            let pair = cfg.build_pair()?;
            let mut rng = rand_seed(cfg.seed);
            let p = SymmetricTensorField::random(
                cfg.kernel.m.saturating_sub(1),
                pair.n,
                2,
                1.0,
                scene.radius,
                true,
                &mut rng,
            );
            let source = kernel_element(&scene, &pair, p, 1e-9)?;
            let vals = ray_transform(&scene, &pair, &source, &fan, &opts)?;
            let mut csv = String::from("phi,alpha,transform_norm\n");
            let mut worst: f64 = 0.0;
            for (e, v) in fan.entries.iter().zip(&vals) {
                worst = worst.max(v.norm());
                csv.push_str(&format!("{:.12e},{:.12e},{:.12e}\n", e.phi, e.alpha, v.norm()));
            }
            write_text(&out.join("transform.csv"), &csv)?;
            write_report(
                out,
                "transform",
                &cfg,
                json!({"rays": vals.len(), "max_norm": worst, "source": "natural kernel element"}),
            )
        }
        CommandKind::Verify => {
            let pair = cfg.build_pair()?;
            let reports = identity_suite(&scene, &pair, &cfg.verify.resolutions, cfg.seed)?;
            let tol = cfg.verify.tolerance;
            let identities: Vec<serde_json::Value> = reports
                .iter()
                .map(|r| {
                    json!({
                        "identity": r.name,
                        "residuals": r.residuals,
                        "order": r.order,
                        "pass": r.finest_residual() < tol && r.order_at_least(2.0),
                    })
                })
                .collect();
            // energy identity and Carleman margin on the configured grid
            let (cells, ntheta) = *cfg.verify.resolutions.last().unwrap();
            let grid = FiberGrid::new(scene.clone(), cells, ntheta)?;
            let u = random_band_limited(&grid, pair.n, 2, 0.9 * scene.radius, 0, cfg.seed);
            let rho = 0.9 * scene.radius;
            let u2 = thermoray::fiber::BundleFunction::pure_mode(&grid, pair.n, 2, |c, x| {
                num_complex::Complex64::new(1.0 + 0.3 * c as f64 + x[0], 0.5 * x[1])
                    * support_bump(x, rho)
            });
            let energy = energy_identity(&u2, 2);
            let curv = scene.curvature_report(64);
            let carleman = curv
                .kappa
                .map(|kappa| carleman_check(&u, 1.0, 1, kappa).map(|c| c.margin))
                .transpose()?;
            // curvature cross-check for unitary pairs
            let star = if pair.unitary_a {
                Some(star_curvature_report(&scene, &pair, curv.kappa.unwrap_or(0.0), 1, 24)?)
            } else {
                None
            };
            let mut csv = String::from("identity,level,cells,ntheta,residual\n");
            for r in &reports {
                for (level, (c, t, res)) in r.residuals.iter().enumerate() {
                    csv.push_str(&format!("{},{},{},{},{:.12e}\n", r.name, level, c, t, res));
                }
            }
            write_text(&out.join("verify.csv"), &csv)?;
            write_report(
                out,
                "verify",
                &cfg,
                json!({
                    "identities": identities,
                    "energy_identity_residual": energy.residual,
                    "carleman_margin": carleman,
                    "kappa": curv.kappa,
                    "star_curvature_route_discrepancy": star.as_ref().map(|s| s.route_discrepancy),
                }),
            )
        }
        CommandKind::Kernel => {
            let pair = cfg.build_pair()?;
            let spec = BasisSpec { m: cfg.kernel.m, d: cfg.kernel.d, n: pair.n };
            let map = assemble_forward(&scene, &pair, &spec, &fan, &opts)?;
            let report = kernel_analysis(&scene, &pair, &map)?;
            let mut csv = String::from("index,singular_value\n");
            for (i, s) in report.singular_values.iter().enumerate() {
                csv.push_str(&format!("{i},{s:.12e}\n"));
            }
            write_text(&out.join("kernel.csv"), &csv)?;
            write_report(
                out,
                "kernel",
                &cfg,
                serde_json::to_value(&report).expect("report serializes"),
            )
        }
        CommandKind::Rigidity => {
            let pair = cfg.build_pair()?;
            let gauge = cfg.build_gauge();
            let report = rigidity_experiment(&scene, &pair, &gauge, &fan, &opts)?;
            write_report(
                out,
                "rigidity",
                &cfg,
                serde_json::to_value(&report).expect("report serializes"),
            )
        }
    }
}

fn rand_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
