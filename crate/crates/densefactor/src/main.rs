//! Experiment runner: generate instances, run the finite-size solvers and the
//! macroscopic recursion, solve equations of state, trace phase diagrams, and
//! compare the finite-size and macroscopic layers step by step.

mod config;

use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use clap::Parser;

use densefactor::hypergraph::sample_mixed;
use densefactor::instance::{generate_instance, Instance};
use densefactor::mp_engine::{run_mp_full, MpRun};
use densefactor::replica::{
    critical_line, paramagnet_stability, solve_eos, spinodal, trace_phase_diagram,
};
use densefactor::state_evolution::run_se;
use densefactor::trajectory::{
    average_trajectories, sig12, write_averaged_csv, AveragedRecord, Trajectory,
};
use densefactor::{Error, Result};

use config::{CommandKind, ExperimentConfig, Settings};

/// Bayes-optimal tensor factorization from sparse p-plet observations:
/// message passing, state evolution, and phase-diagram analytics.
#[derive(Debug, Parser)]
#[command(name = "densefactor", disable_help_subcommand = true)]
struct Cli {
    /// generate | run-rbp | run-gamp | run-se | solve-eos | phase-diagram | compare
    command: Option<String>,
    /// Configuration file (`section.key = value` lines); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker-thread count (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Base seed; instance k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $DENSEFACTOR_OUT or the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    /// Observations per variable divided by the vector dimension M.
    #[arg(long)]
    alpha: Option<f64>,
    /// Signal-to-noise ratio.
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of variables.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Vector dimension per variable.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Interaction order (variables per observation).
    #[arg(long)]
    p: Option<usize>,
    /// Additive-channel noise standard deviation.
    #[arg(long)]
    delta: Option<f64>,
    /// ising | gaussian
    #[arg(long)]
    prior: Option<String>,
    /// additive | sign
    #[arg(long)]
    channel: Option<String>,
    /// deterministic | rademacher | gaussian
    #[arg(long)]
    spreading: Option<String>,
    /// informative | uninformative | truly-random | sign-informative
    #[arg(long)]
    scheme: Option<String>,
    /// Initial overlap parameter for the non-informative schemes.
    #[arg(long = "init-a")]
    init_a: Option<f64>,
    /// rbp | gamp (for compare).
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long = "max-t")]
    max_t: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long = "alpha-min")]
    alpha_min: Option<f64>,
    #[arg(long = "alpha-max")]
    alpha_max: Option<f64>,
    #[arg(long = "alpha-steps")]
    alpha_steps: Option<usize>,
    #[arg(long = "lambda-min")]
    lambda_min: Option<f64>,
    #[arg(long = "lambda-max")]
    lambda_max: Option<f64>,
    #[arg(long = "lambda-steps")]
    lambda_steps: Option<usize>,
}

fn main() {
    if let Err(e) = real_main() {
        // Machine-readable single error line on stderr.
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn build_config(cli: Cli) -> Result<ExperimentConfig> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)?;
        s.parse_file_text(&text)?;
    }
    // Flag overrides, routed through the same key table as the file format.
    let overrides: [(&str, Option<String>); 24] = [
        ("run.seed", cli.seed.map(|v| v.to_string())),
        ("run.jobs", cli.jobs.map(|v| v.to_string())),
        ("run.instances", cli.instances.map(|v| v.to_string())),
        ("run.out", cli.out.map(|v| v.display().to_string())),
        ("model.family", cli.family),
        ("model.alpha", cli.alpha.map(|v| v.to_string())),
        ("model.lambda", cli.lambda.map(|v| v.to_string())),
        ("model.n", cli.n.map(|v| v.to_string())),
        ("model.m", cli.m.map(|v| v.to_string())),
        ("model.p", cli.p.map(|v| v.to_string())),
        ("model.delta", cli.delta.map(|v| v.to_string())),
        ("model.prior", cli.prior),
        ("model.channel", cli.channel),
        ("model.spreading", cli.spreading),
        ("algo.scheme", cli.scheme),
        ("algo.a", cli.init_a.map(|v| v.to_string())),
        ("algo.algorithm", cli.algorithm),
        ("algo.damping", cli.damping.map(|v| v.to_string())),
        ("algo.max_t", cli.max_t.map(|v| v.to_string())),
        ("algo.tol", cli.tol.map(|v| v.to_string())),
        ("phase.alpha_min", cli.alpha_min.map(|v| v.to_string())),
        ("phase.alpha_max", cli.alpha_max.map(|v| v.to_string())),
        ("phase.alpha_steps", cli.alpha_steps.map(|v| v.to_string())),
        ("phase.lambda_min", cli.lambda_min.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            s.apply(key, &v)?;
        }
    }
    if let Some(v) = cli.lambda_max {
        s.apply("phase.lambda_max", &v.to_string())?;
    }
    if let Some(v) = cli.lambda_steps {
        s.apply("phase.lambda_steps", &v.to_string())?;
    }
    if let Some(cmd) = &cli.command {
        s.command = Some(CommandKind::parse(cmd)?);
    }
    s.finalize()
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = build_config(cli)?;

    #[cfg(feature = "parallel")]
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }

    fs::create_dir_all(&cfg.out)?;
    match cfg.command {
        CommandKind::Generate => cmd_generate(&cfg),
        CommandKind::RunRbp | CommandKind::RunGamp => cmd_run_mp(&cfg),
        CommandKind::RunSe => cmd_run_se(&cfg),
        CommandKind::SolveEos => cmd_solve_eos(&cfg),
        CommandKind::PhaseDiagram => cmd_phase_diagram(&cfg),
        CommandKind::Compare => cmd_compare(&cfg),
    }
}

fn make_instance(cfg: &ExperimentConfig, k: usize) -> Result<Instance> {
    let seed = cfg.seed + k as u64;
    let graph = sample_mixed(cfg.n, cfg.m, &cfg.family.species(cfg.alpha), seed)?;
    generate_instance(graph, cfg.m, cfg.lambda, cfg.prior, cfg.channel, cfg.spreading, seed)
}

fn run_instances(cfg: &ExperimentConfig) -> Result<Vec<MpRun>> {
    let one = |k: usize| -> Result<MpRun> {
        let instance = make_instance(cfg, k)?;
        run_mp_full(cfg.algorithm, &instance, cfg.scheme, cfg.damping, cfg.max_t, cfg.tol)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..cfg.instances).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    (0..cfg.instances).map(one).collect()
}

/// Open an output file for truncating write.
fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(Error::from)
}

fn write_preamble<W: IoWrite>(w: &mut W, kv: &[(String, String)]) -> Result<()> {
    for (k, v) in kv {
        writeln!(w, "# {k} = {v}")?;
    }
    Ok(())
}

fn cmd_generate(cfg: &ExperimentConfig) -> Result<()> {
    for k in 0..cfg.instances {
        let instance = make_instance(cfg, k)?;
        let path = cfg.out.join(format!("instance_{}.json", cfg.seed + k as u64));
        instance.write_json(create(&path)?)?;
        println!("wrote {}", path.display());
    }
    println!(
        "generated {} instance(s): N = {}, M = {}, edges = {}",
        cfg.instances,
        cfg.n,
        cfg.m,
        cfg.family
            .species(cfg.alpha)
            .iter()
            .map(|&(p, a)| cfg.n * ((a * cfg.m as f64).round() as usize) / p)
            .sum::<usize>()
    );
    Ok(())
}

fn report_batch(cfg: &ExperimentConfig, trajectories: &[Trajectory], rows: &[AveragedRecord]) {
    let converged = trajectories.iter().filter(|t| t.converged).count();
    println!("converged {}/{}", converged, trajectories.len());
    for (k, t) in trajectories.iter().enumerate() {
        if t.diverged {
            println!("instance {} (seed {}) diverged at step {}", k, cfg.seed + k as u64, t.steps);
        }
    }
    if let Some(last) = rows.last() {
        println!(
            "final averaged (m, q, Q) = ({}, {}, {}) over {} instance(s) at t = {}",
            sig12(last.m),
            sig12(last.q),
            sig12(last.big_q),
            last.count,
            last.t
        );
    }
}

fn cmd_run_mp(cfg: &ExperimentConfig) -> Result<()> {
    let runs = run_instances(cfg)?;
    let trajectories: Vec<Trajectory> = runs.into_iter().map(|r| r.trajectory).collect();
    let tag = cfg.command.name().trim_start_matches("run-").to_string();
    let preamble = cfg.preamble();
    for (k, t) in trajectories.iter().enumerate() {
        let seed = cfg.seed + k as u64;
        let mut kv = preamble.clone();
        kv.push(("instance_seed".into(), seed.to_string()));
        let path = cfg.out.join(format!("{tag}_{seed}.csv"));
        t.write_csv(create(&path)?, &kv)?;
        println!("wrote {}", path.display());
    }
    let rows = average_trajectories(&trajectories);
    let avg_path = cfg.out.join(format!("{tag}_avg.csv"));
    write_averaged_csv(&rows, create(&avg_path)?, &preamble)?;
    println!("wrote {}", avg_path.display());
    report_batch(cfg, &trajectories, &rows);
    Ok(())
}

fn cmd_run_se(cfg: &ExperimentConfig) -> Result<()> {
    let lambda = cfg.lambda_effective()?;
    let traj = run_se(cfg.se_initial(), &cfg.family, cfg.alpha, lambda, cfg.max_t, cfg.tol)?;
    let mut kv = cfg.preamble();
    kv.push(("lambda_effective".into(), format!("{lambda}")));
    let path = cfg.out.join("se.csv");
    traj.write_csv(create(&path)?, &kv)?;
    println!("wrote {}", path.display());
    let last = traj.last().expect("at least the initial record");
    if traj.diverged {
        println!("diverged at step {}", traj.steps);
    } else {
        println!(
            "{} after {} step(s): (m, q, Q) = ({}, {}, {})",
            if traj.converged { "converged" } else { "stopped" },
            traj.steps,
            sig12(last.m),
            sig12(last.q),
            sig12(last.big_q)
        );
    }
    Ok(())
}

fn cmd_solve_eos(cfg: &ExperimentConfig) -> Result<()> {
    let lambda = cfg.lambda_effective()?;
    let branches = solve_eos(&cfg.family, cfg.alpha, lambda)?;
    let (para_stable, lambda_star) = paramagnet_stability(&cfg.family, cfg.alpha, lambda)?;
    let lambda_d = spinodal(&cfg.family, cfg.alpha)?;
    let lambda_c = critical_line(&cfg.family, cfg.alpha)?;

    let path = cfg.out.join("eos.csv");
    let mut w = create(&path)?;
    let mut kv = cfg.preamble();
    kv.push(("lambda_effective".into(), format!("{lambda}")));
    write_preamble(&mut w, &kv)?;
    writeln!(w, "branch,m,rel_free_energy,dominant")?;
    for (i, b) in branches.solutions.iter().enumerate() {
        writeln!(
            w,
            "{:?},{},{},{}",
            b.kind,
            sig12(b.m),
            sig12(b.free_energy),
            (i == branches.dominant) as u8
        )?;
    }
    println!("wrote {}", path.display());

    for (i, b) in branches.solutions.iter().enumerate() {
        println!(
            "branch {:?}: m = {}, f − f_para = {}{}",
            b.kind,
            sig12(b.m),
            sig12(b.free_energy),
            if i == branches.dominant { "  [dominant]" } else { "" }
        );
    }
    println!("paramagnet locally {}", if para_stable { "stable" } else { "unstable" });
    let show = |name: &str, v: Option<f64>| match v {
        Some(x) => println!("{name} = {}", sig12(x)),
        None => println!("{name}: none"),
    };
    show("lambda_star", lambda_star);
    show("lambda_d", lambda_d);
    show("lambda_c", lambda_c);
    Ok(())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn cmd_phase_diagram(cfg: &ExperimentConfig) -> Result<()> {
    let alphas = linspace(cfg.alpha_grid.0, cfg.alpha_grid.1, cfg.alpha_grid.2);
    let lambdas = linspace(cfg.lambda_grid.0, cfg.lambda_grid.1, cfg.lambda_grid.2);
    let diagram = trace_phase_diagram(&cfg.family, &alphas, &lambdas)?;

    let kv = cfg.preamble();
    let points_path = cfg.out.join("phase_points.csv");
    let mut w = create(&points_path)?;
    write_preamble(&mut w, &kv)?;
    diagram.write_points_csv(&mut w)?;
    println!("wrote {}", points_path.display());

    let lines_path = cfg.out.join("phase_lines.csv");
    let mut w = create(&lines_path)?;
    write_preamble(&mut w, &kv)?;
    diagram.write_lines_csv(&mut w)?;
    println!("wrote {}", lines_path.display());

    let magnetized = diagram.points.iter().filter(|p| p.m_high.is_some() || p.m_low.is_some()).count();
    println!(
        "{} grid points ({}×{}); {} with a magnetized branch",
        diagram.points.len(),
        alphas.len(),
        lambdas.len(),
        magnetized
    );
    Ok(())
}

fn cmd_compare(cfg: &ExperimentConfig) -> Result<()> {
    let lambda_se = cfg.lambda_effective()?;
    let se = run_se(cfg.se_initial(), &cfg.family, cfg.alpha, lambda_se, cfg.max_t, cfg.tol)?;
    if se.diverged {
        return Err(Error::Domain(format!(
            "macroscopic recursion diverged at step {}; nothing to compare against",
            se.steps
        )));
    }
    let runs = run_instances(cfg)?;
    let trajectories: Vec<Trajectory> = runs.iter().map(|r| r.trajectory.clone()).collect();
    let rows = average_trajectories(&trajectories);
    // The finite-size magnetization compared against the macroscopic curve is
    // the plane-sign-corrected one: individual μ-planes may lock onto −x*.
    let corrected_avg: Vec<f64> = (0..rows.len())
        .map(|t| {
            let vals: Vec<f64> =
                runs.iter().filter_map(|r| r.corrected_m.get(t)).copied().collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();

    // Once converged the macroscopic recursion sits at its fixed point, so
    // steps past its last record compare against that final value.
    let se_at = |t: usize| *se.records.get(t).unwrap_or_else(|| se.last().unwrap());

    let path = cfg.out.join("compare.csv");
    let mut w = create(&path)?;
    let mut kv = cfg.preamble();
    kv.push(("lambda_effective".into(), format!("{lambda_se}")));
    kv.push(("m_mp_definition".into(), "plane-sign-corrected magnetization".into()));
    write_preamble(&mut w, &kv)?;
    writeln!(w, "t,m_mp,q_mp,m_se,q_se,dev_m,dev_q,count")?;
    let mut max_dev = (0.0f64, 0usize);
    for (r, &m_mp) in rows.iter().zip(&corrected_avg) {
        let s = se_at(r.t);
        let dev_m = (m_mp - s.m).abs();
        let dev_q = (r.q - s.q).abs();
        if dev_m > max_dev.0 {
            max_dev = (dev_m, r.t);
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.t,
            sig12(m_mp),
            sig12(r.q),
            sig12(s.m),
            sig12(s.q),
            sig12(dev_m),
            sig12(dev_q),
            r.count
        )?;
    }
    println!("wrote {}", path.display());
    report_batch(cfg, &trajectories, &rows);
    println!("max |m_mp − m_se| = {} at t = {}", sig12(max_dev.0), max_dev.1);
    Ok(())
}
