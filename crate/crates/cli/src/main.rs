use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hawkes_dividend::config::RunConfig;
use hawkes_dividend::eval::{compare_table, mc_value, EvalPolicy, EvalSettings};
use hawkes_dividend::hjb::{howard_solve, sensitivity_sweep, Grid, Solution, SolveOptions, SweepParam};
use hawkes_dividend::rl::{train, ActionMode, Algo, PolicyCheckpoint};
use hawkes_dividend::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hawkes-dividend",
    version,
    about = "Optimal dividends and capital injections under Hawkes claims"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed and the evaluation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Howard solve; writes value, regime and barrier CSVs plus a summary.
    Solve,
    /// Policy-gradient training; writes metrics.jsonl and checkpoint.json.
    Train {
        #[arg(long, value_enum, default_value = "actor-critic")]
        algo: AlgoArg,
    },
    /// Monte Carlo value of a policy at the configured states.
    Evaluate {
        #[arg(long, value_enum, default_value = "pde")]
        policy: PolicyArg,
        /// Checkpoint file (default: <output_dir>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sample barriers from the learned policy instead of using the means.
        #[arg(long)]
        stochastic: bool,
    },
    /// PDE, MC under PDE barriers and MC under a learned policy side by side.
    Compare {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// One solve per parameter value; writes a regime map per value.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Reinforce,
    ActorCritic,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Pde,
    Checkpoint,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .ok_or_else(|| Error::Config("--config <file> is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    let out = cfg.resolved_output_dir();
    fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;
    match cli.cmd {
        Cmd::Solve => cmd_solve(&cfg, &out),
        Cmd::Train { algo } => cmd_train(&cfg, &out, algo),
        Cmd::Evaluate {
            policy,
            checkpoint,
            stochastic,
        } => cmd_evaluate(&cfg, &out, policy, checkpoint, stochastic),
        Cmd::Compare { checkpoint } => cmd_compare(&cfg, &out, checkpoint),
        Cmd::Sweep { param, values } => cmd_sweep(&cfg, &out, &param, &values),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn solve(cfg: &RunConfig) -> Result<Solution> {
    let g = Grid::build(&cfg.grid, &cfg.model)?;
    howard_solve(&g, &cfg.model, &SolveOptions::for_params(&cfg.model))
}

fn settings(cfg: &RunConfig) -> EvalSettings {
    EvalSettings {
        h: cfg.train.h,
        horizon_t: cfg.train.horizon_t,
        n_paths: cfg.eval.n_paths,
        seed: cfg.train.seed,
    }
}

fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sol = solve(cfg)?;
    write_with(&out.join("value.csv"), |w| sol.write_value_csv(w))?;
    write_with(&out.join("regime.csv"), |w| sol.write_regime_csv(w))?;
    write_with(&out.join("barriers.csv"), |w| sol.barriers().write_csv(w))?;
    let values: Vec<serde_json::Value> = cfg
        .eval
        .states
        .iter()
        .map(|s| serde_json::json!({"x": s[0], "y": s[1], "V": sol.value_at(s[0], s[1])}))
        .collect();
    let g = &sol.grid;
    let summary = serde_json::json!({
        "V(0,2)": sol.value_at(0.0, 2.0),
        "values": values,
        "dx": g.dx,
        "dy": g.dy,
        "n_x": g.n_x,
        "n_y": g.n_y + 1,
        "x_min": g.x_min(),
        "x_max": g.x_max(),
        "outer_iterations": sol.outer_iterations,
        "policy_changes": sol.policy_changes,
        "total_sweeps": sol.total_sweeps,
    });
    write_with(&out.join("summary.json"), |w| {
        writeln!(w, "{}", serde_json::to_string_pretty(&summary).unwrap())
    })?;
    println!(
        "V(0,2) = {:.6}  ({} outer iterations)",
        sol.value_at(0.0, 2.0),
        sol.outer_iterations
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, algo: AlgoArg) -> Result<()> {
    let algo = match algo {
        AlgoArg::Reinforce => Algo::Reinforce,
        AlgoArg::ActorCritic => Algo::ActorCritic,
    };
    let kappa = if cfg.train.freeze_kappa {
        Some(solve(cfg)?.barriers())
    } else {
        None
    };
    let mpath = out.join("metrics.jsonl");
    let mut mf = create(&mpath)?;
    let mut io_err = None;
    let res = train(&cfg.model, &cfg.train, algo, kappa.as_ref(), |m| {
        if io_err.is_none() {
            if let Err(e) = writeln!(mf, "{}", serde_json::to_string(m).unwrap()) {
                io_err = Some(e);
            }
        }
        eprintln!(
            "epoch {:>4}  mean G {:.4}  std G {:.4}  entropy {:.3}",
            m.epoch, m.mean_g, m.std_g, m.mean_entropy
        );
    })?;
    if let Some(source) = io_err.or_else(|| mf.flush().err()) {
        return Err(Error::Io { path: mpath, source });
    }
    let ck = res.checkpoint(&cfg.train);
    write_with(&out.join("checkpoint.json"), |w| w.write_all(ck.to_json().as_bytes()))?;
    if let Some(e) = res.diverged_at {
        return Err(Error::NonFinite(if e == 0 {
            "first update"
        } else {
            "training update"
        }));
    }
    println!("final 20-epoch mean return {:.4}", res.final_mean_return(20));
    Ok(())
}

fn load_checkpoint(out: &Path, path: Option<PathBuf>) -> Result<(PolicyCheckpoint, hawkes_dividend::neural::Mlp)> {
    let path = path.unwrap_or_else(|| out.join("checkpoint.json"));
    let s = fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    let (ck, actor, _) = PolicyCheckpoint::from_json(&s)?;
    Ok((ck, actor))
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path, policy: PolicyArg, ck: Option<PathBuf>, stochastic: bool) -> Result<()> {
    let sol = solve(cfg)?;
    let states = cfg.eval.states();
    let pde: Vec<Option<f64>> = states.iter().map(|s| Some(sol.value_at(s.x, s.y))).collect();
    let barriers = sol.barriers();
    let st = settings(cfg);
    let (rows, name) = match policy {
        PolicyArg::Pde => (
            mc_value(EvalPolicy::Barriers(&barriers), &cfg.model, &st, &states, Some(&pde))?,
            "eval_pde.csv",
        ),
        PolicyArg::Checkpoint => {
            let (ck, actor) = load_checkpoint(out, ck)?;
            let mode = if stochastic || cfg.eval.mode == ActionMode::Stochastic {
                ActionMode::Stochastic
            } else {
                ActionMode::Deterministic
            };
            let pol = EvalPolicy::Actor {
                actor: &actor,
                sigma_min: ck.sigma_min,
                mode,
                kappa_ref: ck.freeze_kappa.then_some(&barriers),
            };
            (
                mc_value(pol, &cfg.model, &st, &states, Some(&pde))?,
                "eval_checkpoint.csv",
            )
        }
    };
    write_with(&out.join(name), |w| {
        writeln!(w, "x0,y0,pde_value,mc_mean,mc_se,ci_low,ci_high,rel_err_pct,n_paths")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.x0,
                r.y0,
                r.pde_value.map_or(String::new(), |v| v.to_string()),
                r.mc_mean,
                r.mc_se,
                r.mc_ci95.0,
                r.mc_ci95.1,
                r.rel_err_pct.map_or(String::new(), |v| v.to_string()),
                r.n_paths
            )?;
        }
        Ok(())
    })?;
    for r in &rows {
        println!(
            "({:.2}, {:.2})  PDE {:.4}  MC {:.4} [{:.4}, {:.4}]  rel.err {:+.2}%",
            r.x0,
            r.y0,
            r.pde_value.unwrap_or(f64::NAN),
            r.mc_mean,
            r.mc_ci95.0,
            r.mc_ci95.1,
            r.rel_err_pct.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn cmd_compare(cfg: &RunConfig, out: &Path, ck: Option<PathBuf>) -> Result<()> {
    let sol = solve(cfg)?;
    let barriers = sol.barriers();
    let loaded = match &ck {
        Some(_) => Some(load_checkpoint(out, ck)?),
        None if out.join("checkpoint.json").exists() => Some(load_checkpoint(out, None)?),
        None => None,
    };
    let pol = loaded.as_ref().map(|(c, a)| EvalPolicy::Actor {
        actor: a,
        sigma_min: c.sigma_min,
        mode: cfg.eval.mode,
        kappa_ref: c.freeze_kappa.then_some(&barriers),
    });
    let table = compare_table(&sol, pol, &settings(cfg), &cfg.eval.states())?;
    write_with(&out.join("compare.csv"), |w| table.write_csv(w))?;
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: &Path, param: &str, values: &[f64]) -> Result<()> {
    let param: SweepParam = param.parse()?;
    if values.is_empty() {
        return Err(Error::Config("--values needs at least one number".into()));
    }
    let sols = sensitivity_sweep(&cfg.model, &cfg.grid, param, values)?;
    for (v, sol) in values.iter().zip(&sols) {
        let path = out.join(format!("regime_{param}_{v}.csv"));
        write_with(&path, |w| sol.write_regime_csv(w))?;
        println!(
            "{param} = {v}: V(0,2) = {:.4}, wrote {}",
            sol.value_at(0.0, 2.0),
            path.display()
        );
    }
    Ok(())
}
