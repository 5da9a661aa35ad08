use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use toolpath_rl::baselines::{dfs_backtrack_plan, order_to_steps, zigzag_order};
use toolpath_rl::graph::{CoverageMode, Graph};
use toolpath_rl::io::{parse_graph, parse_pgm_grid, ToolpathFile};
use toolpath_rl::planner::{
    plan_with_policy, plan_with_restarts, plan_toolpath_with_store, replay_toolpath, start_node, thread_count,
    PlanConfig, PlanResult, PlanSummary, Policy, Widths,
};
use toolpath_rl::prior::PriorStore;
use toolpath_rl::report::{emit_report, ReportFormat, ReportInput};
use toolpath_rl::{assets, Error};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_PARSE: u8 = 3;

#[derive(Parser)]
#[command(name = "toolpath-rl", version, about = "Graph-coverage toolpath planner")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a toolpath with the learned policy.
    Plan(PlanArgs),
    /// Plan with a baseline algorithm.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        algo: Algo,
        /// Node expansion budget of the backtracking search.
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
    },
    /// Run the planner and a baseline and print a gap table.
    Compare {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
    },
    /// Render JSON, CSV or SVG reports of a toolpath file.
    Report {
        #[arg(long)]
        graph: PathBuf,
        /// Pixel pitch (mm) when the graph is a PGM raster.
        #[arg(long, default_value_t = 1.0)]
        pitch: f64,
        #[arg(long)]
        toolpath: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "json,csv,svg")]
        format: Vec<ReportFormat>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Write the bundled example models.
    Assets {
        #[arg(long, default_value = "assets")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Bfs,
    Greedy,
    Dfs,
    Zigzag,
}

#[derive(Args)]
struct Common {
    /// Graph file: JSON, OBJ or PGM.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pitch: f64,
    /// JSON planner configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<CoverageMode>,
    #[arg(long = "lsg-rings")]
    rings: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Channel widths as e2e1,e2e2,e2n,hidden.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    start: Option<usize>,
    /// Toolpath output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    priors: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Prior store loaded before and saved after planning.
    #[arg(long)]
    prior_file: Option<PathBuf>,
    #[arg(long)]
    no_prior_reuse: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Also write reports of the plan into this directory.
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

fn load_graph(path: &Path, pitch: f64) -> toolpath_rl::Result<Graph> {
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        parse_pgm_grid(&std::fs::read(path)?, pitch)
    } else {
        parse_graph(path)
    }
}

fn resolve_config(c: &Common) -> anyhow::Result<PlanConfig> {
    let mut config = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::parse(format!("{}:{}:{}", p.display(), e.line(), e.column()), e.to_string()))?
        }
        None => PlanConfig::default(),
    };
    if let Some(m) = c.mode {
        config.mode = m;
    }
    if let Some(r) = c.rings {
        config.rings = r;
    }
    if let Some(s) = c.seed {
        config.seed = s;
    }
    if let Some(w) = &c.widths {
        if w.len() != 4 {
            return Err(Error::parse("--widths", format!("expected 4 values, got {}", w.len())).into());
        }
        config.widths = Widths {
            e2e1: w[0],
            e2e2: w[1],
            e2n: w[2],
            hidden: w[3],
        };
    }
    if c.max_steps.is_some() {
        config.max_steps = c.max_steps;
    }
    if c.start.is_some() {
        config.start_node = c.start;
    }
    Ok(config)
}

fn resolve_plan_config(a: &PlanArgs) -> anyhow::Result<PlanConfig> {
    let mut config = resolve_config(&a.common)?;
    if let Some(k) = a.priors {
        config.priors = k;
    }
    if let Some(r) = a.restarts {
        config.restarts = r;
    }
    if a.no_prior_reuse {
        config.prior_reuse = false;
    }
    config.validate()?;
    Ok(config)
}

fn announce(config: &PlanConfig) -> anyhow::Result<()> {
    println!("config: {}", serde_json::to_string(config)?);
    println!("seed: {}", config.seed);
    Ok(())
}

fn print_summary(label: &str, s: &PlanSummary) {
    println!(
        "{label}: steps={} jumps={} length={:.3} sharp_turns={} complete={} collisions={} episodes={}{}{}",
        s.steps,
        s.jumps,
        s.total_length,
        s.sharp_turns,
        s.complete,
        s.collisions,
        s.episodes,
        s.peak_u_max.map(|u| format!(" peak_u_max={u:.6}")).unwrap_or_default(),
        s.peak_hot_area.map(|a| format!(" peak_hot_area={a}")).unwrap_or_default(),
    );
}

fn write_toolpath(graph: &Graph, config: &PlanConfig, result: &PlanResult, out: Option<&Path>) -> anyhow::Result<()> {
    if let Some(p) = out {
        ToolpathFile::from_result(graph, config, result).save(p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run_plan(a: &PlanArgs, graph: &Graph, config: &PlanConfig) -> anyhow::Result<PlanResult> {
    let mut store = match &a.prior_file {
        Some(p) if p.exists() => PriorStore::load(p)?,
        _ => PriorStore::new(config.priors, config.shape())?,
    };
    let result = if config.restarts > 1 {
        let threads = a.threads.unwrap_or_else(thread_count);
        let outcome = plan_with_restarts(graph, config, &store, threads)?;
        println!("best restart: {} of {}", outcome.best_run, outcome.runs.len());
        outcome.best
    } else {
        let r = plan_toolpath_with_store(graph, config, &mut store)?;
        if let Some(p) = &a.prior_file {
            store.save(p)?;
        }
        r
    };
    Ok(result)
}

fn run_baseline(graph: &Graph, config: &PlanConfig, algo: Algo, budget: usize) -> anyhow::Result<PlanResult> {
    Ok(match algo {
        Algo::Bfs => plan_with_policy(graph, config, Policy::Bfs)?,
        Algo::Greedy => plan_with_policy(graph, config, Policy::Greedy)?,
        Algo::Dfs => {
            let start = start_node(graph, config)?;
            let d = dfs_backtrack_plan(graph, config, start, budget)?;
            if d.partial {
                eprintln!("search budget exhausted after {} expansions; keeping the best partial path", d.expansions);
            }
            replay_toolpath(graph, config, &d.steps)?
        }
        Algo::Zigzag => replay_toolpath(graph, config, &order_to_steps(graph, &zigzag_order(graph)))?,
    })
}

fn gap_row(metric: &str, ours: f64, base: f64) {
    let gap = if base != 0.0 {
        format!("{:+.2}%", 100.0 * (ours - base) / base.abs())
    } else {
        "n/a".into()
    };
    println!("{metric:<14} {ours:>14.4} {base:>14.4} {gap:>10}");
}

fn feasible_exit(s: &PlanSummary) -> ExitCode {
    if s.feasible() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INFEASIBLE)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Command::Plan(a) => {
            let config = resolve_plan_config(&a)?;
            announce(&config)?;
            let graph = load_graph(&a.common.graph, a.common.pitch)?;
            let result = run_plan(&a, &graph, &config)?;
            print_summary("plan", &result.summary);
            write_toolpath(&graph, &config, &result, a.common.out.as_deref())?;
            if let Some(dir) = &a.report_dir {
                let file = ToolpathFile::from_result(&graph, &config, &result);
                let input = ReportInput {
                    graph: &graph,
                    file: &file,
                    wall_ms: Some(&result.wall_ms),
                    temperature: result.temperature.as_deref(),
                };
                let formats = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg];
                for p in emit_report(&input, &formats, dir, "plan")? {
                    println!("wrote {}", p.display());
                }
            }
            Ok(feasible_exit(&result.summary))
        }
        Command::Baseline { common, algo, budget } => {
            let config = resolve_config(&common)?;
            config.validate()?;
            announce(&config)?;
            let graph = load_graph(&common.graph, common.pitch)?;
            let result = run_baseline(&graph, &config, algo, budget)?;
            print_summary("baseline", &result.summary);
            write_toolpath(&graph, &config, &result, common.out.as_deref())?;
            Ok(feasible_exit(&result.summary))
        }
        Command::Compare { plan, algo, budget } => {
            let mut config = resolve_plan_config(&plan)?;
            announce(&config)?;
            let graph = load_graph(&plan.common.graph, plan.common.pitch)?;
            let ours = run_plan(&plan, &graph, &config)?;
            config.start_node = Some(ours.start);
            let base = run_baseline(&graph, &config, algo, budget)?;
            print_summary("plan", &ours.summary);
            print_summary("baseline", &base.summary);
            println!("{:<14} {:>14} {:>14} {:>10}", "metric", "plan", "baseline", "gap");
            let (o, b) = (&ours.summary, &base.summary);
            gap_row("length", o.total_length, b.total_length);
            gap_row("sharp_turns", o.sharp_turns as f64, b.sharp_turns as f64);
            gap_row("jumps", o.jumps as f64, b.jumps as f64);
            gap_row("collisions", o.collisions as f64, b.collisions as f64);
            if let (Some(x), Some(y)) = (o.peak_u_max, b.peak_u_max) {
                gap_row("peak_u_max", x, y);
            }
            if let (Some(x), Some(y)) = (o.peak_hot_area, b.peak_hot_area) {
                gap_row("peak_hot_area", x as f64, y as f64);
            }
            write_toolpath(&graph, &config, &ours, plan.common.out.as_deref())?;
            Ok(feasible_exit(&ours.summary))
        }
        Command::Report {
            graph,
            pitch,
            toolpath,
            format,
            out_dir,
        } => {
            let g = load_graph(&graph, pitch)?;
            let file = ToolpathFile::load(&toolpath)?;
            announce(&file.config)?;
            let steps: Vec<_> = file.steps.iter().map(|s| (s.node, s.jump)).collect();
            let replay = replay_toolpath(&g, &file.config, &steps)?;
            let input = ReportInput {
                graph: &g,
                file: &file,
                wall_ms: None,
                temperature: replay.temperature.as_deref(),
            };
            let stem = toolpath.file_stem().and_then(|s| s.to_str()).unwrap_or("toolpath");
            for p in emit_report(&input, &format, &out_dir, stem)? {
                println!("wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Assets { out_dir } => {
            if out_dir.as_os_str().is_empty() {
                bail!("empty output directory");
            }
            for p in assets::write_bundled(&out_dir)? {
                println!("wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_PARSE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Parse { .. }) => ExitCode::from(EXIT_PARSE),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
