use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bpopt_core::io::{
    blueprint_to_json, export_blueprint_string, import_blueprint_string, read_blueprint, render_ascii, render_legend,
    write_blueprint, NameTable, RenderStyle,
};
use bpopt_core::orchestrator::{optimize_with, RunEvent};
use bpopt_core::{
    parse_instance, simulate_flow, validate_instance, validate_structure, Blueprint, ItemId, Penalties,
    ProblemInstance, RunConfig, RunOutcome,
};
use clap::{Args, Parser, Subcommand};

const EXIT_INFEASIBLE: u8 = 1;
const EXIT_LIMIT: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "bpopt", version, about = "Synthesize and check factory blueprints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for the best blueprint for an instance.
    Solve(SolveArgs),
    /// Check a blueprint's structure against an instance.
    Validate {
        blueprint: PathBuf,
        instance: PathBuf,
    },
    /// Steady-state flow of a blueprint.
    Simulate {
        blueprint: PathBuf,
        instance: PathBuf,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Draw a blueprint as text.
    Render {
        blueprint: PathBuf,
        #[command(flatten)]
        style: StyleArgs,
        #[command(flatten)]
        names: NameArgs,
    },
    /// Print a blueprint as a game blueprint string.
    Export {
        blueprint: PathBuf,
        #[command(flatten)]
        names: NameArgs,
    },
    /// Decode a game blueprint string ("-" reads it from stdin).
    Import {
        string: String,
        /// Write the blueprint file here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        names: NameArgs,
    },
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    /// Write every intermediate solution here.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Stage-1 candidates to try before giving up.
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Wall-clock seconds per solver call (0 = none).
    #[arg(long)]
    time_limit: Option<f64>,
    /// Search nodes per layout solve (0 = none).
    #[arg(long)]
    node_limit: Option<u64>,
    #[arg(long)]
    conveyor_penalty: Option<i64>,
    #[arg(long)]
    inserter_penalty: Option<i64>,
    /// Threads for layout solves.
    #[arg(long)]
    workers: Option<usize>,
    /// Write the blueprint file here.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Print the run report as JSON instead of a drawing.
    #[arg(long)]
    json: bool,
    /// Log each attempt to stderr.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Args)]
struct StyleArgs {
    /// Arrow glyphs for conveyors and recipe digits for assemblers.
    #[arg(long)]
    arrows: bool,
    /// Leave out the key and block list under the drawing.
    #[arg(long)]
    no_legend: bool,
}

#[derive(Args)]
struct NameArgs {
    /// JSON object mapping item ids to game names, e.g. {"2": "iron-gear-wheel"}.
    #[arg(long)]
    names: Option<PathBuf>,
}

/// A failure with the exit code it maps to.
struct Failure(u8, String);

fn input<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure(EXIT_INPUT, format!("{context}: {e}"))
}

fn load_instance(path: &Path) -> Result<ProblemInstance, Failure> {
    let text = std::fs::read_to_string(path).map_err(input(path.display()))?;
    let inst = parse_instance(&text).map_err(input(path.display()))?;
    let problems = validate_instance(&inst);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(|p| format!("  {p}")).collect();
        return Err(Failure(EXIT_INPUT, format!("{}: invalid instance\n{}", path.display(), list.join("\n"))));
    }
    Ok(inst)
}

fn load_blueprint(path: &Path) -> Result<Blueprint, Failure> {
    read_blueprint(path).map_err(input(path.display()))
}

fn load_names(args: &NameArgs) -> Result<NameTable, Failure> {
    let Some(path) = &args.names else {
        return Ok(NameTable::default());
    };
    let text = std::fs::read_to_string(path).map_err(input(path.display()))?;
    let raw: BTreeMap<String, String> = serde_json::from_str(&text).map_err(input(path.display()))?;
    let mut names = BTreeMap::new();
    for (k, v) in raw {
        let id: ItemId = k
            .parse()
            .map_err(|_| Failure(EXIT_INPUT, format!("{}: \"{k}\" is not an item id", path.display())))?;
        names.insert(id, v);
    }
    Ok(NameTable::new(names))
}

fn style(args: &StyleArgs) -> RenderStyle {
    if args.arrows {
        RenderStyle::Arrows
    } else {
        RenderStyle::Letters
    }
}

fn solve(args: &SolveArgs) -> Result<(), Failure> {
    let inst = load_instance(&args.instance)?;
    let mut cfg = RunConfig {
        dump_dir: args.dump.clone(),
        ..RunConfig::default()
    };
    if let Some(n) = args.max_attempts {
        cfg.max_stage1_attempts = n;
    }
    if let Some(t) = args.time_limit {
        cfg.stage1_time_limit = t;
        cfg.stage2_time_limit = t;
        cfg.stage3_time_limit = t;
    }
    if let Some(n) = args.node_limit {
        cfg.stage3_node_limit = n;
    }
    cfg.penalties = Penalties {
        conveyor: args.conveyor_penalty.unwrap_or(cfg.penalties.conveyor),
        inserter: args.inserter_penalty.unwrap_or(cfg.penalties.inserter),
    };
    if let Some(w) = args.workers {
        cfg.workers = w.max(1);
    }

    let verbose = args.verbose;
    let report = optimize_with(&inst, &cfg, &mut |e| {
        if !verbose {
            return;
        }
        match e {
            RunEvent::Stage1 { attempt, solution } => eprintln!(
                "stage 1 #{attempt}: recipes {:?} objective {}",
                solution.assembler_recipes, solution.objective_value
            ),
            RunEvent::Layout {
                attempt,
                packing,
                result,
                nodes,
                seconds,
            } => eprintln!("  packing {attempt}.{packing}: {result:?} ({nodes} nodes, {seconds:.2}s)"),
        }
    });

    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    }
    match &report.outcome {
        RunOutcome::Blueprint { blueprint } => {
            if let Some(out) = &args.out {
                write_blueprint(out, blueprint).map_err(input(out.display()))?;
            }
            if !args.json {
                print!("{}", render_ascii(blueprint, RenderStyle::Letters));
                print!("{}", render_legend(blueprint, RenderStyle::Letters, &NameTable::default()));
                println!(
                    "{} stage-1 attempts, {} layouts tried",
                    report.stage1_attempts,
                    report.stage2_attempts.iter().sum::<u32>()
                );
            }
            Ok(())
        }
        RunOutcome::Infeasible => Err(Failure(EXIT_INFEASIBLE, "no feasible blueprint".into())),
        RunOutcome::LimitReached => Err(Failure(EXIT_LIMIT, "search limit reached without a blueprint".into())),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve(args) => solve(&args),
        Command::Validate { blueprint, instance } => {
            let inst = load_instance(&instance)?;
            let bp = load_blueprint(&blueprint)?;
            let problems = validate_structure(&bp, &inst);
            if problems.is_empty() {
                println!("ok");
                return Ok(());
            }
            for p in &problems {
                println!("{p}");
            }
            Err(Failure(EXIT_INFEASIBLE, format!("{} violation(s)", problems.len())))
        }
        Command::Simulate {
            blueprint,
            instance,
            json,
        } => {
            let inst = load_instance(&instance)?;
            let bp = load_blueprint(&blueprint)?;
            let report = simulate_flow(&bp, &inst).map_err(input(blueprint.display()))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                return Ok(());
            }
            println!("delivered {} / predicted {}", report.delivered_rate, report.predicted_rate);
            for (at, u) in &report.utilization {
                println!("assembler {at}: utilization {u}");
            }
            for at in &report.starved {
                println!("starved inserter {at}");
            }
            Ok(())
        }
        Command::Render {
            blueprint,
            style: s,
            names,
        } => {
            let bp = load_blueprint(&blueprint)?;
            let names = load_names(&names)?;
            print!("{}", render_ascii(&bp, style(&s)));
            if !s.no_legend {
                print!("{}", render_legend(&bp, style(&s), &names));
            }
            Ok(())
        }
        Command::Export { blueprint, names } => {
            let bp = load_blueprint(&blueprint)?;
            println!("{}", export_blueprint_string(&bp, &load_names(&names)?));
            Ok(())
        }
        Command::Import { string, out, names } => {
            let text = if string == "-" {
                std::io::read_to_string(std::io::stdin()).map_err(input("stdin"))?
            } else {
                string
            };
            let bp = import_blueprint_string(text.trim(), &load_names(&names)?).map_err(input("blueprint string"))?;
            match out {
                Some(path) => write_blueprint(&path, &bp).map_err(input(path.display()))?,
                None => println!("{}", blueprint_to_json(&bp)),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("bpopt: {msg}");
            ExitCode::from(code)
        }
    }
}
