use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use problm::profile::{performance_profile_against, tau_grid, write_profile_csv};
use problm::{Method, Termination};
use rayon::prelude::*;

use crate::args::{BenchArgs, GenerateArgs, ProfileArgs, SolveArgs};
use crate::error::CliError;
use crate::instance::{self, write_trace, RunOutcome};
use crate::settings::resolve;

pub const SUMMARY_HEADER: &str = "instance,method,run,seed,final_cost,evals,iters,status";

pub fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::GradientTolerance => "converged",
        Termination::MaxIterations => "max-iter",
        Termination::Budget => "budget",
        Termination::DampingExhausted => "damping-exhausted",
    }
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    for path in instance::generate(args)? {
        println!("{}", path.display());
    }
    Ok(())
}

pub fn solve(args: &SolveArgs) -> Result<(), CliError> {
    let settings = resolve(&args.flags, args.method.as_deref())?;
    let inst = instance::load(&args.instance)?;
    let out = inst.run(&settings)?;
    let trace = args.trace.clone().or_else(|| args.out.as_ref().map(|d| d.join("trace.csv")));
    if let Some(path) = trace {
        write_trace(&path, &out.trace, settings.no_timing)?;
    }
    println!("final_cost={} evals={}", out.final_cost, out.evals);
    eprintln!(
        "method={} iterations={} K={}/{} termination={}",
        settings.method,
        out.iterations,
        out.final_batch_size,
        inst.num_residuals(),
        termination_name(out.termination)
    );
    Ok(())
}

struct Job {
    instance: usize,
    method: Method,
    run: usize,
    seed: u64,
}

struct Row {
    instance: usize,
    method: Method,
    run: usize,
    seed: u64,
    result: Result<RunOutcome, String>,
}

fn instance_names(paths: &[PathBuf]) -> Result<Vec<String>, CliError> {
    let mut names: Vec<String> = Vec::new();
    for p in paths {
        let dir = if p.is_dir() { p.as_path() } else { p.parent().unwrap_or(Path::new(".")) };
        let name = dir
            .canonicalize()
            .ok()
            .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "instance".into());
        if names.contains(&name) {
            return Err(CliError::Usage(format!("two instances share the name `{name}`")));
        }
        names.push(name);
    }
    Ok(names)
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.runs == 0 {
        return Err(CliError::Usage("runs must be at least 1".into()));
    }
    let base = resolve(&args.flags, None)?;
    let methods = args
        .method
        .iter()
        .map(|m| Method::from_str(m.trim()).map_err(CliError::Usage))
        .collect::<Result<Vec<_>, _>>()?;
    let names = instance_names(&args.instances)?;
    let instances = args.instances.iter().map(|p| instance::load(p)).collect::<Result<Vec<_>, _>>()?;

    let traces = args.out.join("traces");
    fs::create_dir_all(&traces).map_err(CliError::io(&traces))?;

    let jobs: Vec<Job> = (0..instances.len())
        .flat_map(|i| {
            let methods = &methods;
            (0..args.runs).flat_map(move |run| {
                methods.iter().map(move |&method| Job {
                    instance: i,
                    method,
                    run,
                    seed: base.solver.seed.wrapping_add(run as u64),
                })
            })
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    let rows: Vec<Row> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut settings = base.clone();
                settings.method = job.method;
                settings.solver.seed = job.seed;
                settings.solver.run_id = job.run as u64;
                let result = instances[job.instance].run(&settings).map_err(|e| e.to_string()).and_then(|out| {
                    let path = traces.join(format!("{}-{}-{}.csv", names[job.instance], job.method, job.run));
                    write_trace(&path, &out.trace, settings.no_timing).map_err(|e| e.to_string())?;
                    Ok(out)
                });
                Row {
                    instance: job.instance,
                    method: job.method,
                    run: job.run,
                    seed: job.seed,
                    result,
                }
            })
            .collect()
    });

    let path = args.out.join("summary.csv");
    let mut text = format!("{SUMMARY_HEADER}\n");
    let mut failures = 0;
    for row in &rows {
        let name = &names[row.instance];
        match &row.result {
            Ok(out) => text.push_str(&format!(
                "{name},{},{},{},{},{},{},{}\n",
                row.method,
                row.run,
                row.seed,
                out.final_cost,
                out.evals,
                out.iterations,
                termination_name(out.termination)
            )),
            Err(msg) => {
                failures += 1;
                eprintln!("{name} {} run {}: {msg}", row.method, row.run);
                text.push_str(&format!("{name},{},{},{},,,,failed\n", row.method, row.run, row.seed));
            }
        }
    }
    fs::write(&path, text).map_err(CliError::io(&path))?;
    println!("{} runs, {failures} failed, summary at {}", rows.len(), path.display());
    Ok(())
}

struct SummaryRow {
    instance: String,
    method: String,
    final_cost: f64,
}

fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let bad = |line: usize, msg: &str| CliError::Format {
        path: path.to_path_buf(),
        message: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(SUMMARY_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(n + 2, "expected 8 fields"));
        }
        let final_cost = if f[4].is_empty() {
            f64::INFINITY
        } else {
            f[4].parse().map_err(|_| bad(n + 2, "bad final_cost"))?
        };
        rows.push(SummaryRow {
            instance: f[0].to_string(),
            method: f[1].to_string(),
            final_cost,
        });
    }
    Ok(rows)
}

/// Per-method profiles of `cost / f*`, with `f*` the best cost any method
/// reached on the same instance.
pub fn profile(args: &ProfileArgs) -> Result<(), CliError> {
    if !(args.tau_max >= 1.0) || args.tau_count < 2 {
        return Err(CliError::Usage("the τ grid needs tau-max ≥ 1 and at least 2 points".into()));
    }
    let rows = read_summary(&args.summary)?;
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.final_cost.is_finite()) {
        let b = best.entry(&r.instance).or_insert(f64::INFINITY);
        *b = b.min(r.final_cost);
    }
    let mut ratios: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        let fstar = best.get(r.instance.as_str()).copied().unwrap_or(f64::INFINITY);
        let ratio = if !r.final_cost.is_finite() || !fstar.is_finite() {
            f64::INFINITY
        } else if fstar == 0.0 {
            if r.final_cost == 0.0 { 1.0 } else { f64::INFINITY }
        } else {
            r.final_cost / fstar
        };
        ratios.entry(&r.method).or_default().push(ratio);
    }
    if ratios.is_empty() {
        return Err(CliError::Format {
            path: args.summary.clone(),
            message: "no runs in summary".into(),
        });
    }

    fs::create_dir_all(&args.out).map_err(CliError::io(&args.out))?;
    let grid = tau_grid(args.tau_max, args.tau_count);
    for (method, costs) in &ratios {
        let path = args.out.join(format!("profile_{method}.csv"));
        let points = match performance_profile_against(costs, 1.0, &grid) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("{method}: {e}");
                continue;
            }
        };
        let mut buf = Vec::new();
        write_profile_csv(&mut buf, &points).map_err(CliError::io(&path))?;
        fs::File::create(&path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(CliError::io(&path))?;
        println!("{}", path.display());
    }
    Ok(())
}
