use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    AnalyzeArgs, Command, DomainArgs, EstimateArgs, ExperimentArgs, LevelArg, MechanismArg,
    OutputArgs, RandomizeArgs, SimulateArgs, TableArgs, VerifyArgs, EXIT_OK, EXIT_VERIFY,
};
use crate::error::{Error, Result};
use crate::estimation::{
    analytic_l2_error, estimate_rows, hit_rates, ksharp, project_simplex, remap_estimate,
    write_estimate_csv, EstimateRow,
};
use crate::information::{
    asymptotic_mi_bound, beta_optimal, brr_mutual_info, kstar, mutual_info_at_beta,
    quadratic_mi_bound, BRR_SERIES_MAX_D,
};
use crate::io::{
    push_view_line, read_secrets, read_views_frequency, write_schema_header, SCHEMA_VERSION,
};
use crate::params::PrivacyParams;
use crate::rng::RngStream;
use crate::sampling::{Mechanism, Randomizer};
use crate::simulation::{
    parse_row_label, result_rows, run_experiment, write_results_csv, ExperimentConfig,
    ExperimentResult, MechanismKind, ResultRow, ThetaSource, REFERENCE_ROWS,
};
use crate::verify::{self, Level};

const IO_BUFFER: usize = 1 << 20;
const RANDOMIZE_CHUNK: usize = 1 << 14;

pub(super) fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Analyze(a) => analyze(a, stdout),
        Command::Randomize(a) => randomize(a, stdout),
        Command::Estimate(a) => estimate(a, stdout),
        Command::Simulate(a) => simulate(a, stdout),
        Command::Table(a) => table(a, stdout),
        Command::Verify(a) => verify_cmd(a, stdout),
    }
}

fn is_stdio(path: &Option<PathBuf>) -> bool {
    path.as_deref().map_or(true, |p| p == Path::new("-"))
}

fn with_output<F>(path: &Option<PathBuf>, stdout: &mut dyn Write, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    if is_stdio(path) {
        f(stdout)?;
        stdout.flush()?;
    } else {
        let mut file = BufWriter::with_capacity(IO_BUFFER, File::create(path.as_ref().unwrap())?);
        f(&mut file)?;
        file.flush()?;
    }
    Ok(())
}

fn open_input(path: &Option<PathBuf>) -> Result<Box<dyn BufRead>> {
    Ok(if is_stdio(path) {
        Box::new(BufReader::with_capacity(IO_BUFFER, io::stdin()))
    } else {
        Box::new(BufReader::with_capacity(
            IO_BUFFER,
            File::open(path.as_ref().unwrap())?,
        ))
    })
}

fn params_of(domain: &DomainArgs) -> Result<PrivacyParams> {
    PrivacyParams::new(domain.epsilon, domain.d as usize)
}

fn schema(kind: &str) -> String {
    format!("ksubset.{kind}/{SCHEMA_VERSION}")
}

fn resolve_mechanism(
    arg: MechanismArg,
    k: Option<usize>,
    params: &PrivacyParams,
) -> Result<Mechanism> {
    match (arg, k) {
        (MechanismArg::Kss, Some(k)) => {
            params.check_subset_size(k)?;
            Ok(Mechanism::KSubset(k))
        }
        (MechanismArg::Kss, None) => Ok(Mechanism::KSubset(ksharp(params, 1)?.k)),
        (_, Some(_)) => Err(Error::InvalidConfig(
            "--k applies only to --mechanism kss".into(),
        )),
        (MechanismArg::Mrr, None) => Ok(Mechanism::Mrr),
        (MechanismArg::Brr, None) => Ok(Mechanism::Brr),
    }
}

fn thread_pool(threads: Option<u64>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t as usize);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

#[derive(Debug, Serialize)]
struct Analysis {
    schema: String,
    d: usize,
    epsilon: f64,
    n: u64,
    information_unit: &'static str,
    beta: f64,
    kstar: usize,
    max_mutual_info: f64,
    mutual_info_at_beta: f64,
    asymptotic_bound: f64,
    quadratic_bound: f64,
    ksharp_center: f64,
    ksharp: usize,
    l2_error_at_ksharp: f64,
    l2_error_at_kstar: f64,
    brr_mutual_info: Option<f64>,
    brr_bound: Option<f64>,
}

fn analyze(args: AnalyzeArgs, stdout: &mut dyn Write) -> Result<i32> {
    let params = params_of(&args.domain)?;
    let scale = if args.bits {
        std::f64::consts::LN_2.recip()
    } else {
        1.0
    };
    let eps = params.epsilon();
    let star = kstar(&params);
    let sharp = ksharp(&params, args.n)?;
    let brr = if params.d() <= BRR_SERIES_MAX_D {
        Some(brr_mutual_info(&params)?)
    } else {
        None
    };
    let a = Analysis {
        schema: schema("analyze"),
        d: params.d(),
        epsilon: eps,
        n: args.n,
        information_unit: if args.bits { "bits" } else { "nats" },
        beta: beta_optimal(&params),
        kstar: star.k,
        max_mutual_info: star.objective_value * scale,
        mutual_info_at_beta: mutual_info_at_beta(&params) * scale,
        asymptotic_bound: asymptotic_mi_bound(eps) * scale,
        quadratic_bound: quadratic_mi_bound(eps) * scale,
        ksharp_center: sharp.beta,
        ksharp: sharp.k,
        l2_error_at_ksharp: sharp.objective_value,
        l2_error_at_kstar: analytic_l2_error(&params, star.k, args.n)?,
        brr_mutual_info: brr.as_ref().map(|b| b.series * scale),
        brr_bound: brr.as_ref().map(|b| b.bound * scale),
    };
    with_output(&args.output.output, stdout, |out| {
        if args.output.json {
            serde_json::to_writer_pretty(&mut *out, &a)?;
            writeln!(out)?;
            return Ok(());
        }
        write_schema_header(out, "analyze")?;
        let unit = a.information_unit;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let rows: Vec<(&str, String, &str)> = vec![
            ("d", a.d.to_string(), ""),
            ("epsilon", a.epsilon.to_string(), ""),
            ("n", a.n.to_string(), ""),
            ("beta", a.beta.to_string(), ""),
            ("kstar", a.kstar.to_string(), ""),
            ("max_mutual_info", a.max_mutual_info.to_string(), unit),
            (
                "mutual_info_at_beta",
                a.mutual_info_at_beta.to_string(),
                unit,
            ),
            ("asymptotic_bound", a.asymptotic_bound.to_string(), unit),
            ("quadratic_bound", a.quadratic_bound.to_string(), unit),
            ("ksharp_center", a.ksharp_center.to_string(), ""),
            ("ksharp", a.ksharp.to_string(), ""),
            (
                "l2_error_at_ksharp",
                a.l2_error_at_ksharp.to_string(),
                "squared_l2",
            ),
            (
                "l2_error_at_kstar",
                a.l2_error_at_kstar.to_string(),
                "squared_l2",
            ),
            ("brr_mutual_info", opt(a.brr_mutual_info), unit),
            ("brr_bound", opt(a.brr_bound), unit),
        ];
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantity", "value", "unit"])?;
        for (q, v, u) in rows {
            w.write_record([q, v.as_str(), u])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(EXIT_OK)
}

/// Views for `secrets[offset..]`, one derived stream per line index.
fn randomize_chunk(
    randomizer: &Randomizer,
    seed: u64,
    offset: usize,
    secrets: &[usize],
) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(secrets.len() * 8);
    let mut view = Vec::new();
    for (j, &x) in secrets.iter().enumerate() {
        let mut rng = RngStream::derive(seed, &[(offset + j) as u64]);
        randomizer.randomize_into(x, &mut rng, &mut view)?;
        push_view_line(&mut buf, &view);
    }
    Ok(buf)
}

fn randomize(args: RandomizeArgs, stdout: &mut dyn Write) -> Result<i32> {
    let params = params_of(&args.domain)?;
    let mechanism = resolve_mechanism(args.mechanism, args.k, &params)?;
    let randomizer = Randomizer::new(mechanism, &params)?;
    let secrets = read_secrets(open_input(&args.input)?, params.d())?;
    let pool = thread_pool(args.seed.threads)?;
    let seed = args.seed.seed;
    let batch = RANDOMIZE_CHUNK * pool.current_num_threads() * 4;
    with_output(&args.output, stdout, |out| {
        for (b, block) in secrets.chunks(batch).enumerate() {
            let base = b * batch;
            let pieces = pool.install(|| {
                block
                    .par_chunks(RANDOMIZE_CHUNK)
                    .enumerate()
                    .map(|(c, chunk)| {
                        randomize_chunk(&randomizer, seed, base + c * RANDOMIZE_CHUNK, chunk)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            for piece in pieces {
                out.write_all(&piece)?;
            }
        }
        Ok(())
    })?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    schema: String,
    d: usize,
    epsilon: f64,
    mechanism: String,
    k: Option<usize>,
    n: u64,
    g: f64,
    h: f64,
    rows: &'a [EstimateRow],
}

fn estimate(args: EstimateArgs, stdout: &mut dyn Write) -> Result<i32> {
    let params = params_of(&args.domain)?;
    let mechanism = resolve_mechanism(args.mechanism, args.k, &params)?;
    let view_size = match mechanism {
        Mechanism::KSubset(k) => Some(k),
        Mechanism::Mrr => Some(1),
        Mechanism::Brr => None,
    };
    let freq = read_views_frequency(open_input(&args.views)?, params.d(), view_size)?;
    let rates = hit_rates(mechanism, &params)?;
    let raw = remap_estimate(&freq, &rates)?;
    let projected = args.project.then(|| project_simplex(&raw));
    with_output(&args.output.output, stdout, |out| {
        if args.output.json {
            let rows = estimate_rows(&raw, projected.as_ref());
            let report = EstimateReport {
                schema: schema("estimate"),
                d: params.d(),
                epsilon: params.epsilon(),
                mechanism: mechanism.to_string(),
                k: view_size.filter(|_| matches!(mechanism, Mechanism::KSubset(_))),
                n: freq.n(),
                g: rates.g(),
                h: rates.h(),
                rows: &rows,
            };
            serde_json::to_writer_pretty(&mut *out, &report)?;
            writeln!(out)?;
            return Ok(());
        }
        write_schema_header(out, "estimate")?;
        write_estimate_csv(out, &raw, projected.as_ref())
    })?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ResultsReport<'a> {
    schema: String,
    rows: &'a [ResultRow],
}

fn write_results(
    results: &[ExperimentResult],
    output: &OutputArgs,
    stdout: &mut dyn Write,
) -> Result<()> {
    with_output(&output.output, stdout, |out| {
        if output.json {
            let rows = result_rows(results);
            serde_json::to_writer_pretty(
                &mut *out,
                &ResultsReport {
                    schema: schema("results"),
                    rows: &rows,
                },
            )?;
            writeln!(out)?;
            return Ok(());
        }
        write_schema_header(out, "results")?;
        write_results_csv(out, results)
    })
}

fn base_config(d: usize, epsilon: f64, e: &ExperimentArgs) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(d, epsilon, e.n, e.reps as usize, e.seed.seed);
    config.project = !e.no_project;
    config.threads = e.seed.threads.map(|t| t as usize);
    config
}

fn simulate(args: SimulateArgs, stdout: &mut dyn Write) -> Result<i32> {
    let params = params_of(&args.domain)?;
    let mut config = base_config(params.d(), params.epsilon(), &args.experiment);
    config.mechanisms = args
        .mechanisms
        .iter()
        .map(|m| m.parse())
        .collect::<Result<Vec<MechanismKind>>>()?;
    if let Some(theta) = args.theta {
        config.theta_source = ThetaSource::Fixed(theta);
    }
    let result = run_experiment(&config)?;
    write_results(&[result], &args.experiment.output, stdout)?;
    Ok(EXIT_OK)
}

fn table(args: TableArgs, stdout: &mut dyn Write) -> Result<i32> {
    let rows: Vec<(usize, f64)> = match &args.rows {
        Some(labels) => labels
            .iter()
            .map(|l| parse_row_label(l))
            .collect::<Result<_>>()?,
        None => REFERENCE_ROWS.iter().map(|r| (r.d, r.epsilon)).collect(),
    };
    if let Some(b) = args.budget_secs {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidConfig(
                "--budget-secs must be positive".into(),
            ));
        }
    }
    let start = Instant::now();
    let mut results = Vec::with_capacity(rows.len());
    for (d, epsilon) in rows {
        if args
            .budget_secs
            .is_some_and(|b| start.elapsed().as_secs_f64() >= b)
        {
            break;
        }
        results.push(run_experiment(&base_config(d, epsilon, &args.experiment))?);
    }
    write_results(&results, &args.experiment.output, stdout)?;
    Ok(EXIT_OK)
}

fn verify_cmd(args: VerifyArgs, stdout: &mut dyn Write) -> Result<i32> {
    let level = match args.level {
        LevelArg::Quick => Level::Quick,
        LevelArg::Default => Level::Default,
        LevelArg::Deep => Level::Deep,
    };
    let report = verify::run(level, args.seed);
    if args.json {
        serde_json::to_writer_pretty(&mut *stdout, &report)?;
        writeln!(stdout)?;
    } else {
        writeln!(stdout, "#schema={}", schema("verify"))?;
        for check in &report.checks {
            writeln!(stdout, "{check}")?;
        }
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        writeln!(stdout, "{verdict} overall")?;
    }
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_VERIFY
    })
}
