//! Subcommand bodies. Each writes only under `config.out`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use seqalloc_core::data_io::{
    generate_dataset, generate_population, load_bundle, manifest_hash, save_bundle, DataError,
    DatasetBundle,
};
use seqalloc_core::econometrics::{reduced_form, write_reduced_form_csv, EconError};
use seqalloc_core::estimator::{
    fit, read_params_csv, EstimatorError, FitOptions, NelderMeadOptions,
};
use seqalloc_core::model::ModelParams;
use seqalloc_core::simulator::{
    conditional_accept_curve, cumulative_accept_prob, curve_pairs, grid_violations, run_experiment,
    simulate_outcomes, write_curve_csv, write_reports_csv, Population, SimError,
};

use crate::config::RunConfig;
use crate::CliError;

pub const RUN_LOG: &str = "run.log";
pub const CONFIG_ECHO: &str = "config.toml";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const ESTIMATE_REPORT: &str = "estimate_report.txt";
pub const COUNTERFACTUAL_FILE: &str = "counterfactual.csv";
pub const REDUCED_FORM_FILE: &str = "reduced_form.csv";
pub const CURVE_FILE: &str = "curve.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Generate,
    Estimate,
    Counterfactual,
    ReducedForm,
    Curve,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Generate => "generate",
            Kind::Estimate => "estimate",
            Kind::Counterfactual => "counterfactual",
            Kind::ReducedForm => "reduced-form",
            Kind::Curve => "curve",
        }
    }
}

/// Plain-text log mirrored to stderr.
struct RunLog(Vec<String>);

impl RunLog {
    fn info(&mut self, line: impl Into<String>) {
        let line = line.into();
        log::info!("{line}");
        self.0.push(line);
    }

    fn warn(&mut self, line: impl Into<String>) {
        let line = line.into();
        log::warn!("{line}");
        self.0.push(format!("warning: {line}"));
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn data_err(e: DataError) -> CliError {
    match e {
        DataError::Config(e) => CliError::Config(e.to_string()),
        DataError::Sim(e) => sim_err(e),
        other => CliError::Io(other.to_string()),
    }
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::Model(e) => CliError::Config(e.to_string()),
        other => CliError::Failed(other.to_string()),
    }
}

fn est_err(e: EstimatorError) -> CliError {
    match e {
        EstimatorError::Model(e) => CliError::Config(e.to_string()),
        other => CliError::Failed(other.to_string()),
    }
}

fn econ_err(e: EconError) -> CliError {
    CliError::Failed(e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| io_err(path, e))
}

pub fn run(kind: Kind, config: &RunConfig) -> Result<(), CliError> {
    let out = &config.out;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let echo = out.join(CONFIG_ECHO);
    std::fs::write(&echo, config.to_toml()).map_err(|e| io_err(&echo, e))?;

    let mut log = RunLog(Vec::new());
    log.info(format!("command: {}", kind.name()));
    log.info(format!("seed: {}", config.seed));
    let result = match kind {
        Kind::Generate => generate(config, &mut log),
        Kind::Estimate => estimate(config, &mut log),
        Kind::Counterfactual => counterfactual(config, &mut log),
        Kind::ReducedForm => reduced(config, &mut log),
        Kind::Curve => curve(config, &mut log),
    };
    match &result {
        Ok(()) => log.info("status: ok"),
        Err(e) => log.info(format!("status: failed ({e})")),
    }
    let log_path = out.join(RUN_LOG);
    let mut text = log.0.join("\n");
    text.push('\n');
    std::fs::write(&log_path, text).map_err(|e| io_err(&log_path, e))?;
    result
}

fn load_data(config: &RunConfig) -> Result<DatasetBundle, CliError> {
    let dir = config.data.as_deref().ok_or_else(|| {
        CliError::Config("this command needs a dataset directory (--data)".into())
    })?;
    load_bundle(dir).map_err(data_err)
}

fn population(
    config: &RunConfig,
    log: &mut RunLog,
) -> Result<(Population, Option<ModelParams>), CliError> {
    let bundle = match &config.data {
        Some(dir) => {
            log.info(format!("population: {}", dir.display()));
            load_bundle(dir).map_err(data_err)?
        }
        None => {
            log.info(format!(
                "population: generated, {} donors, {} patients",
                config.generator.n_donors, config.generator.n_patients
            ));
            generate_population(&config.generator).map_err(data_err)?
        }
    };
    let truth = bundle.manifest.truth().map_err(data_err)?;
    Ok((Population::new(bundle.donors, bundle.patients), truth))
}

fn simulation_params(
    config: &RunConfig,
    data_truth: Option<ModelParams>,
    log: &mut RunLog,
) -> Result<ModelParams, CliError> {
    if let Some(path) = &config.params {
        log.info(format!("parameters: {}", path.display()));
        let f = File::open(path).map_err(|e| io_err(path, e))?;
        return read_params_csv(f).map_err(|e| match e {
            EstimatorError::Csv(e) => CliError::Io(e.to_string()),
            other => CliError::Config(format!("{}: {other}", path.display())),
        });
    }
    match data_truth {
        Some(t) => {
            log.info("parameters: dataset truth");
            Ok(t)
        }
        None => {
            log.info("parameters: generator truth");
            Ok(config.generator.truth.clone())
        }
    }
}

fn generate(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let policy = config.single_policy()?;
    let regime = config.single_regime()?;
    log.info(format!("policy: {policy}, regime: {regime}"));
    let bundle = generate_dataset(&config.generator, policy, regime).map_err(data_err)?;
    save_bundle(&bundle, &config.out).map_err(data_err)?;
    log.info(format!(
        "wrote {} donors, {} patients, {} offers",
        bundle.donors.len(),
        bundle.patients.len(),
        bundle.offers.len()
    ));
    log.info(format!(
        "manifest hash: {}",
        manifest_hash(&config.out).map_err(data_err)?
    ));
    Ok(())
}

fn estimate(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let bundle = load_data(config)?;
    let truth = bundle.manifest.truth().map_err(data_err)?;
    let runs = bundle.donor_runs().map_err(data_err)?;
    log.info(format!(
        "dataset: {} donors, {} offers",
        runs.len(),
        bundle.offers.len()
    ));
    let options = FitOptions {
        nelder_mead: NelderMeadOptions {
            max_iters: config.max_iters,
            ..Default::default()
        },
        restarts: config.restarts,
        init: None,
        std_errors: config.std_errors,
    };
    let result = fit(&runs, &options).map_err(est_err)?;
    if !result.converged {
        log.warn("simplex search stopped at the iteration cap before converging");
    }
    for flag in &result.boundary_flags {
        log.warn(flag.clone());
    }
    log.info(format!("log likelihood: {:.6}", result.log_likelihood));

    let path = config.out.join(ESTIMATES_FILE);
    let mut w = create(&path)?;
    result.write_csv(&mut w).map_err(est_err)?;
    finish(w, &path)?;
    let report = config.out.join(ESTIMATE_REPORT);
    std::fs::write(&report, result.report(truth.as_ref())).map_err(|e| io_err(&report, e))?;
    Ok(())
}

fn counterfactual(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let (pop, truth) = population(config, log)?;
    let params = simulation_params(config, truth, log)?;
    let mut reports = Vec::new();
    for policy in config.policies()? {
        for regime in config.regimes()? {
            let r = run_experiment(
                &pop,
                &params,
                policy,
                regime,
                config.replications,
                config.seed,
            )
            .map_err(sim_err)?;
            log.info(format!(
                "{policy} / {regime}: allocation {:.4}, accepted sequence {:.3}, utility {:.4}",
                r.allocation_rate, r.mean_accepted_sequence, r.mean_acceptance_utility
            ));
            if r.shrunk_runs > 0 {
                log.warn(format!(
                    "{policy} / {regime}: {} runs shrunk to the compatible pool",
                    r.shrunk_runs
                ));
            }
            reports.push(r);
        }
    }
    let path = config.out.join(COUNTERFACTUAL_FILE);
    let mut w = create(&path)?;
    write_reports_csv(&mut w, &reports).map_err(sim_err)?;
    finish(w, &path)?;
    if config.check_orderings {
        let v = grid_violations(&reports);
        if !v.is_empty() {
            let text: Vec<String> = v.into_iter().map(|x| x.0).collect();
            return Err(CliError::Ordering(text.join("\n")));
        }
        log.info("orderings: all hold");
    }
    Ok(())
}

fn reduced(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let bundle = load_data(config)?;
    let runs = bundle.donor_runs().map_err(data_err)?;
    let tables = reduced_form(&runs).map_err(econ_err)?;
    for t in &tables {
        log.info(format!("{}: {} observations", t.outcome, t.n_obs));
        for (name, why) in &t.dropped {
            log.info(format!("{}: dropped {name} ({why})", t.outcome));
        }
    }
    let path = config.out.join(REDUCED_FORM_FILE);
    let mut w = create(&path)?;
    write_reduced_form_csv(&mut w, &tables).map_err(econ_err)?;
    finish(w, &path)
}

fn curve(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let policy = config.single_policy()?;
    let regime = config.single_regime()?;
    let (pop, truth) = population(config, log)?;
    let params = simulation_params(config, truth, log)?;
    let batch = simulate_outcomes(
        &pop,
        &params,
        policy,
        regime,
        config.replications,
        config.seed,
    )
    .map_err(sim_err)?;
    let points = conditional_accept_curve(&batch.outcomes);
    let pairs = curve_pairs(&points);
    for (k, x) in pairs.iter().take(2) {
        log.info(format!("position {k}: {x:.4}"));
    }
    log.info(format!(
        "cumulative by 50: {:.4}",
        cumulative_accept_prob(&pairs, 50)
    ));
    let path = config.out.join(CURVE_FILE);
    let mut w = create(&path)?;
    write_curve_csv(&mut w, &points).map_err(|e| CliError::Io(e.to_string()))?;
    finish(w, &path)
}
