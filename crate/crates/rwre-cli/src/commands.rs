use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use rwre::conditions::{estimate_pm, eta_alpha_estimate, hypothesis_report, PMConfig, PMReport};
use rwre::environment::EnvironmentLaw;
use rwre::flows::{
    build_theta, cut_oracle_feasible, feasible_flow, rational, verify_flow_certificate,
    BoxFlowSpec, CertificateReport, DemandProblem, DirectedGraph, FeasibilityOutcome,
};
use rwre::regeneration::{
    dirichlet_trap_exponent, dirichlet_trap_survival_exact, regeneration_battery,
    renewal_statistics, tail_exponent, trap_exit_tail, RegenConfig, RegenError,
    RegenerationRecord, RenewalStatistics, TailEstimate, TrapTailReport,
};
use rwre::rng::{domain, SplitMix64};
use rwre::stats::RunningMoments;
use rwre::tails::sample_pareto;

use crate::config::{section, ExperimentConfig, RegenSection};
use crate::flowfile::{self, FlowFile};
use crate::output::{col, finish_csv, num, OutDir};
use crate::CliError;

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

/// Parameter mistakes are configuration errors; a run that completed but
/// could not support the estimate is an insufficient-data error.
fn data_err(records: usize, censored: usize, e: RegenError) -> CliError {
    match e {
        RegenError::InsufficientData { .. }
        | RegenError::TooFewSamples { .. }
        | RegenError::TailNotDecaying(_) => CliError::Insufficient(format!(
            "{e} ({censored} of {records} records have censored tails)"
        )),
        other => CliError::Config(other.to_string()),
    }
}

fn conditions_err(e: rwre::conditions::ConditionsError) -> CliError {
    match e {
        // Walker errors surface from the exact solver at run time, not
        // from parameter validation.
        rwre::conditions::ConditionsError::Walker(inner) => {
            CliError::Insufficient(inner.to_string())
        }
        other => CliError::Config(other.to_string()),
    }
}

fn write_row<W: std::io::Write, I, F>(
    writer: &mut csv::Writer<W>,
    name: &str,
    fields: I,
) -> Result<(), CliError>
where
    I: IntoIterator<Item = F>,
    F: AsRef<[u8]>,
{
    writer
        .write_record(fields)
        .map_err(|e| CliError::Config(format!("cannot write {name}: {e}")))
}

fn direction_names(d: usize) -> Vec<String> {
    (0..2 * d)
        .map(|i| {
            if i < d {
                format!("e{}", i + 1)
            } else {
                format!("-e{}", i + 1 - d)
            }
        })
        .collect()
}

const SAMPLE_CHUNK: usize = 10_000;

#[derive(Serialize)]
struct MomentsJson<'a> {
    law: &'a EnvironmentLaw,
    seed: u64,
    n_samples: usize,
    directions: Vec<String>,
    means: Vec<f64>,
    variances: Vec<f64>,
    mean_standard_errors: Vec<f64>,
    /// Mean of omega(e_i) - omega(-e_i) per coordinate.
    mean_drift: Vec<f64>,
}

pub fn env_sample(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let law = cfg.law()?;
    let sec = section(&cfg.env_sample, "env_sample")?;
    if sec.n_samples == 0 {
        return Err(CliError::Config("env_sample.n_samples must be positive".into()));
    }
    let d = law.d();
    let n = sec.n_samples;
    let n_chunks = n.div_ceil(SAMPLE_CHUNK);

    // Fixed-size chunks, each with its own seed stream: the moment pass
    // parallelizes over chunks and the CSV pass below replays the leading
    // streams serially, so both see the same draws regardless of threads.
    let partials: Vec<(Vec<RunningMoments>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * SAMPLE_CHUNK;
            let hi = n.min(lo + SAMPLE_CHUNK);
            let mut rng = SplitMix64::for_stream(cfg.seed, domain::ENVIRONMENT, c as u64);
            let mut moments = vec![RunningMoments::new(); 2 * d];
            let mut drift = vec![0.0; d];
            for _ in lo..hi {
                let site = law.sample(&mut rng);
                let p = site.probs();
                for (m, &x) in moments.iter_mut().zip(p) {
                    m.push(x);
                }
                for i in 0..d {
                    drift[i] += p[i] - p[i + d];
                }
            }
            (moments, drift)
        })
        .collect();

    let mut moments = vec![RunningMoments::new(); 2 * d];
    let mut drift = vec![0.0; d];
    for (part_m, part_d) in &partials {
        for (m, p) in moments.iter_mut().zip(part_m) {
            m.merge(p);
        }
        for (t, x) in drift.iter_mut().zip(part_d) {
            *t += x;
        }
    }

    let names = direction_names(d);
    let mut columns = vec![col("index", "u64", "draw index within the run")];
    for name in &names {
        columns.push(col(
            format!("w_{name}"),
            "f64",
            format!("transition probability toward {name}"),
        ));
    }
    let mut writer = out.csv_writer("samples.csv", &columns)?;
    let rows = sec.csv_rows.min(n);
    let mut written = 0usize;
    'chunks: for c in 0..n_chunks {
        let lo = c * SAMPLE_CHUNK;
        let hi = n.min(lo + SAMPLE_CHUNK);
        let mut rng = SplitMix64::for_stream(cfg.seed, domain::ENVIRONMENT, c as u64);
        for idx in lo..hi {
            if written == rows {
                break 'chunks;
            }
            let site = law.sample(&mut rng);
            let mut record = vec![idx.to_string()];
            record.extend(site.probs().iter().map(|&p| num(p)));
            write_row(&mut writer, "samples.csv", &record)?;
            written += 1;
        }
    }
    finish_csv(writer, "samples.csv")?;

    out.write_json(
        "moments.json",
        &MomentsJson {
            law,
            seed: cfg.seed,
            n_samples: n,
            directions: names,
            means: moments.iter().map(|m| m.mean()).collect(),
            variances: moments.iter().map(|m| m.variance()).collect(),
            mean_standard_errors: moments.iter().map(|m| m.mean_se()).collect(),
            mean_drift: drift.iter().map(|t| t / n as f64).collect(),
        },
    )
}

#[derive(Serialize)]
struct PmJson<'a> {
    law: &'a EnvironmentLaw,
    seed: u64,
    l: &'a [f64],
    m: f64,
    /// True when the estimated non-front mass strictly decreases along
    /// the sweep, the qualitative signature of polynomial decay.
    monotone_decreasing: bool,
    sweep: &'a [PMReport],
}

pub fn pm_check(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let law = cfg.law()?;
    let sec = section(&cfg.pm, "pm")?;
    if sec.ls.is_empty() {
        return Err(CliError::Config("pm.ls must list at least one box depth".into()));
    }

    let mut sweep: Vec<PMReport> = Vec::with_capacity(sec.ls.len());
    for &big_l in &sec.ls {
        let mut pm_cfg = PMConfig::new(&sec.l, big_l, sec.m);
        pm_cfg.l_tilde = sec.l_tilde;
        pm_cfg.width_cap = sec.width_cap;
        pm_cfg.n_walks = sec.n_walks;
        pm_cfg.horizon = sec.horizon;
        pm_cfg.seed = cfg.seed;
        pm_cfg.exact_envs = sec.exact_envs;
        sweep.push(estimate_pm(law, &pm_cfg).map_err(conditions_err)?);
    }
    let monotone = sweep.windows(2).all(|w| w[1].p_hat < w[0].p_hat);

    let columns = [
        col("big_l", "i64", "box depth L"),
        col("l_tilde", "i64", "box half-width"),
        col("m", "f64", "polynomial order M of the threshold"),
        col("n_walks", "u64", "annealed walks simulated"),
        col("non_front", "u64", "walks that did not exit through the front face"),
        col("censored", "u64", "walks cut off at the horizon, counted as non-front"),
        col("p_hat", "f64", "point estimate of the non-front mass"),
        col("ci_lower", "f64", "Wilson interval lower endpoint"),
        col("ci_upper", "f64", "Wilson interval upper endpoint"),
        col("threshold", "f64", "decay target L^-M"),
        col("verdict", "string", "pass, fail, or inconclusive against the threshold"),
        col("exact_annealed", "f64", "exact annealed mass over sampled environments; empty when the box exceeds the solver cap"),
        col("exact_envs", "u64", "environments behind the exact column"),
        col("decreased_from_previous", "bool", "whether p_hat dropped strictly below the previous row; empty on the first row"),
    ];
    let mut writer = out.csv_writer("pm_sweep.csv", &columns)?;
    for (i, r) in sweep.iter().enumerate() {
        let decreased = if i == 0 {
            String::new()
        } else {
            (r.p_hat < sweep[i - 1].p_hat).to_string()
        };
        write_row(
            &mut writer,
            "pm_sweep.csv",
            [
                r.big_l.to_string(),
                r.l_tilde.to_string(),
                num(r.m),
                r.n_walks.to_string(),
                r.non_front.to_string(),
                r.censored.to_string(),
                num(r.p_hat),
                num(r.ci_lower),
                num(r.ci_upper),
                num(r.threshold),
                format!("{:?}", r.verdict).to_lowercase(),
                r.exact_annealed.map(num).unwrap_or_default(),
                r.exact_envs_used.to_string(),
                decreased,
            ],
        )?;
    }
    finish_csv(writer, "pm_sweep.csv")?;

    out.write_json(
        "pm_report.json",
        &PmJson {
            law,
            seed: cfg.seed,
            l: &sec.l,
            m: sec.m,
            monotone_decreasing: monotone,
            sweep: &sweep,
        },
    )
}

fn battery_from(
    cfg: &ExperimentConfig,
    sec: &RegenSection,
) -> Result<(RegenConfig, Vec<RegenerationRecord>), CliError> {
    let law = cfg.law()?;
    if sec.n_walks == 0 {
        return Err(CliError::Config("regen.n_walks must be positive".into()));
    }
    let base = RegenConfig::new(&sec.l, sec.horizon).map_err(config_err)?;
    let regen_cfg = match (sec.a, sec.confirmation_depth) {
        (None, None) => base,
        (a, depth) => RegenConfig::with_params(
            &sec.l,
            a.unwrap_or(base.a),
            sec.horizon,
            depth.unwrap_or(base.confirmation_depth),
        )
        .map_err(config_err)?,
    };
    let records =
        regeneration_battery(law, &regen_cfg, sec.n_walks, cfg.seed).map_err(config_err)?;
    Ok((regen_cfg, records))
}

#[derive(Serialize)]
struct RegenJson<'a> {
    law: &'a EnvironmentLaw,
    seed: u64,
    l: &'a [f64],
    a: f64,
    confirmation_depth: f64,
    horizon: usize,
    n_walks: usize,
    stats: &'a RenewalStatistics,
    /// velocity +- 2 standard errors, per coordinate.
    velocity_ci: Vec<(f64, f64)>,
}

pub fn regen(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let sec = section(&cfg.regen, "regen")?;
    let (regen_cfg, records) = battery_from(cfg, sec)?;
    let censored = records.iter().filter(|r| r.censored_tail).count();

    let columns = [
        col("index", "u64", "walk index within the battery"),
        col("n_regens", "u64", "accepted regeneration count"),
        col("first_time", "u64", "first accepted time; empty when none"),
        col("last_time", "u64", "last accepted time; empty when none"),
        col("censored_tail", "bool", "whether the window ended before the tail resolved"),
    ];
    let mut writer = out.csv_writer("records.csv", &columns)?;
    for (i, r) in records.iter().enumerate() {
        write_row(
            &mut writer,
            "records.csv",
            [
                i.to_string(),
                r.times.len().to_string(),
                r.times.first().map(|t| t.to_string()).unwrap_or_default(),
                r.times.last().map(|t| t.to_string()).unwrap_or_default(),
                r.censored_tail.to_string(),
            ],
        )?;
    }
    finish_csv(writer, "records.csv")?;

    let stats = renewal_statistics(&records, sec.l.len())
        .map_err(|e| data_err(records.len(), censored, e))?;
    let velocity_ci = stats
        .velocity
        .iter()
        .zip(&stats.velocity_se)
        .map(|(&v, &se)| (v - 2.0 * se, v + 2.0 * se))
        .collect();
    out.write_json(
        "regen.json",
        &RegenJson {
            law: cfg.law()?,
            seed: cfg.seed,
            l: &sec.l,
            a: regen_cfg.a,
            confirmation_depth: regen_cfg.confirmation_depth,
            horizon: sec.horizon,
            n_walks: sec.n_walks,
            stats: &stats,
            velocity_ci,
        },
    )
}

#[derive(Serialize)]
struct TailJson<'a> {
    /// "pareto_self_test" or "first_regeneration_time".
    source: &'a str,
    n: usize,
    /// Known exponent of the synthetic draws, when self-testing.
    true_alpha: Option<f64>,
    estimate: &'a TailEstimate,
}

pub fn tail(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let sec = section(&cfg.tail, "tail")?;
    let (samples, censored, true_alpha, source) = match &sec.pareto_self_test {
        Some(st) => {
            if st.n == 0 {
                return Err(CliError::Config("tail.pareto_self_test.n must be positive".into()));
            }
            if !(st.alpha > 0.0) || !(st.x_m > 0.0) {
                return Err(CliError::Config(
                    "tail.pareto_self_test needs alpha > 0 and x_m > 0".into(),
                ));
            }
            let mut rng = SplitMix64::for_stream(cfg.seed, domain::BATTERY, 0);
            let samples: Vec<f64> = (0..st.n)
                .map(|_| sample_pareto(st.alpha, st.x_m, &mut rng))
                .collect();
            (samples, vec![false; st.n], Some(st.alpha), "pareto_self_test")
        }
        None => {
            let regen_sec = section(&cfg.regen, "regen")?;
            let (_, records) = battery_from(cfg, regen_sec)?;
            let mut samples = Vec::with_capacity(records.len());
            let mut censored = Vec::with_capacity(records.len());
            // The sample is the first regeneration time; a record that
            // never regenerated contributes the horizon as a censored
            // lower bound.
            for r in &records {
                match r.times.first() {
                    Some(&t) => {
                        samples.push(t as f64);
                        censored.push(false);
                    }
                    None => {
                        samples.push(regen_sec.horizon as f64);
                        censored.push(true);
                    }
                }
            }
            (samples, censored, None, "first_regeneration_time")
        }
    };

    let n = samples.len();
    let n_censored = censored.iter().filter(|&&c| c).count();
    let estimate =
        tail_exponent(&samples, &censored, &sec.method).map_err(|e| data_err(n, n_censored, e))?;
    out.write_json(
        "tail.json",
        &TailJson {
            source,
            n,
            true_alpha,
            estimate: &estimate,
        },
    )
}

#[derive(Serialize)]
struct TrapJson<'a> {
    law: &'a EnvironmentLaw,
    seed: u64,
    e0: usize,
    report: &'a TrapTailReport,
    /// Closed-form decay exponent, available for Dirichlet laws.
    predicted_exponent: Option<f64>,
}

pub fn trap_tail(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let law = cfg.law()?;
    let sec = section(&cfg.trap_tail, "trap_tail")?;
    if sec.grid.len() < 2 {
        return Err(CliError::Config("trap_tail.grid needs at least two points".into()));
    }
    if sec.e0 >= law.d() {
        return Err(CliError::Config(format!(
            "trap_tail.e0 = {} out of range for d = {}",
            sec.e0,
            law.d()
        )));
    }
    let report = trap_exit_tail(law, sec.e0, &sec.grid, sec.n_envs, cfg.seed)
        .map_err(|e| data_err(sec.n_envs, 0, e))?;

    let exact: Option<Vec<f64>> = match law {
        EnvironmentLaw::Dirichlet { beta } => Some(
            sec.grid
                .iter()
                .map(|&n| dirichlet_trap_survival_exact(beta, sec.e0, n))
                .collect(),
        ),
        _ => None,
    };
    let predicted = match law {
        EnvironmentLaw::Dirichlet { beta } => Some(dirichlet_trap_exponent(beta, sec.e0)),
        _ => None,
    };

    let columns = [
        col("n", "u64", "time grid point"),
        col("survival", "f64", "Monte Carlo annealed survival at n"),
        col("se", "f64", "standard error of the survival mean"),
        col("exact", "f64", "closed-form annealed survival; empty for non-Dirichlet laws"),
    ];
    let mut writer = out.csv_writer("trap_survival.csv", &columns)?;
    for (i, &n) in report.n_grid.iter().enumerate() {
        write_row(
            &mut writer,
            "trap_survival.csv",
            [
                n.to_string(),
                num(report.survival[i]),
                num(report.survival_se[i]),
                exact.as_ref().map(|e| num(e[i])).unwrap_or_default(),
            ],
        )?;
    }
    finish_csv(writer, "trap_survival.csv")?;

    out.write_json(
        "trap_tail.json",
        &TrapJson {
            law,
            seed: cfg.seed,
            e0: sec.e0,
            report: &report,
            predicted_exponent: predicted,
        },
    )
}

#[derive(Serialize)]
struct CertificateJson<'a> {
    all_pass: bool,
    kappa: f64,
    gamma: f64,
    support_size: usize,
    support_edge_bound: usize,
    length_constants: (i64, i64),
    report: &'a CertificateReport,
}

fn failing_checks(report: &CertificateReport) -> Vec<&'static str> {
    let mut names = Vec::new();
    if !report.unit_strength.passed() {
        names.push("unit_strength");
    }
    if !report.divergence_support.passed() {
        names.push("divergence_support");
    }
    if !report.capacity.passed() {
        names.push("capacity");
    }
    if !report.compact_support.passed() {
        names.push("compact_support");
    }
    if !report.exceptional_bound.passed() {
        names.push("exceptional_bound");
    }
    names
}

pub fn flow_build(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let sec = section(&cfg.flow, "flow")?;
    if sec.xa.len() != sec.xb.len() {
        return Err(CliError::Config(format!(
            "flow.xa has {} coordinates but flow.xb has {}",
            sec.xa.len(),
            sec.xb.len()
        )));
    }
    let radius = match sec.radius {
        Some(r) => r,
        None => {
            BoxFlowSpec::with_default_radius(&sec.xa, sec.direction, &sec.alpha)
                .map_err(config_err)?
                .radius
        }
    };
    let cert =
        build_theta(&sec.xa, &sec.xb, sec.direction, &sec.alpha, radius).map_err(config_err)?;
    let report = verify_flow_certificate(&cert);

    let file = flowfile::from_certificate(&cert, &sec.xa, &sec.xb, sec.direction, radius);
    out.write_json("flow.json", &file)?;
    out.write_json(
        "certificate.json",
        &CertificateJson {
            all_pass: report.all_pass(),
            kappa: cert.kappa,
            gamma: cert.gamma,
            support_size: cert.support_size(),
            support_edge_bound: cert.support_edge_bound,
            length_constants: cert.length_constants,
            report: &report,
        },
    )?;
    if !report.all_pass() {
        return Err(CliError::Certificate(format!(
            "certificate checks failed: {}",
            failing_checks(&report).join(", ")
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyJson<'a> {
    flow_file: String,
    all_pass: bool,
    report: &'a CertificateReport,
}

pub fn flow_verify(
    cfg: &ExperimentConfig,
    out: &OutDir,
    flow: Option<&Path>,
    self_test: Option<usize>,
) -> Result<(), CliError> {
    match (flow, self_test) {
        (Some(path), None) => verify_file(out, path),
        (None, Some(cases)) => solver_self_test(cfg, out, cases),
        (None, None) => Err(CliError::Config(
            "pass --flow FILE to verify a certificate, or --self-test N to cross-check the flow solver".into(),
        )),
        (Some(_), Some(_)) => unreachable!("flags are mutually exclusive"),
    }
}

fn verify_file(out: &OutDir, path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: FlowFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid flow file {}: {e}", path.display())))?;
    let cert = flowfile::to_certificate(&file)?;
    let report = verify_flow_certificate(&cert);
    out.write_json(
        "verify.json",
        &VerifyJson {
            flow_file: path.display().to_string(),
            all_pass: report.all_pass(),
            report: &report,
        },
    )?;
    if !report.all_pass() {
        return Err(CliError::Certificate(format!(
            "certificate checks failed: {}",
            failing_checks(&report).join(", ")
        )));
    }
    Ok(())
}

/// Mirrors the generator the solver's own tests use: small dense digraphs
/// with rational capacities and demands, so the exponential cut oracle
/// stays tractable.
fn random_demand_instance(rng: &mut SplitMix64) -> (DirectedGraph, DemandProblem<num_rational::BigRational>) {
    let n = 2 + (rng.next() % 6) as usize;
    let mut g = DirectedGraph::with_abstract_vertices(n);
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.open01() < 0.45 {
                g.add_edge(u, v).unwrap();
            }
        }
    }
    let capacities = (0..g.n_edges())
        .map(|_| rational((rng.next() % 7) as i64, 1 + (rng.next() % 3) as i64))
        .collect();
    let demands = (0..n)
        .map(|_| {
            if rng.open01() < 0.6 {
                rational((rng.next() % 4) as i64, 1 + (rng.next() % 2) as i64)
            } else {
                rational(0, 1)
            }
        })
        .collect();
    (
        g,
        DemandProblem {
            capacities,
            source: 0,
            demands,
        },
    )
}

#[derive(Serialize)]
struct SelfTestJson {
    cases: usize,
    feasible: usize,
    infeasible: usize,
    /// Instance indices where the solver and the cut oracle disagree.
    disagreements: Vec<usize>,
}

fn solver_self_test(cfg: &ExperimentConfig, out: &OutDir, cases: usize) -> Result<(), CliError> {
    if cases == 0 {
        return Err(CliError::Config("--self-test needs at least one case".into()));
    }
    let results: Vec<(bool, bool)> = (0..cases)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::for_stream(cfg.seed, domain::BATTERY, i as u64);
            let (g, problem) = random_demand_instance(&mut rng);
            let outcome =
                feasible_flow(&g, &problem).expect("generated instance is structurally valid");
            let solver = matches!(outcome, FeasibilityOutcome::Feasible(_));
            let oracle = cut_oracle_feasible(&g, &problem, false);
            (solver, oracle)
        })
        .collect();
    let feasible = results.iter().filter(|r| r.0).count();
    let disagreements: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.0 != r.1)
        .map(|(i, _)| i)
        .collect();
    let n_bad = disagreements.len();
    out.write_json(
        "selftest.json",
        &SelfTestJson {
            cases,
            feasible,
            infeasible: cases - feasible,
            disagreements,
        },
    )?;
    if n_bad > 0 {
        return Err(CliError::Certificate(format!(
            "flow solver and cut oracle disagree on {n_bad} of {cases} random instances"
        )));
    }
    Ok(())
}

pub fn report(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let sec = section(&cfg.report, "report")?;
    let eta = match &sec.eta {
        Some(e) => {
            let law = EnvironmentLaw::Dirichlet {
                beta: sec.beta.clone(),
            };
            Some(
                eta_alpha_estimate(&law, e.alpha, &e.directions, e.n_samples, cfg.seed)
                    .map_err(conditions_err)?,
            )
        }
        None => None,
    };
    let report = hypothesis_report(&sec.beta, sec.theorem5_epsilon, eta).map_err(conditions_err)?;
    out.write_json("hypothesis.json", &report)
}
