use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use stoploss::block::{build_block, write_cdf_csv};
use stoploss::intensity::{simulate_path, IntensityModel, TimeGrid};
use stoploss::loss::{MarkIndexing, SeverityMap};
use stoploss::marginal::MarginalSpec;
use stoploss::oracle::{
    ipp_check_grid, lemma_law_check, pricing_agreement, simulate_losses, CheckReport, CheckSettings, Functional,
    Integrand,
};
use stoploss::pricing::{malliavin_expectation, stop_loss_price, ContractPayoff, PricingResult};
use stoploss::risk::{expected_shortfall, expected_shortfall_poisson, ShortfallResult, Threshold};
use stoploss::rng::RandomStream;

use crate::config::{check_alpha, BlockMode, CheckName, EsMode, RunConfig};
use crate::error::CliError;

/// A result ready to be written in either output format.
pub struct Document {
    pub json: Value,
    pub csv: String,
    /// Validation outcome; `None` for commands without checks.
    pub passed: Option<bool>,
}

fn with_echo<T: Serialize>(body: &T, cfg: &RunConfig) -> Result<Value, CliError> {
    let mut v = serde_json::to_value(body).map_err(|e| CliError::Numeric(e.to_string()))?;
    let echo = serde_json::to_value(cfg).map_err(|e| CliError::Numeric(e.to_string()))?;
    match &mut v {
        Value::Object(map) => {
            map.insert("seed".into(), json!(cfg.numerics.seed));
            map.insert("config".into(), echo);
            Ok(v)
        }
        _ => Ok(json!({ "result": v, "seed": cfg.numerics.seed, "config": echo })),
    }
}

pub fn run_pricing(cfg: &RunConfig) -> Result<PricingResult, CliError> {
    let model = cfg.intensity();
    let claim = cfg.claim_model()?;
    let contract = cfg.contract()?;
    let numerics = cfg.numerics()?;
    let result = match contract.payoff {
        ContractPayoff::Custom(_) => malliavin_expectation(&model, &claim, &contract, &numerics)?,
        _ => stop_loss_price(&model, &claim, &contract, &numerics)?,
    };
    Ok(result)
}

pub fn price(cfg: &RunConfig) -> Result<Document, CliError> {
    let r = run_pricing(cfg)?;
    let csv = format!(
        "estimate,std_error,ci95_low,ci95_high,seed\n{},{},{},{},{}\n",
        r.estimate, r.std_error, r.ci95.0, r.ci95.1, cfg.numerics.seed
    );
    Ok(Document {
        json: with_echo(&r, cfg)?,
        csv,
        passed: None,
    })
}

#[derive(Serialize)]
struct EsDoc {
    alpha: f64,
    mode: EsMode,
    threshold: Threshold,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[serde(flatten)]
    result: ShortfallResult,
}

pub fn es(cfg: &RunConfig) -> Result<Document, CliError> {
    let alpha = cfg
        .es
        .alpha
        .ok_or_else(|| CliError::Config("missing field `es.alpha` (or pass --alpha)".into()))?;
    check_alpha(alpha)?;
    let threshold = cfg.es.threshold;
    let contract = &cfg.contract;
    let (result, samples) = match cfg.es.mode {
        EsMode::Analytic => {
            let lambda0 = match cfg.intensity() {
                IntensityModel::Constant { lambda0 } => lambda0,
                _ => return Err(CliError::Config("analytic mode needs model.kind = \"constant\"".into())),
            };
            let unit = match cfg.claims.eps {
                MarginalSpec::Constant { value } => value,
                _ => {
                    return Err(CliError::Config(
                        "analytic mode needs claims.eps.kind = \"constant\"".into(),
                    ))
                }
            };
            if !matches!(cfg.claim_model()?.severity, SeverityMap::Identity) || contract.kappa != 0.0 {
                return Err(CliError::Config(
                    "analytic mode needs claims.severity = \"identity\" and contract.kappa = 0".into(),
                ));
            }
            (
                expected_shortfall_poisson(lambda0 * contract.horizon, unit, alpha, threshold)?,
                None,
            )
        }
        EsMode::MonteCarlo => {
            let draws = simulate_losses(
                &cfg.intensity(),
                &cfg.claim_model()?,
                contract.horizon,
                contract.kappa,
                cfg.es.samples,
                cfg.numerics.grid,
                cfg.numerics.seed,
            )?;
            let mut losses: Vec<f64> = draws.into_iter().map(|(l, _)| l).collect();
            losses.sort_by(f64::total_cmp);
            (expected_shortfall(&losses, alpha, threshold)?, Some(cfg.es.samples))
        }
    };
    let doc = EsDoc {
        alpha,
        mode: cfg.es.mode,
        threshold,
        samples,
        result,
    };
    let csv = format!(
        "alpha,beta,p_below,truncated_mean,es,std_error,seed\n{},{},{},{},{},{},{}\n",
        alpha, result.beta, result.p_below, result.truncated_mean, result.es, result.std_error, cfg.numerics.seed
    );
    Ok(Document {
        json: with_echo(&doc, cfg)?,
        csv,
        passed: None,
    })
}

/// Sorted losses whose empirical CDF the `block` command reports.
pub fn block_sample(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let model = cfg.intensity();
    let claim = cfg.claim_model()?;
    let (horizon, kappa) = (cfg.contract.horizon, cfg.contract.kappa);
    let n = cfg.block.samples.unwrap_or(cfg.numerics.n_inner);
    let seed = cfg.numerics.seed;
    match cfg.block.mode {
        BlockMode::Conditional => {
            let grid = TimeGrid::uniform(horizon, cfg.numerics.grid)?;
            let root = RandomStream::new(seed, 0);
            let path = Arc::new(simulate_path(&model, &grid, &mut root.derive(0))?);
            let block = build_block(&path, &claim, kappa, n, &mut root.derive(1))?;
            Ok(block.samples().to_vec())
        }
        BlockMode::Unconditional => {
            if n < 2 {
                return Err(CliError::Config(
                    "block.samples must be at least 2 in unconditional mode".into(),
                ));
            }
            let draws = simulate_losses(&model, &claim, horizon, kappa, n, cfg.numerics.grid, seed)?;
            let mut losses: Vec<f64> = draws.into_iter().map(|(l, _)| l).collect();
            losses.sort_by(f64::total_cmp);
            Ok(losses)
        }
    }
}

pub fn block(cfg: &RunConfig) -> Result<Document, CliError> {
    let sorted = block_sample(cfg)?;
    let mut csv = Vec::new();
    write_cdf_csv(&sorted, &mut csv)?;
    let csv = String::from_utf8(csv).map_err(|e| CliError::Io(e.to_string()))?;
    let n = sorted.len() as f64;
    let mut rows = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        if sorted.get(i + 1) != Some(&x) {
            rows.push((x, (i + 1) as f64 / n));
        }
    }
    let body = json!({
        "mode": cfg.block.mode,
        "samples": sorted.len(),
        "rows": rows,
    });
    Ok(Document {
        json: with_echo(&body, cfg)?,
        csv,
        passed: None,
    })
}

/// Runs the requested checks. `mutate` swaps the law check for its broken
/// re-indexing variant.
pub fn validation_reports(cfg: &RunConfig, mutate: bool) -> Result<Vec<CheckReport>, CliError> {
    let v = &cfg.validate;
    if v.checks.is_empty() {
        return Err(CliError::Config("validate.checks is empty; nothing to run".into()));
    }
    let model = cfg.intensity();
    let claim = cfg.claim_model()?;
    let contract = cfg.contract()?;
    let numerics = cfg.numerics()?;
    let settings = CheckSettings {
        horizon: contract.horizon,
        kappa: contract.kappa,
        grid_points: numerics.grid_points,
        quadrature: numerics.quadrature,
        seed: numerics.seed,
    };
    let mut reports = Vec::new();
    for check in &v.checks {
        match check {
            CheckName::Ipp => reports.extend(ipp_check_grid(
                &model,
                &claim,
                &settings,
                &[Functional::One, Functional::ExpNegLoss],
                &[Integrand::One, Integrand::Discount],
                v.n_ipp,
            )?),
            CheckName::Law => {
                let indexing = if mutate {
                    MarkIndexing::Unshifted
                } else {
                    MarkIndexing::ByJumpOrder
                };
                reports.push(lemma_law_check(
                    &model, &claim, &settings, v.law_time, v.n_law, indexing,
                )?);
                let mut control =
                    lemma_law_check(&model, &claim, &settings, v.law_time, v.n_law, MarkIndexing::Unshifted)?;
                control.name = format!("negative control: {}", control.name);
                control.criterion = "at least one KS comparison rejects at significance 0.01".into();
                control.passed = !control.passed;
                reports.push(control);
            }
            CheckName::Pricing => reports.extend(pricing_agreement(
                &model,
                &claim,
                &contract,
                &numerics,
                v.n_direct,
                v.lattice_step,
            )?),
        }
    }
    Ok(reports)
}

pub fn validate(cfg: &RunConfig, mutate: bool) -> Result<Document, CliError> {
    let reports = validation_reports(cfg, mutate)?;
    let passed = reports.iter().all(|r| r.passed);
    let mut csv = String::from("name,lhs,lhs_std_error,rhs,rhs_std_error,discrepancy,passed,seed\n");
    for r in &reports {
        csv += &format!(
            "\"{}\",{},{},{},{},{},{},{}\n",
            r.name.replace('"', "\"\""),
            r.lhs.mean,
            r.lhs.std_error,
            r.rhs.mean,
            r.rhs.std_error,
            r.discrepancy,
            r.passed,
            r.seed
        );
    }
    let body = json!({ "passed": passed, "reports": reports });
    Ok(Document {
        json: with_echo(&body, cfg)?,
        csv,
        passed: Some(passed),
    })
}

pub fn bench(cfg: &RunConfig, threads: usize) -> Result<Document, CliError> {
    let start = Instant::now();
    let r = run_pricing(cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let paths_per_second = r.budget.n_outer as f64 / seconds.max(1e-9);
    let csv = format!(
        "wall_seconds,paths_per_second,threads,estimate,std_error,seed\n{},{},{},{},{},{}\n",
        seconds, paths_per_second, threads, r.estimate, r.std_error, cfg.numerics.seed
    );
    let body = json!({
        "wall_seconds": seconds,
        "paths_per_second": paths_per_second,
        "threads": threads,
        "estimate": r.estimate,
        "std_error": r.std_error,
        "budget": r.budget,
    });
    Ok(Document {
        json: with_echo(&body, cfg)?,
        csv,
        passed: None,
    })
}
