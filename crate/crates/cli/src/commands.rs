use std::path::Path;

use happymap::auditors::GroupPredicate;
use happymap::fairness::{
    coverage_table, fit_lower_bound, fit_multivalid, fit_score_interval, fit_two_sided, predicate_masks,
    quantile_projection, AbsResidual, IntervalPredictor, PredictionInterval,
};
use happymap::shift::{fit_missing, fit_multiparity, fit_shift_conformal, fit_universal_l2};
use happymap::synth::{gen_groups, gen_hetero, gen_missing, gen_shift};
use happymap::{audit, fit, Dataset, Domain, FitOutcome, Mapping, MappingSpec, PredictorChain, ProjectionInterval};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{build_predicates, EvalKind, GeneratorSpec, RunConfig, ScoreSpec};
use crate::dataset::{dataset_csv, group_masks, load_dataset};
use crate::error::{CliError, CliResult};
use crate::output::{MetricRow, Outputs, METRIC_HEADER};
use crate::Command;

/// Everything a command reads, already validated.
pub struct Context<'a> {
    pub command: Command,
    pub config: &'a RunConfig,
    pub seed: Option<u64>,
    pub holdout: Option<f64>,
    pub out: &'a mut Outputs,
}

/// Training rows plus the rows metrics are computed on.
struct Splits {
    train: Dataset,
    eval: Dataset,
    eval_name: &'static str,
}

impl Context<'_> {
    fn fit_seed(&self) -> u64 {
        self.seed
            .unwrap_or_else(|| self.config.fit.as_ref().map_or(0, |f| f.seed))
    }

    fn fit_config(&self) -> happymap::FitConfig {
        self.config
            .fit
            .as_ref()
            .expect("validated")
            .to_config(self.seed)
    }

    fn splits(&self) -> CliResult<Splits> {
        let require_label = self.command != Command::Parity;
        let data = load_dataset(self.config.data.as_deref().expect("validated"), require_label)?;
        if let Some(fraction) = self.holdout {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(CliError::Config(format!("--holdout {fraction} must lie in (0, 1)")));
            }
            if data.n() < 2 {
                return Err(CliError::Config("--holdout needs at least two rows".into()));
            }
            let mut perm: Vec<usize> = (0..data.n()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(self.fit_seed()));
            let k = ((fraction * data.n() as f64).round() as usize).clamp(1, data.n() - 1);
            let (mut held, mut kept) = (perm[..k].to_vec(), perm[k..].to_vec());
            held.sort_unstable();
            kept.sort_unstable();
            return Ok(Splits {
                train: data.subset(&kept)?,
                eval: data.subset(&held)?,
                eval_name: "holdout",
            });
        }
        if let Some(path) = &self.config.eval_data {
            let eval = load_dataset(path, require_label)?;
            return Ok(Splits {
                train: data,
                eval,
                eval_name: "eval",
            });
        }
        Ok(Splits {
            eval: data.clone(),
            train: data,
            eval_name: "train",
        })
    }

    fn report_groups(&self, data: &Dataset) -> Vec<(String, Vec<bool>)> {
        match &self.config.groups {
            Some(specs) => predicate_masks(&build_predicates(specs), data),
            None => group_masks(data),
        }
    }

    fn predicates(&self) -> Option<Vec<GroupPredicate>> {
        self.config.groups.as_deref().map(build_predicates)
    }

    fn write_chain(&mut self, name: &str, chain: &PredictorChain) -> CliResult<()> {
        let mut text = chain.to_json();
        text.push('\n');
        self.out.write_bytes(name, text.as_bytes())?;
        Ok(())
    }

    fn write_fit(&mut self, suffix: &str, outcome: &FitOutcome) -> CliResult<()> {
        self.write_chain(&format!("chain{suffix}.json"), &outcome.chain)?;
        self.out.write_report(&format!("report{suffix}"), &outcome.report)?;
        info!(
            "{} steps, status {:?}, final violation {:.6}",
            outcome.report.steps(),
            outcome.report.status,
            outcome.report.final_max_violation
        );
        Ok(())
    }

    fn write_metrics(&mut self, rows: &[MetricRow]) -> CliResult<()> {
        self.out.write_csv_with_header("metrics.csv", rows, &METRIC_HEADER)?;
        Ok(())
    }
}

pub fn run(ctx: &mut Context<'_>) -> CliResult<()> {
    match ctx.command {
        Command::Fit => run_fit(ctx),
        Command::Audit => run_audit(ctx),
        Command::Conformal => run_conformal(ctx),
        Command::Conformal2 => run_conformal2(ctx),
        Command::Multivalid => run_multivalid(ctx),
        Command::ShiftConformal => run_shift_conformal(ctx),
        Command::UniversalL2 => run_universal_l2(ctx),
        Command::Missing => run_missing(ctx),
        Command::Parity => run_parity(ctx),
        Command::Synth => run_synth(ctx),
        Command::Eval => run_eval(ctx),
    }
}

fn label_bounds(labels: &[f64]) -> CliResult<ProjectionInterval> {
    let lo = labels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ProjectionInterval::new(lo, hi)?)
}

/// The configured projection, or one suited to the mapping.
fn projection(config: &RunConfig, mapping: &MappingSpec, labels: &[f64]) -> CliResult<ProjectionInterval> {
    if let Some(p) = &config.proj {
        return p.build();
    }
    match mapping.mapping {
        Mapping::Residual => label_bounds(labels),
        Mapping::Quantile { .. } => Ok(quantile_projection(labels)?),
        Mapping::RawMoment { .. } | Mapping::ParityExpected => Ok(ProjectionInterval::unit()),
    }
}

fn mse_rows(split: &str, preds: &[f64], data: &Dataset, groups: &[(String, Vec<bool>)]) -> Vec<MetricRow> {
    let all = ("all".to_string(), vec![true; data.n()]);
    std::iter::once(&all)
        .chain(groups)
        .map(|(name, mask)| {
            let errs: Vec<f64> = (0..data.n())
                .filter(|&i| mask[i])
                .map(|i| (preds[i] - data.label(i)).powi(2))
                .collect();
            let n = errs.len();
            let mean = errs.iter().sum::<f64>() / n as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
            MetricRow::new("mse", split, name, n, mean).with_std_error((var / n as f64).sqrt())
        })
        .collect()
}

fn run_fit(ctx: &mut Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let s = ctx.splits()?;
    let mapping = config.mapping_spec()?;
    let proj = projection(config, &mapping, s.train.labels())?;
    let family = config.family.as_ref().expect("validated").build(&s.train, proj)?;
    let f0 = config.f0.as_ref().expect("validated").build();
    let outcome = fit(&ctx.fit_config(), &s.train, &family, mapping, f0, proj)?;
    ctx.write_fit("", &outcome)?;

    let preds = outcome.chain.predict_all(&s.eval)?;
    let audited = audit(&preds, &s.eval, &family, mapping)?;
    ctx.out.write_audit("audit", &audited)?;
    let mut rows = vec![
        MetricRow::new("final_max_violation", "train", "all", s.train.n(), outcome.report.final_max_violation),
        MetricRow::new("max_abs_violation", s.eval_name, "all", s.eval.n(), audited.max_abs_violation),
    ];
    if mapping.mapping == Mapping::Residual {
        rows.extend(mse_rows(s.eval_name, &preds, &s.eval, &ctx.report_groups(&s.eval)));
    }
    ctx.write_metrics(&rows)
}

fn read_chain(path: &Path) -> CliResult<PredictorChain> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(PredictorChain::from_json(&text)?)
}

fn run_audit(ctx: &mut Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let data = load_dataset(config.data.as_deref().expect("validated"), true)?;
    let mapping = config.mapping_spec()?;
    let chain = match &config.chain {
        Some(path) => read_chain(path)?,
        None => {
            let proj = projection(config, &mapping, data.labels())?;
            PredictorChain::new(data.d(), config.f0.as_ref().expect("validated").build(), proj)?
        }
    };
    let family = config.family.as_ref().expect("validated").build(&data, chain.proj)?;
    let preds = chain.predict_all(&data)?;
    let report = audit(&preds, &data, &family, mapping)?;
    info!("largest violation {:.6} over {} members", report.max_abs_violation, report.members.len());
    ctx.out.write_audit("audit", &report)
}

fn covered_by<P: PredictionInterval>(interval: &P, data: &Dataset) -> CliResult<(Vec<bool>, Vec<f64>)> {
    let mut covered = Vec::with_capacity(data.n());
    let mut widths = Vec::with_capacity(data.n());
    for (x, &y) in data.rows().zip(data.labels()) {
        let (lo, hi) = interval.interval(x)?;
        covered.push(lo <= y && y <= hi);
        widths.push(hi - lo);
    }
    Ok((covered, widths))
}

fn width_rows(split: &str, widths: &[f64], groups: &[(String, Vec<bool>)]) -> Vec<MetricRow> {
    let all = ("all".to_string(), vec![true; widths.len()]);
    std::iter::once(&all)
        .chain(groups)
        .map(|(name, mask)| {
            let w: Vec<f64> = widths.iter().zip(mask).filter(|(_, &m)| m).map(|(w, _)| *w).collect();
            MetricRow::new("width", split, name, w.len(), w.iter().sum::<f64>() / w.len() as f64)
        })
        .collect()
}

fn run_conformal(ctx: &mut Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let s = ctx.splits()?;
    let delta = config.delta.expect("validated");
    let f0 = config.f0.as_ref().expect("validated").build();
    let groups = ctx.report_groups(&s.eval);
    match &config.score {
        None => {
            let proj = quantile_projection(s.train.labels())?;
            let family = config.family.as_ref().expect("validated").build(&s.train, proj)?;
            let outcome = fit_lower_bound(delta, &s.train, &family, &ctx.fit_config(), f0, config.density_bound)?;
            ctx.write_fit("", &outcome)?;
            let lower = outcome.chain.predict_all(&s.eval)?;
            let covered: Vec<bool> = lower.iter().zip(s.eval.labels()).map(|(l, y)| l <= y).collect();
            ctx.out.write_coverage("coverage.csv", &coverage_table(&covered, &groups, None, 1.0 - delta))
        }
        Some(ScoreSpec::AbsResidual { center }) => {
            let score = AbsResidual { center: center.build() };
            let scores: Vec<f64> = s
                .train
                .rows()
                .zip(s.train.labels())
                .map(|(x, &y)| (y - score.center.evaluate(x)).abs())
                .collect();
            let proj = quantile_projection(&scores)?;
            let family = config.family.as_ref().expect("validated").build(&s.train, proj)?;
            let (interval, outcome) = fit_score_interval(
                delta,
                &s.train,
                &score,
                &family,
                &ctx.fit_config(),
                f0,
                config.density_bound,
            )?;
            ctx.write_fit("", &outcome)?;
            let (covered, widths) = covered_by(&interval, &s.eval)?;
            ctx.out.write_coverage("coverage.csv", &coverage_table(&covered, &groups, None, 1.0 - delta))?;
            ctx.write_metrics(&width_rows(s.eval_name, &widths, &groups))
        }
    }
}

fn run_conformal2(ctx: &mut Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let s = ctx.splits()?;
    let delta = config.delta.expect("validated");
    let proj = quantile_projection(s.train.labels())?;
    let family = config.family.as_ref().expect("validated").build(&s.train, proj)?;
    let f0 = config.f0.as_ref().expect("validated").build();
    let two = fit_two_sided(delta, &s.train, &family, &ctx.fit_config(), f0, config.density_bound)?;
    ctx.write_fit("_lower", &two.lower)?;
    ctx.write_fit("_upper", &two.upper)?;
    let groups = ctx.report_groups(&s.eval);
    let (covered, widths) = covered_by(&two.interval, &s.eval)?;
    ctx.out.write_coverage("coverage.csv", &coverage_table(&covered, &groups, None, 1.0 - delta))?;
    let mut rows = width_rows(s.eval_name, &widths, &groups);
    rows.push(MetricRow::new("crossing_rate", "train", "all", s.train.n(), two.crossing_rate));
    ctx.write_metrics(&rows)
}

fn run_multivalid(ctx: &mut Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let s = ctx.splits()?;
    let delta = config.delta.expect("validated");
    let f0 = config.f0.as_ref().expect("validated").build();
    let predicates = ctx.predicates();
    let (outcome, bins) = fit_multivalid(
        delta,
        &s.train,
        config.lambda,
        predicates.as_deref(),
        &ctx.fit_config(),
        f0,
        config.density_bound,
    )?;
    ctx.write_fit("", &outcome)?;
    let values = outcome.chain.predict_all(&s.eval)?;
    let covered: Vec<bool> = values.iter().zip(s.eval.labels()).map(|(l, y)| l <= y).collect();
    let groups = ctx.report_groups(&s.eval);
    let mut table = coverage_table(&covered, &groups, Some((&bins, &values)), 1.0 - delta);
    table.retain(|r| r.n > 0 || r.bin_id == "all");
    ctx.out.write_coverage("coverage.csv", &table)
}

/// Source rows for fitting and target rows for evaluation. Untagged data
/// counts as source (fitting) and as target (evaluation).
fn domains(s: &Splits) -> CliResult<(Dataset, Dataset)> {
    let source = match s.train.domain() {
        Some(_) => s.train.domain_rows(Domain::Source)?,
        None => s.train.clone(),
    };
    let target = match s.eval.domain() {
        Some(_) => s.eval.domain_rows(Domain::Target)?,
        None => s.eval.clone(),
    };
    Ok((source, target))
}

#[derive(Serialize)]
struct ShiftRow<'a> {
    scenario: &'a str,
    n_source: usize,
    n_target: usize,
    value: f64,
    deviation: f64,
    realizable: &'a str,
}

fn write_shift(ctx: &mut Context<'_>, metric: &str, row: ShiftRow<'_>) -> CliResult<()> {
    ctx.out.write_csv_with_header(
        "shift.csv",
        &[row],
        &["scenario", "n_source", "n_target", metric, "deviation", "realizable"],
    )?;
    Ok(())
}

fn yes_no(flag: Option<bool>) -> &'static str {
    if flag.unwrap_or(false) {
        "yes"
    } else {
        "no"
    }
}

fn run_shift_conformal(ctx: &mut Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let s = ctx.splits()?;
    let (source, target) = domains(&s)?;
    let delta = config.delta.expect("validated");
    let grid = config.grid.as_ref().expect("validated").build();
    let f0 = config.f0.as_ref().expect("validated").build();
    let outcome = fit_shift_conformal(delta, &source, &grid, &ctx.fit_config(), f0, config.density_bound)?;
    ctx.write_fit("", &outcome)?;
    let lower = outcome.chain.predict_all(&target)?;
    let covered: Vec<bool> = lower.iter().zip(target.labels()).map(|(l, y)| l <= y).collect();
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / target.n() as f64;
    let groups = ctx.report_groups(&target);
    ctx.out.write_coverage("coverage.csv", &coverage_table(&covered, &groups, None, 1.0 - delta))?;
    write_shift(
        ctx,
        "target_coverage",
        ShiftRow {
            scenario: "shift-conformal",
            n_source: source.n(),
            n_target: target.n(),
            value: coverage,
            deviation: coverage - (1.0 - delta),
            realizable: yes_no(config.realizable),
        },
    )
}

fn label_mse(preds: &[f64], data: &Dataset) -> f64 {
    preds.iter().zip(data.labels()).map(|(f, y)| (f - y).powi(2)).sum::<f64>() / data.n() as f64
}

fn run_universal_l2(ctx: &mut Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let s = ctx.splits()?;
    let (source, target) = domains(&s)?;
    let grid = config.grid.as_ref().expect("validated").build();
    let baselines: Vec<_> = config.baselines.as_ref().expect("validated").iter().map(|b| b.build()).collect();
    let f0 = config.f0.as_ref().expect("validated").build();
    let outcome = fit_universal_l2(&source, &grid, &baselines, &ctx.fit_config(), f0.clone())?;
    ctx.write_fit("", &outcome)?;
    let fitted = label_mse(&outcome.chain.predict_all(&target)?, &target);
    let start = PredictorChain::new(target.d(), f0, ProjectionInterval::unit())?;
    let untouched = label_mse(&start.predict_all(&target)?, &target);
    write_shift(
        ctx,
        "target_mse",
        ShiftRow {
            scenario: "universal-l2",
            n_source: source.n(),
            n_target: target.n(),
            value: fitted,
            deviation: fitted - untouched,
            realizable: yes_no(config.realizable),
        },
    )
}

fn run_missing(ctx: &mut Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let s = ctx.splits()?;
    let grid = config.grid.as_ref().expect("validated").build();
    let baselines: Vec<_> = config.baselines.as_ref().expect("validated").iter().map(|b| b.build()).collect();
    let f0 = config.f0.as_ref().expect("validated").build();
    let outcome = fit_missing(&s.train, &grid, &baselines, &ctx.fit_config(), f0)?;
    ctx.write_fit("", &outcome)?;
    let complete_train = s.train.complete_flags().iter().filter(|&&c| c).count();
    let eval = s.eval.complete_cases()?;
    let preds = outcome.chain.predict_all(&eval)?;
    let mut rows = vec![MetricRow::new(
        "complete_fraction",
        "train",
        "all",
        s.train.n(),
        complete_train as f64 / s.train.n() as f64,
    )];
    rows.extend(mse_rows(s.eval_name, &preds, &eval, &ctx.report_groups(&eval)));
    ctx.write_metrics(&rows)
}

#[derive(Serialize)]
struct ParityRow {
    group_id: String,
    n: usize,
    selection_rate_before: f64,
    selection_rate: f64,
    centered_violation: f64,
}

fn run_parity(ctx: &mut Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let s = ctx.splits()?;
    let predicates = ctx.predicates().expect("validated");
    let f0 = config.f0.as_ref().expect("validated").build();
    let outcome = fit_multiparity(&s.train, &predicates, config.group_depth, &ctx.fit_config(), f0.clone())?;
    ctx.write_fit("", &outcome)?;
    let after = outcome.chain.predict_all(&s.eval)?;
    let start = PredictorChain::new(s.eval.d(), f0, ProjectionInterval::unit())?;
    let before = start.predict_all(&s.eval)?;
    let n = s.eval.n() as f64;
    let rows: Vec<ParityRow> = predicate_masks(&predicates, &s.eval)
        .into_iter()
        .map(|(name, mask)| {
            let members: Vec<usize> = (0..s.eval.n()).filter(|&i| mask[i]).collect();
            let mass = members.len() as f64 / n;
            let rate = |v: &[f64]| members.iter().map(|&i| v[i]).sum::<f64>() / members.len() as f64;
            let centered = (0..s.eval.n())
                .map(|i| (f64::from(u8::from(mask[i])) - mass) * after[i])
                .sum::<f64>()
                / n;
            ParityRow {
                group_id: name,
                n: members.len(),
                selection_rate_before: rate(&before),
                selection_rate: rate(&after),
                centered_violation: centered,
            }
        })
        .collect();
    ctx.out.write_csv_with_header(
        "parity.csv",
        &rows,
        &["group_id", "n", "selection_rate_before", "selection_rate", "centered_violation"],
    )?;
    Ok(())
}

#[derive(Serialize)]
struct OracleInfo {
    generator: &'static str,
    seed: u64,
    n: usize,
    d: usize,
    density_bound: f64,
    /// Source propensity parameters, intercept first (shift only).
    theta: Option<Vec<f64>>,
    masked_column: Option<usize>,
    levels: Vec<f64>,
    columns: Vec<String>,
}

fn concat_domains(source: &Dataset, target: &Dataset) -> CliResult<Dataset> {
    let mut rows: Vec<Vec<f64>> = source.rows().map(<[f64]>::to_vec).collect();
    rows.extend(target.rows().map(<[f64]>::to_vec));
    let mut labels = source.labels().to_vec();
    labels.extend_from_slice(target.labels());
    let mut tags = vec![Domain::Source; source.n()];
    tags.extend(vec![Domain::Target; target.n()]);
    Ok(Dataset::from_rows(rows, labels)?.with_domain(tags)?)
}

fn run_synth(ctx: &mut Context<'_>) -> CliResult<()> {
    let spec = ctx.config.synth.as_ref().expect("validated");
    let seed = ctx.seed.unwrap_or(spec.seed);
    let levels = spec.oracle_levels.clone();
    let mut columns = vec!["mean".to_string()];
    columns.extend(levels.iter().map(|l| format!("q_{l}")));

    type Truth = Box<dyn Fn(&[f64]) -> Vec<f64>>;
    let (mut data, truth, name, density_bound, theta): (Dataset, Truth, _, _, _) = match &spec.generator {
        GeneratorSpec::Hetero { n, d } => {
            let (data, oracle) = gen_hetero(*n, *d, seed)?;
            let levels = levels.clone();
            let truth: Truth = Box::new(move |x| {
                std::iter::once(oracle.cond_mean(x))
                    .chain(levels.iter().map(|&l| oracle.cond_quantile(x, l)))
                    .collect()
            });
            (data, truth, "hetero", oracle.density_bound(), None)
        }
        GeneratorSpec::Shift { n_source, n_target, .. } => {
            let shift = spec.generator.shift_spec().expect("shift generator");
            let scenario = gen_shift(*n_source, *n_target, shift, seed)?;
            let data = concat_domains(&scenario.source, &scenario.target)?;
            let oracle = scenario.oracle.clone();
            let levels = levels.clone();
            columns.push("ratio".into());
            let truth: Truth = Box::new(move |x| {
                std::iter::once(oracle.cond_mean(x))
                    .chain(levels.iter().map(|&l| oracle.cond_quantile(x, l)))
                    .chain(std::iter::once(oracle.true_ratio(x)))
                    .collect()
            });
            (
                data,
                truth,
                "shift",
                scenario.oracle.density_bound(),
                Some(scenario.oracle.theta()),
            )
        }
    };
    // Oracle values come from the uncorrupted features.
    let mut table: Vec<Vec<f64>> = data.rows().map(truth).collect();
    let mut masked_column = None;
    if let Some(missing) = &spec.missing {
        let corrupted = gen_missing(&data, &missing.mechanism.build(), missing.masked_column, seed)?;
        columns.push("propensity".into());
        for (row, p) in table.iter_mut().zip(&corrupted.propensity) {
            row.push(*p);
        }
        masked_column = Some(corrupted.masked_column);
        data = corrupted.data;
    }
    if let Some(groups) = &spec.groups {
        data = gen_groups(&data, &build_predicates(groups), spec.group_depth)?;
    }

    ctx.out.write_bytes("data.csv", &dataset_csv(&data)?)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(&columns)?;
    for row in &table {
        writer.write_record(row.iter().map(f64::to_string))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::Config(format!("csv buffer: {e}")))?;
    ctx.out.write_bytes("oracle.csv", &bytes)?;
    ctx.out.write_json(
        "oracle.json",
        &OracleInfo {
            generator: name,
            seed,
            n: data.n(),
            d: data.d(),
            density_bound,
            theta,
            masked_column,
            levels,
            columns,
        },
    )?;
    Ok(())
}

fn run_eval(ctx: &mut Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let spec = config.eval.as_ref().expect("validated");
    let s = ctx.splits()?;
    let data = &s.eval;
    let split = s.eval_name;
    let groups = ctx.report_groups(data);
    let chain = spec.chain.as_deref().map(read_chain).transpose()?;
    let rows: Vec<MetricRow> = match spec.kind {
        EvalKind::Coverage => {
            let target = spec.target.unwrap_or_else(|| 1.0 - config.delta.expect("validated"));
            let lower = chain.expect("validated").predict_all(data)?;
            let covered: Vec<bool> = lower.iter().zip(data.labels()).map(|(l, y)| l <= y).collect();
            coverage_rows(split, &covered, &groups, target)
        }
        EvalKind::Interval => {
            let upper = spec.upper_chain.as_deref().map(read_chain).transpose()?;
            let delta = config.delta.unwrap_or(0.0);
            let interval = IntervalPredictor {
                delta,
                lower: chain,
                upper,
            };
            let target = spec.target.unwrap_or(1.0 - delta);
            let (covered, widths) = covered_by(&interval, data)?;
            let mut rows = coverage_rows(split, &covered, &groups, target);
            rows.extend(width_rows(split, &widths, &groups));
            rows
        }
        EvalKind::Mse => {
            let preds = chain.expect("validated").predict_all(data)?;
            mse_rows(split, &preds, data, &groups)
        }
        EvalKind::Violation => {
            let chain = chain.expect("validated");
            let mapping = config.mapping_spec()?;
            let family = config.family.as_ref().expect("validated").build(data, chain.proj)?;
            let preds = chain.predict_all(data)?;
            let report = audit(&preds, data, &family, mapping)?;
            let mut rows = vec![MetricRow::new("max_abs_violation", split, "all", data.n(), report.max_abs_violation)];
            rows.extend(
                report
                    .members
                    .iter()
                    .map(|m| MetricRow::new("violation", split, &m.auditor_id, data.n(), m.violation)),
            );
            rows
        }
    };
    ctx.write_metrics(&rows)
}

fn coverage_rows(split: &str, covered: &[bool], groups: &[(String, Vec<bool>)], target: f64) -> Vec<MetricRow> {
    coverage_table(covered, groups, None, target)
        .into_iter()
        .map(|r| MetricRow::new("coverage", split, &r.group_id, r.n, r.coverage).with_std_error(r.std_error))
        .collect()
}
