use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Duration, TimeZone, Utc};
use holdwise::evaluation::{locate_window, report, window_indices, EvalOptions, ModelHandle, WindowForecast, WindowForecaster};
use holdwise::gaussian::{write_fits_csv, FitRecord};
use holdwise::hpo::{apply_brnn, apply_dqr, run_search, Budget, SearchSpace};
use holdwise::io::write_json;
use holdwise::multilink::{empirical_interval, LinkLaw, RoutePlan};
use holdwise::prep::{
    read_observations_csv, write_observations_csv, GridConfig, LinkIndex, Observation, PreparedDataset, Split, SplitSpec,
    SECONDS_PER_DAY,
};
use holdwise::training::{StopReason, TrainingLog};
use holdwise::transfer::{
    evaluate_policy, journey_fixture, read_pair_samples_csv, read_pairs_csv, write_pair_samples_csv, write_pairs_csv,
    JourneyPair, PairForecast, PolicyEvaluation,
};
use holdwise::Error;
use rand::Rng;
use serde_json::json;

use crate::artifacts::{RunDir, RunKey};
use crate::config::RunConfig;
use crate::{Cli, Command, Global, ModelKind, SimulateArgs, TunableKind, WindowSelect};

/// Training and validation weeks per test week when the split is derived.
const SPLIT_RATIO: [usize; 3] = [13, 2, 2];

struct Ctx<'a> {
    global: &'a Global,
    cfg: RunConfig,
}

impl Ctx<'_> {
    /// Output directory of a run, or `None` when an identical run already finished.
    fn begin(&self, key: &RunKey) -> Result<Option<RunDir>> {
        let run = RunDir::resolve(&self.global.artifacts, self.global.out.as_deref(), key, self.global.force)?;
        if run.up_to_date {
            println!("up to date: {}", run.path.display());
            return Ok(None);
        }
        Ok(Some(run))
    }

    fn eval_options(&self, data: &PreparedDataset) -> Result<EvalOptions> {
        let route = if self.cfg.eval.route.is_empty() { None } else { Some(route_indices(data, &self.cfg.eval.route)?) };
        Ok(EvalOptions {
            coverages: self.cfg.eval.coverages.clone(),
            n_samples: self.cfg.samples,
            seed: self.cfg.seed,
            route,
            max_windows: self.cfg.eval.max_windows,
        })
    }
}

fn finish(run: &RunDir, key: &RunKey) -> Result<()> {
    run.finish(key)?;
    println!("wrote {}", run.path.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.global.config.as_deref())?.with_overrides(cli.global.seed, cli.global.samples)?;
    let ctx = Ctx { global: &cli.global, cfg };
    match &cli.command {
        Command::Synth { journeys } => synth(&ctx, *journeys),
        Command::Prepare { input, split } => prepare(&ctx, input, split.as_deref()),
        Command::Train { model, data } => train(&ctx, *model, data),
        Command::Predict { model, data, select, coverage } => predict(&ctx, model, data, select, *coverage),
        Command::FitGaussians { model, data, select } => fit_gaussians(&ctx, model, data, select),
        Command::Aggregate { model, data, select, route, start_horizon } => {
            aggregate(&ctx, model, data, select, route, *start_horizon)
        }
        Command::Evaluate { model, data, split } => evaluate(&ctx, model, data, *split),
        Command::SimulateTransfer(args) => simulate_transfer(&ctx, args),
        Command::Hpo { model, data, trials, max_seconds } => hpo(&ctx, *model, data, *trials, *max_seconds),
    }
}

fn load_data(path: &Path) -> Result<PreparedDataset> {
    PreparedDataset::load(path).with_context(|| format!("loading prepared data from {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelHandle> {
    ModelHandle::load(path).with_context(|| format!("loading checkpoint from {}", path.display()))
}

fn route_indices(data: &PreparedDataset, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| data.meta.links.get(id).ok_or_else(|| Error::UnknownLink(id.clone()).into()))
        .collect()
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn synth(ctx: &Ctx, journeys: bool) -> Result<()> {
    let key = RunKey::new("synth", json!({ "journeys": journeys }), json!({ "synth": ctx.cfg.synth, "journeys": ctx.cfg.journeys }));
    let Some(run) = ctx.begin(&key)? else { return Ok(()) };
    let set = holdwise::synth::generate(&ctx.cfg.synth)?;
    write_observations_csv(&run.file("observations.csv"), &set.observations)?;
    write_json(&run.file("truth.json"), &set.truth)?;
    println!("{} links, {} observations, {} grid steps", set.link_ids.len(), set.observations.len(), set.grid.n_steps());
    if journeys {
        let fixture = journey_fixture(&ctx.cfg.journeys)?;
        write_pairs_csv(&run.file("pairs.csv"), &fixture.pairs)?;
        let samples: Vec<(usize, PairForecast)> =
            fixture.pairs.iter().map(|p| (p.pair_id, fixture.forecasts[p.pair_id].clone())).collect();
        write_pair_samples_csv(&run.file("pair_samples.csv"), &samples)?;
        println!("{} transfer pairs", fixture.pairs.len());
    }
    finish(&run, &key)
}

fn local_midnight(t: DateTime<Utc>, offset_s: i64) -> DateTime<Utc> {
    let local = t.timestamp() + offset_s;
    let day = local.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY;
    Utc.timestamp_opt(day - offset_s, 0).single().expect("in range")
}

/// Local midnight before the first observation to local midnight after the last.
fn derive_period(obs: &[Observation], offset_s: i64) -> (DateTime<Utc>, DateTime<Utc>) {
    let first = obs.iter().map(|o| o.observed_at).min().expect("non-empty");
    let last = obs.iter().map(|o| o.observed_at).max().expect("non-empty");
    (local_midnight(first, offset_s), local_midnight(last, offset_s) + Duration::days(1))
}

/// Splits the available whole weeks in the fixed ratio, keeping at least one
/// week per part.
fn derive_split(grid: &GridConfig) -> Result<SplitSpec> {
    let weeks = grid.n_steps() / grid.steps_per_week();
    if weeks < 3 {
        bail!(Error::invalid(format!("{weeks} whole weeks of data; at least 3 are needed to split")));
    }
    let total: usize = SPLIT_RATIO.iter().sum();
    let part = ((weeks * SPLIT_RATIO[1]) as f64 / total as f64).round().max(1.0) as usize;
    Ok(SplitSpec { train_weeks: weeks - 2 * part, validation_weeks: part, test_weeks: Some(part), drop_last_window: false })
}

fn prepare(ctx: &Ctx, input: &Path, split_flag: Option<&[usize]>) -> Result<()> {
    let mut cfg = ctx.cfg.clone();
    if let Some(w) = split_flag {
        if w.len() != 3 {
            bail!(Error::invalid("--split takes three week counts: train,validation,test"));
        }
        cfg.split = Some(SplitSpec {
            train_weeks: w[0],
            validation_weeks: w[1],
            test_weeks: Some(w[2]),
            drop_last_window: cfg.split.is_some_and(|s| s.drop_last_window),
        });
    }
    let key = RunKey::new("prepare", json!({}), json!({ "grid": cfg.grid, "split": cfg.split, "table": cfg.table }))
        .input("observations", input)?;
    let Some(run) = ctx.begin(&key)? else { return Ok(()) };
    let obs = read_observations_csv(input).with_context(|| format!("reading {}", input.display()))?;
    if obs.is_empty() {
        bail!(Error::invalid(format!("{}: no observations", input.display())));
    }
    let links = LinkIndex::from_observations(&obs);
    let g = &cfg.grid;
    let (start, end) = match (g.period_start, g.period_end) {
        (Some(s), Some(e)) => (s, e),
        (s, e) => {
            let (ds, de) = derive_period(&obs, g.utc_offset_s);
            (s.unwrap_or(ds), e.unwrap_or(de))
        }
    };
    let mut grid = GridConfig::new(links.len(), start, end);
    grid.frequency = g.frequency;
    grid.window_u = g.window_u;
    grid.horizon_k = g.horizon_k;
    grid.utc_offset_s = g.utc_offset_s;
    grid.validate()?;
    let split = match cfg.split {
        Some(s) => s,
        None => derive_split(&grid)?,
    };
    let data = PreparedDataset::build(&obs, grid, links, split, cfg.table)?;
    data.save(&run.path)?;
    print!("{}", prepared_summary(&data));
    finish(&run, &key)
}

fn prepared_summary(data: &PreparedDataset) -> String {
    let m = &data.meta;
    let mut out = format!(
        "links {}\nobservations {}\nobserved cells {}\nperiod {} .. {}\n",
        m.links.len(),
        m.observation_count,
        m.observed_cells,
        rfc3339(m.grid.period_start),
        rfc3339(m.grid.period_end)
    );
    out.push_str(&format!("{:<12}{:>10}{:>20}{:>20}\n", "split", "steps", "x", "y"));
    for s in Split::ALL {
        let r = data.split_range(s);
        let t = data.split(s);
        let dims = |shape: &[usize]| shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" x ");
        out.push_str(&format!("{:<12}{:>10}{:>20}{:>20}\n", s.name(), r.len(), dims(t.x.shape()), dims(t.y.shape())));
    }
    out
}

fn diverged(log: &TrainingLog) -> Result<()> {
    if log.stop_reason == StopReason::Diverged {
        bail!(Error::Numerical(format!(
            "training diverged; the checkpoint holds the best finite parameters (epoch {:?})",
            log.best_epoch
        )));
    }
    Ok(())
}

fn train(ctx: &Ctx, kind: ModelKind, data_dir: &Path) -> Result<()> {
    let (name, section) = match kind {
        ModelKind::Dqr => ("train-dqr", json!(ctx.cfg.dqr)),
        ModelKind::Brnn => ("train-brnn", json!(ctx.cfg.brnn)),
        ModelKind::Kalman => ("train-kalman", json!(ctx.cfg.kalman)),
    };
    let key = RunKey::new(name, json!({}), section).input("data", data_dir)?;
    let Some(run) = ctx.begin(&key)? else { return Ok(()) };
    let data = load_data(data_dir)?;
    let (train, val) = (data.split(Split::Train), data.split(Split::Validation));
    match kind {
        ModelKind::Dqr => {
            let (model, log) = holdwise::dqr::train_dqr(train, val, &ctx.cfg.dqr)?;
            model.save(&run.path, json!({ "training": log_extra(&log) }))?;
            log.write_csv(&run.file("training_log.csv"))?;
            report_training(&log);
            diverged(&log)?;
        }
        ModelKind::Brnn => {
            let (model, log) = holdwise::brnn::train_brnn(train, val, &ctx.cfg.brnn)?;
            model.save(&run.path, json!({ "training": log_extra(&log) }))?;
            log.write_csv(&run.file("training_log.csv"))?;
            report_training(&log);
            diverged(&log)?;
        }
        ModelKind::Kalman => {
            let fit = holdwise::evaluation::fit_kalman(&data, ctx.cfg.kalman)?;
            fit.params.save(
                &run.path,
                json!({ "em": { "iterations": fit.iterations, "converged": fit.converged, "log_likelihood": fit.log_likelihood } }),
            )?;
            let mut w = csv::Writer::from_path(run.file("em_trace.csv"))?;
            w.write_record(["iteration", "log_likelihood"])?;
            for (i, ll) in fit.log_likelihood.iter().enumerate() {
                w.write_record([i.to_string(), ll.to_string()])?;
            }
            w.flush()?;
            println!(
                "EM: {} iterations, converged {}, log-likelihood {:.3}",
                fit.iterations,
                fit.converged,
                fit.log_likelihood.last().copied().unwrap_or(f64::NAN)
            );
        }
    }
    finish(&run, &key)
}

fn log_extra(log: &TrainingLog) -> serde_json::Value {
    json!({
        "best_epoch": log.best_epoch,
        "best_val_loss": log.best_val_loss,
        "stop_reason": log.stop_reason,
        "epochs": log.epochs.len(),
        "skipped_steps": log.skipped_steps,
    })
}

fn report_training(log: &TrainingLog) {
    println!(
        "{} epochs, best validation loss {:.5} at epoch {:?}, stop: {:?}",
        log.epochs.len(),
        log.best_val_loss,
        log.best_epoch,
        log.stop_reason
    );
}

fn selected_windows(data: &PreparedDataset, select: &WindowSelect, max_windows: Option<usize>) -> Result<Vec<(Split, usize)>> {
    if let Some(at) = select.at {
        let step = data
            .grid()
            .step_of(at)
            .ok_or_else(|| Error::invalid(format!("{} lies outside the prepared period", rfc3339(at))))?;
        let found = locate_window(data, step)
            .ok_or_else(|| Error::invalid(format!("no window forecasts from {}", rfc3339(at))))?;
        return Ok(vec![found]);
    }
    let t = data.split(select.split);
    if let Some(i) = select.window {
        if i >= t.n_samples() {
            bail!(Error::invalid(format!("window {i} outside the {} windows of {}", t.n_samples(), select.split.name())));
        }
        return Ok(vec![(select.split, i)]);
    }
    Ok(window_indices(t, max_windows).into_iter().map(|i| (select.split, i)).collect())
}

fn window_seed(seed: u64, split: Split, i: usize) -> u64 {
    let tag = Split::ALL.iter().position(|s| *s == split).unwrap_or(0) as u64;
    seed.wrapping_add(tag << 40).wrapping_add(i as u64)
}

fn model_key(command: &str, ctx: &Ctx, args: serde_json::Value, model: &Path, data: &Path) -> Result<RunKey> {
    let config = json!({ "seed": ctx.cfg.seed, "samples": ctx.cfg.samples, "eval": ctx.cfg.eval });
    RunKey::new(command, args, config).input("model", model)?.input("data", data)
}

fn predict(ctx: &Ctx, model_dir: &Path, data_dir: &Path, select: &WindowSelect, coverage: f64) -> Result<()> {
    if !(coverage > 0.0 && coverage < 1.0) {
        bail!(Error::invalid(format!("coverage {coverage} must lie in (0, 1)")));
    }
    let args = json!({ "split": select.split, "window": select.window, "at": select.at, "coverage": coverage });
    let key = model_key("predict", ctx, args, model_dir, data_dir)?;
    let Some(run) = ctx.begin(&key)? else { return Ok(()) };
    let data = load_data(data_dir)?;
    let model = load_model(model_dir)?;
    let mut fc = WindowForecaster::new(&model, &data)?;
    let z = holdwise::normal::quantile(0.5 + coverage / 2.0);
    let mut w = csv::Writer::from_path(run.file("predictions.csv"))?;
    w.write_record(["split", "window", "target_time", "link", "horizon", "point_s", "sd_s", "lower_s", "upper_s"])?;
    let windows = selected_windows(&data, select, ctx.cfg.eval.max_windows)?;
    for &(split, i) in &windows {
        let t = data.split(split);
        let (k_len, l) = (t.grid.horizon_k, t.n_links());
        let (wf, point) = fc.window(split, i, ctx.cfg.samples, window_seed(ctx.cfg.seed, split, i))?;
        for k in 0..k_len {
            for link in 0..l {
                let (sd, lo, hi) = match &wf {
                    WindowForecast::Laws(d) => match d.get(k, link)? {
                        LinkLaw::Gaussian(f) => (f.sigma, f.mean - z * f.sigma, f.mean + z * f.sigma),
                        LinkLaw::Empirical(v) => sample_band(v, coverage)?,
                    },
                    WindowForecast::Draws(d) => {
                        let cell: Vec<f64> = d.chunks(k_len * l).map(|draw| draw[k * l + link]).collect();
                        sample_band(&cell, coverage)?
                    }
                };
                w.write_record([
                    split.name().to_string(),
                    i.to_string(),
                    rfc3339(t.timestamp(t.y_step(i, k))),
                    data.meta.links.ids()[link].clone(),
                    (k + 1).to_string(),
                    format!("{:.3}", point[k * l + link]),
                    format!("{sd:.3}"),
                    format!("{lo:.3}"),
                    format!("{hi:.3}"),
                ])?;
            }
        }
    }
    w.flush()?;
    println!("{} windows forecast with {}", windows.len(), model.tag().name());
    finish(&run, &key)
}

/// Sample standard deviation and empirical central interval.
fn sample_band(values: &[f64], coverage: f64) -> Result<(f64, f64, f64)> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let (lo, hi) = empirical_interval(values, coverage)?;
    Ok((sd, lo, hi))
}

fn fit_gaussians(ctx: &Ctx, model_dir: &Path, data_dir: &Path, select: &WindowSelect) -> Result<()> {
    let args = json!({ "split": select.split, "window": select.window, "at": select.at });
    let key = model_key("fit-gaussians", ctx, args, model_dir, data_dir)?;
    let Some(run) = ctx.begin(&key)? else { return Ok(()) };
    let data = load_data(data_dir)?;
    let model = load_model(model_dir)?;
    if !matches!(model, ModelHandle::Dqr(_)) {
        bail!(Error::invalid(format!("fit-gaussians needs a quantile (dqr) checkpoint, got {}", model.tag().name())));
    }
    let mut fc = WindowForecaster::new(&model, &data)?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (split, i) in selected_windows(&data, select, ctx.cfg.eval.max_windows)? {
        let (WindowForecast::Laws(laws), _) = fc.window(split, i, ctx.cfg.samples, ctx.cfg.seed)? else {
            unreachable!("quantile models yield per-link laws")
        };
        for k in 0..laws.horizons {
            for link in 0..laws.n_links {
                if let LinkLaw::Gaussian(f) = laws.get(k, link)? {
                    worst = worst.max(f.residual);
                    rows.push(FitRecord {
                        window: i,
                        link: data.meta.links.ids()[link].clone(),
                        horizon: k + 1,
                        mean_s: f.mean,
                        sigma_s: f.sigma,
                        residual: f.residual,
                    });
                }
            }
        }
    }
    write_fits_csv(&run.file("fits.csv"), &rows)?;
    println!("{} fits, largest residual {worst:.2e}", rows.len());
    finish(&run, &key)
}

fn aggregate(
    ctx: &Ctx,
    model_dir: &Path,
    data_dir: &Path,
    select: &WindowSelect,
    route: &[String],
    start_horizon: usize,
) -> Result<()> {
    if select.window.is_none() && select.at.is_none() {
        bail!(Error::invalid("aggregate needs --window or --at"));
    }
    let args = json!({ "split": select.split, "window": select.window, "at": select.at, "route": route, "start_horizon": start_horizon });
    let key = model_key("aggregate", ctx, args, model_dir, data_dir)?;
    let Some(run) = ctx.begin(&key)? else { return Ok(()) };
    let data = load_data(data_dir)?;
    let model = load_model(model_dir)?;
    let k_len = data.grid().horizon_k;
    if start_horizon == 0 || start_horizon > k_len {
        bail!(Error::invalid(format!("start horizon {start_horizon} outside 1..={k_len}")));
    }
    let links = if route.is_empty() { (0..data.n_links()).collect() } else { route_indices(&data, route)? };
    let plan = RoutePlan::new(links, start_horizon - 1, data.grid().frequency as f64)?;
    let (split, i) = selected_windows(&data, select, None)?[0];
    let mut fc = WindowForecaster::new(&model, &data)?;
    let set = fc.route_samples(split, i, &plan, ctx.cfg.samples, window_seed(ctx.cfg.seed, split, i))?;
    set.write_csv(&run.file("route_samples.csv"))?;
    set.write_summary_json(&run.file("summary.json"))?;
    let s = set.summary()?;
    println!("{} route samples over {} links: mean {:.1} s, std {:.1} s", s.n, plan.links.len(), s.mean, s.std);
    finish(&run, &key)
}

fn evaluate(ctx: &Ctx, model_dirs: &[std::path::PathBuf], data_dir: &Path, split: Split) -> Result<()> {
    let config = json!({ "seed": ctx.cfg.seed, "samples": ctx.cfg.samples, "eval": ctx.cfg.eval });
    let mut key = RunKey::new("evaluate", json!({ "split": split }), config).input("data", data_dir)?;
    for (j, m) in model_dirs.iter().enumerate() {
        key = key.input(&format!("model{j}"), m)?;
    }
    let Some(run) = ctx.begin(&key)? else { return Ok(()) };
    let data = load_data(data_dir)?;
    let opts = ctx.eval_options(&data)?;
    let mut csv_out = csv::Writer::from_path(run.file("report.csv"))?;
    csv_out.write_record(["model", "interval", "horizon", "icp", "mil", "rmse"])?;
    let mut text = String::new();
    for dir in model_dirs {
        let model = load_model(dir)?;
        let forecasts = model.forecast(&data, split, &opts)?;
        let rep = report(&forecasts, &opts)?;
        rep.append_csv_rows(&mut csv_out)?;
        text.push_str(&rep.to_text_table());
        text.push('\n');
    }
    csv_out.flush()?;
    std::fs::write(run.file("report.txt"), &text)?;
    print!("{text}");
    finish(&run, &key)
}

/// One line of a transfer: its model, its prepared data and the links from
/// the decision point to the transfer site.
struct Line {
    model: ModelHandle,
    data: PreparedDataset,
    plan: RoutePlan,
}

impl Line {
    fn load(model: &Path, data: &Path, route: &[String]) -> Result<Self> {
        let data = load_data(data)?;
        let model = load_model(model)?;
        let plan = RoutePlan::new(route_indices(&data, route)?, 0, data.grid().frequency as f64)?;
        Ok(Self { model, data, plan })
    }
}

fn route_time_samples(fc: &mut WindowForecaster, line: &Line, at: f64, n: usize, seed: u64) -> holdwise::Result<Vec<f64>> {
    let t = Utc
        .timestamp_opt(at.floor() as i64, 0)
        .single()
        .ok_or_else(|| Error::invalid(format!("timestamp {at} out of range")))?;
    let step = line.data.grid().step_of(t).ok_or_else(|| Error::invalid(format!("{} outside the prepared period", rfc3339(t))))?;
    let (split, i) = locate_window(&line.data, step).ok_or_else(|| Error::invalid(format!("no window forecasts from {}", rfc3339(t))))?;
    Ok(fc.route_samples(split, i, &line.plan, n, seed)?.samples)
}

fn simulate_transfer(ctx: &Ctx, args: &SimulateArgs) -> Result<()> {
    let mut policy = ctx.cfg.transfer;
    if let Some(e) = args.exchange_time {
        policy.exchange_time_s = e;
    }
    if let Some(f) = args.origin_fraction {
        policy.origin_fraction = f;
    }
    let mode = if args.fixture {
        "fixture"
    } else if args.pair_samples.is_some() {
        "samples"
    } else if args.feeder_model.is_some() && args.receiver_model.is_some() {
        "models"
    } else {
        bail!(Error::invalid(
            "choose --fixture, --pairs with --pair-samples, or --pairs with feeder and receiver models"
        ));
    };
    if mode != "fixture" && args.pairs.is_none() {
        bail!(Error::invalid("--pairs is required unless --fixture is given"));
    }
    let argv = json!({
        "mode": mode,
        "feeder_route": args.feeder_route,
        "receiver_route": args.receiver_route,
    });
    let config = json!({ "transfer": policy, "samples": ctx.cfg.samples, "journeys": (mode == "fixture").then_some(ctx.cfg.journeys) });
    let mut key = RunKey::new("simulate-transfer", argv, config);
    for (label, path) in [
        ("pairs", &args.pairs),
        ("pair_samples", &args.pair_samples),
        ("feeder_model", &args.feeder_model),
        ("feeder_data", &args.feeder_data),
        ("receiver_model", &args.receiver_model),
        ("receiver_data", &args.receiver_data),
    ] {
        if let Some(p) = path {
            key = key.input(label, p)?;
        }
    }
    let Some(run) = ctx.begin(&key)? else { return Ok(()) };

    let eval: PolicyEvaluation = match mode {
        "fixture" => {
            let fixture = journey_fixture(&ctx.cfg.journeys)?;
            evaluate_policy(&fixture.pairs, &policy, |p, _| fixture.forecast_for(p))?
        }
        "samples" => {
            let pairs = read_pairs(args.pairs.as_deref().expect("checked"))?;
            let samples: HashMap<usize, PairForecast> = read_pair_samples_csv(args.pair_samples.as_deref().expect("checked"))?;
            evaluate_policy(&pairs, &policy, |p, _| {
                samples.get(&p.pair_id).cloned().ok_or_else(|| Error::invalid(format!("no samples for pair {}", p.pair_id)))
            })?
        }
        _ => {
            let pairs = read_pairs(args.pairs.as_deref().expect("checked"))?;
            let feeder = Line::load(
                args.feeder_model.as_deref().expect("checked"),
                args.feeder_data.as_deref().expect("required by clap"),
                args.feeder_route.as_deref().expect("required by clap"),
            )?;
            let receiver = Line::load(
                args.receiver_model.as_deref().expect("checked"),
                args.receiver_data.as_deref().expect("required by clap"),
                args.receiver_route.as_deref().expect("required by clap"),
            )?;
            let mut ffc = WindowForecaster::new(&feeder.model, &feeder.data)?;
            let mut rfc = WindowForecaster::new(&receiver.model, &receiver.data)?;
            let n = ctx.cfg.samples;
            evaluate_policy(&pairs, &policy, |p, rng| {
                let at = p.receiver_origin_scheduled;
                Ok(PairForecast {
                    feeder: route_time_samples(&mut ffc, &feeder, at, n, rng.random())?,
                    receiver: route_time_samples(&mut rfc, &receiver, at, n, rng.random())?,
                })
            })?
        }
    };
    eval.write_outcomes_csv(&run.file("outcomes.csv"))?;
    eval.write_summary_json(&run.file("summary.json"))?;
    let s = &eval.summary;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
    println!("pairs {} evaluated {} skipped {}", s.n_pairs, s.n_evaluated, s.n_skipped);
    println!("{:<14}{:>16}{:>12}", "strategy", "mean delay s", "kept %");
    for (name, st) in [("policy", &s.policy), ("never hold", &s.never_hold), ("always hold", &s.always_hold)] {
        println!("{name:<14}{:>16}{:>12}", fmt(st.mean_delay_s), fmt(st.kept_rate.map(|r| 100.0 * r)));
    }
    if let Some(r) = s.reduction_vs_always_hold {
        println!("delay reduction vs always hold {:.1}%", 100.0 * r);
    }
    finish(&run, &key)
}

fn read_pairs(path: &Path) -> Result<Vec<JourneyPair>> {
    let pairs = read_pairs_csv(path).with_context(|| format!("reading {}", path.display()))?;
    for p in &pairs {
        p.validate()?;
    }
    Ok(pairs)
}

fn hpo(ctx: &Ctx, kind: TunableKind, data_dir: &Path, trials: Option<usize>, max_seconds: Option<f64>) -> Result<()> {
    let n_trials = trials.unwrap_or(ctx.cfg.hpo.trials);
    let budget = Budget { max_seconds: max_seconds.or(ctx.cfg.hpo.max_seconds) };
    let (name, base) = match kind {
        TunableKind::Dqr => ("hpo-dqr", json!(ctx.cfg.dqr)),
        TunableKind::Brnn => ("hpo-brnn", json!(ctx.cfg.brnn)),
    };
    let key = RunKey::new(name, json!({ "trials": n_trials, "budget": budget }), json!({ "seed": ctx.cfg.seed, "base": base }))
        .input("data", data_dir)?;
    let Some(run) = ctx.begin(&key)? else { return Ok(()) };
    let data = load_data(data_dir)?;
    let (train, val) = (data.split(Split::Train), data.split(Split::Validation));
    let checked = |log: TrainingLog| -> holdwise::Result<f64> {
        if log.stop_reason == StopReason::Diverged {
            return Err(Error::Numerical("training diverged".into()));
        }
        Ok(log.best_val_loss)
    };
    let result = match kind {
        TunableKind::Dqr => run_search(&SearchSpace::dqr(), n_trials, ctx.cfg.seed, budget, |_, t| {
            let cfg = apply_dqr(&ctx.cfg.dqr, t);
            holdwise::dqr::train_dqr(train, val, &cfg).and_then(|(_, log)| checked(log))
        })?,
        TunableKind::Brnn => run_search(&SearchSpace::brnn(), n_trials, ctx.cfg.seed, budget, |_, t| {
            let cfg = apply_brnn(&ctx.cfg.brnn, t);
            holdwise::brnn::train_brnn(train, val, &cfg).and_then(|(_, log)| checked(log))
        })?,
    };
    result.write_csv(&run.file("trials.csv"))?;
    write_json(
        &run.file("best.json"),
        &json!({
            "best_trial": result.best_trial,
            "best_config": result.best_config,
            "best_val_loss": result.best_val_loss,
            "running_best": result.running_best(),
        }),
    )?;
    println!(
        "{} trials, best validation loss {:.5} (trial {}): {}",
        result.trials.len(),
        result.best_val_loss,
        result.best_trial,
        serde_json::to_string(&result.best_config)?
    );
    finish(&run, &key)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_of_days(days: i64) -> GridConfig {
        let start = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
        GridConfig::new(2, start, start + Duration::days(days))
    }

    #[test]
    fn derived_split_follows_the_ratio() {
        let s = derive_split(&grid_of_days(17 * 7)).unwrap();
        assert_eq!((s.train_weeks, s.validation_weeks, s.test_weeks), (13, 2, Some(2)));
        let s = derive_split(&grid_of_days(8 * 7 + 3)).unwrap();
        assert_eq!((s.train_weeks, s.validation_weeks, s.test_weeks), (6, 1, Some(1)));
        assert!(derive_split(&grid_of_days(20)).is_err());
    }

    #[test]
    fn period_spans_whole_local_days() {
        let obs = |s: &str| Observation {
            link_id: "a".into(),
            observed_at: DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc),
            travel_time: 10.0,
        };
        let set = [obs("2021-03-02T10:00:00Z"), obs("2021-03-04T23:30:00Z")];
        let (s, e) = derive_period(&set, 0);
        assert_eq!(rfc3339(s), "2021-03-02T00:00:00Z");
        assert_eq!(rfc3339(e), "2021-03-05T00:00:00Z");
        let (s, e) = derive_period(&set, 3600);
        assert_eq!(rfc3339(s), "2021-03-01T23:00:00Z");
        assert_eq!(rfc3339(e), "2021-03-05T23:00:00Z");
    }
}
