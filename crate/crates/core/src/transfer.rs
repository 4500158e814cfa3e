//! Scheduled-connection matching, the uncertainty-aware holding rule and
//! delay accounting at the transfer site.
//!
//! All clock values are seconds since the Unix epoch. The feeder is the
//! service passengers alight from; the receiver departs its origin holding
//! point and waits for them at the site.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_json;
use crate::multilink::{diff_distribution, DiffDistribution};

pub const DEFAULT_EXCHANGE_TIME: f64 = 60.0;
pub const DEFAULT_ORIGIN_FRACTION: f64 = 0.8;

fn parse_time(s: &str, line: u64) -> Result<f64> {
    let t = DateTime::parse_from_rfc3339(s.trim())
        .map_err(|e| Error::Parse { line, detail: format!("timestamp `{s}`: {e}") })?;
    Ok(t.timestamp_micros() as f64 / 1e6)
}

fn parse_opt_time(s: &str, line: u64) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_time(s, line).map(Some)
    }
}

fn format_time(t: f64) -> String {
    DateTime::<Utc>::from_timestamp_micros((t * 1e6).round() as i64)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        .unwrap_or_default()
}

fn format_opt_time(t: Option<f64>) -> String {
    t.map(format_time).unwrap_or_default()
}

/// One scheduled stop call with its realized times, when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopCall {
    pub stop_id: String,
    pub scheduled: f64,
    pub actual_arrival: Option<f64>,
    pub actual_departure: Option<f64>,
}

/// Ordered stop calls of one vehicle journey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Journey {
    pub line: String,
    pub journey_id: String,
    pub stops: Vec<StopCall>,
}

impl Journey {
    pub fn call_at(&self, stop_id: &str) -> Option<&StopCall> {
        self.stops.iter().find(|c| c.stop_id == stop_id)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct StopCallRow {
    line: String,
    journey_id: String,
    stop_seq: usize,
    stop_id: String,
    scheduled: String,
    actual_arrival: String,
    actual_departure: String,
}

/// Reads `line,journey_id,stop_seq,stop_id,scheduled,actual_arrival,actual_departure`
/// rows (RFC 3339, empty for unknown actuals) into journeys ordered by `stop_seq`.
pub fn read_journeys_csv(path: &Path) -> Result<Vec<Journey>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut order: Vec<(String, String)> = Vec::new();
    let mut calls: HashMap<(String, String), Vec<(usize, StopCall)>> = HashMap::new();
    for (i, row) in reader.deserialize::<StopCallRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::Parse { line, detail: e.to_string() })?;
        let call = StopCall {
            stop_id: row.stop_id,
            scheduled: parse_time(&row.scheduled, line)?,
            actual_arrival: parse_opt_time(&row.actual_arrival, line)?,
            actual_departure: parse_opt_time(&row.actual_departure, line)?,
        };
        let key = (row.line, row.journey_id);
        if !calls.contains_key(&key) {
            order.push(key.clone());
        }
        calls.entry(key).or_default().push((row.stop_seq, call));
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let mut stops = calls.remove(&key).unwrap_or_default();
            stops.sort_by_key(|(seq, _)| *seq);
            Journey { line: key.0, journey_id: key.1, stops: stops.into_iter().map(|(_, c)| c).collect() }
        })
        .collect())
}

pub fn write_journeys_csv(path: &Path, journeys: &[Journey]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    for j in journeys {
        for (seq, c) in j.stops.iter().enumerate() {
            w.serialize(StopCallRow {
                line: j.line.clone(),
                journey_id: j.journey_id.clone(),
                stop_seq: seq,
                stop_id: c.stop_id.clone(),
                scheduled: format_time(c.scheduled),
                actual_arrival: format_opt_time(c.actual_arrival),
                actual_departure: format_opt_time(c.actual_departure),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Stop ids of the transfer site on each line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferSite {
    pub feeder_stop: String,
    pub receiver_stop: String,
}

/// A scheduled connection between a feeder and a receiver journey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JourneyPair {
    pub pair_id: usize,
    pub feeder_journey: String,
    pub receiver_journey: String,
    pub feeder_stop: String,
    pub receiver_stop: String,
    pub window_s: f64,
    pub feeder_site_scheduled: f64,
    /// Realized feeder arrival at the site.
    pub feeder_site_actual: Option<f64>,
    pub receiver_origin_scheduled: f64,
    pub receiver_origin_actual: Option<f64>,
    /// Scheduled receiver departure from the site.
    pub receiver_site_scheduled: f64,
    /// Realized receiver arrival at the site without any policy hold.
    pub receiver_site_arrival: Option<f64>,
    /// Realized receiver departure from the site in the recorded data.
    pub receiver_site_departure: Option<f64>,
}

impl JourneyPair {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_s >= 0.0) {
            return Err(Error::invalid(format!("pair {}: negative exchange window", self.pair_id)));
        }
        if self.feeder_site_scheduled > self.receiver_site_scheduled + self.window_s {
            return Err(Error::invalid(format!(
                "pair {}: scheduled feeder arrival is after the receiver departure plus window",
                self.pair_id
            )));
        }
        Ok(())
    }

    /// Realized feeder arrival and receiver arrival, when both are known.
    pub fn realized(&self) -> Option<(f64, f64)> {
        Some((self.feeder_site_actual?, self.receiver_site_arrival?))
    }
}

/// Pairs receivers with feeders whose scheduled site arrival falls in
/// `[S − window, S]`, `S` the receiver's scheduled site departure. Receivers
/// are visited in scheduled order and take the earliest unused eligible feeder.
pub fn match_journeys(feeders: &[Journey], receivers: &[Journey], site: &TransferSite, window_s: f64) -> Vec<JourneyPair> {
    let mut feeder_calls: Vec<(f64, &Journey, &StopCall)> = feeders
        .iter()
        .filter_map(|j| j.call_at(&site.feeder_stop).map(|c| (c.scheduled, j, c)))
        .collect();
    feeder_calls.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut receiver_calls: Vec<(f64, &Journey, &StopCall)> = receivers
        .iter()
        .filter_map(|j| j.call_at(&site.receiver_stop).map(|c| (c.scheduled, j, c)))
        .collect();
    receiver_calls.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut used = vec![false; feeder_calls.len()];
    let mut pairs = Vec::new();
    for (dep, rj, rc) in receiver_calls {
        let hit = feeder_calls
            .iter()
            .enumerate()
            .find(|(i, (t, _, _))| !used[*i] && *t >= dep - window_s && *t <= dep);
        let Some((i, &(_, fj, fc))) = hit else { continue };
        used[i] = true;
        let origin = &rj.stops[0];
        pairs.push(JourneyPair {
            pair_id: pairs.len(),
            feeder_journey: fj.journey_id.clone(),
            receiver_journey: rj.journey_id.clone(),
            feeder_stop: site.feeder_stop.clone(),
            receiver_stop: site.receiver_stop.clone(),
            window_s,
            feeder_site_scheduled: fc.scheduled,
            feeder_site_actual: fc.actual_arrival,
            receiver_origin_scheduled: origin.scheduled,
            receiver_origin_actual: origin.actual_departure,
            receiver_site_scheduled: dep,
            receiver_site_arrival: rc.actual_arrival,
            receiver_site_departure: rc.actual_departure,
        });
    }
    pairs
}

#[derive(Debug, Deserialize, Serialize)]
struct PairRow {
    pair_id: usize,
    feeder_journey: String,
    receiver_journey: String,
    feeder_stop: String,
    receiver_stop: String,
    window_s: f64,
    feeder_site_scheduled: String,
    feeder_site_actual: String,
    receiver_origin_scheduled: String,
    receiver_origin_actual: String,
    receiver_site_scheduled: String,
    receiver_site_arrival: String,
    receiver_site_departure: String,
}

pub fn write_pairs_csv(path: &Path, pairs: &[JourneyPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    for p in pairs {
        w.serialize(PairRow {
            pair_id: p.pair_id,
            feeder_journey: p.feeder_journey.clone(),
            receiver_journey: p.receiver_journey.clone(),
            feeder_stop: p.feeder_stop.clone(),
            receiver_stop: p.receiver_stop.clone(),
            window_s: p.window_s,
            feeder_site_scheduled: format_time(p.feeder_site_scheduled),
            feeder_site_actual: format_opt_time(p.feeder_site_actual),
            receiver_origin_scheduled: format_time(p.receiver_origin_scheduled),
            receiver_origin_actual: format_opt_time(p.receiver_origin_actual),
            receiver_site_scheduled: format_time(p.receiver_site_scheduled),
            receiver_site_arrival: format_opt_time(p.receiver_site_arrival),
            receiver_site_departure: format_opt_time(p.receiver_site_departure),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<JourneyPair>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<PairRow>().enumerate() {
        let line = i as u64 + 2;
        let r = row.map_err(|e| Error::Parse { line, detail: e.to_string() })?;
        let pair = JourneyPair {
            pair_id: r.pair_id,
            feeder_journey: r.feeder_journey,
            receiver_journey: r.receiver_journey,
            feeder_stop: r.feeder_stop,
            receiver_stop: r.receiver_stop,
            window_s: r.window_s,
            feeder_site_scheduled: parse_time(&r.feeder_site_scheduled, line)?,
            feeder_site_actual: parse_opt_time(&r.feeder_site_actual, line)?,
            receiver_origin_scheduled: parse_time(&r.receiver_origin_scheduled, line)?,
            receiver_origin_actual: parse_opt_time(&r.receiver_origin_actual, line)?,
            receiver_site_scheduled: parse_time(&r.receiver_site_scheduled, line)?,
            receiver_site_arrival: parse_opt_time(&r.receiver_site_arrival, line)?,
            receiver_site_departure: parse_opt_time(&r.receiver_site_departure, line)?,
        };
        pair.validate().map_err(|e| Error::Parse { line, detail: e.to_string() })?;
        out.push(pair);
    }
    Ok(out)
}

/// How the predicted slack is spent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldDecision {
    pub hold_at_origin: f64,
    pub hold_at_site_budget: f64,
    /// Median of the difference distribution, seconds.
    pub statistic: f64,
    pub origin_fraction: f64,
    pub site_fraction: f64,
}

impl HoldDecision {
    /// Never hold anywhere.
    pub fn none() -> Self {
        Self { hold_at_origin: 0.0, hold_at_site_budget: 0.0, statistic: 0.0, origin_fraction: 0.0, site_fraction: 1.0 }
    }

    /// Wait at the site for as long as it takes.
    pub fn unlimited_site() -> Self {
        Self {
            hold_at_origin: 0.0,
            hold_at_site_budget: f64::INFINITY,
            statistic: f64::INFINITY,
            origin_fraction: 0.0,
            site_fraction: 1.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.hold_at_origin + self.hold_at_site_budget
    }
}

/// Splits `max(0, median(diff))` between the origin and the site.
pub fn hold_decision(diff: &DiffDistribution, origin_fraction: f64) -> Result<HoldDecision> {
    if diff.samples.is_empty() {
        return Err(Error::invalid("difference distribution is empty"));
    }
    if !(0.0..=1.0).contains(&origin_fraction) {
        return Err(Error::invalid(format!("origin fraction {origin_fraction} outside [0, 1]")));
    }
    let statistic = diff.median();
    let total = statistic.max(0.0);
    let hold_at_origin = origin_fraction * total;
    Ok(HoldDecision {
        hold_at_origin,
        hold_at_site_budget: total - hold_at_origin,
        statistic,
        origin_fraction,
        site_fraction: 1.0 - origin_fraction,
    })
}

/// Result of simulating one pair under one decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub kept: bool,
    /// Receiver departure from the site beyond its schedule, `≥ 0`.
    pub delay_s: f64,
    /// The feeder is never held by this policy, so this is always 0.
    pub feeder_delay_s: f64,
    pub site_departure: f64,
}

/// Clock rules at the site for realized feeder arrival `f` and unheld
/// receiver arrival `r0`:
/// `dep = max(S, r0 + h_o, min(f + e, r0 + h_o + h_s))`.
pub fn simulate_pair(pair: &JourneyPair, decision: &HoldDecision, exchange_time: f64) -> Option<PairOutcome> {
    let (f, r0) = pair.realized()?;
    let s = pair.receiver_site_scheduled;
    let r = r0 + decision.hold_at_origin;
    let dep = s.max(r).max((f + exchange_time).min(r + decision.hold_at_site_budget));
    Some(PairOutcome { kept: f + exchange_time <= dep, delay_s: (dep - s).max(0.0), feeder_delay_s: 0.0, site_departure: dep })
}

/// Route travel-time samples (seconds from the decision time) of both vehicles.
#[derive(Debug, Clone, PartialEq)]
pub struct PairForecast {
    pub feeder: Vec<f64>,
    pub receiver: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub exchange_time_s: f64,
    pub origin_fraction: f64,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { exchange_time_s: DEFAULT_EXCHANGE_TIME, origin_fraction: DEFAULT_ORIGIN_FRACTION, seed: 0 }
    }
}

/// Per-pair row of the policy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub pair_id: usize,
    pub decision: HoldDecision,
    pub policy: PairOutcome,
    pub never_hold: PairOutcome,
    pub always_hold: PairOutcome,
    /// Connection state and delay in the recorded data, when the recorded
    /// site departure is known.
    pub observed: Option<PairOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CohortStat {
    pub n: usize,
    pub mean_delay_s: Option<f64>,
}

impl CohortStat {
    fn of<'a>(delays: impl Iterator<Item = &'a f64>) -> Self {
        let v: Vec<f64> = delays.copied().collect();
        let mean_delay_s = (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Self { n: v.len(), mean_delay_s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyStat {
    pub mean_delay_s: Option<f64>,
    pub kept_rate: Option<f64>,
}

impl StrategyStat {
    fn of(outcomes: &[&PairOutcome]) -> Self {
        if outcomes.is_empty() {
            return Self::default();
        }
        let n = outcomes.len() as f64;
        Self {
            mean_delay_s: Some(outcomes.iter().map(|o| o.delay_s).sum::<f64>() / n),
            kept_rate: Some(outcomes.iter().filter(|o| o.kept).count() as f64 / n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicySummary {
    pub n_pairs: usize,
    pub n_evaluated: usize,
    pub n_skipped: usize,
    pub exchange_time_s: f64,
    pub origin_fraction: f64,
    /// Recorded data split by recorded connection state.
    pub observed_kept: CohortStat,
    pub observed_broken: CohortStat,
    pub policy: StrategyStat,
    pub never_hold: StrategyStat,
    pub always_hold: StrategyStat,
    /// Policy delays split by recorded connection state.
    pub policy_on_observed_kept: CohortStat,
    pub policy_on_observed_broken: CohortStat,
    /// `1 − policy / always_hold` mean delay.
    pub reduction_vs_always_hold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyEvaluation {
    pub outcomes: Vec<PolicyOutcome>,
    /// Pair ids with the reason they were left out.
    pub skipped: Vec<(usize, String)>,
    pub summary: PolicySummary,
}

impl PolicyEvaluation {
    /// `pair_id,kept,delay_s,hold_origin_s,hold_site_s`.
    pub fn write_outcomes_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        w.write_record(["pair_id", "kept", "delay_s", "hold_origin_s", "hold_site_s"])?;
        for o in &self.outcomes {
            w.write_record([
                o.pair_id.to_string(),
                o.policy.kept.to_string(),
                format!("{:.3}", o.policy.delay_s),
                format!("{:.3}", o.decision.hold_at_origin),
                format!("{:.3}", o.decision.hold_at_site_budget),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        write_json(path, &self.summary)
    }
}

/// Per-pair RNG stream derived from the run seed.
pub fn pair_rng(seed: u64, pair_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair_id as u64 + 1);
    rng
}

/// Runs the holding policy and both baselines on every pair. `forecast`
/// receives the pair and its own RNG stream; failures skip the pair.
pub fn evaluate_policy<F>(pairs: &[JourneyPair], config: &PolicyConfig, mut forecast: F) -> Result<PolicyEvaluation>
where
    F: FnMut(&JourneyPair, &mut ChaCha8Rng) -> Result<PairForecast>,
{
    if !(config.exchange_time_s >= 0.0) {
        return Err(Error::invalid("exchange time must be non-negative"));
    }
    if !(0.0..=1.0).contains(&config.origin_fraction) {
        return Err(Error::invalid(format!("origin fraction {} outside [0, 1]", config.origin_fraction)));
    }
    let e = config.exchange_time_s;
    let mut eval = PolicyEvaluation::default();
    for pair in pairs {
        if pair.realized().is_none() {
            eval.skipped.push((pair.pair_id, "missing realized site times".into()));
            continue;
        }
        let mut rng = pair_rng(config.seed, pair.pair_id);
        let decision = match forecast(pair, &mut rng)
            .and_then(|f| diff_distribution(&f.feeder, &f.receiver))
            .and_then(|d| hold_decision(&d, config.origin_fraction))
        {
            Ok(d) => d,
            Err(err) => {
                log::warn!("transfer: pair {} skipped: {err}", pair.pair_id);
                eval.skipped.push((pair.pair_id, err.to_string()));
                continue;
            }
        };
        let run = |d: &HoldDecision| simulate_pair(pair, d, e).expect("realized times checked above");
        let observed = match (pair.receiver_site_departure, pair.feeder_site_actual) {
            (Some(dep), Some(f)) => Some(PairOutcome {
                kept: f + e <= dep,
                delay_s: (dep - pair.receiver_site_scheduled).max(0.0),
                feeder_delay_s: 0.0,
                site_departure: dep,
            }),
            _ => None,
        };
        eval.outcomes.push(PolicyOutcome {
            pair_id: pair.pair_id,
            decision,
            policy: run(&decision),
            never_hold: run(&HoldDecision::none()),
            always_hold: run(&HoldDecision::unlimited_site()),
            observed,
        });
    }
    eval.summary = summarize_policy(&eval, pairs.len(), config);
    Ok(eval)
}

fn summarize_policy(eval: &PolicyEvaluation, n_pairs: usize, config: &PolicyConfig) -> PolicySummary {
    let o = &eval.outcomes;
    let with_obs = |kept: bool| o.iter().filter(move |x| x.observed.is_some_and(|ob| ob.kept == kept));
    let policy = StrategyStat::of(&o.iter().map(|x| &x.policy).collect::<Vec<_>>());
    let always_hold = StrategyStat::of(&o.iter().map(|x| &x.always_hold).collect::<Vec<_>>());
    let reduction = match (policy.mean_delay_s, always_hold.mean_delay_s) {
        (Some(p), Some(a)) if a > 0.0 => Some(1.0 - p / a),
        _ => None,
    };
    PolicySummary {
        n_pairs,
        n_evaluated: o.len(),
        n_skipped: eval.skipped.len(),
        exchange_time_s: config.exchange_time_s,
        origin_fraction: config.origin_fraction,
        observed_kept: CohortStat::of(with_obs(true).map(|x| &x.observed.as_ref().expect("filtered").delay_s)),
        observed_broken: CohortStat::of(with_obs(false).map(|x| &x.observed.as_ref().expect("filtered").delay_s)),
        policy,
        never_hold: StrategyStat::of(&o.iter().map(|x| &x.never_hold).collect::<Vec<_>>()),
        always_hold,
        policy_on_observed_kept: CohortStat::of(with_obs(true).map(|x| &x.policy.delay_s)),
        policy_on_observed_broken: CohortStat::of(with_obs(false).map(|x| &x.policy.delay_s)),
        reduction_vs_always_hold: reduction,
    }
}

/// Reads `pair_id,role,travel_time_s` samples (`role` is `feeder` or `receiver`).
pub fn read_pair_samples_csv(path: &Path) -> Result<HashMap<usize, PairForecast>> {
    #[derive(Deserialize)]
    struct Row {
        pair_id: usize,
        role: String,
        travel_time_s: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut out: HashMap<usize, PairForecast> = HashMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::Parse { line, detail: e.to_string() })?;
        let entry = out.entry(row.pair_id).or_insert_with(|| PairForecast { feeder: Vec::new(), receiver: Vec::new() });
        match row.role.trim() {
            "feeder" => entry.feeder.push(row.travel_time_s),
            "receiver" => entry.receiver.push(row.travel_time_s),
            other => return Err(Error::Parse { line, detail: format!("unknown role `{other}`") }),
        }
    }
    Ok(out)
}

pub fn write_pair_samples_csv(path: &Path, samples: &[(usize, PairForecast)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    w.write_record(["pair_id", "role", "travel_time_s"])?;
    for (id, f) in samples {
        for (role, values) in [("feeder", &f.feeder), ("receiver", &f.receiver)] {
            for v in values {
                w.write_record([id.to_string(), role.to_string(), format!("{v:.3}")])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Synthetic connection scenario: receivers leave the origin on time, feeders
/// run late by `N(feeder_delay_mean, feeder_delay_sd²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JourneyFixtureConfig {
    pub n_pairs: usize,
    pub headway_s: f64,
    pub window_s: f64,
    /// Scheduled feeder arrival this long before the receiver's site departure.
    pub feeder_lead_s: f64,
    pub feeder_delay_mean: f64,
    pub feeder_delay_sd: f64,
    pub receiver_run_time_s: f64,
    pub receiver_run_sd: f64,
    /// Standard deviation of the forecast error of each vehicle's arrival.
    pub forecast_error_sd: f64,
    /// Spread of the predictive samples around the forecast.
    pub forecast_spread_sd: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for JourneyFixtureConfig {
    fn default() -> Self {
        Self {
            n_pairs: 400,
            headway_s: 1800.0,
            window_s: 300.0,
            feeder_lead_s: 60.0,
            feeder_delay_mean: 60.0,
            feeder_delay_sd: 30.0,
            receiver_run_time_s: 600.0,
            receiver_run_sd: 20.0,
            forecast_error_sd: 15.0,
            forecast_spread_sd: 25.0,
            n_samples: 500,
            seed: 0,
        }
    }
}

/// Pairs of the synthetic scenario plus predictive travel-time samples per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct JourneyFixture {
    pub pairs: Vec<JourneyPair>,
    pub forecasts: Vec<PairForecast>,
}

impl JourneyFixture {
    pub fn forecast_for(&self, pair: &JourneyPair) -> Result<PairForecast> {
        self.forecasts
            .get(pair.pair_id)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no forecast for pair {}", pair.pair_id)))
    }
}

/// Generates the synthetic scenario. The decision time is the receiver's
/// scheduled origin departure; forecasts are Gaussian around the realized
/// travel times with a per-pair error.
pub fn journey_fixture(config: &JourneyFixtureConfig) -> Result<JourneyFixture> {
    let sd_ok = [config.feeder_delay_sd, config.receiver_run_sd, config.forecast_error_sd, config.forecast_spread_sd]
        .iter()
        .all(|v| *v >= 0.0 && v.is_finite());
    if !sd_ok || config.n_samples == 0 || config.feeder_lead_s > config.window_s || config.feeder_lead_s < 0.0 {
        return Err(Error::invalid("journey fixture needs non-negative spreads, samples ≥ 1 and lead within the window"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gauss = |m: f64, s: f64| Normal::new(m, s).expect("validated spread");
    let start = 1_600_000_000.0;
    let mut pairs = Vec::with_capacity(config.n_pairs);
    let mut forecasts = Vec::with_capacity(config.n_pairs);
    for id in 0..config.n_pairs {
        let s = start + id as f64 * config.headway_s;
        let origin = s - config.receiver_run_time_s;
        let receiver_run = gauss(config.receiver_run_time_s, config.receiver_run_sd).sample(&mut rng);
        let feeder_sched = s - config.feeder_lead_s;
        let feeder_actual = feeder_sched + gauss(config.feeder_delay_mean, config.feeder_delay_sd).sample(&mut rng);
        let receiver_arrival = origin + receiver_run;
        // Recorded behaviour: the driver waits for the feeder half of the time.
        let waited = rng.random::<bool>();
        let recorded_dep = if waited {
            s.max(receiver_arrival).max(feeder_actual + DEFAULT_EXCHANGE_TIME)
        } else {
            s.max(receiver_arrival)
        };
        pairs.push(JourneyPair {
            pair_id: id,
            feeder_journey: format!("F{id:04}"),
            receiver_journey: format!("R{id:04}"),
            feeder_stop: "site".into(),
            receiver_stop: "site".into(),
            window_s: config.window_s,
            feeder_site_scheduled: feeder_sched,
            feeder_site_actual: Some(feeder_actual),
            receiver_origin_scheduled: origin,
            receiver_origin_actual: Some(origin),
            receiver_site_scheduled: s,
            receiver_site_arrival: Some(receiver_arrival),
            receiver_site_departure: Some(recorded_dep),
        });
        let err = gauss(0.0, config.forecast_error_sd);
        let feeder_centre = feeder_actual - origin + err.sample(&mut rng);
        let receiver_centre = receiver_arrival - origin + err.sample(&mut rng);
        let fs = gauss(feeder_centre, config.forecast_spread_sd);
        let rs = gauss(receiver_centre, config.forecast_spread_sd);
        forecasts.push(PairForecast {
            feeder: (0..config.n_samples).map(|_| fs.sample(&mut rng)).collect(),
            receiver: (0..config.n_samples).map(|_| rs.sample(&mut rng)).collect(),
        });
    }
    Ok(JourneyFixture { pairs, forecasts })
}
