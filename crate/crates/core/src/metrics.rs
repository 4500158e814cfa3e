//! Interval coverage (ICP), mean interval length (MIL) and RMSE, plus the
//! per-model report grid of interval × horizon.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(name: &str, lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::shape(name, format!("length mismatch {lens:?}")));
    }
    Ok(())
}

/// Percentage of masked-in cells with `lower ≤ y ≤ upper`; `None` without cells.
pub fn icp(y: &[f64], lower: &[f64], upper: &[f64], mask: &[f64]) -> Result<Option<f64>> {
    check("icp", &[y.len(), lower.len(), upper.len(), mask.len()])?;
    let (mut hit, mut n) = (0usize, 0usize);
    for i in 0..y.len() {
        if mask[i] == 0.0 {
            continue;
        }
        if lower[i] > upper[i] {
            return Err(Error::invalid(format!("interval {i} has lower {} > upper {}", lower[i], upper[i])));
        }
        n += 1;
        if lower[i] <= y[i] && y[i] <= upper[i] {
            hit += 1;
        }
    }
    Ok((n > 0).then(|| 100.0 * hit as f64 / n as f64))
}

/// Masked mean of `upper − lower`, seconds.
pub fn mil(lower: &[f64], upper: &[f64], mask: &[f64]) -> Result<Option<f64>> {
    check("mil", &[lower.len(), upper.len(), mask.len()])?;
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..lower.len() {
        if mask[i] == 0.0 {
            continue;
        }
        if lower[i] > upper[i] {
            return Err(Error::invalid(format!("interval {i} has lower {} > upper {}", lower[i], upper[i])));
        }
        sum += upper[i] - lower[i];
        n += 1;
    }
    Ok((n > 0).then(|| sum / n as f64))
}

pub fn rmse(y: &[f64], y_hat: &[f64], mask: &[f64]) -> Result<Option<f64>> {
    check("rmse", &[y.len(), y_hat.len(), mask.len()])?;
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..y.len() {
        if mask[i] != 0.0 {
            sum += (y[i] - y_hat[i]).powi(2);
            n += 1;
        }
    }
    Ok((n > 0).then(|| (sum / n as f64).sqrt()))
}

/// Central interval bounds for every evaluation case at one coverage level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalBounds {
    pub coverage: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Aligned route-level truths and forecasts for one horizon, seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HorizonForecasts {
    pub truth: Vec<f64>,
    pub point: Vec<f64>,
    pub mask: Vec<f64>,
    pub intervals: Vec<IntervalBounds>,
    /// Optional per-link cells for the link-level RMSE.
    pub link_truth: Vec<f64>,
    pub link_point: Vec<f64>,
    pub link_mask: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelForecasts {
    pub model: String,
    /// Index 0 is t+1.
    pub horizons: Vec<HorizonForecasts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    /// Coverage in percent, e.g. 80.
    pub interval: f64,
    /// 1-based.
    pub horizon: usize,
    pub icp: Option<f64>,
    pub mil: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub horizon: usize,
    pub route_rmse: Option<f64>,
    pub link_rmse: Option<f64>,
    pub n_route: usize,
    pub n_link: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub intervals: Vec<IntervalRow>,
    pub rmse: Vec<RmseRow>,
}

fn masked_count(mask: &[f64]) -> usize {
    mask.iter().filter(|&&m| m != 0.0).count()
}

/// Evaluates every requested coverage level at every horizon.
pub fn build_report(forecasts: &ModelForecasts, coverages: &[f64]) -> Result<EvalReport> {
    let mut intervals = Vec::new();
    let mut rmse_rows = Vec::new();
    for (h, f) in forecasts.horizons.iter().enumerate() {
        check("build_report", &[f.truth.len(), f.point.len(), f.mask.len()])?;
        check("build_report.links", &[f.link_truth.len(), f.link_point.len(), f.link_mask.len()])?;
        let n = masked_count(&f.mask);
        for &c in coverages {
            let b = f
                .intervals
                .iter()
                .find(|b| (b.coverage - c).abs() < 1e-9)
                .ok_or_else(|| Error::invalid(format!("no {}% interval for horizon {}", c * 100.0, h + 1)))?;
            check("build_report.interval", &[f.truth.len(), b.lower.len(), b.upper.len()])?;
            intervals.push(IntervalRow {
                interval: c * 100.0,
                horizon: h + 1,
                icp: icp(&f.truth, &b.lower, &b.upper, &f.mask)?,
                mil: mil(&b.lower, &b.upper, &f.mask)?,
                n,
            });
        }
        rmse_rows.push(RmseRow {
            horizon: h + 1,
            route_rmse: rmse(&f.truth, &f.point, &f.mask)?,
            link_rmse: rmse(&f.link_truth, &f.link_point, &f.link_mask)?,
            n_route: n,
            n_link: masked_count(&f.link_mask),
        });
    }
    Ok(EvalReport {
        model: forecasts.model.clone(),
        intervals,
        rmse: rmse_rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn row(&self, interval_pct: f64, horizon: usize) -> Option<&IntervalRow> {
        self.intervals
            .iter()
            .find(|r| r.horizon == horizon && (r.interval - interval_pct).abs() < 1e-9)
    }

    pub fn horizons(&self) -> usize {
        self.rmse.len()
    }

    /// Rows of `model,interval,horizon,icp,mil,rmse` (route RMSE of the horizon).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["model", "interval", "horizon", "icp", "mil", "rmse"])?;
        self.append_csv_rows(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn append_csv_rows<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for r in &self.intervals {
            let rm = self.rmse.iter().find(|x| x.horizon == r.horizon).and_then(|x| x.route_rmse);
            w.write_record([
                self.model.clone(),
                r.interval.to_string(),
                r.horizon.to_string(),
                opt(r.icp),
                opt(r.mil),
                opt(rm),
            ])?;
        }
        Ok(())
    }

    /// Plain-text table: one row per interval, ICP/MIL column pair per horizon.
    pub fn to_text_table(&self) -> String {
        let k = self.horizons();
        let mut coverages: Vec<f64> = Vec::new();
        for r in &self.intervals {
            if !coverages.iter().any(|c| (c - r.interval).abs() < 1e-9) {
                coverages.push(r.interval);
            }
        }
        let cell = |v: Option<f64>, decimals: usize| match v {
            Some(x) => format!("{x:.decimals$}"),
            None => "-".to_string(),
        };
        let mut out = String::new();
        let _ = writeln!(out, "{} results for route travel time", self.model.to_uppercase());
        let _ = write!(out, "{:<14}", "Horizon");
        for h in 1..=k {
            let _ = write!(out, "{:>20}", format!("t+{h}"));
        }
        out.push('\n');
        let _ = write!(out, "{:<14}", "Interval");
        for _ in 0..k {
            let _ = write!(out, "{:>10}{:>10}", "ICP %", "MIL s");
        }
        out.push('\n');
        for c in coverages {
            let _ = write!(out, "{:<14}", format!("{c:.0}%"));
            for h in 1..=k {
                let r = self.row(c, h);
                let _ = write!(out, "{:>10}{:>10}", cell(r.and_then(|r| r.icp), 1), cell(r.and_then(|r| r.mil), 1));
            }
            out.push('\n');
        }
        for (label, pick) in [
            ("RMSE route s", (|r: &RmseRow| r.route_rmse) as fn(&RmseRow) -> Option<f64>),
            ("RMSE link s", |r: &RmseRow| r.link_rmse),
        ] {
            let _ = write!(out, "{label:<14}");
            for r in &self.rmse {
                let _ = write!(out, "{:>20}", cell(pick(r), 2));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icp_examples() {
        let m = [1.0; 3];
        let v = icp(&[1.0, 2.0, 3.0], &[0.0; 3], &[2.0; 3], &m).unwrap().unwrap();
        assert!((v - 200.0 / 3.0).abs() < 1e-12);
        let inf = [f64::INFINITY; 3];
        assert_eq!(icp(&[1.0, 2.0, 3.0], &[f64::NEG_INFINITY; 3], &inf, &m).unwrap(), Some(100.0));
        let y = [1.0, 2.0, 3.0];
        assert_eq!(icp(&y, &y, &y, &m).unwrap(), Some(100.0));
        assert_eq!(icp(&y, &y, &y, &[0.0; 3]).unwrap(), None);
        assert!(icp(&y, &[5.0; 3], &[0.0; 3], &m).is_err());
    }

    #[test]
    fn mil_examples() {
        assert_eq!(mil(&[0.0; 4], &[591.0; 4], &[1.0; 4]).unwrap(), Some(591.0));
        assert_eq!(mil(&[3.0], &[3.0], &[1.0]).unwrap(), Some(0.0));
        assert_eq!(mil(&[0.0, 0.0, 0.0], &[100.0, 300.0, 1e9], &[1.0, 1.0, 0.0]).unwrap(), Some(200.0));
        assert_eq!(mil(&[], &[], &[]).unwrap(), None);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), Some(0.0));
        let v = rmse(&[3.0, 4.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap().unwrap();
        assert!((v - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn report_grid_is_complete() {
        let k = 3;
        let coverages = [0.2, 0.6, 0.8, 0.9, 0.95];
        let horizon = HorizonForecasts {
            truth: vec![10.0, 20.0],
            point: vec![11.0, 19.0],
            mask: vec![1.0, 1.0],
            intervals: coverages
                .iter()
                .map(|&c| IntervalBounds { coverage: c, lower: vec![9.0, 9.0], upper: vec![15.0, 15.0] })
                .collect(),
            ..Default::default()
        };
        let f = ModelForecasts { model: "dqr".into(), horizons: vec![horizon; k] };
        let r = build_report(&f, &coverages).unwrap();
        assert_eq!(r.intervals.len(), 5 * k);
        assert_eq!(r.rmse.len(), k);
        assert_eq!(r.row(80.0, 2).unwrap().icp, Some(50.0));
        assert_eq!(r.row(80.0, 2).unwrap().mil, Some(6.0));
        assert_eq!(r.rmse[0].route_rmse, Some(1.0));
        assert_eq!(r.rmse[0].link_rmse, None);
        let text = r.to_text_table();
        assert!(text.contains("t+3") && text.contains("95%") && text.contains("RMSE route"));
        assert!(build_report(&f, &[0.5]).is_err());
    }
}
