#![allow(dead_code)]

pub mod grad;

use holdwise::nn::ParamStore;

/// Worst elementwise relative error between analytic gradients and central
/// differences of `loss` over every parameter entry of `store`.
///
/// The denominator is floored at `floor` so entries whose true derivative is
/// zero are judged on absolute error.
pub fn fd_max_rel_error(
    store: &ParamStore,
    analytic: &[Vec<f64>],
    h: f64,
    floor: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let up = loss(&probe);
            probe.get_mut(id).data_mut()[i] = orig - h;
            let down = loss(&probe);
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Type-7 empirical quantile on a sorted copy, independent of the library code.
pub fn sorted_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Windows over a `steps × links` row-major series with a full mask.
pub fn series_tensor(
    values: &[f64],
    n_links: usize,
    window_u: usize,
    horizon_k: usize,
) -> holdwise::prep::LinkSeriesTensor {
    use chrono::{Duration, TimeZone, Utc};
    use holdwise::prep::{fold_range, GridConfig, StandardizedGrid};
    let n_steps = values.len() / n_links;
    let start = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
    let mut grid = GridConfig::new(n_links, start, start + Duration::seconds(900 * n_steps as i64));
    grid.window_u = window_u;
    grid.horizon_k = horizon_k;
    let std = StandardizedGrid { n_steps, n_links, values: values.to_vec(), mask: vec![1.0; values.len()] };
    fold_range(&std, &grid, 0..n_steps, false).unwrap()
}

/// Constant minimizing the summed pinball loss, by ternary search on the
/// convex objective between the sample extremes.
pub fn fit_constant_pinball(values: &[f64], p: f64) -> f64 {
    let mask = vec![1.0; values.len()];
    let objective = |c: f64| {
        let q = vec![c; values.len()];
        holdwise::dqr::loss::pinball_loss(values, &q, p, &mask).unwrap()
    };
    let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if objective(m1) <= objective(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

/// Noisy sinusoid per link: `sin(2πt/period + link) + N(0, sigma²)`.
pub fn noisy_sinusoid(n_steps: usize, n_links: usize, period: f64, sigma: f64, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut v = Vec::with_capacity(n_steps * n_links);
    for t in 0..n_steps {
        for l in 0..n_links {
            let phase = t as f64 * 2.0 * std::f64::consts::PI / period + l as f64;
            v.push(phase.sin() + noise.sample(&mut rng));
        }
    }
    v
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// 5% critical value of the two-sample KS statistic (asymptotic).
pub fn ks_critical_5pct(n: usize, m: usize) -> f64 {
    1.358 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
