//! Brute-force reference implementations shared by the integration tests
//! and the acceptance harness. Each one recomputes a quantity from its
//! definition, without calling the library routine it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use placeattr::domain::{PlaceTable, VisitEvent, VisitLog};

/// A Sunday 00:00 UTC, used to anchor the week.
pub const SUNDAY: i64 = 1_704_585_600;

/// Pairwise AUC: positives beating negatives, ties counted half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Hour of week counted in whole hours from a reference Sunday.
pub fn how(ts: i64, utc_offset: i64) -> usize {
    ((ts + utc_offset - SUNDAY).div_euclid(3600)).rem_euclid(168) as usize
}

fn departure(e: &VisitEvent) -> i64 {
    e.arrival + 60 * i64::from(e.duration_min)
}

/// Number of edges at or below `minutes`.
fn dur_bin(minutes: u32, edges: &[u32]) -> usize {
    edges.iter().filter(|e| **e <= minutes).count()
}

/// Every nonzero STEPS value of every place with at least `min_visitors`
/// distinct visitors, keyed by place id then feature name.
pub fn brute_features(
    log: &VisitLog,
    places: &PlaceTable,
    edges: &[u32],
    windows: &[u32],
    min_visitors: usize,
    utc_offset: i64,
) -> BTreeMap<String, BTreeMap<String, f64>> {
    let events = log.events();
    let mut visitors: HashMap<usize, BTreeSet<u32>> = HashMap::new();
    let mut by_place: HashMap<usize, Vec<&VisitEvent>> = HashMap::new();
    let mut by_person: HashMap<u32, Vec<&VisitEvent>> = HashMap::new();
    for e in events {
        visitors.entry(e.place.index()).or_default().insert(e.person);
        by_place.entry(e.place.index()).or_default().push(e);
        by_person.entry(e.person).or_default().push(e);
    }
    let cat_name = |e: &VisitEvent| places.category_name_of(e.place).to_string();

    let mut out = BTreeMap::new();
    for (p, vs) in &by_place {
        if visitors[p].len() < min_visitors {
            continue;
        }
        let n = vs.len() as f64;
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        let mut bump = |k: String| *counts.entry(k).or_insert(0.0) += 1.0;
        for t in vs {
            bump(format!("dur:{:02}", dur_bin(t.duration_min, edges)));
            bump(format!("arr:{:03}", how(t.arrival, utc_offset)));
            let mut hours = BTreeSet::new();
            let mut h = (t.arrival + utc_offset).div_euclid(3600) * 3600 - utc_offset;
            while h < departure(t) {
                hours.insert(how(h.max(t.arrival), utc_offset));
                h += 3600;
            }
            for hw in hours {
                bump(format!("occ:{hw:03}"));
            }
            for w in windows {
                let w_s = i64::from(*w) * 3600;
                let mut prev = BTreeSet::new();
                let mut next = BTreeSet::new();
                for o in &by_person[&t.person] {
                    if o.arrival < t.arrival && t.arrival - o.arrival <= w_s {
                        prev.insert(cat_name(o));
                    }
                    if o.arrival > t.arrival && o.arrival - departure(t) <= w_s {
                        next.insert(cat_name(o));
                    }
                }
                for c in prev {
                    bump(format!("tprev:{c}:{w}h"));
                }
                for c in next {
                    bump(format!("tnext:{c}:{w}h"));
                }
            }
        }
        let row = counts.into_iter().map(|(k, c)| (k, c / n)).collect();
        out.insert(places.places()[*p].place_id.clone(), row);
    }
    out
}

/// Equal-frequency bin from the definition: a value's bin is that of its
/// first rank, `floor(#smaller * n_bins / n)`.
pub fn brute_bins(column: &[f64], n_bins: usize) -> Vec<usize> {
    let n = column.len();
    column
        .iter()
        .map(|v| column.iter().filter(|u| *u < v).count() * n_bins / n)
        .collect()
}

/// Plug-in MI in nats over the brute-force binning.
pub fn brute_mi(column: &[f64], labels: &[bool], n_bins: usize) -> f64 {
    let bins = brute_bins(column, n_bins);
    let n = column.len() as f64;
    let mut mi = 0.0;
    for b in 0..n_bins {
        for y in [false, true] {
            let nxy = (0..column.len()).filter(|i| bins[*i] == b && labels[*i] == y).count() as f64;
            if nxy == 0.0 {
                continue;
            }
            let nx = bins.iter().filter(|x| **x == b).count() as f64;
            let ny = labels.iter().filter(|l| **l == y).count() as f64;
            mi += (nxy / n) * ((nxy / n) / ((nx / n) * (ny / n))).ln();
        }
    }
    mi
}

/// Names of the `k` columns with the highest MI, ties by name, from
/// pairwise comparisons.
pub fn brute_top_k(names: &[String], mis: &[f64], k: usize) -> Vec<String> {
    let beats = |a: usize, b: usize| mis[a] > mis[b] || (mis[a] == mis[b] && names[a] < names[b]);
    let mut ranked: Vec<(usize, usize)> = (0..names.len())
        .map(|i| ((0..names.len()).filter(|j| beats(*j, i)).count(), i))
        .collect();
    ranked.sort();
    ranked.iter().take(k).map(|(_, i)| names[*i].clone()).collect()
}

/// `sum_ij w_ij (r_ij - u_i . v_j)^2 + lambda (|U|_F^2 + |V|_F^2)` over a
/// dense row-major matrix.
pub fn dense_wals_objective(
    values: &[f64],
    weights: &[f64],
    n_rows: usize,
    n_cols: usize,
    u: &[f64],
    v: &[f64],
    rank: usize,
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for i in 0..n_rows {
        for j in 0..n_cols {
            let p: f64 = (0..rank).map(|k| u[i * rank + k] * v[j * rank + k]).sum();
            let r = values[i * n_cols + j] - p;
            total += weights[i * n_cols + j] * r * r;
        }
    }
    total + lambda * (u.iter().map(|x| x * x).sum::<f64>() + v.iter().map(|x| x * x).sum::<f64>())
}

fn logistic(m: f64) -> f64 {
    (1.0 + (-m).exp()).ln()
}

/// Class-weighted, L2-regularized logistic objective and its gradient.
pub fn logistic_objective(x: &[f64], y: &[bool], d: usize, c: &[f64], l2: f64, w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
    let n = y.len();
    let mut f = 0.0;
    let mut gw = vec![0.0; d];
    let mut gb = 0.0;
    for i in 0..n {
        let yi = if y[i] { 1.0 } else { -1.0 };
        let s = b + (0..d).map(|j| x[i * d + j] * w[j]).sum::<f64>();
        f += c[i] * logistic(yi * s);
        let g = -c[i] * yi / (1.0 + (yi * s).exp());
        for j in 0..d {
            gw[j] += g * x[i * d + j];
        }
        gb += g;
    }
    let nf = n as f64;
    f = f / nf + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for j in 0..d {
        gw[j] = gw[j] / nf + l2 * w[j];
    }
    (f, gw, gb / nf)
}

/// Minimum of the logistic objective by batch gradient descent with
/// backtracking, run until the gradient norm is below `tol`.
pub fn batch_logistic_min(x: &[f64], y: &[bool], d: usize, c: &[f64], l2: f64, tol: f64) -> f64 {
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut step = 1.0;
    for _ in 0..200_000 {
        let (f, gw, gb) = logistic_objective(x, y, d, c, l2, &w, b);
        let gnorm2 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if gnorm2.sqrt() < tol {
            return f;
        }
        loop {
            let w2: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - step * g).collect();
            let b2 = b - step * gb;
            let (f2, _, _) = logistic_objective(x, y, d, c, l2, &w2, b2);
            if f2 <= f - 0.5 * step * gnorm2 {
                w = w2;
                b = b2;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
    }
    logistic_objective(x, y, d, c, l2, &w, b).0
}
