//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

/// One agglomeration step of the naive reference.
#[derive(Debug, Clone, Copy)]
pub struct NaiveMerge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
}

fn sse(points: &[Vec<f64>], members: &[usize]) -> f64 {
    let dim = points[0].len();
    let n = members.len() as f64;
    let mut centroid = vec![0.0; dim];
    for &m in members {
        for d in 0..dim {
            centroid[d] += points[m][d] / n;
        }
    }
    members
        .iter()
        .map(|&m| {
            (0..dim)
                .map(|d| (points[m][d] - centroid[d]).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Ward agglomeration that recomputes every candidate merge's increase in
/// within-cluster sum of squares from scratch. O(n^4); keep n small.
pub fn naive_ward(points: &[Vec<f64>]) -> Vec<NaiveMerge> {
    let n = points.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    let mut next_id = n;
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let (ia, ma) = &clusters[a];
                let (ib, mb) = &clusters[b];
                let mut union = ma.clone();
                union.extend(mb);
                let delta = sse(points, &union) - sse(points, ma) - sse(points, mb);
                let key = (delta, (*ia).min(*ib), (*ia).max(*ib));
                let better = match best {
                    None => true,
                    Some((d, lo, hi, _, _)) => (key.0, key.1, key.2) < (d, lo, hi),
                };
                if better {
                    best = Some((key.0, key.1, key.2, a, b));
                }
            }
        }
        let (delta, lo, hi, a, b) = best.unwrap();
        out.push(NaiveMerge {
            left: lo,
            right: hi,
            height: (2.0 * delta.max(0.0)).sqrt(),
        });
        let (_, mb) = clusters.remove(b);
        let (_, ma) = clusters.remove(a);
        let mut union = ma;
        union.extend(mb);
        clusters.push((next_id, union));
        next_id += 1;
    }
    out
}

/// Flat partition after applying the first `steps` naive merges, as a
/// canonical list of sorted member lists.
pub fn naive_partition(n: usize, merges: &[NaiveMerge], steps: usize) -> Vec<Vec<usize>> {
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    for m in &merges[..steps] {
        let mut a = members[m.left].take().unwrap();
        a.extend(members[m.right].take().unwrap());
        members.push(Some(a));
    }
    canonical(members.into_iter().flatten().collect())
}

pub fn canonical(mut groups: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort();
    groups
}

/// Groups leaf indices by assigned cluster id.
pub fn groups_of(assignment: &[usize]) -> Vec<Vec<usize>> {
    let k = assignment.iter().copied().max().unwrap_or(0);
    let mut groups = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        groups[c - 1].push(i);
    }
    canonical(groups)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Lowest size-weighted Gini impurity over every feature and every
/// threshold between distinct values, found by direct counting. `None` if
/// no feature has two distinct values.
pub fn exhaustive_best_impurity(rows: &[[f64; 6]], classes: &[u8]) -> Option<f64> {
    let gini = |c: [f64; 2]| {
        let n = c[0] + c[1];
        if n == 0.0 {
            0.0
        } else {
            1.0 - (c[0] / n).powi(2) - (c[1] / n).powi(2)
        }
    };
    let n = rows.len() as f64;
    let mut best: Option<f64> = None;
    for f in 0..6 {
        let mut values: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (mut l, mut r) = ([0.0; 2], [0.0; 2]);
            for (row, &c) in rows.iter().zip(classes) {
                if row[f] <= t {
                    l[c as usize] += 1.0;
                } else {
                    r[c as usize] += 1.0;
                }
            }
            let imp = ((l[0] + l[1]) * gini(l) + (r[0] + r[1]) * gini(r)) / n;
            if best.is_none_or(|b| imp < b) {
                best = Some(imp);
            }
        }
    }
    best
}

/// Event carrying exactly the given feature values (weather by severity
/// rank under the default order).
pub fn event_with_features(
    f: [f64; 6],
    label: ecodrive_core::EfficiencyLabel,
) -> ecodrive_core::DrivingEvent {
    use chrono::TimeZone;
    ecodrive_core::DrivingEvent {
        journey_id: "J".into(),
        minute_start: chrono::Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
        avg_speed: f[0],
        avg_acceleration: f[1],
        is_idling: f[2] != 0.0,
        elevation_change: f[3],
        hour: f[4] as u8,
        weather: ecodrive_core::WeatherCondition::ALL[f[5] as usize],
        distance: f[0] / 60.0,
        fuel_consumed: 0.02,
        fuel_mileage: Some(f[0] / 60.0 / 0.02),
        location_anchor: (7.0, 80.0),
        label,
    }
}

/// `n` events with random features, inefficient exactly when speed < 10.
pub fn separable_events(n: usize, seed: u64) -> Vec<ecodrive_core::DrivingEvent> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let f = [
                rng.gen_range(0.0..100.0),
                rng.gen_range(-3000.0..3000.0),
                rng.gen_range(0..2) as f64,
                rng.gen_range(-20.0..20.0),
                rng.gen_range(0..24) as f64,
                rng.gen_range(0..12) as f64,
            ];
            let label = if f[0] < 10.0 {
                ecodrive_core::EfficiencyLabel::Inefficient
            } else {
                ecodrive_core::EfficiencyLabel::Efficient
            };
            event_with_features(f, label)
        })
        .collect()
}

/// Same events with labels permuted at random.
pub fn shuffle_labels(events: &mut [ecodrive_core::DrivingEvent], seed: u64) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<_> = events.iter().map(|e| e.label).collect();
    labels.shuffle(&mut rng);
    for (e, l) in events.iter_mut().zip(labels) {
        e.label = l;
    }
}
