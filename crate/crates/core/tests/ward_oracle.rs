mod support;

use ecodrive_core::clustering::{cut_dendrogram, ward_cluster, Cut, FeatureVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{groups_of, naive_partition, naive_ward, rel_close};

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect()
}

#[test]
fn matches_naive_reference_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let n = rng.gen_range(2..=25);
        let pts = random_points(&mut rng, n);
        let fast = ward_cluster(&pts).unwrap();
        let naive = naive_ward(&pts);
        for (step, (f, s)) in fast.merges.iter().zip(&naive).enumerate() {
            assert_eq!((f.left, f.right), (s.left, s.right), "step {step} of n={n}");
            assert!(
                rel_close(f.height, s.height, 1e-9),
                "step {step}: {} vs {}",
                f.height,
                s.height
            );
        }
        for k in 1..=n {
            let got = groups_of(&cut_dendrogram(&fast, Cut::Clusters(k)).unwrap());
            assert_eq!(got, naive_partition(n, &naive, n - k), "k={k}");
        }
    }
}

fn point_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 6), 2..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cut_is_a_partition_with_k_clusters(pts in point_strategy(), kf in 0.0f64..1.0) {
        let n = pts.len();
        let k = 1 + ((n - 1) as f64 * kf) as usize;
        let d = ward_cluster(&pts).unwrap();
        prop_assert_eq!(d.merges.len(), n - 1);
        let a = cut_dendrogram(&d, Cut::Clusters(k)).unwrap();
        prop_assert_eq!(a.len(), n);
        let mut seen = vec![false; k];
        for &c in &a {
            prop_assert!(c >= 1 && c <= k);
            seen[c - 1] = true;
        }
        prop_assert!(seen.iter().all(|s| *s));
        // ids ordered by first member
        let mut firsts: Vec<usize> = (1..=k).map(|c| a.iter().position(|&x| x == c).unwrap()).collect();
        let sorted = { let mut f = firsts.clone(); f.sort(); f };
        prop_assert_eq!(&mut firsts, &sorted);
    }

    #[test]
    fn every_node_is_a_child_once(pts in point_strategy()) {
        let n = pts.len();
        let d = ward_cluster(&pts).unwrap();
        let mut used = vec![0usize; 2 * n - 1];
        for (i, m) in d.merges.iter().enumerate() {
            prop_assert!(m.left < m.right && m.right < n + i);
            used[m.left] += 1;
            used[m.right] += 1;
        }
        prop_assert!(used[..2 * n - 2].iter().all(|&u| u == 1));
        prop_assert_eq!(used[2 * n - 2], 0);
        prop_assert_eq!(d.merges.last().unwrap().size, n);
    }

    #[test]
    fn heights_do_not_decrease(pts in point_strategy()) {
        let d = ward_cluster(&pts).unwrap();
        let h: Vec<f64> = d.heights().collect();
        for w in h.windows(2) {
            prop_assert!(w[1] >= w[0] * (1.0 - 1e-12), "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn permutation_preserves_partitions(pts in point_strategy(), seed in any::<u64>()) {
        let n = pts.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let d1 = ward_cluster(&pts).unwrap();
        let d2 = ward_cluster(&shuffled).unwrap();
        for k in 1..=n {
            let a = groups_of(&cut_dendrogram(&d1, Cut::Clusters(k)).unwrap());
            let b: Vec<Vec<usize>> = groups_of(&cut_dendrogram(&d2, Cut::Clusters(k)).unwrap())
                .into_iter()
                .map(|g| g.into_iter().map(|i| perm[i]).collect())
                .collect();
            prop_assert_eq!(a, support::canonical(b), "k={}", k);
        }
    }

    #[test]
    fn standardized_dims_have_unit_moments(pts in prop::collection::vec(prop::array::uniform6(-1e3f64..1e3), 2..60)) {
        let vs: Vec<FeatureVector> = pts.into_iter().map(FeatureVector).collect();
        let (z, stats) = ecodrive_core::clustering::standardize(&vs).unwrap();
        let n = z.len() as f64;
        for d in 0..6 {
            let mean = z.iter().map(|v| v.0[d]).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            if stats.std_dev[d] > 0.0 {
                let var = z.iter().map(|v| (v.0[d] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }
}
