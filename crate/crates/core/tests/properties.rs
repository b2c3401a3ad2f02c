//! Property suites over the core primitives.

use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;

use archopt::cost::{rank_consistency, CostEntry, CostTable};
use archopt::moo::{self, ObjectivePoint, ParetoArchive};
use archopt::space::{ContinuousPoint, DecisionVector, SearchSpace, StageId};

fn default_space() -> SearchSpace {
    SearchSpace::nanosd_default()
}

fn unit_coords() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(0.0f64..=1.0)
}

proptest! {
    // Projection is total and idempotent through cell centers.
    #[test]
    fn projection_total_and_idempotent(coords in unit_coords()) {
        let space = default_space();
        let x = ContinuousPoint::new(coords).unwrap();
        let z = space.project(&x);
        prop_assert!(space.validate(&z).is_ok());
        prop_assert_eq!(space.project(&space.cell_center(&z)), z);
    }

    // encode then decode is the identity on valid vectors.
    #[test]
    fn arch_string_roundtrip(raw in prop::array::uniform6(0usize..8)) {
        let space = default_space();
        let counts = space.counts();
        let mut indices = raw;
        for (i, v) in indices.iter_mut().enumerate() {
            *v %= counts[i];
        }
        let z = DecisionVector::new(indices);
        let s = space.encode_arch(&z).unwrap();
        prop_assert_eq!(space.decode_arch(&s).unwrap(), z);
    }

    // Pareto front extraction is idempotent and order-invariant.
    #[test]
    fn front_idempotent_order_invariant(
        points in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..40),
        seed in 0u64..1000,
    ) {
        let tagged: Vec<ObjectivePoint<f64>> = points
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ObjectivePoint::new(*a, *b, format!("p{i:03}")))
            .collect();
        let front = moo::pareto_front(&tagged).unwrap();
        let again = moo::pareto_front(&front).unwrap();
        prop_assert_eq!(&front, &again);

        // Shuffle deterministically from the seed.
        let mut shuffled = tagged.clone();
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let front_shuffled = moo::pareto_front(&shuffled).unwrap();
        let ids: Vec<&str> = front.iter().map(|p| p.id.as_str()).collect();
        let ids_shuffled: Vec<&str> = front_shuffled.iter().map(|p| p.id.as_str()).collect();
        prop_assert_eq!(ids, ids_shuffled);

        // No member weakly dominates another.
        for a in &front {
            for b in &front {
                if a.id != b.id {
                    prop_assert!(!moo::dominates(a, b));
                }
            }
        }
    }

    // Hypervolume never decreases when a point joins the set, and is
    // unchanged when the newcomer is dominated.
    #[test]
    fn hypervolume_insertion_monotone(
        points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..20),
        extra in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let tagged: Vec<ObjectivePoint<f64>> = points
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ObjectivePoint::new(*a, *b, format!("p{i:03}")))
            .collect();
        let ref_point = (1.5, 1.5);
        let base = ParetoArchive::from_points(&tagged, ref_point).unwrap();
        let hv = moo::hypervolume_2d(&base);

        let mut with_extra = tagged.clone();
        let q = ObjectivePoint::new(extra.0, extra.1, "q-extra".to_string());
        let dominated = tagged.iter().any(|p| moo::dominates(p, &q));
        with_extra.push(q);
        let grown = ParetoArchive::from_points(&with_extra, ref_point).unwrap();
        let hv2 = moo::hypervolume_2d(&grown);
        prop_assert!(hv2 >= hv - 1e-12);
        if dominated {
            prop_assert!((hv2 - hv).abs() <= 1e-12);
        }
    }

    // EHVI of a point mass equals the deterministic improvement computed by
    // the independent union-minus-base hypervolume route.
    #[test]
    fn ehvi_point_mass_matches_hv_difference(
        points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..15),
        candidate in (0.0f64..1.2, 0.0f64..1.2),
    ) {
        let tagged: Vec<ObjectivePoint<f64>> = points
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ObjectivePoint::new(*a, *b, format!("p{i:03}")))
            .collect();
        let ref_point = (1.5, 1.5);
        let base = ParetoArchive::from_points(&tagged, ref_point).unwrap();
        let hv = moo::hypervolume_2d(&base);
        let mut union = tagged.clone();
        union.push(ObjectivePoint::new(candidate.0, candidate.1, "q".to_string()));
        let hv_union = moo::hypervolume_2d(&ParetoArchive::from_points(&union, ref_point).unwrap());
        let expected = hv_union - hv;
        let got = moo::ehvi_2d(candidate.0, 0.0, candidate.1, 0.0, &base).unwrap();
        prop_assert!((got - expected).abs() < 1e-9, "{} vs {}", got, expected);
    }

    // EHVI is non-negative for arbitrary Gaussian moments.
    #[test]
    fn ehvi_nonnegative(
        points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..10),
        mu in (-0.5f64..2.0, -0.5f64..2.0),
        var in (0.0f64..0.5, 0.0f64..0.5),
    ) {
        let tagged: Vec<ObjectivePoint<f64>> = points
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ObjectivePoint::new(*a, *b, format!("p{i:03}")))
            .collect();
        let archive = ParetoArchive::from_points(&tagged, (1.5, 1.5)).unwrap();
        let v = moo::ehvi_2d(mu.0, var.0, mu.1, var.1, &archive).unwrap();
        prop_assert!(v >= 0.0);
    }

    // Composed latency is additive: the whole-model estimate equals the
    // overhead plus six independent per-stage lookups.
    #[test]
    fn latency_estimate_decomposes(raw in prop::array::uniform6(0usize..8)) {
        let space = default_space();
        let table = CostTable::parse(include_str!(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../profiles/sm8750_fp16"
        )))
        .unwrap();
        let counts = space.counts();
        let mut indices = raw;
        for (i, v) in indices.iter_mut().enumerate() {
            *v %= counts[i];
        }
        let z = DecisionVector::new(indices);
        let estimate = table.estimate_latency(&z, &space).unwrap();
        let mut by_hand = table.fixed_overhead_ms;
        for stage in StageId::ALL {
            let label = space.variants(stage)[z.indices[stage.ordinal()]].label();
            by_hand += table.get(stage, label).unwrap().latency_ms;
        }
        prop_assert!((estimate - by_hand).abs() < 1e-12);
    }

    // Raising one selected block's latency strictly raises the estimate.
    #[test]
    fn latency_estimate_monotone(
        raw in prop::array::uniform6(0usize..8),
        stage_pick in 0usize..6,
        bump in 0.1f64..50.0,
    ) {
        let space = default_space();
        let base_table = CostTable::parse(include_str!(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../profiles/sm8750_fp16"
        )))
        .unwrap();
        let counts = space.counts();
        let mut indices = raw;
        for (i, v) in indices.iter_mut().enumerate() {
            *v %= counts[i];
        }
        let z = DecisionVector::new(indices);
        let stage = StageId::ALL[stage_pick];
        let label = space.variants(stage)[z.indices[stage.ordinal()]].label().to_owned();

        let mut bumped = CostTable::new(&base_table.device, &base_table.precision, base_table.fixed_overhead_ms);
        for s in StageId::ALL {
            for v in space.variants(s) {
                let entry = base_table.get(s, v.label()).unwrap();
                let latency = if s == stage && v.label() == label {
                    entry.latency_ms + bump
                } else {
                    entry.latency_ms
                };
                bumped.insert(CostEntry {
                    stage: s,
                    label: v.label().to_owned(),
                    latency_ms: latency,
                    params_m: entry.params_m,
                }).unwrap();
            }
        }
        let before = base_table.estimate_latency(&z, &space).unwrap();
        let after = bumped.estimate_latency(&z, &space).unwrap();
        prop_assert!(after > before, "{} !> {}", after, before);
    }

    // Spearman agrees with an independent O(n^2) rank implementation.
    #[test]
    fn spearman_matches_quadratic_oracle(
        values in prop::collection::vec((0i32..20, 0i32..20), 3..25),
    ) {
        let a: BTreeMap<String, f64> = values
            .iter()
            .enumerate()
            .map(|(i, (x, _))| (format!("k{i:02}"), *x as f64))
            .collect();
        let b: BTreeMap<String, f64> = values
            .iter()
            .enumerate()
            .map(|(i, (_, y))| (format!("k{i:02}"), *y as f64))
            .collect();
        let got = rank_consistency(&a, &b);
        let expected = quadratic_spearman(&a, &b);
        match (got, expected) {
            (Ok(g), Some(e)) => prop_assert!((g - e).abs() < 1e-10, "{} vs {}", g, e),
            (Err(_), None) => {}
            (g, e) => prop_assert!(false, "disagreement: {:?} vs {:?}", g, e),
        }
    }
}

/// Independent Spearman: O(n^2) average ranks by pairwise counting, then a
/// textbook Pearson correlation of the ranks.
fn quadratic_spearman(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Option<f64> {
    let keys: Vec<&String> = a.keys().collect();
    let va: Vec<f64> = keys.iter().map(|k| a[*k]).collect();
    let vb: Vec<f64> = keys.iter().map(|k| b[*k]).collect();
    let rank = |vals: &[f64]| -> Vec<f64> {
        vals.iter()
            .map(|&v| {
                let below = vals.iter().filter(|&&w| w < v).count() as f64;
                let equal = vals.iter().filter(|&&w| w == v).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let ra = rank(&va);
    let rb = rank(&vb);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let sa: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let sb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    if sa == 0.0 || sb == 0.0 {
        // Degenerate: a constant column has no rank ordering. The crate's
        // routine would return NaN here, so exclude the case.
        return None;
    }
    Some(cov / (sa * sb).sqrt())
}

/// Cell-volume check for the projection: empirical cell frequencies on one
/// axis stay within 3 sigma of the uniform multinomial.
#[test]
fn projection_cell_frequencies_uniform() {
    let space = default_space();
    let n = 200_000usize;
    let mut state = 0x1234_5678_9abc_def0u64;
    let mut unit = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut counts = [[0usize; 8]; 6];
    for _ in 0..n {
        let coords = [unit(), unit(), unit(), unit(), unit(), unit()];
        let z = space.project(&ContinuousPoint::new(coords).unwrap());
        for stage in StageId::ALL {
            counts[stage.ordinal()][z.indices[stage.ordinal()]] += 1;
        }
    }
    for stage in StageId::ALL {
        let k = space.count(stage);
        let p = 1.0 / k as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (idx, &count) in counts[stage.ordinal()][..k].iter().enumerate() {
            let observed = count as f64;
            let expected = n as f64 * p;
            assert!(
                (observed - expected).abs() <= 3.0 * sigma,
                "stage {stage} cell {idx}: {observed} vs {expected} (sigma {sigma})"
            );
        }
    }
}

/// Enumeration yields exactly the cardinality with no duplicates, checked by
/// hashing, on a sub-100k space.
#[test]
fn enumeration_exact_and_duplicate_free() {
    let space = default_space();
    let mut seen = HashSet::new();
    let mut count = 0u64;
    for z in space.enumerate(100_000).unwrap() {
        assert!(seen.insert(z));
        count += 1;
    }
    assert_eq!(count as u128, space.cardinality());
}

/// Frechet distance is zero iff the statistics coincide (both directions,
/// random instances).
#[test]
fn frechet_identity_of_indiscernibles() {
    use archopt::frechet::{frechet_distance, GaussianStats};
    let mut state = 0xfeed_beef_dead_cafeu64;
    let mut unit = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _case in 0..10 {
        let d = 4;
        let mean: Vec<f64> = (0..d).map(|_| unit() * 4.0 - 2.0).collect();
        // PSD covariance via B B^T + small ridge.
        let b: Vec<f64> = (0..d * d).map(|_| unit() * 2.0 - 1.0).collect();
        let mut cov = vec![0.0f64; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += b[i * d + k] * b[j * d + k];
                }
                cov[i * d + j] = s + if i == j { 0.1 } else { 0.0 };
            }
        }
        let stats = GaussianStats::from_moments(mean.clone(), cov.clone(), 100).unwrap();
        let same = GaussianStats::from_moments(mean.clone(), cov.clone(), 100).unwrap();
        assert!(frechet_distance(&stats, &same).unwrap() <= 1e-6);

        // Perturb the mean: distance strictly positive.
        let mut mean2 = mean.clone();
        mean2[0] += 0.5;
        let moved = GaussianStats::from_moments(mean2, cov.clone(), 100).unwrap();
        assert!(frechet_distance(&stats, &moved).unwrap() > 1e-6);

        // Perturb the covariance: distance strictly positive.
        let mut cov2 = cov.clone();
        cov2[0] += 0.5;
        let widened = GaussianStats::from_moments(mean, cov2, 100).unwrap();
        assert!(frechet_distance(&stats, &widened).unwrap() > 1e-6);
    }
}
