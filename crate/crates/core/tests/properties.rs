//! Invariants over random inputs, plus dataset file round trips.

use proptest::prelude::*;
use shadowforge_core::dataset::{
    build_hybrid_dataset, mask_subset, read_dataset, write_dataset, DataPoint, DatasetConfig, Scope, Split, SystemKind,
    Tier,
};
use shadowforge_core::learner::{featurize, r_squared, FeatureConfig, OUTCOMES_PER_QUBIT};
use shadowforge_core::shadows::{estimate_purity, label_vector, pair_table};
use shadowforge_core::{MeasurementRecord, SubsystemSpec, Task};

fn record(n: usize, codes: Vec<u8>) -> MeasurementRecord {
    MeasurementRecord::from_codes(n, codes).unwrap()
}

fn arb_record() -> impl Strategy<Value = MeasurementRecord> {
    (2usize..6, 2usize..40).prop_flat_map(|(n, m)| prop::collection::vec(0u8..6, n * m).prop_map(move |c| record(n, c)))
}

fn point(rec: MeasurementRecord) -> DataPoint {
    DataPoint { id: 3, split: Split::U, tier: Tier::Low, params: vec![0.5], visible: rec.m(), record: rec, labels: None }
}

#[test]
fn pair_table_is_symmetric_with_three_values() {
    let t = pair_table();
    for (a, row) in t.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            assert_eq!(v, t[b][a]);
            assert!([5.0, -4.0, 0.5].contains(&v));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_blocks_are_distributions(rec in arb_record()) {
        let n = rec.n_qubits();
        let f = featurize(&point(rec), &FeatureConfig { n_qubits: n, n_params: 1, use_params: true }).unwrap();
        prop_assert_eq!(f.len(), OUTCOMES_PER_QUBIT * n + 1);
        for block in f[..OUTCOMES_PER_QUBIT * n].chunks(OUTCOMES_PER_QUBIT) {
            prop_assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(block.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
        prop_assert_eq!(f[OUTCOMES_PER_QUBIT * n], 0.5);
    }

    #[test]
    fn full_mask_is_identity(rec in arb_record()) {
        let pt = point(rec);
        let all: Vec<usize> = (0..pt.visible).collect();
        let masked = mask_subset(&pt, &all).unwrap();
        prop_assert_eq!(&masked.record, &pt.record);
        prop_assert_eq!(masked.labels, None);
        prop_assert_eq!(masked.id, pt.id);
    }

    #[test]
    fn masks_keep_selected_snapshots(rec in arb_record(), pick in prop::collection::vec(any::<bool>(), 40)) {
        let pt = point(rec);
        let idx: Vec<usize> = (0..pt.visible).filter(|&j| pick[j]).collect();
        prop_assume!(!idx.is_empty());
        let masked = mask_subset(&pt, &idx).unwrap();
        prop_assert_eq!(masked.record.m(), idx.len());
        for (k, &j) in idx.iter().enumerate() {
            prop_assert_eq!(masked.record.snapshot(k), pt.record.snapshot(j));
        }
    }

    #[test]
    fn purity_is_invariant_to_snapshot_order(rec in arb_record(), shift in 0usize..40) {
        let m = rec.m();
        let order: Vec<usize> = (0..m).map(|j| (j + shift) % m).collect();
        let rotated = rec.select(&order).unwrap();
        let sub = SubsystemSpec::new(vec![1, 2], rec.n_qubits()).unwrap();
        let a = estimate_purity(&rec, &sub).unwrap();
        let b = estimate_purity(&rotated, &sub).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn label_vectors_have_n_minus_one_entries(rec in arb_record()) {
        let n = rec.n_qubits();
        for task in [Task::Entropy, Task::CorrX, Task::CorrZ] {
            let y = label_vector(&rec, task).unwrap();
            prop_assert_eq!(y.len(), n - 1);
            if task == Task::Entropy {
                for (j, v) in y.iter().enumerate() {
                    let size = (j + 1).min(n - j - 1) as f64;
                    prop_assert!(*v >= 0.0 && *v <= size + 1e-12);
                }
            }
        }
    }

    #[test]
    fn r_squared_ignores_point_order(
        rows in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 3..20),
        shift in 0usize..20,
    ) {
        let preds: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
        let truths: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.2, r.3]).collect();
        let k = rows.len();
        let rot = |v: &[Vec<f64>]| (0..k).map(|i| v[(i + shift) % k].clone()).collect::<Vec<_>>();
        let a = r_squared(&preds, &truths).unwrap();
        let b = r_squared(&rot(&preds), &rot(&truths)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

fn small_config(system: SystemKind, task: Task) -> DatasetConfig {
    DatasetConfig { n: 24, r: 0.25, m_l: 64, m_u: 8, n_val: 5, n_test: 4, seed: 11, ..DatasetConfig::new(system, 4, task) }
}

#[test]
fn dataset_round_trips_byte_for_byte() {
    for (system, task) in [(SystemKind::Xxz, Task::Entropy), (SystemKind::ClusterIsing, Task::CorrX)] {
        let ds = build_hybrid_dataset(&small_config(system, task)).unwrap();
        let mut first = Vec::new();
        write_dataset(&ds, &mut first).unwrap();
        let back = read_dataset(first.as_slice(), Scope::Full).unwrap();
        assert_eq!(back, ds);
        let mut second = Vec::new();
        write_dataset(&back, &mut second).unwrap();
        assert_eq!(first, second);
    }
}

#[test]
fn split_sizes_and_labels() {
    let cfg = small_config(SystemKind::Xxz, Task::CorrZ);
    let ds = build_hybrid_dataset(&cfg).unwrap();
    assert_eq!((ds.s_l.len(), ds.s_u.len(), ds.s_val.len()), (6, 18, 5));
    assert_eq!(ds.test_points().unwrap().len(), 4);
    assert!(ds.s_l.iter().all(|p| p.labels.as_ref().map(Vec::len) == Some(3) && p.record.m() == 64));
    assert!(ds.s_u.iter().all(|p| p.labels.is_none() && p.record.m() == 8));
    assert!(ds.s_val.iter().all(|p| p.visible == 8 && p.record.m() == 64 && p.labels.is_some()));
    let mut ids: Vec<u64> = ds.points().map(|p| p.id).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 6 + 18 + 5 + 4);
}

#[test]
fn training_scope_refuses_test_split() {
    let ds = build_hybrid_dataset(&small_config(SystemKind::Xxz, Task::Entropy)).unwrap();
    let mut bytes = Vec::new();
    write_dataset(&ds, &mut bytes).unwrap();
    let train = read_dataset(bytes.as_slice(), Scope::Training).unwrap();
    assert!(train.test_points().is_err());
    assert_eq!(train.s_l, ds.s_l);
}
