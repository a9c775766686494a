//! Dataset, attack and model-file invariants.

use std::io::Write;

use pamacf::attack::{attack, filler_pool, generate_profiles, least_popular_items, popularity_order};
use pamacf::dataset::{load_interactions, synthetic_clusters, Split, SyntheticConfig};
use pamacf::model::EmbeddingModel;
use pamacf::{AttackMethod, AttackSpec, InteractionDataset, SplitConfig};
use proptest::prelude::*;

fn lists(max_users: usize, n_items: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::btree_set(0..n_items, 1..n_items), 1..max_users)
        .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_every_user(train in lists(30, 40), seed in 0u64..1000, tf in 0.0f64..0.6, vf in 0.0f64..0.3) {
        let ds = InteractionDataset::from_train(40, train.clone()).unwrap();
        let cfg = SplitConfig { test_fraction: tf, validation_fraction_of_train: vf, min_interactions: 0, seed };
        let s = ds.split(&cfg).unwrap();
        let mut kept = 0;
        for (u, orig) in train.iter().enumerate() {
            let n = orig.len();
            let n_test = ((tf * n as f64).ceil() as usize).min(n);
            if n_test == n {
                continue;
            }
            let v = kept;
            kept += 1;
            prop_assert_eq!(s.user_ids()[v], u as u64);
            let mut all: Vec<usize> = s.train(v).iter().chain(s.validation(v)).chain(s.test(v)).copied().collect();
            all.sort();
            prop_assert_eq!(&all, orig);
            prop_assert_eq!(s.test(v).len(), n_test);
            prop_assert_eq!(s.validation(v).len(), ((vf * n as f64).floor() as usize).min(n - n_test));
            prop_assert!(!s.train(v).is_empty());
        }
        prop_assert_eq!(s.n_users(), kept);
        prop_assert_eq!(ds.split(&cfg).unwrap(), s);
    }

    #[test]
    fn filter_leaves_only_dense_rows(train in lists(30, 25), k in 1usize..6) {
        let ds = InteractionDataset::from_train(25, train).unwrap();
        if let Ok(f) = ds.filter_min_interactions(k) {
            for u in 0..f.n_users() {
                prop_assert!(f.train(u).len() >= k);
            }
            prop_assert!(f.item_popularity().iter().all(|&p| p >= k));
        }
    }

    #[test]
    fn attack_profiles_respect_the_spec(seed in 0u64..500, budget in 0.005f64..0.3, bandwagon in any::<bool>()) {
        let ds = synthetic_clusters(&SyntheticConfig { n_users: 60, n_items: 90, mean_interactions: 10, seed, ..Default::default() }).unwrap();
        let method = if bandwagon { AttackMethod::Bandwagon } else { AttackMethod::Random };
        let targets = least_popular_items(&ds, 3, 1);
        let spec = AttackSpec { method, budget, targets: targets.clone(), filler_count: Some(5), popular_fraction: 0.2, seed };
        let p = attack(&ds, &spec).unwrap();
        let n_fake = ((budget * 60.0).round() as usize).max(1);
        prop_assert_eq!(p.dataset().n_users(), 60 + n_fake);
        prop_assert_eq!(p.n_genuine(), 60);
        let pool = filler_pool(&ds, &spec);
        let top: Vec<usize> = popularity_order(&ds).into_iter().take(18).collect();
        for prof in p.fake_profiles() {
            prop_assert_eq!(prof.len(), targets.len() + 5);
            for t in &targets {
                prop_assert!(prof.contains(t));
            }
            for i in prof.iter().filter(|i| !targets.contains(i)) {
                prop_assert!(pool.contains(i));
                if bandwagon {
                    prop_assert!(top.contains(i));
                }
            }
        }
        for u in 0..60 {
            prop_assert_eq!(p.dataset().train(u), ds.train(u));
        }
        prop_assert_eq!(generate_profiles(&ds, &spec).unwrap(), p.fake_profiles());
    }

    #[test]
    fn model_file_round_trips(n_users in 1usize..20, n_items in 1usize..20, d in 1usize..8, seed in 0u64..100) {
        let m = EmbeddingModel::init(n_users, n_items, d, seed, 0.3).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        prop_assert_eq!(buf.len(), 4 + 4 + 12 + 4 * d * (n_users + n_items));
        let back = EmbeddingModel::read_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back, m.to_f32_precision());
    }
}

#[test]
fn budget_of_one_percent_on_500_users_adds_five() {
    let ds = synthetic_clusters(&SyntheticConfig { n_users: 500, n_items: 300, seed: 1, ..Default::default() }).unwrap();
    let spec = AttackSpec { targets: least_popular_items(&ds, 5, 1), ..Default::default() };
    let p = attack(&ds, &spec).unwrap();
    assert_eq!(p.fake_users(), 500..505);
    assert_eq!(p.dataset().user_ids()[500], 500);
}

#[test]
fn truncated_and_foreign_model_files_are_rejected() {
    let m = EmbeddingModel::init(3, 4, 2, 0, 0.1).unwrap();
    let mut buf = Vec::new();
    m.write_to(&mut buf).unwrap();
    assert!(EmbeddingModel::read_from(&mut &buf[..buf.len() - 1]).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    let e = EmbeddingModel::read_from(&mut bad.as_slice()).unwrap_err();
    assert!(e.to_string().contains("PAMA"));
    let mut v2 = buf.clone();
    v2[4] = 2;
    assert!(EmbeddingModel::read_from(&mut v2.as_slice()).is_err());
}

#[test]
fn file_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.txt");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "7 100 101 102").unwrap();
    writeln!(f, "3 101 103").unwrap();
    drop(f);
    let ds = load_interactions(&path).unwrap();
    assert_eq!(ds.user_ids(), &[7, 3]);
    assert_eq!(ds.item_ids(), &[100, 101, 102, 103]);
    let out = dir.path().join("train.txt");
    ds.write_split(&out, Split::Train).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "7 100 101 102\n3 101 103\n");
    let again = load_interactions(&out).unwrap();
    assert_eq!(again, ds);

    std::fs::write(&path, "1 2 x\n").unwrap();
    let e = load_interactions(&path).unwrap_err();
    assert!(e.to_string().contains(":1"), "{e}");
}
