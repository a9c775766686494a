//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pamacf::attack::{attack, least_popular_items, AttackSpec};
use pamacf::dataset::{synthetic_clusters, InteractionDataset, Split, SplitConfig, SyntheticConfig};
use pamacf::math::{norm, rng_for};
use pamacf::metrics::{evaluate, ndcg_at_k, recall_at_k, target_hit_ratio, target_ndcg};
use pamacf::model::EmbeddingModel;
use pamacf::theory::{
    default_grid, epsilon_norm_correlation, init_system, standard_epoch, theorem_bounds, transform_factor,
    verify_theorem, BoundsInput, GaussianConfig, GaussianLabConfig, Theorem, Verdict, VerifyOptions,
};
use pamacf::train::{
    apply_gradient, batch_gradient, bpr_grad, epoch_triples, fit, pama_coefficient, BprTriple, TrainConfig,
    TrainMode,
};
use rand::seq::index::sample;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("theorem-1 error reduction", || error_reduction(Theorem::ErrorReduction)),
        ("theorem-2 poisoned error reduction", || error_reduction(Theorem::PoisonedErrorReduction)),
        ("theorem-3/4 reduction bounds", reduction_bounds),
        ("proposition-1 item transform", item_transform),
        ("bpr gradient", gradient),
        ("metric oracles", metric_oracles),
        ("pamacf mechanics", mechanics),
        ("directional end-to-end", end_to_end),
        ("corollary-1 norm correlation", norm_correlation),
        ("cli determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        failed += !o.pass as usize;
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn error_reduction(th: Theorem) -> Outcome {
    let start = Instant::now();
    let report = verify_theorem(th, &default_grid(20_000, 0), &VerifyOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let (pass, applicable) = (report.count(Verdict::Pass), report.applicable());
    let ok = applicable > 0 && pass as f64 >= 0.95 * applicable as f64 && elapsed < Duration::from_secs(120);
    outcome(ok, format!("{} (need >= 95%, < 120 s)", report.summary()))
}

fn reduction_bounds() -> Outcome {
    let grid = default_grid(20_000, 0);
    let mut parts = Vec::new();
    let mut ok = true;
    for th in [Theorem::ReductionBounds, Theorem::PoisonedReductionBounds] {
        let r = verify_theorem(th, &grid, &VerifyOptions::default()).unwrap();
        ok &= r.applicable() > 0 && r.count(Verdict::Fail) == 0;
        parts.push(format!("theorem {}: {}", th.id(), r.summary()));
    }
    let mut worst: f64 = 0.0;
    for c in [0.5, 3.0, 9.5] {
        for epsilon in [0.0, 5.0, 30.0] {
            let input = BoundsInput {
                n: 200,
                n_prime: 0,
                d: 8,
                sigma: 0.02,
                u_bar_norm: 1.0,
                u_bar_l0: 8,
                eta: 0.01,
                lambda: 0.5,
                epsilon,
                alpha: 0.1,
                c,
                u_norm: 0.4,
            };
            let (l3, u3) = theorem_bounds(&input, false).interval().unwrap();
            let (l4, u4) = theorem_bounds(&input, true).interval().unwrap();
            worst = worst.max((l3 - l4).abs()).max((u3 - u4).abs());
        }
    }
    ok &= worst < 1e-12;
    parts.push(format!("n'=0 reduction gap {worst:.1e}"));
    outcome(ok, parts.join("; "))
}

fn item_transform() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [2, 10, 200, 1000] {
        for eta in [0.001, 0.01, 0.05] {
            let cfg = GaussianConfig { n, d: 4, sigma: 0.1, eta, seed: n as u64, ..Default::default() };
            let mut s = init_system(&cfg).unwrap();
            let v0 = s.item().to_vec();
            let (mut m, mut sum) = (1.0, n as f64);
            for t in 1..=20 {
                standard_epoch(&mut s, eta);
                (m, sum) = (m + eta * sum, sum + n as f64 * eta * m);
                let lib = transform_factor(t, eta, n);
                let diff: Vec<f64> = s.item().iter().zip(&v0).map(|(v, x)| v - lib * x).collect();
                worst = worst.max(norm(&diff) / (lib * norm(&v0))).max((lib - m).abs() / m);
            }
        }
    }
    outcome(worst < 1e-9, format!("worst relative error {worst:.1e} over 240 points (need < 1e-9)"))
}

fn gradient() -> Outcome {
    let loss = |u: &[f64], vi: &[f64], vj: &[f64]| {
        let x: f64 = (0..u.len()).map(|k| u[k] * (vi[k] - vj[k])).sum();
        (1.0 + (-x).exp()).ln()
    };
    let h = 1e-6;
    let mut rng = rng_for(42, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(2..=16);
        let user: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let items: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = EmbeddingModel::from_rows(1, 2, d, user, items).unwrap();
        let g = bpr_grad(&m, BprTriple::new(0, 0, 1));
        let base = [m.user(0).to_vec(), m.item(0).to_vec(), m.item(1).to_vec()];
        for (which, analytic) in [&g.user, &g.pos, &g.neg].into_iter().enumerate() {
            let numeric: Vec<f64> = (0..d)
                .map(|k| {
                    let (mut p, mut q) = (base.clone(), base.clone());
                    p[which][k] += h;
                    q[which][k] -= h;
                    (loss(&p[0], &p[1], &p[2]) - loss(&q[0], &q[1], &q[2])) / (2.0 * h)
                })
                .collect();
            let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
            worst = worst.max(norm(&diff) / norm(&numeric).max(1e-12));
        }
    }
    outcome(worst < 1e-5, format!("worst relative error {worst:.1e} on 100 triples (need < 1e-5)"))
}

fn metric_oracles() -> Outcome {
    let disc = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let mut compared = 0;
    let mut mismatches = 0;
    for seed in 0..50 {
        let mut rng = rng_for(seed, 9);
        let n_users = rng.random_range(2..=20);
        let n_items = rng.random_range(12..=50);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for _ in 0..n_users {
            let count = rng.random_range(2..=n_items / 2);
            let mut picked = sample(&mut rng, n_items, count).into_vec();
            let tr = picked.split_off(rng.random_range(1..count));
            train.push(tr);
            test.push(picked);
        }
        let ds = InteractionDataset::from_parts(
            n_items,
            train,
            vec![Vec::new(); n_users],
            test,
            (0..n_users as u64).collect(),
            (0..n_items as u64).collect(),
        )
        .unwrap();
        let test = ds.split_lists(Split::Test);
        let recs = EmbeddingModel::init(n_users, n_items, 4, seed, 1.0).unwrap().recommend_all(&ds, n_users, 10);
        let targets = sample(&mut rng, n_items, 2).into_vec();
        for k in [1, 5, 10] {
            let n = n_users as f64;
            let recall: f64 = (0..n_users)
                .map(|u| recs[u].iter().take(k).filter(|i| test[u].contains(i)).count() as f64 / test[u].len() as f64)
                .sum::<f64>()
                / n;
            let ndcg: f64 = (0..n_users)
                .map(|u| {
                    let dcg: f64 = recs[u].iter().take(k).enumerate().filter(|(_, i)| test[u].contains(i)).map(|(p, _)| disc(p)).sum();
                    dcg / (0..k.min(test[u].len())).map(disc).sum::<f64>()
                })
                .sum::<f64>()
                / n;
            let target = |ndcg: bool| {
                let mut total = 0.0;
                for &t in &targets {
                    let users: Vec<usize> = (0..n_users).filter(|&u| !ds.has_interacted(u, t)).collect();
                    let hits: f64 = users
                        .iter()
                        .filter_map(|&u| recs[u].iter().take(k).position(|&i| i == t))
                        .map(|p| if ndcg { disc(p) } else { 1.0 })
                        .sum();
                    total += hits / users.len() as f64;
                }
                total / targets.len() as f64
            };
            let pairs = [
                (recall_at_k(&recs, test, k).unwrap(), recall),
                (ndcg_at_k(&recs, test, k).unwrap(), ndcg),
                (target_hit_ratio(&recs, &ds, n_users, &targets, k).unwrap(), target(false)),
                (target_ndcg(&recs, &ds, n_users, &targets, k).unwrap(), target(true)),
            ];
            for (got, want) in pairs {
                compared += 1;
                mismatches += (got != want) as usize;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} inexact of {compared} comparisons"))
}

fn mechanics() -> Outcome {
    let ds = synthetic_clusters(&SyntheticConfig { n_users: 60, n_items: 80, mean_interactions: 12, seed: 3, ..Default::default() })
        .unwrap();
    let c = TrainConfig {
        mode: TrainMode::Pamacf,
        total_epochs: 4,
        pretrain_epochs: 1,
        dim: 8,
        batch_size: 32,
        seed: 11,
        ..Default::default()
    };
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut m = EmbeddingModel::init(ds.n_users(), ds.n_items(), c.dim, c.seed, c.init_scale).unwrap();
    let mut rng = rng_for(5, 0);
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for epoch in 0..c.total_epochs {
        let triples = epoch_triples(&ds, &mut rng).unwrap();
        let mean = (0..ds.n_users()).map(|u| norm(m.user(u))).sum::<f64>() / ds.n_users() as f64;
        for batch in triples.chunks(c.batch_size) {
            let g = batch_gradient(&m, batch, &c, epoch, mean).unwrap();
            for p in &g.perturbations {
                let expect = c.rho * sigmoid((norm(m.user(p.triple.u)) - mean) / mean);
                for n in p.norms {
                    worst = worst.max((n - expect).abs());
                    checked += 1;
                }
            }
            apply_gradient(&mut m, &g, c.eta, c.weight_decay).unwrap();
        }
    }
    let half = [0.01, 0.3, 1.0, 17.0].iter().all(|&x| pama_coefficient(x, x).unwrap() == 0.5);
    let bits = |m: &EmbeddingModel| m.user_table().iter().chain(m.item_table()).map(|x| x.to_bits()).collect::<Vec<_>>();
    let std_cfg = TrainConfig { mode: TrainMode::Standard, ..c.clone() };
    let (std_m, std_t) = fit(&ds, &std_cfg).unwrap();
    let mut identical = true;
    for mode in [TrainMode::Apr, TrainMode::Pamacf] {
        let (adv_m, adv_t) = fit(&ds, &TrainConfig { mode, lambda: 0.0, ..c.clone() }).unwrap();
        identical &= bits(&adv_m) == bits(&std_m);
        identical &= adv_t.iter().zip(&std_t).all(|(a, b)| a.mean_bpr_loss.to_bits() == b.mean_bpr_loss.to_bits());
    }
    outcome(
        checked > 0 && worst < 1e-10 && half && identical,
        format!(
            "{checked} perturbation norms, worst deviation {worst:.1e}; c = 0.5 at mean: {half}; lambda 0 bit-identical: {identical}"
        ),
    )
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let mf = TrainConfig { eta: 2.0, total_epochs: 30, dim: 32, weight_decay: 1e-4, ..Default::default() };
    let pama = TrainConfig { mode: TrainMode::Pamacf, rho: 0.5, lambda: 1.0, pretrain_epochs: 15, ..mf.clone() };
    let mut results = [Vec::new(), Vec::new()];
    for seed in 0..5 {
        let ds = synthetic_clusters(&SyntheticConfig { seed, ..Default::default() }).unwrap();
        let ds = ds.split(&SplitConfig { seed, ..Default::default() }).unwrap();
        let targets = least_popular_items(&ds, 3, 1);
        let spec = AttackSpec { budget: 0.05, targets: targets.clone(), seed, ..Default::default() };
        let poisoned = attack(&ds, &spec).unwrap();
        for (slot, cfg) in [&mf, &pama].into_iter().enumerate() {
            let (m, _) = fit(poisoned.dataset(), &TrainConfig { seed, ..cfg.clone() }).unwrap();
            let r = evaluate(&m, &poisoned, &[20], Some(&targets)).unwrap();
            results[slot].push((r.get("t_hr", 20).unwrap(), r.get("ndcg", 20).unwrap()));
        }
    }
    let median = |v: Vec<f64>| {
        let mut v = v;
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let med = |slot: usize, f: fn(&(f64, f64)) -> f64| median(results[slot].iter().map(f).collect());
    let (mf_thr, pa_thr) = (med(0, |r| r.0), med(1, |r| r.0));
    let (mf_nd, pa_nd) = (med(0, |r| r.1), med(1, |r| r.1));
    let elapsed = start.elapsed();
    outcome(
        pa_thr < mf_thr && pa_nd >= mf_nd && elapsed < Duration::from_secs(300),
        format!("median T-HR@20 pamacf {pa_thr:.4} vs mf {mf_thr:.4}; median NDCG@20 pamacf {pa_nd:.4} vs mf {mf_nd:.4}"),
    )
}

fn norm_correlation() -> Outcome {
    let mut rhos = Vec::new();
    for seed in 0..5 {
        let base = GaussianLabConfig::default();
        let cfg = GaussianLabConfig { system: GaussianConfig { seed, ..base.system.clone() }, ..base };
        rhos.push(epsilon_norm_correlation(&cfg).unwrap().spearman.unwrap_or(f64::NAN));
    }
    let positive = rhos.iter().filter(|r| **r > 0.0).count();
    let shown: Vec<String> = rhos.iter().map(|r| format!("{r:.3}")).collect();
    outcome(positive >= 4, format!("spearman over seeds 0..5: [{}], {positive}/5 positive (need >= 4)", shown.join(", ")))
}

fn determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let root = tmp.path();
    let ds = synthetic_clusters(&SyntheticConfig { n_users: 80, seed: 2, ..Default::default() }).unwrap();
    let data = root.join("data.txt");
    ds.write_split(&data, Split::Train).unwrap();
    let grid = root.join("grid.csv");
    fs::write(&grid, "n,d,sigma,eta,lambda,epsilon,t,k,mc_samples\n200,8,0.02,0.01,1,auto,5,2,2000\n").unwrap();
    let d = data.to_str().unwrap();
    let g = grid.to_str().unwrap();

    let runs = |out: &Path| -> Vec<Vec<String>> {
        let o = |sub: &str| out.join(sub).to_str().unwrap().to_string();
        vec![
            sv(&["train", "--data", d, "--mode", "pamacf", "--epochs", "3", "--eta", "1", "--seed", "3", "--out", &o("train")]),
            sv(&["attack", "--data", d, "--attack", "bandwagon", "--budget", "0.05", "--seed", "3", "--out", &o("attack")]),
            sv(&["train", "--data", &o("attack"), "--epochs", "2", "--eta", "1", "--out", &o("poisoned")]),
            sv(&["eval", "--data", &o("attack"), "--model", &format!("{}/model.bin", o("poisoned")), "--k", "10,20", "--out", &o("poisoned")]),
            sv(&["theory", "--grid", g, "--out", &o("theory")]),
            sv(&["sweep", "--data", d, "--mode", "pamacf", "--param", "rho", "--values", "0.2,0.6", "--repetitions", "2", "--epochs", "2", "--out", &o("sweep")]),
        ]
    };
    // Identical configuration includes identical paths: run twice in place.
    let out = root.join("run");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        if out.exists() {
            fs::remove_dir_all(&out).unwrap();
        }
        for args in runs(&out) {
            let st = Command::new(env!("CARGO_BIN_EXE_pamacf")).args(&args).output().unwrap();
            if !st.status.success() {
                return outcome(false, format!("{args:?} failed: {}", String::from_utf8_lossy(&st.stderr)));
            }
        }
        let mut files = Vec::new();
        collect(&out, &mut files);
        snapshots.push(files.into_iter().map(|f| (f.clone(), fs::read(&f).unwrap())).collect::<Vec<_>>());
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    let names = |s: &[(std::path::PathBuf, Vec<u8>)]| s.iter().map(|(f, _)| f.clone()).collect::<Vec<_>>();
    let differing: Vec<String> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.strip_prefix(&out).unwrap().display().to_string())
        .collect();
    let same_set = names(a) == names(b);
    let csv_and_models =
        a.iter().filter(|(f, _)| matches!(f.extension().and_then(|e| e.to_str()), Some("csv" | "bin"))).count();
    outcome(
        same_set && differing.is_empty() && csv_and_models > 0,
        format!("{} files ({csv_and_models} CSV/model) from 6 commands run twice; differing: {differing:?}", a.len()),
    )
}

fn sv(args: &[&str]) -> Vec<String> {
    args.iter().map(|s| s.to_string()).collect()
}

fn collect(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out);
        } else {
            out.push(p);
        }
    }
}
