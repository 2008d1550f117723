//! Acceptance run: one line per criterion, exit status 1 if any fails.
//!
//! Oracles here are written independently of the library: dense Kronecker
//! Hamiltonians, explicit partial traces, and 2x2 snapshot matrices.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadowforge_cli::{cmd_gen, cmd_run, RunConfig, SeedReport};
use shadowforge_core::dataset::{build_hybrid_dataset, DatasetConfig, SystemKind};
use shadowforge_core::engine::{score_candidates, train_baseline, ConsistencyConfig, Paradigm};
use shadowforge_core::learner::{r_squared, Batch, LearnerConfig, Mlp};
use shadowforge_core::shadows::{estimate_correlation, estimate_prefix_purities, pair_factor, purity_variance_bound, sample_measurements};
use shadowforge_core::state::exact_correlation;
use shadowforge_core::{build_cluster_ising, build_xxz, ground_state, Basis, CorrAxis, HamiltonianSpec, PauliAxis, QuantumState, Task};

type Outcome = (bool, String);

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn pauli_matrix(a: PauliAxis) -> DMatrix<Complex64> {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    let v = match a {
        PauliAxis::I => [one, z, z, one],
        PauliAxis::X => [z, one, one, z],
        PauliAxis::Y => [z, -i, i, z],
        PauliAxis::Z => [one, z, z, -one],
    };
    DMatrix::from_row_slice(2, 2, &v)
}

/// Dense matrix of a Pauli sum, qubit 1 as the leftmost Kronecker factor.
fn dense(h: &HamiltonianSpec) -> DMatrix<Complex64> {
    let dim = 1usize << h.n_qubits();
    let mut out = DMatrix::zeros(dim, dim);
    for t in h.terms() {
        let mut m = DMatrix::from_element(1, 1, c(1.0, 0.0));
        for &a in t.axes() {
            m = m.kronecker(&pauli_matrix(a));
        }
        out += m * c(t.coefficient(), 0.0);
    }
    out
}

fn oracle_ground_energy(h: &HamiltonianSpec) -> f64 {
    let m = dense(h);
    let imag = m.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if imag == 0.0 {
        // Real symmetric: cheaper and just as exact.
        let re = m.map(|z| z.re);
        re.symmetric_eigenvalues().min()
    } else {
        m.symmetric_eigenvalues().min()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut solve_time = 0.0;
    for draw in 0..50u64 {
        let h = if draw % 2 == 0 {
            let n = [4, 6, 8, 10][rng.random_range(0..4)];
            build_xxz(n, rng.random_range(0.0..2.0), 1.0).unwrap()
        } else {
            build_cluster_ising(rng.random_range(4..=10), rng.random_range(0.0..2.0), 1.0).unwrap()
        };
        let t = Instant::now();
        let gs = match ground_state(&h, draw) {
            Ok(g) => g,
            Err(e) => return (false, format!("draw {draw}: {e}")),
        };
        solve_time += t.elapsed().as_secs_f64();
        worst = worst.max((gs.energy - oracle_ground_energy(&h)).abs());
    }
    let total = start.elapsed().as_secs_f64();
    (
        worst <= 1e-8 && total < 60.0,
        format!("max |E - E_dense| = {worst:.2e} (tol 1e-8), {total:.1} s total incl. oracle, {solve_time:.1} s in the solver"),
    )
}

fn bell() -> QuantumState {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    QuantumState::new(vec![c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)]).unwrap()
}

fn criterion_2() -> Outcome {
    let state = bell();
    let mut passed = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let rec = sample_measurements(&state, 50_000, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut ok = true;
        for axis in [CorrAxis::Z, CorrAxis::X] {
            let exact = exact_correlation(&state, 1, 2, axis).unwrap();
            let err = (estimate_correlation(&rec, 1, 2, axis).unwrap() - exact).abs();
            worst = worst.max(err);
            ok &= err <= 0.05 && (exact - 1.0).abs() < 1e-12;
        }
        passed += usize::from(ok);
    }
    (passed >= 19, format!("{passed}/20 seeds within 0.05 for ZZ and XX (need 19), worst error {worst:.4}"))
}

/// `Tr(rho_A^2)` for the prefix of `a` qubits via an explicit partial trace.
fn oracle_prefix_purity(state: &QuantumState, a: usize) -> f64 {
    let n = state.n_qubits();
    let (da, db) = (1usize << a, 1usize << (n - a));
    let psi = DMatrix::from_row_slice(da, db, state.amplitudes());
    let rho = &psi * psi.adjoint();
    rho.iter().map(|z| z.norm_sqr()).sum()
}

fn criterion_3() -> Outcome {
    let zero = QuantumState::basis(4, 0).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut amps = vec![c(0.0, 0.0); 16];
    amps[0] = c(s, 0.0);
    amps[15] = c(s, 0.0);
    let ghz = QuantumState::new(amps).unwrap();
    let trials = 100u64;
    // Each variance trial is the sample variance of this many estimates.
    let repeats = 20u64;
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, state, seed0) in [("|0000>", &zero, 1_000_000u64), ("GHZ4", &ghz, 2_000_000u64)] {
        let exact = [oracle_prefix_purity(state, 1), oracle_prefix_purity(state, 2)];

        // Accuracy at m = 10,000 on every trial.
        let mut within = [0u64; 2];
        for t in 0..trials {
            let rec = sample_measurements(state, 10_000, &mut ChaCha8Rng::seed_from_u64(seed0 + t)).unwrap();
            let p = estimate_prefix_purities(&rec, 2).unwrap();
            for a in 0..2 {
                within[a] += u64::from((p[a] - exact[a]).abs() <= 0.1);
            }
        }

        // Variance against the bound at m = 64, 256, 1024.
        for a in 0..2 {
            let mut under = Vec::new();
            let mut mean_var = Vec::new();
            for (k, m) in [64usize, 256, 1024].into_iter().enumerate() {
                let bound = purity_variance_bound(m, a + 1, exact[a]);
                let mut count = 0;
                let mut total = 0.0;
                for t in 0..trials {
                    let est: Vec<f64> = (0..repeats)
                        .map(|r| {
                            let seed = seed0 + 10_000 * (k as u64 + 1) + t * repeats + r;
                            let rec = sample_measurements(state, m, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                            estimate_prefix_purities(&rec, a + 1).unwrap()[a]
                        })
                        .collect();
                    let mean = est.iter().sum::<f64>() / repeats as f64;
                    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
                    count += usize::from(var <= bound);
                    total += var;
                }
                under.push(count);
                mean_var.push(total / trials as f64);
            }
            let decreasing = mean_var.windows(2).all(|w| w[1] < w[0]);
            let case_ok = within[a] == trials && under.iter().all(|&u| u >= 95) && decreasing;
            ok &= case_ok;
            notes.push(format!(
                "{name} |A|={}: P={:.3}, {}/{trials} within 0.1 at m=10000, variance under bound {:?}/{trials} at m=64,256,1024, mean var {:.1e} {:.1e} {:.1e}",
                a + 1,
                exact[a],
                within[a],
                under,
                mean_var[0],
                mean_var[1],
                mean_var[2]
            ));
        }
    }
    (ok, notes.join("; "))
}

fn snapshot_matrix(basis: Basis, bit: u8) -> Matrix2<Complex64> {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    let sigma = match basis {
        Basis::X => Matrix2::new(z, one, one, z),
        Basis::Y => Matrix2::new(z, -i, i, z),
        Basis::Z => Matrix2::new(one, z, z, -one),
    };
    let sign = if bit == 0 { 1.0 } else { -1.0 };
    let projector = (Matrix2::identity() + sigma * c(sign, 0.0)) * c(0.5, 0.0);
    projector * c(3.0, 0.0) - Matrix2::identity()
}

fn criterion_4() -> Outcome {
    let combos: Vec<(Basis, u8)> =
        [Basis::X, Basis::Y, Basis::Z].into_iter().flat_map(|b| [(b, 0u8), (b, 1u8)]).collect();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut allowed = true;
    for &(ba, xa) in &combos {
        for &(bb, xb) in &combos {
            let tr = (snapshot_matrix(ba, xa) * snapshot_matrix(bb, xb)).trace();
            let f = pair_factor(ba, xa, bb, xb);
            worst = worst.max((f - tr.re).abs()).max(tr.im.abs());
            allowed &= [5.0, -4.0, 0.5].contains(&f);
            checked += 1;
        }
    }
    (
        checked == 36 && allowed && worst < 1e-12,
        format!("{checked} pairs, all in {{5, -4, 0.5}}: {allowed}, max |factor - trace| = {worst:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let net = Mlp::init(vec![12, 16, 16, 3], &mut rng);
        let params: Vec<f64> = net.params.iter().map(|p| p + rng.random_range(-0.3..0.3)).collect();
        let batch = |rows: usize, width: usize, rng: &mut ChaCha8Rng| Batch {
            width,
            data: (0..rows * width).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let x = batch(9, 12, &mut rng);
        let y = batch(9, 3, &mut rng);
        let mut grad = vec![0.0; params.len()];
        net.loss_and_grad(&params, &x, &y, 1.0, &mut grad);
        let h = 1e-5;
        let mut scratch = vec![0.0; params.len()];
        let mut diff = 0.0;
        let mut norm = 0.0;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = net.loss_and_grad(&p, &x, &y, 0.0, &mut scratch);
            p[i] -= 2.0 * h;
            let down = net.loss_and_grad(&p, &x, &y, 0.0, &mut scratch);
            let num = (up - down) / (2.0 * h);
            diff += (grad[i] - num).powi(2);
            norm += grad[i] * grad[i];
        }
        worst = worst.max(diff.sqrt() / norm.sqrt());
    }
    let col = |v: &[f64]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
    let truths = col(&[1.0, 2.0, 3.0]);
    let perfect = r_squared(&truths, &truths).unwrap();
    let mean = r_squared(&col(&[2.0, 2.0, 2.0]), &truths).unwrap();
    let worked = r_squared(&col(&[1.0, 2.0, 2.0]), &truths).unwrap();
    let r2_ok = (perfect - 1.0).abs() <= 1e-12 && mean.abs() <= 1e-12 && (worked - 0.5).abs() <= 1e-12;
    (
        worst < 1e-4 && r2_ok,
        format!("gradient rel. err. {worst:.1e} (tol 1e-4); R2 perfect {perfect}, mean {mean}, worked example {worked}"),
    )
}

fn consistency_model_config() -> DatasetConfig {
    DatasetConfig { n: 100, r: 0.2, m_l: 1 << 10, n_val: 10, n_test: 10, ..DatasetConfig::new(SystemKind::Xxz, 8, Task::Entropy) }
}

fn criterion_8() -> Outcome {
    let base = DatasetConfig { m_u: 1 << 7, seed: 0, ..consistency_model_config() };
    let ds = build_hybrid_dataset(&base).unwrap();
    let lc = LearnerConfig::default();
    let (model, _) = train_baseline(&ds, &lc, Paradigm::Sl).unwrap();
    let cc = ConsistencyConfig::default();
    let mut monotone = 0;
    let mut rows = Vec::new();
    for seed in 1..=5u64 {
        let means: Vec<f64> = [1usize << 5, 1 << 7, 1 << 9]
            .iter()
            .map(|&m_u| {
                let ds = build_hybrid_dataset(&DatasetConfig { m_u, seed, ..consistency_model_config() }).unwrap();
                let scores = score_candidates(&model, &ds.s_u, &cc, seed).unwrap();
                scores.iter().map(|s| s.variance).sum::<f64>() / scores.len() as f64
            })
            .collect();
        monotone += usize::from(means[0] > means[1] && means[1] > means[2]);
        rows.push(format!("[{:.2e} {:.2e} {:.2e}]", means[0], means[1], means[2]));
    }
    (monotone >= 4, format!("{monotone}/5 seeds decreasing over m_u = 32, 128, 512 (need 4): {}", rows.join(" ")))
}

fn run_config(dataset: DatasetConfig, dir: &Path) -> RunConfig {
    RunConfig {
        dataset,
        learner: LearnerConfig::default(),
        engine: ConsistencyConfig::default(),
        t_max: 6,
        paradigm: Paradigm::Sl,
        out: dir.to_path_buf(),
        seeds: vec![1, 2, 3, 4, 5],
    }
}

/// Engine against baseline on one system; returns the outcome and reports.
fn engine_experiment(system: SystemKind) -> (Outcome, Vec<SeedReport>) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        n: 400,
        r: 0.4,
        m_l: 1 << 10,
        m_u: 1 << 6,
        seed: 1,
        ..DatasetConfig::new(system, 8, Task::Entropy)
    };
    let rc = run_config(cfg, dir.path());
    let path = dir.path().join("dataset.jsonl");
    let start = Instant::now();
    if let Err(e) = cmd_gen(&rc, &path) {
        return ((false, format!("gen failed: {e}")), Vec::new());
    }
    let out = match cmd_run(&rc, &path, dir.path(), false) {
        Ok(o) => o,
        Err(e) => return ((false, format!("run failed: {e}")), Vec::new()),
    };
    let reports = out.reports;
    let not_worse = reports.iter().filter(|r| r.engine_test_r2 >= r.baseline_test_r2).count();
    let mean_delta = reports.iter().map(|r| r.delta).sum::<f64>() / reports.len().max(1) as f64;
    let per_seed: Vec<String> = reports
        .iter()
        .map(|r| format!("s{} {:.3}->{:.3} (+{} pts)", r.seed, r.baseline_test_r2, r.engine_test_r2, r.admitted))
        .collect();
    let ok = reports.len() == 5 && out.failures.is_empty() && not_worse >= 4 && mean_delta >= 0.02;
    (
        (
            ok,
            format!(
                "{not_worse}/5 seeds engine >= baseline (need 4), mean delta {mean_delta:+.4} (need +0.02), {:.0} s; {}",
                start.elapsed().as_secs_f64(),
                per_seed.join(", ")
            ),
        ),
        reports,
    )
}

fn criterion_7(reports: &[SeedReport]) -> Outcome {
    let mut bad = Vec::new();
    for r in reports {
        let accepted: Vec<f64> = r.rows.iter().filter(|row| row.accepted).map(|row| row.val_r2).collect();
        if accepted.windows(2).any(|w| w[1] < w[0]) {
            bad.push(r.seed);
        }
    }
    (
        !reports.is_empty() && bad.is_empty(),
        format!("{} engine runs checked, non-monotone in seeds {bad:?}", reports.len()),
    )
}

fn criterion_9() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_shadowforge");
    let root = tempfile::tempdir().unwrap();
    let config = "[dataset]\nsystem = cluster_ising\nN = 5\nn = 60\nr = 0.5\nm_l = 256\nm_u = 16\nn_val = 12\nn_test = 12\ntask = entropy\nseed = 9\n\n\
                  [learner]\nhidden = 16,16\nmax_epochs = 60\npatience = 20\nengine_patience = 10\n\n[engine]\nT = 3\nseeds = 1,2\n";
    let cfg_path = root.path().join("run.ini");
    std::fs::write(&cfg_path, config).unwrap();
    let mut dirs = Vec::new();
    for k in 0..2 {
        let out = root.path().join(format!("out{k}"));
        let ds = out.join("dataset.jsonl");
        let gen = Command::new(exe).args(["gen", "--config"]).arg(&cfg_path).arg("--dataset").arg(&ds).output().unwrap();
        let run = Command::new(exe)
            .args(["run", "--config"])
            .arg(&cfg_path)
            .arg("--dataset")
            .arg(&ds)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        if !gen.status.success() || !run.status.success() {
            return (false, format!("execution {k} failed: {}", String::from_utf8_lossy(&run.stderr)));
        }
        dirs.push(out);
    }
    let files = ["dataset.jsonl", "report_seed1.json", "report_seed2.json", "model_seed1.json", "model_seed2.json", "aggregate.json"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dirs[0].join(f)).ok() != std::fs::read(dirs[1].join(f)).ok())
        .collect();
    (differing.is_empty(), format!("{} files compared across two executions, differing: {differing:?}", files.len()))
}

fn report(id: usize, outcome: &Outcome, failures: &mut Vec<usize>) {
    let tag = if outcome.0 { "PASS" } else { "FAIL" };
    println!("criterion {id:>2}: {tag}  {}", outcome.1);
    if !outcome.0 {
        failures.push(id);
    }
}

fn main() -> ExitCode {
    // Accept and ignore libtest arguments such as --nocapture.
    let mut failures = Vec::new();
    report(1, &criterion_1(), &mut failures);
    report(2, &criterion_2(), &mut failures);
    report(3, &criterion_3(), &mut failures);
    report(4, &criterion_4(), &mut failures);
    report(5, &criterion_5(), &mut failures);
    report(8, &criterion_8(), &mut failures);
    report(9, &criterion_9(), &mut failures);
    let (c6, xxz_reports) = engine_experiment(SystemKind::Xxz);
    report(6, &c6, &mut failures);
    println!("              reference at r=0.4 with a transformer learner on larger systems: SL 0.722 -> 0.825 (+0.103)");
    report(7, &criterion_7(&xxz_reports), &mut failures);
    let (c10, _) = engine_experiment(SystemKind::ClusterIsing);
    report(10, &c10, &mut failures);
    if failures.is_empty() {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failures:?}");
        ExitCode::FAILURE
    }
}
