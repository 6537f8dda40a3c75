//! Acceptance suite. Runs without the libtest harness so every criterion prints
//! one PASS/FAIL line; the process exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use bnsv::bottleneck::PcaModel;
use bnsv::eval::compute_eer;
use bnsv::gmm::{map_adapt, ubm_train_em, DiagGmm, MapPosteriors, UbmConfig};
use bnsv::ivector::{
    bw_stats, extract_ivector, plda_train, train_tmatrix, BwStats, PldaModel, TvConfig, TvModel,
};
use bnsv::losses::{
    arcface, cross_entropy, focal, joint_center, msoftmax, LossHead, LossHyper, LossKind,
};
use bnsv::net::{grad_check, Activation, DenseNetwork, GruEncoder};
use bnsv::pipeline::{
    all_combinations, check_combination, run_comparison, run_recipe, BackendKind, BnModel,
    ExperimentConfig, FeatureSource, Network, GRAD_CHECK_EPS, GRAD_CHECK_SEED, GRAD_CHECK_TOL,
};
use bnsv::targets::Scheme;

type Outcome = Result<String, String>;

fn randn(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn non_decreasing(name: &str, xs: &[f64]) -> Result<(), String> {
    for (i, w) in xs.windows(2).enumerate() {
        ensure(
            w[1] >= w[0] - 1e-8 * w[0].abs(),
            format!(
                "{name} objective fell at step {}: {} → {}",
                i + 1,
                w[0],
                w[1]
            ),
        )?;
    }
    Ok(())
}

fn c1_gradients() -> Outcome {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let combos = all_combinations();
    for &(kind, act) in &combos {
        let r = check_combination(kind, act.unwrap_or(Activation::Gelu), GRAD_CHECK_SEED)
            .map_err(|e| e.to_string())?;
        ensure(
            r.passed,
            format!(
                "{} / {:?}: rel err {:.2e} at {:?}",
                kind.name(),
                act,
                r.max_rel_error,
                r.worst
            ),
        )?;
        worst = worst.max(r.max_rel_error);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} combinations, max rel err {worst:.2e}, {secs:.1} s",
        combos.len()
    ))
}

fn c2_reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (b, d, n) = (9, 6, 5);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let logits = randn(b, n, &mut rng) * 2.0;
        let ce = cross_entropy(&logits, &labels).unwrap().0;
        worst = worst.max((focal(&logits, &labels, 0.0).unwrap().0 - ce).abs());

        let z = randn(b, d, &mut rng);
        let w = randn(d, n, &mut rng);
        let bias = randn(n, 1, &mut rng).column(0).into_owned();
        let centers = randn(n, d, &mut rng);
        let jc = joint_center(&z, &labels, &w, &bias, &centers, 0.0)
            .unwrap()
            .value;
        let ce_lin = cross_entropy(&(&z * &w + DMatrix::from_fn(b, n, |_, j| bias[j])), &labels)
            .unwrap()
            .0;
        worst = worst.max((jc - ce_lin).abs());

        let mut unit = randn(b, d, &mut rng);
        for mut row in unit.row_iter_mut() {
            let norm = row.norm();
            row /= norm;
        }
        let arc = arcface(&unit, &labels, &w, 1.0, 0.0).unwrap().value;
        let ms = msoftmax(&unit, &labels, &w).unwrap().value;
        worst = worst.max((arc - ms).abs());
    }
    ensure(worst < 1e-12, format!("max deviation {worst:.2e}"))?;
    Ok(format!("max deviation {worst:.2e} over 20 batches"))
}

fn c3_gru_bptt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let enc = GruEncoder::new(8, 8, 3, 8, 3).map_err(|e| e.to_string())?;
    let x = randn(7, 8, &mut rng);
    let target = randn(7, 8, &mut rng);
    // Smooth squared-error loss, so no kink handling is needed.
    let loss = |e: &GruEncoder| {
        let out = e.forward(&x).unwrap().outputs;
        0.5 * (out - &target).norm_squared()
    };
    let trace = enc.forward(&x).unwrap();
    let d_out = &trace.outputs - &target;
    let analytic = enc
        .backward(&trace, &d_out, 0.0)
        .map_err(|e| e.to_string())?;
    let r = grad_check(&enc, &analytic, loss, GRAD_CHECK_EPS, GRAD_CHECK_TOL);
    ensure(
        r.passed,
        format!("rel err {:.2e} at {:?}", r.max_rel_error, r.worst),
    )?;
    Ok(format!(
        "{} parameters, max rel err {:.2e}",
        r.n_params, r.max_rel_error
    ))
}

fn toy_ubm(k: usize, d: usize, spread: f64, rng: &mut ChaCha8Rng) -> DiagGmm {
    DiagGmm::new(
        DVector::from_element(k, 1.0 / k as f64),
        randn(k, d, rng) * spread,
        DMatrix::from_fn(k, d, |_, _| rng.random_range(0.5..1.5)),
    )
    .unwrap()
}

/// Utterances drawn from `x = m_c + T_c w + noise`.
fn tv_synthetic(
    ubm: &DiagGmm,
    t_true: &[DMatrix<f64>],
    n_utts: usize,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<BwStats> {
    let (k, d, r) = (ubm.n_components(), ubm.dim(), t_true[0].ncols());
    (0..n_utts)
        .map(|_| {
            let w = randn(r, 1, rng);
            let mut x = DMatrix::zeros(frames, d);
            for t in 0..frames {
                let c = rng.random_range(0..k);
                let mean = ubm.means.row(c).transpose() + &t_true[c] * &w;
                for j in 0..d {
                    let e: f64 = StandardNormal.sample(rng);
                    x[(t, j)] = mean[j] + e * ubm.variances[(c, j)].sqrt();
                }
            }
            bw_stats(ubm, &x).unwrap()
        })
        .collect()
}

fn c4_em_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = toy_ubm(6, 3, 3.0, &mut rng);
    let pool = DMatrix::from_fn(3000, 3, |t, j| {
        let c = t % 6;
        let e: f64 = StandardNormal.sample(&mut rng);
        truth.means[(c, j)] + e * truth.variances[(c, j)].sqrt()
    });
    let cfg = UbmConfig {
        components: 16,
        iterations: 20,
        init_subsample: 3000,
        ..UbmConfig::default()
    };
    let ubm = ubm_train_em(&pool, &cfg).map_err(|e| e.to_string())?;
    non_decreasing("UBM", &ubm.log_likelihoods)?;

    let base = toy_ubm(4, 4, 30.0, &mut rng);
    let t_true: Vec<DMatrix<f64>> = (0..4).map(|_| randn(4, 2, &mut rng) * 2.0).collect();
    let stats = tv_synthetic(&base, &t_true, 200, 40, &mut rng);
    let tv = train_tmatrix(
        &base,
        &stats,
        &TvConfig {
            rank: 2,
            iterations: 20,
            seed: 4,
        },
    )
    .map_err(|e| e.to_string())?;
    non_decreasing("T-matrix", &tv.objective)?;

    let b_true = randn(4, 4, &mut rng);
    let (mut data, mut labels) = (Vec::new(), Vec::new());
    for class in 0..100 {
        let y = &b_true * randn(4, 1, &mut rng);
        for _ in 0..5 {
            data.push((&y + randn(4, 1, &mut rng) * 0.7).column(0).into_owned());
            labels.push(class);
        }
    }
    let plda = plda_train(&data, &labels, 20).map_err(|e| e.to_string())?;
    non_decreasing("PLDA", &plda.log_likelihoods)?;
    Ok(format!(
        "20 iterations each: UBM {} values, T {} values, PLDA {} values, none decreasing",
        ubm.log_likelihoods.len(),
        tv.objective.len(),
        plda.log_likelihoods.len()
    ))
}

fn c5_map_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ubm = toy_ubm(4, 3, 2.0, &mut rng);
    let none = map_adapt(
        &ubm,
        &DMatrix::zeros(0, 3),
        10.0,
        3,
        MapPosteriors::Evolving,
    )
    .map_err(|e| e.to_string())?;
    ensure(none == ubm, "zero-frame adaptation changed the model")?;

    let one = DiagGmm::new(
        DVector::from_element(1, 1.0),
        randn(1, 3, &mut rng),
        DMatrix::from_element(1, 3, 1.3),
    )
    .unwrap();
    let frames = randn(25, 3, &mut rng) + DMatrix::from_element(25, 3, 1.0);
    let adapted =
        map_adapt(&one, &frames, 25.0, 1, MapPosteriors::Ubm).map_err(|e| e.to_string())?;
    let mut dev = 0.0f64;
    for j in 0..3 {
        let mean = frames.column(j).sum() / 25.0;
        let mid = 0.5 * (mean + one.means[(0, j)]);
        dev = dev.max((adapted.means[(0, j)] - mid).abs());
    }
    ensure(dev < 1e-12, format!("midpoint off by {dev:.2e}"))?;
    Ok(format!(
        "zero frames → UBM exactly; r = n midpoint within {dev:.1e}"
    ))
}

/// O(n²) EER: every distinct score as threshold, counts recomputed from
/// scratch, first closest FAR/FRR crossing in ascending order.
fn brute_force_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut best = (f64::INFINITY, 0.0);
    for &t in &thresholds {
        let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        if (far - frr).abs() < best.0 {
            best = ((far - frr).abs(), (far + frr) / 2.0);
        }
    }
    best.1
}

fn c6_eer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for set in 0..1000 {
        let n = rng.random_range(2..=200usize);
        let n_gen = rng.random_range(1..n);
        let coarse = set % 3 == 0; // ties on a coarse grid
        let sep = rng.random_range(0.0..3.0);
        let mut draw = |shift: f64| {
            let v: f64 = StandardNormal.sample(&mut rng);
            let s = v + shift;
            if coarse {
                (s * 2.0).round() / 2.0
            } else {
                s
            }
        };
        let genuine: Vec<f64> = (0..n_gen).map(|_| draw(sep)).collect();
        let impostor: Vec<f64> = (0..n - n_gen).map(|_| draw(0.0)).collect();
        let got = compute_eer(&genuine, &impostor)
            .map_err(|e| e.to_string())?
            .eer;
        let want = brute_force_eer(&genuine, &impostor);
        ensure(got == want, format!("set {set}: {got} vs oracle {want}"))?;
    }
    Ok("1000 score sets, sizes 2-200, identical to the brute-force sweep".into())
}

/// Jacobi eigenvalue iteration on a symmetric matrix.
fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn c7_pca() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, d, k) = (300, 10, 4);
    let data =
        randn(n, d, &mut rng) * DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| 1.0 + i as f64));
    let pca = PcaModel::fit(&data, k).map_err(|e| e.to_string())?;
    let gram = pca.projection.transpose() * &pca.projection;
    let ortho = (gram - DMatrix::identity(k, k)).amax();
    ensure(ortho < 1e-9, format!("orthonormality off by {ortho:.2e}"))?;

    let mean = data.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let oracle = jacobi_eigenvalues(cov);
    let eig_dev = pca
        .explained
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(eig_dev < 1e-9, format!("eigenvalues off by {eig_dev:.2e}"))?;

    let low_rank =
        randn(n, k, &mut rng) * randn(k, d, &mut rng) + DMatrix::from_fn(n, d, |_, j| j as f64);
    let pk = PcaModel::fit(&low_rank, k).map_err(|e| e.to_string())?;
    let recon = (pk.reconstruct(&pk.project(&low_rank).unwrap()) - &low_rank).amax();
    ensure(
        recon < 1e-9,
        format!("rank-{k} reconstruction off by {recon:.2e}"),
    )?;
    Ok(format!(
        "orthonormality {ortho:.1e}, eigenvalues {eig_dev:.1e}, reconstruction {recon:.1e}"
    ))
}

fn dense_ivector(tv: &TvModel, stats: &BwStats) -> DVector<f64> {
    let (k, d) = (tv.ubm.n_components(), tv.ubm.dim());
    let t = tv.stacked();
    let kd = k * d;
    let prec = DMatrix::from_fn(kd, kd, |i, j| {
        if i == j {
            1.0 / tv.ubm.variances[(i / d, i % d)]
        } else {
            0.0
        }
    });
    let nn = DMatrix::from_fn(kd, kd, |i, j| if i == j { stats.n[i / d] } else { 0.0 });
    let f = DVector::from_fn(kd, |i, _| stats.f[(i / d, i % d)]);
    let lhs = DMatrix::identity(tv.rank(), tv.rank()) + t.transpose() * &prec * nn * &t;
    lhs.lu().solve(&(t.transpose() * prec * f)).unwrap()
}

fn max_principal_angle_deg(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let s = (qa.transpose() * qb).singular_values();
    s.iter()
        .copied()
        .fold(1.0f64, f64::min)
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

fn c8_ivector() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut dev = 0.0f64;
    for _ in 0..20 {
        let (k, d, r) = (5, 3, 3);
        let ubm = toy_ubm(k, d, 1.0, &mut rng);
        let t = (0..k).map(|_| randn(d, r, &mut rng)).collect();
        let tv = TvModel::new(ubm, t, DVector::zeros(r)).unwrap();
        let stats = BwStats {
            n: DVector::from_fn(k, |_, _| rng.random_range(0.0..30.0)),
            f: randn(k, d, &mut rng) * 3.0,
        };
        let got = extract_ivector(&tv, &stats).map_err(|e| e.to_string())?;
        dev = dev.max((got - dense_ivector(&tv, &stats)).amax());
    }
    ensure(dev < 1e-9, format!("extraction off by {dev:.2e}"))?;

    let (k, d, r) = (4, 4, 2);
    let ubm = toy_ubm(k, d, 30.0, &mut rng);
    let t_true: Vec<DMatrix<f64>> = (0..k).map(|_| randn(d, r, &mut rng) * 2.0).collect();
    let stats = tv_synthetic(&ubm, &t_true, 500, 40, &mut rng);
    let run = train_tmatrix(
        &ubm,
        &stats,
        &TvConfig {
            rank: r,
            iterations: 20,
            seed: 8,
        },
    )
    .map_err(|e| e.to_string())?;
    let truth = TvModel::new(ubm, t_true, DVector::zeros(r))
        .unwrap()
        .stacked();
    let angle = max_principal_angle_deg(&run.model.stacked(), &truth);
    ensure(angle < 5.0, format!("principal angle {angle:.2}°"))?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 120.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "dense-solve deviation {dev:.1e}, max principal angle {angle:.2}°, {secs:.1} s"
    ))
}

fn benchmark_shape_ok(cfg: &ExperimentConfig) -> Result<(), String> {
    let c = &cfg.corpus;
    ensure(
        (c.n_speakers, c.n_phrases, c.sessions) == (20, 5, 3),
        format!("corpus is {}×{}×{}", c.n_speakers, c.n_phrases, c.sessions),
    )?;
    ensure(
        cfg.backend.kind == BackendKind::GmmUbm && cfg.backend.components == 64,
        "backend is not a 64-component GMM-UBM",
    )?;
    ensure(cfg.network.hidden == vec![128; 4], "network is not 4×128")?;
    ensure(
        cfg.network.activation == Activation::Gelu && cfg.loss.kind == "ce",
        "not CE + GELU",
    )?;
    ensure(
        cfg.bottleneck.source == FeatureSource::Bottleneck && cfg.targets.scheme == Scheme::Speaker,
        "not Spkr-BN",
    )
}

fn c9_end_to_end(root: &Path) -> Outcome {
    let cfg = ExperimentConfig::synthetic_benchmark();
    benchmark_shape_ok(&cfg)?;
    let started = Instant::now();
    let report = run_recipe(&cfg, &root.join("e2e"), false).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 300.0, format!("took {secs:.1} s"))?;
    ensure(
        report.avg_eer <= 5.0,
        format!("average EER {:.2}%", report.avg_eer),
    )?;

    let mut clean = cfg.clone();
    clean.corpus.noise_scale = 0.0;
    clean.system = "noiseless".into();
    let quiet = run_recipe(&clean, &root.join("noiseless"), false).map_err(|e| e.to_string())?;
    let per: Vec<String> = quiet
        .per_type
        .iter()
        .map(|m| format!("{} {}", m.label.short(), m.eer))
        .collect();
    ensure(
        quiet.per_type.len() == 3 && quiet.per_type.iter().all(|m| m.eer == 0.0),
        format!("noiseless EER {per:?}"),
    )?;
    Ok(format!(
        "{secs:.1} s, average EER {:.2}%; noiseless EER 0 for TW/IC/IW",
        report.avg_eer
    ))
}

fn c10_bn_beats_raw(root: &Path) -> Outcome {
    let cfg = ExperimentConfig::synthetic_benchmark();
    let cmp = run_comparison(&cfg, &root.join("comparison"), false).map_err(|e| e.to_string())?;
    for line in cmp.to_table().lines() {
        println!("      {line}");
    }
    let gelu = cmp
        .activations
        .iter()
        .find(|(a, _)| *a == Activation::Gelu)
        .expect("gelu row");
    ensure(
        gelu.1.avg_eer < cmp.baseline.avg_eer,
        format!(
            "BN {:.2}% vs raw {:.2}%",
            gelu.1.avg_eer, cmp.baseline.avg_eer
        ),
    )?;
    Ok(format!(
        "BN-GELU {:.2}% < raw GMM-UBM {:.2}%",
        gelu.1.avg_eer, cmp.baseline.avg_eer
    ))
}

fn c11_determinism(root: &Path) -> Outcome {
    let cfg = ExperimentConfig::synthetic_benchmark();
    let mut files = Vec::new();
    for run in ["det-a", "det-b"] {
        let dir = root.join(run);
        run_recipe(&cfg, &dir, false).map_err(|e| e.to_string())?;
        let path = dir.join("scores").join(format!("{}.tsv", cfg.system));
        files.push(std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?);
    }
    ensure(
        !files[0].is_empty() && files[0] == files[1],
        "score files differ",
    )?;
    Ok(format!(
        "two runs, {} identical score bytes",
        files[0].len()
    ))
}

fn c12_round_trips(root: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dir = root.join("models");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let e = |x: bnsv::Error| x.to_string();

    let net =
        DenseNetwork::new(12, &[9, 4, 9], Activation::Gelu, 5, Activation::Linear, 1).map_err(e)?;
    let head = LossHead::new(LossKind::Arcface, LossHyper::default(), 5, 7, 2).map_err(e)?;
    let bn = BnModel {
        scheme: Scheme::Utcl,
        context: 3,
        network: Network::Dense(net),
        head: Some(head),
    };
    bn.save(&dir.join("m.bnm")).map_err(e)?;
    ensure(
        BnModel::load(&dir.join("m.bnm")).map_err(e)? == bn,
        "BNM1 differs",
    )?;

    let pca = PcaModel::fit(&randn(50, 6, &mut rng), 3).map_err(e)?;
    pca.save(&dir.join("p.bnp")).map_err(e)?;
    ensure(
        PcaModel::load(&dir.join("p.bnp")).map_err(e)? == pca,
        "BNP1 differs",
    )?;

    let ubm = toy_ubm(3, 4, 1.0, &mut rng);
    ubm.save(&dir.join("u.bng")).map_err(e)?;
    ensure(
        DiagGmm::load(&dir.join("u.bng")).map_err(e)? == ubm,
        "BNG1 differs",
    )?;

    let tv = TvModel::new(
        ubm,
        (0..3).map(|_| randn(4, 2, &mut rng)).collect(),
        randn(2, 1, &mut rng).column(0).into_owned(),
    )
    .map_err(e)?;
    tv.save(&dir.join("t.bnt")).map_err(e)?;
    ensure(
        TvModel::load(&dir.join("t.bnt")).map_err(e)? == tv,
        "BNT1 differs",
    )?;

    let a = randn(3, 3, &mut rng);
    let plda = PldaModel::new(
        randn(3, 1, &mut rng).column(0).into_owned(),
        &a * a.transpose(),
        DMatrix::identity(3, 3) * 0.5,
    )
    .map_err(e)?;
    plda.save(&dir.join("x.bnpl")).map_err(e)?;
    ensure(
        PldaModel::load(&dir.join("x.bnpl")).map_err(e)? == plda,
        "BNPL differs",
    )?;
    Ok("BNM1, BNP1, BNG1, BNT1, BNPL reload bit-exactly".into())
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("gradient correctness", Box::new(c1_gradients)),
        ("loss reduction identities", Box::new(c2_reductions)),
        ("GRU BPTT", Box::new(c3_gru_bptt)),
        ("EM monotonicity", Box::new(c4_em_monotone)),
        ("MAP limits", Box::new(c5_map_limits)),
        ("EER oracle equivalence", Box::new(c6_eer_oracle)),
        ("PCA", Box::new(c7_pca)),
        ("i-vector extraction and T recovery", Box::new(c8_ivector)),
        (
            "end-to-end synthetic experiment",
            Box::new(|| c9_end_to_end(root)),
        ),
        (
            "bottleneck beats raw features",
            Box::new(|| c10_bn_beats_raw(root)),
        ),
        ("determinism", Box::new(|| c11_determinism(root))),
        ("model file round trips", Box::new(|| c12_round_trips(root))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {:>2}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2}. {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
