//! EER, minimum detection cost and DET export for two simulated systems, and
//! their score-level fusion.

use bnsv::eval::{compute_eer, compute_mindcf, det_export, fuse_scores, CostParams, ScoreFile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 1.0)?;
    // Each trial has a latent match strength; the two systems see it through
    // independent noise, so averaging them helps.
    let mut a = ScoreFile::default();
    let mut b = ScoreFile::default();
    let mut is_target = Vec::new();
    for i in 0..2000 {
        let target = i % 10 == 0;
        let base = if target { 2.0 } else { 0.0 };
        a.entries.push((
            format!("m{}", i % 50),
            format!("t{i}"),
            base + noise.sample(&mut rng),
        ));
        b.entries.push((
            format!("m{}", i % 50),
            format!("t{i}"),
            3.0 * (base + noise.sample(&mut rng)) - 1.0,
        ));
        is_target.push(target);
    }
    let split = |s: &ScoreFile| -> (Vec<f64>, Vec<f64>) {
        let g = s
            .entries
            .iter()
            .zip(&is_target)
            .filter(|(_, &t)| t)
            .map(|(e, _)| e.2)
            .collect();
        let i = s
            .entries
            .iter()
            .zip(&is_target)
            .filter(|(_, &t)| !t)
            .map(|(e, _)| e.2)
            .collect();
        (g, i)
    };
    let cost = CostParams::default();
    let b_scaled = ScoreFile {
        entries: b
            .entries
            .iter()
            .map(|(e, t, s)| (e.clone(), t.clone(), (s + 1.0) / 3.0))
            .collect(),
    };
    for (name, s) in [
        ("system A", a.clone()),
        ("system B", b.clone()),
        ("fused", fuse_scores(&[a, b_scaled], None)?),
    ] {
        let (g, i) = split(&s);
        let eer = compute_eer(&g, &i)?;
        let dcf = compute_mindcf(&g, &i, &cost)?;
        println!(
            "{name:<9} EER {:5.2}%  minDCF {:.4}",
            100.0 * eer.eer,
            dcf.min_dcf
        );
        if name == "fused" {
            let det = det_export(&g, &i)?;
            println!(
                "DET curve: {} operating points, {} histogram bins",
                det.points.len(),
                det.genuine.counts.len()
            );
        }
    }
    Ok(())
}
