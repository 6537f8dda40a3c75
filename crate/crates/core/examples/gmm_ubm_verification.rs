//! Classic GMM-UBM verification on toy data: train a background model, MAP
//! adapt one speaker model, and score matched and mismatched test segments.

use bnsv::gmm::{llr_score, map_adapt, ubm_train_em, MapPosteriors, UbmConfig};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn speaker(offset: &DVector<f64>, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // Three "phones" shifted by the speaker offset.
    let phones = [-2.0, 0.0, 2.5];
    DMatrix::from_fn(n, offset.len(), |t, j| {
        let z: f64 = StandardNormal.sample(rng);
        phones[t % 3] + offset[j] + 0.5 * z
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = 4;
    let offsets: Vec<DVector<f64>> = (0..12)
        .map(|_| {
            DVector::from_fn(d, |_, _| {
                0.6 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
        })
        .collect();

    let background: Vec<DMatrix<f64>> = offsets[..10]
        .iter()
        .map(|o| speaker(o, 300, &mut rng))
        .collect();
    let mut pool = DMatrix::zeros(3000, d);
    for (i, b) in background.iter().enumerate() {
        pool.rows_mut(300 * i, 300).copy_from(b);
    }
    let cfg = UbmConfig {
        components: 8,
        iterations: 15,
        init_subsample: 3000,
        ..UbmConfig::default()
    };
    let ubm = ubm_train_em(&pool, &cfg)?;
    println!(
        "UBM log-likelihood by iteration: {:.1?}",
        ubm.log_likelihoods
    );

    let target = map_adapt(
        &ubm.model,
        &speaker(&offsets[10], 200, &mut rng),
        10.0,
        3,
        MapPosteriors::Evolving,
    )?;
    let genuine = llr_score(&target, &ubm.model, &speaker(&offsets[10], 150, &mut rng))?;
    let impostor = llr_score(&target, &ubm.model, &speaker(&offsets[11], 150, &mut rng))?;
    println!("LLR genuine {genuine:.3}, impostor {impostor:.3}");
    Ok(())
}
