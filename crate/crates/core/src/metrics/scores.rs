use crate::error::{contract_err, Error, Result};
use crate::metrics::mi::MIProfile;

/// Mutual information gap: for each factor with positive entropy, the
/// difference between its two most informative latents divided by the
/// factor entropy, averaged over those factors.
pub fn mig(profile: &MIProfile) -> Result<f64> {
    if profile.num_latents() < 2 {
        return Err(contract_err!("MIG needs at least two latents"));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for (k, &h) in profile.factor_entropy.iter().enumerate() {
        if h <= 0.0 {
            continue;
        }
        let mut col: Vec<f64> = profile.mi.iter().map(|row| row[k]).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        total += ((col[0] - col[1]) / h).clamp(0.0, 1.0);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Undefined("every factor is constant".into()));
    }
    Ok(total / used as f64)
}

/// Modularity: a latent scores `1 − δ`, where `δ` is the mean squared
/// ratio of its non-maximal factor informations to its maximal one.
/// Latents carrying no information score 0. Constant factors are ignored.
pub fn modularity(profile: &MIProfile) -> Result<f64> {
    let live: Vec<usize> = (0..profile.num_factors()).filter(|&k| profile.factor_entropy[k] > 0.0).collect();
    if profile.num_factors() < 2 {
        return Err(contract_err!("modularity needs at least two factors"));
    }
    if live.len() < 2 {
        return Err(Error::Undefined("fewer than two non-constant factors".into()));
    }
    if profile.num_latents() == 0 {
        return Err(contract_err!("modularity needs at least one latent"));
    }
    let f = live.len() as f64;
    let score: f64 = profile
        .mi
        .iter()
        .map(|row| {
            let theta = live.iter().map(|&k| row[k]).fold(0.0, f64::max);
            if theta <= 0.0 {
                return 0.0;
            }
            let sq: f64 = live.iter().map(|&k| (row[k] / theta).powi(2)).sum();
            (1.0 - (sq - 1.0) / (f - 1.0)).clamp(0.0, 1.0)
        })
        .sum();
    Ok(score / profile.num_latents() as f64)
}
