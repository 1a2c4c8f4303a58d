use crate::error::{contract_err, dim_err, Result};

/// Assigns each value to one of `bins` equal-width bins spanning the
/// observed min/max. The maximum falls in the last bin; a constant series
/// maps entirely to bin 0.
pub fn discretize(values: &[f64], bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(contract_err!("need at least one bin"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(contract_err!("cannot bin non-finite values"));
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Ok(vec![0; values.len()]);
    }
    let width = (hi - lo) / bins as f64;
    Ok(values.iter().map(|&v| (((v - lo) / width) as usize).min(bins - 1)).collect())
}

fn counts(a: &[usize]) -> Vec<usize> {
    let mut c = vec![0; a.iter().max().map_or(0, |m| m + 1)];
    for &v in a {
        c[v] += 1;
    }
    c
}

fn entropy_of_counts(c: &[usize], n: f64) -> f64 {
    c.iter().filter(|&&k| k > 0).map(|&k| {
        let p = k as f64 / n;
        -p * p.ln()
    }).sum()
}

/// Plug-in Shannon entropy in nats.
pub fn entropy(a: &[usize]) -> Result<f64> {
    if a.is_empty() {
        return Err(contract_err!("entropy of an empty series"));
    }
    Ok(entropy_of_counts(&counts(a), a.len() as f64))
}

/// Plug-in mutual information, in nats, from the joint histogram.
pub fn mutual_info_discrete(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err!("series lengths differ: {} vs {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(contract_err!("mutual information of empty series"));
    }
    let n = a.len() as f64;
    let (ca, cb) = (counts(a), counts(b));
    let mut joint = vec![0usize; ca.len() * cb.len()];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * cb.len() + y] += 1;
    }
    let mut mi = 0.0;
    for (x, &nx) in ca.iter().enumerate() {
        if nx == 0 {
            continue;
        }
        for (y, &ny) in cb.iter().enumerate() {
            let nxy = joint[x * cb.len() + y];
            if nxy > 0 {
                mi += nxy as f64 / n * (nxy as f64 * n / (nx as f64 * ny as f64)).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Mutual information between every (latent, factor) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MIProfile {
    /// `mi[j][k]`: latent `j` against factor `k`.
    pub mi: Vec<Vec<f64>>,
    pub factor_entropy: Vec<f64>,
}

impl MIProfile {
    /// `latents` is `n` rows of `L` values, `factors` `n` rows of `F` indices.
    /// Latents are binned per dimension; factors are used as they are.
    pub fn estimate(latents: &[Vec<f64>], factors: &[Vec<u16>], bins: usize) -> Result<Self> {
        let n = latents.len();
        if n == 0 || factors.len() != n {
            return Err(dim_err!("need equally many latents and factors, got {n} and {}", factors.len()));
        }
        let l = latents[0].len();
        let f = factors[0].len();
        if latents.iter().any(|r| r.len() != l) || factors.iter().any(|r| r.len() != f) {
            return Err(dim_err!("ragged latent or factor rows"));
        }
        let binned = (0..l)
            .map(|j| discretize(&latents.iter().map(|r| r[j]).collect::<Vec<_>>(), bins))
            .collect::<Result<Vec<_>>>()?;
        let fac: Vec<Vec<usize>> = (0..f).map(|k| factors.iter().map(|r| r[k] as usize).collect()).collect();
        let mi = binned
            .iter()
            .map(|z| fac.iter().map(|v| mutual_info_discrete(z, v)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let factor_entropy = fac.iter().map(|v| entropy(v)).collect::<Result<Vec<_>>>()?;
        Ok(Self { mi, factor_entropy })
    }

    pub fn num_latents(&self) -> usize {
        self.mi.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factor_entropy.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_uniform_series() {
        let a: Vec<usize> = (0..500).map(|i| i % 5).collect();
        assert!((mutual_info_discrete(&a, &a).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!((entropy(&a).unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let a = [0, 1, 1, 2, 0, 2, 2, 1];
        let b = [1, 1, 0, 0, 1, 0, 1, 1];
        let ab = mutual_info_discrete(&a, &b).unwrap();
        assert!((ab - mutual_info_discrete(&b, &a).unwrap()).abs() < 1e-15);
        assert!(ab >= 0.0);
        assert!(mutual_info_discrete(&a, &b[..3]).is_err());
        assert!(mutual_info_discrete(&[], &[]).is_err());
    }

    #[test]
    fn binning_edges() {
        assert_eq!(discretize(&[0.0, 0.5, 1.0, 0.2, 0.79], 5).unwrap(), vec![0, 2, 4, 1, 3]);
        assert_eq!(discretize(&[3.0, 3.0], 5).unwrap(), vec![0, 0]);
        assert!(discretize(&[f64::NAN], 5).is_err());
    }
}
