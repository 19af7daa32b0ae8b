//! Nonparametric bootstrap over whole blocks.

use rand::Rng;
use rayon::prelude::*;

use crate::simulate::Seed;

/// Standard deviation of each statistic over `resamples` block resamples.
///
/// `stat` receives the resampled block indices and returns one value per
/// statistic; non-finite values are skipped for that statistic. Resample `r`
/// draws from stream `r` of `seed.master`, so the result does not depend on
/// the thread pool.
pub fn block_bootstrap_se<F>(k: usize, resamples: usize, seed: Seed, stat: F) -> Vec<f64>
where
    F: Fn(&[usize]) -> Vec<f64> + Sync,
{
    if k == 0 || resamples < 2 {
        return Vec::new();
    }
    let draws: Vec<Vec<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = Seed::new(seed.master).with_stream(seed.stream.wrapping_add(r as u64 + 1)).rng();
            let idx: Vec<usize> = (0..k).map(|_| rng.random_range(0..k)).collect();
            stat(&idx)
        })
        .collect();
    let m = draws.first().map_or(0, Vec::len);
    (0..m)
        .map(|s| {
            let vals: Vec<f64> = draws.iter().map(|d| d[s]).filter(|v| v.is_finite()).collect();
            sample_sd(&vals)
        })
        .collect()
}

/// Sample standard deviation; NaN with fewer than two values.
pub fn sample_sd(vals: &[f64]) -> f64 {
    if vals.len() < 2 {
        return f64::NAN;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_statistic_has_zero_se() {
        let se = block_bootstrap_se(10, 50, Seed::new(1), |_| vec![3.0]);
        assert_eq!(se, vec![0.0]);
    }

    #[test]
    fn mean_se_matches_plug_in_formula() {
        let x: Vec<f64> = (0..400).map(|i| (i % 7) as f64).collect();
        let se = block_bootstrap_se(x.len(), 2000, Seed::new(2), |idx| {
            vec![idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64]
        });
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let plug_in = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n / n).sqrt();
        assert!((se[0] / plug_in - 1.0).abs() < 0.1, "{} vs {plug_in}", se[0]);
    }

    #[test]
    fn deterministic_across_pools() {
        let f = |idx: &[usize]| vec![idx.iter().sum::<usize>() as f64];
        let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| block_bootstrap_se(30, 64, Seed::new(5), f));
        let b = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| block_bootstrap_se(30, 64, Seed::new(5), f));
        assert_eq!(a, b);
    }

    #[test]
    fn sd_small_inputs() {
        assert!(sample_sd(&[1.0]).is_nan());
        assert_eq!(sample_sd(&[1.0, 3.0]), 2f64.sqrt());
    }
}
