//! Generators for M4 processes, the Gaussian-copula η-model and i.i.d.
//! Fréchet baselines, plus componentwise block maxima.
//!
//! Every generator draws from a single ChaCha8 stream selected by [`Seed`], so
//! output depends only on `(master, stream)` and never on scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::domain::{Coefficient, GaussFrechetSpec, M4Spec, MarginTag, SeriesMatrix};
use crate::error::{Error, Result};

/// Master seed plus stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seed {
    pub master: u64,
    pub stream: u64,
}

impl Seed {
    pub fn new(master: u64) -> Self {
        Self { master, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

/// Uniform on the open interval (0, 1).
#[inline]
pub(crate) fn open_unit<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Unit Fréchet by inversion, `-1 / ln U`.
#[inline]
pub fn unit_frechet<R: RngCore>(rng: &mut R) -> f64 {
    -1.0 / open_unit(rng).ln()
}

/// Simulates `n` rows of the M4 process. `K` latent steps are drawn before
/// the first row so that row 1 already has its full moving-maxima window.
pub fn simulate_m4(spec: &M4Spec, n: usize, seed: Seed) -> Result<SeriesMatrix> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let spec = spec.clone().validate()?;
    let d = spec.dim();
    let n_sig = spec.n_signatures();
    let window = spec.max_lag() + 1;

    let mut terms = Vec::new();
    for l in 0..n_sig {
        for k in 0..window {
            for j in 0..d {
                let a = spec.coef(l, k, j);
                if a > 0.0 {
                    terms.push((l, k, j, a));
                }
            }
        }
    }

    let mut rng = seed.rng();
    // ring[(t mod window) * n_sig + l] holds Z_{l,t}
    let mut ring = vec![0.0; window * n_sig];
    let mut data = Vec::with_capacity(n * d);
    let mut row = vec![0.0; d];
    for t in 0..(n + window - 1) {
        let slot = t % window;
        for z in &mut ring[slot * n_sig..(slot + 1) * n_sig] {
            *z = unit_frechet(&mut rng);
        }
        if t + 1 < window {
            continue;
        }
        row.fill(0.0);
        for &(l, k, j, a) in &terms {
            let z = ring[((t + window - k) % window) * n_sig + l];
            let v = a * z;
            if v > row[j] {
                row[j] = v;
            }
        }
        data.extend_from_slice(&row);
    }

    let tag = if spec.unit_frechet_margins() { MarginTag::UnitFrechet } else { MarginTag::Unknown };
    SeriesMatrix::new(n, d, data, tag)
}

/// `ln Φ(y)` without cancellation in either tail.
fn ln_std_normal_cdf(y: f64) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    if y > 0.0 {
        (-0.5 * libm::erfc(y * r)).ln_1p()
    } else {
        (0.5 * libm::erfc(-y * r)).ln()
    }
}

/// I.i.d. rows whose copula is Gaussian with correlation `ρ` and whose margins
/// are unit Fréchet.
pub fn simulate_gauss_frechet(spec: &GaussFrechetSpec, n: usize, seed: Seed) -> Result<SeriesMatrix> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let spec = GaussFrechetSpec::new(spec.rho())?;
    let rho = spec.rho();
    let tail = (1.0 - rho * rho).sqrt();
    let mut rng = seed.rng();
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        for y in [z1, rho * z1 + tail * z2] {
            data.push((-1.0 / ln_std_normal_cdf(y)).max(f64::MIN_POSITIVE));
        }
    }
    SeriesMatrix::new(n, 2, data, MarginTag::UnitFrechet)
}

/// `n × d` independent unit-Fréchet entries.
pub fn simulate_iid_frechet(n: usize, d: usize, seed: Seed) -> Result<SeriesMatrix> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!("need n, d >= 1, got n = {n}, d = {d}")));
    }
    let mut rng = seed.rng();
    let data = (0..n * d).map(|_| unit_frechet(&mut rng)).collect();
    SeriesMatrix::new(n, d, data, MarginTag::UnitFrechet)
}

/// Componentwise maxima over consecutive blocks of `m` rows; a trailing
/// partial block is dropped.
pub fn block_maxima(series: &SeriesMatrix, m: usize) -> Result<SeriesMatrix> {
    if m == 0 || m > series.n() {
        return Err(Error::OutOfRange {
            what: "block size",
            detail: format!("m = {m} with n = {}", series.n()),
        });
    }
    let d = series.d();
    let rows = series.n() / m;
    let mut data = Vec::with_capacity(rows * d);
    for b in 0..rows {
        let mut max = series.row(b * m).to_vec();
        for i in b * m + 1..(b + 1) * m {
            for (acc, &x) in max.iter_mut().zip(series.row(i)) {
                if x > *acc {
                    *acc = x;
                }
            }
        }
        data.extend(max);
    }
    SeriesMatrix::new(rows, d, data, MarginTag::Unknown)
}

/// Random sparse M4 specification for property checks: up to
/// `max_signatures` signatures, lags `0..=max_lag`, each coefficient present
/// with probability 0.6. With `unit_margins` the coefficients of every margin
/// are rescaled to sum to one.
pub fn random_m4_spec(
    d: usize,
    max_signatures: usize,
    max_lag: usize,
    unit_margins: bool,
    seed: Seed,
) -> Result<M4Spec> {
    if max_signatures == 0 {
        return Err(Error::InvalidInput("need at least one signature".into()));
    }
    let mut rng = seed.rng();
    let n_sig = rng.random_range(1..=max_signatures);
    let window = rng.random_range(0..=max_lag) + 1;
    let mut table = vec![vec![vec![0.0; d]; window]; n_sig];
    for sig in table.iter_mut() {
        for lag in sig.iter_mut() {
            for a in lag.iter_mut() {
                if rng.random_bool(0.6) {
                    *a = rng.random_range(0.05..1.0);
                }
            }
        }
    }
    for j in 0..d {
        if table.iter().flatten().all(|m| m[j] == 0.0) {
            let l = rng.random_range(0..n_sig);
            let k = rng.random_range(0..window);
            table[l][k][j] = rng.random_range(0.05..1.0);
        }
    }
    if unit_margins {
        for j in 0..d {
            let s: f64 = table.iter().flatten().map(|m| m[j]).sum();
            for m in table.iter_mut().flatten() {
                m[j] /= s;
            }
        }
    }
    let mut coefficients = Vec::new();
    for (l, sig) in table.iter().enumerate() {
        for (k, lag) in sig.iter().enumerate() {
            for (j, &a) in lag.iter().enumerate() {
                if a > 0.0 {
                    coefficients.push(Coefficient::new(l, k, j, a));
                }
            }
        }
    }
    // Renormalized sums can drift by an ulp or two; keep the unit flag off.
    M4Spec::new(d, coefficients, false)
}
