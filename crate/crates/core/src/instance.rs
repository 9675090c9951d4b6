//! Random instance generation and SNR bookkeeping.
//!
//! Entries of H are i.i.d. circularly symmetric complex Gaussians with unit
//! variance (real and imaginary parts each N(0, 1/2)); noise entries have
//! total variance σ² = n / 10^(SNR/10). The RNG is ChaCha8 seeded from a
//! 64-bit seed with a fixed stream layout — H first (row major, re then im),
//! then v (re then im; always drawn, scaled by σ so noiseless instances share
//! H and ground truth with noisy ones), then the symbol indices — so
//! instances reproduce bit-identically across runs and platforms.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ChannelInstance, PskConstellation};

/// Parameters of one random instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub m: usize,
    pub n: usize,
    pub mod_order: usize,
    pub snr_db: f64,
    pub seed: u64,
    /// Generate v = 0 instead of noise at the given SNR.
    pub noiseless: bool,
}

impl GenSpec {
    pub fn new(m: usize, n: usize, mod_order: usize, snr_db: f64, seed: u64) -> Self {
        Self {
            m,
            n,
            mod_order,
            snr_db,
            seed,
            noiseless: false,
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noiseless = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.m < 1 || self.n < 1 {
            return Err(Error::InvalidParameter(format!(
                "dimensions must be positive, got m={} n={}",
                self.m, self.n
            )));
        }
        if self.mod_order < 2 {
            return Err(Error::InvalidModulation(self.mod_order));
        }
        if !self.noiseless && !self.snr_db.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "snr_db must be finite, got {}",
                self.snr_db
            )));
        }
        Ok(())
    }
}

/// Noise variance σ² = n / 10^(snr_db / 10).
pub fn sigma2_from_snr(n: usize, snr_db: f64) -> f64 {
    n as f64 / 10f64.powf(snr_db / 10.0)
}

/// splitmix64 step, used to derive per-trial seeds.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix a base seed with coordinate indices into an independent stream seed.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &p in parts {
        s = splitmix64(s ^ p);
    }
    s
}

/// Draw the instance described by `spec`. Deterministic given the seed.
pub fn generate_instance(spec: &GenSpec) -> Result<ChannelInstance> {
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Unit total variance per complex entry.
    let scale_h = std::f64::consts::FRAC_1_SQRT_2;
    let mut h = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            h[(i, j)] = Complex64::new(re * scale_h, im * scale_h);
        }
    }

    let sigma2 = if spec.noiseless {
        0.0
    } else {
        sigma2_from_snr(n, spec.snr_db)
    };
    let scale_v = (sigma2 / 2.0).sqrt();
    let mut v = DVector::zeros(m);
    for i in 0..m {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        v[i] = Complex64::new(re * scale_v, im * scale_v);
    }

    let cons = PskConstellation::new(spec.mod_order)?;
    let x_star: Vec<Complex64> = (0..n)
        .map(|_| cons.symbol(rng.random_range(0..spec.mod_order)))
        .collect();

    let snr_db = if spec.noiseless {
        f64::INFINITY
    } else {
        spec.snr_db
    };
    ChannelInstance::from_parts(h, x_star, v, spec.mod_order, sigma2, snr_db, spec.seed)
}

fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        // 17 significant digits round-trip a double exactly.
        format!("{x:.16e}")
    }
}

/// Render an instance in the text interchange format.
///
/// Header line `m n M snr_db seed`, then m rows of H as `re im` pairs, one
/// row of ground-truth constellation indices, then m lines of noise entries
/// as `re im`. All floats carry 17 significant digits and round-trip exactly.
pub fn instance_to_string(inst: &ChannelInstance) -> String {
    let (m, n) = (inst.m(), inst.n());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {} {} {}",
        m,
        n,
        inst.mod_order,
        fmt_f64(inst.snr_db),
        inst.seed
    );
    for i in 0..m {
        let row: Vec<String> = (0..n)
            .flat_map(|j| {
                let z = inst.h[(i, j)];
                [fmt_f64(z.re), fmt_f64(z.im)]
            })
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    let idx: Vec<String> = inst.star_indices().iter().map(|k| k.to_string()).collect();
    let _ = writeln!(out, "{}", idx.join(" "));
    for i in 0..m {
        let z = inst.v[i];
        let _ = writeln!(out, "{} {}", fmt_f64(z.re), fmt_f64(z.im));
    }
    out
}

fn parse_f64(tok: &str, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad {what}: {tok:?}")))
}

/// Parse the text interchange format produced by [`instance_to_string`].
pub fn instance_from_str(text: &str) -> Result<ChannelInstance> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty instance file".into()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 5 {
        return Err(Error::Parse(format!(
            "header must be `m n M snr_db seed`, got {header:?}"
        )));
    }
    let m: usize = head[0]
        .parse()
        .map_err(|_| Error::Parse(format!("bad m: {:?}", head[0])))?;
    let n: usize = head[1]
        .parse()
        .map_err(|_| Error::Parse(format!("bad n: {:?}", head[1])))?;
    let mod_order: usize = head[2]
        .parse()
        .map_err(|_| Error::Parse(format!("bad M: {:?}", head[2])))?;
    let snr_db = parse_f64(head[3], "snr_db")?;
    let seed: u64 = head[4]
        .parse()
        .map_err(|_| Error::Parse(format!("bad seed: {:?}", head[4])))?;

    let mut h = DMatrix::zeros(m, n);
    for i in 0..m {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing channel row {i}")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 * n {
            return Err(Error::Parse(format!(
                "channel row {i} has {} values, expected {}",
                toks.len(),
                2 * n
            )));
        }
        for j in 0..n {
            let re = parse_f64(toks[2 * j], "H entry")?;
            let im = parse_f64(toks[2 * j + 1], "H entry")?;
            h[(i, j)] = Complex64::new(re, im);
        }
    }

    let idx_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing symbol index row".into()))?;
    let idx: Vec<usize> = idx_line
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad symbol index: {t:?}")))
        })
        .collect::<Result<_>>()?;
    if idx.len() != n {
        return Err(Error::Parse(format!(
            "expected {n} symbol indices, got {}",
            idx.len()
        )));
    }
    let cons = PskConstellation::new(mod_order)?;
    if let Some(&k) = idx.iter().find(|&&k| k >= mod_order) {
        return Err(Error::Parse(format!("symbol index {k} out of range")));
    }
    let x_star: Vec<Complex64> = idx.iter().map(|&k| cons.symbol(k)).collect();

    let mut v = DVector::zeros(m);
    for i in 0..m {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing noise row {i}")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::Parse(format!(
                "noise row {i} has {} values, expected 2",
                toks.len()
            )));
        }
        v[i] = Complex64::new(parse_f64(toks[0], "v entry")?, parse_f64(toks[1], "v entry")?);
    }

    let sigma2 = sigma2_from_snr(n, snr_db);
    ChannelInstance::from_parts(h, x_star, v, mod_order, sigma2, snr_db, seed)
}

/// Write an instance file.
pub fn write_instance(inst: &ChannelInstance, path: &Path) -> Result<()> {
    fs::write(path, instance_to_string(inst))?;
    Ok(())
}

/// Read an instance file.
pub fn read_instance(path: &Path) -> Result<ChannelInstance> {
    let text = fs::read_to_string(path)?;
    instance_from_str(&text)
}
