//! Seeded generative simulation of PMF, CPMF and HPF count matrices.
//!
//! Factor rows and observation rows are generated in fixed-size blocks,
//! each block on its own stream derived from the caller's handle, so the
//! output does not depend on the number of worker threads.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CpmfHyper, GammaParams, HpfHyper, PmfHyper};
use crate::rng::RngHandle;

const BLOCK_ROWS: usize = 64;
const STREAM_ROW_FACTORS: u64 = 1;
const STREAM_COL_FACTORS: u64 = 2;
const STREAM_OBSERVATIONS: u64 = 3;

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// One Gamma(shape, rate) draw. Small shapes go through the
/// Gamma(a) = Gamma(a + 1)·U^{1/a} boost inside `rand_distr`.
pub fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    match Gamma::new(shape, 1.0 / rate) {
        Ok(g) => g.sample(rng),
        Err(_) => f64::NAN,
    }
}

/// One Poisson draw; rate 0 gives 0.
pub fn poisson_draw<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    match Poisson::new(rate) {
        Ok(p) => {
            let y: f64 = p.sample(rng);
            y as u64
        }
        Err(_) => 0,
    }
}

pub fn sample_gamma(rng: &RngHandle, p: GammaParams, n: usize) -> Result<Vec<f64>> {
    p.validate()?;
    let mut r = rng.rng();
    Ok((0..n).map(|_| gamma_draw(&mut r, p.shape, p.rate)).collect())
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::Parse(format!(
                "matrix of {} values cannot have shape {rows}x{cols}",
                values.len()
            )));
        }
        Ok(DataMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DataMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.get(i, j));
            }
        }
        DataMatrix { rows: self.cols, cols: self.rows, values }
    }

    /// Headerless CSV: integral values without a decimal point, other
    /// reals with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut line = String::new();
        for i in 0..self.rows {
            line.clear();
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&format_value(*v));
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut values = Vec::new();
        let mut rows = 0;
        let mut cols = None;
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let before = values.len();
            for field in line.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad number `{field}`", lineno + 1)))?;
                values.push(v);
            }
            let width = values.len() - before;
            match cols {
                None => cols = Some(width),
                Some(c) if c != width => {
                    return Err(Error::Parse(format!("line {}: expected {c} fields, found {width}", lineno + 1)))
                }
                _ => {}
            }
            rows += 1;
        }
        DataMatrix::new(rows, cols.unwrap_or(0), values)
    }
}

pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        return format!("{}", v as i64);
    }
    format_g17(v)
}

/// printf-style `%.17g`.
fn format_g17(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-5..17).contains(&exp) {
        let mut out = trim(mantissa);
        let _ = write!(out, "e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
        out
    } else {
        trim(&format!("{:.*}", (16 - exp) as usize, v))
    }
}

/// Fill `count` rows of width `width` block by block.
fn draw_rows<F>(handle: RngHandle, count: usize, width: usize, fill: F) -> Vec<f64>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng, &mut [f64]) + Sync,
{
    let mut out = vec![0.0; count * width];
    if width == 0 {
        return out;
    }
    out.par_chunks_mut(BLOCK_ROWS * width).enumerate().for_each(|(b, chunk)| {
        let mut rng = handle.derive(b as u64).rng();
        for row in chunk.chunks_mut(width) {
            fill(&mut rng, row);
        }
    });
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Observation rows from factor matrices and a per-entry draw given the rate.
fn observe<F>(handle: RngHandle, theta: &[f64], beta: &[f64], n: usize, m: usize, k: usize, draw: F) -> Vec<f64>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng, f64) -> f64 + Sync,
{
    let mut out = vec![0.0; n * m];
    out.par_chunks_mut(BLOCK_ROWS * m).enumerate().for_each(|(b, chunk)| {
        let mut rng = handle.derive(STREAM_OBSERVATIONS).derive(b as u64).rng();
        for (r, row) in chunk.chunks_mut(m).enumerate() {
            let i = b * BLOCK_ROWS + r;
            let t = &theta[i * k..(i + 1) * k];
            for (j, y) in row.iter_mut().enumerate() {
                *y = draw(&mut rng, dot(t, &beta[j * k..(j + 1) * k]));
            }
        }
    });
    out
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::Dimension { rows: n, cols: m });
    }
    Ok(())
}

fn iid_factors(handle: RngHandle, count: usize, k: usize, g: GammaParams) -> Vec<f64> {
    draw_rows(handle, count, k, move |rng, row| {
        for x in row {
            *x = gamma_draw(rng, g.shape, g.rate);
        }
    })
}

fn pmf_factors(rng: &RngHandle, h: &PmfHyper, n: usize, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    h.validate()?;
    check_dims(n, m)?;
    let k = h.k as usize;
    let theta = iid_factors(rng.derive(STREAM_ROW_FACTORS), n, k, h.row.gamma()?);
    let beta = iid_factors(rng.derive(STREAM_COL_FACTORS), m, k, h.col.gamma()?);
    Ok((theta, beta))
}

pub fn simulate_pmf(rng: &RngHandle, h: &PmfHyper, n: usize, m: usize) -> Result<DataMatrix> {
    let (theta, beta) = pmf_factors(rng, h, n, m)?;
    let values = observe(*rng, &theta, &beta, n, m, h.k as usize, |r, rate| poisson_draw(r, rate) as f64);
    DataMatrix::new(n, m, values)
}

pub fn simulate_cpmf(rng: &RngHandle, h: &CpmfHyper, n: usize, m: usize) -> Result<DataMatrix> {
    h.ed.validate()?;
    let (theta, beta) = pmf_factors(rng, &h.base, n, m)?;
    let ed = &h.ed;
    let values = observe(*rng, &theta, &beta, n, m, h.base.k as usize, |r, rate| {
        let count = poisson_draw(r, rate);
        ed.sample_conditional(r, count)
    });
    DataMatrix::new(n, m, values)
}

/// Row factors share a per-row rate ξ_i ~ Gamma(a′, a′/b′) with
/// θ_ik ~ Gamma(a, ξ_i); columns use (c, c′, d′) the same way.
pub fn simulate_hpf(rng: &RngHandle, h: &HpfHyper, n: usize, m: usize) -> Result<DataMatrix> {
    h.validate()?;
    check_dims(n, m)?;
    let k = h.k as usize;
    let hier = |shape: f64, hyper_shape: f64, hyper_mean: f64| {
        move |rng: &mut rand_chacha::ChaCha8Rng, row: &mut [f64]| {
            let rate = gamma_draw(rng, hyper_shape, hyper_shape / hyper_mean);
            for x in row {
                *x = gamma_draw(rng, shape, rate);
            }
        }
    };
    let theta = draw_rows(rng.derive(STREAM_ROW_FACTORS), n, k, hier(h.a, h.a_prime, h.b_prime));
    let beta = draw_rows(rng.derive(STREAM_COL_FACTORS), m, k, hier(h.c, h.c_prime, h.d_prime));
    let values = observe(*rng, &theta, &beta, n, m, k, |r, rate| poisson_draw(r, rate) as f64);
    DataMatrix::new(n, m, values)
}
