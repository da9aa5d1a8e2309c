//! Exact integer noise and privacy accounting.
//!
//! Both samplers draw only uniform integers and Bernoulli trials with
//! rational parameters; no floating-point density is evaluated on the
//! accept/reject path. The construction follows Canonne, Kamath and Steinke,
//! "The Discrete Gaussian for Differential Privacy" (2020): Bernoulli(exp(-γ))
//! by an alternating series, discrete Laplace from a geometric, and the
//! discrete Gaussian by rejection from a discrete Laplace proposal.
//!
//! Scales are [`Rational`]s with numerator and denominator below `2^24`,
//! which keeps every intermediate quantity inside a `u128`.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest numerator or denominator accepted for a noise scale.
pub const MAX_SCALE_PART: u64 = (1 << 24) - 1;

/// A positive rational `num / den` in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Rational {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn isqrt_ceil(v: u128) -> u128 {
    if v == 0 {
        return 0;
    }
    let mut x = (v as f64).sqrt() as u128;
    while x * x > v {
        x -= 1;
    }
    while x * x < v {
        x += 1;
    }
    x
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidScale(format!("{num}/{den} is not positive")));
        }
        let g = gcd(num, den);
        let (num, den) = (num / g, den / g);
        if num > MAX_SCALE_PART || den > MAX_SCALE_PART {
            return Err(Error::InvalidScale(format!(
                "{num}/{den} exceeds the 24-bit numerator/denominator limit"
            )));
        }
        Ok(Rational { num, den })
    }

    pub fn integer(v: u64) -> Result<Self> {
        Rational::new(v, 1)
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Smallest rational with denominator `den * 64` that is `≥ √k · self`.
    /// Exact whenever `k` is a perfect square.
    pub fn mul_sqrt_ceil(self, k: u64) -> Result<Self> {
        let root = isqrt_ceil(k as u128);
        if root * root == k as u128 {
            return Rational::new(self.num * root as u64, self.den);
        }
        const D: u128 = 64;
        let scaled = k as u128 * (self.num as u128 * D).pow(2);
        let num = isqrt_ceil(scaled);
        let num = u64::try_from(num)
            .map_err(|_| Error::InvalidScale("scaled noise too large".into()))?;
        Rational::new(num, self.den * D as u64)
    }

    /// `2 / self`, the discrete-Laplace scale for a sensitivity-1 selection
    /// budget `self`.
    pub fn two_over(self) -> Result<Self> {
        Rational::new(2 * self.den, self.num)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Rational {
    type Err = Error;

    /// Accepts `"7"`, `"2.5"`, `"0.001"` and `"5/2"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidScale(format!("cannot parse {s:?} as a positive rational"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Rational::new(n, d);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 12 || !frac.bytes().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let den = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        Rational::new(num, den)
    }
}

impl TryFrom<String> for Rational {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Rational> for String {
    fn from(r: Rational) -> String {
        r.to_string()
    }
}

/// Which integer noise distribution a release uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    DiscreteGaussian,
    DiscreteLaplace,
}

/// Noise distribution plus scale (σ for the Gaussian, b for the Laplace).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub scale: Rational,
}

impl NoiseSpec {
    pub fn gaussian(sigma: Rational) -> Self {
        NoiseSpec {
            kind: NoiseKind::DiscreteGaussian,
            scale: sigma,
        }
    }

    pub fn laplace(b: Rational) -> Self {
        NoiseSpec {
            kind: NoiseKind::DiscreteLaplace,
            scale: b,
        }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> i64 {
        match self.kind {
            NoiseKind::DiscreteGaussian => gaussian(self.scale, rng),
            NoiseKind::DiscreteLaplace => laplace(self.scale, rng),
        }
    }

    pub fn sample_vec<R: RngCore + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<i64> {
        (0..len).map(|_| self.sample(rng)).collect()
    }

    /// Standard deviation of the noise, for margin checks and predictions.
    pub fn std_dev(&self) -> f64 {
        match self.kind {
            NoiseKind::DiscreteGaussian => self.scale.to_f64(),
            NoiseKind::DiscreteLaplace => std::f64::consts::SQRT_2 * self.scale.to_f64(),
        }
    }

    /// Half-width used by the modulus margin rule. Laplace tails are heavier,
    /// so the scale is stretched until ten "sigmas" cover `e^-50`.
    pub fn margin_scale(&self) -> f64 {
        match self.kind {
            NoiseKind::DiscreteGaussian => self.scale.to_f64(),
            NoiseKind::DiscreteLaplace => 5.0 * self.scale.to_f64(),
        }
    }
}

fn uniform_below<R: RngCore + ?Sized>(bound: u128, rng: &mut R) -> u128 {
    debug_assert!(bound > 0);
    if bound <= u64::MAX as u128 + 1 {
        if bound == u64::MAX as u128 + 1 {
            return rng.next_u64() as u128;
        }
        let bound = bound as u64;
        let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
        loop {
            let x = rng.next_u64();
            if x <= zone {
                return (x % bound) as u128;
            }
        }
    }
    let zone = u128::MAX - (u128::MAX % bound + 1) % bound;
    loop {
        let x = (rng.next_u64() as u128) << 64 | rng.next_u64() as u128;
        if x <= zone {
            return x % bound;
        }
    }
}

/// Uniform index in `[0, n)`.
pub fn uniform_index<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> usize {
    assert!(n > 0, "empty range");
    uniform_below(n as u128, rng) as usize
}

/// Bernoulli(num / den) for `num ≤ den`.
fn bernoulli<R: RngCore + ?Sized>(num: u128, den: u128, rng: &mut R) -> bool {
    uniform_below(den, rng) < num
}

/// Bernoulli(exp(-num/den)) for `num ≤ den`.
fn bernoulli_exp_le1<R: RngCore + ?Sized>(num: u128, den: u128, rng: &mut R) -> bool {
    let mut k: u128 = 1;
    loop {
        // Bernoulli(γ/k) as the conjunction of Bernoulli(γ) and Bernoulli(1/k).
        if bernoulli(num, den, rng) && bernoulli(1, k, rng) {
            k += 1;
        } else {
            return k % 2 == 1;
        }
    }
}

/// Bernoulli(exp(-num/den)) for any non-negative ratio.
fn bernoulli_exp<R: RngCore + ?Sized>(num: u128, den: u128, rng: &mut R) -> bool {
    if num <= den {
        return bernoulli_exp_le1(num, den, rng);
    }
    let whole = num / den;
    let mut i = 0;
    while i < whole {
        if !bernoulli_exp_le1(1, 1, rng) {
            return false;
        }
        i += 1;
    }
    bernoulli_exp_le1(num % den, den, rng)
}

/// Discrete Laplace with `P(k) ∝ exp(-|k| / (num/den))`.
fn laplace_parts<R: RngCore + ?Sized>(num: u128, den: u128, rng: &mut R) -> i64 {
    loop {
        let u = uniform_below(num, rng);
        if !bernoulli_exp(u, num, rng) {
            continue;
        }
        let mut v: u128 = 0;
        while bernoulli_exp_le1(1, 1, rng) {
            v += 1;
        }
        let y = (u + num * v) / den;
        let negative = bernoulli(1, 2, rng);
        if negative && y == 0 {
            continue;
        }
        let y = i64::try_from(y).unwrap_or(i64::MAX);
        return if negative { -y } else { y };
    }
}

fn laplace<R: RngCore + ?Sized>(b: Rational, rng: &mut R) -> i64 {
    laplace_parts(b.num as u128, b.den as u128, rng)
}

fn gaussian<R: RngCore + ?Sized>(sigma: Rational, rng: &mut R) -> i64 {
    let (a, b) = (sigma.num as u128, sigma.den as u128);
    let t = a / b + 1;
    // Acceptance probability exp(-(|y| - σ²/t)² / 2σ²) = exp(-N² / 2F²) with
    // N = ||y|·t·b² - a²| and F = a·b·t. Writing N = qF + r splits the
    // exponent into q²/2 + qr/F + r²/2F², each term evaluated exactly.
    let f = a * b * t;
    loop {
        let y = laplace_parts(t, 1, rng);
        let n = (y.unsigned_abs() as u128 * t * b * b).abs_diff(a * a);
        let (q, r) = (n / f, n % f);
        let mut accept = true;
        let mut i = 0;
        while accept && i < q {
            accept = bernoulli_exp(q, 2, rng);
            i += 1;
        }
        if accept && bernoulli_exp(q * r, f, rng) && bernoulli_exp(r * r, 2 * f * f, rng) {
            return y;
        }
    }
}

/// Exact sample from the discrete Gaussian on `Z` with `P(k) ∝ exp(-k²/2σ²)`.
pub fn sample_discrete_gaussian<R: RngCore + ?Sized>(sigma: Rational, rng: &mut R) -> i64 {
    gaussian(sigma, rng)
}

/// Exact sample from the discrete Laplace on `Z` with `P(k) ∝ exp(-|k|/b)`.
pub fn sample_discrete_laplace<R: RngCore + ?Sized>(b: Rational, rng: &mut R) -> i64 {
    laplace(b, rng)
}

/// Zero-concentrated DP of a sensitivity-1 Gaussian release: `ρ = 1/(2σ²)`.
pub fn rho_from_sigma(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidPrivacyParameter(format!("sigma = {sigma}")));
    }
    Ok(1.0 / (2.0 * sigma * sigma))
}

/// Converts ρ-zCDP to (ε, δ)-DP: `ε = ρ + 2√(ρ ln(1/δ))`.
pub fn zcdp_to_approx_dp(rho: f64, delta: f64) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidPrivacyParameter(format!("rho = {rho}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidPrivacyParameter(format!("delta = {delta}")));
    }
    Ok(rho + 2.0 * (rho * -delta.ln()).sqrt())
}

/// Pure-DP amplification when each client answers one of `k` queries chosen
/// uniformly at random: `ε' = ln(1 + (e^ε - 1)/k)`. An upper bound.
pub fn amplify_by_sampling(epsilon: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::NoQueries);
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidPrivacyParameter(format!(
            "epsilon = {epsilon}"
        )));
    }
    if k == 1 {
        return Ok(epsilon);
    }
    Ok((epsilon.exp_m1() / k as f64).ln_1p())
}

/// ρ, ε, δ and σ of one release, all derived from a single honest
/// aggregator's noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub rho: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
}

impl PrivacyBudget {
    pub fn from_sigma(sigma: f64, delta: f64) -> Result<Self> {
        let rho = rho_from_sigma(sigma)?;
        let epsilon = zcdp_to_approx_dp(rho, delta)?;
        Ok(PrivacyBudget {
            rho,
            epsilon,
            delta,
            sigma,
        })
    }
}
