//! Seeded synthetic image families standing in for real photo subsets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, SimRng};
use crate::semcodec::{ImageGray, CELL};

use super::HarnessError;

pub const CHECKER_LO: u8 = 32;
pub const CHECKER_HI: u8 = 224;
pub const GRATING_AMPLITUDE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gradients,
    Checker,
    Blobs,
    Gratings,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Gradients, Family::Checker, Family::Blobs, Family::Gratings];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gradients => "gradients",
            Family::Checker => "checker",
            Family::Blobs => "blobs",
            Family::Gratings => "gratings",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| HarnessError::UnknownFamily(s.to_owned()))
    }
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn render(size: usize, f: impl Fn(f64, f64) -> f64) -> ImageGray {
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            pixels.push(quantize(f(x as f64, y as f64)));
        }
    }
    ImageGray::new(size, size, pixels).expect("pixel count matches")
}

/// Ramp `offset + slope·(x·cosθ + y·sinθ)`, wrapped modulo 256.
fn gradient(size: usize, rng: &mut SimRng) -> ImageGray {
    let theta = rng.uniform_range(0.0, 2.0 * PI);
    let slope = rng.uniform_range(1.5, 3.0);
    let offset = rng.uniform_range(0.0, 256.0);
    let (c, s) = (theta.cos(), theta.sin());
    render(size, |x, y| (offset + slope * (x * c + y * s)).rem_euclid(256.0).floor())
}

/// Two-level checkerboard with squares of side `period`, shifted by the phase.
pub fn checker_image(size: usize, period: usize, phase_x: usize, phase_y: usize, lo: u8, hi: u8) -> ImageGray {
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let odd = ((x + phase_x) / period + (y + phase_y) / period) % 2 == 1;
            pixels.push(if odd { hi } else { lo });
        }
    }
    ImageGray::new(size, size, pixels).expect("pixel count matches")
}

fn checker(size: usize, rng: &mut SimRng) -> ImageGray {
    let period = 8 + rng.below(57);
    let phase_x = rng.below(period);
    let phase_y = rng.below(period);
    checker_image(size, period, phase_x, phase_y, CHECKER_LO, CHECKER_HI)
}

fn blobs(size: usize, rng: &mut SimRng) -> ImageGray {
    let n = 3 + rng.below(6);
    let background = rng.uniform_range(10.0, 50.0);
    let s = size as f64;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            let cx = rng.uniform_range(0.0, s);
            let cy = rng.uniform_range(0.0, s);
            let sigma = rng.uniform_range(s / 24.0, s / 8.0);
            let amp = rng.uniform_range(90.0, 200.0);
            (cx, cy, 2.0 * sigma * sigma, amp)
        })
        .collect();
    render(size, |x, y| {
        background
            + bumps
                .iter()
                .map(|&(cx, cy, two_s2, amp)| amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / two_s2).exp())
                .sum::<f64>()
    })
}

fn gratings(size: usize, rng: &mut SimRng) -> ImageGray {
    let theta = rng.uniform_range(0.0, PI);
    let freq = rng.uniform_range(1.0 / 96.0, 1.0 / 32.0);
    let (c, s) = (theta.cos(), theta.sin());
    render(size, |x, y| 128.0 + GRATING_AMPLITUDE * (2.0 * PI * freq * (x * c + y * s)).sin())
}

/// `n` square images of side `size`. Image `i` depends only on
/// `(family, size, seed, i)`.
pub fn generate_corpus(family: Family, n: usize, size: usize, seed: u64) -> Result<Vec<ImageGray>, HarnessError> {
    if size == 0 || size % CELL != 0 {
        return Err(HarnessError::Config(format!("image size {size} is not a positive multiple of {CELL}")));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = SimRng::new(derive_seed(seed, i as u64));
            match family {
                Family::Gradients => gradient(size, &mut rng),
                Family::Checker => checker(size, &mut rng),
                Family::Blobs => blobs(size, &mut rng),
                Family::Gratings => gratings(size, &mut rng),
            }
        })
        .collect())
}
