//! Sampling design and nonresponse generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::popgen::PopulationSpec;
use crate::survey::{Cat, SurveyDataset, Unit};

/// A reproducible random stream: the same `(seed, stream)` yields the same
/// draws on every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// A child stream keyed by `tag`; depends only on `(self, tag)`.
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }
}

/// Simple random sample without replacement of size `n`; every drawn unit
/// gets weight `N/n`.
pub fn srswor<R: Rng + ?Sized>(population: &SurveyDataset, n: usize, rng: &mut R) -> Result<SurveyDataset> {
    let big_n = population.len();
    if n == 0 || n > big_n {
        return Err(Error::SampleSize { n, population: big_n });
    }
    // partial Fisher-Yates
    let mut idx: Vec<usize> = (0..big_n).collect();
    for i in 0..n {
        let j = rng.gen_range(i..big_n);
        idx.swap(i, j);
    }
    let weight = big_n as f64 / n as f64;
    let units = idx[..n]
        .iter()
        .map(|&i| {
            let mut u = population.units()[i].clone();
            u.weight = weight;
            u
        })
        .collect();
    population.with_units(units)
}

/// Original values of masked units, kept apart from the masked dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthChannel {
    values: Vec<(Cat, Cat)>,
}

impl TruthChannel {
    pub fn values(&self) -> &[(Cat, Cat)] {
        &self.values
    }

    /// Restores the original values into a masked dataset.
    pub fn unmask(&self, masked: &SurveyDataset) -> Result<SurveyDataset> {
        let units = masked
            .units()
            .iter()
            .zip(&self.values)
            .map(|(u, &(x, y))| Unit { x, y, ..u.clone() })
            .collect();
        masked.with_units(units)
    }
}

#[derive(Debug, Clone)]
pub struct MaskedSample {
    pub data: SurveyDataset,
    pub truth: TruthChannel,
}

/// Draws a response pattern per unit from its class mechanism and masks the
/// items accordingly.
pub fn generate_response<R: Rng + ?Sized>(
    sample: &SurveyDataset,
    spec: &PopulationSpec,
    rng: &mut R,
) -> Result<MaskedSample> {
    let mut units = Vec::with_capacity(sample.len());
    let mut truth = Vec::with_capacity(sample.len());
    for u in sample.units() {
        let phi = spec
            .mechanism(u.class)
            .ok_or(Error::MissingMechanism { class: u.class })?;
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pattern = 3;
        for (p, &prob) in phi.iter().enumerate() {
            acc += prob;
            if draw < acc {
                pattern = p;
                break;
            }
        }
        // a tail draw past rounding falls on the last pattern with positive probability
        if draw >= acc {
            pattern = phi.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        }
        let (keep_x, keep_y) = match pattern {
            0 => (true, true),
            1 => (true, false),
            2 => (false, true),
            _ => (false, false),
        };
        truth.push((u.x, u.y));
        units.push(Unit {
            x: if keep_x { u.x } else { None },
            y: if keep_y { u.y } else { None },
            ..u.clone()
        });
    }
    Ok(MaskedSample {
        data: sample.with_units(units)?,
        truth: TruthChannel { values: truth },
    })
}
