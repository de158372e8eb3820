//! Code dimensions, messages, codewords and section-level metrics.
//!
//! A message is a list of `L` indices, one per section of `M` entries. The
//! codeword places `sqrt(n * P_l)` at the chosen position of section `l` and
//! zero elsewhere, so that `||x||^2 = n * P` for an allocation summing to `P`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::PowerAllocation;
use crate::error::{invalid, Error, Result};

/// A transmission rate, either in bits or nats per channel use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rate {
    Bits(f64),
    Nats(f64),
}

impl Rate {
    pub fn nats(self) -> f64 {
        match self {
            Rate::Bits(b) => b * std::f64::consts::LN_2,
            Rate::Nats(r) => r,
        }
    }

    pub fn bits(self) -> f64 {
        self.nats() / std::f64::consts::LN_2
    }
}

pub fn nats_to_bits(r: f64) -> f64 {
    r / std::f64::consts::LN_2
}

pub fn bits_to_nats(r: f64) -> f64 {
    r * std::f64::consts::LN_2
}

/// AWGN capacity in nats per channel use.
pub fn capacity(snr: f64) -> f64 {
    0.5 * snr.ln_1p()
}

/// Scalar constants of one SPARC instance. Rates are held in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparcParams {
    /// Number of sections `L`.
    pub sections: usize,
    /// Entries per section `M`.
    pub section_size: usize,
    /// Code length `n` (channel uses).
    pub code_length: usize,
    /// Rate requested at construction, nats.
    pub rate_requested: f64,
    /// Rate actually achieved after rounding `n`, nats.
    pub rate: f64,
    pub power: f64,
    pub sigma2: f64,
    pub snr: f64,
    /// Capacity in nats.
    pub capacity: f64,
    /// Set when the achieved rate is at or above capacity.
    pub above_capacity: bool,
}

impl SparcParams {
    /// Builds the parameters, deriving `n = round(L ln M / R)`.
    pub fn new(
        sections: usize,
        section_size: usize,
        rate: Rate,
        snr: f64,
        power: f64,
    ) -> Result<Self> {
        if sections < 1 {
            return invalid("L must be at least 1");
        }
        if section_size < 2 {
            return invalid("M must be at least 2");
        }
        let r = rate.nats();
        if !(r > 0.0 && r.is_finite()) {
            return invalid(format!("rate must be positive, got {r}"));
        }
        if !(snr > 0.0 && snr.is_finite()) {
            return invalid(format!("snr must be positive, got {snr}"));
        }
        if !(power > 0.0 && power.is_finite()) {
            return invalid(format!("power must be positive, got {power}"));
        }
        let info_nats = sections as f64 * (section_size as f64).ln();
        let n = (info_nats / r).round();
        if n < 1.0 {
            return invalid(format!(
                "code length rounds to zero (L ln M / R = {})",
                info_nats / r
            ));
        }
        let code_length = n as usize;
        let rate_actual = info_nats / n;
        let cap = capacity(snr);
        let above_capacity = rate_actual >= cap;
        if above_capacity {
            log::warn!(
                "rate {:.4} nats is not below capacity {:.4} nats; decoding is expected to fail",
                rate_actual,
                cap
            );
        }
        Ok(Self {
            sections,
            section_size,
            code_length,
            rate_requested: r,
            rate: rate_actual,
            power,
            sigma2: power / snr,
            snr,
            capacity: cap,
            above_capacity,
        })
    }

    /// Signal length `N = M L`.
    pub fn len(&self) -> usize {
        self.sections * self.section_size
    }

    /// Sampling ratio `n / N`.
    pub fn alpha(&self) -> f64 {
        self.code_length as f64 / self.len() as f64
    }

    /// Noise precision `1 / sigma^2`.
    pub fn gamma_w(&self) -> f64 {
        1.0 / self.sigma2
    }

    /// Relative gap to capacity `(C - R) / C`.
    pub fn delta_r(&self) -> f64 {
        (self.capacity - self.rate) / self.capacity
    }

    /// Section-size exponent `a` with `M = L^a`; undefined for `L = 1`.
    pub fn exponent(&self) -> Option<f64> {
        (self.sections > 1).then(|| (self.section_size as f64).ln() / (self.sections as f64).ln())
    }

    /// Gap to the Shannon limit in dB at this rate: `10 log10(snr / (e^{2R} - 1))`.
    pub fn shannon_gap_db(&self) -> f64 {
        10.0 * (self.snr / (2.0 * self.rate).exp_m1()).log10()
    }

    pub fn section_range(&self, section: usize) -> std::ops::Range<usize> {
        let m = self.section_size;
        section * m..(section + 1) * m
    }
}

/// One index per section, each in `[0, M)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub indices: Vec<usize>,
}

impl Message {
    pub fn new(indices: Vec<usize>, params: &SparcParams) -> Result<Self> {
        let msg = Self { indices };
        msg.check(params)?;
        Ok(msg)
    }

    pub fn random<R: Rng + ?Sized>(params: &SparcParams, rng: &mut R) -> Self {
        let indices = (0..params.sections)
            .map(|_| rng.random_range(0..params.section_size))
            .collect();
        Self { indices }
    }

    fn check(&self, params: &SparcParams) -> Result<()> {
        if self.indices.len() != params.sections {
            return Err(Error::DimensionMismatch {
                what: "message sections",
                expected: params.sections,
                actual: self.indices.len(),
            });
        }
        for (section, &index) in self.indices.iter().enumerate() {
            if index >= params.section_size {
                return Err(Error::IndexOutOfRange {
                    section,
                    index,
                    size: params.section_size,
                });
            }
        }
        Ok(())
    }
}

/// A length-`N` SPARC codeword (the message vector `x0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codeword {
    pub values: Vec<f64>,
}

impl Codeword {
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Per-section nonzero amplitudes `sqrt(n P_l)`.
pub fn amplitudes(pa: &PowerAllocation, params: &SparcParams) -> Vec<f64> {
    let n = params.code_length as f64;
    pa.values.iter().map(|&p| (n * p).sqrt()).collect()
}

fn check_allocation(pa: &PowerAllocation, params: &SparcParams) -> Result<()> {
    if pa.values.len() != params.sections {
        return Err(Error::DimensionMismatch {
            what: "power allocation length",
            expected: params.sections,
            actual: pa.values.len(),
        });
    }
    Ok(())
}

pub fn encode(msg: &Message, pa: &PowerAllocation, params: &SparcParams) -> Result<Codeword> {
    msg.check(params)?;
    check_allocation(pa, params)?;
    let sum: f64 = pa.values.iter().sum();
    if (sum - params.power).abs() > 1e-9 * params.power {
        return invalid(format!(
            "allocation sums to {sum}, expected P = {}",
            params.power
        ));
    }
    let mut values = vec![0.0; params.len()];
    for (l, (&idx, amp)) in msg.indices.iter().zip(amplitudes(pa, params)).enumerate() {
        values[l * params.section_size + idx] = amp;
    }
    Ok(Codeword { values })
}

/// Index of the largest entry of a slice; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-section argmax, reconstructed with `sqrt(n P_l)` at the winner.
pub fn hard_decision(
    x_hat: &[f64],
    pa: &PowerAllocation,
    params: &SparcParams,
) -> Result<(Message, Codeword)> {
    if x_hat.len() != params.len() {
        return Err(Error::DimensionMismatch {
            what: "estimate length",
            expected: params.len(),
            actual: x_hat.len(),
        });
    }
    check_allocation(pa, params)?;
    let m = params.section_size;
    let indices: Vec<usize> = x_hat.chunks_exact(m).map(argmax).collect();
    let mut values = vec![0.0; params.len()];
    for (l, (&idx, amp)) in indices.iter().zip(amplitudes(pa, params)).enumerate() {
        values[l * m + idx] = amp;
    }
    Ok((Message { indices }, Codeword { values }))
}

/// Fraction of sections whose decoded index differs from the truth.
pub fn section_error_rate(decoded: &Message, truth: &Message) -> Result<f64> {
    if decoded.indices.len() != truth.indices.len() {
        return Err(Error::DimensionMismatch {
            what: "message sections",
            expected: truth.indices.len(),
            actual: decoded.indices.len(),
        });
    }
    if truth.indices.is_empty() {
        return Ok(0.0);
    }
    Ok(section_errors(decoded, truth) as f64 / truth.indices.len() as f64)
}

pub(crate) fn section_errors(decoded: &Message, truth: &Message) -> usize {
    decoded
        .indices
        .iter()
        .zip(&truth.indices)
        .filter(|(a, b)| a != b)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation;
    use proptest::prelude::*;

    #[test]
    fn code_length_for_fig1_parameters() {
        let p = SparcParams::new(1024, 512, Rate::Bits(1.5), 11.1, 1.0).unwrap();
        assert_eq!(p.code_length, 6144);
        assert_eq!(p.len(), 1024 * 512);
        assert!((p.rate - bits_to_nats(1.5)).abs() < 1e-12);
        assert!((p.shannon_gap_db() - 10.0 * (11.1f64 / 7.0).log10()).abs() < 1e-9);
        assert!((p.shannon_gap_db() - 2.0).abs() < 0.01);
        assert!(!p.above_capacity);
    }

    #[test]
    fn minimal_code() {
        let p = SparcParams::new(1, 2, Rate::Nats(std::f64::consts::LN_2), 1.0, 1.0).unwrap();
        assert_eq!(p.code_length, 1);
        assert_eq!(p.len(), 2);
        assert!(p.exponent().is_none());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(SparcParams::new(0, 4, Rate::Bits(1.0), 1.0, 1.0).is_err());
        assert!(SparcParams::new(4, 1, Rate::Bits(1.0), 1.0, 1.0).is_err());
        assert!(SparcParams::new(4, 4, Rate::Bits(-1.0), 1.0, 1.0).is_err());
        assert!(SparcParams::new(4, 4, Rate::Bits(1.0), 0.0, 1.0).is_err());
        assert!(SparcParams::new(4, 4, Rate::Bits(1.0), 1.0, 0.0).is_err());
        // L ln M / R = 0.1 rounds to zero
        assert!(
            SparcParams::new(1, 2, Rate::Nats(10.0 * std::f64::consts::LN_2), 1.0, 1.0).is_err()
        );
    }

    #[test]
    fn above_capacity_is_flagged_not_rejected() {
        let p = SparcParams::new(64, 16, Rate::Bits(3.0), 1.0, 1.0).unwrap();
        assert!(p.above_capacity);
    }

    #[test]
    fn encode_small_cases() {
        let p = SparcParams::new(1, 2, Rate::Nats(std::f64::consts::LN_2), 1.0, 1.0).unwrap();
        let pa = allocation::flat(&p);
        let cw = encode(&Message::new(vec![0], &p).unwrap(), &pa, &p).unwrap();
        assert_eq!(cw.values, vec![1.0, 0.0]);

        // L=2, M=2, n=4: R = 2 ln 2 / 4
        let p = SparcParams::new(2, 2, Rate::Nats(0.5 * std::f64::consts::LN_2), 1.0, 1.0).unwrap();
        assert_eq!(p.code_length, 4);
        let pa = allocation::flat(&p);
        let cw = encode(&Message::new(vec![1, 0], &p).unwrap(), &pa, &p).unwrap();
        let r2 = 2f64.sqrt();
        assert_eq!(cw.values.len(), 4);
        for (a, b) in cw.values.iter().zip([0.0, r2, r2, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_errors() {
        let p = SparcParams::new(2, 4, Rate::Bits(1.0), 3.0, 1.0).unwrap();
        let pa = allocation::flat(&p);
        let bad = Message {
            indices: vec![0, 4],
        };
        assert!(matches!(
            encode(&bad, &pa, &p),
            Err(Error::IndexOutOfRange { .. })
        ));
        let short = Message { indices: vec![0] };
        assert!(encode(&short, &pa, &p).is_err());
        let q = SparcParams::new(3, 4, Rate::Bits(1.0), 3.0, 1.0).unwrap();
        let msg = Message {
            indices: vec![0, 1],
        };
        assert!(encode(&msg, &allocation::flat(&q), &p).is_err());
    }

    #[test]
    fn hard_decision_ties_and_uniform() {
        let p = SparcParams::new(2, 2, Rate::Nats(0.5 * std::f64::consts::LN_2), 1.0, 1.0).unwrap();
        let pa = allocation::flat(&p);
        let (m, _) = hard_decision(&[0.3, 0.3, 0.1, 0.2], &pa, &p).unwrap();
        assert_eq!(m.indices, vec![0, 1]);
        let (m, _) = hard_decision(&[0.5; 4], &pa, &p).unwrap();
        assert_eq!(m.indices, vec![0, 0]);
        assert!(hard_decision(&[0.0; 3], &pa, &p).is_err());
    }

    #[test]
    fn ser_values() {
        let a = Message {
            indices: vec![0, 1, 2, 3],
        };
        assert_eq!(section_error_rate(&a, &a).unwrap(), 0.0);
        let b = Message {
            indices: vec![1, 2, 3, 0],
        };
        assert_eq!(section_error_rate(&a, &b).unwrap(), 1.0);
        let c = Message {
            indices: vec![0, 1, 2, 0],
        };
        assert_eq!(section_error_rate(&a, &c).unwrap(), 0.25);
        assert!(section_error_rate(&a, &Message { indices: vec![0] }).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(
            l in 1usize..12,
            logm in 1u32..6,
            snr in 0.5f64..30.0,
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let m = 1usize << logm;
            let p = SparcParams::new(l, m, Rate::Bits(0.5), snr, 2.0).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let msg = Message::random(&p, &mut rng);
            for pa in [allocation::flat(&p), allocation::exponential(&p)] {
                let cw = encode(&msg, &pa, &p).unwrap();
                prop_assert!((cw.norm_sq() - p.code_length as f64 * p.power).abs()
                    < 1e-12 * p.code_length as f64 * p.power);
                let (back, cw2) = hard_decision(&cw.values, &pa, &p).unwrap();
                prop_assert_eq!(&back, &msg);
                prop_assert_eq!(cw2, cw);
            }
        }

        #[test]
        fn ser_symmetric_and_quantized(a in proptest::collection::vec(0usize..4, 1..20), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<usize> = a.iter().map(|_| rng.random_range(0..4)).collect();
            let ma = Message { indices: a.clone() };
            let mb = Message { indices: b };
            let s1 = section_error_rate(&ma, &mb).unwrap();
            let s2 = section_error_rate(&mb, &ma).unwrap();
            prop_assert_eq!(s1, s2);
            let k = s1 * a.len() as f64;
            prop_assert!((k - k.round()).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&s1));
        }
    }
}
