//! Maximal-length and small-set Kasami spreading codes.
//!
//! Polynomials are given as full bitmasks: bit `k` holds the coefficient of
//! `x^k`, so x⁸+x⁴+x³+x²+1 is `0x11D`. The LFSR realizes the recurrence
//! `s[t+n] = Σ c_k s[t+k]` whose characteristic polynomial is the given one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// x⁸+x⁴+x³+x²+1
pub const DEFAULT_POLY_DEG8: u32 = 0x11D;

pub const MIN_DEGREE: u32 = 2;
pub const MAX_DEGREE: u32 = 16;

/// A periodic sequence of ±1 chips.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BipolarSequence {
    chips: Vec<i8>,
}

impl BipolarSequence {
    /// Builds a sequence from raw chips, rejecting anything other than ±1.
    pub fn from_chips(chips: Vec<i8>) -> Result<Self> {
        if chips.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        if let Some(bad) = chips.iter().find(|&&c| c != 1 && c != -1) {
            return Err(Error::InvalidArgument(format!("chip value {bad} is not ±1")));
        }
        Ok(Self { chips })
    }

    fn from_bits(bits: impl IntoIterator<Item = u8>) -> Self {
        Self {
            chips: bits.into_iter().map(|b| if b == 0 { 1 } else { -1 }).collect(),
        }
    }

    pub fn chips(&self) -> &[i8] {
        &self.chips
    }

    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }
}

/// The `2^(n/2)` members of a small Kasami set, base m-sequence first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KasamiSet {
    pub degree: u32,
    pub polynomial: u32,
    pub sequences: Vec<BipolarSequence>,
}

impl KasamiSet {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Code for each beacon under `assignment` (0-based member indices).
    pub fn assign(&self, assignment: &[usize]) -> Result<Vec<BipolarSequence>> {
        assignment
            .iter()
            .map(|&m| {
                self.sequences.get(m).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!("member {m} out of range for a {}-member set", self.len()))
                })
            })
            .collect()
    }

    /// Members `0..count` in generation order.
    pub fn beacon_codes(&self, count: usize) -> Result<Vec<BipolarSequence>> {
        self.assign(&(0..count).collect::<Vec<_>>())
    }
}

fn check_degree(degree: u32) -> Result<()> {
    if !(MIN_DEGREE..=MAX_DEGREE).contains(&degree) {
        return Err(Error::DegreeOutOfRange(degree));
    }
    Ok(())
}

/// Runs the LFSR for up to `2^degree` steps, returning the output bits of
/// one period and the observed period.
fn lfsr_cycle(polynomial: u32, degree: u32, initial_state: u32) -> (Vec<u8>, usize) {
    let mask = (1u32 << degree) - 1;
    let taps = polynomial & mask;
    let start = initial_state & mask;
    let mut state = start;
    let mut bits = Vec::with_capacity(mask as usize);
    loop {
        bits.push((state & 1) as u8);
        let feedback = (state & taps).count_ones() & 1;
        state = (state >> 1) | (feedback << (degree - 1));
        if state == start || bits.len() > mask as usize {
            break;
        }
    }
    let period = bits.len();
    (bits, period)
}

/// One full period of the m-sequence, mapped `0 → +1`, `1 → −1`.
pub fn generate_m_sequence(polynomial: u32, degree: u32, initial_state: u32) -> Result<BipolarSequence> {
    check_degree(degree)?;
    let mask = (1u32 << degree) - 1;
    if initial_state & mask == 0 {
        return Err(Error::ZeroState);
    }
    let (bits, period) = lfsr_cycle(polynomial, degree, initial_state);
    let expected = mask as usize;
    if period != expected {
        return Err(Error::NotPrimitive {
            polynomial,
            degree,
            period,
            expected,
        });
    }
    Ok(BipolarSequence::from_bits(bits))
}

/// Small Kasami set: `u` followed by `u ⊕ T^k v` for `k = 0..2^(n/2)−1`,
/// where `v` is `u` decimated by `2^(n/2)+1`.
pub fn generate_kasami_small_set(polynomial: u32, degree: u32) -> Result<KasamiSet> {
    check_degree(degree)?;
    if !degree.is_multiple_of(2) {
        return Err(Error::OddDegree(degree));
    }
    let u = generate_m_sequence(polynomial, degree, 1)?;
    let n = u.len();
    let half = 1usize << (degree / 2);
    let decimation = half + 1;
    let ubits: Vec<u8> = u.chips.iter().map(|&c| u8::from(c < 0)).collect();
    let vbits: Vec<u8> = (0..n).map(|t| ubits[(decimation * t) % n]).collect();

    let mut sequences = Vec::with_capacity(half);
    sequences.push(u);
    // v has period 2^(n/2) − 1, so that many distinct shifts exist.
    for shift in 0..half - 1 {
        sequences.push(BipolarSequence::from_bits(
            (0..n).map(|t| ubits[t] ^ vbits[(t + shift) % n]),
        ));
    }
    Ok(KasamiSet {
        degree,
        polynomial,
        sequences,
    })
}

/// `Σ_t a[t]·b[(t+shift) mod N]`.
pub fn periodic_correlation(a: &BipolarSequence, b: &BipolarSequence, shift: i64) -> Result<i64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    let s = shift.rem_euclid(n as i64) as usize;
    Ok(a.chips
        .iter()
        .enumerate()
        .map(|(t, &x)| i64::from(x) * i64::from(b.chips[(t + s) % n]))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree8_balance() {
        let s = generate_m_sequence(DEFAULT_POLY_DEG8, 8, 1).unwrap();
        assert_eq!(s.len(), 255);
        assert_eq!(s.chips().iter().filter(|&&c| c == -1).count(), 128);
        assert_eq!(s.chips().iter().filter(|&&c| c == 1).count(), 127);
    }

    #[test]
    fn degree2_by_hand() {
        // x²+x+1 from state 0b01: outputs 1, 0, 1 (state 01 -> 10 -> 11 -> 01).
        let s = generate_m_sequence(0b111, 2, 1).unwrap();
        assert_eq!(s.chips(), &[-1, 1, -1]);
    }

    #[test]
    fn m_sequence_two_valued_autocorrelation() {
        let s = generate_m_sequence(DEFAULT_POLY_DEG8, 8, 0x5A).unwrap();
        assert_eq!(periodic_correlation(&s, &s, 0).unwrap(), 255);
        for shift in 1..255 {
            assert_eq!(periodic_correlation(&s, &s, shift).unwrap(), -1, "shift {shift}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(generate_m_sequence(DEFAULT_POLY_DEG8, 8, 0), Err(Error::ZeroState));
        assert_eq!(generate_m_sequence(0b11, 1, 1), Err(Error::DegreeOutOfRange(1)));
        assert_eq!(generate_m_sequence(0x3_0001, 17, 1), Err(Error::DegreeOutOfRange(17)));
        // x⁸+1 cycles with period 8.
        match generate_m_sequence(0x101, 8, 1) {
            Err(Error::NotPrimitive { period, expected, .. }) => {
                assert_eq!(period, 8);
                assert_eq!(expected, 255);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(generate_kasami_small_set(0b1011, 3), Err(Error::OddDegree(3)));
    }

    #[test]
    fn kasami_set_shape() {
        let set = generate_kasami_small_set(DEFAULT_POLY_DEG8, 8).unwrap();
        assert_eq!(set.len(), 16);
        assert!(set.sequences.iter().all(|s| s.len() == 255));
        for i in 0..set.len() {
            for j in i + 1..set.len() {
                assert_ne!(set.sequences[i], set.sequences[j]);
            }
        }
        let beacons = set.beacon_codes(5).unwrap();
        assert_eq!(beacons[..], set.sequences[..5]);
    }

    #[test]
    fn kasami_degree4_cross_correlation() {
        // n = 4: values in {-1, -5, 3}; x⁴+x+1.
        let set = generate_kasami_small_set(0b10011, 4).unwrap();
        assert_eq!(set.len(), 4);
        for a in &set.sequences {
            for b in &set.sequences {
                if a == b {
                    continue;
                }
                for shift in 0..15 {
                    let c = periodic_correlation(a, b, shift).unwrap();
                    assert!([-1, -5, 3].contains(&c), "{c}");
                }
            }
        }
    }

    #[test]
    fn length_mismatch() {
        let a = generate_m_sequence(0b111, 2, 1).unwrap();
        let b = generate_m_sequence(0b1011, 3, 1).unwrap();
        assert_eq!(periodic_correlation(&a, &b, 0), Err(Error::LengthMismatch(3, 7)));
    }

    #[test]
    fn chips_validated() {
        assert!(BipolarSequence::from_chips(vec![1, -1, 0]).is_err());
        assert!(BipolarSequence::from_chips(vec![1, -1]).is_ok());
    }
}
