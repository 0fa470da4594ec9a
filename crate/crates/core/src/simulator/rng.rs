//! Counter-style random streams keyed by `(seed, donor, replication)`.
//!
//! The ChaCha stream id encodes the donor and replication. Donor-level draws
//! (quality, candidate sampling) read from a high word offset;
//! each patient owns a fixed 16-word block indexed by patient id, so a
//! patient's draws do not depend on their position in the run, the policy,
//! or the order in which runs are executed.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{DonorId, PatientId, Quality, Signal};

const QUALITY_WORD_OFFSET: u128 = 1 << 60;
const SAMPLING_WORD_OFFSET: u128 = 1 << 61;
const WORDS_PER_PATIENT: u128 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub donor: DonorId,
    pub replication: u32,
}

impl RngStream {
    pub fn new(seed: u64, donor: DonorId, replication: u32) -> RngStream {
        RngStream {
            seed,
            donor,
            replication,
        }
    }

    fn base(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((self.donor.0 as u64) << 32) | self.replication as u64);
        rng
    }

    /// Generator for the latent quality draw.
    pub fn quality_rng(&self) -> ChaCha8Rng {
        let mut rng = self.base();
        rng.set_word_pos(QUALITY_WORD_OFFSET);
        rng
    }

    /// Generator for candidate-set sampling.
    pub fn sampling_rng(&self) -> ChaCha8Rng {
        let mut rng = self.base();
        rng.set_word_pos(SAMPLING_WORD_OFFSET);
        rng
    }

    /// Generator for one patient's draws within this run.
    pub fn patient_rng(&self, patient: PatientId) -> ChaCha8Rng {
        let mut rng = self.base();
        rng.set_word_pos(patient.0 as u128 * WORDS_PER_PATIENT);
        rng
    }

    pub fn patient_draw(&self, patient: PatientId) -> PatientDraw {
        PatientDraw::sample(&mut self.patient_rng(patient))
    }
}

/// Uniforms behind one patient's provisional flag and signal, plus the
/// logistic shock difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatientDraw {
    pub provisional_u: f64,
    pub signal_u: f64,
    pub shock: f64,
}

impl PatientDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> PatientDraw {
        let provisional_u = rng.random::<f64>();
        let signal_u = rng.random::<f64>();
        let u: f64 = Open01.sample(rng);
        PatientDraw {
            provisional_u,
            signal_u,
            shock: (u / (1.0 - u)).ln(),
        }
    }

    pub fn provisional(&self, mu: f64) -> bool {
        self.provisional_u < mu
    }

    /// Signal equals the true quality with probability `alpha`.
    pub fn signal(&self, quality: Quality, alpha: f64) -> Signal {
        let correct = self.signal_u < alpha;
        match (quality, correct) {
            (Quality::High, true) | (Quality::Low, false) => Signal::High,
            _ => Signal::Low,
        }
    }
}

pub fn draw_quality<R: Rng + ?Sized>(rng: &mut R, p: f64) -> Quality {
    if rng.random::<f64>() < p {
        Quality::High
    } else {
        Quality::Low
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = RngStream::new(7, DonorId(3), 1);
        assert_eq!(a.patient_draw(PatientId(10)), a.patient_draw(PatientId(10)));
        assert_ne!(a.patient_draw(PatientId(10)), a.patient_draw(PatientId(11)));
        let b = RngStream::new(7, DonorId(3), 2);
        assert_ne!(a.patient_draw(PatientId(10)), b.patient_draw(PatientId(10)));
        let c = RngStream::new(8, DonorId(3), 1);
        assert_ne!(a.patient_draw(PatientId(10)), c.patient_draw(PatientId(10)));
        let mut d1 = a.quality_rng();
        let mut d2 = a.quality_rng();
        assert_eq!(d1.random::<u64>(), d2.random::<u64>());
        assert_ne!(
            a.quality_rng().random::<u64>(),
            a.sampling_rng().random::<u64>()
        );
    }

    #[test]
    fn draws_have_expected_frequencies() {
        let s = RngStream::new(1, DonorId(0), 0);
        let n = 20_000;
        let mut prov = 0;
        let mut correct = 0;
        let mut shock_mean = 0.0;
        for k in 0..n {
            let d = s.patient_draw(PatientId(k));
            prov += d.provisional(0.958) as usize;
            correct += (d.signal(Quality::Low, 0.85) == Signal::Low) as usize;
            shock_mean += d.shock;
        }
        let nf = n as f64;
        assert!((prov as f64 / nf - 0.958).abs() < 0.006);
        assert!((correct as f64 / nf - 0.85).abs() < 0.01);
        // logistic(0,1) has sd pi/sqrt(3)
        assert!((shock_mean / nf).abs() < 4.0 * 1.814 / nf.sqrt());
    }
}
