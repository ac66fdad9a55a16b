//! Register-file fault model and statistical campaign planning.
//!
//! Two fault families are modeled, both single-bit and both confined to
//! the register file of the main (fault-injectable) core:
//!
//! * `TransientFlip` — at the first cycle at or after the injection
//!   cycle the stored value of the target register has one bit XOR
//!   flipped, once. The flip persists until the register is overwritten.
//! * `StuckAt0` / `StuckAt1` — from the injection cycle onward every
//!   read of the target register returns the stored value with the
//!   target bit forced to the stuck polarity. The stored value itself is
//!   never rewritten, so the forcing survives intervening writes.
//!
//! Campaign plans draw register and bit indices from uniform
//! distributions and injection cycles from a (configurable) normal
//! distribution over the golden run length, so that the same fault list
//! can be replayed under every scheme at the same absolute cycle.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as GaussDist};
use thiserror::Error;

use crate::isa::Word;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    TransientFlip,
    StuckAt0,
    StuckAt1,
}

impl FaultKind {
    /// Transient vs. permanent split used when reporting efficiency.
    pub fn is_transient(self) -> bool {
        matches!(self, FaultKind::TransientFlip)
    }
}

/// One injected fault. `inject_cycle` is an absolute cycle count from
/// program start, shared verbatim across every scheme the fault is
/// replayed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub id: u64,
    pub kind: FaultKind,
    pub reg: u8,
    pub bit: u8,
    pub inject_cycle: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum FaultError {
    #[error("fault targets register r{reg} but the machine has {reg_count} registers")]
    RegisterOutOfRange { reg: u8, reg_count: usize },
    #[error("fault targets bit {bit}, register width is 64")]
    BitOutOfRange { bit: u8 },
    #[error("faults must be attached before the machine starts (machine already ran)")]
    MachineAlreadyStarted,
    #[error("campaign must plan at least one fault")]
    EmptyCampaign,
    #[error("golden run length must be at least one cycle")]
    EmptyGoldenRun,
    #[error("{what} must lie in (0, 1), got {value}")]
    FractionOutOfRange { what: &'static str, value: f64 },
}

/// Live per-machine fault bookkeeping. Confined to the machine that
/// carries it; never shared across runs.
#[derive(Debug, Clone)]
pub struct FaultState {
    pub spec: FaultSpec,
    /// A transient fires exactly once.
    pub fired: bool,
    /// True while a fired transient flip is still present in the stored
    /// value (cleared by the first overwrite of the register).
    pub flip_live: bool,
    /// Stored value observed just before the first corruption.
    pub original: Option<Word>,
    /// First cycle the fault visibly changed a read value, if any.
    pub first_manifest_cycle: Option<u64>,
}

impl FaultState {
    pub fn new(spec: FaultSpec) -> Self {
        FaultState { spec, fired: false, flip_live: false, original: None, first_manifest_cycle: None }
    }

    /// Whether the fault perturbs register reads at `cycle`: stuck-at
    /// faults are live from the injection cycle onward, a transient only
    /// until it has fired (afterwards the perturbation lives in the
    /// stored value, not in the fault).
    pub fn active_at(&self, cycle: u64) -> bool {
        match self.spec.kind {
            FaultKind::StuckAt0 | FaultKind::StuckAt1 => cycle >= self.spec.inject_cycle,
            FaultKind::TransientFlip => !self.fired && cycle >= self.spec.inject_cycle,
        }
    }

    /// Value a read of the target register returns at `cycle`.
    pub fn apply_read(&self, stored: Word, cycle: u64) -> Word {
        if cycle < self.spec.inject_cycle {
            return stored;
        }
        let mask = 1u64 << self.spec.bit;
        match self.spec.kind {
            FaultKind::StuckAt0 => stored & !mask,
            FaultKind::StuckAt1 => stored | mask,
            // The transient mutates storage, not reads.
            FaultKind::TransientFlip => stored,
        }
    }
}

/// Parameters of the injection-time distribution. Times are sampled from
/// `Normal(mean_frac * golden, sd_frac * golden)` and clamped to
/// `[0, golden)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectTimeParams {
    pub mean_frac: f64,
    pub sd_frac: f64,
}

impl Default for InjectTimeParams {
    fn default() -> Self {
        InjectTimeParams { mean_frac: 0.5, sd_frac: 1.0 / 6.0 }
    }
}

/// A planned campaign: the fault list plus everything needed to replay
/// it. Immutable once built; plans serialize to JSON so campaigns are
/// replayable and diffable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignPlan {
    pub seed: u64,
    pub benchmark: String,
    pub golden_cycles: u64,
    pub kind_mix: f64,
    pub scheme_matrix: Vec<serde_json::Value>,
    pub faults: Vec<FaultSpec>,
}

/// Plans `n` faults for one benchmark. `kind_mix` is the fraction of
/// transient faults; the remainder are stuck-at faults with uniformly
/// random polarity. Pure function of its arguments.
pub fn plan_campaign(
    n: usize,
    seed: u64,
    golden_cycles: u64,
    kind_mix: f64,
    reg_count: usize,
    time_params: InjectTimeParams,
) -> Result<Vec<FaultSpec>, FaultError> {
    if n == 0 {
        return Err(FaultError::EmptyCampaign);
    }
    if golden_cycles == 0 {
        return Err(FaultError::EmptyGoldenRun);
    }
    if !(0.0..=1.0).contains(&kind_mix) {
        return Err(FaultError::FractionOutOfRange { what: "kind_mix", value: kind_mix });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = time_params.mean_frac * golden_cycles as f64;
    let sd = (time_params.sd_frac * golden_cycles as f64).max(f64::MIN_POSITIVE);
    let normal = Normal::new(mean, sd).expect("valid normal parameters");

    let n_transient = (n as f64 * kind_mix).round() as usize;
    let mut faults = Vec::with_capacity(n);
    for id in 0..n {
        let kind = if id < n_transient {
            FaultKind::TransientFlip
        } else if rng.random::<bool>() {
            FaultKind::StuckAt0
        } else {
            FaultKind::StuckAt1
        };
        let reg = rng.random_range(0..reg_count) as u8;
        let bit = rng.random_range(0..64u32) as u8;
        let sample = normal.sample(&mut rng);
        let inject_cycle = (sample.round().max(0.0) as u64).min(golden_cycles - 1);
        faults.push(FaultSpec { id: id as u64, kind, reg, bit, inject_cycle });
    }
    Ok(faults)
}

/// Margin of error of an estimated fraction from `n` samples at the
/// given two-sided confidence level: `z * sqrt(p(1-p)/n)`. The worst
/// case is `p = 0.5`.
pub fn margin_of_error(n: usize, confidence: f64, p: f64) -> Result<f64, FaultError> {
    if n == 0 {
        return Err(FaultError::EmptyCampaign);
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(FaultError::FractionOutOfRange { what: "confidence", value: confidence });
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(FaultError::FractionOutOfRange { what: "p", value: p });
    }
    let std_normal = GaussDist::new(0.0, 1.0).expect("unit normal");
    let z = std_normal.inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    Ok(z * (p * (1.0 - p) / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_is_deterministic_in_seed() {
        let a = plan_campaign(1000, 42, 5000, 0.5, 32, InjectTimeParams::default()).unwrap();
        let b = plan_campaign(1000, 42, 5000, 0.5, 32, InjectTimeParams::default()).unwrap();
        assert_eq!(a, b);
        let c = plan_campaign(1000, 43, 5000, 0.5, 32, InjectTimeParams::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn kind_mix_counts() {
        let faults = plan_campaign(4, 7, 100, 0.5, 32, InjectTimeParams::default()).unwrap();
        let transient = faults.iter().filter(|f| f.kind.is_transient()).count();
        assert_eq!(transient, 2);
        assert_eq!(faults.len() - transient, 2);
    }

    #[test]
    fn zero_faults_rejected() {
        assert_eq!(
            plan_campaign(0, 1, 100, 0.5, 32, InjectTimeParams::default()),
            Err(FaultError::EmptyCampaign)
        );
    }

    #[test]
    fn inject_cycles_clamped_to_golden_run() {
        let faults = plan_campaign(5000, 9, 50, 0.5, 32, InjectTimeParams::default()).unwrap();
        assert!(faults.iter().all(|f| f.inject_cycle < 50));
    }

    #[test]
    fn register_histogram_is_uniform() {
        // Chi-square goodness of fit over the register index, 10^5
        // samples, 32 bins. Critical value for df=31 at significance
        // 0.01 is 52.191.
        let n = 100_000;
        let faults = plan_campaign(n, 2024, 10_000, 0.5, 32, InjectTimeParams::default()).unwrap();
        let mut counts = [0u64; 32];
        for f in &faults {
            counts[f.reg as usize] += 1;
        }
        let expected = n as f64 / 32.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 52.191, "register histogram not uniform: chi2 = {chi2}");
    }

    #[test]
    fn bit_histogram_is_uniform() {
        // df=63, critical value at significance 0.01 is 92.010.
        let n = 100_000;
        let faults = plan_campaign(n, 77, 10_000, 0.5, 32, InjectTimeParams::default()).unwrap();
        let mut counts = [0u64; 64];
        for f in &faults {
            counts[f.bit as usize] += 1;
        }
        let expected = n as f64 / 64.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 92.010, "bit histogram not uniform: chi2 = {chi2}");
    }

    #[test]
    fn margin_matches_normal_quantile() {
        // 1000 samples at 95% / p=0.5: 1.95996 * sqrt(0.25/1000).
        let m = margin_of_error(1000, 0.95, 0.5).unwrap();
        assert!((m - 0.030990).abs() < 1e-5, "m = {m}");
        assert!(m <= 0.04);

        let m1 = margin_of_error(1, 0.95, 0.5).unwrap();
        assert!((m1 - 0.979982).abs() < 1e-5, "m1 = {m1}");
    }

    #[test]
    fn margin_maximized_at_half() {
        let at_half = margin_of_error(500, 0.95, 0.5).unwrap();
        for p in [0.01, 0.1, 0.25, 0.4, 0.6, 0.9, 0.99] {
            assert!(margin_of_error(500, 0.95, p).unwrap() <= at_half);
        }
    }

    #[test]
    fn margin_domain_errors() {
        assert!(margin_of_error(0, 0.95, 0.5).is_err());
        assert!(margin_of_error(10, 1.0, 0.5).is_err());
        assert!(margin_of_error(10, 0.95, 0.0).is_err());
    }

    #[test]
    fn stuck_at_active_from_inject_cycle() {
        let spec = FaultSpec { id: 0, kind: FaultKind::StuckAt1, reg: 3, bit: 0, inject_cycle: 10 };
        let st = FaultState::new(spec);
        assert!(!st.active_at(9));
        assert!(st.active_at(10));
        assert!(st.active_at(11));
    }

    #[test]
    fn transient_inactive_after_firing() {
        let spec =
            FaultSpec { id: 0, kind: FaultKind::TransientFlip, reg: 2, bit: 3, inject_cycle: 5 };
        let mut st = FaultState::new(spec);
        assert!(!st.active_at(4));
        assert!(st.active_at(5));
        st.fired = true;
        assert!(!st.active_at(5));
        assert!(!st.active_at(100));
    }

    #[test]
    fn stuck_read_forces_bit() {
        let spec = FaultSpec { id: 0, kind: FaultKind::StuckAt1, reg: 3, bit: 0, inject_cycle: 0 };
        let st = FaultState::new(spec);
        assert_eq!(st.apply_read(6, 0), 7);
        assert_eq!(st.apply_read(4, 5), 5);
        let spec0 = FaultSpec { id: 0, kind: FaultKind::StuckAt0, reg: 3, bit: 0, inject_cycle: 0 };
        let st0 = FaultState::new(spec0);
        assert_eq!(st0.apply_read(7, 0), 6);
    }
}
