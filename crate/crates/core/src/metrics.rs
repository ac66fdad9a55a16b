//! Injection-outcome classification and the five evaluation metrics.
//!
//! Every injection maps to exactly one of five classes with fixed
//! precedence: Detected ≻ Crash ≻ Hang ≻ SDC ≻ Masked. A run hangs once
//! it exceeds the hang multiplier times the golden run length. Detection
//! latency is measured from the injection cycle; a secondary
//! manifestation-based latency (from the first visibly corrupted read)
//! is kept alongside.
//!
//! Area overheads are a constant table with linear extrapolation in the
//! swept knobs (comparison-buffer capacity, checker count). Power is an
//! activity model: per-core static energy per active cycle plus energy
//! per committed instruction, a non-replicated shared component for the
//! memory subsystem, and a static uplift while a core runs two resident
//! threads. Overhead compares average power over the program window,
//! normalized to the unprotected design.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{margin_of_error, FaultKind, FaultSpec};
use crate::machine::{RunResult, RunStatus};
use crate::schemes::{CoreKind, SchemeConfig, SchemeRunResult, SchemeStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    Detected,
    Masked,
    Sdc,
    Crash,
    Hang,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 5] = [
        OutcomeClass::Detected,
        OutcomeClass::Masked,
        OutcomeClass::Sdc,
        OutcomeClass::Crash,
        OutcomeClass::Hang,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutcomeClass::Detected => "detected",
            OutcomeClass::Masked => "masked",
            OutcomeClass::Sdc => "sdc",
            OutcomeClass::Crash => "crash",
            OutcomeClass::Hang => "hang",
        }
    }

    pub fn is_failure(self) -> bool {
        matches!(self, OutcomeClass::Crash | OutcomeClass::Hang)
    }
}

/// Classified result of one injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub fault_id: u64,
    pub kind: FaultKind,
    pub class: OutcomeClass,
    /// Cycles from injection to the first detection event.
    pub latency_cycles: Option<u64>,
    /// Cycles from the first visibly corrupted read to detection.
    pub manifest_latency_cycles: Option<u64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("golden run did not halt; cannot classify against it")]
    GoldenRunNotHalted,
    #[error("detection event on a fault-free run")]
    DetectionWithoutFault,
    #[error("cannot aggregate an empty outcome list")]
    EmptyOutcomes,
    #[error("no detected outcomes to compute latency statistics over")]
    NoDetections,
    #[error("baseline energy is zero")]
    ZeroBaselineEnergy,
}

/// Classifies one scheme run against the golden (fault-free, unprotected)
/// run of the same benchmark.
pub fn classify(
    golden: &RunResult,
    run: &SchemeRunResult,
    fault: Option<&FaultSpec>,
    hang_multiplier: f64,
) -> Result<Outcome, MetricsError> {
    if golden.status != RunStatus::Halted {
        return Err(MetricsError::GoldenRunNotHalted);
    }
    let (fault_id, kind, inject_cycle) = match fault {
        Some(f) => (f.id, f.kind, f.inject_cycle),
        None => {
            if !run.detections.is_empty() {
                return Err(MetricsError::DetectionWithoutFault);
            }
            (u64::MAX, FaultKind::TransientFlip, 0)
        }
    };

    let hang_threshold = hang_multiplier * golden.cycles as f64;
    let class = if !run.detections.is_empty() {
        OutcomeClass::Detected
    } else if matches!(run.status, SchemeStatus::Crashed(_)) {
        OutcomeClass::Crash
    } else if run.status == SchemeStatus::TimedOut || run.cycles as f64 > hang_threshold {
        OutcomeClass::Hang
    } else if run.output.as_deref() != golden.output.as_deref() {
        OutcomeClass::Sdc
    } else {
        OutcomeClass::Masked
    };

    let (latency_cycles, manifest_latency_cycles) = if class == OutcomeClass::Detected {
        let event = run.detections.iter().map(|e| e.cycle).min().expect("non-empty");
        let from_inject = event.saturating_sub(inject_cycle);
        let from_manifest = run
            .first_manifest_cycle
            .filter(|&m| m <= event)
            .map(|m| event - m);
        (Some(from_inject), from_manifest)
    } else {
        (None, None)
    };

    Ok(Outcome { fault_id, kind, class, latency_cycles, manifest_latency_cycles })
}

/// Per-class fractions over one set of outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassFractions {
    pub n: usize,
    /// Worst-case (p = 0.5) margin of error at 95% confidence.
    pub margin: f64,
    pub detected: f64,
    pub masked: f64,
    pub sdc: f64,
    pub crash: f64,
    pub hang: f64,
}

impl ClassFractions {
    fn from_counts(counts: &[usize; 5], n: usize) -> ClassFractions {
        let frac = |c: usize| c as f64 / n as f64;
        ClassFractions {
            n,
            margin: margin_of_error(n, 0.95, 0.5).expect("n >= 1"),
            detected: frac(counts[0]),
            masked: frac(counts[1]),
            sdc: frac(counts[2]),
            crash: frac(counts[3]),
            hang: frac(counts[4]),
        }
    }

    pub fn get(&self, class: OutcomeClass) -> f64 {
        match class {
            OutcomeClass::Detected => self.detected,
            OutcomeClass::Masked => self.masked,
            OutcomeClass::Sdc => self.sdc,
            OutcomeClass::Crash => self.crash,
            OutcomeClass::Hang => self.hang,
        }
    }

    pub fn failure(&self) -> f64 {
        self.crash + self.hang
    }

    pub fn sum(&self) -> f64 {
        self.detected + self.masked + self.sdc + self.crash + self.hang
    }
}

/// Detection-efficiency breakdown, split by fault kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBreakdown {
    pub overall: ClassFractions,
    pub transient: Option<ClassFractions>,
    pub permanent: Option<ClassFractions>,
}

/// Aggregates classified outcomes into per-class fractions with the
/// statistical margin attached.
pub fn aggregate(outcomes: &[Outcome]) -> Result<EfficiencyBreakdown, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyOutcomes);
    }
    let count = |pred: &dyn Fn(&Outcome) -> bool| -> ([usize; 5], usize) {
        let mut counts = [0usize; 5];
        let mut n = 0;
        for o in outcomes.iter().filter(|o| pred(o)) {
            n += 1;
            let slot = match o.class {
                OutcomeClass::Detected => 0,
                OutcomeClass::Masked => 1,
                OutcomeClass::Sdc => 2,
                OutcomeClass::Crash => 3,
                OutcomeClass::Hang => 4,
            };
            counts[slot] += 1;
        }
        (counts, n)
    };
    let (all, n_all) = count(&|_| true);
    let (trans, n_trans) = count(&|o| o.kind.is_transient());
    let (perm, n_perm) = count(&|o| !o.kind.is_transient());
    Ok(EfficiencyBreakdown {
        overall: ClassFractions::from_counts(&all, n_all),
        transient: (n_trans > 0).then(|| ClassFractions::from_counts(&trans, n_trans)),
        permanent: (n_perm > 0).then(|| ClassFractions::from_counts(&perm, n_perm)),
    })
}

/// Summary statistics over detection latencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub min: u64,
    pub mean: f64,
    pub median: f64,
    pub max: u64,
    /// Power-of-two bins: (lo, hi, count) covering [lo, hi).
    pub histogram: Vec<(u64, u64, u64)>,
}

/// Statistics over the injection-based latencies of detected outcomes.
pub fn latency_stats(outcomes: &[Outcome]) -> Result<LatencyStats, MetricsError> {
    let latencies: Vec<u64> = outcomes.iter().filter_map(|o| o.latency_cycles).collect();
    latency_stats_of(&latencies)
}

pub fn latency_stats_of(latencies: &[u64]) -> Result<LatencyStats, MetricsError> {
    if latencies.is_empty() {
        return Err(MetricsError::NoDetections);
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    let mut histogram: Vec<(u64, u64, u64)> = Vec::new();
    for &lat in &sorted {
        let (lo, hi) = if lat == 0 {
            (0, 1)
        } else {
            let lo = 1u64 << lat.ilog2();
            (lo, lo * 2)
        };
        match histogram.last_mut() {
            Some((l, _, c)) if *l == lo => *c += 1,
            _ => histogram.push((lo, hi, 1)),
        }
    }
    Ok(LatencyStats {
        n,
        min: sorted[0],
        mean: sorted.iter().map(|&l| l as f64).sum::<f64>() / n as f64,
        median,
        max: sorted[n - 1],
        histogram,
    })
}

/// Area overhead of a scheme configuration as a fraction of the
/// unprotected core: a full extra core for DMR; the SMT layout cost plus
/// the comparison buffer for R-SMT; checker cores with their share of
/// the load-store log for parallel detection, linear in checker count.
pub fn area_overhead(config: &SchemeConfig) -> f64 {
    match *config {
        SchemeConfig::Unprotected => 0.0,
        SchemeConfig::Dmr => 1.0,
        SchemeConfig::Rsmt { buffer_capacity, .. } => {
            0.06 + 0.0004 * (buffer_capacity as f64 / 10.0)
        }
        SchemeConfig::Pardet { n_checkers, .. } => 0.24 * (n_checkers as f64 / 3.0),
    }
}

/// Per-core-type activity-power coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorePower {
    pub static_per_cycle: f64,
    pub energy_per_commit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    pub main: CorePower,
    pub checker: CorePower,
    /// Memory subsystem and uncore: powered once per design, never
    /// replicated, charged over the program window.
    pub shared_static_per_cycle: f64,
    /// Extra static fraction while a core keeps two thread contexts hot.
    pub smt_static_uplift: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        PowerParams {
            main: CorePower { static_per_cycle: 1.0, energy_per_commit: 2.0 },
            checker: CorePower { static_per_cycle: 0.3, energy_per_commit: 0.6 },
            shared_static_per_cycle: 1.0,
            smt_static_uplift: 0.15,
        }
    }
}

/// Total energy of one run under the activity model.
pub fn energy(run: &SchemeRunResult, params: &PowerParams) -> f64 {
    let mut total = params.shared_static_per_cycle * run.program_cycles as f64;
    for core in &run.activity {
        let coeff = match core.kind {
            CoreKind::Main => params.main,
            CoreKind::Checker => params.checker,
        };
        let uplift = 1.0 + params.smt_static_uplift * (core.threads.saturating_sub(1)) as f64;
        total += coeff.static_per_cycle * uplift * core.active_cycles as f64
            + coeff.energy_per_commit * core.commits as f64;
    }
    total
}

/// Average power of a run over its program window.
pub fn average_power(run: &SchemeRunResult, params: &PowerParams) -> f64 {
    if run.program_cycles == 0 {
        return 0.0;
    }
    energy(run, params) / run.program_cycles as f64
}

/// Power overhead of a scheme run relative to the unprotected baseline
/// run of the same benchmark: `power(scheme) / power(unprotected) - 1`.
pub fn power_overhead(
    run: &SchemeRunResult,
    baseline: &SchemeRunResult,
    params: &PowerParams,
) -> Result<f64, MetricsError> {
    let base = average_power(baseline, params);
    if base == 0.0 {
        return Err(MetricsError::ZeroBaselineEnergy);
    }
    Ok(average_power(run, params) / base - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::{CoreActivity, DetectionCause, DetectionEvent};

    fn golden(cycles: u64) -> RunResult {
        RunResult {
            status: RunStatus::Halted,
            cycles,
            commits: cycles,
            output: Some(vec![1, 2, 3]),
            trace: None,
        }
    }

    fn completed_run(cycles: u64, output: Vec<u8>) -> SchemeRunResult {
        SchemeRunResult {
            status: SchemeStatus::Completed,
            cycles,
            program_cycles: cycles,
            main_commits: cycles,
            output: Some(output),
            detections: Vec::new(),
            activity: vec![CoreActivity {
                kind: CoreKind::Main,
                active_cycles: cycles,
                commits: cycles,
                threads: 1,
            }],
            first_manifest_cycle: None,
            slack: None,
            checker: None,
        }
    }

    fn fault(id: u64, inject: u64) -> FaultSpec {
        FaultSpec { id, kind: FaultKind::TransientFlip, reg: 1, bit: 0, inject_cycle: inject }
    }

    #[test]
    fn identical_run_is_masked() {
        let g = golden(100);
        let run = completed_run(100, vec![1, 2, 3]);
        let o = classify(&g, &run, Some(&fault(0, 10)), 3.0).unwrap();
        assert_eq!(o.class, OutcomeClass::Masked);
        assert_eq!(o.latency_cycles, None);
    }

    #[test]
    fn detection_latency_from_injection() {
        let g = golden(100);
        let mut run = completed_run(160, vec![1, 2, 3]);
        run.status = SchemeStatus::Detected;
        run.output = None;
        run.detections.push(DetectionEvent {
            cycle: 150,
            seq: 3,
            cause: DetectionCause::ResultMismatch,
        });
        run.first_manifest_cycle = Some(120);
        let o = classify(&g, &run, Some(&fault(0, 100)), 3.0).unwrap();
        assert_eq!(o.class, OutcomeClass::Detected);
        assert_eq!(o.latency_cycles, Some(50));
        assert_eq!(o.manifest_latency_cycles, Some(30));
    }

    #[test]
    fn long_run_is_a_hang() {
        let g = golden(100);
        // 3.5x the golden length, still "running" (completed too late).
        let run = completed_run(350, vec![1, 2, 3]);
        let o = classify(&g, &run, Some(&fault(0, 10)), 3.0).unwrap();
        assert_eq!(o.class, OutcomeClass::Hang);

        let mut timed_out = completed_run(250, vec![]);
        timed_out.status = SchemeStatus::TimedOut;
        timed_out.output = None;
        let o = classify(&g, &timed_out, Some(&fault(0, 10)), 3.0).unwrap();
        assert_eq!(o.class, OutcomeClass::Hang);
    }

    #[test]
    fn wrong_output_is_sdc_and_crash_precedes_it() {
        let g = golden(100);
        let run = completed_run(100, vec![9, 9, 9]);
        let o = classify(&g, &run, Some(&fault(0, 10)), 3.0).unwrap();
        assert_eq!(o.class, OutcomeClass::Sdc);

        let mut crashed = completed_run(50, vec![]);
        crashed.status =
            SchemeStatus::Crashed(crate::machine::CrashReason::DivideByZero);
        crashed.output = None;
        let o = classify(&g, &crashed, Some(&fault(0, 10)), 3.0).unwrap();
        assert_eq!(o.class, OutcomeClass::Crash);
    }

    #[test]
    fn detection_preempts_failures() {
        let g = golden(100);
        let mut run = completed_run(400, vec![]);
        run.status = SchemeStatus::Detected;
        run.output = None;
        run.detections.push(DetectionEvent {
            cycle: 40,
            seq: 0,
            cause: DetectionCause::ResultMismatch,
        });
        let o = classify(&g, &run, Some(&fault(0, 10)), 3.0).unwrap();
        assert_eq!(o.class, OutcomeClass::Detected);
    }

    #[test]
    fn classification_requires_halted_golden() {
        let mut g = golden(100);
        g.status = RunStatus::TimedOut;
        let run = completed_run(100, vec![1, 2, 3]);
        assert_eq!(
            classify(&g, &run, Some(&fault(0, 1)), 3.0),
            Err(MetricsError::GoldenRunNotHalted)
        );
    }

    #[test]
    fn aggregate_counts_classes() {
        let mk = |class, kind| Outcome {
            fault_id: 0,
            kind,
            class,
            latency_cycles: None,
            manifest_latency_cycles: None,
        };
        let outcomes = vec![
            mk(OutcomeClass::Detected, FaultKind::TransientFlip),
            mk(OutcomeClass::Detected, FaultKind::StuckAt0),
            mk(OutcomeClass::Masked, FaultKind::TransientFlip),
            mk(OutcomeClass::Masked, FaultKind::StuckAt1),
        ];
        let b = aggregate(&outcomes).unwrap();
        assert_eq!(b.overall.detected, 0.5);
        assert_eq!(b.overall.masked, 0.5);
        assert_eq!(b.overall.sdc, 0.0);
        assert!((b.overall.sum() - 1.0).abs() < 1e-9);
        assert_eq!(b.transient.unwrap().n, 2);
        assert_eq!(b.permanent.unwrap().n, 2);

        let all_masked = vec![mk(OutcomeClass::Masked, FaultKind::TransientFlip)];
        let b = aggregate(&all_masked).unwrap();
        assert_eq!(b.overall.masked, 1.0);
        assert!(b.permanent.is_none());

        assert_eq!(aggregate(&[]), Err(MetricsError::EmptyOutcomes));
    }

    #[test]
    fn latency_stats_arithmetic() {
        let s = latency_stats_of(&[10, 20, 30]).unwrap();
        assert_eq!(s.min, 10);
        assert_eq!(s.max, 30);
        assert_eq!(s.mean, 20.0);
        assert_eq!(s.median, 20.0);

        let single = latency_stats_of(&[7]).unwrap();
        assert_eq!(single.min, 7);
        assert_eq!(single.max, 7);
        assert_eq!(single.mean, 7.0);
        assert_eq!(single.median, 7.0);

        assert_eq!(latency_stats_of(&[]), Err(MetricsError::NoDetections));
    }

    #[test]
    fn area_table_matches_published_values() {
        assert_eq!(area_overhead(&SchemeConfig::Dmr), 1.0);
        let rsmt = area_overhead(&SchemeConfig::rsmt_default());
        assert!((rsmt - 0.0604).abs() < 1e-12, "rsmt area {rsmt}");
        let pardet = area_overhead(&SchemeConfig::pardet_default());
        assert!((pardet - 0.24).abs() < 1e-12, "pardet area {pardet}");
        assert_eq!(area_overhead(&SchemeConfig::Unprotected), 0.0);
    }

    #[test]
    fn power_identity_is_zero_overhead() {
        let run = completed_run(100, vec![]);
        let o = power_overhead(&run, &run, &PowerParams::default()).unwrap();
        assert_eq!(o, 0.0);
    }

    #[test]
    fn symmetric_dmr_power_overhead_in_expected_band() {
        let baseline = completed_run(100, vec![]);
        let mut dmr = completed_run(100, vec![]);
        dmr.activity.push(dmr.activity[0]);
        let o = power_overhead(&dmr, &baseline, &PowerParams::default()).unwrap();
        assert!(o > 0.4 && o < 1.0, "dmr overhead {o}");
    }

    #[test]
    fn rsmt_dynamic_power_tracks_redundant_commits() {
        // With all static components off, the overhead reduces to the
        // redundant commit energy spread over the doubled runtime.
        let params = PowerParams {
            main: CorePower { static_per_cycle: 0.0, energy_per_commit: 2.0 },
            checker: CorePower { static_per_cycle: 0.0, energy_per_commit: 0.6 },
            shared_static_per_cycle: 0.0,
            smt_static_uplift: 0.0,
        };
        let baseline = completed_run(100, vec![]);
        let mut rsmt = completed_run(200, vec![]);
        rsmt.main_commits = 100;
        rsmt.activity = vec![CoreActivity {
            kind: CoreKind::Main,
            active_cycles: 200,
            commits: 200,
            threads: 2,
        }];
        let o = power_overhead(&rsmt, &baseline, &params).unwrap();
        // energy doubles, runtime doubles: equal average power.
        assert!(o.abs() < 1e-12, "rsmt dynamic overhead {o}");
        assert_eq!(energy(&rsmt, &params), 2.0 * energy(&baseline, &params));
    }
}
