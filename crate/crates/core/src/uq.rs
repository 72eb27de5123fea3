//! Bootstrap replication of the whole pipeline and the resulting SAG
//! probability map.

use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rayon::prelude::*;

use crate::detector::{classify, kernel_activation, BinaryMap, DetectorConfig};
use crate::error::{Error, Result};
use crate::frame;
use crate::grid::{aggregate_trajectories, fill_gaps, FillPolicy, GridSpec, TimeSpaceGrid};
use crate::scalar::Scalar;
use crate::simulator::{derive_seed, run_replication, sample_replication, Scenario, Trajectory};

pub const DEFAULT_REPLICATIONS: usize = 100;
pub const DEFAULT_BAND: (f64, f64) = (0.25, 0.75);

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap<S> {
    pub spec: GridSpec<S>,
    /// Fraction of replications flagging the cell; 0 where invalid.
    pub probs: Array2<S>,
    /// Valid iff valid in every replication.
    pub valid: Array2<bool>,
    pub k: usize,
}

/// Elementwise mean of the indicators. Counting is exact; the division by
/// `k` happens once per cell.
pub fn probability_map<S: Scalar>(binaries: &[BinaryMap<S>]) -> Result<ProbabilityMap<S>> {
    let first = binaries
        .first()
        .ok_or_else(|| Error::IncompatibleReplications("no replications".into()))?;
    let spec = first.spec;
    if let Some((i, _)) = binaries.iter().enumerate().find(|(_, b)| b.spec != spec) {
        return Err(Error::IncompatibleReplications(format!(
            "replication {i} has a different grid spec"
        )));
    }
    let mut counts = Array2::<u32>::zeros(spec.shape());
    let mut valid = Array2::from_elem(spec.shape(), true);
    for b in binaries {
        counts += &b.indicators.mapv(u32::from);
        ndarray::Zip::from(&mut valid)
            .and(&b.valid)
            .for_each(|v, &ok| *v &= ok);
    }
    let k = binaries.len();
    let kf = S::of_usize(k);
    let mut probs = Array2::from_elem(spec.shape(), S::zero());
    ndarray::Zip::from(&mut probs)
        .and(&counts)
        .and(&valid)
        .for_each(|p, &c, &ok| {
            if ok {
                *p = S::from_u32(c).unwrap() / kf;
            }
        });
    Ok(ProbabilityMap {
        spec,
        probs,
        valid,
        k,
    })
}

/// Share of valid cells whose probability lies strictly inside `(lo, hi)`.
pub fn uncertainty_fraction<S: Scalar>(pm: &ProbabilityMap<S>, lo: S, hi: S) -> Result<S> {
    if !(lo >= S::zero() && lo < hi && hi <= S::one()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= lo < hi <= 1, got ({lo}, {hi})"
        )));
    }
    let mut total = 0usize;
    let mut uncertain = 0usize;
    ndarray::Zip::from(&pm.probs)
        .and(&pm.valid)
        .for_each(|&p, &ok| {
            if ok {
                total += 1;
                if lo < p && p < hi {
                    uncertain += 1;
                }
            }
        });
    if total == 0 {
        return Err(Error::EmptyMap);
    }
    Ok(S::of_usize(uncertain) / S::of_usize(total))
}

impl<S: Scalar> ProbabilityMap<S> {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        frame::write_header(w, frame::PROB_TAG, &self.spec, &[("k", self.k.to_string())])?;
        frame::write_block(w, &self.probs, |v| format!("{v:.6}"))?;
        frame::write_bits(w, &self.valid)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let fr = frame::read_frame::<S, _>(r, frame::PROB_TAG)?;
        let k = fr
            .extra("k")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::BadHeader("missing `k`".into()))?;
        let probs = frame::parse_values(&fr.values, fr.spec.n_x, fr.spec.n_t)?;
        Ok(Self {
            spec: fr.spec,
            probs,
            valid: fr.bits,
            k,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ASCII")
    }
}

/// Trajectories to a gap-filled time-space diagram.
pub fn replication_grid<S: Scalar>(
    trajectories: &[Trajectory<S>],
    spec: &GridSpec<S>,
    free_flow: S,
) -> Result<TimeSpaceGrid<S>> {
    let grid = aggregate_trajectories(trajectories, spec)?;
    Ok(fill_gaps(&grid, FillPolicy { free_flow }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig<S> {
    pub detector: DetectorConfig<S>,
    pub grid: GridSpec<S>,
    pub replications: usize,
    pub master_seed: u64,
    /// Worker threads; 1 runs serially on the calling thread.
    pub workers: usize,
    pub band: (S, S),
}

#[derive(Debug, Clone)]
pub struct BootstrapReport<S> {
    pub k: usize,
    pub master_seed: u64,
    /// Seed of each replication's stream, by index.
    pub seeds: Vec<u64>,
    pub map: ProbabilityMap<S>,
    pub band: (S, S),
    pub uncertainty: S,
    /// Activation clamps summed over replications.
    pub clamped: usize,
    pub deferred_entries: usize,
    pub flagged_per_replication: Vec<usize>,
    pub workers: usize,
    pub elapsed: Duration,
}

impl<S: Scalar> BootstrapReport<S> {
    /// Plain-text summary block with stable key order.
    pub fn summary(&self) -> String {
        let mut warnings = Vec::new();
        if self.clamped > 0 {
            warnings.push(format!(
                "{} activations clamped (speeds above v_ref)",
                self.clamped
            ));
        }
        if self.deferred_entries > 0 {
            warnings.push(format!("{} deferred entries", self.deferred_entries));
        }
        let valid = self.map.valid.iter().filter(|&&v| v).count();
        format!(
            "k={}\nmaster_seed={}\nU={}\nu_band={},{}\nvalid_cells={}\nwarnings={}\n",
            self.k,
            self.master_seed,
            self.uncertainty,
            self.band.0,
            self.band.1,
            valid,
            if warnings.is_empty() {
                "none".to_string()
            } else {
                warnings.join("; ")
            },
        )
    }
}

struct ReplicationOutcome<S> {
    binary: BinaryMap<S>,
    clamped: usize,
    deferred: usize,
}

fn one_replication<S: Scalar>(
    scenario: &Scenario<S>,
    cfg: &BootstrapConfig<S>,
    index: usize,
) -> Result<ReplicationOutcome<S>> {
    let wrap = |e| Error::Replication {
        index,
        source: Box::new(e),
    };
    let sampled = sample_replication(scenario, cfg.master_seed, index as u64);
    let run =
        run_replication(&sampled, derive_seed(cfg.master_seed, index as u64)).map_err(wrap)?;
    let grid =
        replication_grid(&run.trajectories, &cfg.grid, scenario.base_params.v0).map_err(wrap)?;
    let activation = kernel_activation(&grid, &cfg.detector).map_err(wrap)?;
    Ok(ReplicationOutcome {
        binary: classify(&activation, cfg.detector.epsilon),
        clamped: activation.clamped,
        deferred: run.deferred_entries,
    })
}

/// Runs `k` replications (sample, simulate, grid, detect) and aggregates the
/// binary maps. Results are reduced by replication index, so the report does
/// not depend on the worker count.
pub fn run_bootstrap<S: Scalar>(
    scenario: &Scenario<S>,
    cfg: &BootstrapConfig<S>,
) -> Result<BootstrapReport<S>> {
    if cfg.replications == 0 {
        return Err(Error::InvalidParameter(
            "need at least one replication".into(),
        ));
    }
    scenario.validate()?;
    cfg.detector.validate()?;
    let started = Instant::now();
    let k = cfg.replications;

    let outcomes: Vec<Result<ReplicationOutcome<S>>> = if cfg.workers <= 1 {
        (0..k).map(|i| one_replication(scenario, cfg, i)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..k)
                .into_par_iter()
                .map(|i| one_replication(scenario, cfg, i))
                .collect()
        })
    };
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let binaries: Vec<BinaryMap<S>> = outcomes.iter().map(|o| o.binary.clone()).collect();
    let map = probability_map(&binaries)?;
    let uncertainty = uncertainty_fraction(&map, cfg.band.0, cfg.band.1)?;
    Ok(BootstrapReport {
        k,
        master_seed: cfg.master_seed,
        seeds: (0..k as u64)
            .map(|i| derive_seed(cfg.master_seed, i))
            .collect(),
        band: cfg.band,
        uncertainty,
        clamped: outcomes.iter().map(|o| o.clamped).sum(),
        deferred_entries: outcomes.iter().map(|o| o.deferred).sum(),
        flagged_per_replication: binaries.iter().map(|b| b.flagged()).collect(),
        workers: cfg.workers.max(1),
        elapsed: started.elapsed(),
        map,
    })
}
