//! Receiver position from slot-corrected arrival-time differences.
//!
//! The receiver clock is not tied to the beacons, so only differences of
//! arrival times carry geometry. Each difference is corrected for the slot
//! spacing of the two channels and scaled to metres, then a damped
//! Gauss-Newton fit finds the point whose range differences match.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::{BeaconArray, Point3};
use crate::error::{Error, Result};
use crate::mca::ToaResult;
use crate::waveform::TdmaSchedule;

pub const DEFAULT_SOLVER_ITERATIONS: usize = 50;
pub const DEFAULT_SOLVER_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_GRID_STEP: f64 = 0.25;
/// Start point depth below the array centroid, metres.
pub const INITIAL_DEPTH: f64 = 1.0;

/// Range differences against one reference channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdoaSet {
    /// 1-based; the lowest-index channel with a valid arrival.
    pub reference: usize,
    /// `d_i − d_ref` in metres, index = channel − 1. Zero for the reference
    /// and for invalid channels.
    pub differences: Vec<f64>,
    pub valid: Vec<bool>,
}

impl TdoaSet {
    /// Exact differences for a receiver at `rx`.
    pub fn from_geometry(array: &BeaconArray, rx: &Point3) -> Self {
        let d: Vec<f64> = array.positions.iter().map(|b| (rx - b).norm()).collect();
        Self {
            reference: 1,
            differences: d.iter().map(|di| di - d[0]).collect(),
            valid: vec![true; d.len()],
        }
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Non-reference channels with a valid difference, 1-based.
    fn others(&self) -> Vec<usize> {
        (1..=self.valid.len())
            .filter(|&c| c != self.reference && self.valid[c - 1])
            .collect()
    }
}

/// Converts arrival sample indices into range differences. The capture
/// offset is common to all channels and cancels.
pub fn toas_to_tdoas(toa: &ToaResult, schedule: &TdmaSchedule, fs_rx: f64, speed_of_sound: f64) -> Result<TdoaSet> {
    if toa.toas.len() != schedule.num_channels() {
        return Err(Error::ChannelCountMismatch {
            patterns: toa.toas.len(),
            channels: schedule.num_channels(),
        });
    }
    let valid: Vec<bool> = toa.toas.iter().map(Option::is_some).collect();
    let count = valid.iter().filter(|&&v| v).count();
    if count < 2 {
        return Err(Error::TooFewToas {
            required: 2,
            actual: count,
        });
    }
    let reference = valid.iter().position(|&v| v).expect("counted") + 1;
    let t_ref = toa.toas[reference - 1].expect("valid") as f64;
    let k_ref = schedule.slot_of(reference).expect("validated schedule") as f64;
    let differences = toa
        .toas
        .iter()
        .enumerate()
        .map(|(i, t)| match t {
            Some(t) => {
                let k = schedule.slot_of(i + 1).expect("validated schedule") as f64;
                speed_of_sound * ((*t as f64 - t_ref) / fs_rx - (k - k_ref) * schedule.slot_seconds)
            }
            None => 0.0,
        })
        .collect();
    Ok(TdoaSet {
        reference,
        differences,
        valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// `INITIAL_DEPTH` below the array centroid, grid search if that fails.
    BelowCentroid,
    /// Best point of the search grid.
    Grid,
}

/// Axis-aligned search region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SearchBox {
    /// The 3×3 m area centred under the array, 0.5 to 1.5 m above the floor.
    pub fn uex_coverage() -> Self {
        Self {
            min: [-1.5, -1.5, 0.5],
            max: [1.5, 1.5, 1.5],
        }
    }

    /// From the array plane down `depth` metres, `margin` past the array
    /// footprint on each side.
    pub fn below_array(array: &BeaconArray, margin: f64, depth: f64) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in &array.positions {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Self {
            min: [min[0] - margin, min[1] - margin, min[2] - depth],
            max: [max[0] + margin, max[1] + margin, min[2] - 0.05],
        }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Converged once a step is shorter than this, metres.
    pub tolerance: f64,
    pub initial_guess: InitialGuess,
    /// Known receiver height; solves for x and y only.
    pub fixed_z: Option<f64>,
    pub grid_step: f64,
    /// Grid region; defaults to 2 m around and 3 m below the array.
    pub search_box: Option<SearchBox>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_SOLVER_ITERATIONS,
            tolerance: DEFAULT_SOLVER_TOLERANCE,
            initial_guess: InitialGuess::BelowCentroid,
            fixed_z: None,
            grid_step: DEFAULT_GRID_STEP,
            search_box: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("solver tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("solver needs at least one iteration".into()));
        }
        if !(self.grid_step > 0.0) {
            return Err(Error::InvalidArgument("grid step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    pub position: Point3,
    /// RMS of the range-difference residuals, metres.
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Problem<'a> {
    beacons: &'a [Point3],
    reference: usize,
    others: Vec<usize>,
    measured: Vec<f64>,
    fixed_z: Option<f64>,
}

impl Problem<'_> {
    fn unknowns(&self) -> usize {
        if self.fixed_z.is_some() {
            2
        } else {
            3
        }
    }

    fn point(&self, v: &DVector<f64>) -> Point3 {
        match self.fixed_z {
            Some(z) => Point3::new(v[0], v[1], z),
            None => Point3::new(v[0], v[1], v[2]),
        }
    }

    fn residuals(&self, x: &Point3) -> DVector<f64> {
        let r_ref = (x - self.beacons[self.reference - 1]).norm();
        DVector::from_iterator(
            self.others.len(),
            self.others
                .iter()
                .zip(&self.measured)
                .map(|(&c, m)| m - ((x - self.beacons[c - 1]).norm() - r_ref)),
        )
    }

    fn cost(&self, x: &Point3) -> f64 {
        self.residuals(x).norm_squared()
    }

    /// Jacobian of the modelled differences.
    fn jacobian(&self, x: &Point3) -> DMatrix<f64> {
        let unit = |b: &Point3| {
            let d = x - b;
            let n = d.norm();
            if n > 0.0 {
                d / n
            } else {
                Point3::zeros()
            }
        };
        let u_ref = unit(&self.beacons[self.reference - 1]);
        let n = self.unknowns();
        DMatrix::from_fn(self.others.len(), n, |row, col| {
            let u = unit(&self.beacons[self.others[row] - 1]);
            u[col] - u_ref[col]
        })
    }

    /// Damped Gauss-Newton from `start`; step halving on cost increase.
    fn gauss_newton(&self, start: Point3, cfg: &SolverConfig) -> Result<PositionFix> {
        let n = self.unknowns();
        let mut v = DVector::from_iterator(n, start.iter().copied().take(n));
        let mut x = self.point(&v);
        let mut cost = self.cost(&x);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < cfg.max_iterations {
            iterations += 1;
            let jac = self.jacobian(&x);
            let svd = jac.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if !(smax > 0.0) || smin < 1e-10 * smax {
                return Err(Error::DegenerateGeometry);
            }
            let r = self.residuals(&x);
            let step = svd.solve(&r, 0.0).map_err(|_| Error::DegenerateGeometry)?;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial_v = &v + &step * scale;
                let trial_x = self.point(&trial_v);
                let trial_cost = self.cost(&trial_x);
                if trial_cost <= cost {
                    v = trial_v;
                    x = trial_x;
                    cost = trial_cost;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            let moved = step.norm() * scale;
            if !accepted || moved < cfg.tolerance {
                // No descent left: a stationary point up to rounding.
                converged = accepted || step.norm() < 1e-6;
                break;
            }
        }
        Ok(PositionFix {
            position: x,
            residual_rms: (cost / self.others.len() as f64).sqrt(),
            iterations,
            converged,
        })
    }

    fn grid_start(&self, region: &SearchBox, step: f64) -> Point3 {
        let axis = |k: usize| {
            let count = ((region.max[k] - region.min[k]) / step).floor() as usize + 1;
            (0..count).map(move |i| region.min[k] + i as f64 * step)
        };
        let zs: Vec<f64> = match self.fixed_z {
            Some(z) => vec![z],
            None => axis(2).collect(),
        };
        let mut best = (f64::INFINITY, Point3::zeros());
        for x in axis(0) {
            for y in axis(1) {
                for &z in &zs {
                    let p = Point3::new(x, y, z);
                    let c = self.cost(&p);
                    if c < best.0 {
                        best = (c, p);
                    }
                }
            }
        }
        best.1
    }
}

/// Least-squares receiver position for `tdoas`. Needs four valid channels in
/// 3-D and three with a fixed height. A fit that fails to converge is
/// returned with `converged = false`.
pub fn solve_position(tdoas: &TdoaSet, array: &BeaconArray, cfg: &SolverConfig) -> Result<PositionFix> {
    cfg.validate()?;
    if tdoas.valid.len() != array.len() {
        return Err(Error::ChannelCountMismatch {
            patterns: array.len(),
            channels: tdoas.valid.len(),
        });
    }
    if !tdoas
        .valid
        .get(tdoas.reference.wrapping_sub(1))
        .copied()
        .unwrap_or(false)
    {
        return Err(Error::InvalidArgument(format!(
            "reference channel {} has no valid arrival",
            tdoas.reference
        )));
    }
    let others = tdoas.others();
    let problem = Problem {
        beacons: &array.positions,
        reference: tdoas.reference,
        measured: others.iter().map(|&c| tdoas.differences[c - 1]).collect(),
        others,
        fixed_z: cfg.fixed_z,
    };
    let required = problem.unknowns() + 1;
    if tdoas.num_valid() < required {
        return Err(Error::TooFewToas {
            required,
            actual: tdoas.num_valid(),
        });
    }
    let region = cfg
        .search_box
        .unwrap_or_else(|| SearchBox::below_array(array, 2.0, 3.0));
    let from_grid = |problem: &Problem| problem.gauss_newton(problem.grid_start(&region, cfg.grid_step), cfg);
    match cfg.initial_guess {
        InitialGuess::Grid => from_grid(&problem),
        InitialGuess::BelowCentroid => {
            let mut start = array.centroid();
            start.z -= INITIAL_DEPTH;
            let first = problem.gauss_newton(start, cfg)?;
            if first.converged {
                return Ok(first);
            }
            let second = from_grid(&problem)?;
            Ok(if second.converged || second.residual_rms < first.residual_rms {
                second
            } else {
                first
            })
        }
    }
}
