//! Sampled trajectories of the reference systems.

use nalgebra::DMatrix;

use mspa::systems::{integrate_ks_etdrk4, integrate_rk4, select_observable, ChuaParams, KsSpec, OdeSpec, Rhs};

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum System {
    /// Starts at `F` in every coordinate with `perturb` added to the last.
    Lorenz96 { dim: usize, forcing: f64, perturb: f64 },
    Chua { params: ChuaParams, initial: [f64; 3] },
    /// Starts from [`KsSpec::standard_profile`].
    Ks { grid_points: usize },
}

impl System {
    pub fn default_step(&self) -> f64 {
        match self {
            System::Lorenz96 { .. } => 0.01,
            System::Chua { .. } | System::Ks { .. } => 0.001,
        }
    }
}

/// Which integrator steps end up in the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampling {
    pub step: f64,
    /// Integrator steps.
    pub steps: usize,
    /// Keep every `every`-th step.
    pub every: usize,
    /// Integrator steps dropped at the start.
    pub skip: usize,
    /// Rows to keep (0-based); all when empty.
    pub observe: Vec<usize>,
}

/// Integrates `system` and returns the sampled `D × T` trajectory: the states
/// after `skip`, `skip + every`, … integrator steps, up to `steps`.
pub fn generate(system: &System, sampling: &Sampling) -> Result<DMatrix<f64>> {
    if sampling.every == 0 {
        return Err(CliError::Usage("--every must be at least 1".into()));
    }
    if sampling.skip > sampling.steps {
        return Err(CliError::Usage(format!("cannot skip {} of {} steps", sampling.skip, sampling.steps)));
    }
    let raw = match system {
        System::Lorenz96 { dim, forcing, perturb } => {
            let mut initial = vec![*forcing; *dim];
            if let Some(last) = initial.last_mut() {
                *last += perturb;
            }
            integrate_rk4(&OdeSpec {
                rhs: Rhs::Lorenz96 { forcing: *forcing },
                initial,
                step: sampling.step,
                steps: sampling.steps,
                observe: None,
            })?
        }
        System::Chua { params, initial } => integrate_rk4(&OdeSpec {
            rhs: Rhs::Chua(*params),
            initial: initial.to_vec(),
            step: sampling.step,
            steps: sampling.steps,
            observe: None,
        })?,
        System::Ks { grid_points } => integrate_ks_etdrk4(&KsSpec {
            grid_points: *grid_points,
            step: sampling.step,
            steps: sampling.steps,
            initial: KsSpec::standard_profile(*grid_points),
        })?,
    };
    let kept: Vec<usize> = (sampling.skip..=sampling.steps).step_by(sampling.every).collect();
    let sampled = raw.select_columns(&kept);
    if sampling.observe.is_empty() {
        Ok(sampled)
    } else {
        Ok(select_observable(&sampled, &sampling.observe)?)
    }
}
