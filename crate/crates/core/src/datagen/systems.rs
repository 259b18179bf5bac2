//! Dynamical systems integrated with classical fourth-order Runge-Kutta.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SystemKind {
    Harmonic,
    Damped,
    VanDerPol,
    Lorenz,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [
        SystemKind::Harmonic,
        SystemKind::Damped,
        SystemKind::VanDerPol,
        SystemKind::Lorenz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Harmonic => "harmonic",
            SystemKind::Damped => "damped",
            SystemKind::VanDerPol => "van_der_pol",
            SystemKind::Lorenz => "lorenz",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            SystemKind::Lorenz => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown system kind {s:?}")))
    }
}

/// ODE right-hand sides. States are `(x, v)` for the oscillators and
/// `(x, y, z)` for Lorenz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum System {
    /// `x'' = -omega^2 x`
    Harmonic {
        omega: f64,
    },
    /// `x'' = -omega^2 x - gamma x'`
    Damped {
        omega: f64,
        gamma: f64,
    },
    /// `x'' = mu (1 - x^2) x' - x`
    VanDerPol {
        mu: f64,
    },
    Lorenz {
        sigma: f64,
        rho: f64,
        beta: f64,
    },
}

impl System {
    pub fn kind(&self) -> SystemKind {
        match self {
            System::Harmonic { .. } => SystemKind::Harmonic,
            System::Damped { .. } => SystemKind::Damped,
            System::VanDerPol { .. } => SystemKind::VanDerPol,
            System::Lorenz { .. } => SystemKind::Lorenz,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            System::Harmonic { omega } => omega > 0.0 && omega <= 100.0,
            System::Damped { omega, gamma } => omega > 0.0 && omega <= 100.0 && (0.0..=10.0).contains(&gamma),
            System::VanDerPol { mu } => (0.0..=10.0).contains(&mu),
            System::Lorenz { sigma, rho, beta } => {
                sigma > 0.0 && rho > 0.0 && beta > 0.0 && sigma <= 50.0 && rho <= 100.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("system parameters out of range: {self:?}")))
        }
    }

    fn deriv(&self, s: &[f64], out: &mut [f64]) {
        match *self {
            System::Harmonic { omega } => {
                out[0] = s[1];
                out[1] = -omega * omega * s[0];
            }
            System::Damped { omega, gamma } => {
                out[0] = s[1];
                out[1] = -omega * omega * s[0] - gamma * s[1];
            }
            System::VanDerPol { mu } => {
                out[0] = s[1];
                out[1] = mu * (1.0 - s[0] * s[0]) * s[1] - s[0];
            }
            System::Lorenz { sigma, rho, beta } => {
                out[0] = sigma * (s[1] - s[0]);
                out[1] = s[0] * (rho - s[2]) - s[1];
                out[2] = s[0] * s[1] - beta * s[2];
            }
        }
    }

    /// Mechanical energy `v^2/2 + omega^2 x^2/2` (`omega = 1` for Van der
    /// Pol). Lorenz has none.
    pub fn energy(&self, state: &[f64]) -> Result<f64> {
        let omega = match *self {
            System::Harmonic { omega } | System::Damped { omega, .. } => omega,
            System::VanDerPol { .. } => 1.0,
            System::Lorenz { .. } => {
                return Err(Error::InvalidArgument(
                    "the Lorenz system has no energy function".into(),
                ))
            }
        };
        Ok(0.5 * state[1] * state[1] + 0.5 * omega * omega * state[0] * state[0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub system: System,
    pub initial: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps < 2 {
            return Err(Error::Config(format!("steps must be >= 2, got {}", self.steps)));
        }
        let dim = self.system.kind().dim();
        if self.initial.len() != dim || !self.initial.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "initial state must have {dim} finite entries, got {:?}",
                self.initial
            )));
        }
        Ok(())
    }
}

/// `steps + 1` states at times `0, dt, ..., steps * dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(Error::InvalidArgument(
                "times and states must be non-empty and equal length".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        if states.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("trajectory states must be finite".into()));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

pub fn simulate(spec: &SystemSpec) -> Result<Trajectory> {
    spec.validate()?;
    let dim = spec.initial.len();
    let dt = spec.dt;
    let mut state = spec.initial.clone();
    let mut states = Vec::with_capacity(spec.steps + 1);
    states.push(state.clone());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    for step in 1..=spec.steps {
        spec.system.deriv(&state, &mut k1);
        for i in 0..dim {
            tmp[i] = state[i] + 0.5 * dt * k1[i];
        }
        spec.system.deriv(&tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = state[i] + 0.5 * dt * k2[i];
        }
        spec.system.deriv(&tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = state[i] + dt * k3[i];
        }
        spec.system.deriv(&tmp, &mut k4);
        for i in 0..dim {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { step });
        }
        states.push(state.clone());
    }
    let times = (0..=spec.steps).map(|i| i as f64 * dt).collect();
    Ok(Trajectory { times, states })
}

const ENERGY_FLOOR: f64 = 1e-12;

/// `max_t |E(t) - E(0)| / max(|E(0)|, 1e-12)`.
pub fn energy_conservation_error(traj: &Trajectory, system: &System) -> Result<f64> {
    let energies = traj
        .states
        .iter()
        .map(|s| system.energy(s))
        .collect::<Result<Vec<_>>>()?;
    let e0 = energies[0];
    let denom = e0.abs().max(ENERGY_FLOOR);
    Ok(energies.iter().map(|e| (e - e0).abs() / denom).fold(0.0, f64::max))
}
