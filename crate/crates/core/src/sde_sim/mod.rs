//! Benchmark SDE definitions and Euler-Maruyama ensemble simulation.
//!
//! Every trajectory draws from its own ChaCha8 substream: the key is derived
//! from the master seed and the stream id is the trajectory index. Output is
//! therefore bit-identical across runs and independent of how rayon schedules
//! the trajectories.

pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::poly_eval;

/// Interval on which a declared diffusion must be non-negative.
pub const DIFFUSION_CHECK_DOMAIN: (f64, f64) = (-4.0, 4.0);
const DIFFUSION_CHECK_POINTS: usize = 1000;

/// States beyond this magnitude abort the simulation.
pub const BLOW_UP_LIMIT: f64 = 1e6;

/// Floor applied to a recovered diffusion before taking its square root.
pub const RECOVERED_DIFFUSION_FLOOR: f64 = 1e-12;

/// A scalar SDE `dX = b(X) dt + sqrt(a(X)) dW` with polynomial `b` and `a`
/// given as monomial coefficients `b(x) = Σ c_k x^k`, `a(x) = Σ d_k x^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeSpec {
    pub name: String,
    drift_coeffs: Vec<f64>,
    diff_coeffs: Vec<f64>,
}

impl SdeSpec {
    pub fn new(name: impl Into<String>, drift_coeffs: Vec<f64>, diff_coeffs: Vec<f64>) -> Result<Self> {
        if drift_coeffs.is_empty() || drift_coeffs.len() != diff_coeffs.len() {
            return Err(Error::InvalidParameter(format!(
                "drift and diffusion need the same non-zero number of coefficients (got {} and {})",
                drift_coeffs.len(),
                diff_coeffs.len()
            )));
        }
        if drift_coeffs.iter().chain(&diff_coeffs).any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("SDE coefficients must be finite".into()));
        }
        let (lo, hi) = DIFFUSION_CHECK_DOMAIN;
        for i in 0..DIFFUSION_CHECK_POINTS {
            let x = lo + (hi - lo) * i as f64 / (DIFFUSION_CHECK_POINTS - 1) as f64;
            let a = poly_eval(&diff_coeffs, x);
            if a < 0.0 {
                return Err(Error::NegativeDiffusion { x, value: a });
            }
        }
        Ok(Self { name: name.into(), drift_coeffs, diff_coeffs })
    }

    pub fn drift_coeffs(&self) -> &[f64] {
        &self.drift_coeffs
    }

    pub fn diff_coeffs(&self) -> &[f64] {
        &self.diff_coeffs
    }

    /// Number of library terms `K`.
    pub fn n_terms(&self) -> usize {
        self.drift_coeffs.len()
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        poly_eval(&self.drift_coeffs, x)
    }

    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        poly_eval(&self.diff_coeffs, x)
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Ornstein-Uhlenbeck: `dX = -θ X dt + σ0 dW`.
pub fn make_ou(theta: f64, sigma0: f64) -> Result<SdeSpec> {
    require_positive("theta", theta)?;
    require_positive("sigma0", sigma0)?;
    SdeSpec::new("ou", vec![0.0, -theta, 0.0, 0.0, 0.0], vec![sigma0 * sigma0, 0.0, 0.0, 0.0, 0.0])
}

/// Double-well Langevin: `dX = (X - X^3) dt + σ0 dW`.
pub fn make_double_well(sigma0: f64) -> Result<SdeSpec> {
    require_positive("sigma0", sigma0)?;
    SdeSpec::new(
        "double_well",
        vec![0.0, 1.0, 0.0, -1.0, 0.0],
        vec![sigma0 * sigma0, 0.0, 0.0, 0.0, 0.0],
    )
}

/// Multiplicative noise: `dX = -2X dt + ½ sqrt(1 + X^2) dW`.
pub fn make_multiplicative() -> SdeSpec {
    SdeSpec::new("multiplicative", vec![0.0, -2.0, 0.0, 0.0, 0.0], vec![0.25, 0.0, 0.25, 0.0, 0.0])
        .expect("multiplicative benchmark is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub n_traj: usize,
    pub master_seed: u64,
    /// Initial conditions are uniform on this closed interval.
    pub x0_range: (f64, f64),
    /// Standard deviation of additive observation noise (0 disables it).
    pub obs_noise_sigma: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.002,
            n_steps: 50_000,
            n_traj: 120,
            master_seed: 42,
            x0_range: (-3.0, 3.0),
            obs_noise_sigma: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        require_positive("dt", self.dt)?;
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidParameter("n_traj must be at least 1".into()));
        }
        let (lo, hi) = self.x0_range;
        if !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(Error::InvalidParameter(format!("x0_range [{lo}, {hi}] is invalid")));
        }
        if !(self.obs_noise_sigma >= 0.0 && self.obs_noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "obs_noise_sigma must be non-negative, got {}",
                self.obs_noise_sigma
            )));
        }
        Ok(())
    }

    /// Total simulated time `N·Δt`.
    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// `R` trajectories of `N + 1` states each, stored trajectory-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    states: Vec<f64>,
    n_traj: usize,
    n_steps: usize,
    pub dt: f64,
    pub master_seed: u64,
    /// Substream id used for each trajectory.
    pub per_traj_seeds: Vec<u64>,
}

impl Ensemble {
    pub fn from_parts(
        states: Vec<f64>,
        n_traj: usize,
        n_steps: usize,
        dt: f64,
        master_seed: u64,
        per_traj_seeds: Vec<u64>,
    ) -> Result<Self> {
        if n_traj == 0 {
            return Err(Error::ShapeMismatch("ensemble has no trajectories".into()));
        }
        if states.len() != n_traj * (n_steps + 1) {
            return Err(Error::ShapeMismatch(format!(
                "{} states cannot form {n_traj} trajectories of {} states",
                states.len(),
                n_steps + 1
            )));
        }
        if per_traj_seeds.len() != n_traj {
            return Err(Error::ShapeMismatch(format!(
                "{} per-trajectory seeds for {n_traj} trajectories",
                per_traj_seeds.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if let Some(i) = states.iter().position(|x| !x.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite state in trajectory {} at step {}",
                i / (n_steps + 1),
                i % (n_steps + 1)
            )));
        }
        Ok(Self { states, n_traj, n_steps, dt, master_seed, per_traj_seeds })
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    /// Steps `N` per trajectory; each trajectory holds `N + 1` states.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn trajectory(&self, r: usize) -> &[f64] {
        let len = self.n_steps + 1;
        &self.states[r * len..(r + 1) * len]
    }

    pub fn trajectories(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.states.chunks_exact(self.n_steps + 1)
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Copies the first `n_traj` trajectories truncated to `n_steps` steps.
    pub fn truncated(&self, n_traj: usize, n_steps: usize) -> Result<Self> {
        if n_traj == 0 || n_traj > self.n_traj || n_steps == 0 || n_steps > self.n_steps {
            return Err(Error::ShapeMismatch(format!(
                "cannot take {n_traj}x{n_steps} from a {}x{} ensemble",
                self.n_traj, self.n_steps
            )));
        }
        let states = self
            .trajectories()
            .take(n_traj)
            .flat_map(|t| t[..=n_steps].iter().copied())
            .collect();
        Self::from_parts(
            states,
            n_traj,
            n_steps,
            self.dt,
            self.master_seed,
            self.per_traj_seeds[..n_traj].to_vec(),
        )
    }
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum NegativeDiffusion {
    Reject,
    Floor,
}

fn simulate<B, A>(drift: B, diffusion: A, config: &SimConfig, policy: NegativeDiffusion) -> Result<Ensemble>
where
    B: Fn(f64) -> f64 + Sync,
    A: Fn(f64) -> f64 + Sync,
{
    config.validate()?;
    let len = config.n_steps + 1;
    let mut states = vec![0.0; config.n_traj * len];
    let sqrt_dt = config.dt.sqrt();
    let (lo, hi) = config.x0_range;

    let outcomes: Vec<(Result<()>, usize)> = states
        .par_chunks_mut(len)
        .enumerate()
        .map(|(r, traj)| {
            let mut rng = substream(config.master_seed, r as u64);
            let u: f64 = rng.random();
            let mut x = if hi > lo { lo + (hi - lo) * u } else { lo };
            traj[0] = x;
            let mut floored = 0usize;
            for n in 0..config.n_steps {
                let mut a = diffusion(x);
                if a < RECOVERED_DIFFUSION_FLOOR && policy == NegativeDiffusion::Floor {
                    a = RECOVERED_DIFFUSION_FLOOR;
                    floored += 1;
                } else if a < 0.0 {
                    return (Err(Error::NegativeDiffusion { x, value: a }), floored);
                }
                let xi: f64 = rng.sample(StandardNormal);
                x += drift(x) * config.dt + a.sqrt() * xi * sqrt_dt;
                if !x.is_finite() || x.abs() > BLOW_UP_LIMIT {
                    return (Err(Error::BlowUp { traj: r, step: n + 1, value: x }), floored);
                }
                traj[n + 1] = x;
            }
            (Ok(()), floored)
        })
        .collect();

    let mut total_floored = 0;
    for (outcome, floored) in outcomes {
        outcome?;
        total_floored += floored;
    }
    if total_floored > 0 {
        log::warn!(
            "recovered diffusion fell below {RECOVERED_DIFFUSION_FLOOR:e} at {total_floored} steps and was clipped"
        );
    }

    let seeds = (0..config.n_traj as u64).collect();
    let ens = Ensemble::from_parts(states, config.n_traj, config.n_steps, config.dt, config.master_seed, seeds)?;
    if config.obs_noise_sigma > 0.0 {
        add_observation_noise(&ens, config.obs_noise_sigma, config.master_seed.wrapping_add(0x6f62_735f_6e6f_6973))
    } else {
        Ok(ens)
    }
}

/// Simulates `spec` with the Euler-Maruyama scheme.
pub fn euler_maruyama(spec: &SdeSpec, config: &SimConfig) -> Result<Ensemble> {
    simulate(|x| spec.drift(x), |x| spec.diffusion(x), config, NegativeDiffusion::Reject)
}

/// Simulates an identified model. The diffusion is floored at
/// [`RECOVERED_DIFFUSION_FLOOR`] instead of rejected, since small coefficient
/// errors can push it marginally negative far in the tails.
pub fn simulate_recovered(drift_coeffs: &[f64], diff_coeffs: &[f64], config: &SimConfig) -> Result<Ensemble> {
    if drift_coeffs.len() != diff_coeffs.len() || drift_coeffs.is_empty() {
        return Err(Error::ShapeMismatch("drift and diffusion coefficient counts differ".into()));
    }
    simulate(
        |x| poly_eval(drift_coeffs, x),
        |x| poly_eval(diff_coeffs, x),
        config,
        NegativeDiffusion::Floor,
    )
}

/// Adds i.i.d. `N(0, σ_η²)` noise to every state.
pub fn add_observation_noise(ens: &Ensemble, sigma_eta: f64, seed: u64) -> Result<Ensemble> {
    if !(sigma_eta >= 0.0 && sigma_eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "observation noise sigma must be non-negative, got {sigma_eta}"
        )));
    }
    let mut out = ens.clone();
    if sigma_eta == 0.0 {
        return Ok(out);
    }
    let len = ens.n_steps + 1;
    out.states.par_chunks_mut(len).enumerate().for_each(|(r, traj)| {
        let mut rng = substream(seed, r as u64);
        for x in traj.iter_mut() {
            let eta: f64 = rng.sample(StandardNormal);
            *x += sigma_eta * eta;
        }
    });
    Ok(out)
}
