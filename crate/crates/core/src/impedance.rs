//! Mass-spring-damper interlinks integrated exactly under zero-order hold.
//!
//! Each link carries one scalar second-order model per spatial axis:
//!
//! ```text
//! M·Δẍ + D·Δẋ + K·Δx = F(t)
//! ```
//!
//! written in state-space form `ẋ = A·x + B·F` with
//! `A = [[0, 1], [-K/M, -D/M]]` and `B = [0, 1/M]ᵀ`. The discrete
//! transition is `A_d = e^{AT}`, `B_d = (A_d - I)·A⁻¹·B`, which is exact
//! for a force held constant over each sample.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;
use crate::scalar::Real;

/// Band around ζ = 1 inside which a model is reported as critically damped.
pub const CRITICAL_BAND: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImpedanceError {
    #[error("invalid impedance parameter `{field}` = {value}: must be {requirement}")]
    InvalidParameter {
        field: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("sample time must be positive and finite, got {0}")]
    InvalidSampleTime(f64),
}

/// Step-response family of the second-order model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DampingClass {
    Undamped,
    Underdamped,
    Critical,
    Overdamped,
}

/// Eigenvalues of the continuous system matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eigenvalues<T> {
    /// Two distinct real roots, `first > second`.
    Distinct(T, T),
    /// One real root of multiplicity two.
    Repeated(T),
    /// Conjugate pair `re ± i·im`, `im > 0`.
    Complex { re: T, im: T },
}

impl<T: Real> Eigenvalues<T> {
    pub fn is_complex(&self) -> bool {
        matches!(self, Eigenvalues::Complex { .. })
    }
}

/// Desired virtual mass, damping and stiffness of one interlink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams<T>", bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct ImpedanceParams<T> {
    /// Virtual mass, kg.
    pub mass: T,
    /// Damping, N·s/m.
    pub damping: T,
    /// Stiffness, N/m.
    pub stiffness: T,
}

#[derive(Deserialize)]
struct RawParams<T> {
    mass: T,
    damping: T,
    stiffness: T,
}

impl<T: Real> TryFrom<RawParams<T>> for ImpedanceParams<T> {
    type Error = ImpedanceError;
    fn try_from(raw: RawParams<T>) -> Result<Self, Self::Error> {
        Self::new(raw.mass, raw.damping, raw.stiffness)
    }
}

fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

impl<T: Real> ImpedanceParams<T> {
    /// Validates `mass > 0`, `stiffness > 0` and `damping ≥ 0` (all finite).
    pub fn new(mass: T, damping: T, stiffness: T) -> Result<Self, ImpedanceError> {
        let check = |field, value: T, ok: bool, requirement| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ImpedanceError::InvalidParameter {
                    field,
                    value: to_f64(value),
                    requirement,
                })
            }
        };
        check("mass", mass, mass > T::zero(), "positive")?;
        check("damping", damping, damping >= T::zero(), "non-negative")?;
        check("stiffness", stiffness, stiffness > T::zero(), "positive")?;
        Ok(Self {
            mass,
            damping,
            stiffness,
        })
    }

    /// Critically damped parameters for a given mass and stiffness.
    pub fn critically_damped(mass: T, stiffness: T) -> Result<Self, ImpedanceError> {
        Self::new(mass, T::two() * (mass * stiffness).sqrt(), stiffness)
    }

    /// ω_n = √(K/M), rad/s.
    pub fn natural_frequency(&self) -> T {
        (self.stiffness / self.mass).sqrt()
    }

    /// ζ = D / (2·√(M·K)).
    pub fn damping_ratio(&self) -> T {
        self.damping / (T::two() * (self.mass * self.stiffness).sqrt())
    }

    pub fn damping_class(&self) -> DampingClass {
        let zeta = self.damping_ratio();
        if zeta == T::zero() {
            DampingClass::Undamped
        } else if (zeta - T::one()).abs() <= T::lit(CRITICAL_BAND) {
            DampingClass::Critical
        } else if zeta < T::one() {
            DampingClass::Underdamped
        } else {
            DampingClass::Overdamped
        }
    }

    /// `a = -D/M`.
    pub fn a(&self) -> T {
        -self.damping / self.mass
    }

    /// `b = -K/M`.
    pub fn b(&self) -> T {
        -self.stiffness / self.mass
    }

    /// `c = 1/M`.
    pub fn c(&self) -> T {
        self.mass.recip()
    }

    /// Discriminant of `s² - a·s - b`, i.e. `(D² - 4KM)/M²`.
    fn discriminant(&self) -> T {
        let a = self.a();
        a * a + T::lit(4.0) * self.b()
    }

    /// Roots of the characteristic polynomial. A discriminant within a few
    /// ulps of `a²` is treated as an exact double root.
    pub fn eigenvalues(&self) -> Eigenvalues<T> {
        let a = self.a();
        let disc = self.discriminant();
        let center = a * T::half();
        if disc.abs() <= T::lit(64.0) * T::epsilon() * a * a {
            Eigenvalues::Repeated(center)
        } else if disc > T::zero() {
            let half_gap = disc.sqrt() * T::half();
            Eigenvalues::Distinct(center + half_gap, center - half_gap)
        } else {
            Eigenvalues::Complex {
                re: center,
                im: (-disc).sqrt() * T::half(),
            }
        }
    }

    /// Continuous system matrix `A`.
    pub fn system_matrix(&self) -> Mat2<T> {
        Mat2::new([[T::zero(), T::one()], [self.b(), self.a()]])
    }

    /// Exact zero-order-hold transition for sample time `sample_time`.
    pub fn discretize(&self, sample_time: T) -> Result<StateTransition<T>, ImpedanceError> {
        discretize(self, sample_time)
    }
}

/// Row-major 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2<T>(pub [[T; 2]; 2]);

impl<T: Real> Mat2<T> {
    pub fn new(rows: [[T; 2]; 2]) -> Self {
        Self(rows)
    }

    pub fn identity() -> Self {
        Self([[T::one(), T::zero()], [T::zero(), T::one()]])
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.0[r][c]
    }

    pub fn scale(&self, s: T) -> Self {
        let m = &self.0;
        Self([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn add(&self, o: &Self) -> Self {
        let (m, n) = (&self.0, &o.0);
        Self([
            [m[0][0] + n[0][0], m[0][1] + n[0][1]],
            [m[1][0] + n[1][0], m[1][1] + n[1][1]],
        ])
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(-T::one()))
    }

    pub fn mul(&self, o: &Self) -> Self {
        let (m, n) = (&self.0, &o.0);
        Self([
            [
                m[0][0] * n[0][0] + m[0][1] * n[1][0],
                m[0][0] * n[0][1] + m[0][1] * n[1][1],
            ],
            [
                m[1][0] * n[0][0] + m[1][1] * n[1][0],
                m[1][0] * n[0][1] + m[1][1] * n[1][1],
            ],
        ])
    }

    pub fn det(&self) -> T {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Self([[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]]).scale(d.recip()))
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> T {
        let m = &self.0;
        let c0 = m[0][0].abs() + m[1][0].abs();
        let c1 = m[0][1].abs() + m[1][1].abs();
        c0.max(c1)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Matrix exponential by Padé(6,6) with scaling and squaring.
pub fn expm_pade<T: Real>(m: &Mat2<T>) -> Mat2<T> {
    const DEGREE: usize = 6;
    let norm = m.norm_one();
    let mut squarings = 0i32;
    if norm > T::half() {
        let ratio = (norm / T::half()).to_f64().unwrap_or(0.0);
        squarings = ratio.log2().ceil().max(0.0) as i32;
    }
    let scaled = m.scale(T::lit(0.5f64.powi(squarings)));

    let mut numer = Mat2::identity();
    let mut denom = Mat2::identity();
    let mut power = Mat2::identity();
    let mut coeff = T::one();
    for k in 1..=DEGREE {
        let kf = T::lit(k as f64);
        let q = T::lit(DEGREE as f64);
        coeff = coeff * (q - kf + T::one()) / (kf * (T::two() * q - kf + T::one()));
        power = power.mul(&scaled);
        let term = power.scale(coeff);
        numer = numer.add(&term);
        denom = if k % 2 == 0 { denom.add(&term) } else { denom.sub(&term) };
    }
    let mut result = denom
        .inverse()
        .expect("Padé denominator is nonsingular for scaled argument")
        .mul(&numer);
    for _ in 0..squarings {
        result = result.mul(&result);
    }
    result
}

/// Discrete-time pair (A_d, B_d) for a fixed sample time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateTransition<T> {
    pub ad: Mat2<T>,
    pub bd: [T; 2],
    pub sample_time: T,
}

/// Builds the exact zero-order-hold transition.
///
/// A repeated eigenvalue uses `e^{λT}·(I + T·(A - λI))`; distinct real
/// eigenvalues use the spectral decomposition, written with hyperbolic
/// functions around the mean root `μ` so near-repeated roots stay well
/// conditioned; complex pairs go through a numeric matrix exponential.
pub fn discretize<T: Real>(
    params: &ImpedanceParams<T>,
    sample_time: T,
) -> Result<StateTransition<T>, ImpedanceError> {
    if !(sample_time > T::zero()) || !sample_time.is_finite() {
        return Err(ImpedanceError::InvalidSampleTime(to_f64(sample_time)));
    }
    let t = sample_time;
    let a_mat = params.system_matrix();
    let eye = Mat2::identity();
    let ad = match params.eigenvalues() {
        Eigenvalues::Repeated(lambda) => {
            let shifted = a_mat.sub(&eye.scale(lambda));
            eye.add(&shifted.scale(t)).scale((lambda * t).exp())
        }
        Eigenvalues::Distinct(l1, l2) => {
            let mu = (l1 + l2) * T::half();
            let delta = (l1 - l2) * T::half();
            let shifted = a_mat.sub(&eye.scale(mu));
            let c0 = (delta * t).cosh();
            let c1 = (delta * t).sinh() / delta;
            eye.scale(c0).add(&shifted.scale(c1)).scale((mu * t).exp())
        }
        Eigenvalues::Complex { .. } => expm_pade(&a_mat.scale(t)),
    };
    // A⁻¹·B = [c/b, 0]ᵀ, so (A_d - I)·A⁻¹·B picks the first column.
    let gain = params.c() / params.b();
    let bd = [(ad.get(0, 0) - T::one()) * gain, ad.get(1, 0) * gain];
    Ok(StateTransition {
        ad,
        bd,
        sample_time,
    })
}

/// Displacement and velocity of one axis of one link.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImpedanceState<T> {
    pub displacement: T,
    pub velocity: T,
}

impl<T: Real> ImpedanceState<T> {
    pub fn rest() -> Self {
        Self {
            displacement: T::zero(),
            velocity: T::zero(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.displacement.is_finite() && self.velocity.is_finite()
    }
}

/// Hand-velocity forcing `F = K_v·v_h`.
pub fn external_force<T: Real>(hand_velocity: T, velocity_gain: T) -> T {
    velocity_gain * hand_velocity
}

/// Advances one sample: `x_{k+1} = A_d·x_k + B_d·F_k`.
pub fn step<T: Real>(
    state: ImpedanceState<T>,
    force: T,
    transition: &StateTransition<T>,
) -> ImpedanceState<T> {
    let ad = &transition.ad;
    ImpedanceState {
        displacement: ad.get(0, 0) * state.displacement
            + ad.get(0, 1) * state.velocity
            + transition.bd[0] * force,
        velocity: ad.get(1, 0) * state.displacement
            + ad.get(1, 1) * state.velocity
            + transition.bd[1] * force,
    }
}

/// Per-axis magnitude bounds on emitted corrections, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationLimits<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> SaturationLimits<T> {
    pub fn uniform(limit: T) -> Self {
        Self {
            x: limit,
            y: limit,
            z: limit,
        }
    }

    pub fn as_vec(&self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.z]
            .iter()
            .all(|l| *l >= T::zero() && !l.is_nan())
    }
}

/// Clamps `value` to `[-limit, limit]`.
pub fn clamp_symmetric<T: Real>(value: T, limit: T) -> T {
    value.max(-limit).min(limit)
}

/// Clamps each axis of an emitted correction. Link state is left untouched.
pub fn saturate<T: Real>(correction: Vec3<T>, limits: &SaturationLimits<T>) -> Vec3<T> {
    correction.zip_map(limits.as_vec(), clamp_symmetric)
}

/// Three independent axis models sharing one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkDynamics<T> {
    pub params: ImpedanceParams<T>,
    pub transition: StateTransition<T>,
    pub limits: SaturationLimits<T>,
    pub axes: [ImpedanceState<T>; 3],
}

impl<T: Real> LinkDynamics<T> {
    pub fn new(
        params: ImpedanceParams<T>,
        limits: SaturationLimits<T>,
        sample_time: T,
    ) -> Result<Self, ImpedanceError> {
        Ok(Self {
            params,
            transition: discretize(&params, sample_time)?,
            limits,
            axes: [ImpedanceState::rest(); 3],
        })
    }

    /// Steps every axis with its own force and returns the saturated correction.
    pub fn advance(&mut self, force: Vec3<T>) -> Vec3<T> {
        for (state, f) in self.axes.iter_mut().zip(force.to_array()) {
            *state = step(*state, f, &self.transition);
        }
        saturate(self.raw_displacement(), &self.limits)
    }

    /// Unsaturated displacement of the virtual body.
    pub fn raw_displacement(&self) -> Vec3<T> {
        Vec3::new(
            self.axes[0].displacement,
            self.axes[1].displacement,
            self.axes[2].displacement,
        )
    }

    pub fn reset(&mut self) {
        self.axes = [ImpedanceState::rest(); 3];
    }
}
