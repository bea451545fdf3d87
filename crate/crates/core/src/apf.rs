//! Planar artificial potential fields.
//!
//! Attraction `U_a = ξ·‖p − p_g‖²`; repulsion from the closest obstacle
//! `U_r = η·(1/ρ − 1/d0)²` for `ρ < d0`, zero otherwise, where `ρ` is the
//! distance from `p` to the obstacle's safety circle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ApfError {
    /// The query point lies on or inside an obstacle's safety circle.
    #[error("point penetrates the safety zone of obstacle {obstacle}")]
    Penetration { obstacle: usize },
}

/// Vertical column with a circular safety zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawObstacle<T>", bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct Obstacle<T> {
    pub center: Vec2<T>,
    /// Safety radius `r`, m.
    pub radius: T,
    /// Influence distance `d0`, measured from the safety circle, m.
    pub influence: T,
}

#[derive(Deserialize)]
struct RawObstacle<T> {
    center: Vec2<T>,
    radius: T,
    influence: Option<T>,
}

impl<T: Real> From<RawObstacle<T>> for Obstacle<T> {
    fn from(raw: RawObstacle<T>) -> Self {
        match raw.influence {
            Some(d0) => Self::with_influence(raw.center, raw.radius, d0),
            None => Self::new(raw.center, raw.radius),
        }
    }
}

impl<T: Real> Obstacle<T> {
    /// Obstacle with the default influence distance `r + 0.5`.
    pub fn new(center: Vec2<T>, radius: T) -> Self {
        Self {
            center,
            radius,
            influence: radius + T::half(),
        }
    }

    pub fn with_influence(center: Vec2<T>, radius: T, influence: T) -> Self {
        Self {
            center,
            radius,
            influence,
        }
    }

    /// `r > 0` and `d0 > r`.
    pub fn is_valid(&self) -> bool {
        self.center.is_finite()
            && self.radius > T::zero()
            && self.influence > self.radius
            && self.influence.is_finite()
    }

    /// Signed distance from `p` to the safety circle (negative inside).
    pub fn clearance(&self, p: Vec2<T>) -> T {
        (p - self.center).norm() - self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApfGains<T> {
    /// Attractive scale ξ.
    pub attractive: T,
    /// Repulsive scale η.
    pub repulsive: T,
    /// Velocity per unit gradient.
    pub velocity_gain: T,
    /// Avoidance speed cap, m/s.
    pub max_speed: T,
    /// Sum repulsion over every obstacle instead of only the closest.
    #[serde(default)]
    pub sum_obstacles: bool,
}

impl<T: Real> Default for ApfGains<T> {
    fn default() -> Self {
        Self {
            attractive: T::one(),
            repulsive: T::lit(0.1),
            velocity_gain: T::one(),
            max_speed: T::one(),
            sum_obstacles: false,
        }
    }
}

impl<T: Real> ApfGains<T> {
    pub fn is_valid(&self) -> bool {
        [self.attractive, self.repulsive, self.velocity_gain, self.max_speed]
            .iter()
            .all(|g| *g > T::zero() && g.is_finite())
    }
}

/// Potential value and its gradient at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Field<T> {
    pub value: T,
    pub gradient: Vec2<T>,
}

impl<T: Real> Field<T> {
    pub fn zero() -> Self {
        Self {
            value: T::zero(),
            gradient: Vec2::zero(),
        }
    }
}

pub fn attractive_potential<T: Real>(p: Vec2<T>, goal: Vec2<T>, xi: T) -> Field<T> {
    let d = p - goal;
    Field {
        value: xi * d.norm_squared(),
        gradient: d * (T::two() * xi),
    }
}

/// Repulsive term of a single obstacle. Exactly zero for `ρ ≥ d0`.
pub fn obstacle_potential<T: Real>(
    p: Vec2<T>,
    obstacle: &Obstacle<T>,
    index: usize,
    eta: T,
) -> Result<Field<T>, ApfError> {
    let offset = p - obstacle.center;
    let dist = offset.norm();
    let rho = dist - obstacle.radius;
    if !(rho > T::zero()) {
        return Err(ApfError::Penetration { obstacle: index });
    }
    if rho >= obstacle.influence {
        return Ok(Field::zero());
    }
    let gap = rho.recip() - obstacle.influence.recip();
    // dU/dρ = -2η·gap/ρ², ∇ρ = offset/‖offset‖.
    let d_rho = -T::two() * eta * gap / (rho * rho);
    Ok(Field {
        value: eta * gap * gap,
        gradient: offset * (d_rho / dist),
    })
}

/// Index of the obstacle whose safety circle is closest to `p`.
pub fn closest_obstacle<T: Real>(p: Vec2<T>, obstacles: &[Obstacle<T>]) -> Option<usize> {
    obstacles
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.clearance(p)
                .partial_cmp(&b.clearance(p))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(i, _)| i)
}

/// Repulsive potential from the closest obstacle (or the sum over all
/// obstacles when `sum_obstacles` is set). Fails if `p` penetrates any
/// safety zone.
pub fn repulsive_potential<T: Real>(
    p: Vec2<T>,
    obstacles: &[Obstacle<T>],
    eta: T,
    sum_obstacles: bool,
) -> Result<Field<T>, ApfError> {
    if let Some(i) = obstacles.iter().position(|o| !(o.clearance(p) > T::zero())) {
        return Err(ApfError::Penetration { obstacle: i });
    }
    if sum_obstacles {
        obstacles.iter().enumerate().try_fold(Field::zero(), |acc, (i, o)| {
            let f = obstacle_potential(p, o, i, eta)?;
            Ok(Field {
                value: acc.value + f.value,
                gradient: acc.gradient + f.gradient,
            })
        })
    } else {
        match closest_obstacle(p, obstacles) {
            Some(i) => obstacle_potential(p, &obstacles[i], i, eta),
            None => Ok(Field::zero()),
        }
    }
}

/// `v = -k·(∇U_a + ∇U_r)`, magnitude clamped to the speed cap.
pub fn avoidance_velocity<T: Real>(
    p: Vec2<T>,
    goal: Vec2<T>,
    obstacles: &[Obstacle<T>],
    gains: &ApfGains<T>,
) -> Result<Vec2<T>, ApfError> {
    let attract = attractive_potential(p, goal, gains.attractive);
    let repel = repulsive_potential(p, obstacles, gains.repulsive, gains.sum_obstacles)?;
    let v = (attract.gradient + repel.gradient) * (-gains.velocity_gain);
    Ok(v.clamp_norm(gains.max_speed))
}

/// Velocity from the repulsive term alone.
pub fn repulsive_velocity<T: Real>(
    p: Vec2<T>,
    obstacles: &[Obstacle<T>],
    gains: &ApfGains<T>,
) -> Result<Vec2<T>, ApfError> {
    let repel = repulsive_potential(p, obstacles, gains.repulsive, gains.sum_obstacles)?;
    Ok((repel.gradient * (-gains.velocity_gain)).clamp_norm(gains.max_speed))
}
