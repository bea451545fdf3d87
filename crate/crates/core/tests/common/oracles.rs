//! Reference computations that share no code with the library.

pub type M3 = [[f64; 3]; 3];

fn mul3(a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Matrix exponential by truncated Taylor series with scaling and squaring.
pub fn expm_series(m: &M3) -> M3 {
    let norm = m
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut s = 0u32;
    while norm / 2f64.powi(s as i32) > 0.125 {
        s += 1;
    }
    let scale = 2f64.powi(-(s as i32));
    let a: M3 = m.map(|r| r.map(|v| v * scale));
    let mut result = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut term = result;
    for k in 1..=30 {
        term = mul3(&term, &a).map(|r| r.map(|v| v / k as f64));
        for i in 0..3 {
            for j in 0..3 {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        result = mul3(&result, &result);
    }
    result
}

/// Zero-order-hold transition from the augmented matrix `[[A·T, B·T], [0, 0]]`.
pub fn zoh(mass: f64, damping: f64, stiffness: f64, t: f64) -> ([[f64; 2]; 2], [f64; 2]) {
    let aug = [
        [0.0, t, 0.0],
        [-stiffness / mass * t, -damping / mass * t, t / mass],
        [0.0, 0.0, 0.0],
    ];
    let e = expm_series(&aug);
    ([[e[0][0], e[0][1]], [e[1][0], e[1][1]]], [e[0][2], e[1][2]])
}

/// Continuous mass-spring-damper integrated with classic RK4 at `substeps`
/// per sample, force held over each sample.
pub fn rk4_response(
    mass: f64,
    damping: f64,
    stiffness: f64,
    t: f64,
    substeps: usize,
    forces: &[f64],
) -> Vec<(f64, f64)> {
    let h = t / substeps as f64;
    let f = |x: f64, v: f64, u: f64| (v, (u - damping * v - stiffness * x) / mass);
    let (mut x, mut v) = (0.0, 0.0);
    let mut out = Vec::with_capacity(forces.len());
    for &u in forces {
        for _ in 0..substeps {
            let k1 = f(x, v, u);
            let k2 = f(x + 0.5 * h * k1.0, v + 0.5 * h * k1.1, u);
            let k3 = f(x + 0.5 * h * k2.0, v + 0.5 * h * k2.1, u);
            let k4 = f(x + h * k3.0, v + h * k3.1, u);
            x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        out.push((x, v));
    }
    out
}

/// Central-difference gradient of a planar scalar field.
pub fn central_gradient(f: impl Fn(f64, f64) -> f64, x: f64, y: f64, h: f64) -> [f64; 2] {
    [
        (f(x + h, y) - f(x - h, y)) / (2.0 * h),
        (f(x, y + h) - f(x, y - h)) / (2.0 * h),
    ]
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Square wave of amplitude `amp` and period `period`, sampled at `t`.
pub fn square_wave(amp: f64, period: f64, t: f64) -> f64 {
    if (t / period).fract() < 0.5 {
        amp
    } else {
        -amp
    }
}
