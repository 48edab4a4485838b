//! Euler–Bernoulli cantilever under a transverse point load.
//!
//! Stations are measured from the clamped end. For a load `F` at station `a`
//! the deflection at station `s` is
//!
//! ```text
//! w(s) = F s^2 (3a - s) / (6 EI)     for s <= a
//! w(s) = F a^2 (3s - a) / (6 EI)     for s >  a
//! ```

/// Deflection per unit `F / EI` at station `s` for a load at station `a`.
pub fn influence(s: f64, a: f64) -> f64 {
    if s <= 0.0 || a <= 0.0 {
        return 0.0;
    }
    if s <= a {
        s * s * (3.0 * a - s) / 6.0
    } else {
        a * a * (3.0 * s - a) / 6.0
    }
}

/// Slope per unit `F / EI`, the derivative of [`influence`] in `s`.
pub fn influence_slope(s: f64, a: f64) -> f64 {
    if s <= 0.0 || a <= 0.0 {
        return 0.0;
    }
    if s <= a {
        s * (2.0 * a - s) / 2.0
    } else {
        a * a / 2.0
    }
}

/// Deflection of a clamped cantilever with bending stiffness `ei`.
pub fn deflection(force: f64, load_station: f64, station: f64, ei: f64) -> f64 {
    force * influence(station, load_station) / ei
}

/// Tip deflection `F L^3 / (3 EI)` for a tip load.
pub fn tip_deflection(force: f64, length: f64, ei: f64) -> f64 {
    force * length.powi(3) / (3.0 * ei)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Integrates `EI w'' = F (a - s)` for `s < a` (zero moment beyond the
    /// load) with clamped initial conditions using RK4.
    fn integrate_beam(force: f64, a: f64, ei: f64, until: f64, steps: usize) -> f64 {
        let h = until / steps as f64;
        let curvature = |s: f64| if s < a { force * (a - s) / ei } else { 0.0 };
        let (mut w, mut slope) = (0.0, 0.0);
        for i in 0..steps {
            let s = i as f64 * h;
            let k1w = slope;
            let k1s = curvature(s);
            let k2w = slope + 0.5 * h * k1s;
            let k2s = curvature(s + 0.5 * h);
            let k3w = slope + 0.5 * h * k2s;
            let k3s = curvature(s + 0.5 * h);
            let k4w = slope + h * k3s;
            let k4s = curvature(s + h);
            w += h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
            slope += h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
        }
        w
    }

    #[test]
    fn tip_load_closed_form() {
        let d = deflection(1.0, 0.3, 0.3, 0.5);
        assert!((d - 0.018).abs() < 1e-12);
        assert!((tip_deflection(1.0, 0.3, 0.5) - 0.018).abs() < 1e-12);
        let ode = integrate_beam(1.0, 0.3, 0.5, 0.3, 3000);
        assert!((ode - 0.018).abs() < 1e-9, "ode {ode}");
    }

    #[test]
    fn interior_load_matches_ode_beyond_load() {
        for &(a, s) in &[(0.1, 0.05), (0.1, 0.1), (0.1, 0.25), (0.2, 0.3)] {
            // align a step boundary with the load station
            let ode = integrate_beam(2.0, a, 0.7, s, 6000);
            let closed = deflection(2.0, a, s, 0.7);
            assert!((ode - closed).abs() < 1e-9, "a={a} s={s}: {ode} vs {closed}");
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let h = 1e-6;
        for &s in &[0.05, 0.12, 0.2, 0.29] {
            let fd = (influence(s + h, 0.15) - influence(s - h, 0.15)) / (2.0 * h);
            assert!((fd - influence_slope(s, 0.15)).abs() < 1e-8);
        }
    }

    #[test]
    fn clamped_region_does_not_move() {
        assert_eq!(influence(0.0, 0.2), 0.0);
        assert_eq!(influence(-0.1, 0.2), 0.0);
        assert_eq!(influence(0.1, 0.0), 0.0);
    }
}
