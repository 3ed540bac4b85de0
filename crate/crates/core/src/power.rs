//! Radio cost arithmetic.
//!
//! Transmitting from `a` to `b` costs `t * d(a, b)^n` power units and every
//! reception costs a flat `c`. A hop therefore costs `t * d^n + c`, and a path
//! costs the sum of its hops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_sq(&self, other: &Location) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(&self, other: &Location) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Path-loss power model `p(a, b) = t * d(a, b)^n` with per-hop reception cost `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub t: f64,
    pub n: f64,
    pub c: f64,
    pub p_max: f64,
}

impl PowerModel {
    pub fn new(t: f64, n: f64, c: f64, p_max: f64) -> Result<Self> {
        let model = Self { t, n, c, p_max };
        model.validate()?;
        Ok(model)
    }

    /// Builds a model whose maximum transmit range is `range` meters.
    pub fn with_range(t: f64, n: f64, c: f64, range: f64) -> Result<Self> {
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::InvalidModel(format!("range must be positive, got {range}")));
        }
        Self::new(t, n, c, t * range.powf(n))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n.is_finite() && self.n >= 2.0) {
            return Err(Error::InvalidModel(format!("n must be >= 2, got {}", self.n)));
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return Err(Error::InvalidModel(format!("t must be > 0, got {}", self.t)));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::InvalidModel(format!("c must be >= 0, got {}", self.c)));
        }
        if !(self.p_max.is_finite() && self.p_max > 0.0) {
            return Err(Error::InvalidModel(format!("p_max must be > 0, got {}", self.p_max)));
        }
        let range = self.max_range();
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::InvalidModel(format!("max range is not finite: {range}")));
        }
        Ok(())
    }

    /// Transmit power needed to cover `distance` meters.
    #[inline]
    pub fn power_at(&self, distance: f64) -> f64 {
        // Integer exponents take the exact multiplication path.
        if self.n == 2.0 {
            self.t * distance * distance
        } else if self.n == 4.0 {
            let d2 = distance * distance;
            self.t * d2 * d2
        } else {
            self.t * distance.powf(self.n)
        }
    }

    /// Transmit power for a squared distance; avoids the square root for even exponents.
    #[inline]
    pub fn power_at_sq(&self, distance_sq: f64) -> f64 {
        if self.n == 2.0 {
            self.t * distance_sq
        } else if self.n == 4.0 {
            self.t * distance_sq * distance_sq
        } else {
            self.t * distance_sq.powf(self.n / 2.0)
        }
    }

    /// Radius of the disc reachable with transmit power `power`.
    pub fn range_at(&self, power: f64) -> f64 {
        if power <= 0.0 {
            return 0.0;
        }
        (power / self.t).powf(1.0 / self.n)
    }

    pub fn max_range(&self) -> f64 {
        self.range_at(self.p_max)
    }

    #[inline]
    pub fn transmit_power(&self, a: &Location, b: &Location) -> f64 {
        self.power_at_sq(a.distance_sq(b))
    }

    #[inline]
    pub fn link_cost(&self, a: &Location, b: &Location) -> f64 {
        self.transmit_power(a, b) + self.c
    }

    /// Total cost of the hops along `path`; a single location costs nothing.
    pub fn path_cost(&self, path: &[Location]) -> Result<f64> {
        if path.is_empty() {
            return Err(Error::EmptyPath);
        }
        Ok(path.windows(2).map(|hop| self.link_cost(&hop[0], &hop[1])).sum())
    }

    /// Whether `target` lies in the relay region of `u` through `v`, i.e.
    /// `C(u, v, target) <= C(u, target)`.
    #[inline]
    pub fn relay_beats_direct(&self, u: &Location, v: &Location, target: &Location) -> bool {
        self.link_cost(u, v) + self.link_cost(v, target) <= self.link_cost(u, target)
    }

    /// Whether `a` can reach `b` at maximum power.
    #[inline]
    pub fn in_range(&self, a: &Location, b: &Location) -> bool {
        self.transmit_power(a, b) <= self.p_max
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(t: f64, n: f64, c: f64) -> PowerModel {
        PowerModel::new(t, n, c, 1e6).unwrap()
    }

    const ORIGIN: Location = Location::new(0.0, 0.0);

    #[test]
    fn transmit_power_examples() {
        assert_eq!(model(1.0, 2.0, 0.0).transmit_power(&ORIGIN, &ORIGIN), 0.0);
        assert_eq!(model(2.0, 2.0, 0.0).transmit_power(&ORIGIN, &Location::new(3.0, 0.0)), 18.0);
        let m = model(1.0, 4.0, 0.0);
        let far = m.transmit_power(&ORIGIN, &Location::new(2.0, 0.0));
        assert_eq!(far, 16.0);
        assert_eq!(far, 16.0 * m.transmit_power(&ORIGIN, &Location::new(1.0, 0.0)));
    }

    #[test]
    fn non_integer_exponent_uses_powf() {
        let m = model(1.0, 3.0, 0.0);
        let p = m.transmit_power(&ORIGIN, &Location::new(2.0, 0.0));
        assert!((p - 8.0).abs() < 1e-12);
    }

    #[test]
    fn link_cost_examples() {
        let m = model(1.0, 2.0, 0.5);
        assert_eq!(m.link_cost(&ORIGIN, &Location::new(2.0, 0.0)), 4.5);
        let free = model(1.0, 2.0, 0.0);
        let b = Location::new(1.3, -0.7);
        assert_eq!(free.link_cost(&ORIGIN, &b), free.transmit_power(&ORIGIN, &b));
        let m = model(5.0, 2.0, 1.0);
        assert_eq!(m.link_cost(&ORIGIN, &Location::new(1.0, 0.0)), 6.0);
    }

    #[test]
    fn path_cost_examples() {
        let m = model(1.0, 2.0, 0.0);
        assert_eq!(m.path_cost(&[ORIGIN]).unwrap(), 0.0);
        assert!(matches!(m.path_cost(&[]), Err(Error::EmptyPath)));
        let line = [ORIGIN, Location::new(1.0, 0.0), Location::new(2.0, 0.0)];
        assert_eq!(m.path_cost(&line).unwrap(), 2.0);
        assert_eq!(m.path_cost(&[ORIGIN, Location::new(2.0, 0.0)]).unwrap(), 4.0);
        // hops of power 4 and 9 with c = 1
        let m = model(1.0, 2.0, 1.0);
        let r = [ORIGIN, Location::new(2.0, 0.0), Location::new(2.0, 3.0)];
        assert_eq!(m.path_cost(&r).unwrap(), 15.0);
    }

    #[test]
    fn relay_examples() {
        let m = model(1.0, 2.0, 0.0);
        let v = Location::new(1.0, 0.0);
        assert!(m.relay_beats_direct(&ORIGIN, &v, &Location::new(2.0, 0.0)));
        assert!(!m.relay_beats_direct(&ORIGIN, &v, &Location::new(0.5, 0.0)));
        let m = model(1.0, 2.0, 0.1);
        for target in [Location::new(3.0, 4.0), ORIGIN, Location::new(-2.0, 1.0)] {
            assert!(!m.relay_beats_direct(&ORIGIN, &ORIGIN, &target));
        }
    }

    #[test]
    fn max_range_examples() {
        assert_eq!(PowerModel::new(1.0, 2.0, 0.0, 100.0).unwrap().max_range(), 10.0);
        assert!((PowerModel::new(1.0, 4.0, 0.0, 16.0).unwrap().max_range() - 2.0).abs() < 1e-12);
        let m = PowerModel::with_range(1.0, 4.0, 0.0, 500.0).unwrap();
        assert_eq!(m.p_max, 6.25e10);
        assert!((m.max_range() - 500.0).abs() < 1e-9);
        let edge = Location::new(m.max_range(), 0.0);
        let p = m.transmit_power(&ORIGIN, &edge);
        assert!((p - m.p_max).abs() <= 1e-9 * m.p_max);
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(PowerModel::new(1.0, 1.5, 0.0, 1.0).is_err());
        assert!(PowerModel::new(0.0, 2.0, 0.0, 1.0).is_err());
        assert!(PowerModel::new(1.0, 2.0, -1.0, 1.0).is_err());
        assert!(PowerModel::new(1.0, 2.0, 0.0, 0.0).is_err());
        assert!(PowerModel::new(f64::NAN, 2.0, 0.0, 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn loc() -> impl Strategy<Value = Location> {
            (-1000.0..1000.0f64, -1000.0..1000.0f64).prop_map(|(x, y)| Location::new(x, y))
        }

        fn close(a: f64, b: f64) -> bool {
            (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-3)
        }

        proptest! {
            #[test]
            fn symmetric(a in loc(), b in loc(), n in prop::sample::select(vec![2.0, 3.0, 4.0])) {
                let m = PowerModel::new(1.0, n, 0.0, 1e20).unwrap();
                prop_assert_eq!(m.transmit_power(&a, &b), m.transmit_power(&b, &a));
            }

            #[test]
            fn monotone_in_distance(a in loc(), dir in 0.0..std::f64::consts::TAU, d1 in 0.0..800.0f64, d2 in 0.0..800.0f64) {
                let m = PowerModel::new(1.0, 4.0, 0.0, 1e20).unwrap();
                let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
                let p = |d: f64| m.transmit_power(&a, &Location::new(a.x + d * dir.cos(), a.y + d * dir.sin()));
                prop_assert!(p(near) <= p(far) * (1.0 + 1e-12));
            }

            #[test]
            fn midpoint_relay_wins_without_reception_cost(
                u in loc(), dir in 0.0..std::f64::consts::TAU, len in 1.0..500.0f64,
                frac in 0.01..0.99f64, n in prop::sample::select(vec![2.0, 3.0, 4.0])
            ) {
                let m = PowerModel::new(1.0, n, 0.0, 1e30).unwrap();
                let target = Location::new(u.x + len * dir.cos(), u.y + len * dir.sin());
                let v = Location::new(u.x + frac * len * dir.cos(), u.y + frac * len * dir.sin());
                prop_assert!(m.relay_beats_direct(&u, &v, &target));
            }

            #[test]
            fn path_cost_concatenates(r1 in prop::collection::vec(loc(), 1..6), r2 in prop::collection::vec(loc(), 0..6)) {
                let m = PowerModel::new(1.0, 2.0, 0.3, 1e20).unwrap();
                let mut joined = r1.clone();
                let mut second = vec![*r1.last().unwrap()];
                second.extend(r2.iter().copied());
                joined.extend(r2.iter().copied());
                let lhs = m.path_cost(&joined).unwrap();
                let rhs = m.path_cost(&r1).unwrap() + m.path_cost(&second).unwrap();
                prop_assert!(close(lhs, rhs));
            }
        }
    }
}
