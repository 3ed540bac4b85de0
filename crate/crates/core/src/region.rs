//! Search regions and the residual region η.
//!
//! η is `F(u, p_max)` minus the relay regions of a set of obstructors. It is
//! kept implicit (center, obstructors, model); containment against a broadcast
//! disc is decided on a polar sample grid plus the obstructor locations.
//!
//! Along any ray from `u`, the relay region of an obstructor is upward closed:
//! once relaying through `w` is no worse than the direct hop it stays so
//! further out. η is therefore star-shaped around `u`, and the outermost η
//! sample on a ray can be found by binary search over the radial grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::{Location, PowerModel};

pub const MIN_RAYS: usize = 64;
pub const MIN_RADIAL_SAMPLES: usize = 32;

/// Resolution of the polar grid used to test `F(u, p) ⊇ η`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub rays: usize,
    pub radial_samples: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self { rays: 1024, radial_samples: 128 }
    }
}

impl SamplingSpec {
    pub fn new(rays: usize, radial_samples: usize) -> Result<Self> {
        let spec = Self { rays, radial_samples };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays < MIN_RAYS || self.radial_samples < MIN_RADIAL_SAMPLES {
            return Err(Error::InvalidSampling(format!(
                "need at least {MIN_RAYS} rays and {MIN_RADIAL_SAMPLES} radial samples, got {}x{}",
                self.rays, self.radial_samples
            )));
        }
        Ok(())
    }

    /// Multiplies both grid dimensions by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self { rays: self.rays * factor, radial_samples: self.radial_samples * factor }
    }
}

/// Disc reachable from `center` at transmit power `power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BroadcastRegion {
    pub center: Location,
    pub power: f64,
    pub model: PowerModel,
}

impl BroadcastRegion {
    pub fn new(center: Location, power: f64, model: PowerModel) -> Self {
        Self { center, power: power.min(model.p_max), model }
    }

    pub fn radius(&self) -> f64 {
        self.model.range_at(self.power)
    }

    pub fn contains(&self, pt: &Location) -> bool {
        self.model.transmit_power(&self.center, pt) <= self.power
    }
}

/// `F(u, p_max)` minus the relay regions `R_{u→w}` of every obstructor `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaRegion {
    pub center: Location,
    pub obstructors: Vec<Location>,
    pub model: PowerModel,
}

impl EtaRegion {
    pub fn new(center: Location, obstructors: Vec<Location>, model: PowerModel) -> Self {
        Self { center, obstructors, model }
    }

    /// Exact point membership.
    pub fn contains(&self, pt: &Location) -> bool {
        self.model.in_range(&self.center, pt)
            && self
                .obstructors
                .iter()
                .all(|w| !self.model.relay_beats_direct(&self.center, w, pt))
    }

    /// Largest distance from the center among sampled η points.
    pub fn sampled_sup_radius(&self, spec: SamplingSpec) -> f64 {
        let mut sampler = EtaSampler::new(self.center, self.model, spec);
        for w in &self.obstructors {
            sampler.add_obstructor(*w);
        }
        sampler.sup_radius()
    }

    /// Exact supremum of distances from the center over η when `n = 2`.
    ///
    /// Relay regions are then half-planes `{p : p·w >= |w|^2 + c/(2t)}` (with
    /// `u` at the origin), so η is a disc cut by half-planes and its farthest
    /// point is either on the circle or at a vertex. Returns `None` for other
    /// exponents.
    pub fn exact_sup_radius_quadratic(&self) -> Option<f64> {
        if self.model.n != 2.0 {
            return None;
        }
        let radius = self.model.max_range();
        let offset = self.model.c / (2.0 * self.model.t);
        let lines: Vec<(f64, f64, f64)> = self
            .obstructors
            .iter()
            .map(|w| {
                let (wx, wy) = (w.x - self.center.x, w.y - self.center.y);
                (wx, wy, wx * wx + wy * wy + offset)
            })
            .collect();
        let tol = 1e-9 * radius.max(1.0) * radius.max(1.0);
        let feasible = |px: f64, py: f64, skip: &[usize]| {
            px * px + py * py <= radius * radius * (1.0 + 1e-12) + tol
                && lines
                    .iter()
                    .enumerate()
                    .all(|(i, (wx, wy, k))| skip.contains(&i) || px * wx + py * wy <= k + tol)
        };

        let mut best: f64 = 0.0;
        let mut cuts_circle = false;
        for (i, (wx, wy, k)) in lines.iter().enumerate() {
            let norm = (wx * wx + wy * wy).sqrt();
            let dist = k / norm;
            if dist >= radius {
                continue;
            }
            cuts_circle = true;
            // foot of the perpendicular plus/minus the half chord
            let (fx, fy) = (wx / norm * dist, wy / norm * dist);
            let half = (radius * radius - dist * dist).max(0.0).sqrt();
            let (tx, ty) = (-wy / norm, wx / norm);
            for s in [-1.0, 1.0] {
                let (px, py) = (fx + s * half * tx, fy + s * half * ty);
                if feasible(px, py, &[i]) {
                    best = best.max(radius);
                }
            }
        }
        if !cuts_circle {
            return Some(radius);
        }
        for i in 0..lines.len() {
            for j in (i + 1)..lines.len() {
                let (a1, b1, k1) = lines[i];
                let (a2, b2, k2) = lines[j];
                let det = a1 * b2 - a2 * b1;
                if det.abs() < 1e-12 * (a1.hypot(b1) * a2.hypot(b2)) {
                    continue;
                }
                let px = (k1 * b2 - k2 * b1) / det;
                let py = (a1 * k2 - a2 * k1) / det;
                if feasible(px, py, &[i, j]) {
                    best = best.max(px.hypot(py));
                }
            }
        }
        Some(best)
    }
}

/// Incremental polar-grid view of η: per ray, the index of the first radial
/// sample that lies in some obstructor's relay region.
#[derive(Debug, Clone)]
pub struct EtaSampler {
    center: Location,
    model: PowerModel,
    spec: SamplingSpec,
    radius: f64,
    directions: Vec<(f64, f64)>,
    first_relayed: Vec<usize>,
    obstructors: Vec<Location>,
    // whether each obstructor location is still an η sample
    obstructor_in_eta: Vec<bool>,
}

impl EtaSampler {
    pub fn new(center: Location, model: PowerModel, spec: SamplingSpec) -> Self {
        let directions = (0..spec.rays)
            .map(|k| {
                let theta = std::f64::consts::TAU * k as f64 / spec.rays as f64;
                (theta.cos(), theta.sin())
            })
            .collect();
        Self {
            center,
            model,
            spec,
            radius: model.max_range(),
            directions,
            first_relayed: vec![spec.radial_samples + 1; spec.rays],
            obstructors: Vec::new(),
            obstructor_in_eta: Vec::new(),
        }
    }

    pub fn spec(&self) -> SamplingSpec {
        self.spec
    }

    pub fn obstructors(&self) -> &[Location] {
        &self.obstructors
    }

    #[inline]
    fn sample_radius(&self, j: usize) -> f64 {
        if j == self.spec.radial_samples {
            self.radius
        } else {
            self.radius * j as f64 / self.spec.radial_samples as f64
        }
    }

    #[inline]
    fn sample_point(&self, ray: usize, j: usize) -> Location {
        let r = self.sample_radius(j);
        let (dx, dy) = self.directions[ray];
        Location::new(self.center.x + r * dx, self.center.y + r * dy)
    }

    #[inline]
    fn relayed(&self, w: &Location, ray: usize, j: usize) -> bool {
        self.model.relay_beats_direct(&self.center, w, &self.sample_point(ray, j))
    }

    pub fn add_obstructor(&mut self, w: Location) {
        let (wx, wy) = (w.x - self.center.x, w.y - self.center.y);
        for ray in 0..self.spec.rays {
            let (dx, dy) = self.directions[ray];
            // relay regions only reach points ahead of w's projection
            if wx * dx + wy * dy <= 0.0 {
                continue;
            }
            let bound = self.first_relayed[ray];
            if bound <= 1 || !self.relayed(&w, ray, bound - 1) {
                continue;
            }
            let (mut lo, mut hi) = (1, bound - 1);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if self.relayed(&w, ray, mid) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            self.first_relayed[ray] = hi;
        }

        let model = self.model;
        let center = self.center;
        for (loc, alive) in self.obstructors.iter().zip(self.obstructor_in_eta.iter_mut()) {
            if *alive && model.relay_beats_direct(&center, &w, loc) {
                *alive = false;
            }
        }
        let own = model.in_range(&center, &w)
            && !model.relay_beats_direct(&center, &w, &w)
            && self.obstructors.iter().all(|o| !model.relay_beats_direct(&center, o, &w));
        self.obstructors.push(w);
        self.obstructor_in_eta.push(own);
    }

    /// Largest distance from the center over all η samples.
    pub fn sup_radius(&self) -> f64 {
        let grid = self
            .first_relayed
            .iter()
            .map(|&first| self.sample_radius(first.min(self.spec.radial_samples + 1) - 1))
            .fold(0.0, f64::max);
        self.obstructors
            .iter()
            .zip(&self.obstructor_in_eta)
            .filter(|(_, alive)| **alive)
            .map(|(loc, _)| loc.distance(&self.center))
            .fold(grid, f64::max)
    }

    /// Smallest power whose disc contains every η sample, clamped to `p_max`.
    pub fn covering_power(&self) -> f64 {
        self.model.power_at(self.sup_radius()).min(self.model.p_max)
    }

    pub fn covered_by(&self, power: f64) -> bool {
        power >= self.model.p_max || self.covering_power() <= power
    }
}

/// Whether the broadcast disc `region` contains every sampled point of `eta`.
pub fn region_covers_eta(region: &BroadcastRegion, eta: &EtaRegion, spec: SamplingSpec) -> bool {
    debug_assert_eq!(region.center, eta.center);
    if region.power >= eta.model.p_max {
        return true;
    }
    eta.model.power_at(eta.sampled_sup_radius(spec)) <= region.power
}

/// `min { p : F(u, p) ⊇ η }` over the sample grid, clamped to `[0, p_max]`.
pub fn min_covering_power(eta: &EtaRegion, spec: SamplingSpec) -> f64 {
    eta.model.power_at(eta.sampled_sup_radius(spec)).min(eta.model.p_max)
}
