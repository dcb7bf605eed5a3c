//! Pseudo-metric `Υ` on labelled states and the decay exponent built from it.
//!
//! Distances are sup-norm distances between sites of the ambient [`Lattice`].
//! Maxima over empty sets are zero.

use crate::state_space::{Config, Lattice};

/// A tracer position together with an oscillator configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledState {
    pub site: usize,
    pub config: Config,
}

impl LabeledState {
    pub fn new(site: usize, config: Config) -> Self {
        Self { site, config }
    }

    pub fn total(&self) -> u32 {
        self.config.total()
    }
}

/// `R_{ξ|ζ}(u) = max{ ‖v − u‖ : ζ(v) > 0 and ζ(v) ≠ ξ(v) }`.
pub fn r_offset(lattice: &Lattice, xi: &Config, zeta: &Config, site: usize) -> u32 {
    zeta.iter()
        .filter(|&(v, n)| n != xi.occupancy(v))
        .map(|(v, _)| lattice.distance(v, site))
        .max()
        .unwrap_or(0)
}

/// `Υ(a, b) = max{ ‖u − v‖, R_{ξ|ζ}(u), R_{ζ|ξ}(v) }` for `a = (u, ξ)`, `b = (v, ζ)`.
pub fn upsilon(lattice: &Lattice, a: &LabeledState, b: &LabeledState) -> u32 {
    lattice
        .distance(a.site, b.site)
        .max(r_offset(lattice, &a.config, &b.config, a.site))
        .max(r_offset(lattice, &b.config, &a.config, b.site))
}

/// `λ (Υ(a, b) + |√N_ξ − √N_ζ|)`.
pub fn decay_exponent(lattice: &Lattice, a: &LabeledState, b: &LabeledState, rate: f64) -> f64 {
    let gap = ((a.total() as f64).sqrt() - (b.total() as f64).sqrt()).abs();
    rate * (upsilon(lattice, a, b) as f64 + gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Lattice {
        Lattice::new(1, 6).unwrap()
    }

    fn at(lat: &Lattice, x: i32) -> usize {
        lat.index_of(&[x]).unwrap()
    }

    #[test]
    fn r_offset_examples() {
        let lat = line();
        let vac = Config::vacuum();
        let three = Config::single(at(&lat, 3));
        assert_eq!(r_offset(&lat, &three, &three, at(&lat, 0)), 0);
        assert_eq!(r_offset(&lat, &vac, &three, at(&lat, 0)), 3);
        assert_eq!(r_offset(&lat, &three, &vac, at(&lat, -2)), 0);
    }

    #[test]
    fn upsilon_examples() {
        let lat = line();
        let o = at(&lat, 0);
        let a = LabeledState::new(o, Config::vacuum());
        assert_eq!(upsilon(&lat, &a, &a), 0);
        let b = LabeledState::new(o, Config::single(at(&lat, 3)));
        assert_eq!(upsilon(&lat, &a, &b), 3);
        let c = LabeledState::new(at(&lat, 5), Config::vacuum());
        assert_eq!(upsilon(&lat, &a, &c), 5);
    }

    #[test]
    fn decay_exponent_examples() {
        let lat = line();
        let o = at(&lat, 0);
        let a = LabeledState::new(o, Config::single(o).with_occupancy(o, 4));
        assert_eq!(decay_exponent(&lat, &a, &a, 1.0), 0.0);
        // N = 4 and N = 1 with Υ = 3
        let b = LabeledState::new(at(&lat, 3), Config::single(at(&lat, 3)));
        assert_eq!(upsilon(&lat, &a, &b), 3);
        assert_eq!(decay_exponent(&lat, &a, &b, 1.0), 4.0);
        assert_eq!(decay_exponent(&lat, &b, &a, 1.0), 4.0);
    }

    #[test]
    fn excitations_on_the_tracer_site_are_invisible() {
        let lat = line();
        let o = at(&lat, 0);
        let a = LabeledState::new(o, Config::vacuum());
        let b = LabeledState::new(o, Config::single(o));
        assert_eq!(upsilon(&lat, &a, &b), 0);
    }
}
