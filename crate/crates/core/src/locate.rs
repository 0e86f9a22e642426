//! Least-squares TDOA position fix from three base stations.
//!
//! With base station 1 at the origin, base stations 2 and 3 at `s_i`,
//! `b_i^2 = |s_i|^2`, range differences `R_i1 = R_i - R_1` and the reference
//! range `R_1`, the node position `p` satisfies
//!
//! ```text
//! H p = R_1 c + d,   H = [s_2; s_3],   c = -[R_21; R_31],
//! d = 0.5 [b_2^2 - R_21^2; b_3^2 - R_31^2]
//! ```
//!
//! solved as `p = (H^T H)^-1 H^T (R_1 c + d)`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }
}

/// Three base stations; the first is the reference at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsLayout {
    stations: [Position; 3],
}

impl BsLayout {
    pub fn new(stations: [Position; 3]) -> Result<Self> {
        if stations[0] != Position::new(0.0, 0.0) {
            return Err(Error::Geometry("base station 1 must sit at the origin".into()));
        }
        let layout = Self { stations };
        let h = layout.h();
        let scale = stations[1].norm_sq().max(stations[2].norm_sq());
        if !(h.determinant().abs() > 1e-12 * scale) {
            return Err(Error::Geometry("base stations are collinear".into()));
        }
        Ok(layout)
    }

    /// BSs at `(0,0)`, `(0,L)` and `(L,0)`.
    pub fn square(side: f64) -> Result<Self> {
        if !(side > 0.0) {
            return Err(Error::Geometry(format!("layout side must be positive, got {side}")));
        }
        Self::new([
            Position::new(0.0, 0.0),
            Position::new(0.0, side),
            Position::new(side, 0.0),
        ])
    }

    pub fn stations(&self) -> &[Position; 3] {
        &self.stations
    }

    pub fn ranges_to(&self, node: &Position) -> [f64; 3] {
        self.stations.map(|s| s.distance(node))
    }

    /// Exact arrival times for a pulse leaving `node` at time zero.
    pub fn arrival_times(&self, node: &Position) -> [f64; 3] {
        self.ranges_to(node).map(|r| r / SPEED_OF_LIGHT)
    }

    fn h(&self) -> Matrix2<f64> {
        let [_, s2, s3] = self.stations;
        Matrix2::new(s2.x, s2.y, s3.x, s3.y)
    }

    fn b_sq(&self) -> (f64, f64) {
        (self.stations[1].norm_sq(), self.stations[2].norm_sq())
    }
}

/// TOA estimates at base stations 1..3 plus a common offset removed from the
/// reference range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToaTriplet {
    pub toas: [f64; 3],
    pub common_offset: f64,
}

impl ToaTriplet {
    pub fn new(toas: [f64; 3], common_offset: f64) -> Result<Self> {
        if toas.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Domain(format!("TOAs must be finite and non-negative: {toas:?}")));
        }
        if !common_offset.is_finite() {
            return Err(Error::Domain("offset correction must be finite".into()));
        }
        Ok(Self { toas, common_offset })
    }
}

/// Range differences to the reference BS and the reference range itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    pub r21: f64,
    pub r31: f64,
    pub r1: f64,
}

pub fn tdoa_ranges(t: &ToaTriplet) -> Result<Ranges> {
    let [t1, t2, t3] = t.toas;
    let r1 = (t1 - t.common_offset) * SPEED_OF_LIGHT;
    if r1 < 0.0 {
        return Err(Error::Domain(format!(
            "offset correction {:.6e} s exceeds the reference TOA {t1:.6e} s",
            t.common_offset
        )));
    }
    Ok(Ranges {
        r21: (t2 - t1) * SPEED_OF_LIGHT,
        r31: (t3 - t1) * SPEED_OF_LIGHT,
        r1,
    })
}

fn rhs_terms(layout: &BsLayout, r21: f64, r31: f64) -> (Vector2<f64>, Vector2<f64>) {
    let (b2, b3) = layout.b_sq();
    let c = Vector2::new(-r21, -r31);
    let d = 0.5 * Vector2::new(b2 - r21 * r21, b3 - r31 * r31);
    (c, d)
}

/// Normal-equation solve `(H^T H)^-1 H^T (R_1 c + d)`.
pub fn solve_position(layout: &BsLayout, ranges: &Ranges) -> Result<Position> {
    let h = layout.h();
    let (c, d) = rhs_terms(layout, ranges.r21, ranges.r31);
    let normal = (h.transpose() * h)
        .try_inverse()
        .ok_or_else(|| Error::Geometry("H^T H is singular".into()))?;
    let p = normal * h.transpose() * (ranges.r1 * c + d);
    Ok(Position::new(p.x, p.y))
}

/// Same fix through `H^-1` directly; `H` is square for three BSs.
pub fn solve_position_direct(layout: &BsLayout, ranges: &Ranges) -> Result<Position> {
    let (c, d) = rhs_terms(layout, ranges.r21, ranges.r31);
    let p = layout
        .h()
        .lu()
        .solve(&(ranges.r1 * c + d))
        .ok_or_else(|| Error::Geometry("H is singular".into()))?;
    Ok(Position::new(p.x, p.y))
}

/// Position fix without a reference range: `p = a + R_1 g` is linear in
/// `R_1`, and `|p|^2 = R_1^2` closes the system. Among non-negative roots
/// the one placing the node inside `[0, side]^2` wins; if both do, the
/// smaller range is taken.
pub fn solve_position_quadratic(layout: &BsLayout, r21: f64, r31: f64, side: f64) -> Result<Position> {
    let (c, d) = rhs_terms(layout, r21, r31);
    let lu = layout.h().lu();
    let singular = || Error::Geometry("H is singular".into());
    let a = lu.solve(&d).ok_or_else(singular)?;
    let g = lu.solve(&c).ok_or_else(singular)?;
    // (|g|^2 - 1) R^2 + 2 a.g R + |a|^2 = 0
    let qa = g.norm_squared() - 1.0;
    let qb = 2.0 * a.dot(&g);
    let qc = a.norm_squared();
    let roots: Vec<f64> = if qa.abs() < 1e-12 {
        if qb.abs() < 1e-300 {
            vec![]
        } else {
            vec![-qc / qb]
        }
    } else {
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
        vec![(-qb - disc) / (2.0 * qa), (-qb + disc) / (2.0 * qa)]
    };
    let tol = 1e-6 * side;
    let inside = |p: &Vector2<f64>| {
        (-tol..=side + tol).contains(&p.x) && (-tol..=side + tol).contains(&p.y)
    };
    let mut candidates: Vec<(f64, Vector2<f64>)> = roots
        .into_iter()
        .filter(|r| r.is_finite() && *r >= -tol)
        .map(|r| (r, a + g * r))
        .collect();
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
    let chosen = candidates
        .iter()
        .find(|(_, p)| inside(p))
        .or(candidates.first())
        .ok_or_else(|| Error::Numeric("reference range equation has no non-negative root".into()))?;
    Ok(Position::new(chosen.1.x, chosen.1.y))
}

/// Where the reference range `R_1` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum R1Mode {
    /// Absolute TOA at BS 1 under a clock shared with the transmitter.
    #[default]
    KnownClock,
    /// Solved from the range differences alone.
    Quadratic,
}

/// TOA triplet to position.
pub fn localize(layout: &BsLayout, toas: &ToaTriplet, mode: R1Mode, side: f64) -> Result<Position> {
    match mode {
        R1Mode::KnownClock => solve_position(layout, &tdoa_ranges(toas)?),
        R1Mode::Quadratic => {
            let [t1, t2, t3] = toas.toas;
            solve_position_quadratic(layout, (t2 - t1) * SPEED_OF_LIGHT, (t3 - t1) * SPEED_OF_LIGHT, side)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_ranges(layout: &BsLayout, node: &Position) -> Ranges {
        let [r1, r2, r3] = layout.ranges_to(node);
        Ranges {
            r21: r2 - r1,
            r31: r3 - r1,
            r1,
        }
    }

    #[test]
    fn ranges_from_toas() {
        let r = tdoa_ranges(&ToaTriplet::new([3e-9, 4e-9, 5e-9], 0.0).unwrap()).unwrap();
        assert!((r.r21 - 0.299792458).abs() < 1e-12);
        assert!((r.r31 - 0.599584916).abs() < 1e-12);
        assert!((r.r1 - 0.899377374).abs() < 1e-12);
        let eq = tdoa_ranges(&ToaTriplet::new([2e-9; 3], 0.0).unwrap()).unwrap();
        assert_eq!((eq.r21, eq.r31), (0.0, 0.0));
        assert!(tdoa_ranges(&ToaTriplet::new([1e-9, 2e-9, 3e-9], 2e-9).unwrap()).is_err());
    }

    #[test]
    fn paper_node_round_trip() {
        let layout = BsLayout::square(2.0).unwrap();
        let node = Position::new(0.5, 0.75);
        let p = solve_position(&layout, &exact_ranges(&layout, &node)).unwrap();
        assert!(p.distance(&node) < 1e-10);
    }

    #[test]
    fn node_at_reference_station() {
        let layout = BsLayout::square(2.0).unwrap();
        let p = solve_position(&layout, &exact_ranges(&layout, &Position::new(0.0, 0.0))).unwrap();
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
    }

    #[test]
    fn normal_equations_match_inverse() {
        let layout = BsLayout::new([
            Position::new(0.0, 0.0),
            Position::new(0.3, 2.1),
            Position::new(1.9, -0.4),
        ])
        .unwrap();
        let r = exact_ranges(&layout, &Position::new(0.8, 0.6));
        let a = solve_position(&layout, &r).unwrap();
        let b = solve_position_direct(&layout, &r).unwrap();
        assert!(a.distance(&b) < 1e-12);
    }

    #[test]
    fn quadratic_mode_recovers_position() {
        let layout = BsLayout::square(2.0).unwrap();
        for node in [Position::new(0.5, 0.75), Position::new(1.7, 1.2), Position::new(0.05, 1.9)] {
            let r = exact_ranges(&layout, &node);
            let p = solve_position_quadratic(&layout, r.r21, r.r31, 2.0).unwrap();
            assert!(p.distance(&node) < 1e-8, "{node:?} -> {p:?}");
        }
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(BsLayout::new([Position::new(1.0, 0.0), Position::new(0.0, 2.0), Position::new(2.0, 0.0)]).is_err());
        assert!(BsLayout::new([Position::new(0.0, 0.0), Position::new(1.0, 1.0), Position::new(2.0, 2.0)]).is_err());
        assert!(BsLayout::square(0.0).is_err());
    }

    #[test]
    fn sensitivity_is_bounded() {
        // perturb each TOA by delta and record the worst position error
        let layout = BsLayout::square(2.0).unwrap();
        let node = Position::new(0.5, 0.75);
        let exact = layout.arrival_times(&node);
        let delta = 1e-12;
        let mut worst: f64 = 0.0;
        for bs in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut t = exact;
                t[bs] += sign * delta;
                let p = localize(&layout, &ToaTriplet::new(t, 0.0).unwrap(), R1Mode::KnownClock, 2.0).unwrap();
                worst = worst.max(p.distance(&node));
            }
        }
        let kappa = worst / (SPEED_OF_LIGHT * delta);
        assert!(kappa.is_finite() && kappa > 0.0 && kappa < 5.0, "{kappa}");
    }
}
