//! Exact intersection theory on smooth complete toric surfaces.
//!
//! A fan is a counterclockwise cyclic list of primitive rays `u_0, .., u_{n-1}`
//! with `det(u_i, u_{i+1}) = 1`. Each ray `u_i` is a torus-invariant curve
//! `D_i`; adjacent curves meet transversally once, non-adjacent curves are
//! disjoint, and `D_i^2 = -a_i` where `u_{i-1} + u_{i+1} = a_i u_i`.
//!
//! Divisors are rational combinations `sum c_i D_i`. Indices are always
//! taken modulo the ray count and are 0-based.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::ExactField;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToricError {
    #[error("ray {0} is not primitive")]
    NotPrimitive(RayVector),
    #[error("cone ({index}, {next}) has determinant {det}, expected 1")]
    NotSmooth { index: usize, next: usize, det: i64 },
    #[error("rays do not span the plane")]
    NotComplete,
    #[error("duplicate ray {0}")]
    DuplicateRay(RayVector),
    #[error("fan relation failed at ray {0}")]
    InternalRelationFailure(usize),
    #[error("divisor has {found} coefficients, fan has {expected} rays")]
    LengthMismatch { expected: usize, found: usize },
    #[error("index {index} out of range for {len} rays")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("divisor is not ample: pairing with D_{index} is {pairing}")]
    NotAmple { index: usize, pairing: String },
    #[error("curve D_{index} has self-intersection {self_intersection}, expected -1")]
    NotContractible { index: usize, self_intersection: i64 },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, ToricError>;

/// Primitive lattice vector in `Z^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RayVector {
    pub x: i64,
    pub y: i64,
}

impl RayVector {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn det(self, other: RayVector) -> i64 {
        self.x * other.y - self.y * other.x
    }

    pub fn is_primitive(self) -> bool {
        self.x.gcd(&self.y) == 1
    }

    fn upper_half(self) -> bool {
        self.y > 0 || (self.y == 0 && self.x > 0)
    }

    /// Counterclockwise angle order starting at the positive x-axis.
    pub fn angle_cmp(self, other: RayVector) -> Ordering {
        match (self.upper_half(), other.upper_half()) {
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            _ => 0.cmp(&self.det(other)),
        }
    }
}

impl std::ops::Add for RayVector {
    type Output = RayVector;
    fn add(self, rhs: RayVector) -> RayVector {
        RayVector::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl fmt::Display for RayVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl From<(i64, i64)> for RayVector {
    fn from((x, y): (i64, i64)) -> Self {
        Self::new(x, y)
    }
}

/// Self-intersection numbers `D_i^2`, one per ray.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfIntersectionProfile {
    pub values: Vec<i64>,
}

/// Smooth complete toric surface, rays in normalized counterclockwise order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToricSurfaceFan {
    rays: Vec<RayVector>,
    self_ints: Vec<i64>,
}

/// Validates `rays` and returns the fan with rays sorted by angle.
pub fn validate_fan(rays: &[RayVector]) -> Result<ToricSurfaceFan> {
    ToricSurfaceFan::new(rays.to_vec())
}

impl ToricSurfaceFan {
    pub fn new(mut rays: Vec<RayVector>) -> Result<Self> {
        if let Some(bad) = rays.iter().find(|r| !r.is_primitive()) {
            return Err(ToricError::NotPrimitive(*bad));
        }
        rays.sort_by(|a, b| a.angle_cmp(*b));
        if let Some(w) = rays.windows(2).find(|w| w[0] == w[1]) {
            return Err(ToricError::DuplicateRay(w[0]));
        }
        let n = rays.len();
        if n < 3 {
            return Err(ToricError::NotComplete);
        }
        for i in 0..n {
            let det = rays[i].det(rays[(i + 1) % n]);
            if det <= 0 {
                return Err(ToricError::NotComplete);
            }
            if det != 1 {
                return Err(ToricError::NotSmooth { index: i, next: (i + 1) % n, det });
            }
        }
        let self_ints = compute_profile(&rays)?;
        Ok(Self { rays, self_ints })
    }

    /// The projective plane, rays `(1,0), (0,1), (-1,-1)`.
    pub fn projective_plane() -> Self {
        Self::new(vec![RayVector::new(1, 0), RayVector::new(0, 1), RayVector::new(-1, -1)]).expect("P2 fan is valid")
    }

    /// Hirzebruch surface `F_a` with rays `(1,0), (0,1), (-1,a), (0,-1)`.
    pub fn hirzebruch(a: i64) -> Self {
        Self::new(vec![RayVector::new(1, 0), RayVector::new(0, 1), RayVector::new(-1, a), RayVector::new(0, -1)])
            .expect("Hirzebruch fan is valid")
    }

    pub fn rays(&self) -> &[RayVector] {
        &self.rays
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn prev(&self, i: usize) -> usize {
        (i + self.len() - 1) % self.len()
    }

    pub fn next(&self, i: usize) -> usize {
        (i + 1) % self.len()
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        i != j && (self.next(i) == j || self.prev(i) == j)
    }

    pub fn self_intersection(&self, i: usize) -> i64 {
        self.self_ints[i % self.len()]
    }

    pub fn self_intersections(&self) -> SelfIntersectionProfile {
        SelfIntersectionProfile { values: self.self_ints.clone() }
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(ToricError::IndexOutOfRange { index, len: self.len() })
        }
    }

    fn check_divisor<Q>(&self, d: &WeilDivisor<Q>) -> Result<()> {
        if d.len() == self.len() {
            Ok(())
        } else {
            Err(ToricError::LengthMismatch { expected: self.len(), found: d.len() })
        }
    }

    /// `D . D_i = c_{i-1} + c_i D_i^2 + c_{i+1}`.
    pub fn intersection_number<Q: ExactField>(&self, d: &WeilDivisor<Q>, i: usize) -> Result<Q> {
        self.check_divisor(d)?;
        self.check_index(i)?;
        Ok(self.pairing_unchecked(d, i))
    }

    fn pairing_unchecked<Q: ExactField>(&self, d: &WeilDivisor<Q>, i: usize) -> Q {
        let c = &d.coeffs;
        c[self.prev(i)].clone() + c[i].clone() * Q::from_int(self.self_ints[i]) + c[self.next(i)].clone()
    }

    /// Pairings of `d` with every invariant curve.
    pub fn pairings<Q: ExactField>(&self, d: &WeilDivisor<Q>) -> Result<Vec<Q>> {
        self.check_divisor(d)?;
        Ok((0..self.len()).map(|i| self.pairing_unchecked(d, i)).collect())
    }

    /// Intersection number `D . E`.
    pub fn intersect<Q: ExactField>(&self, d: &WeilDivisor<Q>, e: &WeilDivisor<Q>) -> Result<Q> {
        self.check_divisor(e)?;
        let pairings = self.pairings(d)?;
        Ok(pairings.into_iter().zip(&e.coeffs).fold(Q::zero(), |acc, (p, c)| acc + p * c.clone()))
    }

    /// `K = -sum D_i`.
    pub fn canonical_divisor<Q: ExactField>(&self) -> WeilDivisor<Q> {
        WeilDivisor::new(vec![-Q::one(); self.len()])
    }

    /// `K . D_i = -2 - D_i^2` by adjunction.
    pub fn canonical_pairing(&self, i: usize) -> i64 {
        -2 - self.self_intersection(i)
    }

    pub fn is_nef<Q: ExactField>(&self, d: &WeilDivisor<Q>) -> Result<bool> {
        Ok(self.pairings(d)?.iter().all(|p| !p.is_negative()))
    }

    pub fn is_ample<Q: ExactField>(&self, d: &WeilDivisor<Q>) -> Result<bool> {
        Ok(self.pairings(d)?.iter().all(|p| p.is_positive()))
    }

    fn require_ample<Q: ExactField>(&self, h: &WeilDivisor<Q>) -> Result<Vec<Q>> {
        let pairings = self.pairings(h)?;
        match pairings.iter().position(|p| !p.is_positive()) {
            Some(index) => Err(ToricError::NotAmple { index, pairing: pairings[index].to_string() }),
            None => Ok(pairings),
        }
    }

    /// `sup { t > 0 : H + tK nef }` for ample `H`, as an exact rational.
    pub fn nef_threshold<Q: ExactField>(&self, h: &WeilDivisor<Q>) -> Result<NefThreshold<Q>> {
        let pairings = self.require_ample(h)?;
        let best = pairings
            .into_iter()
            .enumerate()
            .filter_map(|(i, hp)| {
                let kp = self.canonical_pairing(i);
                (kp < 0).then(|| hp / Q::from_int(-kp))
            })
            .min();
        Ok(match best {
            Some(t) => NefThreshold::Finite(t),
            None => NefThreshold::Infinity,
        })
    }

    /// Contracts the (-1)-curve `D_index`.
    pub fn blow_down(&self, index: usize) -> Result<ToricSurfaceFan> {
        self.require_contractible(index)?;
        let mut rays = self.rays.clone();
        rays.remove(index);
        Self::new(rays)
    }

    fn require_contractible(&self, index: usize) -> Result<()> {
        self.check_index(index)?;
        let s = self.self_intersection(index);
        if s != -1 || self.len() <= 3 {
            return Err(ToricError::NotContractible { index, self_intersection: s });
        }
        Ok(())
    }

    /// Blows up the torus-fixed point of cone `(u_index, u_{index+1})`.
    pub fn blow_up(&self, index: usize) -> Result<ToricSurfaceFan> {
        self.check_index(index)?;
        let mut rays = self.rays.clone();
        rays.push(self.rays[index] + self.rays[self.next(index)]);
        Self::new(rays)
    }

    /// Position of a ray in this fan.
    pub fn position(&self, ray: RayVector) -> Option<usize> {
        self.rays.iter().position(|r| *r == ray)
    }

    /// Drops the coefficient of the contracted curve `D_index`.
    pub fn pushforward<Q: ExactField>(&self, d: &WeilDivisor<Q>, index: usize) -> Result<WeilDivisor<Q>> {
        self.check_divisor(d)?;
        self.require_contractible(index)?;
        let mut coeffs = d.coeffs.clone();
        coeffs.remove(index);
        Ok(WeilDivisor::new(coeffs))
    }

    /// Pulls `d` back to the blow-up of cone `index`: the exceptional
    /// coefficient is `c_index + c_{index+1}`.
    pub fn pullback_to_blow_up<Q: ExactField>(
        &self,
        d: &WeilDivisor<Q>,
        index: usize,
    ) -> Result<(ToricSurfaceFan, WeilDivisor<Q>)> {
        self.check_divisor(d)?;
        let up = self.blow_up(index)?;
        let exceptional = self.rays[index] + self.rays[self.next(index)];
        let coeffs = up
            .rays
            .iter()
            .map(|r| {
                if *r == exceptional {
                    d.coeffs[index].clone() + d.coeffs[self.next(index)].clone()
                } else {
                    let j = self.position(*r).expect("blow-up keeps old rays");
                    d.coeffs[j].clone()
                }
            })
            .collect();
        Ok((up, WeilDivisor::new(coeffs)))
    }

    /// True iff some unimodular map carries these rays onto `other`'s rays,
    /// preserving the cyclic order up to orientation.
    pub fn is_isomorphic(&self, other: &ToricSurfaceFan) -> bool {
        let n = self.len();
        if n != other.len() {
            return false;
        }
        let (u0, u1) = (self.rays[0], self.rays[1]);
        // inverse of the unimodular matrix with columns u0, u1
        let inv = [[u1.y, -u1.x], [-u0.y, u0.x]];
        for k in 0..n {
            for forward in [true, false] {
                let step = |j: usize| if forward { (k + j) % n } else { (k + n - j % n) % n };
                let (v0, v1) = (other.rays[step(0)], other.rays[step(1)]);
                let m = [
                    [v0.x * inv[0][0] + v1.x * inv[1][0], v0.x * inv[0][1] + v1.x * inv[1][1]],
                    [v0.y * inv[0][0] + v1.y * inv[1][0], v0.y * inv[0][1] + v1.y * inv[1][1]],
                ];
                let maps_all = self.rays.iter().enumerate().all(|(j, u)| {
                    let image = RayVector::new(m[0][0] * u.x + m[0][1] * u.y, m[1][0] * u.x + m[1][1] * u.y);
                    image == other.rays[step(j)]
                });
                if maps_all {
                    return true;
                }
            }
        }
        false
    }
}

/// Blows up `P^2` at the listed cones (indices taken modulo the current ray
/// count). Each step replaces the ample divisor `H` by `m * pi^* H - E` with
/// the listed multiplier `m >= 2`, which stays ample.
pub fn iterated_blow_up<Q: ExactField>(steps: &[(usize, i64)]) -> Result<(ToricSurfaceFan, WeilDivisor<Q>)> {
    let mut fan = ToricSurfaceFan::projective_plane();
    let mut h = WeilDivisor::from_ints(&[1, 0, 0]);
    for &(cone, multiplier) in steps {
        let cone = cone % fan.len();
        let exceptional = fan.rays[cone] + fan.rays[fan.next(cone)];
        let (up, pulled) = fan.pullback_to_blow_up(&h, cone)?;
        let e = up.position(exceptional).expect("exceptional ray present");
        let mut coeffs = pulled.scaled(&Q::from_int(multiplier.max(2))).coeffs;
        coeffs[e] = coeffs[e].clone() - Q::one();
        fan = up;
        h = WeilDivisor::new(coeffs);
    }
    Ok((fan, h))
}

fn compute_profile(rays: &[RayVector]) -> Result<Vec<i64>> {
    let n = rays.len();
    (0..n)
        .map(|i| {
            let (prev, cur, next) = (rays[(i + n - 1) % n], rays[i], rays[(i + 1) % n]);
            // det(cur, next) = 1, so a = det(prev + next, next) = det(prev, next)
            let a = prev.det(next);
            let sum = prev + next;
            if sum != RayVector::new(a * cur.x, a * cur.y) {
                return Err(ToricError::InternalRelationFailure(i));
            }
            Ok(-a)
        })
        .collect()
}

/// Result of a nef-threshold query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NefThreshold<Q> {
    Finite(Q),
    /// `K` is nef; unreachable on toric surfaces.
    Infinity,
}

impl<Q: Clone> NefThreshold<Q> {
    pub fn finite(&self) -> Option<Q> {
        match self {
            NefThreshold::Finite(t) => Some(t.clone()),
            NefThreshold::Infinity => None,
        }
    }
}

/// Rational combination of the invariant curves of a fan.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WeilDivisor<Q> {
    pub coeffs: Vec<Q>,
}

impl<Q> WeilDivisor<Q> {
    pub fn new(coeffs: Vec<Q>) -> Self {
        Self { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

impl<Q: ExactField> WeilDivisor<Q> {
    pub fn from_ints(coeffs: &[i64]) -> Self {
        Self::new(coeffs.iter().map(|&c| Q::from_int(c)).collect())
    }

    pub fn zero(len: usize) -> Self {
        Self::new(vec![Q::zero(); len])
    }

    pub fn scaled(&self, factor: &Q) -> Self {
        Self::new(self.coeffs.iter().map(|c| c.clone() * factor.clone()).collect())
    }

    /// `self + t * other`
    pub fn plus_scaled(&self, t: &Q, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "divisor length mismatch");
        Self::new(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.clone() + t.clone() * b.clone()).collect())
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.coeffs.iter().map(|c| c.to_string()).collect()
    }

    pub fn parse(coeffs: &[String]) -> Result<Self> {
        coeffs.iter().map(|s| parse_exact::<Q>(s)).collect::<Result<Vec<_>>>().map(Self::new)
    }
}

/// Parses `"p/q"` or `"p"`.
pub fn parse_exact<Q: ExactField>(s: &str) -> Result<Q> {
    s.trim().parse::<Q>().map_err(|_| ToricError::Parse(format!("not a rational: {s:?}")))
}

/// JSON form of a fan with named divisors:
/// `{ "rays": [[1,0],...], "divisors": { "H": ["1","0","0","3"] } }`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanDocument {
    pub rays: Vec<[i64; 2]>,
    #[serde(default)]
    pub divisors: BTreeMap<String, Vec<String>>,
}

impl FanDocument {
    pub fn from_fan(fan: &ToricSurfaceFan) -> Self {
        Self { rays: fan.rays().iter().map(|r| [r.x, r.y]).collect(), divisors: BTreeMap::new() }
    }

    pub fn with_divisor<Q: ExactField>(mut self, name: &str, d: &WeilDivisor<Q>) -> Self {
        self.divisors.insert(name.to_string(), d.to_strings());
        self
    }

    /// Validates the rays. Divisor coefficients refer to the rays in the
    /// order written, so the rays must already be in normalized order.
    pub fn fan(&self) -> Result<ToricSurfaceFan> {
        let rays: Vec<RayVector> = self.rays.iter().map(|r| RayVector::new(r[0], r[1])).collect();
        let fan = ToricSurfaceFan::new(rays.clone())?;
        if fan.rays() != rays.as_slice() && !self.divisors.is_empty() {
            return Err(ToricError::Parse(
                "rays with divisors must be listed in counterclockwise order from the positive x-axis".into(),
            ));
        }
        Ok(fan)
    }

    pub fn divisor<Q: ExactField>(&self, name: &str) -> Result<WeilDivisor<Q>> {
        let coeffs = self.divisors.get(name).ok_or_else(|| ToricError::Parse(format!("missing divisor {name:?}")))?;
        let d = WeilDivisor::parse(coeffs)?;
        if d.len() != self.rays.len() {
            return Err(ToricError::LengthMismatch { expected: self.rays.len(), found: d.len() });
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    type D = WeilDivisor<BigRational>;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::from_frac(n, d)
    }

    fn rays(v: &[(i64, i64)]) -> Vec<RayVector> {
        v.iter().map(|&p| p.into()).collect()
    }

    fn f1() -> ToricSurfaceFan {
        ToricSurfaceFan::hirzebruch(1)
    }

    #[test]
    fn validates_standard_fans() {
        let p2 = validate_fan(&rays(&[(1, 0), (0, 1), (-1, -1)])).unwrap();
        assert_eq!(p2.len(), 3);
        let f1 = validate_fan(&rays(&[(1, 0), (0, 1), (-1, 1), (0, -1)])).unwrap();
        assert_eq!(f1.rays(), rays(&[(1, 0), (0, 1), (-1, 1), (0, -1)]).as_slice());
        // input order does not matter
        let shuffled = validate_fan(&rays(&[(0, -1), (-1, 1), (1, 0), (0, 1)])).unwrap();
        assert_eq!(shuffled, f1);
    }

    #[test]
    fn rejects_invalid_fans() {
        assert_eq!(
            validate_fan(&rays(&[(2, 0), (0, 1), (-1, -1)])),
            Err(ToricError::NotPrimitive(RayVector::new(2, 0)))
        );
        assert_eq!(
            validate_fan(&rays(&[(0, 0), (0, 1), (-1, -1)])),
            Err(ToricError::NotPrimitive(RayVector::new(0, 0)))
        );
        assert!(matches!(validate_fan(&rays(&[(1, 0), (0, 1), (-1, -1), (1, 0)])), Err(ToricError::DuplicateRay(_))));
        assert_eq!(validate_fan(&rays(&[(1, 0), (0, 1), (-1, 0)])), Err(ToricError::NotComplete));
        assert_eq!(validate_fan(&rays(&[(1, 0), (0, 1)])), Err(ToricError::NotComplete));
        assert_eq!(validate_fan(&[]), Err(ToricError::NotComplete));
        assert!(matches!(validate_fan(&rays(&[(1, 0), (-1, 2), (-1, -2)])), Err(ToricError::NotSmooth { .. })));
    }

    #[test]
    fn self_intersection_examples() {
        assert_eq!(ToricSurfaceFan::projective_plane().self_intersections().values, vec![1, 1, 1]);
        assert_eq!(f1().self_intersections().values, vec![0, -1, 0, 1]);
    }

    #[test]
    fn intersection_examples() {
        let p2 = ToricSurfaceFan::projective_plane();
        assert_eq!(p2.intersection_number(&D::from_ints(&[1, 0, 0]), 1).unwrap(), q(1, 1));
        let h = D::from_ints(&[1, 0, 0, 3]);
        assert_eq!(f1().pairings(&h).unwrap(), vec![q(3, 1), q(1, 1), q(3, 1), q(4, 1)]);
        assert!(f1().pairings(&D::zero(4)).unwrap().iter().all(|p| *p == q(0, 1)));
        assert_eq!(f1().intersection_number(&D::zero(3), 0), Err(ToricError::LengthMismatch { expected: 4, found: 3 }));
    }

    #[test]
    fn canonical_divisor_examples() {
        let p2 = ToricSurfaceFan::projective_plane();
        let k: D = p2.canonical_divisor();
        assert_eq!(p2.pairings(&k).unwrap(), vec![q(-3, 1); 3]);
        let k: D = f1().canonical_divisor();
        assert_eq!(f1().pairings(&k).unwrap(), vec![q(-2, 1), q(-1, 1), q(-2, 1), q(-3, 1)]);
        assert_eq!(f1().intersect(&k, &k).unwrap(), q(8, 1));
    }

    #[test]
    fn nef_examples() {
        let p2 = ToricSurfaceFan::projective_plane();
        assert!(p2.is_nef(&D::from_ints(&[1, 0, 0])).unwrap());
        let k: D = f1().canonical_divisor();
        assert!(!f1().is_nef(&k).unwrap());
        assert!(f1().is_nef(&D::zero(4)).unwrap());
    }

    #[test]
    fn nef_threshold_examples() {
        let p2 = ToricSurfaceFan::projective_plane();
        assert_eq!(p2.nef_threshold(&D::from_ints(&[1, 0, 0])).unwrap(), NefThreshold::Finite(q(1, 3)));
        assert_eq!(f1().nef_threshold(&D::from_ints(&[1, 0, 0, 3])).unwrap(), NefThreshold::Finite(q(1, 1)));
        assert_eq!(f1().nef_threshold(&D::from_ints(&[1, 0, 0, 1])).unwrap(), NefThreshold::Finite(q(1, 2)));
        assert!(matches!(f1().nef_threshold(&D::from_ints(&[1, 0, 0, 0])), Err(ToricError::NotAmple { index: 0, .. })));
    }

    #[test]
    fn blow_down_examples() {
        let p2 = f1().blow_down(1).unwrap();
        assert_eq!(p2.rays(), rays(&[(1, 0), (-1, 1), (0, -1)]).as_slice());
        assert_eq!(p2.self_intersections().values, vec![1, 1, 1]);
        assert!(p2.is_isomorphic(&ToricSurfaceFan::projective_plane()));
        for i in 0..3 {
            assert!(matches!(
                ToricSurfaceFan::projective_plane().blow_down(i),
                Err(ToricError::NotContractible { self_intersection: 1, .. })
            ));
        }
        assert!(matches!(f1().blow_down(0), Err(ToricError::NotContractible { .. })));
    }

    #[test]
    fn blow_up_examples() {
        let p2 = ToricSurfaceFan::projective_plane();
        let up = p2.blow_up(0).unwrap();
        let e = up.position(RayVector::new(1, 1)).unwrap();
        assert_eq!(up.self_intersection(e), -1);
        assert!(up.is_isomorphic(&f1()));
        assert_eq!(up.blow_down(e).unwrap(), p2);
        assert!(!up.is_isomorphic(&ToricSurfaceFan::hirzebruch(0)));
    }

    #[test]
    fn pushforward_examples() {
        let fan = f1();
        let h = D::from_ints(&[1, 0, 0, 3]);
        let k: D = fan.canonical_divisor();
        let limit = h.plus_scaled(&q(1, 1), &k);
        assert_eq!(limit, D::from_ints(&[0, -1, -1, 2]));
        let down = fan.blow_down(1).unwrap();
        let pushed = fan.pushforward(&limit, 1).unwrap();
        assert_eq!(pushed, D::from_ints(&[0, -1, 2]));
        assert_eq!(down.pairings(&pushed).unwrap(), vec![q(1, 1); 3]);
        assert_eq!(fan.pushforward(&D::zero(4), 1).unwrap(), D::zero(3));
        assert!(fan.pushforward(&limit, 0).is_err());
    }

    #[test]
    fn isomorphism_handles_orientation_reversal() {
        // reflection (x, y) -> (y, x) reverses the cyclic order
        let a = f1();
        let b = ToricSurfaceFan::new(a.rays().iter().map(|r| RayVector::new(r.y, r.x)).collect()).unwrap();
        assert!(a.is_isomorphic(&b));
    }

    #[test]
    fn fan_document_round_trip() {
        let doc = FanDocument::from_fan(&f1()).with_divisor("H", &D::from_ints(&[1, 0, 0, 3]));
        let json = serde_json::to_string(&doc).unwrap();
        assert_eq!(json, r#"{"rays":[[1,0],[0,1],[-1,1],[0,-1]],"divisors":{"H":["1","0","0","3"]}}"#);
        let back: FanDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.fan().unwrap(), f1());
        assert_eq!(back.divisor::<BigRational>("H").unwrap(), D::from_ints(&[1, 0, 0, 3]));
        let frac: FanDocument =
            serde_json::from_str(r#"{"rays":[[1,0],[0,1],[-1,-1]],"divisors":{"H":["1/2","-3/4","0"]}}"#).unwrap();
        assert_eq!(frac.divisor::<BigRational>("H").unwrap().coeffs[1], q(-3, 4));
        assert!(serde_json::from_str::<FanDocument>(r#"{"rays":[],"extra":1}"#).is_err());
    }
}
