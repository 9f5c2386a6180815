//! Corpus-wide invariants of the toric and MMP engines, checked against an
//! intersection matrix built independently from linear equivalence.

use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use ricci_mmp_core::mmp::{run_mmp_with_scaling, ContractionKind, MmpPair, MmpTerminal};
use ricci_mmp_core::toric::{iterated_blow_up, NefThreshold, ToricSurfaceFan, WeilDivisor};
use ricci_mmp_core::ExactField;

type Q = BigRational;

/// `D_i . D_j` from the relations `sum_j <m, u_j> D_j ~ 0` for `m = e1, e2`,
/// using only that adjacent curves meet once and others are disjoint.
fn oracle_matrix(fan: &ToricSurfaceFan) -> Vec<Vec<Q>> {
    let n = fan.len();
    let rays = fan.rays();
    let mut m = vec![vec![Q::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            if fan.are_adjacent(i, j) {
                m[i][j] = Q::one();
            }
        }
    }
    for i in 0..n {
        let (ex, ey) = (rays[i].x, rays[i].y);
        let (weight, coord): (i64, fn(&ricci_mmp_core::toric::RayVector) -> i64) =
            if ex != 0 { (ex, |r| r.x) } else { (ey, |r| r.y) };
        let mut acc = Q::zero();
        for j in 0..n {
            if j != i {
                acc += Q::from_int(coord(&rays[j])) * m[j][i].clone();
            }
        }
        m[i][i] = -acc / Q::from_int(weight);
    }
    m
}

fn oracle_pairings(fan: &ToricSurfaceFan, d: &WeilDivisor<Q>) -> Vec<Q> {
    let m = oracle_matrix(fan);
    (0..fan.len())
        .map(|i| (0..fan.len()).fold(Q::zero(), |acc, j| acc + d.coeffs[j].clone() * m[j][i].clone()))
        .collect()
}

fn blow_up_steps() -> impl Strategy<Value = Vec<(usize, i64)>> {
    prop::collection::vec((0usize..16, 2i64..4), 0..6)
}

#[test]
fn oracle_agrees_on_golden_fans() {
    let f1 = ToricSurfaceFan::hirzebruch(1);
    let h = WeilDivisor::<Q>::from_ints(&[1, 0, 0, 3]);
    assert_eq!(oracle_pairings(&f1, &h), f1.pairings(&h).unwrap());
    let diag: Vec<Q> = (0..4).map(|i| oracle_matrix(&f1)[i][i].clone()).collect();
    assert_eq!(diag, WeilDivisor::<Q>::from_ints(&[0, -1, 0, 1]).coeffs);
    let p2 = ToricSurfaceFan::projective_plane();
    assert!(oracle_matrix(&p2).iter().flatten().all(|x| *x == Q::one()));
}

#[test]
fn five_blow_ups_of_the_plane_give_eight_rays() {
    let (fan, h) = iterated_blow_up::<Q>(&[(0, 2), (3, 2), (1, 3), (5, 2), (2, 2)]).unwrap();
    assert_eq!(fan.len(), 8);
    assert!(fan.is_ample(&h).unwrap());
}

proptest! {
    #[test]
    fn fan_relation_and_adjunction(steps in blow_up_steps()) {
        let (fan, _) = iterated_blow_up::<Q>(&steps).unwrap();
        let n = fan.len();
        let rays = fan.rays();
        for i in 0..n {
            let (p, c, nx) = (rays[fan.prev(i)], rays[i], rays[fan.next(i)]);
            let s = fan.self_intersection(i);
            prop_assert_eq!((p.x + nx.x + s * c.x, p.y + nx.y + s * c.y), (0, 0));
        }
        let k: WeilDivisor<Q> = fan.canonical_divisor();
        let kp = fan.pairings(&k).unwrap();
        for i in 0..n {
            prop_assert_eq!(kp[i].clone(), Q::from_int(-2 - fan.self_intersection(i)));
        }
        // Noether: K^2 = 12 - n = sum (D_i^2 + 2)
        let noether: i64 = fan.self_intersections().values.iter().map(|v| v + 2).sum();
        prop_assert_eq!(noether, 12 - n as i64);
        prop_assert_eq!(fan.intersect(&k, &k).unwrap(), Q::from_int(12 - n as i64));
    }

    #[test]
    fn pairings_match_linear_equivalence_oracle(steps in blow_up_steps(), coeffs in prop::collection::vec(-5i64..6, 8)) {
        let (fan, _) = iterated_blow_up::<Q>(&steps).unwrap();
        let d = WeilDivisor::<Q>::from_ints(&coeffs.iter().cycle().take(fan.len()).copied().collect::<Vec<_>>());
        prop_assert_eq!(fan.pairings(&d).unwrap(), oracle_pairings(&fan, &d));
    }

    #[test]
    fn threshold_is_sharp(steps in blow_up_steps()) {
        let (fan, h) = iterated_blow_up::<Q>(&steps).unwrap();
        let NefThreshold::Finite(t) = fan.nef_threshold(&h).unwrap() else {
            return Err(TestCaseError::fail("toric surfaces have finite thresholds"));
        };
        let k = fan.canonical_divisor();
        prop_assert!(fan.is_nef(&h.plus_scaled(&t, &k)).unwrap());
        let past = t + Q::from_frac(1, 1000);
        prop_assert!(!fan.is_nef(&h.plus_scaled(&past, &k)).unwrap());
    }

    #[test]
    fn blow_down_raises_neighbours(steps in blow_up_steps(), pick in 0usize..16) {
        let (fan, _) = iterated_blow_up::<Q>(&steps).unwrap();
        let exceptional: Vec<usize> = (0..fan.len()).filter(|&i| fan.self_intersection(i) == -1).collect();
        prop_assume!(!exceptional.is_empty());
        let i = exceptional[pick % exceptional.len()];
        let down = fan.blow_down(i).unwrap();
        prop_assert_eq!(down.len(), fan.len() - 1);
        for (j, ray) in fan.rays().iter().enumerate().filter(|(j, _)| *j != i) {
            let k = down.position(*ray).unwrap();
            let bump = if fan.are_adjacent(i, j) { 1 } else { 0 };
            prop_assert_eq!(down.self_intersection(k), fan.self_intersection(j) + bump);
        }
        // blowing the same point back up restores the fan
        let cone = down.position(fan.rays()[fan.prev(i)]).unwrap();
        prop_assert_eq!(down.blow_up(cone).unwrap(), fan);
    }

    #[test]
    fn pullback_then_pushforward(steps in blow_up_steps(), cone in 0usize..16, coeffs in prop::collection::vec(-4i64..5, 8)) {
        let (fan, _) = iterated_blow_up::<Q>(&steps).unwrap();
        let cone = cone % fan.len();
        let d = WeilDivisor::<Q>::from_ints(&coeffs.iter().cycle().take(fan.len()).copied().collect::<Vec<_>>());
        let (up, pulled) = fan.pullback_to_blow_up(&d, cone).unwrap();
        let e = up.position(fan.rays()[cone] + fan.rays()[fan.next(cone)]).unwrap();
        prop_assert!(up.intersection_number(&pulled, e).unwrap().is_zero());
        let pushed = up.pushforward(&pulled, e).unwrap();
        prop_assert_eq!(&pushed, &d);
        prop_assert_eq!(fan.pairings(&pushed).unwrap(), fan.pairings(&d).unwrap());
        // projection formula: strict transforms are pi^* D_j or pi^* D_j - E, and pi^* D . E = 0
        for (j, ray) in fan.rays().iter().enumerate() {
            let k = up.position(*ray).unwrap();
            prop_assert_eq!(up.intersection_number(&pulled, k).unwrap(), fan.intersection_number(&d, j).unwrap());
        }
    }

    #[test]
    fn mmp_traces_satisfy_invariants(steps in blow_up_steps()) {
        let (fan, h) = iterated_blow_up::<Q>(&steps).unwrap();
        let pair = MmpPair::new(fan.clone(), h).unwrap();
        let trace = run_mmp_with_scaling(&pair).unwrap();
        prop_assert!(trace.violations().is_empty(), "{:?}", trace.violations());
        prop_assert!(!matches!(trace.terminal, MmpTerminal::Reached(ricci_mmp_core::mmp::TerminalKind::MinimalModel)));
        prop_assert!(trace.steps.len() <= fan.len() - 3 + 1);
        let removed: usize = trace.steps.iter().map(|s| match &s.kind {
            ContractionKind::Divisorial(r) => r.len(),
            _ => 0,
        }).sum();
        let last = trace.steps.iter().rev().find_map(|s| s.pair_after.as_ref()).unwrap_or(&trace.initial);
        prop_assert_eq!(removed, fan.len() - last.fan.len());
    }

    #[test]
    fn mmp_scale_invariance(steps in blow_up_steps(), num in 1i64..5, den in 1i64..5) {
        let (fan, h) = iterated_blow_up::<Q>(&steps).unwrap();
        let pair = MmpPair::new(fan, h).unwrap();
        let c = Q::from_frac(num, den);
        let a = run_mmp_with_scaling(&pair).unwrap();
        let b = run_mmp_with_scaling(&pair.scaled(&c)).unwrap();
        prop_assert_eq!(a.steps.len(), b.steps.len());
        for (x, y) in a.steps.iter().zip(&b.steps) {
            prop_assert_eq!(x.t.clone() * c.clone(), y.t.clone());
            prop_assert_eq!(&x.kind, &y.kind);
        }
        prop_assert_eq!(a.terminal_name(), b.terminal_name());
    }
}
