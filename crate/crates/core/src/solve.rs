//! Exact derivation of a requested device set from the probes currently
//! available.
//!
//! Probes rarely line up with what a consumer asks for: one probe may cover
//! CPU and memory together while another covers memory alone. The central
//! authority answers the request by finding rational coefficients over the
//! probes whose combined leaf coverage equals the requested set exactly, so
//! the requested energy is a signed combination of probe counters (the
//! CPU+Memory minus Memory case generalizes to fractional solutions).
//!
//! The solve is Gauss-Jordan elimination over exact rationals on the
//! leaf-indicator matrix: one row per topology leaf, one column per active
//! probe in ascending id order. Pivoting is fixed (first non-zero row, columns
//! scanned in id order) and free variables are set to zero, so the plan is
//! deterministic for a given registry state.

use std::collections::BTreeSet;

use num_rational::Rational64;
use num_traits::Zero;

use crate::model::ProbeId;

/// Rational coefficients over probes; applying them to the probes' counters
/// yields the energy of the requested device set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivationPlan {
    terms: Vec<(ProbeId, Rational64)>,
}

impl DerivationPlan {
    pub fn terms(&self) -> &[(ProbeId, Rational64)] {
        &self.terms
    }

    pub fn probe_ids(&self) -> impl Iterator<Item = ProbeId> + '_ {
        self.terms.iter().map(|(id, _)| *id)
    }

    pub fn uses_probe(&self, id: ProbeId) -> bool {
        self.terms.iter().any(|(p, _)| *p == id)
    }

    /// True when every coefficient is +1: a plain sum of probe counters.
    pub fn is_additive(&self) -> bool {
        self.terms.iter().all(|(_, c)| *c == Rational64::from_integer(1))
    }
}

/// Solve for a plan covering `request` with the given probes.
///
/// `probes` must be sorted by ascending probe id; each entry carries the
/// probe's leaf indices. Returns `None` when the request is outside the span
/// of the probes (unmonitorable).
pub fn derive_plan(
    request: &BTreeSet<usize>,
    probes: &[(ProbeId, &BTreeSet<usize>)],
    leaf_count: usize,
) -> Option<DerivationPlan> {
    debug_assert!(probes.windows(2).all(|w| w[0].0 < w[1].0));

    let cols = probes.len();
    if request.is_empty() {
        return None;
    }

    // Augmented matrix [A | b], rows = leaves, columns = probes.
    let one = Rational64::from_integer(1);
    let mut m = vec![vec![Rational64::zero(); cols + 1]; leaf_count];
    for (col, (_, leaves)) in probes.iter().enumerate() {
        for &row in leaves.iter() {
            m[row][col] = one;
        }
    }
    for &row in request.iter() {
        m[row][cols] = one;
    }

    // Gauss-Jordan to reduced row echelon form.
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; cols];
    let mut rank = 0usize;
    for col in 0..cols {
        let Some(pivot_row) = (rank..leaf_count).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(rank, pivot_row);
        let inv = m[rank][col].recip();
        for v in m[rank][col..].iter_mut() {
            *v *= inv;
        }
        for r in 0..leaf_count {
            if r != rank && !m[r][col].is_zero() {
                let factor = m[r][col];
                for c in col..=cols {
                    let delta = factor * m[rank][c];
                    m[r][c] -= delta;
                }
            }
        }
        pivot_of_col[col] = Some(rank);
        rank += 1;
    }

    // Inconsistent system: a zero coefficient row with non-zero rhs.
    for row in m.iter() {
        if row[..cols].iter().all(Zero::is_zero) && !row[cols].is_zero() {
            return None;
        }
    }

    // Canonical solution: pivot columns take the rhs, free columns are zero.
    let mut terms = Vec::new();
    for (col, pivot) in pivot_of_col.iter().enumerate() {
        if let Some(row) = pivot {
            let coef = m[*row][cols];
            if !coef.is_zero() {
                terms.push((probes[col].0, coef));
            }
        }
    }
    Some(DerivationPlan { terms })
}

/// Check a plan against the exact-cover equation: the coefficient-weighted
/// sum of probe indicator vectors must equal the request indicator, over
/// rationals, in every leaf position.
pub fn verify_plan(
    plan: &DerivationPlan,
    request: &BTreeSet<usize>,
    probes: &[(ProbeId, &BTreeSet<usize>)],
    leaf_count: usize,
) -> bool {
    let mut acc = vec![Rational64::zero(); leaf_count];
    for (id, coef) in plan.terms() {
        let Some((_, leaves)) = probes.iter().find(|(p, _)| p == id) else {
            return false;
        };
        for &row in leaves.iter() {
            acc[row] += coef;
        }
    }
    (0..leaf_count).all(|row| {
        let want = if request.contains(&row) { Rational64::from_integer(1) } else { Rational64::zero() };
        acc[row] == want
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(idx: &[usize]) -> BTreeSet<usize> {
        idx.iter().copied().collect()
    }

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn difference_of_overlapping_probes() {
        // P1 covers {cpu, mem}, P2 covers {mem}; request {cpu} = P1 - P2.
        let p1 = set(&[0, 1]);
        let p2 = set(&[1]);
        let probes = vec![(ProbeId(1), &p1), (ProbeId(2), &p2)];
        let plan = derive_plan(&set(&[0]), &probes, 2).unwrap();
        assert_eq!(plan.terms(), &[(ProbeId(1), r(1, 1)), (ProbeId(2), r(-1, 1))]);
        assert!(verify_plan(&plan, &set(&[0]), &probes, 2));
    }

    #[test]
    fn identity_cover() {
        let p1 = set(&[3]);
        let probes = vec![(ProbeId(1), &p1)];
        let plan = derive_plan(&set(&[3]), &probes, 5).unwrap();
        assert_eq!(plan.terms(), &[(ProbeId(1), r(1, 1))]);
        assert!(plan.is_additive());
    }

    #[test]
    fn fractional_cover_from_pairwise_probes() {
        // P1={A,B}, P2={B,C}, P3={A,C}; request {A} = P1/2 - P2/2 + P3/2.
        // The 3x3 system has full rank, so this solution is unique; the
        // brute-force oracle below confirms it independently.
        let p1 = set(&[0, 1]);
        let p2 = set(&[1, 2]);
        let p3 = set(&[0, 2]);
        let probes = vec![(ProbeId(1), &p1), (ProbeId(2), &p2), (ProbeId(3), &p3)];
        let plan = derive_plan(&set(&[0]), &probes, 3).unwrap();
        assert_eq!(
            plan.terms(),
            &[(ProbeId(1), r(1, 2)), (ProbeId(2), r(-1, 2)), (ProbeId(3), r(1, 2))]
        );
        assert!(verify_plan(&plan, &set(&[0]), &probes, 3));
        assert!(!plan.is_additive());

        let brute = brute_force_solvable(&set(&[0]), &[&p1, &p2, &p3], 3);
        assert_eq!(brute, Some(vec![r(1, 2), r(-1, 2), r(1, 2)]));
    }

    #[test]
    fn request_outside_span_is_unsolvable() {
        let p1 = set(&[1]); // memory only
        let probes = vec![(ProbeId(1), &p1)];
        assert!(derive_plan(&set(&[0]), &probes, 2).is_none());
        assert!(brute_force_solvable(&set(&[0]), &[&p1], 2).is_none());
    }

    #[test]
    fn aggregate_probe_cannot_be_split() {
        let p1 = set(&[0, 1]);
        let probes = vec![(ProbeId(1), &p1)];
        assert!(derive_plan(&set(&[0]), &probes, 2).is_none());
    }

    #[test]
    fn redundant_probes_resolve_to_lowest_id() {
        let p1 = set(&[0]);
        let p2 = set(&[0]);
        let probes = vec![(ProbeId(1), &p1), (ProbeId(2), &p2)];
        let plan = derive_plan(&set(&[0]), &probes, 1).unwrap();
        assert_eq!(plan.terms(), &[(ProbeId(1), r(1, 1))]);
    }

    #[test]
    fn deterministic_for_fixed_registry() {
        let p1 = set(&[0, 1, 2]);
        let p2 = set(&[1]);
        let p3 = set(&[2, 3]);
        let probes = vec![(ProbeId(4), &p1), (ProbeId(7), &p2), (ProbeId(9), &p3)];
        let a = derive_plan(&set(&[0, 1]), &probes, 4);
        let b = derive_plan(&set(&[0, 1]), &probes, 4);
        assert_eq!(a, b);
    }

    /// Exhaustive oracle for small instances: search every coefficient
    /// combination with denominator <= 4 and numerator magnitude <= 4,
    /// using plain integer arithmetic scaled by the common denominator 12.
    /// Complete for systems of up to 3 probes, where pivot denominators
    /// cannot exceed the largest 0/1 minor (2).
    pub(super) fn brute_force_solvable(
        request: &BTreeSet<usize>,
        probes: &[&BTreeSet<usize>],
        leaf_count: usize,
    ) -> Option<Vec<Rational64>> {
        // candidate coefficients scaled by the common denominator 12:
        // every p/q with q in 1..=4 and |p| <= 4
        let mut candidates: Vec<i64> = Vec::new();
        for q in 1..=4i64 {
            for p in -4..=4i64 {
                candidates.push(p * (12 / q));
            }
        }
        candidates.sort_unstable();
        candidates.dedup();

        let cols = probes.len();
        assert!(cols <= 3, "grid oracle is only exhaustive for <= 3 probes");
        let target: Vec<i64> = (0..leaf_count)
            .map(|row| if request.contains(&row) { 12 } else { 0 })
            .collect();
        let mut pick = vec![0i64; cols];
        fn rec(
            col: usize,
            cols: usize,
            candidates: &[i64],
            probes: &[&BTreeSet<usize>],
            target: &[i64],
            pick: &mut Vec<i64>,
        ) -> Option<Vec<i64>> {
            if col == cols {
                let mut acc = vec![0i64; target.len()];
                for (c, &coef) in pick.iter().enumerate() {
                    for &row in probes[c].iter() {
                        acc[row] += coef;
                    }
                }
                return (acc == target).then(|| pick.clone());
            }
            for &cand in candidates {
                pick[col] = cand;
                if let Some(hit) = rec(col + 1, cols, candidates, probes, target, pick) {
                    return Some(hit);
                }
            }
            None
        }
        rec(0, cols, &candidates, probes, &target, &mut pick)
            .map(|v| v.into_iter().map(|s| Rational64::new(s, 12)).collect())
    }

    /// Independent solvability oracle: compare rank(A) with rank(A|b) using
    /// fraction-free (Bareiss) elimination over plain integers.
    pub(super) fn rank_solvable(
        request: &BTreeSet<usize>,
        probes: &[&BTreeSet<usize>],
        leaf_count: usize,
    ) -> bool {
        fn rank(mut m: Vec<Vec<i128>>) -> usize {
            let rows = m.len();
            if rows == 0 {
                return 0;
            }
            let cols = m[0].len();
            let mut rank = 0;
            let mut prev = 1i128;
            for col in 0..cols {
                let Some(p) = (rank..rows).find(|&r| m[r][col] != 0) else { continue };
                m.swap(rank, p);
                for r in 0..rows {
                    if r == rank {
                        continue;
                    }
                    for c in (0..cols).rev() {
                        m[r][c] = (m[r][c] * m[rank][col] - m[r][col] * m[rank][c]) / prev;
                    }
                }
                prev = m[rank][col];
                rank += 1;
                if rank == rows {
                    break;
                }
            }
            rank
        }

        let cols = probes.len();
        let mut a = vec![vec![0i128; cols]; leaf_count];
        let mut ab = vec![vec![0i128; cols + 1]; leaf_count];
        for (c, leaves) in probes.iter().enumerate() {
            for &r in leaves.iter() {
                a[r][c] = 1;
                ab[r][c] = 1;
            }
        }
        for &r in request.iter() {
            ab[r][cols] = 1;
        }
        rank(a) == rank(ab)
    }

    #[test]
    fn solver_matches_oracles_on_random_instances() {
        let mut rng = 0x5eed_cafe_u64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            rng
        };
        let mut solvable = 0;
        for _ in 0..400 {
            let leaf_count = 2 + (next() % 7) as usize; // 2..=8
            let n_probes = 1 + (next() % 6) as usize; // 1..=6
            let mut sets: Vec<BTreeSet<usize>> = Vec::new();
            for _ in 0..n_probes {
                let mut s = BTreeSet::new();
                while s.is_empty() {
                    for leaf in 0..leaf_count {
                        if next() % 2 == 0 {
                            s.insert(leaf);
                        }
                    }
                }
                sets.push(s);
            }
            let mut request = BTreeSet::new();
            while request.is_empty() {
                for leaf in 0..leaf_count {
                    if next() % 3 == 0 {
                        request.insert(leaf);
                    }
                }
            }
            let probes: Vec<(ProbeId, &BTreeSet<usize>)> = sets
                .iter()
                .enumerate()
                .map(|(i, s)| (ProbeId(i as u64 + 1), s))
                .collect();
            let refs: Vec<&BTreeSet<usize>> = sets.iter().collect();

            let plan = derive_plan(&request, &probes, leaf_count);
            assert_eq!(
                plan.is_some(),
                rank_solvable(&request, &refs, leaf_count),
                "solvability disagreement: request={request:?} probes={sets:?}"
            );
            if let Some(plan) = &plan {
                solvable += 1;
                assert!(verify_plan(plan, &request, &probes, leaf_count));
            }
            if n_probes <= 3 {
                let brute = brute_force_solvable(&request, &refs, leaf_count);
                assert_eq!(plan.is_some(), brute.is_some());
            }
        }
        // sanity: the generator produces a healthy mix
        assert!(solvable > 50, "only {solvable} solvable instances");
    }
}
