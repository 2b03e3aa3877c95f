//! Graded-lexicographic multi-index sets.
//!
//! A set `M(n, alpha)` holds every exponent vector `m` in `n` variables with
//! `1 <= |m| <= alpha`. Indices of degree `d` all precede those of degree
//! `d + 1`; within a degree they are ordered lexicographically with larger
//! leading exponents first, so `(2,0) < (1,1) < (0,2)`.
//!
//! Because the ordering is graded, the set for `(n, a)` is a prefix of the
//! set for `(n, b)` whenever `a <= b`. Several routines rely on this.

use crate::error::{invalid, Result};

const NO_PARENT: usize = usize::MAX;

/// Binomial coefficient, exact in `u64` for the sizes used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc as usize
}

/// Number of exponent vectors with `1 <= |m| <= alpha` in `n` variables.
pub fn cardinality(n: usize, alpha: usize) -> usize {
    binomial(n + alpha, n) - 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    n: usize,
    alpha: usize,
    exps: Vec<u32>,
    degrees: Vec<u32>,
    // For |m| >= 2: position of m - e_var. Degree-one entries carry NO_PARENT.
    parents: Vec<(usize, usize)>,
}

impl MultiIndexSet {
    pub fn new(n: usize, alpha: usize) -> Result<Self> {
        if n == 0 {
            return invalid("multi-index set needs at least one variable");
        }
        if alpha == 0 {
            return invalid("multi-index set needs total degree at least 1");
        }
        let len = cardinality(n, alpha);
        let mut exps = Vec::with_capacity(len * n);
        let mut degrees = Vec::with_capacity(len);
        let mut current = vec![0u32; n];
        for d in 1..=alpha {
            enumerate_degree(d as u32, 0, &mut current, &mut |m| {
                exps.extend_from_slice(m);
                degrees.push(d as u32);
            });
        }
        debug_assert_eq!(degrees.len(), len);

        let mut set = MultiIndexSet {
            n,
            alpha,
            exps,
            degrees,
            parents: Vec::with_capacity(len),
        };
        let mut scratch = vec![0u32; n];
        for i in 0..len {
            scratch.copy_from_slice(set.get(i));
            let var = scratch.iter().position(|&e| e > 0).expect("nonzero index");
            if set.degrees[i] == 1 {
                set.parents.push((NO_PARENT, var));
            } else {
                scratch[var] -= 1;
                let p = set.position(&scratch).expect("parent is in the set");
                set.parents.push((p, var));
            }
        }
        Ok(set)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    /// Exponent vector at position `i`.
    pub fn get(&self, i: usize) -> &[u32] {
        &self.exps[i * self.n..(i + 1) * self.n]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i] as usize
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.exps.chunks_exact(self.n)
    }

    /// Number of entries with degree at most `d` (a prefix length).
    pub fn count_up_to(&self, d: usize) -> usize {
        cardinality(self.n, d.min(self.alpha))
    }

    /// Positions of all entries of exactly degree `d`.
    pub fn degree_range(&self, d: usize) -> std::ops::Range<usize> {
        if d == 0 || d > self.alpha {
            return 0..0;
        }
        cardinality(self.n, d - 1)..cardinality(self.n, d)
    }

    /// Position of the unit index `e_k`.
    pub fn unit(&self, k: usize) -> usize {
        k
    }

    pub(crate) fn parent(&self, i: usize) -> Option<(usize, usize)> {
        let (p, v) = self.parents[i];
        if p == NO_PARENT {
            None
        } else {
            Some((p, v))
        }
    }

    pub(crate) fn first_var(&self, i: usize) -> usize {
        self.parents[i].1
    }

    /// Position of an exponent vector, computed arithmetically from the
    /// ordering rather than looked up.
    pub fn position(&self, m: &[u32]) -> Option<usize> {
        if m.len() != self.n {
            return None;
        }
        let d: u32 = m.iter().sum();
        if d == 0 || d as usize > self.alpha {
            return None;
        }
        let d = d as usize;
        let mut pos = cardinality(self.n, d - 1);
        let mut remaining = d;
        for (i, &mi) in m.iter().enumerate().take(self.n - 1) {
            let mi = mi as usize;
            let vars_left = self.n - i - 1;
            // vectors whose i-th entry exceeds mi come first
            if remaining > mi {
                pos += binomial(remaining - mi - 1 + vars_left, vars_left);
            }
            remaining -= mi;
        }
        Some(pos)
    }

    /// Position of `a + b`, if it lies within the set.
    pub fn sum_position(&self, a: usize, b: usize, scratch: &mut [u32]) -> Option<usize> {
        if self.degrees[a] + self.degrees[b] > self.alpha as u32 {
            return None;
        }
        for ((s, x), y) in scratch.iter_mut().zip(self.get(a)).zip(self.get(b)) {
            *s = x + y;
        }
        self.position(scratch)
    }
}

fn enumerate_degree(d: u32, at: usize, current: &mut [u32], emit: &mut impl FnMut(&[u32])) {
    let n = current.len();
    if at == n - 1 {
        current[at] = d;
        emit(current);
        current[at] = 0;
        return;
    }
    for first in (0..=d).rev() {
        current[at] = first;
        enumerate_degree(d - first, at + 1, current, emit);
    }
    current[at] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(n: usize, alpha: usize) -> usize {
        // nested loops over each exponent in 0..=alpha
        let mut count = 0;
        let mut m = vec![0usize; n];
        loop {
            let s: usize = m.iter().sum();
            if (1..=alpha).contains(&s) {
                count += 1;
            }
            let mut k = 0;
            loop {
                if k == n {
                    return count;
                }
                m[k] += 1;
                if m[k] <= alpha {
                    break;
                }
                m[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn two_by_two_layout() {
        let set = MultiIndexSet::new(2, 2).unwrap();
        let got: Vec<Vec<u32>> = set.iter().map(|m| m.to_vec()).collect();
        assert_eq!(got, vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(set.len(), binomial(4, 2) - 1);
    }

    #[test]
    fn single_linear_monomial() {
        let set = MultiIndexSet::new(1, 1).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.get(0), &[1]);
    }

    #[test]
    fn cardinality_matches_enumeration() {
        assert_eq!(MultiIndexSet::new(4, 3).unwrap().len(), 34);
        for n in 1..=5 {
            for alpha in 1..=5 {
                assert_eq!(MultiIndexSet::new(n, alpha).unwrap().len(), brute_force(n, alpha));
            }
        }
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(MultiIndexSet::new(0, 2).is_err());
        assert!(MultiIndexSet::new(3, 0).is_err());
    }

    #[test]
    fn ordering_is_graded_lex_without_duplicates() {
        let set = MultiIndexSet::new(3, 4).unwrap();
        for i in 1..set.len() {
            let (a, b) = (set.get(i - 1), set.get(i));
            let (da, db) = (set.degree(i - 1), set.degree(i));
            assert!(da < db || (da == db && a > b), "{a:?} !< {b:?}");
        }
    }

    #[test]
    fn position_inverts_enumeration() {
        let set = MultiIndexSet::new(4, 5).unwrap();
        for (i, m) in set.iter().enumerate() {
            assert_eq!(set.position(m), Some(i));
        }
        assert_eq!(set.position(&[0, 0, 0, 0]), None);
        assert_eq!(set.position(&[6, 0, 0, 0]), None);
    }

    #[test]
    fn prefix_property() {
        let small = MultiIndexSet::new(3, 2).unwrap();
        let big = MultiIndexSet::new(3, 4).unwrap();
        for i in 0..small.len() {
            assert_eq!(small.get(i), big.get(i));
        }
        assert_eq!(big.count_up_to(2), small.len());
    }
}
