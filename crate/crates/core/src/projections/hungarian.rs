use crate::error::{Error, Result};
use crate::ops::Mat;

/// A one-to-one assignment: row `i` is matched to column `self.0[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn from_vec(cols: Vec<usize>) -> Result<Self> {
        let n = cols.len();
        let mut seen = vec![false; n];
        for &c in &cols {
            if c >= n || std::mem::replace(&mut seen[c], true) {
                return Err(Error::invalid(format!("{cols:?} is not a permutation")));
            }
        }
        Ok(Self(cols))
    }

    /// Reads a 0/1 permutation matrix.
    pub fn from_matrix(m: &Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("permutation matrix must be square"));
        }
        let mut cols = Vec::with_capacity(m.nrows());
        for row in m.row_iter() {
            if row.iter().any(|v| *v != 0.0 && *v != 1.0) || row.sum() != 1.0 {
                return Err(Error::invalid("rows must contain exactly one 1"));
            }
            cols.push(row.iter().position(|v| *v == 1.0).unwrap());
        }
        Self::from_vec(cols)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn get(&self, row: usize) -> usize {
        self.0[row]
    }

    pub fn to_matrix(&self) -> Mat {
        let n = self.0.len();
        let mut m = Mat::zeros(n, n);
        for (i, &j) in self.0.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Self(inv)
    }

    /// `Σ_i score[i, π(i)]`.
    pub fn score(&self, score: &Mat) -> f64 {
        self.0.iter().enumerate().map(|(i, &j)| score[(i, j)]).sum()
    }
}

/// Permutation maximizing `Σ score[i, π(i)]`.
///
/// Among several optimal permutations the lexicographically smallest column
/// vector is returned.
pub fn hungarian(score: &Mat) -> Result<Permutation> {
    if !score.is_square() {
        return Err(Error::invalid("hungarian expects a square score matrix"));
    }
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("hungarian expects finite scores"));
    }
    let n = score.nrows();
    if n == 0 {
        return Ok(Permutation(Vec::new()));
    }
    let cost = -score;
    let (assignment, u, v) = shortest_augmenting_path(&cost);

    // Every optimal assignment uses only edges that are tight under an optimal
    // dual, so the lexicographic tie-break reduces to a search over the tight
    // subgraph.
    let scale = score.amax().max(1.0);
    let tol = 1e-10 * scale * n as f64;
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| cost[(i, j)] - u[i] - v[j] <= tol)
                .collect()
        })
        .collect();
    if tight.iter().all(|cols| cols.len() == 1) {
        return Ok(Permutation(assignment));
    }
    Ok(Permutation(lexicographic_perfect_matching(
        &tight, assignment,
    )))
}

/// O(n³) successive shortest paths with potentials; minimizes `cost`.
/// Returns the assignment and the row/column duals.
fn shortest_augmenting_path(cost: &Mat) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.nrows();
    // 1-based with a virtual column 0, following the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

/// Lexicographically smallest perfect matching of the bipartite graph `adj`,
/// which is known to contain `fallback`.
fn lexicographic_perfect_matching(adj: &[Vec<usize>], fallback: Vec<usize>) -> Vec<usize> {
    let n = adj.len();
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut col_taken = vec![false; n];
    for i in 0..n {
        let choice = adj[i].iter().copied().find(|&j| {
            if col_taken[j] {
                return false;
            }
            col_taken[j] = true;
            let ok = has_perfect_matching(adj, i + 1, &col_taken);
            col_taken[j] = false;
            ok
        });
        match choice {
            Some(j) => {
                col_taken[j] = true;
                fixed.push(j);
            }
            // Only reachable if the tolerance made the tight graph inconsistent.
            None => return fallback,
        }
    }
    fixed
}

/// Whether rows `first_row..` can be matched into the columns not yet taken.
fn has_perfect_matching(adj: &[Vec<usize>], first_row: usize, col_taken: &[bool]) -> bool {
    let n = adj.len();
    let mut match_col: Vec<Option<usize>> = vec![None; n];
    for row in first_row..n {
        let mut visited = vec![false; n];
        if !augment(adj, row, col_taken, &mut visited, &mut match_col) {
            return false;
        }
    }
    true
}

fn augment(
    adj: &[Vec<usize>],
    row: usize,
    col_taken: &[bool],
    visited: &mut [bool],
    match_col: &mut [Option<usize>],
) -> bool {
    for &j in &adj[row] {
        if col_taken[j] || visited[j] {
            continue;
        }
        visited[j] = true;
        let free = match match_col[j] {
            None => true,
            Some(other) => augment(adj, other, col_taken, visited, match_col),
        };
        if free {
            match_col[j] = Some(row);
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(score: &Mat) -> (f64, Vec<usize>) {
        fn rec(
            score: &Mat,
            row: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<usize>,
            best: &mut (f64, Vec<usize>),
        ) {
            let n = score.nrows();
            if row == n {
                let v: f64 = cur.iter().enumerate().map(|(i, &j)| score[(i, j)]).sum();
                // Visiting in lexicographic order keeps the first optimum.
                if v > best.0 {
                    *best = (v, cur.clone());
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    cur.push(j);
                    rec(score, row + 1, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = (f64::NEG_INFINITY, Vec::new());
        rec(
            score,
            0,
            &mut vec![false; score.nrows()],
            &mut Vec::new(),
            &mut best,
        );
        best
    }

    #[test]
    fn identity_score() {
        assert_eq!(
            hungarian(&Mat::identity(4, 4)).unwrap(),
            Permutation::identity(4)
        );
    }

    #[test]
    fn two_by_two_maximum() {
        let s = Mat::from_row_slice(2, 2, &[5.0, 1.0, 2.0, 3.0]);
        assert_eq!(hungarian(&s).unwrap(), Permutation::identity(2));
    }

    #[test]
    fn all_ties_pick_identity() {
        assert_eq!(
            hungarian(&Mat::from_element(5, 5, 0.3)).unwrap(),
            Permutation::identity(5)
        );
    }

    #[test]
    fn partial_ties_pick_lexicographically_smallest() {
        // Optimal value 2 is reached by both [1, 0, 2] and [2, 0, 1].
        let s = Mat::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (_, expected) = brute_force(&s);
        assert_eq!(hungarian(&s).unwrap().as_slice(), expected.as_slice());
        assert_eq!(expected, vec![1, 0, 2]);
    }

    #[test]
    fn rejects_non_finite() {
        let s = Mat::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 0.0]);
        assert!(hungarian(&s).is_err());
    }

    #[test]
    fn random_six_by_six_matches_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let s = Mat::from_fn(6, 6, |_, _| rng.gen_range(-5.0..5.0));
            let (value, perm) = brute_force(&s);
            let got = hungarian(&s).unwrap();
            assert!((got.score(&s) - value).abs() < 1e-9);
            assert_eq!(got.as_slice(), perm.as_slice());
        }
    }

    #[test]
    fn permutation_matrix_round_trip() {
        let p = Permutation::from_vec(vec![2, 0, 1]).unwrap();
        assert_eq!(Permutation::from_matrix(&p.to_matrix()).unwrap(), p);
        assert_eq!(p.inverse().as_slice(), &[1, 2, 0]);
        assert!(Permutation::from_vec(vec![0, 0, 1]).is_err());
    }

    fn small_score() -> impl Strategy<Value = Mat> {
        (1usize..=7).prop_flat_map(|n| {
            proptest::collection::vec(-10i32..10, n * n)
                .prop_map(move |v| Mat::from_fn(n, n, |i, j| v[i * n + j] as f64))
        })
    }

    proptest! {
        #[test]
        fn optimal_and_lexicographic_on_integer_scores(s in small_score()) {
            // Integer scores produce many exact ties.
            let (value, perm) = brute_force(&s);
            let got = hungarian(&s).unwrap();
            prop_assert_eq!(got.score(&s), value);
            prop_assert_eq!(got.as_slice(), perm.as_slice());
        }

        #[test]
        fn invariant_under_row_and_column_shifts(
            s in small_score(),
            shift in -20.0f64..20.0,
            which in 0usize..7,
            by_row in any::<bool>(),
        ) {
            let n = s.nrows();
            let k = which % n;
            let mut shifted = s.clone();
            if by_row {
                shifted.row_mut(k).add_scalar_mut(shift);
            } else {
                shifted.column_mut(k).add_scalar_mut(shift);
            }
            let a = hungarian(&s).unwrap();
            let b = hungarian(&shifted).unwrap();
            prop_assert!((a.score(&s) - b.score(&s)).abs() < 1e-9);
        }
    }
}
