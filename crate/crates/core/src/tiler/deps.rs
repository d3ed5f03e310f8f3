//! Constant-distance dependence analysis.

use crate::scop::{AccessRelation, Scop};

use super::TileError;

/// A loop-carried dependence between two accesses of one array, oriented
/// so that `distance` is lexicographically positive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dependence {
    pub array: String,
    pub source: usize,
    pub sink: usize,
    pub distance: Vec<i64>,
}

enum Solution {
    None,
    Unique(Vec<i64>),
    Many,
}

/// Solve `L·δ = rhs` over the integers for a small dense matrix.
fn solve(l: &[Vec<i64>], rhs: &[i64], cols: usize) -> Solution {
    // Fraction-free elimination on the augmented matrix.
    let mut m: Vec<Vec<i128>> = l
        .iter()
        .zip(rhs)
        .map(|(row, r)| row.iter().map(|&x| x as i128).chain([*r as i128]).collect())
        .collect();
    let mut pivots = Vec::new();
    let mut row = 0;
    for c in 0..cols {
        let Some(p) = (row..m.len()).find(|&r| m[r][c] != 0) else {
            continue;
        };
        m.swap(row, p);
        for r in 0..m.len() {
            if r != row && m[r][c] != 0 {
                let (a, b) = (m[row][c], m[r][c]);
                for k in 0..=cols {
                    m[r][k] = m[r][k] * a - m[row][k] * b;
                }
            }
        }
        pivots.push((row, c));
        row += 1;
    }
    if m[row..].iter().any(|r| r[cols] != 0) {
        return Solution::None;
    }
    if pivots.len() < cols {
        return Solution::Many;
    }
    let mut x = vec![0i64; cols];
    for (r, c) in pivots {
        if m[r][cols] % m[r][c] != 0 {
            return Solution::None;
        }
        x[c] = (m[r][cols] / m[r][c]) as i64;
    }
    Solution::Unique(x)
}

fn matrix(a: &AccessRelation, vars: &[String]) -> Vec<Vec<i64>> {
    a.indices
        .iter()
        .map(|e| vars.iter().map(|v| e.coeff(v)).collect())
        .collect()
}

/// All loop-carried dependences with constant distance vectors.
///
/// Pairs on one array where at least one side writes are considered. Two
/// accesses with different linear parts, or a non-injective subscript
/// that leaves the distance undetermined, yield `NonConstantDependence`.
pub fn dependences(s: &Scop) -> Result<Vec<Dependence>, TileError> {
    let vars = s.loop_vars();
    let d = vars.len();
    let mut out = Vec::new();
    for (ia, a) in s.accesses.iter().enumerate() {
        for (ib, b) in s.accesses.iter().enumerate().skip(ia) {
            if a.array != b.array || !(a.is_write() || b.is_write()) {
                continue;
            }
            if !a.same_shape(b) {
                return Err(TileError::NonConstantDependence {
                    array: a.array.clone(),
                    detail: format!("subscripts {:?} and {:?} differ in more than a constant", show(a), show(b)),
                });
            }
            // Iteration x touches a at L·x + ca, iteration y touches b at
            // L·y + cb; equal when L·(y − x) = ca − cb.
            let rhs: Vec<i64> = a.offsets().iter().zip(b.offsets()).map(|(x, y)| x - y).collect();
            match solve(&matrix(a, &vars), &rhs, d) {
                Solution::None => {}
                Solution::Many => {
                    return Err(TileError::NonConstantDependence {
                        array: a.array.clone(),
                        detail: format!("subscript {:?} is not injective in the loop indices", show(a)),
                    })
                }
                Solution::Unique(delta) => {
                    if delta.iter().all(|&x| x == 0) {
                        continue;
                    }
                    // δ = y − x goes from a to b; flip when b runs first.
                    let lex_pos = delta.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0);
                    let (source, sink, distance) = if lex_pos {
                        (ia, ib, delta)
                    } else {
                        (ib, ia, delta.iter().map(|x| -x).collect())
                    };
                    out.push(Dependence {
                        array: a.array.clone(),
                        source,
                        sink,
                        distance,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn show(a: &AccessRelation) -> String {
    let idx: Vec<String> = a.indices.iter().map(|e| e.to_string()).collect();
    format!("{}[{}]", a.array, idx.join(", "))
}

/// Permutations of the intra-tile loops, as lists of loop positions
/// (outermost intra-tile loop first), in lexicographic order.
pub fn all_permutations(d: usize) -> Vec<Vec<usize>> {
    fn go(rest: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        for k in 0..rest.len() {
            let x = rest.remove(k);
            cur.push(x);
            go(rest, cur, out);
            cur.pop();
            rest.insert(k, x);
        }
    }
    let mut out = Vec::new();
    go(&mut (0..d).collect(), &mut Vec::new(), &mut out);
    out
}

/// Intra-tile permutations under which rectangular tiling keeps every
/// dependence.
///
/// Tiling is legal exactly when every distance vector is componentwise
/// non-negative; the tiled band is then fully permutable. A single loop is
/// never reordered by tiling, so depth 1 always yields the identity.
pub fn legal_permutations(s: &Scop, sizes: &[i64]) -> Result<Vec<Vec<usize>>, TileError> {
    let d = s.depth();
    if sizes.len() != d {
        return Err(TileError::BadSizes(format!(
            "{} tile sizes for a nest of depth {d}",
            sizes.len()
        )));
    }
    if d == 1 {
        return Ok(vec![vec![0]]);
    }
    for dep in dependences(s)? {
        if dep.distance.iter().any(|&x| x < 0) {
            return Err(TileError::NoLegalTiling {
                array: dep.array,
                distance: dep.distance,
            });
        }
    }
    Ok(all_permutations(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::load;

    #[test]
    fn running_example_allows_every_permutation() {
        let s = load(
            "param N\narray A float[N][N][N]\narray V float[N][N][N]\n\
             loop i = 1 .. N-2 { loop j = 1 .. N-2 { loop k = 1 .. N-2 {\n\
             V[i, k, j] = V[i, k, j] + A[i, j, k] + A[i+1, j+1, k+1]; } } }",
        )
        .unwrap();
        assert!(dependences(&s).unwrap().is_empty());
        assert_eq!(legal_permutations(&s, &[32, 32, 32]).unwrap().len(), 6);
    }

    #[test]
    fn seidel_is_not_tileable() {
        let s = load(
            "param N\narray A float[N][N]\nloop i = 1 .. N-2 { loop j = 1 .. N-2 {\n\
             A[i, j] = (A[i-1, j-1] + A[i-1, j+1] + A[i+1, j] + A[i, j]) / 4.0; } }",
        )
        .unwrap();
        let deps = dependences(&s).unwrap();
        assert!(deps.iter().any(|d| d.distance == vec![1, -1]));
        assert!(matches!(
            legal_permutations(&s, &[4, 4]),
            Err(TileError::NoLegalTiling { .. })
        ));
    }

    #[test]
    fn forward_carried_dependence_keeps_all_orders() {
        let s = load("param N\narray A float[N][N]\nloop i = 1 .. N-1 { loop j = 1 .. N-1 { A[i, j] = A[i-1, j] + A[i, j-1]; } }")
            .unwrap();
        let mut dists: Vec<_> = dependences(&s).unwrap().into_iter().map(|d| d.distance).collect();
        dists.sort();
        assert_eq!(dists, vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(legal_permutations(&s, &[4, 4]).unwrap().len(), 2);
    }

    #[test]
    fn one_dimensional_recurrence_is_tileable() {
        let s = load("param N\narray A float[N]\nloop i = 1 .. N-1 { A[i] = A[i-1]; }").unwrap();
        assert_eq!(dependences(&s).unwrap()[0].distance, vec![1]);
        assert_eq!(legal_permutations(&s, &[8]).unwrap(), vec![vec![0]]);
    }

    #[test]
    fn non_constant_distances_are_flagged() {
        let s = load("param N\narray A float[N][N]\nloop i = 0 .. N-1 { loop j = 0 .. N-1 { A[i, j] = A[j, i]; } }")
            .unwrap();
        assert!(matches!(legal_permutations(&s, &[4, 4]), Err(TileError::NonConstantDependence { .. })));
        let s = load("param N\narray A float[N]\nloop i = 0 .. N-1 { loop j = 0 .. N-1 { A[i] = A[i] + 1.0; } }")
            .unwrap();
        assert!(matches!(dependences(&s), Err(TileError::NonConstantDependence { .. })));
        let one = load("param N\narray A float[2*N]\nloop i = 0 .. N-1 { A[2*i] = A[i]; }").unwrap();
        assert_eq!(legal_permutations(&one, &[4]).unwrap(), vec![vec![0]]);
    }

    #[test]
    fn permutations_are_lexicographic() {
        assert_eq!(
            all_permutations(3),
            vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]]
        );
    }

    #[test]
    fn solver_agrees_with_search() {
        // Brute force over a small window for random 2x2 systems.
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) % 7) as i64 - 3
        };
        for _ in 0..400 {
            let l = vec![vec![next(), next()], vec![next(), next()]];
            let rhs = vec![next(), next()];
            let mut found = Vec::new();
            for a in -40..=40 {
                for b in -40..=40 {
                    if (0..2).all(|r| l[r][0] * a + l[r][1] * b == rhs[r]) {
                        found.push(vec![a, b]);
                    }
                }
            }
            match solve(&l, &rhs, 2) {
                Solution::None => assert!(found.is_empty(), "{l:?} {rhs:?}"),
                Solution::Unique(x) => assert_eq!(found, vec![x]),
                Solution::Many => assert_ne!(found.len(), 1, "{l:?} {rhs:?}"),
            }
        }
    }
}
