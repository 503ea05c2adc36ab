//! Dense two-phase tableau simplex for small LPs. Variables with finite
//! lower bounds are shifted, upper bounds become explicit rows, fixed
//! variables are substituted out and free variables are split.

use super::Sense;

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-9;
const PHASE1_EPS: f64 = 1e-7;
/// Switch from Dantzig pricing to Bland's rule after this many pivots
/// without objective progress.
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone)]
pub(crate) struct LpRow {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LpProblem {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

/// How an original variable is expressed through tableau columns:
/// x = constant + Σ coef·col.
#[derive(Debug, Clone)]
struct Substitution {
    constant: f64,
    cols: Vec<(usize, f64)>,
}

pub(crate) fn solve_lp(p: &LpProblem) -> LpOutcome {
    let n = p.cost.len();
    let mut subs = Vec::with_capacity(n);
    let mut ncols = 0usize;
    // Extra rows: col <= width for doubly bounded variables.
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (p.lower[j], p.upper[j]);
        if lo > hi + PIVOT_EPS {
            return LpOutcome::Infeasible;
        }
        let sub = if lo.is_finite() && hi.is_finite() && (hi - lo).abs() <= PIVOT_EPS {
            Substitution {
                constant: lo,
                cols: Vec::new(),
            }
        } else if lo.is_finite() {
            let c = ncols;
            ncols += 1;
            if hi.is_finite() {
                bound_rows.push((c, hi - lo));
            }
            Substitution {
                constant: lo,
                cols: vec![(c, 1.0)],
            }
        } else if hi.is_finite() {
            let c = ncols;
            ncols += 1;
            Substitution {
                constant: hi,
                cols: vec![(c, -1.0)],
            }
        } else {
            let c = ncols;
            ncols += 2;
            Substitution {
                constant: 0.0,
                cols: vec![(c, 1.0), (c + 1, -1.0)],
            }
        };
        subs.push(sub);
    }

    // Rows over structural columns, rhs made nonnegative.
    let mut rows: Vec<(Vec<f64>, Sense, f64)> = Vec::with_capacity(p.rows.len() + bound_rows.len());
    for r in &p.rows {
        let mut dense = vec![0.0; ncols];
        let mut rhs = r.rhs;
        for &(j, a) in &r.terms {
            rhs -= a * subs[j].constant;
            for &(c, k) in &subs[j].cols {
                dense[c] += a * k;
            }
        }
        if dense.iter().all(|a| a.abs() <= PIVOT_EPS) {
            let ok = match r.sense {
                Sense::Le => rhs >= -PHASE1_EPS,
                Sense::Ge => rhs <= PHASE1_EPS,
                Sense::Eq => rhs.abs() <= PHASE1_EPS,
            };
            if !ok {
                return LpOutcome::Infeasible;
            }
            continue;
        }
        rows.push((dense, r.sense, rhs));
    }
    for (c, width) in bound_rows {
        let mut dense = vec![0.0; ncols];
        dense[c] = 1.0;
        rows.push((dense, Sense::Le, width));
    }
    for (dense, sense, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            dense.iter_mut().for_each(|a| *a = -*a);
            *rhs = -*rhs;
            *sense = match *sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }

    let mut cost = vec![0.0; ncols];
    let mut offset = 0.0;
    for (cj, sub) in p.cost.iter().zip(&subs) {
        offset += cj * sub.constant;
        for &(c, k) in &sub.cols {
            cost[c] += cj * k;
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let width = ncols + n_slack + n_art;
    let art_start = ncols + n_slack;
    let mut tab = Tableau::new(m, width);
    let mut slack = ncols;
    let mut art = art_start;
    for (i, (dense, sense, rhs)) in rows.iter().enumerate() {
        tab.row_mut(i)[..ncols].copy_from_slice(dense);
        tab.rhs[i] = *rhs;
        match sense {
            Sense::Le => {
                tab.set(i, slack, 1.0);
                tab.basis[i] = slack;
                slack += 1;
            }
            Sense::Ge => {
                tab.set(i, slack, -1.0);
                slack += 1;
                tab.set(i, art, 1.0);
                tab.basis[i] = art;
                art += 1;
            }
            Sense::Eq => {
                tab.set(i, art, 1.0);
                tab.basis[i] = art;
                art += 1;
            }
        }
    }

    if n_art > 0 {
        let mut phase1 = vec![0.0; width];
        phase1[art_start..].iter_mut().for_each(|c| *c = 1.0);
        match tab.optimize(&phase1, width) {
            Pivoted::Optimal => {}
            Pivoted::Unbounded => unreachable!("phase one is bounded below"),
        }
        let infeas: f64 = (0..m)
            .filter(|&i| tab.basis[i] >= art_start)
            .map(|i| tab.rhs[i])
            .sum();
        let scale = 1.0 + tab.rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        if infeas > PHASE1_EPS * scale {
            return LpOutcome::Infeasible;
        }
        // Drive remaining artificials out of the basis, dropping redundant rows.
        let mut i = 0;
        while i < tab.m {
            if tab.basis[i] >= art_start {
                let col = (0..art_start).find(|&j| tab.get(i, j).abs() > PIVOT_EPS);
                match col {
                    Some(j) => {
                        tab.pivot(i, j);
                        i += 1;
                    }
                    None => tab.remove_row(i),
                }
            } else {
                i += 1;
            }
        }
    }

    let mut phase2 = vec![0.0; width];
    phase2[..ncols].copy_from_slice(&cost);
    match tab.optimize(&phase2, art_start) {
        Pivoted::Unbounded => return LpOutcome::Unbounded,
        Pivoted::Optimal => {}
    }

    let mut cols = vec![0.0; ncols];
    for i in 0..tab.m {
        if tab.basis[i] < ncols {
            cols[tab.basis[i]] = tab.rhs[i].max(0.0);
        }
    }
    let x: Vec<f64> = subs
        .iter()
        .map(|s| s.constant + s.cols.iter().map(|&(c, k)| k * cols[c]).sum::<f64>())
        .collect();
    let objective = offset + cost.iter().zip(&cols).map(|(c, v)| c * v).sum::<f64>();
    LpOutcome::Optimal { x, objective }
}

enum Pivoted {
    Optimal,
    Unbounded,
}

struct Tableau {
    m: usize,
    width: usize,
    a: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn new(m: usize, width: usize) -> Self {
        Self {
            m,
            width,
            a: vec![0.0; m * width],
            rhs: vec![0.0; m],
            basis: vec![0; m],
        }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.width + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.width + j] = v;
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.a[i * self.width..(i + 1) * self.width]
    }

    fn remove_row(&mut self, i: usize) {
        let w = self.width;
        self.a.drain(i * w..(i + 1) * w);
        self.rhs.remove(i);
        self.basis.remove(i);
        self.m -= 1;
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let piv = self.get(r, c);
        {
            let row = &mut self.a[r * w..(r + 1) * w];
            row.iter_mut().for_each(|v| *v /= piv);
        }
        self.rhs[r] /= piv;
        let pivot_row: Vec<f64> = self.a[r * w..(r + 1) * w].to_vec();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.a[i * w + c];
            if f.abs() <= 1e-14 {
                continue;
            }
            let row = &mut self.a[i * w..(i + 1) * w];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            row[c] = 0.0;
            self.rhs[i] -= f * pivot_rhs;
            if self.rhs[i].abs() < 1e-12 {
                self.rhs[i] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost` over columns `0..enterable`.
    fn optimize(&mut self, cost: &[f64], enterable: usize) -> Pivoted {
        let mut streak = 0usize;
        let mut last_obj = f64::INFINITY;
        let iteration_cap = 50_000 + 200 * (self.m + self.width);
        for _ in 0..iteration_cap {
            // Reduced costs d_j = c_j - c_B · column_j.
            let mut reduced = cost[..enterable].to_vec();
            for i in 0..self.m {
                let cb = cost[self.basis[i]];
                if cb == 0.0 {
                    continue;
                }
                let row = &self.a[i * self.width..i * self.width + enterable];
                for (d, a) in reduced.iter_mut().zip(row) {
                    *d -= cb * a;
                }
            }
            let bland = streak >= DEGENERATE_STREAK;
            let entering = if bland {
                reduced.iter().position(|&d| d < -COST_EPS)
            } else {
                reduced
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| d < -COST_EPS)
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j)
            };
            let Some(c) = entering else {
                return Pivoted::Optimal;
            };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.get(i, c);
                if a > PIVOT_EPS {
                    let ratio = self.rhs[i] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            let better = ratio < lr - 1e-12
                                || ((ratio - lr).abs() <= 1e-12
                                    && if bland {
                                        self.basis[i] < self.basis[li]
                                    } else {
                                        a > self.get(li, c)
                                    });
                            if better {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Pivoted::Unbounded;
            };
            self.pivot(r, c);

            let obj: f64 = (0..self.m).map(|i| cost[self.basis[i]] * self.rhs[i]).sum();
            if obj < last_obj - 1e-12 {
                streak = 0;
                last_obj = obj;
            } else {
                streak += 1;
            }
        }
        // Bland's rule terminates; reaching the cap means numerical trouble.
        Pivoted::Optimal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(cost: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, rows: Vec<LpRow>) -> LpProblem {
        LpProblem {
            cost,
            lower,
            upper,
            rows,
        }
    }

    fn row(terms: &[(usize, f64)], sense: Sense, rhs: f64) -> LpRow {
        LpRow {
            terms: terms.to_vec(),
            sense,
            rhs,
        }
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  -> 36 at (2, 6)
        let p = lp(
            vec![-3.0, -5.0],
            vec![0.0, 0.0],
            vec![f64::INFINITY; 2],
            vec![
                row(&[(0, 1.0)], Sense::Le, 4.0),
                row(&[(1, 2.0)], Sense::Le, 12.0),
                row(&[(0, 3.0), (1, 2.0)], Sense::Le, 18.0),
            ],
        );
        match solve_lp(&p) {
            LpOutcome::Optimal { x, objective } => {
                assert!((objective + 36.0).abs() < 1e-9);
                assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + 2y s.t. x + y = 10, x >= 2, y >= 3 (as rows) -> x=7,y=3 => 13
        let p = lp(
            vec![1.0, 2.0],
            vec![0.0, 0.0],
            vec![f64::INFINITY; 2],
            vec![
                row(&[(0, 1.0), (1, 1.0)], Sense::Eq, 10.0),
                row(&[(0, 1.0)], Sense::Ge, 2.0),
                row(&[(1, 1.0)], Sense::Ge, 3.0),
            ],
        );
        assert!(matches!(solve_lp(&p), LpOutcome::Optimal { objective, .. } if (objective - 13.0).abs() < 1e-9));
    }

    #[test]
    fn bounds_free_and_fixed() {
        // min -x + y, x in [-5, 2], y free, y >= x - 1, z fixed at 3 with cost 1
        let p = lp(
            vec![-1.0, 1.0, 1.0],
            vec![-5.0, f64::NEG_INFINITY, 3.0],
            vec![2.0, f64::INFINITY, 3.0],
            vec![row(&[(1, 1.0), (0, -1.0)], Sense::Ge, -1.0)],
        );
        match solve_lp(&p) {
            LpOutcome::Optimal { x, objective } => {
                // objective -x + (x - 1) + 3 = 2 for any x
                assert!((objective - 2.0).abs() < 1e-9, "{objective} {x:?}");
                assert_eq!(x[2], 3.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let inf = lp(
            vec![1.0],
            vec![0.0],
            vec![1.0],
            vec![row(&[(0, 1.0)], Sense::Ge, 2.0)],
        );
        assert_eq!(solve_lp(&inf), LpOutcome::Infeasible);
        let unb = lp(
            vec![-1.0],
            vec![0.0],
            vec![f64::INFINITY],
            vec![row(&[(0, 1.0)], Sense::Ge, 2.0)],
        );
        assert_eq!(solve_lp(&unb), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let p = lp(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![f64::INFINITY; 2],
            vec![
                row(&[(0, 1.0), (1, 1.0)], Sense::Eq, 4.0),
                row(&[(0, 2.0), (1, 2.0)], Sense::Eq, 8.0),
            ],
        );
        assert!(matches!(solve_lp(&p), LpOutcome::Optimal { objective, .. } if (objective - 4.0).abs() < 1e-9));
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example, which cycles under naive Dantzig pricing.
        let p = lp(
            vec![-0.75, 150.0, -0.02, 6.0],
            vec![0.0; 4],
            vec![f64::INFINITY; 4],
            vec![
                row(&[(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)], Sense::Le, 0.0),
                row(&[(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)], Sense::Le, 0.0),
                row(&[(2, 1.0)], Sense::Le, 1.0),
            ],
        );
        assert!(matches!(solve_lp(&p), LpOutcome::Optimal { objective, .. } if (objective + 0.05).abs() < 1e-9));
    }
}
