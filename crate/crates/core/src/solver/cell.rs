//! Piecewise quadratic functions of one variable and the exact 1D
//! total-variation dynamic programme built on them.

/// A continuous piecewise quadratic `a x^2 + b x + c` on `[lo, hi]`, with
/// interior knots where the coefficients change.
#[derive(Debug, Clone)]
pub(crate) struct Pwq {
    pub lo: f64,
    pub hi: f64,
    /// Piece boundaries, including `lo` and `hi` (possibly infinite).
    pub knots: Vec<f64>,
    pub coef: Vec<[f64; 3]>,
}

/// A quadratic term that is valid on one side of a kink.
pub(crate) trait LocalQuadratic {
    /// Kinks of the term, unsorted.
    fn kinks(&self, out: &mut Vec<f64>);
    /// Coefficients `[a, b, c]` valid on the piece containing `x`.
    fn local(&self, x: f64) -> [f64; 3];
}

impl Pwq {
    /// Sums `terms` on `[lo, hi]`.
    pub fn build(lo: f64, hi: f64, terms: &[&dyn LocalQuadratic]) -> Self {
        let mut k = Vec::with_capacity(8);
        for t in terms {
            t.kinks(&mut k);
        }
        k.retain(|&x| x > lo && x < hi && x.is_finite());
        k.sort_by(|a, b| a.total_cmp(b));
        k.dedup();
        let mut knots = Vec::with_capacity(k.len() + 2);
        knots.push(lo);
        knots.extend(k);
        knots.push(hi);
        let coef = knots
            .windows(2)
            .map(|w| {
                let m = interior_point(w[0], w[1]);
                terms.iter().fold([0.0; 3], |acc, t| {
                    let c = t.local(m);
                    [acc[0] + c[0], acc[1] + c[1], acc[2] + c[2]]
                })
            })
            .collect();
        Self { lo, hi, knots, coef }
    }

    fn piece(&self, x: f64) -> usize {
        let n = self.coef.len();
        // knots are few; linear scan is fastest
        (1..n).find(|&j| x < self.knots[j]).map_or(n - 1, |j| j - 1)
    }

    pub fn value(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return f64::INFINITY;
        }
        let c = self.coef[self.piece(x)];
        (c[0] * x + c[1]) * x + c[2]
    }

    fn d_piece(&self, j: usize, x: f64) -> f64 {
        let c = self.coef[j];
        if x.is_infinite() {
            if c[0] > 0.0 {
                return x.signum() * f64::INFINITY;
            } else if c[0] < 0.0 {
                return -x.signum() * f64::INFINITY;
            }
            return c[1];
        }
        2.0 * c[0] * x + c[1]
    }

    /// One-sided derivatives `(d-, d+)` at `x`, with `-inf`/`+inf` outside
    /// the domain.
    pub fn subdiff(&self, x: f64) -> (f64, f64) {
        let n = self.coef.len();
        let right = if x >= self.hi {
            f64::INFINITY
        } else {
            let j = (1..n).find(|&j| x < self.knots[j]).map_or(n - 1, |j| j - 1);
            self.d_piece(j, x)
        };
        let left = if x <= self.lo {
            f64::NEG_INFINITY
        } else {
            let j = (1..n).find(|&j| x <= self.knots[j]).map_or(n - 1, |j| j - 1);
            self.d_piece(j, x)
        };
        (left, right)
    }

    #[cfg(test)]
    pub fn is_convex(&self) -> bool {
        self.coef.iter().all(|c| c[0] >= 0.0)
            && self.knots[1..self.knots.len() - 1]
                .iter()
                .enumerate()
                .all(|(j, &k)| self.d_piece(j + 1, k) >= self.d_piece(j, k) - 1e-12 * (1.0 + k.abs()))
    }

    /// Minimiser of a convex instance: the point where `0` lies in the
    /// subdifferential.
    pub fn argmin_convex(&self) -> f64 {
        self.derivative().inverse(0.0)
    }

    /// Exact global minimiser. Among ties the one closest to `anchor` wins.
    pub fn global_min(&self, anchor: f64) -> f64 {
        let mut best = (f64::INFINITY, f64::INFINITY, anchor);
        let consider = |x: f64, best: &mut (f64, f64, f64)| {
            if !x.is_finite() {
                return;
            }
            let v = self.value(x);
            let tol = 1e-13 * (1.0 + v.abs());
            let d = (x - anchor).abs();
            if v < best.0 - tol || (v <= best.0 + tol && d < best.1) {
                *best = (v, d, x);
            }
        };
        for j in 0..self.coef.len() {
            let (a, b) = (self.knots[j], self.knots[j + 1]);
            consider(a, &mut best);
            consider(b, &mut best);
            let c = self.coef[j];
            if c[0] > 0.0 {
                let v = -c[1] / (2.0 * c[0]);
                if v > a && v < b {
                    consider(v, &mut best);
                }
            }
        }
        best.2
    }

    /// Local minimiser reached by descending from `x0`.
    pub fn local_min_from(&self, x0: f64) -> f64 {
        let x0 = x0.clamp(self.lo, self.hi);
        let (dl, dr) = self.subdiff(x0);
        if dl <= 0.0 && dr >= 0.0 {
            return x0;
        }
        let n = self.coef.len();
        if dr < 0.0 {
            let mut j = (1..n).find(|&j| x0 < self.knots[j]).map_or(n - 1, |j| j - 1);
            loop {
                let c = self.coef[j];
                let end = self.knots[j + 1];
                if c[0] > 0.0 {
                    let v = -c[1] / (2.0 * c[0]);
                    if v >= x0.max(self.knots[j]) && v <= end {
                        return v;
                    }
                }
                if j + 1 == n {
                    return end;
                }
                if self.d_piece(j + 1, end) >= 0.0 {
                    return end;
                }
                j += 1;
            }
        } else {
            let mut j = (1..n).find(|&j| x0 <= self.knots[j]).map_or(n - 1, |j| j - 1);
            loop {
                let c = self.coef[j];
                let start = self.knots[j];
                if c[0] > 0.0 {
                    let v = -c[1] / (2.0 * c[0]);
                    if v >= start && v <= x0 {
                        return v;
                    }
                }
                if j == 0 {
                    return start;
                }
                if self.d_piece(j - 1, start) <= 0.0 {
                    return start;
                }
                j -= 1;
            }
        }
    }

    pub fn derivative(&self) -> Pwl {
        Pwl {
            segs: (0..self.coef.len())
                .map(|j| Seg {
                    x0: self.knots[j],
                    x1: self.knots[j + 1],
                    m: 2.0 * self.coef[j][0],
                    q: self.coef[j][1],
                })
                .collect(),
        }
    }
}

fn interior_point(a: f64, b: f64) -> f64 {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => 0.5 * (a + b),
        (true, false) => a + 1.0,
        (false, true) => b - 1.0,
        (false, false) => 0.0,
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Seg {
    x0: f64,
    x1: f64,
    m: f64,
    q: f64,
}

impl Seg {
    fn at(&self, x: f64) -> f64 {
        if x.is_infinite() {
            if self.m == 0.0 {
                self.q
            } else {
                self.m.signum() * x.signum() * f64::INFINITY
            }
        } else {
            self.m * x + self.q
        }
    }
}

/// Nondecreasing piecewise linear function (jumps allowed) on the union of
/// its segments; `-inf` before and `+inf` after.
#[derive(Debug, Clone)]
pub(crate) struct Pwl {
    segs: Vec<Seg>,
}

impl Pwl {
    /// Generalised inverse: the point where the function crosses `level`.
    pub fn inverse(&self, level: f64) -> f64 {
        for s in &self.segs {
            let (g0, g1) = (s.at(s.x0), s.at(s.x1));
            if level <= g0 {
                return s.x0;
            }
            if level <= g1 {
                return if s.m > 0.0 {
                    ((level - s.q) / s.m).clamp(s.x0, s.x1)
                } else {
                    s.x0
                };
            }
        }
        self.segs.last().map_or(0.0, |s| s.x1)
    }

    /// `clamp(self, -d, d)` extended to the whole line.
    pub fn clip(&self, d: f64) -> Pwl {
        let a = self.inverse(-d);
        let b = self.inverse(d);
        let mut segs = Vec::with_capacity(self.segs.len() + 2);
        segs.push(Seg {
            x0: f64::NEG_INFINITY,
            x1: a,
            m: 0.0,
            q: -d,
        });
        if b > a {
            for s in &self.segs {
                let x0 = s.x0.max(a);
                let x1 = s.x1.min(b);
                if x1 > x0 {
                    // inside (a, b) the function already lies in [-d, d]
                    segs.push(Seg { x0, x1, m: s.m, q: s.q });
                }
            }
        }
        segs.push(Seg {
            x0: b,
            x1: f64::INFINITY,
            m: 0.0,
            q: d,
        });
        Pwl { segs }
    }

    /// Pointwise sum of `self` (defined on its support) and a function
    /// defined on the whole line.
    pub fn add_global(&self, other: &Pwl) -> Pwl {
        let mut out = Vec::with_capacity(self.segs.len() + other.segs.len());
        let mut k = 0;
        for s in &self.segs {
            let mut x = s.x0;
            while x < s.x1 {
                while k + 1 < other.segs.len() && other.segs[k].x1 <= x {
                    k += 1;
                }
                let o = other.segs[k];
                let end = s.x1.min(o.x1);
                out.push(Seg {
                    x0: x,
                    x1: end,
                    m: s.m + o.m,
                    q: s.q + o.q,
                });
                if end <= x {
                    break;
                }
                x = end;
            }
        }
        Pwl { segs: out }
    }
}

/// Minimises `sum_i f_i(x_i) + delta sum_i |x_{i+1} - x_i|` for convex
/// piecewise quadratic `f_i` by forward message passing on derivatives and
/// backward substitution.
pub(crate) fn tv_chain_argmin(cells: &[Pwq], delta: f64) -> Vec<f64> {
    let n = cells.len();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut g = cells[0].derivative();
    for cell in &cells[1..] {
        lower.push(g.inverse(-delta));
        upper.push(g.inverse(delta));
        g = cell.derivative().add_global(&g.clip(delta));
    }
    let mut x = vec![0.0; n];
    x[n - 1] = g.inverse(0.0);
    for i in (0..n - 1).rev() {
        x[i] = x[i + 1].clamp(lower[i], upper[i]);
    }
    x
}
