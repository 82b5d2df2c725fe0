//! Interval arithmetic with outward widening.
//!
//! Every primitive operation widens its result outward by one unit in the
//! last place (a few ulps for the libm-backed transcendentals), so that the
//! computed interval always contains the exact real result. This replaces
//! directed rounding and is the soundness mechanism for all delta-sat
//! reasoning built on top.

/// A closed interval `[lo, hi]` over the extended reals.
///
/// Invariant: `lo <= hi`, neither endpoint is NaN. Unbounded endpoints are
/// represented by infinities; `Interval::whole()` is the whole-line element
/// produced e.g. by division through zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

fn widen_lo(x: f64) -> f64 {
    if x.is_finite() {
        x.next_down()
    } else {
        x
    }
}

fn widen_hi(x: f64) -> f64 {
    if x.is_finite() {
        x.next_up()
    } else {
        x
    }
}

/// Endpoint product with the convention `0 * inf = 0`, which is sound for
/// interval bounds (the zero factor means the term vanishes on the set).
fn bound_mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(!lo.is_nan() && !hi.is_nan(), "NaN interval endpoint");
        assert!(lo <= hi, "interval endpoints out of order: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval::new(x, x)
    }

    pub fn whole() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        if !self.lo.is_finite() && !self.hi.is_finite() {
            return 0.0;
        }
        if !self.lo.is_finite() {
            return self.hi - 1.0;
        }
        if !self.hi.is_finite() {
            return self.lo + 1.0;
        }
        let m = 0.5 * (self.lo + self.hi);
        if m.is_finite() {
            m
        } else {
            0.5 * self.lo + 0.5 * self.hi
        }
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    /// Intersection; `None` when the intervals are disjoint.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo <= hi {
            Some(Interval { lo, hi })
        } else {
            None
        }
    }

    /// Smallest interval containing both operands.
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    fn widened(lo: f64, hi: f64) -> Interval {
        debug_assert!(!lo.is_nan() && !hi.is_nan());
        Interval {
            lo: widen_lo(lo),
            hi: widen_hi(hi),
        }
    }

    pub fn add(&self, o: &Interval) -> Interval {
        Interval::widened(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn sub(&self, o: &Interval) -> Interval {
        Interval::widened(self.lo - o.hi, self.hi - o.lo)
    }

    pub fn neg(&self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn mul(&self, o: &Interval) -> Interval {
        let c = [
            bound_mul(self.lo, o.lo),
            bound_mul(self.lo, o.hi),
            bound_mul(self.hi, o.lo),
            bound_mul(self.hi, o.hi),
        ];
        let mut lo = c[0];
        let mut hi = c[0];
        for &v in &c[1..] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Interval::widened(lo, hi)
    }

    /// Division. Returns the whole line whenever the divisor contains zero.
    pub fn div(&self, o: &Interval) -> Interval {
        if o.contains_zero() {
            return Interval::whole();
        }
        let c = [self.lo / o.lo, self.lo / o.hi, self.hi / o.lo, self.hi / o.hi];
        let mut lo = c[0];
        let mut hi = c[0];
        for &v in &c[1..] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Interval::widened(lo, hi)
    }

    /// Integer power with even/odd monotonicity analysis.
    pub fn powi(&self, n: u32) -> Interval {
        match n {
            0 => Interval::point(1.0),
            1 => *self,
            _ => {
                let pl = pow_f(self.lo, n);
                let ph = pow_f(self.hi, n);
                if n % 2 == 1 {
                    Interval::widened(pl, ph)
                } else if self.lo >= 0.0 {
                    Interval::widened(pl, ph)
                } else if self.hi <= 0.0 {
                    Interval::widened(ph, pl)
                } else {
                    Interval::widened(0.0, pl.max(ph))
                }
            }
        }
    }

    /// Square root, restricted to the nonnegative part of the operand. An
    /// interval entirely below zero has no points where the function is
    /// defined, so any result is vacuously sound; `[0, 0]` is returned.
    pub fn sqrt(&self) -> Interval {
        let lo = self.lo.max(0.0);
        let hi = self.hi.max(0.0);
        Interval::widened(lo.sqrt(), hi.sqrt())
    }

    pub fn exp(&self) -> Interval {
        Interval::widened2(self.lo.exp().max(0.0), self.hi.exp())
    }

    /// Natural logarithm over the positive part; used only by the backward
    /// contractor for `exp`.
    pub fn ln(&self) -> Option<Interval> {
        if self.hi <= 0.0 {
            return None;
        }
        let lo = if self.lo <= 0.0 {
            f64::NEG_INFINITY
        } else {
            widen_lo(self.lo.ln())
        };
        Some(Interval {
            lo,
            hi: widen_hi(self.hi.ln()),
        })
    }

    fn widened2(lo: f64, hi: f64) -> Interval {
        Interval {
            lo: widen_lo(widen_lo(lo)),
            hi: widen_hi(widen_hi(hi)),
        }
    }

    pub fn sin(&self) -> Interval {
        trig_range(self.lo, self.hi, false)
    }

    pub fn cos(&self) -> Interval {
        trig_range(self.lo, self.hi, true)
    }
}

fn pow_f(x: f64, n: u32) -> f64 {
    x.powi(n as i32)
}

/// Range of sin (or cos) over `[a, b]`: checks whether an interior critical
/// point attains +1 or -1, otherwise takes the endpoint values.
fn trig_range(a: f64, b: f64, is_cos: bool) -> Interval {
    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
    if !a.is_finite() || !b.is_finite() || b - a >= TWO_PI || a.abs() > 1e9 || b.abs() > 1e9 {
        return Interval::new(-1.0, 1.0);
    }
    // cos(x) = sin(x + pi/2); shift and analyze sin only.
    let (a, b) = if is_cos {
        (a + std::f64::consts::FRAC_PI_2, b + std::f64::consts::FRAC_PI_2)
    } else {
        (a, b)
    };
    let crosses = |offset: f64| -> bool {
        // Is offset + 2k*pi inside [a, b] for some integer k?
        let k_min = ((a - offset) / TWO_PI).ceil();
        let k_max = ((b - offset) / TWO_PI).floor();
        k_min <= k_max
    };
    let sa = a.sin();
    let sb = b.sin();
    let hi = if crosses(std::f64::consts::FRAC_PI_2) {
        1.0
    } else {
        widen_hi(widen_hi(sa.max(sb)))
    };
    let lo = if crosses(-std::f64::consts::FRAC_PI_2) {
        -1.0
    } else {
        widen_lo(widen_lo(sa.min(sb)))
    };
    Interval::new(lo.max(-1.0), hi.min(1.0))
}

/// An axis-aligned box: one interval per declared variable.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalBox {
    dims: Vec<Interval>,
}

impl IntervalBox {
    pub fn new(dims: Vec<Interval>) -> Self {
        assert!(!dims.is_empty(), "empty box dimension list");
        IntervalBox { dims }
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Self {
        IntervalBox::new(bounds.iter().map(|&(l, h)| Interval::new(l, h)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn get(&self, i: usize) -> &Interval {
        &self.dims[i]
    }

    pub fn set(&mut self, i: usize, iv: Interval) {
        self.dims[i] = iv;
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.dims
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.dims.iter().map(|iv| iv.midpoint()).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len() && self.dims.iter().zip(x).all(|(iv, &v)| iv.contains(v))
    }

    pub fn widths(&self) -> Vec<f64> {
        self.dims.iter().map(|iv| iv.width()).collect()
    }

    /// Widest dimension after per-dimension normalization; used by the
    /// branch-and-prune splitter.
    pub fn widest_normalized(&self, norm: &[f64]) -> usize {
        let mut best = 0;
        let mut best_w = f64::NEG_INFINITY;
        for (i, iv) in self.dims.iter().enumerate() {
            let scale = if norm[i] > 0.0 { norm[i] } else { 1.0 };
            let w = iv.width() / scale;
            if w > best_w {
                best_w = w;
                best = i;
            }
        }
        best
    }

    /// Bisect dimension `d` at its midpoint.
    pub fn split(&self, d: usize) -> (IntervalBox, IntervalBox) {
        let iv = self.dims[d];
        let m = iv.midpoint();
        let mut left = self.clone();
        let mut right = self.clone();
        left.dims[d] = Interval::new(iv.lo(), m);
        right.dims[d] = Interval::new(m, iv.hi());
        (left, right)
    }

    /// Uniform sample with an external RNG-supplied array of unit values.
    pub fn lerp(&self, unit: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(unit)
            .map(|(iv, &u)| iv.lo() + u * (iv.hi() - iv.lo()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_contains_exact() {
        let a = Interval::new(1.0, 2.0);
        let b = Interval::new(-0.5, 0.25);
        let c = a.add(&b);
        assert!(c.lo() <= 0.5 && c.hi() >= 2.25);
        assert!(c.width() < 1.75 + 1e-12);
    }

    #[test]
    fn mul_signs() {
        let a = Interval::new(-1.0, 2.0);
        let b = Interval::new(-3.0, 0.5);
        let c = a.mul(&b);
        assert!(c.contains(-6.0) && c.contains(3.0));
        assert!(c.lo() <= -6.0 && c.hi() >= 3.0);
    }

    #[test]
    fn div_through_zero_is_whole_line() {
        let a = Interval::new(1.0, 2.0);
        let b = Interval::new(-1.0, 1.0);
        assert_eq!(a.div(&b), Interval::whole());
    }

    #[test]
    fn powi_even_through_zero() {
        let a = Interval::new(-1.0, 2.0);
        let c = a.powi(2);
        assert!(c.lo() <= 0.0 && c.hi() >= 4.0);
        assert!(c.lo() >= -1e-12 && c.hi() <= 4.0 + 1e-12);
    }

    #[test]
    fn sin_over_half_period() {
        let c = Interval::new(0.0, std::f64::consts::PI).sin();
        assert!(c.lo() <= 0.0 && c.hi() >= 1.0);
        assert!(c.lo() >= -1e-9);
        // Dense containment check.
        for i in 0..=1000 {
            let x = std::f64::consts::PI * i as f64 / 1000.0;
            assert!(c.contains(x.sin()));
        }
    }

    #[test]
    fn cos_endpoint_range() {
        let c = Interval::new(0.1, 1.0).cos();
        for i in 0..=1000 {
            let x = 0.1 + 0.9 * i as f64 / 1000.0;
            assert!(c.contains(x.cos()));
        }
        assert!(c.hi() < 1.0);
    }

    #[test]
    fn box_split_halves() {
        let b = IntervalBox::from_bounds(&[(0.0, 4.0), (1.0, 2.0)]);
        let (l, r) = b.split(0);
        assert_eq!(l.get(0).hi(), 2.0);
        assert_eq!(r.get(0).lo(), 2.0);
        assert_eq!(l.get(1), b.get(1));
    }
}
