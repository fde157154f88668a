//! Dense real polynomials in the monomial basis, with Sturm-sequence root
//! counting and isolation.

/// Polynomial with ascending-power coefficients, `coeffs[k]` multiplying `x^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    /// Builds a polynomial, dropping trailing zero coefficients.
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    /// `self + other`.
    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (k, c) in self.coeffs.iter().enumerate() {
            out[k] += c;
        }
        for (k, c) in other.coeffs.iter().enumerate() {
            out[k] += c;
        }
        Poly::new(out)
    }

    /// Cauchy bound: every real root lies in `[-bound, bound]`.
    pub fn root_bound(&self) -> f64 {
        let lead = self.leading().abs();
        if lead == 0.0 {
            return 1.0;
        }
        1.0 + self.coeffs[..self.coeffs.len() - 1]
            .iter()
            .map(|c| (c / lead).abs())
            .fold(0.0, f64::max)
    }

    /// Distinct real roots, ascending, each located to absolute width `tol`.
    pub fn real_roots(&self, tol: f64) -> Vec<f64> {
        if self.degree() == 0 {
            return Vec::new();
        }
        let sturm = SturmSequence::new(self);
        let bound = self.root_bound() * 1.01 + 1.0;
        let mut roots = Vec::new();
        sturm.isolate(-bound, bound, tol, &mut roots);
        roots
            .into_iter()
            .map(|(lo, hi)| self.polish(lo, hi))
            .collect()
    }

    /// Newton-polishes a root known to lie in `[lo, hi]`, falling back to the
    /// midpoint whenever an iterate leaves the bracket.
    fn polish(&self, lo: f64, hi: f64) -> f64 {
        let d = self.derivative();
        let mut x = 0.5 * (lo + hi);
        for _ in 0..4 {
            let slope = d.eval(x);
            if slope == 0.0 {
                break;
            }
            let next = x - self.eval(x) / slope;
            if !(lo..=hi).contains(&next) {
                break;
            }
            if self.eval(next).abs() > self.eval(x).abs() {
                break;
            }
            x = next;
        }
        x
    }
}

/// Sturm sequence of a polynomial, normalized term by term.
#[derive(Debug, Clone)]
pub struct SturmSequence {
    terms: Vec<Poly>,
}

impl SturmSequence {
    pub fn new(p: &Poly) -> Self {
        let mut terms = vec![normalize(p.clone())];
        let d = p.derivative();
        if !d.is_zero() {
            terms.push(normalize(d));
        }
        while terms.len() >= 2 {
            let n = terms.len();
            let r = remainder(&terms[n - 2], &terms[n - 1]);
            if r.is_zero() {
                break;
            }
            terms.push(normalize(negate(r)));
        }
        SturmSequence { terms }
    }

    pub fn sign_changes(&self, x: f64) -> usize {
        let mut changes = 0;
        let mut last = 0.0f64;
        for t in &self.terms {
            let v = t.eval(x);
            if v == 0.0 {
                continue;
            }
            if last != 0.0 && (v > 0.0) != (last > 0.0) {
                changes += 1;
            }
            last = v;
        }
        changes
    }

    /// Number of distinct real roots in `(lo, hi]`.
    pub fn count(&self, lo: f64, hi: f64) -> usize {
        self.sign_changes(lo).saturating_sub(self.sign_changes(hi))
    }

    fn isolate(&self, lo: f64, hi: f64, tol: f64, out: &mut Vec<(f64, f64)>) {
        let n = self.count(lo, hi);
        if n == 0 {
            return;
        }
        if n == 1 && hi - lo <= tol {
            out.push((lo, hi));
            return;
        }
        if hi - lo <= tol * 1e-3 {
            // Clustered roots beyond double resolution; report one.
            out.push((lo, hi));
            return;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            out.push((lo, hi));
            return;
        }
        self.isolate(lo, mid, tol, out);
        self.isolate(mid, hi, tol, out);
    }
}

fn normalize(p: Poly) -> Poly {
    let scale = p.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return p;
    }
    Poly::new(p.coeffs.into_iter().map(|c| c / scale).collect())
}

fn negate(p: Poly) -> Poly {
    Poly::new(p.coeffs.into_iter().map(|c| -c).collect())
}

/// Remainder of `a / b`, flushing coefficients lost to cancellation.
fn remainder(a: &Poly, b: &Poly) -> Poly {
    let mut r = a.coeffs.clone();
    let db = b.degree();
    let lb = b.leading();
    let scale = a
        .coeffs
        .iter()
        .chain(b.coeffs.iter())
        .fold(0.0f64, |m, c| m.max(c.abs()));
    while r.len() > db && !r.is_empty() {
        let shift = r.len() - 1 - db;
        let q = r[r.len() - 1] / lb;
        for (k, &bc) in b.coeffs.iter().enumerate() {
            r[shift + k] -= q * bc;
        }
        r.pop();
        while r.last().is_some_and(|c| c.abs() <= 1e-13 * scale) {
            r.pop();
        }
    }
    Poly::new(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horner_and_derivative() {
        let p = Poly::new(vec![0.0, 0.0, -0.5, 0.0, 0.25]);
        assert_eq!(p.eval(1.0), -0.25);
        assert_eq!(p.derivative().coeffs(), &[0.0, -1.0, 0.0, 1.0]);
        assert_eq!(p.degree(), 4);
    }

    #[test]
    fn trailing_zeros_dropped() {
        let p = Poly::new(vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(p.degree(), 1);
        assert!(Poly::new(vec![0.0, 0.0]).is_zero());
    }

    #[test]
    fn cubic_roots() {
        // x^3 - x
        let p = Poly::new(vec![0.0, -1.0, 0.0, 1.0]);
        let r = p.real_roots(1e-12);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn counts_complex_pairs_out() {
        // x^3 + x has one real root
        let p = Poly::new(vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(p.real_roots(1e-12), vec![0.0]);
        let s = SturmSequence::new(&p);
        assert_eq!(s.count(-10.0, 10.0), 1);
    }

    #[test]
    fn double_root_counted_once() {
        // (x - 1)^2 (x + 2)
        let p = Poly::new(vec![2.0, -3.0, 0.0, 1.0]);
        let r = p.real_roots(1e-10);
        assert_eq!(r.len(), 2);
        assert!((r[0] + 2.0).abs() < 1e-9);
        assert!((r[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn wilkinson_like_five() {
        // (x-1)(x-2)(x-3)(x-4)(x-5)
        let p = Poly::new(vec![-120.0, 274.0, -225.0, 85.0, -15.0, 1.0]);
        let r = p.real_roots(1e-12);
        assert_eq!(r.len(), 5);
        for (k, x) in r.iter().enumerate() {
            assert!((x - (k as f64 + 1.0)).abs() < 1e-10);
        }
    }
}
