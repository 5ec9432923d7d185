//! Planar convex-polygon helpers used by the exact heat-content computations.

pub type Pt = [f64; 2];

/// Convex polygon with at most `CAP` vertices, counter-clockwise.
#[derive(Debug, Clone, Copy)]
pub struct Poly {
    pts: [Pt; CAP],
    len: usize,
}

const CAP: usize = 16;

impl Poly {
    pub fn empty() -> Self {
        Self {
            pts: [[0.0; 2]; CAP],
            len: 0,
        }
    }

    pub fn from_points(p: &[Pt]) -> Self {
        let mut out = Self::empty();
        for &q in p {
            out.push(q);
        }
        out
    }

    pub fn rect(lo: Pt, hi: Pt) -> Self {
        Self::from_points(&[lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]])
    }

    fn push(&mut self, p: Pt) {
        assert!(self.len < CAP, "polygon capacity exceeded");
        self.pts[self.len] = p;
        self.len += 1;
    }

    pub fn points(&self) -> &[Pt] {
        &self.pts[..self.len]
    }

    pub fn is_empty(&self) -> bool {
        self.len < 3
    }

    /// Signed shoelace area (positive for counter-clockwise order).
    pub fn signed_area(&self) -> f64 {
        let p = self.points();
        let n = p.len();
        if n < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            let a = p[i];
            let b = p[(i + 1) % n];
            s += a[0] * b[1] - a[1] * b[0];
        }
        s / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Image under `x ↦ M x + c`; orientation is restored if `det M < 0`.
    pub fn affine(&self, m: [[f64; 2]; 2], c: Pt) -> Self {
        let mut out = Self::empty();
        for p in self.points() {
            out.push([
                m[0][0] * p[0] + m[0][1] * p[1] + c[0],
                m[1][0] * p[0] + m[1][1] * p[1] + c[1],
            ]);
        }
        if m[0][0] * m[1][1] - m[0][1] * m[1][0] < 0.0 {
            out.pts[..out.len].reverse();
        }
        out
    }

    pub fn translate(&self, c: Pt) -> Self {
        let mut out = *self;
        for p in out.pts[..out.len].iter_mut() {
            p[0] += c[0];
            p[1] += c[1];
        }
        out
    }

    pub fn bbox(&self) -> (Pt, Pt) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in self.points() {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Intersection with another convex polygon (Sutherland–Hodgman).
    pub fn clip(&self, other: &Poly) -> Poly {
        let mut cur = *self;
        let q = other.points();
        let m = q.len();
        for i in 0..m {
            if cur.is_empty() {
                return Poly::empty();
            }
            let a = q[i];
            let b = q[(i + 1) % m];
            let side = |p: Pt| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            let mut next = Poly::empty();
            let pts = cur.points();
            let n = pts.len();
            for j in 0..n {
                let p = pts[j];
                let r = pts[(j + 1) % n];
                let (sp, sr) = (side(p), side(r));
                if sp >= 0.0 {
                    next.push(p);
                }
                if (sp >= 0.0) != (sr >= 0.0) {
                    // Step from the endpoint nearer the clip line: long
                    // edges otherwise lose precision at the crossing.
                    if sp.abs() <= sr.abs() {
                        let u = sp / (sp - sr);
                        next.push([p[0] + u * (r[0] - p[0]), p[1] + u * (r[1] - p[1])]);
                    } else {
                        let u = sr / (sr - sp);
                        next.push([r[0] + u * (p[0] - r[0]), r[1] + u * (p[1] - r[1])]);
                    }
                }
            }
            cur = next;
        }
        cur
    }

    /// Interval of `y` where the vertical line `x = x0` meets the polygon.
    pub fn vertical_section(&self, x0: f64) -> Option<(f64, f64)> {
        let p = self.points();
        let n = p.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let a = p[i];
            let b = p[(i + 1) % n];
            let (xa, xb) = (a[0].min(b[0]), a[0].max(b[0]));
            if x0 < xa || x0 > xb {
                continue;
            }
            if xb - xa <= 0.0 {
                lo = lo.min(a[1].min(b[1]));
                hi = hi.max(a[1].max(b[1]));
            } else {
                let u = (x0 - a[0]) / (b[0] - a[0]);
                let y = a[1] + u * (b[1] - a[1]);
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// Convex hull (Andrew's monotone chain), counter-clockwise.
pub fn convex_hull(points: &[Pt]) -> Poly {
    let mut p: Vec<Pt> = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return Poly::from_points(&p);
    }
    let cross = |o: Pt, a: Pt, b: Pt| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<Pt> = Vec::with_capacity(2 * p.len());
    for &q in p.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(q);
    }
    let lower = hull.len() + 1;
    for &q in p.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(q);
    }
    hull.pop();
    Poly::from_points(&hull)
}

/// `A − B = {a − b}` for convex polygons.
pub fn minkowski_difference(a: &Poly, b: &Poly) -> Poly {
    let mut pts = Vec::with_capacity(a.points().len() * b.points().len());
    for p in a.points() {
        for q in b.points() {
            pts.push([p[0] - q[0], p[1] - q[1]]);
        }
    }
    convex_hull(&pts)
}
