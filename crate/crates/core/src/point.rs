use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A point of R^2 or R^3.
///
/// Two-dimensional points keep a zero third coordinate, so every norm and
/// inner product below is valid in both dimensions without branching.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point(pub [f64; 3]);

impl Point {
    pub const ORIGIN: Point = Point([0.0; 3]);

    pub const fn new2(x: f64, y: f64) -> Self {
        Point([x, y, 0.0])
    }

    pub const fn new3(x: f64, y: f64, z: f64) -> Self {
        Point([x, y, z])
    }

    /// Point on the first axis.
    pub const fn on_axis(x: f64) -> Self {
        Point([x, 0.0, 0.0])
    }

    /// Builds a point from the leading `d` coordinates of a slice.
    pub fn from_slice(c: &[f64]) -> Self {
        let mut p = [0.0; 3];
        for (dst, src) in p.iter_mut().zip(c) {
            *dst = *src;
        }
        Point(p)
    }

    #[inline]
    pub fn dot(self, other: Point) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn is_origin(self) -> bool {
        self.0 == [0.0; 3]
    }

    pub fn coords(&self, d: usize) -> &[f64] {
        &self.0[..d]
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, o: Point) -> Point {
        Point([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, o: Point) -> Point {
        Point([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl AddAssign for Point {
    #[inline]
    fn add_assign(&mut self, o: Point) {
        *self = *self + o;
    }
}

impl SubAssign for Point {
    #[inline]
    fn sub_assign(&mut self, o: Point) {
        *self = *self - o;
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, s: f64) -> Point {
        Point([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl Neg for Point {
    type Output = Point;
    #[inline]
    fn neg(self) -> Point {
        self * -1.0
    }
}

/// Reflection in the affine hyperplane `{y : (y - anchor) . normal = 0}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reflection {
    normal: Point,
    anchor: Point,
}

impl Reflection {
    /// The perpendicular bisector of `a` and `b`; swaps the two points.
    pub fn bisector(a: Point, b: Point) -> Option<Self> {
        let diff = b - a;
        let len = diff.norm();
        if len == 0.0 {
            return None;
        }
        Some(Reflection {
            normal: diff * (1.0 / len),
            anchor: (a + b) * 0.5,
        })
    }

    #[inline]
    pub fn apply(&self, y: Point) -> Point {
        let s = (y - self.anchor).dot(self.normal);
        y - self.normal * (2.0 * s)
    }

    /// Signed distance of `y` from the hyperplane, positive on the side the
    /// normal points to.
    #[inline]
    pub fn signed_distance(&self, y: Point) -> f64 {
        (y - self.anchor).dot(self.normal)
    }

    pub fn anchor(&self) -> Point {
        self.anchor
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisector_swaps_endpoints() {
        let a = Point::new2(1.0, 2.0);
        let b = Point::new2(4.0, -1.0);
        let refl = Reflection::bisector(a, b).unwrap();
        let ra = refl.apply(a);
        assert!((ra - b).norm() < 1e-12);
        let p = Point::new2(0.3, 0.7);
        assert!((refl.apply(refl.apply(p)) - p).norm() < 1e-12);
    }

    #[test]
    fn first_axis_bisector_is_coordinate_flip() {
        let refl = Reflection::bisector(Point::on_axis(10.0), Point::on_axis(12.0)).unwrap();
        let y = Point::new2(13.5, -0.25);
        assert_eq!(refl.apply(y), Point::new2(8.5, -0.25));
    }
}
