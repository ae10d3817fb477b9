use crate::error::{Error, Result};

/// Obstacle primitives the band keeps clear of.
#[derive(Debug, Clone, PartialEq)]
pub enum Obstacle {
    Point([f64; 2]),
    Circle { center: [f64; 2], radius: f64 },
    Segment { a: [f64; 2], b: [f64; 2] },
    /// Convex polygon, vertices in either winding order.
    Polygon(Vec<[f64; 2]>),
}

fn closest_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

/// Distance and unit gradient pointing from `q` towards `p`.
fn away_from(p: [f64; 2], q: [f64; 2]) -> (f64, [f64; 2]) {
    let d = [p[0] - q[0], p[1] - q[1]];
    let n = d[0].hypot(d[1]);
    if n > 0.0 {
        (n, [d[0] / n, d[1] / n])
    } else {
        (0.0, [0.0, 0.0])
    }
}

impl Obstacle {
    pub fn validate(&self) -> Result<()> {
        match self {
            Obstacle::Circle { radius, .. } if !(*radius > 0.0) => {
                Err(Error::InvalidArgument("circle radius must be positive".into()))
            }
            Obstacle::Polygon(v) if v.len() < 3 => Err(Error::InvalidArgument("polygon needs three vertices".into())),
            _ => Ok(()),
        }
    }

    /// Signed distance from `p` to the obstacle (negative inside circles and
    /// polygons) with its gradient with respect to `p`.
    pub fn signed_distance(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        match self {
            Obstacle::Point(q) => away_from(p, *q),
            Obstacle::Circle { center, radius } => {
                let (d, g) = away_from(p, *center);
                (d - radius, g)
            }
            Obstacle::Segment { a, b } => away_from(p, closest_on_segment(p, *a, *b)),
            Obstacle::Polygon(v) => {
                let mut best = (f64::INFINITY, [0.0, 0.0]);
                let mut pos = 0;
                let mut neg = 0;
                for i in 0..v.len() {
                    let a = v[i];
                    let b = v[(i + 1) % v.len()];
                    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                    if cross > 0.0 {
                        pos += 1;
                    } else if cross < 0.0 {
                        neg += 1;
                    }
                    let q = closest_on_segment(p, a, b);
                    let cand = away_from(p, q);
                    if cand.0 < best.0 {
                        best = cand;
                    }
                }
                if pos == 0 || neg == 0 {
                    (-best.0, [-best.1[0], -best.1[1]])
                } else {
                    best
                }
            }
        }
    }

    pub fn distance(&self, p: [f64; 2]) -> f64 {
        self.signed_distance(p).0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObstacleSet {
    pub obstacles: Vec<Obstacle>,
}

impl ObstacleSet {
    pub fn new(obstacles: Vec<Obstacle>) -> Result<Self> {
        for o in &obstacles {
            o.validate()?;
        }
        Ok(Self { obstacles })
    }

    /// Point obstacles at the given world positions, e.g. occupied cell centres.
    pub fn from_points(points: impl IntoIterator<Item = [f64; 2]>) -> Self {
        Self {
            obstacles: points.into_iter().map(Obstacle::Point).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    pub fn nearest_distance(&self, p: [f64; 2]) -> f64 {
        self.obstacles.iter().map(|o| o.distance(p)).fold(f64::INFINITY, f64::min)
    }
}
