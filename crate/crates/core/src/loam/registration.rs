use nalgebra::{DVector, Matrix3, SymmetricEigen};

use super::{FeatureSet, LoamConfig, ReferenceCloud, RigidTransform3};
use crate::error::{Error, Result};
use crate::lm::{self, LeastSquaresProblem, LmReport};
use crate::pointcloud::Point3;

/// Distance from `p` to the line through `j` and `l`.
pub fn point_to_line_distance(p: &Point3, j: &Point3, l: &Point3) -> Result<f64> {
    let jl = (j - l).norm();
    if jl == 0.0 {
        return Err(Error::DegenerateCorrespondence("line endpoints coincide".into()));
    }
    Ok((p - j).cross(&(p - l)).norm() / jl)
}

fn patch_normal(j: &Point3, l: &Point3, m: &Point3) -> Option<nalgebra::Vector3<f64>> {
    let a = l - j;
    let b = m - j;
    let n = a.cross(&b);
    let scale = a.norm() * b.norm();
    if scale == 0.0 || n.norm() <= 1e-9 * scale {
        None
    } else {
        Some(n / n.norm())
    }
}

/// Distance from `p` to the plane through `j`, `l`, `m`.
pub fn point_to_plane_distance(p: &Point3, j: &Point3, l: &Point3, m: &Point3) -> Result<f64> {
    let n = patch_normal(j, l, m).ok_or_else(|| Error::DegenerateCorrespondence("collinear patch".into()))?;
    Ok((p - j).dot(&n).abs())
}

/// A current-scan feature `p` and the reference geometry it should lie on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correspondence {
    Edge { p: Point3, j: Point3, l: Point3 },
    Planar {
        p: Point3,
        j: Point3,
        /// Unit normal of the patch through `j`, `l`, `m`.
        normal: nalgebra::Vector3<f64>,
        l: Point3,
        m: Point3,
    },
}

impl Correspondence {
    pub fn point(&self) -> Point3 {
        match self {
            Correspondence::Edge { p, .. } | Correspondence::Planar { p, .. } => *p,
        }
    }

    /// Residual of the feature moved by `t`: line distance for edges, signed
    /// plane offset for planars.
    pub fn residual(&self, t: &RigidTransform3) -> f64 {
        match self {
            Correspondence::Edge { p, j, l } => {
                let q = t.apply(p);
                (q - j).cross(&(q - l)).norm() / (j - l).norm()
            }
            Correspondence::Planar { p, j, normal, .. } => (t.apply(p) - j).dot(normal),
        }
    }
}

/// Matches each feature, moved by `guess` into the reference frame, against
/// the reference cloud. Edges pair the nearest sharp point with the nearest
/// sharp point one or two rings away; planars take the nearest flat point,
/// its nearest same-ring neighbour and the nearest flat point on an adjacent
/// ring. Features whose nearest point is beyond the gate are dropped.
pub fn find_correspondences(
    features: &FeatureSet,
    prev: &ReferenceCloud,
    guess: &RigidTransform3,
    cfg: &LoamConfig,
) -> Vec<Correspondence> {
    let near_ring = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        (1..=2).contains(&d)
    };
    let mut out = Vec::new();
    for f in &features.edges {
        let q = guess.apply(&f.point);
        let Some((ji, _)) = prev.nearest(true, &q, cfg.gate, |_, _| true) else {
            continue;
        };
        let j = prev.sharp[ji];
        let Some((li, _)) = prev.nearest(true, &q, cfg.support_radius, |_, c| near_ring(c.ring, j.ring)) else {
            continue;
        };
        let l = prev.sharp[li];
        if (j.point - l.point).norm() > 1e-9 {
            out.push(Correspondence::Edge {
                p: f.point,
                j: j.point,
                l: l.point,
            });
        }
    }
    for f in &features.planars {
        let q = guess.apply(&f.point);
        let Some((ji, _)) = prev.nearest(false, &q, cfg.gate, |_, _| true) else {
            continue;
        };
        let j = prev.flat[ji];
        let Some((li, _)) = prev.nearest(false, &q, cfg.support_radius, |i, c| i != ji && c.ring == j.ring) else {
            continue;
        };
        let Some((mi, _)) = prev.nearest(false, &q, cfg.support_radius, |_, c| near_ring(c.ring, j.ring)) else {
            continue;
        };
        let (l, m) = (prev.flat[li], prev.flat[mi]);
        // Reject slivers: the patch normal is unreliable when the three
        // points are nearly collinear.
        let a = l.point - j.point;
        let b = m.point - j.point;
        if a.cross(&b).norm() < 0.1 * a.norm() * b.norm() {
            continue;
        }
        if let Some(normal) = patch_normal(&j.point, &l.point, &m.point) {
            out.push(Correspondence::Planar {
                p: f.point,
                j: j.point,
                normal,
                l: l.point,
                m: m.point,
            });
        }
    }
    out
}

/// Constraint directions of the set must span at least two dimensions.
fn check_conditioning(corrs: &[Correspondence], cfg: &LoamConfig) -> Result<()> {
    if corrs.len() < cfg.min_correspondences {
        return Err(Error::DegenerateGeometry(format!(
            "{} correspondences, need {}",
            corrs.len(),
            cfg.min_correspondences
        )));
    }
    let mut scatter = Matrix3::zeros();
    for c in corrs {
        match c {
            Correspondence::Planar { normal, .. } => scatter += normal * normal.transpose(),
            Correspondence::Edge { j, l, .. } => {
                let u = (l - j).normalize();
                scatter += Matrix3::identity() - u * u.transpose();
            }
        }
    }
    let mut ev = SymmetricEigen::new(scatter).eigenvalues;
    ev.as_mut_slice().sort_by(f64::total_cmp);
    if ev[1] <= 1e-3 * ev[2] {
        return Err(Error::DegenerateGeometry("constraint directions are parallel".into()));
    }
    Ok(())
}

struct MotionProblem<'a> {
    corrs: &'a [Correspondence],
    /// Square roots of the per-correspondence weights.
    scale: Vec<f64>,
}

impl LeastSquaresProblem for MotionProblem<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let t = RigidTransform3::from_params(x.as_slice());
        DVector::from_iterator(
            self.corrs.len(),
            self.corrs.iter().zip(&self.scale).map(|(c, w)| w * c.residual(&t)),
        )
    }
}

/// Tukey biweight of each residual at `t`; zero beyond `scale`.
pub fn robust_weights(corrs: &[Correspondence], t: &RigidTransform3, scale: f64) -> Vec<f64> {
    corrs
        .iter()
        .map(|c| {
            let u = c.residual(t) / scale;
            if u.abs() >= 1.0 {
                0.0
            } else {
                (1.0 - u * u).powi(2)
            }
        })
        .collect()
}

/// Least-squares motion over a fixed correspondence set, unweighted.
pub fn estimate_motion(
    corrs: &[Correspondence],
    init: &RigidTransform3,
    cfg: &LoamConfig,
) -> Result<(RigidTransform3, LmReport)> {
    estimate_weighted(corrs, &vec![1.0; corrs.len()], init, cfg)
}

fn estimate_weighted(
    corrs: &[Correspondence],
    weights: &[f64],
    init: &RigidTransform3,
    cfg: &LoamConfig,
) -> Result<(RigidTransform3, LmReport)> {
    let kept: Vec<Correspondence> = corrs
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(c, _)| *c)
        .collect();
    check_conditioning(&kept, cfg)?;
    let scale = weights.iter().filter(|w| **w > 0.0).map(|w| w.sqrt()).collect();
    let x0 = DVector::from_row_slice(&init.to_params());
    let rep = lm::solve(&MotionProblem { corrs: &kept, scale }, x0, &cfg.lm);
    Ok((RigidTransform3::from_params(rep.x.as_slice()), rep))
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub transform: RigidTransform3,
    pub correspondences: usize,
    pub cost: f64,
    /// Accepted costs of every solver run, in order.
    pub cost_history: Vec<Vec<f64>>,
}

/// Alternates correspondence search and motion estimation, starting from
/// `init`, until the estimate stops moving or the round budget runs out.
///
/// The first round weights every correspondence equally; later rounds
/// reweight by the Tukey biweight at the current estimate with a scale that
/// halves each round down to `robust_min`, which discards patches straddling
/// two surfaces and poorly sampled edges.
pub fn register(
    features: &FeatureSet,
    prev: &ReferenceCloud,
    init: &RigidTransform3,
    cfg: &LoamConfig,
) -> Result<Registration> {
    if prev.is_empty() {
        return Err(Error::DegenerateGeometry("empty reference cloud".into()));
    }
    let mut t = *init;
    let mut out = Registration {
        transform: t,
        correspondences: 0,
        cost: f64::INFINITY,
        cost_history: Vec::new(),
    };
    for round in 0..cfg.rounds.max(1) {
        let corrs = find_correspondences(features, prev, &t, cfg);
        let scale = (cfg.robust_scale * 0.5f64.powi(round as i32 - 1)).max(cfg.robust_min);
        let weights = if round == 0 {
            vec![1.0; corrs.len()]
        } else {
            robust_weights(&corrs, &t, scale)
        };
        let (next, rep) = estimate_weighted(&corrs, &weights, &t, cfg)?;
        let moved = next
            .to_params()
            .iter()
            .zip(t.to_params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        t = next;
        out.correspondences = corrs.len();
        out.cost = rep.cost;
        out.cost_history.push(rep.cost_history);
        if moved < 1e-10 && round > 0 && scale <= cfg.robust_min {
            break;
        }
    }
    out.transform = t;
    Ok(out)
}
