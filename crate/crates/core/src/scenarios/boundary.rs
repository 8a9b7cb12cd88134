//! Compact models with boundary, realized through the collar extension:
//! the function is continued along attached cylindrical ends, either
//! capped (keeping the boundary critical points) or linearly (adding
//! none), and the resulting noncompact model runs through the standard
//! pipeline. The inequality table compares reference relative ranks of
//! the pair against interior counts plus the capped-positive and
//! linear-negative boundary counts.

use serde::Serialize;

use crate::collar::{CollarEnd, CollarField, CollarProfile, EscapeKind};
use crate::field_dsl::{parse, Expr};
use crate::geometry::{BoxModel, ManifoldModel, ScalarField, SurfaceModel};

use super::{base_scenario_for_boundary, Scenario, StagePlan};

#[derive(Debug, thiserror::Error)]
pub enum BoundaryError {
    #[error("non-transversal input: boundary slope {0:.3e} vanishes at {1}")]
    NonTransversal(f64, String),
}

/// Which partition class a boundary component belongs to: class one is
/// capped (boundary critical points enter the complex), class two escapes
/// linearly (no critical points).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundaryClass {
    N1,
    N2,
}

#[derive(Debug, Clone)]
pub struct BoundaryEnd {
    pub at: f64,
    /// +1 when outward means increasing collar coordinate.
    pub outward: f64,
    pub class: BoundaryClass,
    /// Critical point counts of the restriction to this boundary
    /// component, per boundary index.
    pub restriction_counts: Vec<usize>,
}

/// Compact model with collar data. The collar structure lives along one
/// coordinate; the tangential part is a closed form.
#[derive(Debug, Clone)]
pub struct BoundaryScenario {
    pub description: String,
    /// Univariate profile along the collar axis (variable x1).
    pub inner_profile: Expr,
    /// Tangential part in ambient coordinates (None means zero).
    pub base: Option<Expr>,
    pub axis: usize,
    pub ends: Vec<BoundaryEnd>,
    /// Embedded target for surface scenarios (the cylinder); None means a
    /// one-dimensional box model.
    pub surface_constraint: Option<Expr>,
    pub extended_box: Option<BoxModel>,
    pub surface_seeds: Vec<[f64; 3]>,
    pub surface_mesh_scale: f64,
    /// Expected interior critical counts per index.
    pub expected_interior: Vec<usize>,
    /// Reference ranks of the pair (model, capped-positive and
    /// linear-negative boundary).
    pub reference_pair_betti: Vec<usize>,
}

/// Attach the collar ends: class-one components get the slope-opposing
/// quadratic cap (critical points exactly on the boundary face, none in
/// the blend), class-two components continue linearly at half slope.
pub fn extend_boundary_function(
    bs: &BoundaryScenario,
) -> Result<(ManifoldModel, ScalarField), BoundaryError> {
    let mut ends = Vec::new();
    for end in &bs.ends {
        let jet = bs
            .inner_profile
            .eval_jet(&[end.at])
            .expect("collar profile evaluation");
        let slope = jet.gradient[0] * end.outward;
        if slope.abs() < 1e-9 {
            return Err(BoundaryError::NonTransversal(slope, format!("end at {}", end.at)));
        }
        ends.push(CollarEnd {
            at: end.at,
            outward: end.outward,
            escape: match end.class {
                BoundaryClass::N1 => EscapeKind::Cap,
                BoundaryClass::N2 => EscapeKind::Linear,
            },
            blend_width: 0.25,
        });
    }
    let profile = CollarProfile { inner: bs.inner_profile.clone(), ends };
    let collar = CollarField { base: bs.base.clone(), axis: bs.axis, profile };
    match &bs.surface_constraint {
        None => {
            let model = bs
                .extended_box
                .clone()
                .expect("boundary scenario without a surface needs an extended box");
            let f = ScalarField::collar(collar, 1);
            Ok((ManifoldModel::EuclideanBox(model), f))
        }
        Some(constraint) => {
            let f = ScalarField::collar(collar, 3);
            Ok((
                ManifoldModel::EmbeddedSurface(SurfaceModel {
                    constraint: constraint.clone(),
                    seeds: bs.surface_seeds.clone(),
                    mesh_scale: bs.surface_mesh_scale,
                }),
                f,
            ))
        }
    }
}

/// Is this end positive (function increasing outward at the boundary)?
pub fn is_positive_end(bs: &BoundaryScenario, end: &BoundaryEnd) -> bool {
    let jet = bs.inner_profile.eval_jet(&[end.at]).expect("profile evaluation");
    jet.gradient[0] * end.outward > 0.0
}

#[derive(Debug, Clone, Serialize)]
pub struct CorollaryRow {
    pub degree: usize,
    pub reference_betti: usize,
    pub interior: usize,
    pub capped_positive: usize,
    pub linear_negative: usize,
    pub alternating_lhs: i64,
    pub alternating_rhs: i64,
    pub holds: bool,
}

/// The boundary Morse inequality table: alternating sums of reference
/// ranks of the pair against interior counts plus capped-positive counts
/// (shifted up one degree) plus linear-negative counts (shifted likewise).
pub fn corollary_inequality_table(bs: &BoundaryScenario) -> Vec<CorollaryRow> {
    let n = bs.reference_pair_betti.len() - 1;
    let mut rows = Vec::new();
    let count_at = |degree: usize| -> (usize, usize) {
        let mut n1_pos = 0;
        let mut n2_neg = 0;
        for end in &bs.ends {
            let positive = is_positive_end(bs, end);
            match (end.class, positive) {
                (BoundaryClass::N1, true) => {
                    // boundary index degree-1 enters at this degree
                    if degree >= 1 {
                        n1_pos += end.restriction_counts.get(degree - 1).copied().unwrap_or(0);
                    }
                }
                (BoundaryClass::N2, false) => {
                    if degree >= 1 {
                        n2_neg += end.restriction_counts.get(degree - 1).copied().unwrap_or(0);
                    }
                }
                _ => {}
            }
        }
        (n1_pos, n2_neg)
    };
    let mut lhs = 0i64;
    let mut rhs = 0i64;
    for k in 0..=n {
        let b = bs.reference_pair_betti[k] as i64;
        let m = bs.expected_interior.get(k).copied().unwrap_or(0);
        let (n1, n2) = count_at(k);
        let sign = if k % 2 == 0 { 1 } else { -1 };
        lhs += sign * b;
        rhs += sign * (m as i64 + n1 as i64 + n2 as i64);
        let parity = if k % 2 == 0 { 1 } else { -1 };
        rows.push(CorollaryRow {
            degree: k,
            reference_betti: b as usize,
            interior: m,
            capped_positive: n1,
            linear_negative: n2,
            alternating_lhs: parity * lhs,
            alternating_rhs: parity * rhs,
            holds: parity * lhs <= parity * rhs,
        });
    }
    rows
}

pub(super) fn interval_boundary_scenario() -> Scenario {
    let bs = BoundaryScenario {
        description: "interval with one capped and one linear end".to_string(),
        inner_profile: parse("-(x1 - 1/2)^2", 1).unwrap(),
        base: None,
        axis: 0,
        ends: vec![
            BoundaryEnd {
                at: 0.0,
                outward: -1.0,
                class: BoundaryClass::N1,
                restriction_counts: vec![1],
            },
            BoundaryEnd {
                at: 1.0,
                outward: 1.0,
                class: BoundaryClass::N2,
                restriction_counts: vec![1],
            },
        ],
        surface_constraint: None,
        extended_box: Some(BoxModel::new(1, 2.5, 0.005)),
        surface_seeds: vec![],
        surface_mesh_scale: 0.02,
        expected_interior: vec![0, 1],
        // pair of the interval against the linear (negative) endpoint:
        // contractible pair
        reference_pair_betti: vec![0, 0],
    };
    let (model, f) = extend_boundary_function(&bs).expect("interval extension");
    let mut s = base_scenario_for_boundary("interval_boundary", model, f, vec![15.0, 30.0]);
    s.reference_betti = bs.reference_pair_betti.clone();
    s.reference_note =
        "pair of the interval against its linear end, via the collar extension".to_string();
    // extended function: boundary minimum at the capped end plus the
    // interior maximum
    s.expected_morse_counts = vec![1, 1];
    s.tameness_class = crate::geometry::TamenessVerdict::WellTame;
    s.tameness_shells = vec![1.4, 1.8, 2.2];
    s.stages = StagePlan { spectral: true, agmon: true, flow: true };
    s.boundary = Some(bs);
    s
}

pub(super) fn cylinder_boundary_scenario() -> Scenario {
    let mut seeds = Vec::new();
    for i in 0..12 {
        for z in [-1.5, -0.5, 0.0, 0.5, 1.0, 1.5] {
            let th = 2.0 * std::f64::consts::PI * i as f64 / 12.0;
            seeds.push([th.cos(), th.sin(), z]);
        }
    }
    let bs = BoundaryScenario {
        description: "cylinder with a capped positive top and linear negative bottom".to_string(),
        inner_profile: parse("x1/4", 1).unwrap(),
        base: Some(parse("x1", 3).unwrap()),
        axis: 2,
        ends: vec![
            BoundaryEnd {
                at: 0.0,
                outward: -1.0,
                class: BoundaryClass::N2,
                restriction_counts: vec![1, 1],
            },
            BoundaryEnd {
                at: 1.0,
                outward: 1.0,
                class: BoundaryClass::N1,
                restriction_counts: vec![1, 1],
            },
        ],
        surface_constraint: Some(parse("x1^2 + x2^2 - 1", 3).unwrap()),
        extended_box: None,
        surface_seeds: seeds,
        surface_mesh_scale: 0.02,
        expected_interior: vec![0, 0, 0],
        // pair of the cylinder against its whole boundary
        reference_pair_betti: vec![0, 1, 1],
    };
    let (model, f) = extend_boundary_function(&bs).expect("cylinder extension");
    let mut s = base_scenario_for_boundary("cylinder_boundary", model, f, vec![10.0]);
    s.reference_betti = bs.reference_pair_betti.clone();
    s.reference_note = "pair of the cylinder against its boundary circles".to_string();
    // extended function: no interior criticals; the capped circle carries
    // an index-1 and an index-2 point
    s.expected_morse_counts = vec![0, 1, 1];
    s.tameness_class = crate::geometry::TamenessVerdict::WellTame;
    s.tameness_shells = vec![2.5, 3.5, 4.5];
    s.stages = StagePlan { spectral: false, agmon: false, flow: true };
    s.surface_escape_radius = 6.0;
    s.boundary = Some(bs);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::find_critical_points;

    /// Calculus on the explicit extension of the parabola with both ends
    /// capped: the designated boundary critical points are minima exactly
    /// on the faces, plus the interior maximum, and nothing else.
    #[test]
    fn interval_extension_critical_inventory_both_capped() {
        let bs = BoundaryScenario {
            description: "both ends capped".to_string(),
            inner_profile: parse("-(x1 - 1/2)^2", 1).unwrap(),
            base: None,
            axis: 0,
            ends: vec![
                BoundaryEnd {
                    at: 0.0,
                    outward: -1.0,
                    class: BoundaryClass::N1,
                    restriction_counts: vec![1],
                },
                BoundaryEnd {
                    at: 1.0,
                    outward: 1.0,
                    class: BoundaryClass::N1,
                    restriction_counts: vec![1],
                },
            ],
            surface_constraint: None,
            extended_box: Some(BoxModel::new(1, 2.5, 0.01)),
            surface_seeds: vec![],
            surface_mesh_scale: 0.02,
            expected_interior: vec![0, 1],
            reference_pair_betti: vec![1, 0],
        };
        let (model, f) = extend_boundary_function(&bs).unwrap();
        let (crits, _) = find_critical_points(&model, &f).unwrap();
        assert_eq!(crits.len(), 3, "crits: {crits:?}");
        let minima: Vec<f64> = crits
            .iter()
            .filter(|c| c.index == 0)
            .map(|c| c.position[0])
            .collect();
        let maxima: Vec<f64> = crits
            .iter()
            .filter(|c| c.index == 1)
            .map(|c| c.position[0])
            .collect();
        assert_eq!(minima.len(), 2);
        assert!(minima.iter().any(|x| x.abs() < 1e-8));
        assert!(minima.iter().any(|x| (x - 1.0).abs() < 1e-8));
        assert_eq!(maxima.len(), 1);
        assert!((maxima[0] - 0.5).abs() < 1e-8);
    }

    /// Monotone profile with both ends linear: no critical points at all
    /// and a trivial reference pair.
    #[test]
    fn monotone_linear_extension_has_no_criticals() {
        let bs = BoundaryScenario {
            description: "monotone".to_string(),
            inner_profile: parse("x1/4", 1).unwrap(),
            base: None,
            axis: 0,
            ends: vec![
                BoundaryEnd {
                    at: 0.0,
                    outward: -1.0,
                    class: BoundaryClass::N2,
                    restriction_counts: vec![1],
                },
                BoundaryEnd {
                    at: 1.0,
                    outward: 1.0,
                    class: BoundaryClass::N2,
                    restriction_counts: vec![1],
                },
            ],
            surface_constraint: None,
            extended_box: Some(BoxModel::new(1, 2.5, 0.01)),
            surface_seeds: vec![],
            surface_mesh_scale: 0.02,
            expected_interior: vec![0, 0],
            reference_pair_betti: vec![0, 0],
        };
        let (model, f) = extend_boundary_function(&bs).unwrap();
        let (crits, _) = find_critical_points(&model, &f).unwrap();
        assert!(crits.is_empty(), "crits: {crits:?}");
        let rows = corollary_inequality_table(&bs);
        assert!(rows.iter().all(|r| r.holds));
    }

    #[test]
    fn non_transversal_profile_errors() {
        let bs = BoundaryScenario {
            description: "flat end".to_string(),
            // derivative vanishes at the right end
            inner_profile: parse("-(x1 - 1)^2", 1).unwrap(),
            base: None,
            axis: 0,
            ends: vec![BoundaryEnd {
                at: 1.0,
                outward: 1.0,
                class: BoundaryClass::N1,
                restriction_counts: vec![1],
            }],
            surface_constraint: None,
            extended_box: Some(BoxModel::new(1, 2.5, 0.01)),
            surface_seeds: vec![],
            surface_mesh_scale: 0.02,
            expected_interior: vec![],
            reference_pair_betti: vec![0, 0],
        };
        assert!(matches!(
            extend_boundary_function(&bs),
            Err(BoundaryError::NonTransversal(..))
        ));
    }

    /// Explicit trigonometric counts on the cylinder: the capped circle
    /// carries one index-1 and one index-2 point of the extension; the
    /// table holds against the reference pair ranks with equality at the
    /// top.
    #[test]
    fn cylinder_corollary_table() {
        let s = super::cylinder_boundary_scenario();
        let bs = s.boundary.as_ref().unwrap();
        let rows = corollary_inequality_table(bs);
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.holds), "rows: {rows:?}");
        // top-degree alternating sums: 0 - 1 + 1 = 0 on both sides
        assert_eq!(rows[2].alternating_lhs, rows[2].alternating_rhs);
    }

    #[test]
    fn cylinder_extension_critical_inventory() {
        let s = super::cylinder_boundary_scenario();
        let (crits, _) = find_critical_points(&s.model, &s.f).unwrap();
        // index-2 at (theta = 0, z = 1), index-1 at (theta = pi, z = 1)
        assert_eq!(crits.len(), 2, "crits: {crits:?}");
        let max = crits.iter().find(|c| c.index == 2).expect("missing index-2");
        let saddle = crits.iter().find(|c| c.index == 1).expect("missing index-1");
        assert!((max.position[0] - 1.0).abs() < 1e-7 && (max.position[2] - 1.0).abs() < 1e-7);
        assert!((saddle.position[0] + 1.0).abs() < 1e-7 && (saddle.position[2] - 1.0).abs() < 1e-7);
    }
}
