//! Built-in scenario catalog with reference data, the boundary-collar
//! extension, and the full verification pipeline.

mod boundary;
mod charts;
mod verify;

pub use boundary::{extend_boundary_function, BoundaryClass, BoundaryEnd, BoundaryError,
    BoundaryScenario, CorollaryRow, corollary_inequality_table};
pub use charts::punctured_sphere_chart;
pub use verify::{verify_scenario, EigenCache, Stage, VerifyError};

use crate::field_dsl::parse;
use crate::flow::PunctureMask;
use crate::geometry::{BoxModel, ManifoldModel, ScalarField, SurfaceModel, TamenessVerdict};

/// Every threshold used by any gated check lives here; reports echo it.
#[derive(Debug, Clone)]
pub struct Thresholds {
    /// Agmon metric coefficient b in (0,1).
    pub b: f64,
    /// Minimum accepted decay rate for eigenform fits.
    pub a_min: f64,
    /// Quadratic-form lower bound gate (T1); below it the check reports
    /// "threshold not met".
    pub t1_quadratic_form: f64,
    /// Eigencount gate (T3); below it the table carries a banner.
    pub t3_eigencount: f64,
    /// Shooting fan size for index-2 counting.
    pub shoot_count: usize,
    /// Fan size for index-2 unstable-manifold integrals.
    pub fan_size: usize,
    /// Capture radius in grid cells.
    pub capture_cells: f64,
    /// Shooting radius in grid cells.
    pub shoot_cells: f64,
    /// Flow time horizon (the rescaled flow crosses distances at rate
    /// 1/T^2, so this scales with T^2).
    pub t_max_flow: f64,
    /// Seed for every randomized piece (solver starts, random fields).
    pub seed: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            b: 0.9,
            a_min: 0.9,
            t1_quadratic_form: 5.0,
            t3_eigencount: 8.0,
            shoot_count: 48,
            fan_size: 256,
            capture_cells: 2.0,
            shoot_cells: 10.0,
            t_max_flow: 1e3,
            seed: 20240901,
        }
    }
}

/// Which pipeline stages a scenario supports. Spectral stages need a flat
/// (or conformally flat) grid; surface models run the geometry and flow
/// stages, with tameness audited on a chart when one is configured.
#[derive(Debug, Clone, Copy)]
pub struct StagePlan {
    pub spectral: bool,
    pub agmon: bool,
    pub flow: bool,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: ManifoldModel,
    pub f: ScalarField,
    pub tameness_class: TamenessVerdict,
    /// Reference cohomology ranks of the pair (model, far sublevel set),
    /// shipped as data with a provenance note.
    pub reference_betti: Vec<usize>,
    pub reference_note: String,
    /// Expected critical point counts per index.
    pub expected_morse_counts: Vec<usize>,
    pub t_schedule: Vec<f64>,
    pub thresholds: Thresholds,
    pub stages: StagePlan,
    pub tameness_shells: Vec<f64>,
    /// Chart model used for the tameness audit when the primary model is
    /// a surface (the punctured-sphere chart). None for compact surfaces,
    /// whose growth conditions hold vacuously.
    pub tameness_chart: Option<(BoxModel, ScalarField)>,
    pub mask: Option<PunctureMask>,
    pub surface_escape_radius: f64,
    /// ExpectedFail markers: the punctured sphere declares a broken
    /// boundary square.
    pub expect_d_squared_nonzero: bool,
    pub boundary: Option<BoundaryScenario>,
}

fn sphere_seeds() -> Vec<[f64; 3]> {
    let mut seeds = Vec::new();
    for i in 0..10 {
        for j in 0..5 {
            let th = std::f64::consts::PI * (j as f64 + 0.5) / 5.0;
            let ph = 2.0 * std::f64::consts::PI * i as f64 / 10.0;
            seeds.push([th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
        }
    }
    seeds.push([0.0, 0.0, 1.0]);
    seeds.push([0.0, 0.0, -1.0]);
    seeds
}

fn sphere_model() -> SurfaceModel {
    SurfaceModel {
        constraint: parse("x1^2 + x2^2 + x3^2 - 1", 3).unwrap(),
        seeds: sphere_seeds(),
        mesh_scale: 0.02,
    }
}

pub(super) fn base_scenario_for_boundary(
    name: &str,
    model: ManifoldModel,
    f: ScalarField,
    t_schedule: Vec<f64>,
) -> Scenario {
    base_scenario(name, model, f, t_schedule)
}

fn base_scenario(
    name: &str,
    model: ManifoldModel,
    f: ScalarField,
    t_schedule: Vec<f64>,
) -> Scenario {
    Scenario {
        name: name.to_string(),
        model,
        f,
        tameness_class: TamenessVerdict::StronglyTame,
        reference_betti: vec![],
        reference_note: String::new(),
        expected_morse_counts: vec![],
        t_schedule,
        thresholds: Thresholds::default(),
        stages: StagePlan { spectral: true, agmon: true, flow: true },
        tameness_shells: vec![],
        tameness_chart: None,
        mask: None,
        surface_escape_radius: 4.0,
        expect_d_squared_nonzero: false,
        boundary: None,
    }
}

fn sphere_scenario(name: &str, masked: bool) -> Scenario {
    let f = ScalarField::new(parse("x1^2 + x3", 3).unwrap(), 3);
    let mut s = base_scenario(
        name,
        ManifoldModel::EmbeddedSurface(sphere_model()),
        f,
        vec![10.0],
    );
    s.stages = StagePlan { spectral: false, agmon: false, flow: true };
    s.reference_betti = vec![1, 0, 1];
    s.reference_note =
        "cohomology of the sphere; the far sublevel set is empty since f >= -1".to_string();
    s.expected_morse_counts = vec![1, 1, 2];
    s.surface_escape_radius = 3.0;
    if masked {
        s.name = name.to_string();
        s.mask = Some(PunctureMask { center: [0.0, 1.0, 0.0], radius: 0.05 });
        s.tameness_class = TamenessVerdict::NotTame;
        s.expect_d_squared_nonzero = true;
        let (chart_model, chart_f) = punctured_sphere_chart(
            &parse("x1^2 + x3", 3).unwrap(),
            [0.0, 1.0, 0.0],
        );
        s.tameness_chart = Some((chart_model, chart_f));
        s.tameness_shells = vec![4.0, 8.0, 16.0];
    } else {
        s.tameness_class = TamenessVerdict::StronglyTame; // vacuous: compact model
        s.tameness_shells = vec![1.5, 2.0, 2.5];
    }
    s
}

/// The built-in catalog.
pub fn catalog() -> Vec<Scenario> {
    let mut out = Vec::new();

    // single well on the line
    let mut s = base_scenario(
        "gaussian_1d",
        ManifoldModel::EuclideanBox(BoxModel::new(1, 6.0, 0.005)),
        ScalarField::new(parse("x1^2/2", 1).unwrap(), 1),
        vec![10.0, 20.0, 40.0],
    );
    s.reference_betti = vec![1, 0];
    s.reference_note = "line with empty far sublevel set (f >= 0): ranks of H*(R)".to_string();
    s.expected_morse_counts = vec![1, 0];
    s.tameness_shells = vec![2.0, 3.5, 5.0];
    out.push(s);

    // saddle and well on the line
    let mut s = base_scenario(
        "cubic_1d",
        ManifoldModel::EuclideanBox(BoxModel::new(1, 3.0, 0.005)),
        ScalarField::new(parse("x1^3/3 - x1", 1).unwrap(), 1),
        vec![10.0, 15.0, 20.0, 30.0, 40.0],
    );
    s.reference_betti = vec![0, 0];
    s.reference_note =
        "the far sublevel set is a left ray; the pair (R, ray) retracts to a point relative"
            .to_string();
    s.expected_morse_counts = vec![1, 1];
    s.tameness_shells = vec![1.8, 2.2, 2.6];
    out.push(s);

    // the same profile crossed with a quadratic well
    let mut s = base_scenario(
        "cubic_product_2d",
        ManifoldModel::EuclideanBox(BoxModel::new(2, 2.56, 0.016)),
        ScalarField::new(parse("x1^3/3 - x1 + x2^2", 2).unwrap(), 2),
        vec![8.0, 16.0],
    );
    s.reference_betti = vec![0, 0, 0];
    s.reference_note =
        "relative cohomology of the plane against a half-plane-like sublevel set vanishes"
            .to_string();
    s.expected_morse_counts = vec![1, 1, 0];
    s.tameness_shells = vec![1.8, 2.2, 2.6];
    out.push(s);

    // radial well in the plane
    let mut s = base_scenario(
        "gaussian_2d",
        ManifoldModel::EuclideanBox(BoxModel::new(2, 2.5, 0.025)),
        ScalarField::new(parse("(x1^2 + x2^2)/2", 2).unwrap(), 2),
        vec![10.0, 20.0],
    );
    s.reference_betti = vec![1, 0, 0];
    s.reference_note = "plane with empty far sublevel set".to_string();
    s.expected_morse_counts = vec![1, 0, 0];
    s.tameness_shells = vec![1.2, 1.7, 2.2];
    out.push(s);

    // no critical points at all; gradient bounded away from zero but not
    // growing
    let mut s = base_scenario(
        "linear_1d",
        ManifoldModel::EuclideanBox(BoxModel::new(1, 4.0, 0.02)),
        ScalarField::new(parse("x1", 1).unwrap(), 1),
        vec![10.0, 20.0],
    );
    s.tameness_class = TamenessVerdict::WellTame;
    s.reference_betti = vec![0, 0];
    s.reference_note = "pair of the line against a ray".to_string();
    s.expected_morse_counts = vec![0, 0];
    s.tameness_shells = vec![2.0, 3.0, 3.8];
    out.push(s);

    out.push(sphere_scenario("sphere_heart", false));
    out.push(sphere_scenario("sphere_heart_punctured", true));

    out.push(boundary::interval_boundary_scenario());
    out.push(boundary::cylinder_boundary_scenario());

    out
}

pub fn find_scenario(name: &str) -> Option<Scenario> {
    catalog().into_iter().find(|s| s.name == name)
}

/// Load a scenario from a human-editable key-value file (box models only;
/// surface and boundary scenarios live in the compiled catalog).
pub fn load_scenario_file(text: &str) -> Result<Scenario, String> {
    let mut name = None;
    let mut dim = None;
    let mut half_width = None;
    let mut spacing = None;
    let mut f_src = None;
    let mut t_schedule = None;
    let mut reference_betti: Option<Vec<usize>> = None;
    let mut shells = None;
    let mut tameness = None;
    let mut morse: Option<Vec<usize>> = None;
    let mut thresholds = Thresholds::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", lineno + 1))?;
        let key = key.trim();
        let value = value.trim().trim_matches('"');
        let parse_list = |v: &str| -> Result<Vec<f64>, String> {
            v.trim_matches(['[', ']'])
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<f64>().map_err(|e| e.to_string()))
                .collect()
        };
        match key {
            "name" => name = Some(value.to_string()),
            "dim" => dim = Some(value.parse::<usize>().map_err(|e| e.to_string())?),
            "half_width" => half_width = Some(value.parse::<f64>().map_err(|e| e.to_string())?),
            "spacing" => spacing = Some(value.parse::<f64>().map_err(|e| e.to_string())?),
            "f" => f_src = Some(value.to_string()),
            "t_schedule" => t_schedule = Some(parse_list(value)?),
            "reference_betti" => {
                reference_betti =
                    Some(parse_list(value)?.into_iter().map(|v| v as usize).collect())
            }
            "expected_morse_counts" => {
                morse = Some(parse_list(value)?.into_iter().map(|v| v as usize).collect())
            }
            "tameness_shells" => shells = Some(parse_list(value)?),
            "tameness_class" => {
                tameness = Some(match value {
                    "strongly_tame" => TamenessVerdict::StronglyTame,
                    "well_tame" => TamenessVerdict::WellTame,
                    "not_tame" => TamenessVerdict::NotTame,
                    other => return Err(format!("unknown tameness class {other}")),
                })
            }
            "b" => thresholds.b = value.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?,
            "a_min" => {
                thresholds.a_min = value.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?
            }
            "seed" => {
                thresholds.seed = value.parse().map_err(|e: std::num::ParseIntError| e.to_string())?
            }
            "t1_quadratic_form" => {
                thresholds.t1_quadratic_form =
                    value.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?
            }
            "t3_eigencount" => {
                thresholds.t3_eigencount =
                    value.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?
            }
            other => return Err(format!("unknown key `{other}`")),
        }
    }
    let dim = dim.ok_or("missing dim")?;
    let f_src = f_src.ok_or("missing f")?;
    let expr = parse(&f_src, dim).map_err(|e| e.to_string())?;
    let model = ManifoldModel::EuclideanBox(BoxModel::new(
        dim,
        half_width.ok_or("missing half_width")?,
        spacing.ok_or("missing spacing")?,
    ));
    let mut s = base_scenario(
        &name.ok_or("missing name")?,
        model,
        ScalarField::new(expr, dim),
        t_schedule.ok_or("missing t_schedule")?,
    );
    s.thresholds = thresholds;
    if let Some(r) = reference_betti {
        s.reference_betti = r;
    }
    if let Some(m) = morse {
        s.expected_morse_counts = m;
    }
    if let Some(sh) = shells {
        s.tameness_shells = sh;
    }
    if let Some(t) = tameness {
        s.tameness_class = t;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_contains_the_expected_entries() {
        let names: Vec<String> = catalog().into_iter().map(|s| s.name).collect();
        for want in [
            "gaussian_1d",
            "cubic_1d",
            "cubic_product_2d",
            "gaussian_2d",
            "sphere_heart",
            "sphere_heart_punctured",
            "linear_1d",
            "interval_boundary",
            "cylinder_boundary",
        ] {
            assert!(names.iter().any(|n| n == want), "missing {want}");
        }
    }

    #[test]
    fn gaussian_reference_betti() {
        let s = find_scenario("gaussian_1d").unwrap();
        assert_eq!(s.reference_betti, vec![1, 0]);
    }

    #[test]
    fn cubic_reference_betti_vanishes() {
        let s = find_scenario("cubic_1d").unwrap();
        assert_eq!(s.reference_betti, vec![0, 0]);
    }

    #[test]
    fn cylinder_reference_betti() {
        let s = find_scenario("cylinder_boundary").unwrap();
        assert_eq!(s.reference_betti, vec![0, 1, 1]);
    }

    #[test]
    fn scenario_file_round_trip() {
        let text = r#"
# a narrow well
name = "custom_well"
dim = 1
half_width = 4.0
spacing = 0.02
f = "x1^2/2"
t_schedule = [10.0, 20.0]
reference_betti = [1, 0]
expected_morse_counts = [1, 0]
tameness_shells = [2.0, 3.0, 3.5]
tameness_class = "strongly_tame"
b = 0.9
seed = 42
"#;
        let s = load_scenario_file(text).unwrap();
        assert_eq!(s.name, "custom_well");
        assert_eq!(s.thresholds.seed, 42);
        assert_eq!(s.reference_betti, vec![1, 0]);
    }

    #[test]
    fn masked_and_unmasked_sphere_differ_only_in_the_mask() {
        let a = find_scenario("sphere_heart").unwrap();
        let b = find_scenario("sphere_heart_punctured").unwrap();
        assert!(a.mask.is_none() && b.mask.is_some());
        assert_eq!(a.f.describe(), b.f.describe());
        assert_eq!(a.expected_morse_counts, b.expected_morse_counts);
    }
}
