use witten_lab::field_dsl::parse;
use witten_lab::geometry::*;
use witten_lab::agmon::*;

fn main() {
    let t = 20.0;
    let b = 0.9;
    let model = BoxModel::new(2, 2.5, 0.025);
    let f = ScalarField::new(parse("(x1^2 + x2^2)/2", 2).unwrap(), 2);
    let mm = ManifoldModel::EuclideanBox(model.clone());
    let (crits, _) = find_critical_points(&mm, &f).unwrap();
    let dcore = decay_core(&mm, &f, t, b, &crits).unwrap();
    println!("core: [{:.4},{:.4}]x[{:.4},{:.4}]", dcore.lo[0], dcore.hi[0], dcore.lo[1], dcore.hi[1]);
    let rho = agmon_distance(&model, &f, t, b, &dcore);
    let grid = model.grid();
    for (x, y) in [(0.175f64, -1.425f64), (0.0, -1.425), (0.175, -0.425), (0.175, -0.4), (0.0, -0.4), (1.425, 0.175), (-0.85, 0.125), (0.125, -0.85), (0.85, 0.0)] {
        let node = grid.nearest_node(&[x, y]);
        let p = grid.coords(node);
        println!("rho({:.3},{:.3}) = {:.4}", p[0], p[1], rho.values[node]);
    }
    // source sanity: count core nodes
    let n_src = (0..grid.node_count()).filter(|&n| dcore.contains_point(&grid.coords(n))).count();
    println!("core nodes: {n_src}");
}
