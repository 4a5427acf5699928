use std::f64::consts::FRAC_PI_4;
use std::sync::Arc;

use mlsc::fem::{assemble_system, solve_dirichlet, TriGeom};
use mlsc::mesh::{initial_mesh, midpoint_prolongate, MarkedRefinement, SquareDomain, TriMesh};
use mlsc::quadrature::rule_for_degree;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_point(rng: &mut StdRng) -> [f64; 2] {
    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
}

fn random_marks(rng: &mut StdRng, mesh: &TriMesh) -> Vec<usize> {
    let n = mesh.n_triangles();
    let k = rng.gen_range(1..=(n / 10).max(1));
    (0..k).map(|_| rng.gen_range(0..n)).collect()
}

#[test]
fn ten_random_refinements_keep_the_mesh_valid() {
    for rule in [MarkedRefinement::Single, MarkedRefinement::Full] {
        let mut rng = StdRng::seed_from_u64(7);
        let mut mesh = initial_mesh(&SquareDomain::default(), 3);
        for _ in 0..10 {
            let marks = random_marks(&mut rng, &mesh);
            let (child, record) = mesh.refine_nvb_with(&marks, rule).unwrap();
            child.check_invariants().unwrap();
            assert!(child.n_triangles() > mesh.n_triangles());
            // Every triangle is similar to the initial right isosceles ones.
            assert!(child.min_angle() >= FRAC_PI_4 - 1e-12);
            assert!((child.total_area() - 4.0).abs() < 1e-12);

            let mut area = vec![0.0; mesh.n_triangles()];
            for (c, &p) in record.parent_of.iter().enumerate() {
                area[p as usize] += child.area(c);
            }
            for (t, a) in area.iter().enumerate() {
                assert!((a - mesh.area(t)).abs() <= 1e-12 * mesh.area(t));
            }
            assert_eq!(&child.vertices()[..mesh.n_vertices()], mesh.vertices());
            for (i, &[a, b]) in record.new_vertex_parents.iter().enumerate() {
                let m = child.vertices()[record.parent_vertex_count + i];
                let (p, q) = (mesh.vertices()[a as usize], mesh.vertices()[b as usize]);
                assert_eq!(m, [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
            }
            mesh = child;
        }
    }
}

#[test]
fn prolongation_agrees_pointwise() {
    let mut rng = StdRng::seed_from_u64(11);
    let mut mesh = initial_mesh(&SquareDomain::default(), 3);
    for _ in 0..4 {
        let coarse: Vec<f64> = (0..mesh.n_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let marks = random_marks(&mut rng, &mesh);
        let (child, record) = mesh.refine_nvb(&marks).unwrap();
        let fine = midpoint_prolongate(&coarse, &record).unwrap();
        for _ in 0..100 {
            let x = random_point(&mut rng);
            let (a, b) = (mesh.eval_p1(&coarse, x).unwrap(), child.eval_p1(&fine, x).unwrap());
            assert!((a - b).abs() < 1e-12, "{x:?}: {a} vs {b}");
        }
        mesh = child;
    }
}

#[test]
fn uniform_refinement_vertex_counts() {
    for r in 0..6 {
        let m = initial_mesh(&SquareDomain::default(), r);
        let side = (1usize << r) + 1;
        assert_eq!(m.n_vertices(), side * side);
        assert_eq!(m.n_triangles(), 2 << (2 * r));
    }
}

fn bubble_h1_error(r: usize) -> f64 {
    let mesh = Arc::new(initial_mesh(&SquareDomain::default(), r));
    let f = |x: [f64; 2]| 2.0 * (1.0 - x[1] * x[1]) + 2.0 * (1.0 - x[0] * x[0]);
    let grad = |x: [f64; 2]| [-2.0 * x[0] * (1.0 - x[1] * x[1]), -2.0 * x[1] * (1.0 - x[0] * x[0])];
    let system = assemble_system(&mesh, &f, 5).unwrap();
    let u = solve_dirichlet(Arc::clone(&mesh), &system).unwrap();
    let rule = rule_for_degree(5).unwrap();
    let mut err = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.corners(t);
        let g = TriGeom::new(p);
        let gh = g.gradient([0, 1, 2].map(|i| u.coeffs[tri[i] as usize]));
        for (l, w) in rule.points.iter().zip(rule.weights) {
            let x = [0, 1].map(|d| l[0] * p[0][d] + l[1] * p[1][d] + l[2] * p[2][d]);
            let ge = grad(x);
            err += w * g.area * ((ge[0] - gh[0]).powi(2) + (ge[1] - gh[1]).powi(2));
        }
    }
    err.sqrt()
}

#[test]
fn manufactured_bubble_converges_at_first_order_in_h1() {
    let errs: Vec<f64> = (3..=6).map(bubble_h1_error).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((0.9..=1.1).contains(&order), "{errs:?}");
    }
}
