mod common;

use fraclab_core::energy::{
    axiom_suite, energy, energy_measure, geometric_weights, is_dominated, ks_energy, minimal_energy_dominant,
    poincare_constant, product_energy, product_energy_measure, Axiom, ConductanceRule, EnergyForm,
    EnergyModel, ProductEnergyForm,
};
use fraclab_core::{build_graph, product_spec, CellNetwork, EnergyError, Execution, FractalSpec, MeasureVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn constant_functions_carry_no_energy() {
    for spec in [FractalSpec::interval(), FractalSpec::carpet(), FractalSpec::gasket()] {
        let g = build_graph(&spec, 2).unwrap();
        let cells = EnergyForm::on_cells(&g, 1.7).unwrap();
        assert_eq!(energy(&cells, &vec![-2.5; g.cell_count()]).unwrap(), 0.0);
        assert!(energy_measure(&cells, &vec![4.0; g.cell_count()]).unwrap().cell_mass.iter().all(|&m| m == 0.0));
    }
    let g = build_graph(&FractalSpec::gasket(), 3).unwrap();
    let j = EnergyForm::on_junctions(&g, 3.0, ConductanceRule::default()).unwrap();
    assert_eq!(energy(&j, &vec![1.0; j.node_count()]).unwrap(), 0.0);
}

#[test]
fn interval_ramp_has_energy_one_over_n() {
    for level in 1..=8 {
        let g = build_graph(&FractalSpec::interval(), level).unwrap();
        let n = g.cell_count() as f64;
        let form = EnergyForm::on_junctions(&g, 2.0, ConductanceRule::default()).unwrap();
        let f: Vec<f64> = (0..form.node_count()).map(|v| form.node_coords(v).unwrap()[0] as f64 / n).collect();
        let e = energy(&form, &f).unwrap();
        assert!((e - 1.0 / n).abs() < 1e-15 / n, "level {level}: {e}");
        // each cell owns one step of size 1/N
        for m in energy_measure(&form, &f).unwrap().cell_mass {
            assert!((m - 1.0 / (n * n)).abs() < 1e-17);
        }
    }
}

#[test]
fn interval_cell_ramp_splits_edges_between_endpoints() {
    let g = build_graph(&FractalSpec::interval(), 2).unwrap();
    let form = EnergyForm::on_cells(&g, 2.0).unwrap();
    let f = [0.0, 0.25, 0.5, 0.75];
    let m = energy_measure(&form, &f).unwrap().cell_mass;
    let expected = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 16.0, 1.0 / 32.0];
    for (a, b) in m.iter().zip(expected) {
        assert!((a - b).abs() < 1e-16);
    }
    assert!((energy(&form, &f).unwrap() - 3.0 / 16.0).abs() < 1e-16);
}

#[test]
fn homogeneity_and_locality() {
    let g = build_graph(&FractalSpec::carpet(), 2).unwrap();
    let form = EnergyForm::on_cells(&g, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = random_vec(&mut rng, g.cell_count());
    let scaled: Vec<f64> = f.iter().map(|x| -2.0 * x).collect();
    let a = energy_measure(&form, &f).unwrap().cell_mass;
    let b = energy_measure(&form, &scaled).unwrap().cell_mass;
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(*y, 4.0 * x, "multiplying by -2 scales each cell by exactly 4");
    }
    for p in [1.5, 3.0] {
        let form = EnergyForm::on_cells(&g, p).unwrap();
        let e = energy(&form, &f).unwrap();
        let e3 = energy(&form, &f.iter().map(|x| 3.0 * x).collect::<Vec<_>>()).unwrap();
        assert!((e3 - 3f64.powf(p) * e).abs() < 1e-12 * e3);
    }
    // a bump on one cell charges only that cell and its neighbours
    let mut bump = vec![0.0; g.cell_count()];
    bump[20] = 1.0;
    let m = energy_measure(&form, &bump).unwrap().cell_mass;
    for (c, &v) in m.iter().enumerate() {
        let near = c == 20 || g.neighbors(20).contains(&(c as u32));
        assert_eq!(v > 0.0, near, "cell {c}");
    }
}

#[test]
fn mass_matches_independent_edge_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for spec in [FractalSpec::square(), FractalSpec::carpet(), FractalSpec::gasket(), FractalSpec::sponge()] {
        let g = build_graph(&spec, 2).unwrap();
        for p in [1.5, 2.0, 3.0] {
            let form = EnergyForm::on_cells(&g, p).unwrap();
            let f = random_vec(&mut rng, g.cell_count());
            let oracle = common::edge_energy(&g.edges(), &f, p, 1.0);
            let e = energy(&form, &f).unwrap();
            let mass: f64 = energy_measure(&form, &f).unwrap().cell_mass.iter().sum();
            assert!((e - oracle).abs() <= 1e-12 * oracle);
            assert!((mass - e).abs() <= 1e-12 * e);
        }
    }
}

#[test]
fn contractivity_for_clamping() {
    let g = build_graph(&FractalSpec::gasket(), 3).unwrap();
    let form = EnergyForm::on_cells(&g, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let f = random_vec(&mut rng, g.cell_count());
        let clamped: Vec<f64> = f.iter().map(|x| x.clamp(0.0, 0.5)).collect();
        let a = energy_measure(&form, &f).unwrap().cell_mass;
        let b = energy_measure(&form, &clamped).unwrap().cell_mass;
        for (x, y) in a.iter().zip(&b) {
            assert!(y <= x);
        }
    }
}

fn product_form(x: &FractalSpec, y: &FractalSpec, level: u32, p: f64) -> ProductEnergyForm {
    let spec = product_spec(x, y).unwrap();
    ProductEnergyForm::from_spec(&spec, level, p).unwrap()
}

#[test]
fn product_energy_of_functions_of_one_variable() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (x, y, level) in [
        (FractalSpec::interval(), FractalSpec::interval(), 3),
        (FractalSpec::carpet(), FractalSpec::carpet(), 1),
        (FractalSpec::gasket(), FractalSpec::interval(), 2),
    ] {
        for p in [1.5, 2.0, 3.0] {
            let form = product_form(&x, &y, level, p);
            let nx = form.factor_x.node_count();
            let ny = form.factor_y.node_count();
            let f = random_vec(&mut rng, nx);
            let g = random_vec(&mut rng, ny);
            let mut only_x = vec![0.0; form.cell_count()];
            let mut sum = vec![0.0; form.cell_count()];
            for c in 0..form.cell_count() {
                let (i, j) = form.split(c);
                only_x[c] = f[i];
                sum[c] = f[i] + g[j];
            }
            let ex = energy(&form.factor_x, &f).unwrap();
            let ey = energy(&form.factor_y, &g).unwrap();
            assert!((product_energy(&form, &only_x).unwrap() - ex).abs() <= 1e-12 * ex);
            assert!((product_energy(&form, &sum).unwrap() - (ex + ey)).abs() <= 1e-12 * (ex + ey));
            // Gamma<u>(A x Y) = Gamma_X<f>(A)
            let gamma_x = energy_measure(&form.factor_x, &f).unwrap();
            let a: Vec<u32> = (0..nx as u32).filter(|i| i % 3 != 1).collect();
            let cells: Vec<u32> =
                (0..form.cell_count() as u32).filter(|&c| a.contains(&(form.split(c as usize).0 as u32))).collect();
            let lhs = product_energy_measure(&form, &only_x, &cells).unwrap();
            assert!((lhs - gamma_x.of_set(&a)).abs() <= 1e-12 * ex);
            let all: Vec<u32> = (0..form.cell_count() as u32).collect();
            let total = product_energy_measure(&form, &sum, &all).unwrap();
            assert!((total - product_energy(&form, &sum).unwrap()).abs() <= 1e-12 * total);
        }
    }
}

#[test]
fn product_energy_in_the_second_variable() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let form = product_form(&FractalSpec::carpet(), &FractalSpec::carpet(), 1, 2.0);
    let g = random_vec(&mut rng, form.factor_y.node_count());
    let u: Vec<f64> = (0..form.cell_count()).map(|c| g[form.split(c).1]).collect();
    let gamma_y = energy_measure(&form.factor_y, &g).unwrap();
    let b: Vec<u32> = vec![0, 2, 7];
    let cells: Vec<u32> = (0..form.cell_count() as u32).filter(|&c| b.contains(&(form.split(c as usize).1 as u32))).collect();
    let lhs = product_energy_measure(&form, &u, &cells).unwrap();
    assert!((lhs - gamma_y.of_set(&b)).abs() <= 1e-13);
}

#[test]
fn bilinear_ramp_on_square_matches_direct_sum() {
    // u(x, y) = x y on the level-2 square, sections are 1-D ramps
    let form = product_form(&FractalSpec::interval(), &FractalSpec::interval(), 2, 2.0);
    let t = |i: usize| (i as f64 + 0.5) / 4.0;
    let u: Vec<f64> = (0..16).map(|c| {
        let (i, j) = form.split(c);
        t(i) * t(j)
    }).collect();
    // paths 0-1-2-3 in each factor, slice averages weighted by 1/4
    let mut direct = 0.0;
    for i in 0..4 {
        for j in 0..3 {
            direct += 0.25 * (t(i) * t(j + 1) - t(i) * t(j)).powi(2);
            direct += 0.25 * (t(j + 1) * t(i) - t(j) * t(i)).powi(2);
        }
    }
    assert!((product_energy(&form, &u).unwrap() - direct).abs() < 1e-15);
}

#[test]
fn single_cell_product_measure_on_two_by_two() {
    let form = product_form(&FractalSpec::interval(), &FractalSpec::interval(), 1, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..10 {
        let u = random_vec(&mut rng, 4);
        let at = |i: usize, j: usize| u[form.cell_of(i, j)];
        for c in 0..4 {
            let (i, j) = form.split(c);
            // four slices: the x-slice and y-slice through c carry half an edge
            // each with weight 1/2, the other two slices miss c
            let hand = 0.5 * 0.5 * (at(i, j) - at(i, 1 - j)).powi(2) + 0.5 * 0.5 * (at(i, j) - at(1 - i, j)).powi(2);
            let got = product_energy_measure(&form, &u, &[c as u32]).unwrap();
            assert!((got - hand).abs() < 1e-15, "cell {c}: {got} vs {hand}");
        }
    }
}

#[test]
fn axiom_suite_is_clean_on_carpet_forms() {
    let g = build_graph(&FractalSpec::carpet(), 2).unwrap();
    let cell_form = EnergyForm::on_cells(&g, 2.0).unwrap();
    let prod = ProductEnergyForm::from_spec(&FractalSpec::from_name("carpet*carpet").unwrap(), 1, 2.0).unwrap();
    let models: [&dyn EnergyModel; 2] = [&cell_form, &prod];
    for model in models {
        for seed in [0, 7] {
            let report = axiom_suite(model, 100, seed, 1e-9, Execution::Sequential);
            assert_eq!(report.results.len(), Axiom::ALL.len());
            for r in &report.results {
                assert_eq!(r.samples, 100);
                assert_eq!(r.violations, 0, "{:?} worst {}", r.axiom, r.worst_residual);
            }
        }
    }
}

#[test]
fn axiom_suite_is_deterministic_across_execution_modes() {
    let g = build_graph(&FractalSpec::gasket(), 3).unwrap();
    let form = EnergyForm::on_cells(&g, 3.0).unwrap();
    let a = axiom_suite(&form, 40, 9, 1e-9, Execution::Sequential);
    let b = axiom_suite(&form, 40, 9, 1e-9, Execution::Parallel);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn dominant_measure_properties() {
    let g = build_graph(&FractalSpec::carpet(), 2).unwrap();
    let form = EnergyForm::on_cells(&g, 2.0).unwrap();
    let ramp: Vec<f64> = (0..g.cell_count()).map(|c| g.center(c)[0]).collect();
    let lambda = minimal_energy_dominant(&form, &[ramp.clone()], &[1.0]).unwrap();
    assert_eq!(lambda.weights, energy_measure(&form, &ramp).unwrap().cell_mass);

    assert!(matches!(minimal_energy_dominant(&form, &[], &[]), Err(EnergyError::EmptyFamily)));

    // point indicators reach every edge, hence every cell
    let family: Vec<Vec<f64>> = (0..g.cell_count())
        .map(|c| (0..g.cell_count()).map(|d| if d == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let weights = geometric_weights(family.len());
    let lambda = minimal_energy_dominant(&form, &family, &weights).unwrap();
    assert!(lambda.weights.iter().all(|&w| w > 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let f = random_vec(&mut rng, g.cell_count());
        assert!(is_dominated(&energy_measure(&form, &f).unwrap().cell_mass, &lambda));
    }
    // a measure missing a charged cell does not dominate
    let mut holes = lambda.weights.clone();
    holes[3] = 0.0;
    let f = random_vec(&mut rng, g.cell_count());
    assert!(!is_dominated(&energy_measure(&form, &f).unwrap().cell_mass, &MeasureVector::new(2, holes)));
}

#[test]
fn ks_energy_examples() {
    let g = build_graph(&FractalSpec::interval(), 2).unwrap();
    let mu = MeasureVector::uniform(&g);
    let eps = g.cell_diameter();
    assert_eq!(ks_energy(&g, &mu, &[2.0; 4], 2.0, &[eps, 2.0 * eps]).unwrap(), 0.0);
    // closed balls of radius 1/4 around cells 1 and 2 hold three cells each;
    // only the pairs (1, 2) and (2, 1) differ
    let half = [0.0, 0.0, 1.0, 1.0];
    let hand = 2.0 * 0.25 * 0.25 / 0.75;
    for p in [1.5, 2.0, 3.0] {
        assert!((ks_energy(&g, &mu, &half, p, &[eps]).unwrap() - hand).abs() < 1e-15);
    }
}

#[test]
fn ks_energy_grows_with_the_radius_list() {
    let g = build_graph(&FractalSpec::carpet(), 2).unwrap();
    let mu = MeasureVector::uniform(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let eps = g.cell_diameter();
    for _ in 0..10 {
        let f = random_vec(&mut rng, g.cell_count());
        let mut radii = vec![eps];
        let mut last = ks_energy(&g, &mu, &f, 2.0, &radii).unwrap();
        for k in 2..=9 {
            radii.push(k as f64 * eps);
            let next = ks_energy(&g, &mu, &f, 2.0, &radii).unwrap();
            assert!(next >= last);
            last = next;
        }
    }
}

#[test]
fn ks_energy_is_comparable_to_graph_energy_on_the_square() {
    // at r = eps each king-move edge enters with weight nu(x) nu(y) (1/nu(B_x) + 1/nu(B_y)),
    // and balls hold between 4 and 9 cells, so N * ks / E lies in [2/9, 1/2]
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for level in 1..=4 {
        let g = build_graph(&FractalSpec::square(), level).unwrap();
        let n = g.cell_count() as f64;
        let mu = MeasureVector::uniform(&g);
        let form = EnergyForm::on_cells(&g, 2.0).unwrap();
        for _ in 0..20 {
            let f = random_vec(&mut rng, g.cell_count());
            let ratio = n * ks_energy(&g, &mu, &f, 2.0, &[g.cell_diameter()]).unwrap() / energy(&form, &f).unwrap();
            assert!((2.0 / 9.0 - 1e-12..=0.5 + 1e-12).contains(&ratio), "level {level}: {ratio}");
        }
    }
}

#[test]
fn poincare_constant_of_products_is_controlled_by_the_factors() {
    for (name, levels) in [("interval", 1..=3), ("gasket", 1..=3), ("carpet", 1..=2)] {
        let x = FractalSpec::from_name(name).unwrap();
        for level in levels {
            let gx = build_graph(&x, level).unwrap();
            let fx = EnergyForm::on_cells(&gx, 2.0).unwrap();
            let beta = 2.0;
            let cx = poincare_constant(&fx, &gx, beta, 2.0, 20, 1);
            let spec = product_spec(&x, &x).unwrap();
            let g = build_graph(&spec, level).unwrap();
            let prod = ProductEnergyForm::from_spec(&spec, level, 2.0).unwrap();
            let c = poincare_constant(&prod, &g, beta, 2.0, 20, 1);
            // variance tensorizes over the two coordinates, so the product
            // never needs a larger constant than the factor
            assert!(cx > 0.0 && c <= cx * (1.0 + 1e-9), "{name} level {level}: factor {cx}, product {c}");
        }
    }
}
