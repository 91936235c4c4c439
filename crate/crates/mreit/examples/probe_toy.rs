use mreit::fields::{ScalarField, Unit};
use mreit::forward::forward_solve;
use mreit::geometry::*;
use mreit::pde::SolverOptions;
use mreit::phantom::*;
use mreit::reconstruct::*;
use mreit::recovery::GeometryBundle;

fn main() {
    let n = 128;
    let g = build_grid(n, n, 2.0, 2.0, (-1.0, -1.0)).unwrap();
    let m = build_domain(&g, &DomainShape::Square).unwrap();
    let b = place_electrodes(
        &m,
        &ElectrodeSpec::Boxes {
            e_plus: ((0.99, 1.01), (-0.15, 0.15)),
            e_minus: ((-1.01, -0.99), (-0.15, 0.15)),
        },
    )
    .unwrap();
    let geom = GeometryBundle::new(m, b, 4, SolverOptions::default()).unwrap();
    let cfg = ReconstructionConfig {
        sigma_b: 1.0,
        epsilon_stop: 1e-12,
        max_iters: 50,
        ..Default::default()
    };

    for (label, blur) in [("raw", None), ("blurred", Some(BlurSpec { nu: 5.0, window: 7 }))] {
        let t0 = std::time::Instant::now();
        let raw = toy_sigma(&geom.mask.grid).unwrap();
        let spec = PhantomSpec { kind: PhantomKind::ToyLens, blur, sigma_b: 1.0 };
        let star = apply_blur(&spec, &raw).unwrap();
        let fs = forward_solve(&star, &geom.mask, &geom.boundary, cfg.current, geom.opts).unwrap();
        let data = BzData::from_measurement(&fs.bz, &cfg, &geom).unwrap();
        let result = run_schbz(&cfg, &data, &geom, Some(&star), None).unwrap();
        print!("{label}: verdict {:?}, iters {}, minJ {:.3e}", result.verdict, result.iterations, result.min_j);
        println!(", elapsed {:.1?}", t0.elapsed());
        print!("  RE: ");
        for (k, re) in result.re_series.iter().enumerate() {
            if (k + 1) % 5 == 0 || k == 0 {
                print!("n={} {:.4}  ", k + 1, re);
            }
        }
        println!();
        print!("  step: ");
        for (k, s) in result.step_norms.iter().enumerate() {
            if (k + 1) % 5 == 0 || k == 0 {
                print!("n={} {:.2e}  ", k + 1, s);
            }
        }
        println!();
        if let Some(t) = result.theta {
            println!("  theta = {:?} window {}", t.theta, t.window);
        }
        // sigma^1 sanity: lens visible?
        let c = result.sigma.values[geom.mask.grid.idx(64, 64)];
        println!("  final sigma at center: {:.4} (target {:.4})", c, star.values[geom.mask.grid.idx(64, 64)]);
    }
    let _ = ScalarField::constant(&g, 1.0, Unit::SiemensPerMeter);
}
