use mimo_detect::detectors::{ml_bruteforce, DEFAULT_ML_CAP};
use mimo_detect::formulation::{t_from_x, AssignmentForm};
use mimo_detect::instance::{generate_instance, GenSpec};
use mimo_detect::solver::{pnqp_detect, SolverConfig};

fn main() {
    let inst = generate_instance(&GenSpec::new(8, 4, 8, 30.0, 21).noiseless()).unwrap();
    let form = AssignmentForm::build(&inst).unwrap();
    let t_star = t_from_x(&inst.x_star, 8).unwrap();
    println!("star indices: {:?}", inst.star_indices());
    println!("f(t*) = {}", form.objective(t_star.as_vector()));
    println!("f + |H|^2 + |r|^2 = {}", form.objective(t_star.as_vector()) + form.norm_h_sq + form.norm_r_sq);

    let ml = ml_bruteforce(&inst, DEFAULT_ML_CAP).unwrap();
    println!("ml indices: {:?} obj {}", ml.symbol_indices, ml.objective);

    let cfg = SolverConfig {
        collect_trace: true,
        ..SolverConfig::default()
    };
    let res = pnqp_detect(&inst, &cfg).unwrap();
    println!(
        "pnqp indices: {:?} ser {} objective {} termination {:?} outer {} inner {}",
        res.symbol_indices, res.ser, res.objective, res.termination, res.outer_iters, res.inner_iters_total
    );
    for row in &res.trace {
        println!(
            "k={} omega={:.3e} tau={:.3} f={:.6} pen={:.3e} kkt={:.3e} support={} viol={:.3e}",
            row.outer, row.omega, row.tau, row.objective, row.penalty, row.kkt_residual, row.support_size, row.max_block_violation
        );
    }
    let diag = res.solver_diag.unwrap();
    println!("diag: {diag:?}");
    println!("t_final blocks:");
    let t = res.t_final.unwrap();
    for j in 0..4 {
        println!("  block {j}: {:?}", t.block(j));
    }
}
