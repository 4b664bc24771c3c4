//! Dimension condition, information switching, and data-driven rank
//! selection.

use nalgebra::DMatrix;
use sufa::datagen::{simulate, Scenario, SimSpec, StudyMode};
use sufa::identifiability::{
    check_dimension_condition, column_space_intersection_dim, detect_information_switching,
    rank_upper_bound,
};
use sufa::pipeline::select_rank;

fn main() -> sufa::Result<()> {
    println!("q = 3, q_s = [1, 1]: {}", check_dimension_condition(3, &[1, 1]));
    println!("q = 3, q_s = [2, 2]: {}", check_dimension_condition(3, &[2, 2]));

    // Two study factors that share a direction.
    let a1 = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
    let a2 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let shared = [a1.clone(), a2.clone()];
    println!("intersection dim = {}", column_space_intersection_dim(&shared, 1e-8)?);
    let report = detect_information_switching(&shared, 1e-8)?;
    println!("switching: {} (ranks {:?})", report.switching, report.ranks);

    let a3 = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
    let report = detect_information_switching(&[a1, a3], 1e-8)?;
    println!("disjoint directions, switching: {}", report.switching);

    let spec = SimSpec::new(Scenario::FM2, StudyMode::slight(), 40, 4, 3, 9);
    let sim = simulate(&spec)?;
    let sel = select_rank(&sim.data, 0.95)?;
    println!("rank cap for d = 40: {}", rank_upper_bound(40));
    println!("selected q = {}, q_s = {:?} (truth q = {}, q_s = {:?})", sel.q, sel.q_s, spec.q, sim.truth.q_s);
    Ok(())
}
