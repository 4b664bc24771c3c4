//! Leapfrog on a Gaussian target: energy error shrinks with the step size
//! and reversing the momentum retraces the path.

use nalgebra::DVector;
use sufa::hmc::{hamiltonian, leapfrog};

fn main() -> sufa::Result<()> {
    let prec = DVector::from_vec(vec![1.0, 4.0, 25.0]);
    let log_p = |x: &DVector<f64>| -0.5 * x.component_mul(&prec).dot(x);
    let grad = |x: &DVector<f64>| Ok(-x.component_mul(&prec));

    let x0 = DVector::from_vec(vec![1.0, -0.5, 0.2]);
    let p0 = DVector::from_vec(vec![0.3, 0.8, -1.0]);
    let h0 = hamiltonian(&p0, log_p(&x0))?;
    for dt in [0.1, 0.05, 0.025] {
        let steps = (1.0 / dt) as usize;
        let (x, p) = leapfrog(&x0, &p0, dt, steps, grad)?;
        let dh = hamiltonian(&p, log_p(&x))? - h0;
        println!("dt = {dt:<6} L = {steps:<3} ΔH = {dh:+.3e}");
    }

    let (x, p) = leapfrog(&x0, &p0, 0.05, 20, grad)?;
    let (xb, _) = leapfrog(&x, &-p, 0.05, 20, grad)?;
    println!("reversibility error {:.2e}", (xb - x0).norm());
    Ok(())
}
