//! Rotational ambiguity: random orthogonal rotations of a loading matrix are
//! undone by varimax plus signed-permutation matching, then credible
//! intervals sparsify the result and a correlation network is read off.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sufa::datagen::{gen_shared_loading, Scenario};
use sufa::model::correlation_matrix;
use sufa::postprocess::{align_draws, alignment_r2, correlation_network, hubs, sparsify_by_ci};

fn main() -> sufa::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (d, q) = (24, 3);
    let truth = gen_shared_loading(Scenario::FM1, d, q, &mut rng)?;
    let noise = Normal::new(0.0, 0.05).unwrap();

    let draws: Vec<DMatrix<f64>> = (0..200)
        .map(|_| {
            let g = DMatrix::from_fn(q, q, |_, _| StandardNormal.sample(&mut rng));
            let r = g.qr().q();
            (&truth + truth.map(|_| noise.sample(&mut rng))) * r
        })
        .collect();
    println!("raw draw 0 vs truth R2: {:.3}", alignment_r2(&truth, &draws[0])?);

    let aligned = align_draws(&draws)?;
    let mean = aligned.mean();
    println!("pivot draw {:?}", aligned.pivot_index);
    println!("aligned mean vs truth R2: {:.3}", alignment_r2(&truth, &mean)?);

    let sparse = sparsify_by_ci(&aligned.aligned, 0.95)?;
    let kept = sparse.iter().filter(|v| **v != 0.0).count();
    let true_nz = truth.iter().filter(|v| **v != 0.0).count();
    println!("nonzero loadings: estimate {kept}, truth {true_nz}");

    let sigma = &sparse * sparse.transpose() + DMatrix::identity(d, d) * 0.5;
    let edges = correlation_network(&correlation_matrix(&sigma)?, 0.3);
    println!("{} edges at |r| >= 0.3, hubs {:?}", edges.len(), hubs(&edges, d, 15));
    Ok(())
}
