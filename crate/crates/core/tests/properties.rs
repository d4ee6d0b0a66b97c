use num_complex::Complex64;
use proptest::prelude::*;

use cpals::als::{als_step, objective};
use cpals::cp::{vandermonde, wrap_angle, CpFactors};
use cpals::dataset::{read_factors, write_factors};
use cpals::rng;
use cpals::tensor::{ComplexDenseTensor, ComplexMatrix};

fn rand_c(rows: usize, cols: usize, seed: u64) -> ComplexMatrix {
    let mut r = rng::stream(seed, 0);
    ComplexMatrix::from_fn(rows, cols, |_, _| rng::complex_normal(&mut r, 1.0))
}

fn factors(dims: &[usize], rank: usize, seed: u64) -> CpFactors {
    CpFactors::unweighted(
        dims.iter()
            .enumerate()
            .map(|(n, &d)| rand_c(d, rank, seed.wrapping_mul(31).wrapping_add(n as u64)))
            .collect(),
    )
    .unwrap()
}

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 2..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_matricize(dims in dims_strategy(), seed in any::<u64>(), n in 0usize..4) {
        let n = n % dims.len();
        let mut r = rng::stream(seed, 1);
        let y = ComplexDenseTensor::from_fn(&dims, |_| rng::complex_normal(&mut r, 1.0)).unwrap();
        let m = y.matricize(n).unwrap();
        prop_assert_eq!(m.rows(), dims[n]);
        prop_assert_eq!(ComplexDenseTensor::fold(&m, n, &dims).unwrap(), y);
    }

    #[test]
    fn reconstruction_ignores_column_order(dims in dims_strategy(), rank in 1usize..4, seed in any::<u64>()) {
        let f = factors(&dims, rank, seed);
        let perm: Vec<usize> = (0..rank).rev().collect();
        let a = f.reconstruct().unwrap();
        let b = f.permute_columns(&perm).reconstruct().unwrap();
        prop_assert!(a.sub(&b).unwrap().frob_norm() <= 1e-12 * a.frob_norm().max(1.0));
    }

    #[test]
    fn normalization_keeps_the_tensor(dims in dims_strategy(), rank in 1usize..4, seed in any::<u64>()) {
        let f = factors(&dims, rank, seed);
        let a = f.reconstruct().unwrap();
        let b = f.normalize().reconstruct().unwrap();
        prop_assert!(a.sub(&b).unwrap().frob_norm() <= 1e-12 * a.frob_norm().max(1.0));
    }

    #[test]
    fn every_step_descends(dims in prop::collection::vec(2usize..5, 3), rank in 1usize..3, seed in any::<u64>()) {
        let y = factors(&dims, rank + 1, seed).reconstruct().unwrap();
        let mut f = factors(&dims, rank, seed ^ 0x5a5a);
        let mut prev = objective(&y, &f).unwrap();
        for sweep in 0..4 {
            for n in 0..dims.len() {
                f.factors[n] = als_step(&y, &f, n).unwrap().factor;
                let obj = objective(&y, &f).unwrap();
                prop_assert!(obj <= prev * (1.0 + 1e-9) + 1e-12, "sweep {} mode {}: {} > {}", sweep, n, obj, prev);
                prev = obj;
            }
        }
    }

    #[test]
    fn wrapped_angles_stay_in_range(z in -100.0f64..100.0) {
        let w = wrap_angle(z);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        let v = vandermonde(&[z], 3);
        let u = vandermonde(&[w], 3);
        prop_assert!(v.sub(&u).unwrap().frob_norm() < 1e-9);
    }

    #[test]
    fn factor_files_round_trip(dims in dims_strategy(), rank in 1usize..4, seed in any::<u64>()) {
        let mut f = factors(&dims, rank, seed);
        f.weights = (0..rank).map(|k| Complex64::new(k as f64 + 0.5, -(k as f64))).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        write_factors(&path, &f).unwrap();
        prop_assert_eq!(read_factors(&path).unwrap(), f);
    }
}
