use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use selfavg::disorder::DisorderStream;
use selfavg::gibbs::{
    decompose, duhamel, gibbs_expectation, harris_check, log_partition, GibbsSpec, Observable,
};
use selfavg::spin_algebra::{
    commutator, embed, embed_product, local_spin, operator_norm, CMatrix, HermitianOperator,
    HilbertSpace, SpinMagnitude,
};
use selfavg::verify::random_hermitian;

fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

fn scale(m: &CMatrix, c: Complex64) -> CMatrix {
    m.map(|z| z * c)
}

#[test]
fn spin_algebra_identities() {
    let i = Complex64::new(0.0, 1.0);
    for s in [0.5, 1.0, 1.5, 2.0] {
        let sp = local_spin(s).unwrap();
        let (x, y, z) = (&sp.sx, &sp.sy, &sp.sz);
        assert!(max_diff(&commutator(x, y).unwrap(), &scale(z, i)) < 1e-12);
        assert!(max_diff(&commutator(y, z).unwrap(), &scale(x, i)) < 1e-12);
        assert!(max_diff(&commutator(z, x).unwrap(), &scale(y, i)) < 1e-12);
        let casimir = x * x + y * y + z * z;
        let d = sp.dim();
        let expect = CMatrix::identity(d, d).map(|v| v * s * (s + 1.0));
        assert!(max_diff(&casimir, &expect) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn embed_is_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64, site in 0usize..3) {
        let space = HilbertSpace::new(3, SpinMagnitude::new(1.0).unwrap()).unwrap();
        let mut st = DisorderStream::new(seed, 0);
        let p = random_hermitian(&mut st, 3);
        let q = random_hermitian(&mut st, 3);
        let combo = p.scaled(a).add_scaled(b, &q).unwrap();
        let lhs = embed(&space, site, combo.matrix()).unwrap();
        let rhs = embed(&space, site, p.matrix()).unwrap().scaled(a)
            .add_scaled(b, &embed(&space, site, q.matrix()).unwrap()).unwrap();
        prop_assert!(max_diff(lhs.matrix(), rhs.matrix()) < 1e-12);
    }

    #[test]
    fn distinct_sites_commute(seed in any::<u64>(), i in 0usize..4, j in 0usize..4) {
        prop_assume!(i != j);
        let space = HilbertSpace::new(4, SpinMagnitude::half()).unwrap();
        let mut st = DisorderStream::new(seed, 1);
        let a = embed(&space, i, random_hermitian(&mut st, 2).matrix()).unwrap();
        let b = embed(&space, j, random_hermitian(&mut st, 2).matrix()).unwrap();
        let c = commutator(a.matrix(), b.matrix()).unwrap();
        prop_assert!(c.iter().all(|z| z.norm() < 1e-13));
    }

    #[test]
    fn norm_of_tensor_with_identity(seed in any::<u64>(), site in 0usize..3) {
        let space = HilbertSpace::new(3, SpinMagnitude::half()).unwrap();
        let mut st = DisorderStream::new(seed, 2);
        let a = random_hermitian(&mut st, 2);
        let big = embed(&space, site, a.matrix()).unwrap();
        let n1 = operator_norm(&a).unwrap();
        let n2 = operator_norm(&big).unwrap();
        prop_assert!((n1 - n2).abs() <= 1e-12 * n1.max(1.0));
    }

    #[test]
    fn product_embedding_matches_sequential_products(seed in any::<u64>()) {
        let space = HilbertSpace::new(3, SpinMagnitude::half()).unwrap();
        let mut st = DisorderStream::new(seed, 3);
        let a = random_hermitian(&mut st, 2);
        let b = random_hermitian(&mut st, 2);
        let joint = embed_product(&space, &[(2, a.matrix()), (0, b.matrix())]).unwrap();
        let seq = embed(&space, 0, b.matrix()).unwrap().into_matrix()
            * embed(&space, 2, a.matrix()).unwrap().into_matrix();
        prop_assert!(max_diff(&joint, &seq) < 1e-13);
    }

    #[test]
    fn duhamel_symmetric_and_below_second_moment(seed in any::<u64>(), dim in 2usize..12, beta in 0.05..4.0f64) {
        let mut st = DisorderStream::new(seed, 4);
        let h = random_hermitian(&mut st, dim);
        let a = random_hermitian(&mut st, dim);
        let b = random_hermitian(&mut st, dim);
        let spec = GibbsSpec::quantum(beta, h).unwrap();
        let ab = duhamel(&spec, Observable::Operator(&a), Observable::Operator(&b)).unwrap();
        let ba = duhamel(&spec, Observable::Operator(&b), Observable::Operator(&a)).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-10 * ab.abs().max(1.0));
        let aa = duhamel(&spec, Observable::Operator(&a), Observable::Operator(&a)).unwrap();
        let a2 = HermitianOperator::new(a.matrix() * a.matrix()).unwrap();
        let second = gibbs_expectation(&spec, Observable::Operator(&a2)).unwrap();
        prop_assert!(aa >= -1e-12 && aa <= second + 1e-10 * second.max(1.0));
    }

    #[test]
    fn log_partition_unitarily_invariant(seed in any::<u64>(), dim in 2usize..10, beta in 0.1..3.0f64) {
        let mut st = DisorderStream::new(seed, 5);
        let h = random_hermitian(&mut st, dim);
        let u = decompose(&random_hermitian(&mut st, dim)).unwrap().eigenvectors().clone();
        let rotated = &u * h.matrix() * u.adjoint();
        let sym = (&rotated + rotated.adjoint()).map(|z| z * 0.5);
        let hr = HermitianOperator::new(sym).unwrap();
        let z1 = log_partition(&GibbsSpec::quantum(beta, h).unwrap()).unwrap();
        let z2 = log_partition(&GibbsSpec::quantum(beta, hr).unwrap()).unwrap();
        prop_assert!((z1 - z2).abs() < 1e-10 * z1.abs().max(1.0));
    }

    #[test]
    fn harris_sandwich_on_random_pairs(seed in any::<u64>(), dim in 2usize..24, beta in 0.05..5.0f64) {
        let mut st = DisorderStream::new(seed, 6);
        let h = random_hermitian(&mut st, dim);
        let o = random_hermitian(&mut st, dim);
        let spec = GibbsSpec::quantum(beta, h).unwrap();
        let t = harris_check(&spec, Observable::Operator(&o)).unwrap();
        prop_assert!(t.lower_slack() >= -1e-9);
        prop_assert!(t.upper_slack() >= -1e-9);
    }

    #[test]
    fn diagonal_and_dense_observables_agree(seed in any::<u64>(), dim in 2usize..10, beta in 0.1..3.0f64) {
        let mut st = DisorderStream::new(seed, 7);
        let h = random_hermitian(&mut st, dim);
        let d: Vec<f64> = (0..dim).map(|_| st.next_gaussian()).collect();
        let dense = HermitianOperator::from_real_diagonal(&d);
        let spec = GibbsSpec::quantum(beta, h).unwrap();
        let e1 = gibbs_expectation(&spec, Observable::Diagonal(&d)).unwrap();
        let e2 = gibbs_expectation(&spec, Observable::Operator(&dense)).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12);
    }
}

#[test]
fn real_symmetric_matrix_decomposes() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, -1.0]).map(|v| Complex64::new(v, 0.0));
    let s = decompose(&HermitianOperator::new(m).unwrap()).unwrap();
    let r = 5.0_f64.sqrt();
    assert!((s.eigenvalues()[0] + r).abs() < 1e-14 && (s.eigenvalues()[1] - r).abs() < 1e-14);
}
