use proptest::prelude::*;

use sau::checkpoint::{Bundle, CheckpointError, Record};
use sau::params::ParamSet;
use sau::tensor::Tensor;

fn params() -> impl Strategy<Value = ParamSet<f64>> {
    prop::collection::vec(
        (prop::collection::vec(1usize..4, 1..3), any::<bool>(), any::<u64>()),
        1..5,
    )
    .prop_map(|specs| {
        let mut p = ParamSet::new();
        for (i, (shape, prunable, seed)) in specs.into_iter().enumerate() {
            let prunable = prunable && shape.len() == 2;
            p.insert(&format!("t{i}"), Tensor::randn(&shape, seed, 3.0).unwrap(), prunable).unwrap();
        }
        p
    })
}

proptest! {
    #[test]
    fn params_round_trip_bitwise(p in params()) {
        let mut b = Bundle::new();
        b.put_params(&p).unwrap();
        let back = Bundle::from_bytes(&b.to_bytes()).unwrap();
        prop_assert!(back.params::<f64>().unwrap().bitwise_eq(&p));
        prop_assert_eq!(back.to_bytes(), b.to_bytes());
    }

    #[test]
    fn any_single_byte_change_is_rejected(p in params(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut b = Bundle::new();
        b.put_params(&p).unwrap();
        let mut bytes = b.to_bytes();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(Bundle::from_bytes(&bytes).is_err());
    }
}

#[test]
fn special_values_survive() {
    let mut b = Bundle::new();
    let t = Tensor::from_vec(vec![5], vec![f64::NAN, f64::INFINITY, -0.0, f64::MIN_POSITIVE, -1e300]).unwrap();
    b.insert("special", Record::F64(t.clone())).unwrap();
    let back = Bundle::from_bytes(&b.to_bytes()).unwrap();
    let got = back.f64("special").unwrap();
    assert!(got.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    let mut b = Bundle::new();
    b.put_scalar("s", 1.5).unwrap();
    b.save(&path).unwrap();
    assert_eq!(Bundle::load(&path).unwrap().scalar("s").unwrap(), 1.5);
    assert!(Bundle::load(&dir.path().join("missing.ckpt")).is_err());
    assert!(matches!(Bundle::from_bytes(b"NOTACKPT"), Err(CheckpointError::BadMagic)));
    let bytes = b.to_bytes();
    assert!(matches!(Bundle::from_bytes(&bytes[..10]), Err(CheckpointError::Truncated(_))));
    assert!(b.f64("absent").is_err());
    b.insert("s", Record::F64(Tensor::scalar(2.0))).unwrap();
    assert_eq!(b.scalar("s").unwrap(), 2.0, "insert replaces");
}
