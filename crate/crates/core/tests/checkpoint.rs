mod common;

use d3po_core::checkpoint::{decode, encode, Checkpoint};
use d3po_core::diffusion::ScheduleSpec;
use d3po_core::ndcore::{Role, Tensor};
use proptest::prelude::*;

#[test]
fn denoiser_round_trip_is_exact_at_f32() {
    let dir = tempfile::tempdir().unwrap();
    let den = common::tiny_denoiser(4, vec![7, 5], 3);
    let ck = Checkpoint::new(den.clone(), ScheduleSpec::default(), 12);
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.meta, ck.meta);
    assert_eq!(back.meta.epoch, 12);
    for ((n1, a), (n2, b)) in den.params.iter().zip(back.denoiser.params.iter()) {
        assert_eq!(n1, n2);
        let want: Vec<u32> = a.data().iter().map(|&v| (v as f32).to_bits()).collect();
        let got: Vec<u32> = b.data().iter().map(|&v| (v as f32).to_bits()).collect();
        assert_eq!(want, got);
        assert!(b.data().iter().all(|&v| v == (v as f32) as f64));
    }
    let path2 = dir.path().join("m2.ckpt");
    back.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    assert!(back.denoiser.params.bitwise_eq(&Checkpoint::load(&path2).unwrap().denoiser.params));
}

#[test]
fn role_is_preserved() {
    let den = common::tiny_denoiser(2, vec![3], 4).frozen();
    let ck = Checkpoint::new(den, ScheduleSpec::default(), 0);
    let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    assert_eq!(back.denoiser.role(), Role::Reference);
}

#[test]
fn layout_starts_with_magic_and_version() {
    let t = Tensor::zeros(&[2]);
    let bytes = encode(&(), [("x", &t)]).unwrap();
    assert_eq!(&bytes[..8], b"D3POCKPT");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
}

proptest! {
    #[test]
    fn random_tensors_survive(values in proptest::collection::vec(-1e30f64..1e30, 1..64)) {
        let n = values.len();
        let t = Tensor::new(vec![n], values).unwrap();
        let bytes = encode(&"meta", [("t", &t)]).unwrap();
        let (meta, back): (String, Vec<(String, Tensor)>) = decode(&bytes).unwrap();
        prop_assert_eq!(meta, "meta");
        let again = encode(&"meta", [("t", &back[0].1)]).unwrap();
        prop_assert_eq!(bytes, again);
    }
}
