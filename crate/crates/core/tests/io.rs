use spikequant::rng::{rng_normal, Rng};
use spikequant::spkt::{self, tensor_read, tensor_write};
use spikequant::{Error, SpktError, Tensor2D};

#[test]
fn roundtrip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.spkt");
    let mut rng = Rng::new(64);
    let t = rng_normal(&mut rng, 64, 64, 0.0, 3.0).round_to_f32();
    tensor_write(&t, &path).unwrap();
    let back = tensor_read(&path).unwrap();
    assert!(t.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn small_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let one = Tensor2D::zeros(1, 1);
    tensor_write(&one, dir.path().join("a.spkt")).unwrap();
    assert_eq!(tensor_read(dir.path().join("a.spkt")).unwrap(), one);
    let seq = Tensor2D::from_fn(3, 5, |r, c| (r * 5 + c) as f64).unwrap();
    tensor_write(&seq, dir.path().join("b.spkt")).unwrap();
    assert_eq!(tensor_read(dir.path().join("b.spkt")).unwrap(), seq);
}

#[test]
fn repeated_writes_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let t = rng_normal(&mut Rng::new(5), 7, 9, 1.0, 2.0);
    tensor_write(&t, dir.path().join("1.spkt")).unwrap();
    tensor_write(&t, dir.path().join("2.spkt")).unwrap();
    assert_eq!(std::fs::read(dir.path().join("1.spkt")).unwrap(), std::fs::read(dir.path().join("2.spkt")).unwrap());
}

#[test]
fn errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.spkt");
    let e = tensor_read(&missing).unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
    assert!(e.to_string().contains("nope.spkt"));
    let bad = dir.path().join("bad.spkt");
    std::fs::write(&bad, b"XXXX\x01\0\0\0\0\x02\0\0").unwrap();
    let e = tensor_read(&bad).unwrap_err();
    assert!(matches!(e, Error::Spkt { source: SpktError::BadMagic(_), .. }), "{e}");
    assert!(e.to_string().contains("bad.spkt"));
}

#[test]
fn int_file_is_not_a_real_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("i.spkt");
    spkt::int_write(&spikequant::IntMatrix::new(1, 2, vec![1, -2]).unwrap(), &p).unwrap();
    assert!(matches!(tensor_read(&p), Err(Error::Spkt { source: SpktError::DtypeMismatch { .. }, .. })));
    assert_eq!(spkt::int_read(&p).unwrap().data(), &[1, -2]);
}

#[test]
fn normal_sample_mean() {
    let t = rng_normal(&mut Rng::new(7), 10000, 1, 0.0, 1.0);
    let m = t.data().iter().sum::<f64>() / 10000.0;
    assert!(m.abs() < 0.05, "{m}");
    // within 5σ/√n
    assert!(m.abs() < 5.0 / 100.0);
}
