mod common;

use common::{lenet, test_set};
use softerr::model_io::*;
use softerr::Network32;

#[test]
fn network_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    let sha = save_network(lenet(), &path).unwrap();
    let back: Network32 = load_network(&path).unwrap();
    assert_eq!(sha, network_checksum(&back));
    let x = test_set().image(0);
    assert_eq!(lenet().logits(x, true).unwrap(), back.logits(x, true).unwrap());
}

#[test]
fn corrupt_model_rejected() {
    let mut bytes = encode_network(lenet());
    let n = bytes.len();
    bytes[n - 3] ^= 0x40;
    assert!(decode_network::<f32>(&bytes).is_err());
    assert!(decode_network::<f32>(&bytes[..n / 2]).is_err());
}

#[test]
fn golden_cache_hits_and_invalidates() {
    let dir = tempfile::tempdir().unwrap();
    let data = test_set().head(20);
    let (g, hit) = load_or_compute_golden(dir.path(), lenet(), &data, true).unwrap();
    assert!(!hit);
    let (g2, hit) = load_or_compute_golden(dir.path(), lenet(), &data, true).unwrap();
    assert!(hit);
    assert_eq!(g.logits, g2.logits);
    assert_eq!(g.layer_variance, g2.layer_variance);

    let other = test_set().head(21);
    assert!(!load_or_compute_golden(dir.path(), lenet(), &other, true).unwrap().1);
    assert!(!load_or_compute_golden(dir.path(), lenet(), &data, false).unwrap().1);

    for e in std::fs::read_dir(dir.path()).unwrap() {
        let p = e.unwrap().path();
        let mut b = std::fs::read(&p).unwrap();
        b.truncate(b.len() - 8);
        std::fs::write(&p, b).unwrap();
    }
    let (g3, hit) = load_or_compute_golden(dir.path(), lenet(), &data, true).unwrap();
    assert!(!hit);
    assert_eq!(g3.logits, g.logits);
}

#[test]
fn idx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (px, lb) = softerr::fixtures::synthetic_digits(12, 3);
    let (ip, lp) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    write_idx_pair(&ip, &lp, 28, 28, &px, &lb).unwrap();
    let d: Dataset<f32> = load_idx_dataset(&ip, &lp).unwrap();
    assert_eq!(d.len(), 12);
    assert_eq!(d.image_shape(), &[1, 28, 28]);
    assert_eq!(d.labels().iter().map(|&l| l as u8).collect::<Vec<_>>(), lb);
    assert_eq!(d.checksum(), softerr::fixtures::synthetic_dataset::<f32>(12, 3).unwrap().checksum());
}
