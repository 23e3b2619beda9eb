use std::io::Write;
use std::path::PathBuf;

use flate2::write::GzEncoder;
use flate2::Compression;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vikan::data::{
    batch_indices, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, Dataset, Split,
};
use vikan::kan::Variant;
use vikan::train::cross_entropy;
use vikan::vit::ModelConfig;
use vikan::{Error, Model32, Tensor32};

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("VIKAN_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    Dataset::load(&dir, Split::Test).is_ok().then_some(dir)
}

fn synthetic(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels: Vec<u8> = (0..n * 784).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    (write_idx_images(28, 28, &pixels), write_idx_labels(&labels))
}

#[test]
fn corrupted_header_bytes_never_parse_silently() {
    let (images, labels) = synthetic(3, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let mut img = images.clone();
        let at = rng.random_range(0..16);
        let flip: u8 = rng.random_range(1..=255);
        img[at] ^= flip;
        assert!(parse_idx_images(&img).is_err(), "image header byte {at} ^ {flip:#x} accepted");

        let mut lab = labels.clone();
        let at = rng.random_range(0..8);
        lab[at] ^= flip;
        assert!(parse_idx_labels(&lab).is_err(), "label header byte {at} ^ {flip:#x} accepted");
    }
}

#[test]
fn swapped_files_are_named_in_the_error() {
    let (images, labels) = synthetic(2, 3);
    let err = parse_idx_images(&labels).unwrap_err();
    assert!(matches!(err, Error::BadMagic { .. }));
    assert!(err.to_string().contains("label file passed as images"));
    assert!(parse_idx_labels(&images).unwrap_err().to_string().contains("image file passed as labels"));
}

#[test]
fn gzipped_files_load_like_plain_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (images, labels) = synthetic(5, 4);
    let gz = |bytes: &[u8]| {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).unwrap();
        enc.finish().unwrap()
    };
    std::fs::write(dir.join("t10k-images-idx3-ubyte.gz"), gz(&images)).unwrap();
    std::fs::write(dir.join("t10k-labels-idx1-ubyte"), &labels).unwrap();
    let loaded = Dataset::load(dir, Split::Test).unwrap();
    let plain = Dataset::from_idx_bytes(&images, &labels).unwrap();
    assert_eq!(loaded.pixels, plain.pixels);
    assert_eq!(loaded.labels, plain.labels);
}

proptest! {
    #[test]
    fn epoch_batches_are_a_bijection(n in 1usize..600, batch in 1usize..200, seed in any::<u64>(), epoch in 1usize..20) {
        let batches = batch_indices(n, batch, seed, epoch, true);
        prop_assert!(batches.iter().rev().skip(1).all(|b| b.len() == batch));
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn epoch_labels_keep_their_multiset(n in 1usize..300, seed in any::<u64>(), epoch in 1usize..5) {
        let (images, _) = synthetic(n, seed);
        let labels: Vec<u8> = (0..n).map(|i| ((i * 7 + seed as usize) % 10) as u8).collect();
        let ds = Dataset::from_idx_bytes(&images, &write_idx_labels(&labels)).unwrap();
        let mut drawn: Vec<usize> = Vec::new();
        for idx in batch_indices(n, 32, seed, epoch, true) {
            drawn.extend(ds.batch::<f32>(&idx).unwrap().labels);
        }
        let mut expect: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        drawn.sort_unstable();
        expect.sort_unstable();
        prop_assert_eq!(drawn, expect);
    }
}

#[test]
fn shuffle_depends_on_seed_and_epoch() {
    let a = batch_indices(1000, 128, 5, 1, true);
    assert_eq!(a, batch_indices(1000, 128, 5, 1, true));
    assert_ne!(a, batch_indices(1000, 128, 5, 2, true));
    assert_ne!(a, batch_indices(1000, 128, 6, 1, true));
}

#[test]
fn normalized_training_images_are_centered() {
    let Some(dir) = mnist_dir() else {
        eprintln!("MNIST not found; set VIKAN_DATA to run this test");
        return;
    };
    let ds = Dataset::load(&dir, Split::Train).unwrap();
    assert_eq!(ds.len(), Split::Train.expected_len());
    let mean = ds.pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / ds.pixels.len() as f64;
    assert!(mean.abs() < 0.01, "mean {mean}");
}

#[test]
fn first_batch_loss_is_near_chance() {
    let ds = match mnist_dir() {
        Some(dir) => Dataset::load(&dir, Split::Train).unwrap().truncated(128),
        None => {
            let (images, labels) = synthetic(128, 8);
            Dataset::from_idx_bytes(&images, &labels).unwrap()
        }
    };
    let idx: Vec<usize> = (0..ds.len()).collect();
    let batch = ds.batch::<f32>(&idx).unwrap();
    for v in Variant::ALL {
        let model = Model32::new(&ModelConfig::mnist(v)).unwrap();
        let logits: Tensor32 = model.forward(&batch.images).unwrap();
        let loss = f64::from(cross_entropy(&logits, &batch.labels).unwrap().item());
        assert!((loss - 10f64.ln()).abs() < 0.3, "{v}: {loss}");
    }
}
