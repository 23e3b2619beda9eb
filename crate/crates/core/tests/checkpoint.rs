use vikan::checkpoint::{load, read_header, save, to_bytes};
use vikan::kan::Variant;
use vikan::nn::{init, Parameterized};
use vikan::train::{train, TrainConfig};
use vikan::data::{write_idx_images, write_idx_labels, Dataset};
use vikan::vit::{ModelConfig, Pooling};
use vikan::{Error, Model32, Tensor32};

fn tiny_dataset(n: usize) -> Dataset {
    let pixels: Vec<u8> = (0..n * 784).map(|i| ((i * 37) % 251) as u8).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    Dataset::from_idx_bytes(&write_idx_images(28, 28, &pixels), &write_idx_labels(&labels)).unwrap()
}

#[test]
fn trained_model_reloads_with_identical_logits() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(40);
    let x: Tensor32 = init::uniform(&mut init::seeded(2), &[3, 28, 28], 0.0, 1.0).unwrap();
    for v in Variant::ALL {
        let cfg = ModelConfig { pooling: Pooling::Mean, seed: 5, ..ModelConfig::mnist(v) };
        let model = Model32::new(&cfg).unwrap();
        let tc = TrainConfig { epochs: 1, batch: 16, eval_batch: 40, ..TrainConfig::default() };
        train(&model, &ds, &ds, &tc, &mut |_| Ok(())).unwrap();
        let path = dir.path().join(format!("{v}.ckpt"));
        save(&model, &path).unwrap();
        let back: Model32 = load(&path, Some(v)).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.forward(&x).unwrap().to_vec(), model.forward(&x).unwrap().to_vec(), "{v}");
        assert_eq!(back.count_params(), model.count_params());
    }
}

#[test]
fn header_lists_every_parameter() {
    let model = Model32::new(&ModelConfig::mnist(Variant::FourierKan)).unwrap();
    let bytes = to_bytes(&model).unwrap();
    let (header, payload) = read_header(&bytes).unwrap();
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let listed: Vec<String> = header.tensors.iter().map(|t| t.name.clone()).collect();
    assert_eq!(listed, names);
    assert_eq!(payload.len(), 4 * model.count_params());
}

#[test]
fn damaged_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model32::new(&ModelConfig::mnist(Variant::SineKan)).unwrap();
    let path = dir.path().join("m.ckpt");
    save(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    assert!(matches!(load::<f32>(&path, Some(Variant::Mlp)), Err(Error::Checkpoint(_))));
    for cut in [0, 7, 12, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(load::<f32>(&path, None).is_err(), "truncated at {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    std::fs::write(&path, &extra).unwrap();
    assert!(load::<f32>(&path, None).is_err());

    let mut nan = bytes.clone();
    let end = nan.len();
    nan[end - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(&path, &nan).unwrap();
    assert!(load::<f32>(&path, None).is_err());

    assert!(matches!(load::<f32>(&dir.path().join("missing.ckpt"), None), Err(Error::File { .. })));
}
