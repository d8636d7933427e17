use gamver_core::tinynet::{train, ConvLayerSpec, NetworkConfig, TrainOptions};
use gamver_core::{Image, Tensor};
use rand::{Rng, SeedableRng};

// Two-class 8x8: one bright blob in the left half or the right half.
fn blobs(n: usize, seed: u64) -> Vec<(Image, usize)> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let cy = rng.random_range(1.5..5.5);
            let cx = if label == 0 { rng.random_range(1.0..2.5) } else { rng.random_range(4.5..6.0) };
            let t = Tensor::from_fn2(8, 8, |y, x| {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                (-d2 / 2.0).exp()
            });
            (Image::new(t).unwrap(), label)
        })
        .collect()
}

#[test]
fn separable_blobs_reach_full_training_accuracy() {
    let data = blobs(40, 3);
    let layer = |filters| ConvLayerSpec {
        filters,
        kernel: 3,
        stride: 1,
        pool_after: true,
    };
    let config = NetworkConfig {
        input_size: 8,
        conv_layers: vec![layer(4), layer(4)],
        hidden_units: 8,
        num_classes: 2,
        seed: 1,
    };
    let options = TrainOptions {
        epochs: 30,
        ..TrainOptions::default()
    };
    let (net, history) = train(config.clone(), &data, options).unwrap();
    let correct = data.iter().filter(|(im, l)| net.predict(im).unwrap().0 == *l).count();
    assert_eq!(correct, data.len(), "losses {:?}", history.epoch_loss);
    let (again, _) = train(config, &data, options).unwrap();
    assert_eq!(net, again);
}
