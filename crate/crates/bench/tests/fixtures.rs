use eva_bench::{image, mnist_mlp, small_cnn};

#[test]
fn fixtures_fit_together() {
    let x = image(0);
    for net in [mnist_mlp(1), small_cnn(1)] {
        assert_eq!(net.input_shape(), x.shape());
        assert_eq!(net.class_count(), 10);
        assert!(net.predict(&x).unwrap() < 10);
    }
}
