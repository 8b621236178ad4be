mod common;

use common::{nonlocal_oracle, random_tensor, randomize, zero_all};
use rnan::arch::*;
use rnan::tensor::{self, ConvSpec};
use rnan::Tensor4;

fn block_cfg(features: usize, non_local: bool, fusion: FusionMode) -> BlockConfig {
    BlockConfig { features, nlb_channels: (features / 2).max(1), fusion, non_local, ..BlockConfig::default() }
}

#[test]
fn residual_block_zero_params_is_identity() {
    let mut layout = ParamLayout::default();
    let rb = ResBlock::new(&mut layout, "rb", 8);
    let mut store: ParamStore<f64> = ParamStore::initialize(&layout, 1);
    zero_all(&mut store);
    let x = random_tensor([2, 8, 5, 7], 2, 1.0);
    assert_eq!(rb.infer(&store, &x).unwrap(), x);
    let (y, _) = rb.forward(&store, &x).unwrap();
    assert_eq!(y.dims(), x.dims());
}

#[test]
fn residual_block_matches_composition() {
    let mut layout = ParamLayout::default();
    let rb = ResBlock::new(&mut layout, "rb", 64);
    let mut store: ParamStore<f64> = ParamStore::initialize(&layout, 3);
    randomize(&mut store, 4, 0.05);
    let x = random_tensor([1, 64, 6, 6], 5, 1.0);
    let spec = ConvSpec::same3x3(64, 64);
    let conv = |c: &Conv, t: &Tensor4<f64>| {
        tensor::conv2d(t, store.get(c.weight), store.get(c.bias.unwrap()).data(), &spec).unwrap()
    };
    let mut expected = conv(&rb.conv2, &tensor::relu(&conv(&rb.conv1, &x)));
    expected.add_assign(&x).unwrap();
    assert!(rb.infer(&store, &x).unwrap().max_abs_diff(&expected).unwrap() < 1e-12);
    assert!(rb.infer(&store, &random_tensor([1, 32, 6, 6], 0, 1.0)).is_err());
}

#[test]
fn nonlocal_block_starts_as_identity() {
    let mut layout = ParamLayout::default();
    let nl = NonLocalBlock::new(&mut layout, "nl", 6, 3);
    let store: ParamStore<f64> = ParamStore::initialize(&layout, 9);
    assert!(store.get(nl.out.weight).data().iter().all(|&v| v == 0.0));
    let x = random_tensor([2, 6, 4, 5], 10, 2.0);
    assert_eq!(nl.infer(&store, &x).unwrap(), x);
    assert_eq!(nl.forward(&store, &x).unwrap().0, x);
}

#[test]
fn nonlocal_block_single_position() {
    let mut layout = ParamLayout::default();
    let nl = NonLocalBlock::new(&mut layout, "nl", 4, 2);
    let mut store: ParamStore<f64> = ParamStore::initialize(&layout, 1);
    randomize(&mut store, 2, 1.0);
    let x = random_tensor([3, 4, 1, 1], 3, 1.0);
    let mut expected = nl.out.forward(&store, &nl.value.forward(&store, &x).unwrap()).unwrap();
    expected.add_assign(&x).unwrap();
    assert!(nl.infer(&store, &x).unwrap().max_abs_diff(&expected).unwrap() < 1e-14);
}

#[test]
fn nonlocal_block_matches_pairwise_oracle() {
    let mut layout = ParamLayout::default();
    let nl = NonLocalBlock::new(&mut layout, "nl", 4, 2);
    let mut store: ParamStore<f64> = ParamStore::initialize(&layout, 11);
    randomize(&mut store, 12, 1.0);
    let x = random_tensor([1, 4, 3, 3], 13, 1.0);
    let expected = nonlocal_oracle(&nl, &store, &x);
    assert!(nl.forward(&store, &x).unwrap().0.max_abs_diff(&expected).unwrap() < 1e-10);
    assert!(nl.infer(&store, &x).unwrap().max_abs_diff(&expected).unwrap() < 1e-10);
    assert!(nl.infer(&store, &random_tensor([1, 3, 3, 3], 0, 1.0)).is_err());
}

#[test]
fn mask_branch_is_half_with_zero_output_conv() {
    let cfg = block_cfg(8, true, FusionMode::ResidualAttention);
    let mut layout = ParamLayout::default();
    let mask = MaskBranch::new(&mut layout, "mask", &cfg);
    let mut store: ParamStore<f64> = ParamStore::initialize(&layout, 1);
    store.get_mut(mask.out.weight).data_mut().fill(0.0);
    store.get_mut(mask.out.bias.unwrap()).data_mut().fill(0.0);
    let out = mask.infer(&store, &random_tensor([1, 8, 8, 8], 2, 1.0)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.5));
}

#[test]
fn mask_branch_odd_sizes_and_range() {
    let cfg = block_cfg(64, false, FusionMode::ResidualAttention);
    let mut layout = ParamLayout::default();
    let mask = MaskBranch::new(&mut layout, "mask", &cfg);
    let store: ParamStore<f64> = ParamStore::initialize(&layout, 1);
    let out = mask.infer(&store, &random_tensor([1, 64, 7, 9], 2, 1.0)).unwrap();
    assert_eq!(out.dims(), [1, 64, 7, 9]);

    let cfg = block_cfg(6, true, FusionMode::ResidualAttention);
    let mut layout = ParamLayout::default();
    let mask = MaskBranch::new(&mut layout, "mask", &cfg);
    for seed in 0..10 {
        let store: ParamStore<f64> = ParamStore::initialize(&layout, seed);
        let x = random_tensor([2, 6, 7 + seed as usize % 3, 6], seed + 200, 2.0);
        let (out, _) = mask.forward(&store, &x).unwrap();
        assert_eq!(out.dims(), x.dims());
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0), "seed {seed}");
    }
}

#[test]
fn mask_branch_rejects_tiny_inputs() {
    let cfg = block_cfg(4, false, FusionMode::ResidualAttention);
    let mut layout = ParamLayout::default();
    let mask = MaskBranch::new(&mut layout, "mask", &cfg);
    let store: ParamStore<f64> = ParamStore::initialize(&layout, 1);
    assert!(mask.infer(&store, &random_tensor([1, 4, 4, 9], 0, 1.0)).is_err());
    assert!(mask.infer(&store, &random_tensor([1, 4, 5, 5], 0, 1.0)).is_ok());
}

#[test]
fn fusion_with_vanishing_mask() {
    let u = random_tensor([1, 3, 4, 4], 1, 1.0);
    let trunk = random_tensor([1, 3, 4, 4], 2, 1.0);
    let zero = Tensor4::zeros(u.dims());
    assert_eq!(fuse(FusionMode::ResidualAttention, &trunk, Some(&zero), &u).unwrap(), u);
    assert_eq!(fuse(FusionMode::MaskPlusOne, &trunk, Some(&zero), &u).unwrap(), trunk);
    let mut sum = trunk.clone();
    sum.add_assign(&u).unwrap();
    assert_eq!(fuse(FusionMode::TrunkOnly, &trunk, None, &u).unwrap(), sum);
    assert!(fuse(FusionMode::MaskPlusOne, &trunk, None, &u).is_err());
}

#[test]
fn attention_block_preserves_dims() {
    for (fusion, non_local) in [
        (FusionMode::ResidualAttention, true),
        (FusionMode::MaskPlusOne, false),
        (FusionMode::TrunkOnly, true),
        (FusionMode::TrunkOnly, false),
    ] {
        let mut layout = ParamLayout::default();
        let block = AttentionBlock::new(&mut layout, "b", &block_cfg(4, non_local, fusion));
        assert_eq!(block.is_non_local(), non_local);
        assert_eq!(block.mask.is_some(), fusion != FusionMode::TrunkOnly);
        let store: ParamStore<f64> = ParamStore::initialize(&layout, 3);
        let x = random_tensor([2, 4, 7, 9], 4, 1.0);
        assert_eq!(block.infer(&store, &x).unwrap().dims(), x.dims());
        assert_eq!(block.forward(&store, &x).unwrap().0, block.infer(&store, &x).unwrap());
    }
}

#[test]
fn zero_network_is_identity() {
    let cfg = NetworkConfig::tiny(3);
    let net = Rnan::new(&cfg).unwrap();
    let mut store: ParamStore<f64> = net.init_params(5);
    zero_all(&mut store);
    let img = random_tensor([1, 3, 17, 23], 6, 0.5).map(|v| v + 0.5);
    assert_eq!(net.infer(&store, &img).unwrap(), img);
    assert!(net.infer(&store, &random_tensor([1, 1, 17, 23], 6, 0.5)).is_err());

    let store: ParamStore<f64> = net.init_params(5);
    assert_eq!(net.infer(&store, &img).unwrap().dims(), img.dims());
}

#[test]
fn parameter_counts() {
    let head_tail = NetworkConfig::with_blocks(0, 0, BlockConfig::default(), 3);
    assert_eq!(count_parameters(&head_tail).unwrap(), 3 * 64 * 9 + 64 + 64 * 3 * 9 + 3);

    let full = count_parameters(&NetworkConfig::full(3)).unwrap() as f64;
    assert!((full / 7_409_000.0 - 1.0).abs() <= 0.15, "{full}");
    let small = count_parameters(&NetworkConfig::with_blocks(1, 1, BlockConfig::default(), 3)).unwrap() as f64;
    assert!((small / 1_494_000.0 - 1.0).abs() <= 0.15, "{small}");

    let with = |k| count_parameters(&NetworkConfig::with_blocks(k, 2, BlockConfig::default(), 3)).unwrap();
    let step = with(1) - with(0);
    for k in 1..6 {
        assert_eq!(with(k + 1) - with(k), step);
    }

    let net = Rnan::new(&NetworkConfig::full(3)).unwrap();
    let total: usize = net.breakdown().iter().map(|(_, n)| n).sum();
    assert_eq!(total, full as usize);
    assert_eq!(net.breakdown().len(), 12);
}

#[test]
fn config_validation() {
    let mut cfg = NetworkConfig::tiny(1);
    cfg.nonlocal_positions = vec![2];
    assert!(Rnan::new(&cfg).is_err());
    cfg.nonlocal_positions = vec![0, 0];
    cfg.num_nonlocal_blocks = 2;
    cfg.num_local_blocks = 0;
    assert!(Rnan::new(&cfg).is_err());
    let bad = BlockConfig { downscale_stride: 1, ..BlockConfig::default() };
    assert!(Rnan::new(&NetworkConfig::with_blocks(1, 0, bad, 3)).is_err());
    assert_eq!(NetworkConfig::full(3).nonlocal_positions, vec![0, 9]);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = NetworkConfig::tiny(1);
    let net = Rnan::new(&cfg).unwrap();
    let mut store: ParamStore<f32> = net.init_params(7);
    store.set_step(42);
    store.params_mut()[0].m.data_mut().fill(0.25);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rnan");

    save_checkpoint(&path, &cfg, &store, true).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.config, cfg);
    assert!(ck.has_moments);
    assert_eq!(ck.store.step(), 42);
    for (a, b) in ck.store.params().iter().zip(store.params()) {
        assert_eq!(a, b);
    }
    ck.network().unwrap();

    save_checkpoint(&path, &cfg, &store, false).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert!(!ck.has_moments);
    assert_eq!(ck.store.params()[0].value, store.params()[0].value);
    assert!(ck.store.params()[0].m.data().iter().all(|&v| v == 0.0));

    let mut bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"RNAN");
    bytes[0] = b'X';
    assert!(read_checkpoint(&bytes[..]).is_err());
    let bytes = std::fs::read(&path).unwrap();
    assert!(read_checkpoint(&bytes[..bytes.len() - 10]).is_err());
}
