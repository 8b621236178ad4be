use rnan::degrade::add_awgn;
use rnan::metrics::*;
use rnan::train::Corpus;
use rnan::Tensor4;

fn patch() -> Tensor4<f64> {
    Corpus::synthetic(1, 32, 1, 6).images.remove(0).hq.cast()
}

#[test]
fn psnr_closed_forms() {
    let a = Tensor4::filled([1, 1, 16, 16], 100.0 / 255.0);
    let b = Tensor4::filled([1, 1, 16, 16], 101.0 / 255.0);
    assert!(psnr(&a, &a).unwrap().is_infinite());
    assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-4);
    assert!((psnr(&a, &b).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-12);
    let x = patch();
    let y = add_awgn(&x, 12.0, 1);
    assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
    assert!(psnr(&x, &Tensor4::zeros([1, 1, 32, 31])).is_err());
    assert_eq!(psnr_values(&[0.0], &[2.0], 2.0).unwrap(), 0.0);
}

#[test]
fn psnr_decreases_with_noise() {
    let x = patch();
    let mut prev = f64::INFINITY;
    for sigma in [1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0] {
        let p = psnr(&add_awgn(&x, sigma, 3), &x).unwrap();
        assert!(p < prev, "sigma {sigma}");
        prev = p;
    }
}

#[test]
fn ssim_examples() {
    let x = patch();
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    let inverted = x.map(|v| 1.0 - v);
    assert!(ssim(&x, &inverted).unwrap() < 0.0);
    let y = add_awgn(&x, 20.0, 2);
    assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
    assert!(ssim(&x, &y).unwrap() < 1.0);
    let small = Tensor4::<f64>::zeros([1, 1, 10, 20]);
    assert!(ssim(&small, &small).is_err());
}

#[test]
fn luma_examples() {
    let px = |v: f64| Tensor4::filled([1, 3, 1, 1], v);
    assert!((rgb_to_y(&px(1.0)).unwrap().data()[0] * 255.0 - 235.0).abs() < 1e-9);
    assert!((rgb_to_y(&px(0.0)).unwrap().data()[0] * 255.0 - 16.0).abs() < 1e-12);
    assert!((rgb_to_y(&px(0.5)).unwrap().data()[0] * 255.0 - 125.5).abs() < 1e-9);
    assert!(rgb_to_y(&Tensor4::<f64>::zeros([1, 1, 2, 2])).is_err());
}

#[test]
fn score_options() {
    let x: Tensor4<f64> = Corpus::synthetic(1, 24, 3, 1).images.remove(0).hq.cast();
    let y = add_awgn(&x, 15.0, 5);
    let all = score(&y, &x, false, 0).unwrap();
    let luma = score(&y, &x, true, 0).unwrap();
    assert_eq!(all.psnr_db, psnr(&y, &x).unwrap());
    assert_eq!(luma.psnr_db, psnr(&rgb_to_y(&y).unwrap(), &rgb_to_y(&x).unwrap()).unwrap());
    assert_ne!(all, luma);
    let cropped = score(&y, &x, false, 2).unwrap();
    assert_eq!(cropped.psnr_db, psnr(&crop_border(&y, 2).unwrap(), &crop_border(&x, 2).unwrap()).unwrap());
    assert!(score(&y, &x, false, 7).unwrap().ssim.is_nan());
}
