use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereogc::geometry::PointCloud;
use stereogc::ImagePlane;
use stereogc_cli::io::*;

#[test]
fn pfm_round_trip_is_lossless_for_finite_floats() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, (h, w, c)) in [(1, 1, 1), (7, 13, 1), (5, 9, 3), (32, 40, 1)].into_iter().enumerate() {
        let data: Vec<f32> = (0..h * w * c)
            .map(|_| loop {
                // Every finite bit pattern, not just a friendly range.
                let v = f32::from_bits(rng.gen());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let img = PfmImage { width: w, height: h, channels: c, data };
        let path = dir.path().join(format!("m{k}.pfm"));
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!((back.width, back.height, back.channels), (w, h, c));
        let same = img.data.iter().zip(&back.data).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "case {k}");
    }
}

#[test]
fn pfm_header_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pfm");
    write_pfm(&path, &PfmImage { width: 3, height: 2, channels: 1, data: vec![0.0; 6] }).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
    assert_eq!(bytes.len(), b"Pf\n3 2\n-1.0\n".len() + 24);
}

#[test]
fn garbage_pfm_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.pfm");
    std::fs::write(&path, b"P6\n2 2\n255\n").unwrap();
    assert_eq!(read_pfm(&path).unwrap_err().exit_code(), 2);
    assert_eq!(read_pfm(&dir.path().join("missing.pfm")).unwrap_err().exit_code(), 2);
}

#[test]
fn png16_round_trip_equals_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for c in [1, 3] {
        let img = ImagePlane::from_fn(9, 11, c, |_, _, _| rng.gen_range(0.0..1.0)).unwrap();
        let path = dir.path().join(format!("i{c}.png"));
        write_image_png16(&path, &img).unwrap();
        assert_eq!(read_image_png(&path).unwrap(), quantize16(&img));
    }
}

#[test]
fn ply_round_trip_is_exact_for_random_doubles() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<Vector3<f64>> = (0..500)
        .map(|_| Vector3::new(rng.gen_range(-1e3..1e3), rng.gen_range(-1e-6..1e-6), rng.gen::<f64>()))
        .collect();
    let cloud = PointCloud { points, source_pixel: Vec::new() };
    let path = dir.path().join("c.ply");
    write_ply(&path, &cloud).unwrap();
    assert_eq!(read_ply(&path).unwrap().points, cloud.points);
}
