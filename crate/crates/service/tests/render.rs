use d3po_core::ndcore::Tensor;
use d3po_service::render::{render_png, UPSCALE};

fn decode(bytes: &[u8]) -> (u32, u32, Vec<u8>) {
    let mut reader = png::Decoder::new(std::io::Cursor::new(bytes)).read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.color_type, png::ColorType::Grayscale);
    assert_eq!(info.bit_depth, png::BitDepth::Eight);
    buf.truncate(info.buffer_size());
    (info.width, info.height, buf)
}

#[test]
fn all_minus_one_is_black_at_eight_times() {
    let img = Tensor::new(vec![256], vec![-1.0; 256]).unwrap();
    let (w, h, px) = decode(&render_png(&img, 16, UPSCALE).unwrap());
    assert_eq!((w, h), (128, 128));
    assert!(px.iter().all(|&v| v == 0));
}

#[test]
fn midpoint_and_clamping() {
    let img = Tensor::new(vec![4], vec![0.0, 1.0, 3.0, -7.0]).unwrap();
    let (_, _, px) = decode(&render_png(&img, 2, 1).unwrap());
    assert_eq!(px, vec![128, 255, 255, 0]);
}

#[test]
fn gradient_keeps_all_levels() {
    // Level k is hit by the midpoint of its rounding interval.
    let values: Vec<f64> = (0..256).map(|k| k as f64 / 127.5 - 1.0).collect();
    let img = Tensor::new(vec![256], values).unwrap();
    let (_, _, px) = decode(&render_png(&img, 16, 1).unwrap());
    assert_eq!(px, (0..=255u8).collect::<Vec<_>>());
    let (_, _, big) = decode(&render_png(&img, 16, UPSCALE).unwrap());
    for (y, row) in big.chunks(128).enumerate() {
        for (x, &v) in row.iter().enumerate() {
            assert_eq!(v as usize, (y / 8) * 16 + x / 8);
        }
    }
}

#[test]
fn wrong_size_is_rejected() {
    let img = Tensor::new(vec![5], vec![0.0; 5]).unwrap();
    assert!(render_png(&img, 2, 8).is_err());
}
