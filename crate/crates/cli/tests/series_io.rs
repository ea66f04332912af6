use dynmri_cli::series_io::{decode, encode_complex, encode_real, read_series, write_series, SeriesData, HEADER_LEN};
use dynmri_cli::CliError;
use dynmri_core::{ComplexSeries, ImageSeries};
use ndarray::Array3;
use num_complex::Complex32;

fn sample(dim: (usize, usize, usize)) -> ImageSeries {
    ImageSeries::new(Array3::from_shape_fn(dim, |(b, r, c)| (b as f32 - 2.5) * 0.37 + (r * 7 + c) as f32 * 1e-3)).unwrap()
}

#[test]
fn real_round_trip_is_bit_exact() {
    let s = sample((3, 5, 4));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.cirs");
    write_series(&path, &s).unwrap();
    let back = read_series(&path).unwrap();
    assert!(s.frames().iter().zip(back.frames()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn complex_round_trip() {
    let c = ComplexSeries { frames: Array3::from_shape_fn((2, 3, 3), |(b, r, c)| Complex32::new(b as f32, -(r as f32) * 0.5 + c as f32)) };
    match decode(&encode_complex(&c).unwrap()).unwrap() {
        SeriesData::Complex(back) => assert_eq!(back, c),
        other => panic!("decoded {other:?}"),
    }
}

#[test]
fn desk_series_payload_size() {
    let bytes = encode_real(&ImageSeries::zeros(8, 64, 64)).unwrap();
    // 8 * 64 * 64 * 4 payload bytes between the header and the CRC
    assert_eq!(bytes.len() - HEADER_LEN - 4, 131_072);
    assert_eq!(&bytes[..4], b"CIRS");
}

#[test]
fn truncation_and_corruption_are_data_errors() {
    let bytes = encode_real(&sample((2, 4, 4))).unwrap();
    for cut in [0, 3, HEADER_LEN, bytes.len() - 1] {
        assert!(matches!(decode(&bytes[..cut]), Err(CliError::Data(_))), "cut at {cut}");
    }
    let mut flipped = bytes.clone();
    flipped[HEADER_LEN + 5] ^= 0x10;
    let err = decode(&flipped).unwrap_err();
    assert!(err.to_string().contains("CRC"), "{err}");
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode(&magic).unwrap_err().to_string().contains("magic"));
    let mut dtype = bytes;
    dtype[18] = 9;
    assert!(matches!(decode(&dtype), Err(CliError::Data(_))));
}

#[test]
fn reading_complex_as_real_fails() {
    let c = ComplexSeries { frames: Array3::zeros((1, 2, 2)) };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.cirs");
    dynmri_cli::series_io::write_complex_series(&path, &c).unwrap();
    assert!(read_series(&path).is_err());
    assert!(read_series(&dir.path().join("missing.cirs")).is_err());
}
